#include "qg/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>
#include <unordered_set>

#include "qg/error.hpp"

namespace qg {

using nlohmann::json;

namespace {

constexpr double kTiny = 1e-15;
constexpr double kRougeBeta = 1.2;

TokenSeq folded(const TokenSeq& tokens) {
  TokenSeq out;
  out.reserve(tokens.size());
  for (const auto& t : tokens) out.push_back(case_fold(t));
  return out;
}

std::map<std::vector<std::string>, int> ngram_counts(const TokenSeq& tokens, std::size_t n) {
  std::map<std::vector<std::string>, int> counts;
  for (std::size_t i = 0; i + n <= tokens.size(); ++i) {
    ++counts[std::vector<std::string>(tokens.begin() + static_cast<std::ptrdiff_t>(i),
                                      tokens.begin() + static_cast<std::ptrdiff_t>(i + n))];
  }
  return counts;
}

void check_sizes(std::size_t hyps, std::size_t refs) {
  if (hyps == 0) throw Error("metrics need a nonempty corpus");
  if (hyps != refs) {
    throw Error("metrics need one reference list per hypothesis (" + std::to_string(hyps) +
                " vs " + std::to_string(refs) + ")");
  }
}

}  // namespace

BleuStats& BleuStats::operator+=(const BleuStats& o) {
  for (std::size_t k = 0; k < 4; ++k) {
    matches[k] += o.matches[k];
    totals[k] += o.totals[k];
  }
  hyp_len += o.hyp_len;
  ref_len += o.ref_len;
  return *this;
}

BleuStats bleu_stats(const TokenSeq& hypothesis, std::span<const TokenSeq> references) {
  if (references.empty()) throw Error("bleu needs at least one reference");
  const auto hyp = folded(hypothesis);
  std::vector<TokenSeq> refs;
  for (const auto& r : references) refs.push_back(folded(r));

  BleuStats s;
  s.hyp_len = static_cast<double>(hyp.size());
  // Closest reference length; shorter wins a tie.
  std::size_t best = refs[0].size();
  for (const auto& r : refs) {
    const auto d = [&](std::size_t len) { return len > hyp.size() ? len - hyp.size() : hyp.size() - len; };
    if (d(r.size()) < d(best) || (d(r.size()) == d(best) && r.size() < best)) best = r.size();
  }
  s.ref_len = static_cast<double>(best);

  for (std::size_t n = 1; n <= 4; ++n) {
    const auto hyp_counts = ngram_counts(hyp, n);
    std::map<std::vector<std::string>, int> max_ref;
    for (const auto& r : refs) {
      for (const auto& [gram, c] : ngram_counts(r, n)) max_ref[gram] = std::max(max_ref[gram], c);
    }
    double matched = 0;
    double total = 0;
    for (const auto& [gram, c] : hyp_counts) {
      total += c;
      if (const auto it = max_ref.find(gram); it != max_ref.end()) matched += std::min(c, it->second);
    }
    s.matches[n - 1] = matched;
    s.totals[n - 1] = total;
  }
  return s;
}

double bleu_from_stats(const BleuStats& t, int n) {
  if (n < 1 || n > 4) throw Error("bleu order must be 1..4");
  if (t.hyp_len == 0.0) return 0.0;
  double log_sum = 0.0;
  for (int k = 0; k < n; ++k) {
    const double total = std::max(t.totals[k], 1.0);
    const double matched = t.matches[k] > 0.0 ? t.matches[k] : kTiny;
    log_sum += std::log(matched / total);
  }
  double score = std::exp(log_sum / n);
  if (t.hyp_len < t.ref_len) score *= std::exp(1.0 - t.ref_len / t.hyp_len);
  return 100.0 * score;
}

double bleu_n(std::span<const TokenSeq> hypotheses, std::span<const std::vector<TokenSeq>> references,
              int n) {
  check_sizes(hypotheses.size(), references.size());
  BleuStats total;
  for (std::size_t i = 0; i < hypotheses.size(); ++i) total += bleu_stats(hypotheses[i], references[i]);
  return bleu_from_stats(total, n);
}

std::size_t lcs_length(std::span<const std::string> a, std::span<const std::string> b) {
  std::vector<std::size_t> prev(b.size() + 1, 0);
  std::vector<std::size_t> cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j) {
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

double rouge_l_sentence(const TokenSeq& hypothesis, std::span<const TokenSeq> references) {
  if (references.empty()) throw Error("rouge_l needs at least one reference");
  const auto hyp = folded(hypothesis);
  double best_p = 0.0;
  double best_r = 0.0;
  for (const auto& ref_raw : references) {
    const auto ref = folded(ref_raw);
    const auto lcs = static_cast<double>(lcs_length(hyp, ref));
    if (!hyp.empty()) best_p = std::max(best_p, lcs / static_cast<double>(hyp.size()));
    if (!ref.empty()) best_r = std::max(best_r, lcs / static_cast<double>(ref.size()));
  }
  if (best_p == 0.0 || best_r == 0.0) return 0.0;
  const double b2 = kRougeBeta * kRougeBeta;
  return (1.0 + b2) * best_p * best_r / (best_r + b2 * best_p);
}

double rouge_l(std::span<const TokenSeq> hypotheses, std::span<const std::vector<TokenSeq>> references) {
  check_sizes(hypotheses.size(), references.size());
  double total = 0.0;
  for (std::size_t i = 0; i < hypotheses.size(); ++i) total += rouge_l_sentence(hypotheses[i], references[i]);
  return 100.0 * total / static_cast<double>(hypotheses.size());
}

MetricReport evaluate(std::span<const TokenSeq> hypotheses,
                      std::span<const std::vector<TokenSeq>> references) {
  check_sizes(hypotheses.size(), references.size());
  BleuStats total;
  for (std::size_t i = 0; i < hypotheses.size(); ++i) total += bleu_stats(hypotheses[i], references[i]);
  MetricReport r;
  for (int n = 1; n <= 4; ++n) r.bleu[static_cast<std::size_t>(n - 1)] = bleu_from_stats(total, n);
  r.rouge_l = rouge_l(hypotheses, references);
  r.n_examples = hypotheses.size();
  return r;
}

std::optional<double> avg_relative_distance(const QGExample& ex) {
  std::unordered_set<std::string_view> question;
  for (const auto& t : ex.question) question.insert(t.lower);
  double sum = 0.0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < ex.sentence.size(); ++i) {
    if (i >= ex.answer.start && i <= ex.answer.end) continue;
    const auto& t = ex.sentence[i];
    if (t.is_stop || !question.contains(t.lower)) continue;
    sum += static_cast<double>(i < ex.answer.start ? ex.answer.start - i : i - ex.answer.end);
    ++count;
  }
  if (count == 0) return std::nullopt;
  return sum / static_cast<double>(count);
}

DistanceBucketReport distance_bucket_analysis(std::span<const QGExample> corpus,
                                              std::span<const TokenSeq> predictions,
                                              std::optional<std::size_t> longer_than) {
  if (corpus.size() != predictions.size()) {
    throw Error("distance analysis needs one prediction per example (" + std::to_string(corpus.size()) +
                " examples, " + std::to_string(predictions.size()) + " predictions)");
  }
  DistanceBucketReport report;
  report.total_examples = corpus.size();
  report.min_sentence_length = longer_than;
  std::array<std::vector<TokenSeq>, 2> hyps;
  std::array<std::vector<std::vector<TokenSeq>>, 2> refs;
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    const auto& ex = corpus[i];
    if (longer_than && ex.sentence.size() <= *longer_than) continue;
    ++report.covered_examples;
    const auto d = avg_relative_distance(ex).value_or(0.0);
    const std::size_t b = d <= kNearDistanceLimit ? 0 : 1;
    hyps[b].push_back(predictions[i]);
    TokenSeq ref;
    for (const auto& t : ex.question) ref.push_back(t.surface);
    refs[b].push_back({std::move(ref)});
  }
  const std::array<const char*, 2> labels = {"0-10", ">10"};
  for (std::size_t b = 0; b < 2; ++b) {
    DistanceBucket bucket;
    bucket.label = labels[b];
    bucket.count = hyps[b].size();
    if (report.covered_examples > 0) {
      bucket.share = static_cast<double>(bucket.count) / static_cast<double>(report.covered_examples);
    }
    if (report.total_examples > 0) {
      bucket.share_of_all = static_cast<double>(bucket.count) / static_cast<double>(report.total_examples);
    }
    if (bucket.count > 0) bucket.metrics = evaluate(hyps[b], refs[b]);
    report.buckets.push_back(std::move(bucket));
  }
  return report;
}

json to_json(const MetricReport& r) {
  return {{"bleu1", r.bleu[0]}, {"bleu2", r.bleu[1]}, {"bleu3", r.bleu[2]},
          {"bleu4", r.bleu[3]}, {"meteor", nullptr},  {"rouge_l", r.rouge_l},
          {"n_examples", r.n_examples}};
}

json to_json(const DistanceBucketReport& r) {
  json j;
  j["total_examples"] = r.total_examples;
  j["covered_examples"] = r.covered_examples;
  j["min_sentence_length"] = r.min_sentence_length ? json(*r.min_sentence_length) : json(nullptr);
  auto& buckets = j["buckets"] = json::array();
  for (const auto& b : r.buckets) {
    buckets.push_back({{"label", b.label},
                       {"count", b.count},
                       {"share", b.share},
                       {"share_of_all", b.share_of_all},
                       {"metrics", b.metrics ? to_json(*b.metrics) : json(nullptr)}});
  }
  return j;
}

namespace {

std::string metric_row(const std::string& label, const std::optional<MetricReport>& m) {
  char buf[160];
  if (!m) {
    std::snprintf(buf, sizeof buf, "%-22s %7s %7s %7s %7s %7s %7s", label.c_str(), "-", "-", "-", "-",
                  "n/a", "-");
  } else {
    std::snprintf(buf, sizeof buf, "%-22s %7.2f %7.2f %7.2f %7.2f %7s %7.2f", label.c_str(), m->bleu[0],
                  m->bleu[1], m->bleu[2], m->bleu[3], "n/a", m->rouge_l);
  }
  return buf;
}

const char* kHeader = "                            B1      B2      B3      B4     MET     R-L\n";

}  // namespace

std::string format_table(const MetricReport& r) {
  return kHeader + metric_row("all (" + std::to_string(r.n_examples) + ")", r) + "\n";
}

std::string format_table(const DistanceBucketReport& r) {
  std::string out = kHeader;
  for (const auto& b : r.buckets) {
    char label[64];
    std::snprintf(label, sizeof label, "%s (%.1f%% of #)", b.label.c_str(), 100.0 * b.share_of_all);
    out += metric_row(label, b.metrics) + "\n";
  }
  return out;
}

}  // namespace qg
