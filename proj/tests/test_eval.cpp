#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <numeric>
#include <random>
#include <set>

#include "qg/eval.hpp"
#include "support.hpp"

using namespace qg;

namespace {

struct Worksheet {
  std::vector<TokenSeq> hyps;
  std::vector<std::vector<TokenSeq>> refs;
};

Worksheet worksheet() {
  const auto j = qgtest::read_json(qgtest::fixture("bleu3.json"));
  Worksheet w;
  w.hyps = j["hypotheses"].get<std::vector<TokenSeq>>();
  w.refs = j["references"].get<std::vector<std::vector<TokenSeq>>>();
  return w;
}

TokenSeq split(const std::string& s) {
  TokenSeq out;
  std::istringstream in(s);
  std::string w;
  while (in >> w) out.push_back(w);
  return out;
}

std::vector<std::vector<TokenSeq>> single_refs(const std::vector<TokenSeq>& seqs) {
  std::vector<std::vector<TokenSeq>> out;
  for (const auto& s : seqs) out.push_back({s});
  return out;
}

std::vector<TokenSeq> questions(const std::vector<QGExample>& corpus) {
  std::vector<TokenSeq> out;
  for (const auto& ex : corpus) {
    TokenSeq q;
    for (const auto& t : ex.question) q.push_back(t.surface);
    out.push_back(q);
  }
  return out;
}

}  // namespace

TEST_CASE("BLEU and ROUGE-L reproduce the worksheet") {
  // Frozen from tests/oracles/bleu_oracle.py.
  const auto w = worksheet();
  BleuStats total;
  for (std::size_t i = 0; i < w.hyps.size(); ++i) total += bleu_stats(w.hyps[i], w.refs[i]);
  CHECK(total.matches == std::array<double, 4>{18, 11, 4, 1});
  CHECK(total.totals == std::array<double, 4>{20, 17, 14, 11});
  CHECK(total.hyp_len == 20);
  CHECK(total.ref_len == 20);

  const auto r = evaluate(w.hyps, w.refs);
  CHECK(std::abs(r.bleu[0] - 90.0000000000) < 0.01);
  CHECK(std::abs(r.bleu[1] - 76.3120528604) < 0.01);
  CHECK(std::abs(r.bleu[2] - 55.0012732071) < 0.01);
  CHECK(std::abs(r.bleu[3] - 35.0696463132) < 0.01);
  CHECK(std::abs(r.rouge_l - 84.3993577859) < 0.01);
  CHECK(r.n_examples == 3);
  CHECK(r.bleu[3] == doctest::Approx(35.0696463132).epsilon(1e-10));

  const std::array<double, 3> per = {0.9222462203023757, 0.8, 0.8097345132743362};
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(rouge_l_sentence(w.hyps[i], w.refs[i]) == doctest::Approx(per[i]).epsilon(1e-12));
  }
  for (int n = 1; n <= 4; ++n) CHECK(bleu_n(w.hyps, w.refs, n) == r.bleu[static_cast<std::size_t>(n - 1)]);
}

TEST_CASE("metric endpoints") {
  const auto w = worksheet();
  std::vector<TokenSeq> refs;
  for (const auto& r : w.refs) refs.push_back(r[0]);
  const auto same = evaluate(refs, single_refs(refs));
  for (double b : same.bleu) CHECK(b == 100.0);
  CHECK(same.rouge_l == 100.0);

  std::vector<TokenSeq> upper;
  for (auto r : refs) {
    for (auto& t : r) std::transform(t.begin(), t.end(), t.begin(), ::toupper);
    upper.push_back(r);
  }
  CHECK(bleu_n(upper, single_refs(refs), 4) == 100.0);

  const std::vector<TokenSeq> xs = {split("x y z w"), split("v u t s")};
  const std::vector<TokenSeq> ys = {split("a b c d"), split("e f g h")};
  const auto none = evaluate(xs, single_refs(ys));
  for (double b : none.bleu) CHECK(b < 1e-9);
  CHECK(none.rouge_l == 0.0);

  const std::vector<TokenSeq> hyp = {split("a b c")};
  const std::vector<TokenSeq> ref = {split("a c d")};
  CHECK(std::abs(rouge_l(hyp, single_refs(ref)) - 66.6666666667) < 1e-6);
  CHECK(lcs_length(hyp[0], ref[0]) == 2);

  const std::vector<TokenSeq> empty;
  CHECK_THROWS_AS(bleu_n(empty, single_refs(empty), 4), Error);
  CHECK_THROWS_AS(rouge_l(empty, single_refs(empty)), Error);
  CHECK_THROWS_AS(evaluate(hyp, single_refs(ys)), Error);
  CHECK_THROWS_AS(bleu_from_stats(BleuStats{}, 5), Error);
}

TEST_CASE("brevity penalty") {
  const std::vector<TokenSeq> hyp = {split("a b c d e")};
  const std::vector<TokenSeq> ref = {split("a b c d e f g h i j")};
  CHECK(bleu_n(hyp, single_refs(ref), 4) == doctest::Approx(100.0 * std::exp(1.0 - 2.0)).epsilon(1e-12));
  const std::vector<std::vector<TokenSeq>> two = {{split("a b c d e f"), split("a b c d")}};
  // Closest reference length; the shorter one wins a tie.
  CHECK(bleu_stats(hyp[0], two[0]).ref_len == 4);
}

TEST_CASE("metrics are invariant to example order") {
  const auto corpus = filter_corpus(load_corpus(qgtest::fixture("corpus100.jsonl")));
  auto refs = questions(corpus);
  std::vector<TokenSeq> hyps = refs;
  std::mt19937 gen(4);
  for (auto& h : hyps) {
    if (h.size() > 2) h.erase(h.begin() + static_cast<std::ptrdiff_t>(gen() % h.size()));
    if (gen() % 2) h.push_back("extra");
  }
  const auto base = evaluate(hyps, single_refs(refs));
  std::vector<std::size_t> order(hyps.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (int trial = 0; trial < 5; ++trial) {
    std::shuffle(order.begin(), order.end(), gen);
    std::vector<TokenSeq> h2, r2;
    for (auto i : order) {
      h2.push_back(hyps[i]);
      r2.push_back(refs[i]);
    }
    const auto again = evaluate(h2, single_refs(r2));
    for (std::size_t k = 0; k < 4; ++k) CHECK(again.bleu[k] == doctest::Approx(base.bleu[k]).epsilon(1e-12));
    CHECK(again.rouge_l == doctest::Approx(base.rouge_l).epsilon(1e-12));
  }
}

TEST_CASE("a score of 100 means every hypothesis matches its reference") {
  std::mt19937 gen(9);
  const std::vector<std::string> alphabet = {"a", "b", "c", "d", "e", "f", "g", "h"};
  for (int trial = 0; trial < 300; ++trial) {
    std::vector<TokenSeq> refs;
    for (int i = 0; i < 3; ++i) {
      auto pool = alphabet;
      std::shuffle(pool.begin(), pool.end(), gen);
      refs.emplace_back(pool.begin(), pool.begin() + 4 + static_cast<std::ptrdiff_t>(gen() % 4));
    }
    auto hyps = refs;
    CHECK(bleu_n(hyps, single_refs(refs), 4) == 100.0);
    CHECK(rouge_l(hyps, single_refs(refs)) == 100.0);
    auto& victim = hyps[gen() % 3];
    switch (gen() % 3) {
      case 0: victim.pop_back(); break;
      case 1: victim.push_back(alphabet[gen() % alphabet.size()]); break;
      default: std::swap(victim.front(), victim.back()); break;
    }
    CHECK(bleu_n(hyps, single_refs(refs), 4) < 100.0);
    CHECK(rouge_l(hyps, single_refs(refs)) < 100.0);
  }
}

TEST_CASE("average relative distance") {
  auto ex = qgtest::make_example("d", "Quasar xylo Answer", 2, 2, "which quasar ?");
  CHECK(avg_relative_distance(ex) == 2.0);
  ex = qgtest::make_example("d", "the Quasar xylo Answer Bolt", 3, 3, "quasar bolt the ?");
  CHECK(*avg_relative_distance(ex) == doctest::Approx(1.5));
  ex = qgtest::make_example("d", "x Answer Span y", 1, 2, "answer span ?");
  CHECK_FALSE(avg_relative_distance(ex).has_value());
  ex = qgtest::make_example("d", "Quasar a b c Answer d e f g h i j k l m n Bolt", 4, 4, "quasar bolt");
  CHECK(*avg_relative_distance(ex) == doctest::Approx((4.0 + 12.0) / 2.0));

  const auto corpus = filter_corpus(load_corpus(qgtest::fixture("corpus100.jsonl")));
  std::mt19937 gen(5);
  for (auto e : corpus) {
    const auto base = avg_relative_distance(e);
    std::shuffle(e.question.begin(), e.question.end(), gen);
    e.question.push_back(Token::make("the"));
    e.question.insert(e.question.begin(), Token::make("of"));
    CHECK(avg_relative_distance(e) == base);
  }
}

TEST_CASE("distance buckets match the hand partition") {
  // Frozen from tests/oracles/corpus_oracle.py.
  const auto corpus = filter_corpus(load_corpus(qgtest::fixture("corpus100.jsonl")));
  REQUIRE(corpus.size() == 94);
  const std::set<std::string> far_ids = {
      "c000", "c006", "c007", "c011", "c012", "c013", "c014", "c015", "c020", "c021",
      "c024", "c026", "c028", "c030", "c031", "c034", "c038", "c040", "c046", "c048",
      "c050", "c051", "c052", "c054", "c055", "c057", "c061", "c065", "c066", "c070",
      "c077", "c078", "c079", "c084", "c087", "c094", "c096", "c097", "c099"};
  double sum = 0;
  std::size_t none = 0;
  for (const auto& ex : corpus) {
    const auto d = avg_relative_distance(ex);
    if (!d) ++none;
    sum += d.value_or(0.0);
    CHECK((d.value_or(0.0) > kNearDistanceLimit) == far_ids.contains(ex.id));
  }
  CHECK(none == 0);
  CHECK(sum == doctest::Approx(851.7166666666668).epsilon(1e-12));

  const auto refs = questions(corpus);
  const auto report = distance_bucket_analysis(corpus, refs);
  REQUIRE(report.buckets.size() == 2);
  CHECK(report.buckets[0].label == "0-10");
  CHECK(report.buckets[0].count == 55);
  CHECK(report.buckets[1].count == 39);
  CHECK(report.buckets[0].share + report.buckets[1].share == doctest::Approx(1.0));
  CHECK(report.buckets[0].metrics->bleu[3] == 100.0);

  const auto filtered = distance_bucket_analysis(corpus, refs, 20);
  CHECK(filtered.covered_examples == 39);
  CHECK(filtered.buckets[0].count == 17);
  CHECK(filtered.buckets[1].count == 22);
  CHECK(filtered.buckets[0].share_of_all == doctest::Approx(17.0 / 94.0));
  CHECK(filtered.buckets[1].share == doctest::Approx(22.0 / 39.0));
  CHECK(to_json(filtered)["min_sentence_length"] == 20);

  std::vector<TokenSeq> short_preds(refs.begin(), refs.end() - 1);
  CHECK_THROWS_AS(distance_bucket_analysis(corpus, short_preds), Error);
}

TEST_CASE("a single populated bucket reports the other as absent") {
  std::vector<QGExample> corpus = {qgtest::make_example("a", "Quasar x Answer", 2, 2, "quasar ?"),
                                   qgtest::make_example("b", "Bolt Answer", 1, 1, "bolt ?")};
  const auto report = distance_bucket_analysis(corpus, questions(corpus));
  CHECK(report.buckets[0].count == 2);
  CHECK(report.buckets[1].count == 0);
  CHECK(report.buckets[1].share == 0.0);
  CHECK_FALSE(report.buckets[1].metrics.has_value());
  CHECK(to_json(report)["buckets"][1]["metrics"].is_null());
  CHECK(format_table(report).find("n/a") != std::string::npos);
}

TEST_CASE("bucket metrics from per-example statistics equal direct computation") {
  const auto corpus = filter_corpus(load_corpus(qgtest::fixture("corpus100.jsonl")));
  auto refs = questions(corpus);
  std::vector<TokenSeq> hyps = refs;
  std::mt19937 gen(12);
  for (auto& h : hyps) {
    if (gen() % 2) std::reverse(h.begin(), h.end());
    if (h.size() > 3 && gen() % 2) h.resize(h.size() - 2);
  }
  std::vector<BleuStats> cache;
  std::vector<double> rouge_cache;
  for (std::size_t i = 0; i < hyps.size(); ++i) {
    const std::vector<TokenSeq> r = {refs[i]};
    cache.push_back(bleu_stats(hyps[i], r));
    rouge_cache.push_back(rouge_l_sentence(hyps[i], r));
  }
  const auto report = distance_bucket_analysis(corpus, hyps);
  for (std::size_t b = 0; b < 2; ++b) {
    BleuStats total;
    double rouge = 0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < corpus.size(); ++i) {
      const bool far = avg_relative_distance(corpus[i]).value_or(0.0) > kNearDistanceLimit;
      if (far != (b == 1)) continue;
      total += cache[i];
      rouge += rouge_cache[i];
      ++n;
    }
    REQUIRE(report.buckets[b].metrics.has_value());
    for (int k = 1; k <= 4; ++k) {
      CHECK(report.buckets[b].metrics->bleu[static_cast<std::size_t>(k - 1)] ==
            doctest::Approx(bleu_from_stats(total, k)).epsilon(1e-12));
    }
    CHECK(report.buckets[b].metrics->rouge_l == doctest::Approx(100.0 * rouge / static_cast<double>(n)).epsilon(1e-12));
  }
}

TEST_CASE("report rendering") {
  const auto w = worksheet();
  const auto r = evaluate(w.hyps, w.refs);
  const auto j = to_json(r);
  CHECK(j["bleu4"] == r.bleu[3]);
  CHECK(j["meteor"].is_null());
  const auto table = format_table(r);
  CHECK(table.find("35.07") != std::string::npos);
  CHECK(table.find("n/a") != std::string::npos);
}
