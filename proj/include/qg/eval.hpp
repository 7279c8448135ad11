#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "qg/data.hpp"

namespace qg {

using TokenSeq = std::vector<std::string>;

/// Sufficient statistics of one hypothesis for corpus BLEU up to 4-grams.
struct BleuStats {
  std::array<double, 4> matches{};
  std::array<double, 4> totals{};
  double hyp_len = 0.0;
  double ref_len = 0.0;  // closest reference length

  BleuStats& operator+=(const BleuStats& o);
};

/// Case-folds tokens before counting.
BleuStats bleu_stats(const TokenSeq& hypothesis, std::span<const TokenSeq> references);

/// Corpus BLEU-n on a 0..100 scale from summed statistics: geometric mean of
/// clipped 1..n-gram precisions times the brevity penalty exp(1 - r/c) when
/// c < r. A zero match count is replaced by 1e-15 so the mean stays finite.
double bleu_from_stats(const BleuStats& total, int n);

double bleu_n(std::span<const TokenSeq> hypotheses, std::span<const std::vector<TokenSeq>> references,
              int n);

/// Sentence ROUGE-L F-measure (beta = 1.2, best precision and best recall
/// over references) on a 0..1 scale.
double rouge_l_sentence(const TokenSeq& hypothesis, std::span<const TokenSeq> references);

/// Mean sentence ROUGE-L over the corpus, 0..100.
double rouge_l(std::span<const TokenSeq> hypotheses, std::span<const std::vector<TokenSeq>> references);

std::size_t lcs_length(std::span<const std::string> a, std::span<const std::string> b);

struct MetricReport {
  std::array<double, 4> bleu{};  // BLEU-1..BLEU-4
  double rouge_l = 0.0;
  std::size_t n_examples = 0;
};

MetricReport evaluate(std::span<const TokenSeq> hypotheses,
                      std::span<const std::vector<TokenSeq>> references);

/// Mean over sentence positions outside the answer that hold a non-stop
/// token also found in the question, of the distance to the nearest answer
/// position. Empty when no such position exists.
std::optional<double> avg_relative_distance(const QGExample& example);

struct DistanceBucket {
  std::string label;
  std::size_t count = 0;
  double share = 0.0;         // of examples passing the length filter
  double share_of_all = 0.0;  // of the whole corpus
  std::optional<MetricReport> metrics;
};

struct DistanceBucketReport {
  std::vector<DistanceBucket> buckets;  // "0-10" then ">10"
  std::size_t total_examples = 0;
  std::size_t covered_examples = 0;
  std::optional<std::size_t> min_sentence_length;
};

inline constexpr double kNearDistanceLimit = 10.0;

/// Splits examples into [0, 10] and (10, inf) by avg_relative_distance
/// (examples without a qualifying word count as distance 0) and scores each
/// bucket. With `longer_than`, only sentences with more tokens than that are
/// kept.
DistanceBucketReport distance_bucket_analysis(std::span<const QGExample> corpus,
                                              std::span<const TokenSeq> predictions,
                                              std::optional<std::size_t> longer_than = std::nullopt);

nlohmann::json to_json(const MetricReport& report);
nlohmann::json to_json(const DistanceBucketReport& report);
std::string format_table(const MetricReport& report);
std::string format_table(const DistanceBucketReport& report);

}  // namespace qg
