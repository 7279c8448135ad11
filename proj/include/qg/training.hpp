#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "qg/model.hpp"
#include "qg/numeric/rng.hpp"

namespace qg {

struct TrainConfig {
  double lr_init = 1.0;
  int epochs = 15;
  int halve_after_epoch = 8;
  std::size_t batch_size = 64;
  double clip_norm = 3.0;
  std::uint64_t seed = 1;
  std::string checkpoint_dir;  // empty: keep everything in memory
  bool desk_profile = false;

  void validate() const;
  nlohmann::json to_json() const;
  /// Unknown keys raise an Error listing the accepted ones.
  static TrainConfig from_json(const nlohmann::json& j, TrainConfig base);
  static TrainConfig from_json(const nlohmann::json& j) { return from_json(j, TrainConfig{}); }
  static const std::vector<std::string>& keys();
};

/// Constant for the first `halve_after_epoch` epochs, then halved every epoch.
double lr_schedule(int epoch, const TrainConfig& config);

struct EpochRecord {
  int epoch = 0;
  double learning_rate = 0.0;
  double train_loss = 0.0;  // mean NLL per target token
  double train_token_accuracy = 0.0;
  double dev_perplexity = 0.0;
  std::string checkpoint;
};

struct TrainReport {
  std::vector<EpochRecord> epochs;
  int best_epoch = 0;  // lowest dev perplexity; earliest on ties
  std::string best_checkpoint;

  nlohmann::json to_json() const;
  static TrainReport from_json(const nlohmann::json& j);
};

/// Batches of example indices: a seeded shuffle, then length-sorted pools of
/// 20 batches cut into batches (the last one may be short), then a shuffle
/// of the batch order.
std::vector<std::vector<std::size_t>> make_batches(std::span<const std::size_t> lengths,
                                                   std::size_t batch_size, Rng& rng);

struct CorpusScore {
  double total_nll = 0.0;
  std::size_t tokens = 0;
  std::size_t correct = 0;

  double perplexity() const { return std::exp(total_nll / static_cast<double>(tokens)); }
  double token_accuracy() const { return static_cast<double>(correct) / static_cast<double>(tokens); }
};

/// Teacher-forced scoring with dropout off.
template <typename Scalar>
CorpusScore score_corpus(QGModel<Scalar>& model, std::span<const EncodedExample> corpus);

/// One SGD update on a batch: mean-per-token loss, backward, global norm
/// clipping, step. Returns the summed NLL and token counts of the batch.
template <typename Scalar>
CorpusScore train_batch(QGModel<Scalar>& model, std::span<const EncodedExample> corpus,
                        std::span<const std::size_t> batch, double lr, double clip_norm);

/// Minibatch SGD with per-epoch checkpoints and lowest-perplexity selection.
template <typename Scalar>
class Trainer {
 public:
  Trainer(QGModel<Scalar>& model, TrainConfig config, std::string vocab_fingerprint = {});

  /// Trains from the next unfinished epoch. With `resume`, the newest
  /// checkpoint in checkpoint_dir (if any) is loaded first. `stop_after`
  /// interrupts the run after that epoch, as a crash would.
  TrainReport run(std::span<const EncodedExample> train, std::span<const EncodedExample> dev,
                  bool resume = false, std::optional<int> stop_after = std::nullopt);

  /// Called after each epoch with the record just written.
  std::function<void(const EpochRecord&)> on_epoch;

  const TrainReport& report() const { return report_; }

 private:
  void save_checkpoint(int epoch, const std::string& path) const;
  void load_checkpoint(const std::string& path);

  QGModel<Scalar>& model_;
  TrainConfig config_;
  std::string vocab_fingerprint_;
  Rng rng_;
  TrainReport report_;
};

/// Newest epoch_<k>.ckpt in a directory, if any.
std::optional<std::pair<int, std::string>> latest_checkpoint(const std::string& dir);

extern template class Trainer<double>;
extern template class Trainer<float>;

}  // namespace qg
