#include "qg/training.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <regex>

#include "qg/numeric/checkpoint.hpp"
#include "qg/numeric/optim.hpp"

namespace qg {

namespace fs = std::filesystem;
using nlohmann::json;

void TrainConfig::validate() const {
  if (!(lr_init > 0.0)) throw Error("lr_init must be positive");
  if (epochs <= 0) throw Error("epochs must be positive");
  if (halve_after_epoch < 0 || halve_after_epoch >= epochs) {
    throw Error("halve_after_epoch must lie in [0, epochs)");
  }
  if (batch_size == 0) throw Error("batch_size must be positive");
  if (!(clip_norm > 0.0)) throw Error("clip_norm must be positive");
}

const std::vector<std::string>& TrainConfig::keys() {
  static const std::vector<std::string> k = {"lr_init",   "epochs", "halve_after_epoch",
                                             "batch_size", "clip_norm", "seed",
                                             "checkpoint_dir", "desk_profile"};
  return k;
}

json TrainConfig::to_json() const {
  return {{"lr_init", lr_init},       {"epochs", epochs}, {"halve_after_epoch", halve_after_epoch},
          {"batch_size", batch_size}, {"clip_norm", clip_norm}, {"seed", seed},
          {"checkpoint_dir", checkpoint_dir}, {"desk_profile", desk_profile}};
}

TrainConfig TrainConfig::from_json(const json& j, TrainConfig c) {
  for (const auto& [key, value] : j.items()) {
    const auto& valid = keys();
    if (std::find(valid.begin(), valid.end(), key) == valid.end()) {
      std::string list;
      for (const auto& k : valid) list += (list.empty() ? "" : ", ") + k;
      throw Error("unknown train config key '" + key + "'; valid keys: " + list);
    }
  }
  auto read = [&](const char* key, auto& field) {
    if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
  };
  read("lr_init", c.lr_init);
  read("epochs", c.epochs);
  read("halve_after_epoch", c.halve_after_epoch);
  read("batch_size", c.batch_size);
  read("clip_norm", c.clip_norm);
  read("seed", c.seed);
  read("checkpoint_dir", c.checkpoint_dir);
  read("desk_profile", c.desk_profile);
  c.validate();
  return c;
}

double lr_schedule(int epoch, const TrainConfig& config) {
  if (epoch < 1 || epoch > config.epochs) {
    throw Error("epoch " + std::to_string(epoch) + " outside 1.." + std::to_string(config.epochs));
  }
  if (epoch <= config.halve_after_epoch) return config.lr_init;
  return std::ldexp(config.lr_init, -(epoch - config.halve_after_epoch));
}

json TrainReport::to_json() const {
  json j;
  j["best_epoch"] = best_epoch;
  j["best_checkpoint"] = best_checkpoint;
  auto& list = j["epochs"] = json::array();
  for (const auto& e : epochs) {
    list.push_back({{"epoch", e.epoch},
                    {"learning_rate", e.learning_rate},
                    {"train_loss", e.train_loss},
                    {"train_token_accuracy", e.train_token_accuracy},
                    {"dev_perplexity", e.dev_perplexity},
                    {"checkpoint", e.checkpoint}});
  }
  return j;
}

TrainReport TrainReport::from_json(const json& j) {
  TrainReport r;
  r.best_epoch = j.at("best_epoch").get<int>();
  r.best_checkpoint = j.at("best_checkpoint").get<std::string>();
  for (const auto& e : j.at("epochs")) {
    r.epochs.push_back({e.at("epoch").get<int>(), e.at("learning_rate").get<double>(),
                        e.at("train_loss").get<double>(), e.at("train_token_accuracy").get<double>(),
                        e.at("dev_perplexity").get<double>(), e.at("checkpoint").get<std::string>()});
  }
  return r;
}

std::vector<std::vector<std::size_t>> make_batches(std::span<const std::size_t> lengths,
                                                   std::size_t batch_size, Rng& rng) {
  if (batch_size == 0) throw Error("batch_size must be positive");
  std::vector<std::size_t> order(lengths.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  rng.shuffle(order.begin(), order.end());
  const std::size_t pool = batch_size * 20;
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t start = 0; start < order.size(); start += pool) {
    const auto stop = std::min(order.size(), start + pool);
    std::stable_sort(order.begin() + static_cast<std::ptrdiff_t>(start),
                     order.begin() + static_cast<std::ptrdiff_t>(stop),
                     [&](std::size_t a, std::size_t b) { return lengths[a] < lengths[b]; });
    for (std::size_t b = start; b < stop; b += batch_size) {
      batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(b),
                           order.begin() + static_cast<std::ptrdiff_t>(std::min(stop, b + batch_size)));
    }
  }
  rng.shuffle(batches.begin(), batches.end());
  return batches;
}

template <typename Scalar>
CorpusScore score_corpus(QGModel<Scalar>& model, std::span<const EncodedExample> corpus) {
  CorpusScore s;
  for (const auto& ex : corpus) {
    Tape<Scalar> tape(false);
    const auto r = model.forward_teacher_forced(tape, ex, false);
    s.total_nll += static_cast<double>(r.loss.scalar());
    s.tokens += r.target_tokens;
    s.correct += r.correct_tokens;
  }
  return s;
}

template <typename Scalar>
CorpusScore train_batch(QGModel<Scalar>& model, std::span<const EncodedExample> corpus,
                        std::span<const std::size_t> batch, double lr, double clip_norm) {
  std::size_t tokens = 0;
  for (const auto i : batch) tokens += corpus[i].target.size();
  CorpusScore s;
  model.params().zero_grad();
  for (const auto i : batch) {
    Tape<Scalar> tape;
    const auto r = model.forward_teacher_forced(tape, corpus[i], true);
    tape.backward(scale(r.loss, static_cast<Scalar>(1.0 / static_cast<double>(tokens))));
    s.total_nll += static_cast<double>(r.loss.scalar());
    s.tokens += r.target_tokens;
    s.correct += r.correct_tokens;
  }
  clip_global_norm(model.params(), clip_norm);
  sgd_step(model.params(), lr);
  return s;
}

std::optional<std::pair<int, std::string>> latest_checkpoint(const std::string& dir) {
  if (dir.empty() || !fs::is_directory(dir)) return std::nullopt;
  static const std::regex pattern(R"(epoch_(\d+)\.ckpt)");
  std::optional<std::pair<int, std::string>> best;
  for (const auto& entry : fs::directory_iterator(dir)) {
    std::smatch m;
    const auto name = entry.path().filename().string();
    if (!std::regex_match(name, m, pattern)) continue;
    const int epoch = std::stoi(m[1].str());
    if (!best || epoch > best->first) best = {epoch, entry.path().string()};
  }
  return best;
}

template <typename Scalar>
Trainer<Scalar>::Trainer(QGModel<Scalar>& model, TrainConfig config, std::string vocab_fingerprint)
    : model_(model),
      config_(std::move(config)),
      vocab_fingerprint_(std::move(vocab_fingerprint)),
      rng_(mix_seed(config_.seed)) {
  config_.validate();
}

template <typename Scalar>
void Trainer<Scalar>::save_checkpoint(int epoch, const std::string& path) const {
  Checkpoint ck;
  ck.header = {{"format", "qg-checkpoint"},
               {"epoch", epoch},
               {"model_config", model_.config().to_json()},
               {"train_config", config_.to_json()},
               {"vocab_fingerprint", vocab_fingerprint_},
               {"shuffle_rng", rng_.state()},
               {"dropout_rng", model_.dropout_rng().state()},
               {"report", report_.to_json()}};
  ck.capture(model_.params());
  ck.save(path);
}

template <typename Scalar>
void Trainer<Scalar>::load_checkpoint(const std::string& path) {
  const auto ck = Checkpoint::load(path);
  if (ck.header.value("vocab_fingerprint", std::string()) != vocab_fingerprint_) {
    throw FormatError(path + ": checkpoint was trained with a different vocabulary");
  }
  ck.restore(model_.params());
  rng_.restore(ck.header.at("shuffle_rng").get<std::string>());
  model_.dropout_rng().restore(ck.header.at("dropout_rng").get<std::string>());
  report_ = TrainReport::from_json(ck.header.at("report"));
}

template <typename Scalar>
TrainReport Trainer<Scalar>::run(std::span<const EncodedExample> train,
                                 std::span<const EncodedExample> dev, bool resume,
                                 std::optional<int> stop_after) {
  if (train.empty()) throw Error("training corpus is empty");
  if (dev.empty()) throw Error("development corpus is empty");
  const bool persist = !config_.checkpoint_dir.empty();
  if (persist) fs::create_directories(config_.checkpoint_dir);
  if (resume) {
    if (const auto latest = latest_checkpoint(config_.checkpoint_dir)) load_checkpoint(latest->second);
  }

  std::vector<std::size_t> lengths;
  for (const auto& ex : train) lengths.push_back(ex.sentence_words.size());

  const int first = report_.epochs.empty() ? 1 : report_.epochs.back().epoch + 1;
  for (int epoch = first; epoch <= config_.epochs; ++epoch) {
    const double lr = lr_schedule(epoch, config_);
    CorpusScore seen;
    for (const auto& batch : make_batches(lengths, config_.batch_size, rng_)) {
      const auto s = train_batch(model_, train, batch, lr, config_.clip_norm);
      seen.total_nll += s.total_nll;
      seen.tokens += s.tokens;
      seen.correct += s.correct;
    }
    EpochRecord record;
    record.epoch = epoch;
    record.learning_rate = lr;
    record.train_loss = seen.total_nll / static_cast<double>(seen.tokens);
    record.train_token_accuracy = seen.token_accuracy();
    record.dev_perplexity = score_corpus(model_, dev).perplexity();
    if (persist) {
      record.checkpoint = (fs::path(config_.checkpoint_dir) / ("epoch_" + std::to_string(epoch) + ".ckpt")).string();
    }
    report_.epochs.push_back(record);
    const auto best = std::min_element(report_.epochs.begin(), report_.epochs.end(),
                                       [](const auto& a, const auto& b) { return a.dev_perplexity < b.dev_perplexity; });
    report_.best_epoch = best->epoch;
    report_.best_checkpoint = best->checkpoint;
    if (persist) {
      save_checkpoint(epoch, record.checkpoint);
      std::ofstream(fs::path(config_.checkpoint_dir) / "best", std::ios::binary)
          << fs::path(report_.best_checkpoint).filename().string() << '\n';
      json line = {{"epoch", epoch},
                   {"learning_rate", lr},
                   {"train_loss", record.train_loss},
                   {"train_token_accuracy", record.train_token_accuracy},
                   {"dev_perplexity", record.dev_perplexity}};
      std::ofstream(fs::path(config_.checkpoint_dir) / "train_log.jsonl", std::ios::app) << line.dump() << '\n';
    }
    if (on_epoch) on_epoch(record);
    if (stop_after && epoch >= *stop_after) break;
  }
  return report_;
}

template CorpusScore score_corpus<double>(QGModel<double>&, std::span<const EncodedExample>);
template CorpusScore score_corpus<float>(QGModel<float>&, std::span<const EncodedExample>);
template CorpusScore train_batch<double>(QGModel<double>&, std::span<const EncodedExample>,
                                         std::span<const std::size_t>, double, double);
template CorpusScore train_batch<float>(QGModel<float>&, std::span<const EncodedExample>,
                                        std::span<const std::size_t>, double, double);
template class Trainer<double>;
template class Trainer<float>;

}  // namespace qg
