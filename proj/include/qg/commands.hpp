#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "qg/data.hpp"
#include "qg/eval.hpp"
#include "qg/model.hpp"
#include "qg/relation.hpp"
#include "qg/training.hpp"

namespace qg {

inline constexpr const char* kToolkitVersion = "0.1.0";

/// An example together with the relation context chosen for it.
struct PreparedExample {
  QGExample example;
  RelationContext context;
};

/// Reads a prepared corpus. Records without a `relation_context` field get
/// one from select_relation.
std::vector<PreparedExample> load_prepared(const std::string& path);
void save_prepared(const std::string& path, std::span<const PreparedExample> corpus);

std::vector<QGExample> examples_of(std::span<const PreparedExample> corpus);
std::vector<EncodedExample> encode_corpus(std::span<const PreparedExample> corpus, const Vocabulary& vocab);

struct Prediction {
  std::string id;
  std::vector<std::string> tokens;
};

std::vector<Prediction> load_predictions(const std::string& path);
void save_predictions(const std::string& path, std::span<const Prediction> predictions);

/// Orders predictions like the corpus. Any missing, duplicate or unknown id
/// raises an Error naming the first offender.
std::vector<TokenSeq> align_predictions(std::span<const QGExample> corpus,
                                        std::span<const Prediction> predictions);

std::string utc_timestamp();

struct RunManifest {
  explicit RunManifest(std::string cmd) : command(std::move(cmd)), started_at(utc_timestamp()) {}

  std::string command;
  nlohmann::json config = nlohmann::json::object();
  std::map<std::string, std::string> inputs;   // path -> content hash
  std::map<std::string, std::string> outputs;  // path -> content hash
  std::uint64_t seed = 0;
  std::string started_at;
  std::string finished_at;

  void add_input(const std::string& path);
  void add_output(const std::string& path);
  nlohmann::json to_json() const;
  /// Writes <dir>/<command>.manifest.json, stamping finished_at.
  std::string write(const std::string& dir);
};

/// Model/train settings plus data paths, read from one JSON document:
/// {"model": {...}, "train": {...}, "data": {"train", "dev", "vocab", "embeddings"}}.
/// Relative data paths resolve against the config file's directory.
struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  std::string train_path;
  std::string dev_path;
  std::string vocab_path;
  std::string embeddings_path;

  static RunConfig load(const std::string& path, bool desk);
  static RunConfig from_json(const nlohmann::json& j, bool desk, const std::string& base_dir = ".");
  nlohmann::json to_json() const;
};

struct PrepareOptions {
  std::string corpus;
  std::string out_dir;
  std::size_t vocab_cap = ModelConfig{}.vocab_cap;
  std::uint64_t seed = 1;
};

struct PrepareResult {
  std::string prepared_path;
  std::string vocab_path;
  std::size_t kept = 0;
  std::size_t dropped = 0;
  std::size_t vocab_size = 0;
};

PrepareResult cmd_prepare(const PrepareOptions& options, std::ostream& log);

struct StatsOptions {
  std::string prepared;
  std::string out_dir;
  std::uint64_t seed = 1;
};

RelationStats cmd_stats(const StatsOptions& options, std::ostream& log);
std::string format_table(const RelationStats& stats);

struct TrainOptions {
  RunConfig config;
  std::string config_path;  // recorded in the manifest when set
  std::string out_dir;
  bool resume = false;
  std::optional<int> stop_after;
};

TrainReport cmd_train(const TrainOptions& options, std::ostream& log);

struct GenerateOptions {
  std::string checkpoint;  // a .ckpt file, or a directory holding a `best` marker
  std::string corpus;      // prepared corpus
  std::string vocab;
  std::string out_dir;
  std::optional<int> beam_size;
  std::optional<int> max_len;
  bool trace = false;
  std::uint64_t seed = 1;
  std::size_t threads = 0;  // 0: pick from hardware and QG_TOTP_THREADS
};

struct GenerateResult {
  std::string predictions_path;
  std::string trace_path;
  std::vector<Prediction> predictions;
  std::size_t trace_lines = 0;
};

GenerateResult cmd_generate(const GenerateOptions& options, std::ostream& log);

/// Worker count: `requested` if positive, else hardware concurrency, capped
/// by QG_TOTP_THREADS when set and by the number of jobs.
std::size_t worker_count(std::size_t requested, std::size_t jobs);

/// Resolves a checkpoint argument: files pass through, directories go via `best`.
std::string resolve_checkpoint(const std::string& path);

struct EvaluateOptions {
  std::string predictions;
  std::string references;  // corpus or prepared corpus
  std::string out_dir;
  std::uint64_t seed = 1;
};

MetricReport cmd_evaluate(const EvaluateOptions& options, std::ostream& log);

struct AnalyzeOptions {
  std::string predictions;
  std::string corpus;
  std::optional<std::size_t> length_filter;
  std::string out_dir;
  std::uint64_t seed = 1;
};

DistanceBucketReport cmd_analyze(const AnalyzeOptions& options, std::ostream& log);

/// JSON form of one decoding step. Attention and gates are written in full;
/// each distribution as its `top_k` most probable ids plus the emitted token.
nlohmann::json trace_to_json(const DecodeStepTrace& trace, int top_k = 10);

}  // namespace qg
