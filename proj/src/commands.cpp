#include "qg/commands.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <thread>
#include <unordered_map>
#include <unordered_set>

#include "qg/decode.hpp"
#include "qg/hash.hpp"
#include "qg/numeric/checkpoint.hpp"

namespace qg {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

template <typename Fn>
void for_each_record(const std::string& path, const char* what, Fn&& fn) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open " + std::string(what) + ": " + path);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      fn(json::parse(line));
    } catch (const json::exception& e) {
      throw FormatError(path + ": malformed line " + std::to_string(line_no) + ": " + e.what());
    }
  }
}

std::ofstream open_out(const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path);
  return out;
}

std::string in_dir(const std::string& dir, const std::string& name) {
  return (fs::path(dir.empty() ? "." : dir) / name).string();
}

void ensure_dir(const std::string& dir) {
  if (!dir.empty()) fs::create_directories(dir);
}

std::vector<QGExample> load_references(const std::string& path) {
  std::vector<QGExample> out;
  for_each_record(path, "corpus", [&](const json& r) { out.push_back(example_from_json(r)); });
  return out;
}

}  // namespace

std::vector<PreparedExample> load_prepared(const std::string& path) {
  std::vector<PreparedExample> out;
  for_each_record(path, "prepared corpus", [&](const json& r) {
    PreparedExample p{example_from_json(r), {}};
    p.context = r.contains("relation_context") ? relation_context_from_json(r.at("relation_context"))
                                               : select_relation(p.example);
    out.push_back(std::move(p));
  });
  return out;
}

void save_prepared(const std::string& path, std::span<const PreparedExample> corpus) {
  auto out = open_out(path);
  for (const auto& p : corpus) {
    auto j = example_to_json(p.example);
    j["relation_context"] = to_json(p.context);
    out << j.dump() << '\n';
  }
}

std::vector<QGExample> examples_of(std::span<const PreparedExample> corpus) {
  std::vector<QGExample> out;
  out.reserve(corpus.size());
  for (const auto& p : corpus) out.push_back(p.example);
  return out;
}

std::vector<EncodedExample> encode_corpus(std::span<const PreparedExample> corpus, const Vocabulary& vocab) {
  std::vector<EncodedExample> out;
  out.reserve(corpus.size());
  for (const auto& p : corpus) out.push_back(encode_example(p.example, p.context, vocab));
  return out;
}

std::vector<Prediction> load_predictions(const std::string& path) {
  std::vector<Prediction> out;
  for_each_record(path, "predictions", [&](const json& r) {
    out.push_back({r.at("id").get<std::string>(), r.at("tokens").get<std::vector<std::string>>()});
  });
  return out;
}

void save_predictions(const std::string& path, std::span<const Prediction> predictions) {
  auto out = open_out(path);
  for (const auto& p : predictions) out << json{{"id", p.id}, {"tokens", p.tokens}}.dump() << '\n';
}

std::vector<TokenSeq> align_predictions(std::span<const QGExample> corpus,
                                        std::span<const Prediction> predictions) {
  std::unordered_map<std::string, const Prediction*> by_id;
  for (const auto& p : predictions) {
    if (!by_id.emplace(p.id, &p).second) throw Error("duplicate prediction id: " + p.id);
  }
  std::unordered_set<std::string> corpus_ids;
  std::vector<TokenSeq> out;
  for (const auto& ex : corpus) {
    corpus_ids.insert(ex.id);
    const auto it = by_id.find(ex.id);
    if (it == by_id.end()) throw Error("no prediction for example id: " + ex.id);
    out.push_back(it->second->tokens);
  }
  for (const auto& p : predictions) {
    if (!corpus_ids.contains(p.id)) throw Error("prediction id not in corpus: " + p.id);
  }
  return out;
}

std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

void RunManifest::add_input(const std::string& path) { inputs[path] = hash_file(path); }
void RunManifest::add_output(const std::string& path) { outputs[path] = hash_file(path); }

json RunManifest::to_json() const {
  return {{"command", command},         {"toolkit_version", kToolkitVersion},
          {"config", config},           {"inputs", inputs},
          {"outputs", outputs},         {"seed", seed},
          {"started_at", started_at},   {"finished_at", finished_at}};
}

std::string RunManifest::write(const std::string& dir) {
  finished_at = utc_timestamp();
  const auto path = in_dir(dir, command + ".manifest.json");
  open_out(path) << to_json().dump(2) << '\n';
  return path;
}

RunConfig RunConfig::load(const std::string& path, bool desk) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open config: " + path);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw Error(path + ": " + e.what());
  }
  return from_json(j, desk, fs::path(path).parent_path().string());
}

RunConfig RunConfig::from_json(const json& j, bool desk, const std::string& base_dir) {
  static const std::vector<std::string> sections = {"model", "train", "data"};
  static const std::vector<std::string> data_keys = {"train", "dev", "vocab", "embeddings"};
  auto check = [](const json& obj, const std::vector<std::string>& valid, const std::string& where) {
    if (!obj.is_object()) throw Error(where + " must be a JSON object");
    for (const auto& [key, value] : obj.items()) {
      if (std::find(valid.begin(), valid.end(), key) != valid.end()) continue;
      std::string list;
      for (const auto& k : valid) list += (list.empty() ? "" : ", ") + k;
      throw Error("unknown " + where + " key '" + key + "'; valid keys: " + list);
    }
  };
  check(j, sections, "config");
  RunConfig c;
  TrainConfig train_base;
  train_base.desk_profile = desk;
  if (j.contains("train")) c.train = TrainConfig::from_json(j.at("train"), train_base);
  else c.train = train_base;
  const bool use_desk = desk || c.train.desk_profile;
  const auto model_base = use_desk ? ModelConfig::desk() : ModelConfig::full();
  c.model = j.contains("model") ? ModelConfig::from_json(j.at("model"), model_base) : model_base;
  if (j.contains("data")) {
    const auto& d = j.at("data");
    check(d, data_keys, "data");
    auto path = [&](const char* key) -> std::string {
      if (!d.contains(key)) return {};
      const fs::path p = d.at(key).get<std::string>();
      return p.is_absolute() || base_dir.empty() ? p.string() : (fs::path(base_dir) / p).string();
    };
    c.train_path = path("train");
    c.dev_path = path("dev");
    c.vocab_path = path("vocab");
    c.embeddings_path = path("embeddings");
  }
  return c;
}

json RunConfig::to_json() const {
  json data = {{"train", train_path}, {"dev", dev_path}, {"vocab", vocab_path}};
  if (!embeddings_path.empty()) data["embeddings"] = embeddings_path;
  return {{"model", model.to_json()}, {"train", train.to_json()}, {"data", data}};
}

PrepareResult cmd_prepare(const PrepareOptions& o, std::ostream& log) {
  RunManifest manifest{"prepare"};
  manifest.seed = o.seed;
  manifest.config = {{"vocab_cap", o.vocab_cap}};
  manifest.add_input(o.corpus);

  const auto corpus = load_corpus(o.corpus);
  const auto kept = filter_corpus(corpus);
  if (kept.empty()) throw Error(o.corpus + ": no example survives the content-overlap filter");
  std::vector<PreparedExample> prepared;
  prepared.reserve(kept.size());
  for (const auto& ex : kept) {
    try {
      prepared.push_back({ex, select_relation(ex)});
    } catch (const Error& e) {
      throw Error("example " + ex.id + ": " + e.what());
    }
  }
  const auto vocab = Vocabulary::build(kept, o.vocab_cap);

  ensure_dir(o.out_dir);
  PrepareResult r;
  r.prepared_path = in_dir(o.out_dir, "prepared.jsonl");
  r.vocab_path = in_dir(o.out_dir, "vocab.json");
  save_prepared(r.prepared_path, prepared);
  vocab.save(r.vocab_path);
  r.kept = kept.size();
  r.dropped = corpus.size() - kept.size();
  r.vocab_size = vocab.size();
  manifest.add_output(r.prepared_path);
  manifest.add_output(r.vocab_path);
  manifest.write(o.out_dir);
  log << "kept " << r.kept << " of " << corpus.size() << " examples; vocabulary " << r.vocab_size
      << " entries\n";
  return r;
}

std::string format_table(const RelationStats& s) {
  char buf[512];
  std::snprintf(buf, sizeof buf,
                "                     sentence  relation\n"
                "avg length           %8.2f  %8.2f\n"
                "overlapped words     %8.2f  %8.2f\n"
                "copy ratio           %7.2f%%  %7.2f%%\n"
                "examples             %8zu\n",
                s.avg_sentence_len, s.avg_relation_len, s.overlap_sentence, s.overlap_relation,
                100.0 * s.copy_ratio_sentence, 100.0 * s.copy_ratio_relation, s.n_examples);
  return buf;
}

RelationStats cmd_stats(const StatsOptions& o, std::ostream& log) {
  RunManifest manifest{"stats"};
  manifest.seed = o.seed;
  manifest.add_input(o.prepared);
  const auto prepared = load_prepared(o.prepared);
  if (prepared.empty()) throw Error(o.prepared + ": corpus is empty");
  const auto stats = corpus_relation_stats(examples_of(prepared));
  ensure_dir(o.out_dir);
  const auto path = in_dir(o.out_dir, "stats.json");
  open_out(path) << to_json(stats).dump(2) << '\n';
  manifest.add_output(path);
  manifest.write(o.out_dir);
  log << format_table(stats);
  return stats;
}

TrainReport cmd_train(const TrainOptions& o, std::ostream& log) {
  auto cfg = o.config;
  RunManifest manifest{"train"};
  manifest.seed = cfg.train.seed;
  if (cfg.train_path.empty() || cfg.dev_path.empty() || cfg.vocab_path.empty()) {
    throw Error("config data section needs train, dev and vocab paths");
  }
  if (cfg.train.checkpoint_dir.empty()) cfg.train.checkpoint_dir = in_dir(o.out_dir, "checkpoints");
  manifest.config = cfg.to_json();
  if (!o.config_path.empty()) manifest.add_input(o.config_path);
  for (const auto& p : {cfg.train_path, cfg.dev_path, cfg.vocab_path}) manifest.add_input(p);

  const auto vocab = Vocabulary::load(cfg.vocab_path);
  const auto train = encode_corpus(load_prepared(cfg.train_path), vocab);
  const auto dev = encode_corpus(load_prepared(cfg.dev_path), vocab);
  QGModel<double> model(cfg.model, vocab);
  if (!cfg.embeddings_path.empty()) {
    manifest.add_input(cfg.embeddings_path);
    const auto matched = load_pretrained_embeddings(cfg.embeddings_path, vocab, model.word_embeddings().value);
    log << "pretrained vectors for " << matched << " of " << vocab.size() << " words\n";
  }
  Trainer<double> trainer(model, cfg.train, vocab.fingerprint());
  trainer.on_epoch = [&](const EpochRecord& r) {
    char buf[160];
    std::snprintf(buf, sizeof buf, "epoch %3d  lr %.6g  loss %.4f  acc %.4f  dev ppl %.4f\n", r.epoch,
                  r.learning_rate, r.train_loss, r.train_token_accuracy, r.dev_perplexity);
    log << buf << std::flush;
  };
  const auto report = trainer.run(train, dev, o.resume, o.stop_after);
  ensure_dir(o.out_dir);
  const auto path = in_dir(o.out_dir, "train_report.json");
  open_out(path) << report.to_json().dump(2) << '\n';
  manifest.add_output(path);
  if (!report.best_checkpoint.empty()) manifest.add_output(report.best_checkpoint);
  manifest.write(o.out_dir);
  log << "best epoch " << report.best_epoch << ": " << report.best_checkpoint << '\n';
  return report;
}

std::size_t worker_count(std::size_t requested, std::size_t jobs) {
  std::size_t n = requested > 0 ? requested : std::max(1u, std::thread::hardware_concurrency());
  if (const char* cap = std::getenv("QG_TOTP_THREADS"); cap != nullptr && *cap != '\0') {
    char* end = nullptr;
    const auto v = std::strtoul(cap, &end, 10);
    if (*end != '\0' || v == 0) throw Error("QG_TOTP_THREADS must be a positive integer");
    n = std::min<std::size_t>(n, v);
  }
  return std::max<std::size_t>(1, std::min(n, jobs));
}

std::string resolve_checkpoint(const std::string& path) {
  if (!fs::is_directory(path)) return path;
  std::ifstream marker(fs::path(path) / "best");
  std::string name;
  if (!(marker >> name)) throw Error(path + ": no `best` marker in checkpoint directory");
  return (fs::path(path) / name).string();
}

json trace_to_json(const DecodeStepTrace& t, int top_k) {
  auto vec = [](const Eigen::VectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); };
  auto sparse = [&](const Eigen::VectorXd& v) {
    std::vector<int> ids(static_cast<std::size_t>(v.size()));
    for (std::size_t i = 0; i < ids.size(); ++i) ids[i] = static_cast<int>(i);
    const auto k = std::min<std::size_t>(ids.size(), static_cast<std::size_t>(std::max(0, top_k)));
    std::partial_sort(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(k), ids.end(),
                      [&](int a, int b) { return v(a) != v(b) ? v(a) > v(b) : a < b; });
    json top = json::array();
    for (std::size_t i = 0; i < k; ++i) top.push_back({ids[i], v(ids[i])});
    json out = {{"size", v.size()}, {"sum", v.sum()}, {"top", top}};
    if (t.token >= 0 && t.token < v.size()) out["token_prob"] = v(t.token);
    return out;
  };
  return {{"token", t.token},
          {"attn_sentence", vec(t.attn_sentence)},
          {"attn_relation", vec(t.attn_relation)},
          {"fuse_gate", vec(t.fuse_gate)},
          {"copy_gate", t.copy_gate},
          {"source_gate", t.source_gate},
          {"p_vocab", sparse(t.p_vocab)},
          {"p_sentence", sparse(t.p_sentence)},
          {"p_relation", sparse(t.p_relation)},
          {"p_final", sparse(t.p_final)}};
}

GenerateResult cmd_generate(const GenerateOptions& o, std::ostream& log) {
  RunManifest manifest{"generate"};
  manifest.seed = o.seed;
  const auto ckpt_path = resolve_checkpoint(o.checkpoint);
  for (const auto& p : {ckpt_path, o.corpus, o.vocab}) manifest.add_input(p);

  const auto ck = Checkpoint::load(ckpt_path);
  const auto vocab = Vocabulary::load(o.vocab);
  const auto expected = ck.header.value("vocab_fingerprint", std::string());
  if (expected != vocab.fingerprint()) {
    throw Error("vocabulary " + o.vocab + " (fingerprint " + vocab.fingerprint() +
                ") does not match checkpoint " + ckpt_path + " (fingerprint " + expected + ")");
  }
  const auto model_cfg = ModelConfig::from_json(ck.header.at("model_config"));
  QGModel<double> model(model_cfg, vocab);
  ck.restore(model.params());
  const int beam = o.beam_size.value_or(model_cfg.beam_size);
  const int max_len = o.max_len.value_or(model_cfg.max_decode_len);
  if (beam <= 0) throw Error("beam size must be positive");
  if (max_len <= 0) throw Error("max length must be positive");
  manifest.config = {{"checkpoint", ckpt_path}, {"beam_size", beam}, {"max_len", max_len},
                     {"trace", o.trace}, {"model_config", model_cfg.to_json()}};

  const auto prepared = load_prepared(o.corpus);
  const auto encoded = encode_corpus(prepared, vocab);
  const auto n = encoded.size();
  std::vector<Prediction> predictions(n);
  std::vector<std::vector<DecodeStepTrace>> traces(o.trace ? n : 0);
  auto work = [&](std::size_t i) {
    const auto best = beam_decode(model, encoded[i], beam, max_len).best;
    predictions[i] = {prepared[i].example.id, render_tokens(best.tokens, encoded[i], vocab)};
    if (o.trace) {
      StepDecoder<double> decoder(model, encoded[i]);
      traces[i] = decoder.trace(best.tokens);
    }
  };
  const auto workers = worker_count(o.threads, n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) work(i);
  } else {
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(workers);
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&, w] {
        try {
          for (std::size_t i = w; i < n; i += workers) work(i);
        } catch (...) {
          errors[w] = std::current_exception();
        }
      });
    }
    for (auto& t : pool) t.join();
    for (const auto& e : errors) {
      if (e) std::rethrow_exception(e);
    }
  }

  ensure_dir(o.out_dir);
  GenerateResult r;
  r.predictions_path = in_dir(o.out_dir, "predictions.jsonl");
  save_predictions(r.predictions_path, predictions);
  manifest.add_output(r.predictions_path);
  if (o.trace) {
    r.trace_path = in_dir(o.out_dir, "trace.jsonl");
    auto out = open_out(r.trace_path);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t s = 0; s < traces[i].size(); ++s) {
        auto j = trace_to_json(traces[i][s]);
        j["id"] = predictions[i].id;
        j["step"] = s;
        out << j.dump() << '\n';
        ++r.trace_lines;
      }
    }
    out.close();
    manifest.add_output(r.trace_path);
  }
  manifest.write(o.out_dir);
  r.predictions = std::move(predictions);
  log << "generated " << n << " questions (beam " << beam << ", " << workers << " worker"
      << (workers == 1 ? "" : "s") << ")\n";
  return r;
}

MetricReport cmd_evaluate(const EvaluateOptions& o, std::ostream& log) {
  RunManifest manifest{"evaluate"};
  manifest.seed = o.seed;
  manifest.add_input(o.predictions);
  manifest.add_input(o.references);
  const auto corpus = load_references(o.references);
  const auto hyps = align_predictions(corpus, load_predictions(o.predictions));
  std::vector<std::vector<TokenSeq>> refs;
  for (const auto& ex : corpus) {
    TokenSeq q;
    for (const auto& t : ex.question) q.push_back(t.surface);
    refs.push_back({std::move(q)});
  }
  const auto report = evaluate(hyps, refs);
  ensure_dir(o.out_dir);
  const auto path = in_dir(o.out_dir, "metrics.json");
  open_out(path) << to_json(report).dump(2) << '\n';
  manifest.add_output(path);
  manifest.write(o.out_dir);
  log << format_table(report);
  return report;
}

DistanceBucketReport cmd_analyze(const AnalyzeOptions& o, std::ostream& log) {
  RunManifest manifest{"analyze"};
  manifest.seed = o.seed;
  manifest.config = {{"length_filter", o.length_filter ? json(*o.length_filter) : json(nullptr)}};
  manifest.add_input(o.predictions);
  manifest.add_input(o.corpus);
  const auto corpus = load_references(o.corpus);
  const auto hyps = align_predictions(corpus, load_predictions(o.predictions));
  const auto report = distance_bucket_analysis(corpus, hyps, o.length_filter);
  ensure_dir(o.out_dir);
  const auto path = in_dir(o.out_dir, "distance_buckets.json");
  open_out(path) << to_json(report).dump(2) << '\n';
  manifest.add_output(path);
  manifest.write(o.out_dir);
  log << format_table(report);
  return report;
}

}  // namespace qg
