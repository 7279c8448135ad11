#include <cstdint>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "qg/commands.hpp"

namespace {

struct Globals {
  std::optional<std::uint64_t> seed;
  std::string out = ".";
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Answer-aware question generation with relation contexts"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  app.add_option("--seed", g.seed, "Random seed (overrides the config)");
  app.add_option("--out", g.out, "Output directory")->capture_default_str();

  auto* prepare = app.add_subcommand("prepare", "Filter a corpus, select relations, build the vocabulary");
  std::string corpus_in;
  std::string config_path;
  bool desk = false;
  std::optional<std::size_t> vocab_cap;
  prepare->add_option("corpus", corpus_in, "Corpus JSON Lines")->required()->check(CLI::ExistingFile);
  prepare->add_option("--config", config_path, "Run config (model.vocab_cap)")->check(CLI::ExistingFile);
  prepare->add_flag("--desk", desk, "Desk-scale defaults");
  prepare->add_option("--vocab-cap", vocab_cap, "Vocabulary size cap");

  auto* stats = app.add_subcommand("stats", "Sentence vs relation statistics of a prepared corpus");
  std::string prepared_in;
  stats->add_option("prepared", prepared_in, "Prepared corpus")->required()->check(CLI::ExistingFile);

  auto* train = app.add_subcommand("train", "Train a model");
  bool resume = false;
  train->add_option("--config", config_path, "Run config JSON")->required()->check(CLI::ExistingFile);
  train->add_flag("--desk", desk, "Desk-scale defaults");
  train->add_flag("--resume", resume, "Continue from the newest checkpoint");

  auto* generate = app.add_subcommand("generate", "Decode questions with beam search");
  std::string checkpoint;
  std::string vocab_path;
  std::optional<int> beam_size;
  std::optional<int> max_len;
  bool trace = false;
  std::size_t threads = 0;
  generate->add_option("checkpoint", checkpoint, "Checkpoint file or directory")->required()->check(CLI::ExistingPath);
  generate->add_option("corpus", prepared_in, "Prepared corpus")->required()->check(CLI::ExistingFile);
  generate->add_option("--vocab", vocab_path, "Vocabulary file")->required()->check(CLI::ExistingFile);
  generate->add_option("--beam-size", beam_size, "Beam size");
  generate->add_option("--max-len", max_len, "Maximum question length");
  generate->add_flag("--trace", trace, "Write per-step traces");
  generate->add_option("--threads", threads, "Worker threads (0: automatic)");

  auto* evaluate = app.add_subcommand("evaluate", "BLEU-1..4 and ROUGE-L against references");
  std::string predictions;
  std::string references;
  evaluate->add_option("predictions", predictions, "Predictions JSON Lines")->required()->check(CLI::ExistingFile);
  evaluate->add_option("references", references, "Reference corpus")->required()->check(CLI::ExistingFile);

  auto* analyze = app.add_subcommand("analyze", "Scores by answer-relative distance bucket");
  std::optional<std::size_t> length_filter;
  analyze->add_option("predictions", predictions, "Predictions JSON Lines")->required()->check(CLI::ExistingFile);
  analyze->add_option("corpus", references, "Reference corpus")->required()->check(CLI::ExistingFile);
  analyze->add_option("--length-filter", length_filter, "Keep sentences longer than this many tokens");

  CLI11_PARSE(app, argc, argv);

  try {
    const std::uint64_t seed = g.seed.value_or(1);
    if (prepare->parsed()) {
      qg::PrepareOptions o;
      o.corpus = corpus_in;
      o.out_dir = g.out;
      o.seed = seed;
      if (!config_path.empty()) {
        o.vocab_cap = qg::RunConfig::load(config_path, desk).model.vocab_cap;
      } else if (desk) {
        o.vocab_cap = qg::ModelConfig::desk().vocab_cap;
      }
      if (vocab_cap) o.vocab_cap = *vocab_cap;
      qg::cmd_prepare(o, std::cout);
    } else if (stats->parsed()) {
      qg::cmd_stats({prepared_in, g.out, seed}, std::cout);
    } else if (train->parsed()) {
      qg::TrainOptions o;
      o.config = qg::RunConfig::load(config_path, desk);
      if (g.seed) {
        o.config.model.seed = *g.seed;
        o.config.train.seed = *g.seed;
      }
      o.config_path = config_path;
      o.out_dir = g.out;
      o.resume = resume;
      qg::cmd_train(o, std::cout);
    } else if (generate->parsed()) {
      qg::GenerateOptions o;
      o.checkpoint = checkpoint;
      o.corpus = prepared_in;
      o.vocab = vocab_path;
      o.out_dir = g.out;
      o.beam_size = beam_size;
      o.max_len = max_len;
      o.trace = trace;
      o.seed = seed;
      o.threads = threads;
      qg::cmd_generate(o, std::cout);
    } else if (evaluate->parsed()) {
      qg::cmd_evaluate({predictions, references, g.out, seed}, std::cout);
    } else if (analyze->parsed()) {
      qg::cmd_analyze({predictions, references, length_filter, g.out, seed}, std::cout);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
