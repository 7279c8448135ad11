#pragma once

#include <filesystem>
#include <fstream>
#include <iterator>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "qg/commands.hpp"
#include "qg/data.hpp"
#include "qg/model.hpp"
#include "qg/relation.hpp"
#include "qg/training.hpp"

namespace qgtest {

inline std::string fixture(const std::string& name) { return std::string(QG_FIXTURE_DIR) + "/" + name; }

inline std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline nlohmann::json read_json(const std::string& path) { return nlohmann::json::parse(slurp(path)); }

/// Fresh empty directory under the system temp dir.
inline std::string scratch_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("qg_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir.string();
}

inline std::vector<qg::PreparedExample> prepare(const std::vector<qg::QGExample>& corpus) {
  std::vector<qg::PreparedExample> out;
  for (const auto& ex : corpus) out.push_back({ex, qg::select_relation(ex)});
  return out;
}

inline qg::QGExample make_example(const std::string& id, const std::string& sentence, std::size_t start,
                                  std::size_t end, const std::string& question,
                                  std::vector<qg::NaryRelation> relations = {}) {
  auto split = [](const std::string& s) {
    std::vector<qg::Token> out;
    std::istringstream in(s);
    std::string w;
    while (in >> w) out.push_back(qg::Token::make(w));
    return out;
  };
  qg::QGExample ex;
  ex.id = id;
  ex.sentence = split(sentence);
  ex.answer = {start, end};
  ex.question = split(question);
  for (std::size_t i = 0; i < relations.size(); ++i) relations[i].source_index = i;
  ex.relations = std::move(relations);
  return ex;
}

/// The tiny model of tests/fixtures/tiny_forward.json with its parameters loaded.
struct TinyFixture {
  nlohmann::json doc;
  qg::Vocabulary vocab;
  qg::ModelConfig config;
  std::vector<qg::EncodedExample> examples;
  std::vector<double> expected_loss;

  TinyFixture() : doc(read_json(fixture("tiny_forward.json"))) {
    vocab = qg::Vocabulary::from_words(doc["words"].get<std::vector<std::string>>(), 10,
                                       qg::TagSet(doc["pos_tags"].get<std::vector<std::string>>()),
                                       qg::TagSet(doc["ner_tags"].get<std::vector<std::string>>()));
    config = qg::ModelConfig::from_json(doc["config"]);
    for (const auto& e : doc["examples"]) {
      qg::EncodedExample ex;
      ex.sentence_words = e["sentence_words"].get<std::vector<int>>();
      ex.sentence_pos = e["sentence_pos"].get<std::vector<int>>();
      ex.sentence_ner = e["sentence_ner"].get<std::vector<int>>();
      ex.sentence_answer = e["sentence_answer"].get<std::vector<int>>();
      ex.sentence_ext = e["sentence_ext"].get<std::vector<int>>();
      ex.relation_words = e["relation_words"].get<std::vector<int>>();
      ex.relation_answer = e["relation_answer"].get<std::vector<int>>();
      ex.relation_ext = e["relation_ext"].get<std::vector<int>>();
      ex.copy_surfaces = e["copy_surfaces"].get<std::vector<std::string>>();
      ex.target = e["target"].get<std::vector<int>>();
      ex.vocab_size = e["vocab_size"].get<int>();
      examples.push_back(std::move(ex));
      expected_loss.push_back(e["expected_loss"].get<double>());
    }
  }

  template <typename Scalar>
  void load_into(qg::QGModel<Scalar>& model) const {
    for (auto& p : model.params()) {
      const auto& rows = doc["params"].at(p.name);
      if (static_cast<Eigen::Index>(rows.size()) != p.value.rows() ||
          static_cast<Eigen::Index>(rows[0].size()) != p.value.cols()) {
        throw qg::ShapeError("fixture shape mismatch for " + p.name);
      }
      for (Eigen::Index r = 0; r < p.value.rows(); ++r) {
        for (Eigen::Index c = 0; c < p.value.cols(); ++c) {
          p.value(r, c) = static_cast<Scalar>(rows[r][c].template get<double>());
        }
      }
    }
  }

  template <typename Scalar = double>
  qg::QGModel<Scalar> model() const {
    qg::QGModel<Scalar> m(config, vocab);
    load_into(m);
    return m;
  }
};

/// Small random model over the toy fixture vocabulary for property tests.
struct ToyWorld {
  std::vector<qg::PreparedExample> corpus;
  qg::Vocabulary vocab;
  std::vector<qg::EncodedExample> encoded;

  explicit ToyWorld(std::size_t cap = 1000, const std::string& file = "toy16.jsonl") {
    corpus = prepare(qg::load_corpus(fixture(file)));
    vocab = qg::Vocabulary::build(qg::examples_of(corpus), cap);
    encoded = qg::encode_corpus(corpus, vocab);
  }
};

/// Small model for fast property tests.
inline qg::ModelConfig small_config(double dropout = 0.0) {
  auto c = qg::ModelConfig::desk();
  c.word_dim = 8;
  c.pos_dim = c.ner_dim = c.ans_dim = 3;
  c.hidden = 8;
  c.dropout_p = dropout;
  return c;
}

/// Model and schedule used to memorise the 16-example toy corpus.
inline qg::ModelConfig toy_model_config() {
  auto c = qg::ModelConfig::desk();
  c.word_dim = 32;
  c.hidden = 32;
  c.dropout_p = 0.0;
  return c;
}

inline qg::TrainConfig toy_train_config() {
  qg::TrainConfig t;
  t.lr_init = 1.0;
  t.epochs = 600;
  t.halve_after_epoch = 120;
  t.batch_size = 1;
  t.clip_norm = 3.0;
  t.seed = 1;
  return t;
}

}  // namespace qgtest
