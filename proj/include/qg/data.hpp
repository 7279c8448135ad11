#pragma once

#include <cstddef>
#include <fstream>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "qg/error.hpp"

namespace qg {

inline constexpr std::string_view kNeutralTag = "X";

/// ASCII case folding; bytes outside ASCII pass through unchanged.
std::string case_fold(std::string_view surface);

struct Token {
  std::string surface;
  std::string lower;
  std::string pos{kNeutralTag};
  std::string ner{kNeutralTag};
  bool is_stop = false;

  static Token make(std::string_view surface, std::string_view pos = kNeutralTag,
                    std::string_view ner = kNeutralTag);
};

/// Inclusive token range of the answer inside its sentence.
struct AnswerSpan {
  std::size_t start = 0;
  std::size_t end = 0;

  std::size_t length() const { return end - start + 1; }
  bool fits(std::size_t sentence_length) const {
    return start <= end && end < sentence_length;
  }
};

enum class AnswerTag : int { O = 0, B = 1, I = 2 };

char tag_letter(AnswerTag tag);
AnswerTag tag_from_letter(std::string_view letter);

/// An n-ary extraction: subject, predicate, then secondary arguments.
struct NaryRelation {
  std::vector<std::string> args;
  double confidence = 0.0;
  std::size_t source_index = 0;
};

struct QGExample {
  std::string id;
  std::vector<Token> sentence;
  AnswerSpan answer;
  std::vector<Token> question;
  std::vector<NaryRelation> relations;

  std::span<const Token> answer_tokens() const {
    return std::span<const Token>(sentence).subspan(answer.start, answer.length());
  }
};

/// Parses one corpus record. Throws FormatError naming the example id for
/// semantic problems; JSON shape problems propagate as nlohmann exceptions.
QGExample example_from_json(const nlohmann::json& record);
nlohmann::json example_to_json(const QGExample& example);

/// Reads a JSON Lines corpus. Blank lines are skipped.
std::vector<QGExample> load_corpus(const std::string& path);
void save_corpus(const std::string& path, std::span<const QGExample> corpus);

/// True when the question shares at least one non-stop token with the sentence.
bool has_content_overlap(const QGExample& example);

/// Keeps examples whose question shares a non-stop lower-cased token with the
/// sentence, in input order.
std::vector<QGExample> filter_corpus(std::span<const QGExample> corpus);

std::vector<AnswerTag> bio_tags(std::size_t length, AnswerSpan span);

/// A small closed tag inventory (POS or NER). Index 0 is the neutral tag and
/// absorbs anything unseen at build time.
class TagSet {
 public:
  TagSet() : tags_{std::string(kNeutralTag)} { index_.emplace(tags_[0], 0); }
  explicit TagSet(std::vector<std::string> sorted_tags);

  int id(std::string_view tag) const;
  const std::string& tag(int id) const { return tags_.at(static_cast<std::size_t>(id)); }
  std::size_t size() const { return tags_.size(); }
  const std::vector<std::string>& tags() const { return tags_; }

 private:
  std::vector<std::string> tags_;
  std::unordered_map<std::string, int> index_;
};

class Vocabulary {
 public:
  static constexpr int kPad = 0;
  static constexpr int kUnk = 1;
  static constexpr int kBos = 2;
  static constexpr int kEos = 3;
  static constexpr int kReserved = 4;

  static constexpr std::string_view kPadToken = "<pad>";
  static constexpr std::string_view kUnkToken = "<unk>";
  static constexpr std::string_view kBosToken = "<s>";
  static constexpr std::string_view kEosToken = "</s>";

  Vocabulary() = default;

  /// Frequency-ranked vocabulary over lower-cased sentence and question
  /// tokens. Ties are broken lexicographically. POS/NER inventories are
  /// collected from the same examples.
  static Vocabulary build(std::span<const QGExample> corpus, std::size_t cap);

  /// Reassembles a vocabulary from its non-reserved words in id order.
  static Vocabulary from_words(std::vector<std::string> words, std::size_t cap,
                               TagSet pos = {}, TagSet ner = {});

  std::optional<int> find(std::string_view lower) const;
  int id_or_unk(std::string_view lower) const { return find(lower).value_or(kUnk); }
  const std::string& word(int id) const { return words_.at(static_cast<std::size_t>(id)); }
  std::size_t size() const { return words_.size(); }
  std::size_t cap() const { return cap_; }

  const TagSet& pos_tags() const { return pos_; }
  const TagSet& ner_tags() const { return ner_; }

  /// Stable fingerprint of the word list and tag inventories.
  std::string fingerprint() const;

  nlohmann::json to_json() const;
  static Vocabulary from_json(const nlohmann::json& j);
  void save(const std::string& path) const;
  static Vocabulary load(const std::string& path);

 private:
  std::vector<std::string> words_;
  std::unordered_map<std::string, int> index_;
  std::size_t cap_ = 0;
  TagSet pos_;
  TagSet ner_;
};

/// Copies vectors for vocabulary words found in a whitespace-separated
/// embedding file ("token v1 ... v_dim") into the columns of `table`
/// (dim x vocab). Rows for everything else keep their current values.
/// Returns the number of vocabulary words matched.
template <typename Scalar>
std::size_t load_pretrained_embeddings(
    const std::string& path, const Vocabulary& vocab,
    Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>& table) {
  const auto dim = table.rows();
  if (table.cols() != static_cast<Eigen::Index>(vocab.size())) {
    throw ShapeError("embedding table has " + std::to_string(table.cols()) +
                     " columns but vocabulary has " + std::to_string(vocab.size()));
  }
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open embeddings file: " + path);
  std::vector<bool> seen(vocab.size(), false);
  std::size_t matched = 0;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::istringstream fields(line);
    std::string token;
    if (!(fields >> token)) continue;
    const auto id = vocab.find(token);
    if (!id || *id < Vocabulary::kReserved || seen[static_cast<std::size_t>(*id)]) continue;
    std::vector<double> values;
    double v = 0.0;
    while (fields >> v) values.push_back(v);
    if (static_cast<Eigen::Index>(values.size()) != dim) {
      throw FormatError("embeddings line " + std::to_string(line_no) + " (" + token + ") has " +
                        std::to_string(values.size()) + " values, expected " +
                        std::to_string(dim));
    }
    for (Eigen::Index r = 0; r < dim; ++r) table(r, *id) = static_cast<Scalar>(values[r]);
    seen[static_cast<std::size_t>(*id)] = true;
    ++matched;
  }
  return matched;
}

}  // namespace qg
