#include "qg/data.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <set>
#include <unordered_set>

#include "qg/hash.hpp"
#include "qg/stopwords.hpp"

namespace qg {

using nlohmann::json;

std::string case_fold(std::string_view surface) {
  std::string out(surface);
  for (char& c : out) {
    if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
  }
  return out;
}

Token Token::make(std::string_view surface, std::string_view pos, std::string_view ner) {
  Token t;
  t.surface = std::string(surface);
  t.lower = case_fold(surface);
  t.pos = std::string(pos);
  t.ner = std::string(ner);
  t.is_stop = is_stop_word(t.lower);
  return t;
}

char tag_letter(AnswerTag tag) {
  switch (tag) {
    case AnswerTag::B:
      return 'B';
    case AnswerTag::I:
      return 'I';
    case AnswerTag::O:
      break;
  }
  return 'O';
}

AnswerTag tag_from_letter(std::string_view letter) {
  if (letter == "B") return AnswerTag::B;
  if (letter == "I") return AnswerTag::I;
  if (letter == "O") return AnswerTag::O;
  throw FormatError("unknown answer tag: " + std::string(letter));
}

namespace {

std::vector<Token> tokens_from(const json& surfaces, const json* pos, const json* ner,
                               const std::string& id, const char* field) {
  const auto n = surfaces.size();
  if (pos && pos->size() != n) {
    throw FormatError("example " + id + ": pos has " + std::to_string(pos->size()) +
                      " tags for " + std::to_string(n) + " " + field);
  }
  if (ner && ner->size() != n) {
    throw FormatError("example " + id + ": ner has " + std::to_string(ner->size()) +
                      " tags for " + std::to_string(n) + " " + field);
  }
  std::vector<Token> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    out.push_back(Token::make(surfaces[i].get<std::string>(),
                              pos ? (*pos)[i].get<std::string>() : std::string(kNeutralTag),
                              ner ? (*ner)[i].get<std::string>() : std::string(kNeutralTag)));
  }
  return out;
}

}  // namespace

QGExample example_from_json(const json& record) {
  QGExample ex;
  ex.id = record.at("id").get<std::string>();
  const json* pos = record.contains("pos") && !record["pos"].is_null() ? &record["pos"] : nullptr;
  const json* ner = record.contains("ner") && !record["ner"].is_null() ? &record["ner"] : nullptr;
  ex.sentence = tokens_from(record.at("sentence_tokens"), pos, ner, ex.id, "sentence tokens");
  ex.question = tokens_from(record.at("question_tokens"), nullptr, nullptr, ex.id, "question tokens");
  const auto start = record.at("answer_start").get<long long>();
  const auto end = record.at("answer_end").get<long long>();
  if (ex.sentence.empty()) throw FormatError("example " + ex.id + ": empty sentence");
  if (ex.question.empty()) throw FormatError("example " + ex.id + ": empty question");
  if (start < 0 || end < start || end >= static_cast<long long>(ex.sentence.size())) {
    throw FormatError("example " + ex.id + ": answer span out of bounds [" +
                      std::to_string(start) + ", " + std::to_string(end) + "] for " +
                      std::to_string(ex.sentence.size()) + " tokens");
  }
  ex.answer = {static_cast<std::size_t>(start), static_cast<std::size_t>(end)};
  if (record.contains("relations") && !record["relations"].is_null()) {
    std::size_t index = 0;
    for (const auto& r : record["relations"]) {
      NaryRelation rel;
      rel.args = r.at("args").get<std::vector<std::string>>();
      rel.confidence = r.at("confidence").get<double>();
      rel.source_index = index++;
      if (rel.args.size() < 2) {
        throw FormatError("example " + ex.id + ": relation " + std::to_string(rel.source_index) +
                          " has fewer than two arguments");
      }
      if (!(rel.confidence >= 0.0 && rel.confidence <= 1.0)) {
        throw FormatError("example " + ex.id + ": relation " + std::to_string(rel.source_index) +
                          " confidence outside [0, 1]");
      }
      ex.relations.push_back(std::move(rel));
    }
  }
  return ex;
}

json example_to_json(const QGExample& ex) {
  json j;
  j["id"] = ex.id;
  auto& sent = j["sentence_tokens"] = json::array();
  auto& pos = j["pos"] = json::array();
  auto& ner = j["ner"] = json::array();
  for (const auto& t : ex.sentence) {
    sent.push_back(t.surface);
    pos.push_back(t.pos);
    ner.push_back(t.ner);
  }
  j["answer_start"] = ex.answer.start;
  j["answer_end"] = ex.answer.end;
  auto& q = j["question_tokens"] = json::array();
  for (const auto& t : ex.question) q.push_back(t.surface);
  auto& rels = j["relations"] = json::array();
  for (const auto& r : ex.relations) rels.push_back({{"args", r.args}, {"confidence", r.confidence}});
  return j;
}

std::vector<QGExample> load_corpus(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open corpus: " + path);
  std::vector<QGExample> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json record;
    try {
      record = json::parse(line);
    } catch (const json::exception& e) {
      throw FormatError(path + ": malformed line " + std::to_string(line_no) + ": " + e.what());
    }
    try {
      out.push_back(example_from_json(record));
    } catch (const json::exception& e) {
      throw FormatError(path + ": malformed line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

void save_corpus(const std::string& path, std::span<const QGExample> corpus) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write corpus: " + path);
  for (const auto& ex : corpus) out << example_to_json(ex).dump() << '\n';
}

bool has_content_overlap(const QGExample& ex) {
  std::unordered_set<std::string_view> sentence;
  for (const auto& t : ex.sentence) {
    if (!t.is_stop) sentence.insert(t.lower);
  }
  return std::any_of(ex.question.begin(), ex.question.end(),
                     [&](const Token& t) { return !t.is_stop && sentence.contains(t.lower); });
}

std::vector<QGExample> filter_corpus(std::span<const QGExample> corpus) {
  std::vector<QGExample> kept;
  for (const auto& ex : corpus) {
    if (has_content_overlap(ex)) kept.push_back(ex);
  }
  return kept;
}

std::vector<AnswerTag> bio_tags(std::size_t length, AnswerSpan span) {
  if (!span.fits(length)) {
    throw Error("answer span [" + std::to_string(span.start) + ", " + std::to_string(span.end) +
                "] out of range for length " + std::to_string(length));
  }
  std::vector<AnswerTag> tags(length, AnswerTag::O);
  tags[span.start] = AnswerTag::B;
  for (std::size_t i = span.start + 1; i <= span.end; ++i) tags[i] = AnswerTag::I;
  return tags;
}

TagSet::TagSet(std::vector<std::string> sorted_tags) : TagSet() {
  for (auto& t : sorted_tags) {
    if (index_.contains(t)) continue;
    index_.emplace(t, static_cast<int>(tags_.size()));
    tags_.push_back(std::move(t));
  }
}

int TagSet::id(std::string_view tag) const {
  const auto it = index_.find(std::string(tag));
  return it == index_.end() ? 0 : it->second;
}

Vocabulary Vocabulary::build(std::span<const QGExample> corpus, std::size_t cap) {
  if (cap == 0) throw Error("vocabulary cap must be positive");
  if (corpus.empty()) throw Error("cannot build a vocabulary from an empty corpus");
  std::map<std::string, std::size_t> counts;
  std::set<std::string> pos;
  std::set<std::string> ner;
  for (const auto& ex : corpus) {
    for (const auto& t : ex.sentence) {
      ++counts[t.lower];
      pos.insert(t.pos);
      ner.insert(t.ner);
    }
    for (const auto& t : ex.question) ++counts[t.lower];
  }
  std::vector<std::pair<std::string, std::size_t>> ranked(counts.begin(), counts.end());
  // std::map iteration is already lexicographic, so a stable sort on count
  // alone yields the tie-break.
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  std::vector<std::string> words;
  for (auto& [word, count] : ranked) {
    if (words.size() == cap) break;
    if (word == kPadToken || word == kUnkToken || word == kBosToken || word == kEosToken) continue;
    words.push_back(word);
  }
  return from_words(std::move(words), cap, TagSet({pos.begin(), pos.end()}),
                    TagSet({ner.begin(), ner.end()}));
}

Vocabulary Vocabulary::from_words(std::vector<std::string> words, std::size_t cap, TagSet pos,
                                  TagSet ner) {
  if (words.size() > cap) throw Error("vocabulary exceeds its cap");
  Vocabulary v;
  v.cap_ = cap;
  v.words_ = {std::string(kPadToken), std::string(kUnkToken), std::string(kBosToken),
              std::string(kEosToken)};
  for (auto& w : words) v.words_.push_back(std::move(w));
  for (std::size_t i = 0; i < v.words_.size(); ++i) {
    if (!v.index_.emplace(v.words_[i], static_cast<int>(i)).second) {
      throw FormatError("duplicate vocabulary entry: " + v.words_[i]);
    }
  }
  v.pos_ = std::move(pos);
  v.ner_ = std::move(ner);
  return v;
}

std::optional<int> Vocabulary::find(std::string_view lower) const {
  const auto it = index_.find(std::string(lower));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

std::string Vocabulary::fingerprint() const {
  Fnv1a h;
  for (const auto& w : words_) {
    h.update(w);
    h.update(std::string_view("\n", 1));
  }
  h.update("#pos\n");
  for (const auto& t : pos_.tags()) {
    h.update(t);
    h.update("\n");
  }
  h.update("#ner\n");
  for (const auto& t : ner_.tags()) {
    h.update(t);
    h.update("\n");
  }
  return h.hex();
}

json Vocabulary::to_json() const {
  json j;
  j["version"] = 1;
  j["cap"] = cap_;
  j["words"] = std::vector<std::string>(words_.begin() + kReserved, words_.end());
  j["pos_tags"] = std::vector<std::string>(pos_.tags().begin() + 1, pos_.tags().end());
  j["ner_tags"] = std::vector<std::string>(ner_.tags().begin() + 1, ner_.tags().end());
  j["fingerprint"] = fingerprint();
  return j;
}

Vocabulary Vocabulary::from_json(const json& j) {
  if (j.at("version").get<int>() != 1) throw FormatError("unsupported vocabulary version");
  auto v = from_words(j.at("words").get<std::vector<std::string>>(), j.at("cap").get<std::size_t>(),
                      TagSet(j.at("pos_tags").get<std::vector<std::string>>()),
                      TagSet(j.at("ner_tags").get<std::vector<std::string>>()));
  if (j.contains("fingerprint") && j["fingerprint"].get<std::string>() != v.fingerprint()) {
    throw FormatError("vocabulary fingerprint does not match its contents");
  }
  return v;
}

void Vocabulary::save(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write vocabulary: " + path);
  out << to_json().dump(1) << '\n';
}

Vocabulary Vocabulary::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open vocabulary: " + path);
  try {
    return from_json(json::parse(in));
  } catch (const json::exception& e) {
    throw FormatError(path + ": " + e.what());
  }
}

}  // namespace qg
