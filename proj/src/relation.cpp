#include "qg/relation.hpp"

#include <algorithm>
#include <sstream>
#include <string>
#include <tuple>
#include <unordered_map>
#include <unordered_set>

namespace qg {

using nlohmann::json;

std::vector<Token> linearize(const NaryRelation& relation) {
  std::vector<Token> out;
  for (const auto& arg : relation.args) {
    std::istringstream words(arg);
    std::string w;
    while (words >> w) out.push_back(Token::make(w));
  }
  if (out.empty()) throw Error("relation has only empty arguments");
  return out;
}

RelationScore score_relation(const NaryRelation& relation, std::span<const Token> answer) {
  const auto tokens = linearize(relation);
  std::unordered_map<std::string_view, std::size_t> available;
  RelationScore score;
  score.confidence = relation.confidence;
  for (const auto& t : tokens) {
    ++available[t.lower];
    if (!t.is_stop) ++score.content_words;
  }
  // Each answer occurrence consumes at most one relation occurrence.
  for (const auto& a : answer) {
    auto it = available.find(a.lower);
    if (it != available.end() && it->second > 0) {
      --it->second;
      ++score.answer_overlap;
    }
  }
  return score;
}

RelationContext select_relation(const QGExample& example) {
  RelationContext ctx;
  if (example.relations.empty()) {
    ctx.tokens = example.sentence;
    ctx.answer_tags = bio_tags(example.sentence.size(), example.answer);
    return ctx;
  }
  const auto answer = example.answer_tokens();
  const NaryRelation* best = nullptr;
  RelationScore best_score;
  for (const auto& rel : example.relations) {
    const auto s = score_relation(rel, answer);
    const auto key = std::tie(s.answer_overlap, s.confidence, s.content_words);
    // Strictly greater keeps the earlier relation on a full tie.
    if (best == nullptr ||
        key > std::tie(best_score.answer_overlap, best_score.confidence, best_score.content_words) ||
        (key == std::tie(best_score.answer_overlap, best_score.confidence,
                         best_score.content_words) &&
         rel.source_index < best->source_index)) {
      best = &rel;
      best_score = s;
    }
  }
  ctx.tokens = linearize(*best);
  ctx.answer_tags = tag_relation_answer(ctx.tokens, answer);
  ctx.source_index = best->source_index;
  return ctx;
}

std::vector<AnswerTag> tag_relation_answer(std::span<const Token> tokens,
                                           std::span<const Token> answer) {
  std::vector<AnswerTag> tags(tokens.size(), AnswerTag::O);
  // Longest common substring by dynamic programming; run[j] is the length of
  // the common suffix ending at tokens[i], answer[j].
  std::size_t best_len = 0;
  std::size_t best_end = 0;
  std::vector<std::size_t> prev(answer.size() + 1, 0);
  std::vector<std::size_t> cur(answer.size() + 1, 0);
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    for (std::size_t j = 0; j < answer.size(); ++j) {
      cur[j + 1] = tokens[i].lower == answer[j].lower ? prev[j] + 1 : 0;
      if (cur[j + 1] > best_len) {
        best_len = cur[j + 1];
        best_end = i;
      }
    }
    std::swap(prev, cur);
  }
  if (best_len == 0) return tags;
  const auto start = best_end + 1 - best_len;
  tags[start] = AnswerTag::B;
  for (std::size_t i = start + 1; i <= best_end; ++i) tags[i] = AnswerTag::I;
  return tags;
}

std::size_t question_overlap(std::span<const Token> source, std::span<const Token> question) {
  std::unordered_set<std::string_view> q;
  for (const auto& t : question) q.insert(t.lower);
  return static_cast<std::size_t>(std::count_if(source.begin(), source.end(), [&](const Token& t) {
    return !t.is_stop && q.contains(t.lower);
  }));
}

RelationStats corpus_relation_stats(std::span<const QGExample> corpus) {
  if (corpus.empty()) throw Error("relation statistics need a nonempty corpus");
  RelationStats s;
  for (const auto& ex : corpus) {
    const auto ctx = select_relation(ex);
    const auto sent_overlap = question_overlap(ex.sentence, ex.question);
    const auto rel_overlap = question_overlap(ctx.tokens, ex.question);
    s.avg_sentence_len += static_cast<double>(ex.sentence.size());
    s.avg_relation_len += static_cast<double>(ctx.tokens.size());
    s.overlap_sentence += static_cast<double>(sent_overlap);
    s.overlap_relation += static_cast<double>(rel_overlap);
    s.copy_ratio_sentence += static_cast<double>(sent_overlap) / static_cast<double>(ex.sentence.size());
    s.copy_ratio_relation += static_cast<double>(rel_overlap) / static_cast<double>(ctx.tokens.size());
  }
  const auto n = static_cast<double>(corpus.size());
  s.avg_sentence_len /= n;
  s.avg_relation_len /= n;
  s.overlap_sentence /= n;
  s.overlap_relation /= n;
  s.copy_ratio_sentence /= n;
  s.copy_ratio_relation /= n;
  s.n_examples = corpus.size();
  return s;
}

json to_json(const RelationStats& s) {
  return {{"n_examples", s.n_examples},
          {"avg_sentence_len", s.avg_sentence_len},
          {"avg_relation_len", s.avg_relation_len},
          {"overlap_sentence", s.overlap_sentence},
          {"overlap_relation", s.overlap_relation},
          {"copy_ratio_sentence", s.copy_ratio_sentence},
          {"copy_ratio_relation", s.copy_ratio_relation}};
}

json to_json(const RelationContext& ctx) {
  json j;
  auto& tokens = j["tokens"] = json::array();
  auto& tags = j["answer_tags"] = json::array();
  for (std::size_t i = 0; i < ctx.tokens.size(); ++i) {
    tokens.push_back(ctx.tokens[i].surface);
    tags.push_back(std::string(1, tag_letter(ctx.answer_tags[i])));
  }
  if (ctx.source_index) {
    j["provenance"] = "relation";
    j["source_index"] = *ctx.source_index;
  } else {
    j["provenance"] = "sentence";
  }
  return j;
}

RelationContext relation_context_from_json(const json& j) {
  RelationContext ctx;
  const auto& tokens = j.at("tokens");
  const auto& tags = j.at("answer_tags");
  if (tokens.size() != tags.size() || tokens.empty()) {
    throw FormatError("relation_context needs equally long, nonempty tokens and answer_tags");
  }
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    ctx.tokens.push_back(Token::make(tokens[i].get<std::string>()));
    ctx.answer_tags.push_back(tag_from_letter(tags[i].get<std::string>()));
  }
  const auto provenance = j.at("provenance").get<std::string>();
  if (provenance == "relation") {
    ctx.source_index = j.at("source_index").get<std::size_t>();
  } else if (provenance != "sentence") {
    throw FormatError("unknown relation_context provenance: " + provenance);
  }
  return ctx;
}

}  // namespace qg
