#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include <nlohmann/json.hpp>

#include "qg/data.hpp"

namespace qg {

/// The relation-side input of the model: either a linearized n-ary relation
/// or, when none was extracted, the sentence itself.
struct RelationContext {
  std::vector<Token> tokens;
  std::vector<AnswerTag> answer_tags;
  /// Position in the example's relation list; empty for the sentence fallback.
  std::optional<std::size_t> source_index;

  bool is_sentence_fallback() const { return !source_index.has_value(); }
};

/// Sort key used to rank candidate relations; larger is better.
struct RelationScore {
  std::size_t answer_overlap = 0;
  double confidence = 0.0;
  std::size_t content_words = 0;
};

RelationScore score_relation(const NaryRelation& relation, std::span<const Token> answer);

/// Picks the relation with the most answer-token overlap, then the highest
/// confidence, then the most non-stop words, then the lowest source index.
RelationContext select_relation(const QGExample& example);

/// Whitespace-splits each argument and concatenates them in argument order.
std::vector<Token> linearize(const NaryRelation& relation);

/// Marks the longest contiguous case-insensitive run shared with the answer
/// (the earliest one on ties) as B, I, ...; everything else is O.
std::vector<AnswerTag> tag_relation_answer(std::span<const Token> tokens,
                                           std::span<const Token> answer);

struct RelationStats {
  double avg_sentence_len = 0.0;
  double avg_relation_len = 0.0;
  double overlap_sentence = 0.0;
  double overlap_relation = 0.0;
  double copy_ratio_sentence = 0.0;
  double copy_ratio_relation = 0.0;
  std::size_t n_examples = 0;
};

/// Source positions holding a non-stop token whose lower form occurs in the question.
std::size_t question_overlap(std::span<const Token> source, std::span<const Token> question);

RelationStats corpus_relation_stats(std::span<const QGExample> corpus);

nlohmann::json to_json(const RelationStats& stats);
nlohmann::json to_json(const RelationContext& context);
RelationContext relation_context_from_json(const nlohmann::json& j);

}  // namespace qg
