#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "qg/error.hpp"

namespace qg {

template <typename State>
struct Hypothesis {
  std::vector<int> tokens;  // excludes the start symbol; ends with EOS when finished
  double log_prob = 0.0;
  State state{};
  bool finished = false;
};

template <typename State>
struct BeamResult {
  Hypothesis<State> best;
  /// Finished hypotheses by score, then any unfinished survivors by score.
  std::vector<Hypothesis<State>> n_best;
};

/// Length-unnormalized beam search.
///
/// `step(state, last_token)` returns a probability column over the output
/// ids and the successor state. Each round ranks every extension of every
/// live hypothesis by (log-prob desc, token id asc, parent creation order
/// asc) and walks that ranking: EOS extensions met on the way are finished,
/// other extensions become live until `beam_size` of them are kept. Search
/// stops when nothing is live, after `max_len` tokens, or once the best
/// finished score is at least the best live score (log-probs only fall).
/// The answer is the best finished hypothesis, else the best unfinished one.
template <typename State, typename StepFn>
BeamResult<State> beam_search(State initial, int start_token, int eos_token, int beam_size,
                              int max_len, StepFn&& step) {
  if (beam_size <= 0) throw Error("beam_size must be positive");
  if (max_len <= 0) throw Error("max_len must be positive");

  struct Candidate {
    double score;
    int token;
    std::size_t parent;
  };
  auto better = [](const Candidate& a, const Candidate& b) {
    if (a.score != b.score) return a.score > b.score;
    if (a.token != b.token) return a.token < b.token;
    return a.parent < b.parent;
  };

  std::vector<Hypothesis<State>> live(1);
  live[0].state = std::move(initial);
  std::vector<Hypothesis<State>> finished;

  for (int t = 0; t < max_len && !live.empty(); ++t) {
    std::vector<Candidate> candidates;
    std::vector<State> successors;
    successors.reserve(live.size());
    for (std::size_t k = 0; k < live.size(); ++k) {
      const int last = live[k].tokens.empty() ? start_token : live[k].tokens.back();
      auto [probs, next] = step(live[k].state, last);
      successors.push_back(std::move(next));
      for (Eigen::Index w = 0; w < probs.size(); ++w) {
        const double prob = static_cast<double>(probs(w));
        if (prob > 0.0) candidates.push_back({live[k].log_prob + std::log(prob), static_cast<int>(w), k});
      }
    }
    std::sort(candidates.begin(), candidates.end(), better);

    std::vector<Hypothesis<State>> next_live;
    for (const auto& c : candidates) {
      if (static_cast<int>(next_live.size()) == beam_size) break;
      Hypothesis<State> h;
      h.tokens = live[c.parent].tokens;
      h.tokens.push_back(c.token);
      h.log_prob = c.score;
      h.state = successors[c.parent];
      h.finished = c.token == eos_token;
      (h.finished ? finished : next_live).push_back(std::move(h));
    }
    live = std::move(next_live);
    if (!finished.empty() && !live.empty()) {
      const auto best_finished = std::max_element(
          finished.begin(), finished.end(),
          [](const auto& a, const auto& b) { return a.log_prob < b.log_prob; });
      if (best_finished->log_prob >= live.front().log_prob) break;
    }
  }

  // Stable sorts keep creation order among equal scores.
  auto by_score = [](const auto& a, const auto& b) { return a.log_prob > b.log_prob; };
  std::stable_sort(finished.begin(), finished.end(), by_score);
  std::stable_sort(live.begin(), live.end(), by_score);
  BeamResult<State> result;
  result.n_best = finished;
  result.n_best.insert(result.n_best.end(), live.begin(), live.end());
  if (result.n_best.empty()) throw Error("beam search produced no hypothesis");
  result.best = result.n_best.front();
  return result;
}

/// Argmax decoding with the same tie rule as beam_search (lower id wins).
template <typename State, typename StepFn>
Hypothesis<State> greedy_search(State initial, int start_token, int eos_token, int max_len,
                                StepFn&& step) {
  Hypothesis<State> h;
  h.state = std::move(initial);
  for (int t = 0; t < max_len; ++t) {
    const int last = h.tokens.empty() ? start_token : h.tokens.back();
    auto [probs, next] = step(h.state, last);
    // Scores are formed exactly as in beam_search so rounding ties agree.
    Eigen::Index best = -1;
    double best_score = 0.0;
    for (Eigen::Index w = 0; w < probs.size(); ++w) {
      const double prob = static_cast<double>(probs(w));
      if (!(prob > 0.0)) continue;
      const double score = h.log_prob + std::log(prob);
      if (best < 0 || score > best_score) {
        best = w;
        best_score = score;
      }
    }
    if (best < 0) throw Error("greedy search met an all-zero distribution");
    h.tokens.push_back(static_cast<int>(best));
    h.log_prob = best_score;
    h.state = std::move(next);
    if (best == static_cast<Eigen::Index>(eos_token)) {
      h.finished = true;
      break;
    }
  }
  return h;
}

}  // namespace qg
