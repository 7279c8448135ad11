#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "qg/beam.hpp"
#include "qg/numeric/rng.hpp"

namespace qgtest {

constexpr int kStart = 2;
constexpr int kStop = 3;

/// Random 4-symbol model over prefixes. Symbol 2 is the start symbol and is
/// never emitted, like BOS in the real output layer.
struct ToyModel {
  std::uint64_t seed;

  explicit ToyModel(std::uint64_t s) : seed(s) {}

  Eigen::VectorXd dist(const std::vector<int>& prefix) const {
    std::uint64_t h = qg::mix_seed(seed);
    for (int t : prefix) h = qg::mix_seed(h ^ static_cast<std::uint64_t>(t + 1));
    qg::Rng rng(h);
    Eigen::VectorXd p(4);
    for (int i = 0; i < 4; ++i) p(i) = rng.uniform();
    p(kStart) = 0.0;
    p /= p.sum();
    return p;
  }

  std::pair<Eigen::VectorXd, std::vector<int>> operator()(const std::vector<int>& state, int token) {
    auto next = state;
    next.push_back(token);
    return {dist(next), next};
  }
};

struct Exhaustive {
  std::vector<int> tokens;
  double log_prob = -1e300;
};

/// Best EOS-terminated sequence of at most max_len tokens.
inline Exhaustive enumerate(ToyModel& model, int max_len) {
  Exhaustive best;
  std::function<void(std::vector<int>, std::vector<int>, double)> walk = [&](std::vector<int> state,
                                                                             std::vector<int> out, double lp) {
    const auto p = model.dist(state);
    for (int w : {0, 1, kStop}) {
      auto o = out;
      o.push_back(w);
      auto s = state;
      s.push_back(w);
      const double l = lp + std::log(p(w));
      if (w == kStop) {
        if (l > best.log_prob) best = {o, l};
      } else if (static_cast<int>(o.size()) < max_len) {
        walk(s, o, l);
      }
    }
  };
  walk({kStart}, {}, 0.0);
  return best;
}

inline qg::BeamResult<std::vector<int>> run_beam(ToyModel& model, int beam) {
  return qg::beam_search(std::vector<int>{}, kStart, kStop, beam, 3, model);
}

}  // namespace qgtest
