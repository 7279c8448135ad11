#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <string>

#include "qg/numeric/rng.hpp"
#include "qg/numeric/tape.hpp"
#include "qg/numeric/tensor.hpp"

namespace qg {

/// Uniform draws on the open interval (lo, hi). Deterministic per (shape, seed).
template <typename Scalar>
Matrix<Scalar> uniform_init(Eigen::Index rows, Eigen::Index cols, std::uint64_t seed,
                            double lo = -0.1, double hi = 0.1) {
  Rng rng(seed);
  Matrix<Scalar> out(rows, cols);
  for (Eigen::Index i = 0; i < out.size(); ++i) {
    Scalar v;
    do {
      v = static_cast<Scalar>(lo + (hi - lo) * rng.uniform());
    } while (!(v > static_cast<Scalar>(lo) && v < static_cast<Scalar>(hi)));
    out(i) = v;
  }
  return out;
}

/// L2 norm over every gradient entry of every parameter, in registry order.
template <typename Scalar>
double global_grad_norm(const ParameterSet<Scalar>& params) {
  double sq = 0.0;
  for (const auto& p : params) sq += static_cast<double>(p.grad.squaredNorm());
  return std::sqrt(sq);
}

/// Rescales all gradients so their global norm is at most max_norm. Returns
/// the factor applied (1 when no clipping happened).
template <typename Scalar>
double clip_global_norm(ParameterSet<Scalar>& params, double max_norm) {
  if (!(max_norm > 0.0)) throw Error("clip_global_norm: max_norm must be positive");
  const double norm = global_grad_norm(params);
  if (norm <= max_norm) return 1.0;
  const double factor = max_norm / norm;
  for (auto& p : params) p.grad *= static_cast<Scalar>(factor);
  return factor;
}

/// Plain SGD: p <- p - lr * grad, then clears the gradients.
template <typename Scalar>
void sgd_step(ParameterSet<Scalar>& params, double lr) {
  for (auto& p : params) {
    p.value -= static_cast<Scalar>(lr) * p.grad;
    p.grad.setZero();
  }
}

struct GradientCheckResult {
  double max_relative_error = 0.0;
  std::string worst_parameter;
  Eigen::Index worst_index = -1;
  std::size_t entries_checked = 0;
};

/// Compares reverse-mode gradients of `loss` with central differences over
/// every entry of every parameter. The relative error of one entry is
/// |analytic - numeric| / max(1, |analytic|, |numeric|).
///
/// `loss` records a scalar on the tape it is handed and must be
/// deterministic; two evaluations that disagree raise an Error.
template <typename Scalar>
GradientCheckResult gradient_check(ParameterSet<Scalar>& params,
                                   const std::function<Var<Scalar>(Tape<Scalar>&)>& loss,
                                   double eps = 1e-5) {
  auto evaluate = [&] {
    Tape<Scalar> t(false);
    return static_cast<double>(loss(t).scalar());
  };

  Tape<Scalar> tape;
  const auto out = loss(tape);
  const double first = static_cast<double>(out.scalar());
  if (evaluate() != first) {
    throw Error("gradient_check: loss is not deterministic (is dropout enabled?)");
  }
  params.zero_grad();
  tape.backward(out);

  GradientCheckResult result;
  for (auto& p : params) {
    const Matrix<Scalar> analytic = p.grad;
    for (Eigen::Index i = 0; i < p.value.size(); ++i) {
      const Scalar original = p.value(i);
      p.value(i) = original + static_cast<Scalar>(eps);
      const double plus = evaluate();
      p.value(i) = original - static_cast<Scalar>(eps);
      const double minus = evaluate();
      p.value(i) = original;
      const double numeric = (plus - minus) / (2.0 * eps);
      const double a = static_cast<double>(analytic(i));
      const double err =
          std::abs(a - numeric) / std::max({1.0, std::abs(a), std::abs(numeric)});
      ++result.entries_checked;
      if (result.worst_index < 0 || err > result.max_relative_error) {
        result.max_relative_error = err;
        result.worst_parameter = p.name;
        result.worst_index = i;
      }
    }
  }
  return result;
}

}  // namespace qg
