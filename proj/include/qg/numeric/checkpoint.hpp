#pragma once

#include <map>
#include <string>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "qg/numeric/tensor.hpp"

namespace qg {

/// Parameter values plus a free-form JSON header.
///
/// On-disk layout (little-endian):
///   "QGCKPT" u16 version
///   u64 header byte length, header JSON text
///   u64 tensor count, then per tensor:
///     u32 name length, name bytes, u64 rows, u64 cols, rows*cols float64 row-major
struct Checkpoint {
  static constexpr std::uint16_t kVersion = 1;

  nlohmann::json header = nlohmann::json::object();
  std::map<std::string, Eigen::MatrixXd> tensors;

  void save(const std::string& path) const;
  static Checkpoint load(const std::string& path);

  template <typename Scalar>
  void capture(const ParameterSet<Scalar>& params) {
    tensors.clear();
    for (const auto& p : params) tensors.emplace(p.name, p.value.template cast<double>());
  }

  /// Overwrites parameter values; names and shapes must match exactly.
  template <typename Scalar>
  void restore(ParameterSet<Scalar>& params) const {
    if (tensors.size() != params.size()) {
      throw FormatError("checkpoint holds " + std::to_string(tensors.size()) +
                        " tensors, model expects " + std::to_string(params.size()));
    }
    for (auto& p : params) {
      const auto it = tensors.find(p.name);
      if (it == tensors.end()) throw FormatError("checkpoint lacks parameter " + p.name);
      if (it->second.rows() != p.value.rows() || it->second.cols() != p.value.cols()) {
        throw FormatError("checkpoint shape " + shape_string(it->second) + " for " + p.name +
                          " does not match " + shape_string(p.value));
      }
      p.value = it->second.template cast<Scalar>();
      p.grad.setZero();
    }
  }
};

}  // namespace qg
