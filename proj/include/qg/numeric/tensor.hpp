#pragma once

#include <cstddef>
#include <deque>
#include <string>
#include <unordered_map>

#include <Eigen/Dense>

#include "qg/error.hpp"

namespace qg {

template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

inline std::string shape_string(Eigen::Index rows, Eigen::Index cols) {
  return "[" + std::to_string(rows) + "x" + std::to_string(cols) + "]";
}

template <typename Derived>
std::string shape_string(const Eigen::EigenBase<Derived>& m) {
  return shape_string(m.rows(), m.cols());
}

/// A named trainable matrix and its gradient accumulator.
template <typename Scalar>
struct Parameter {
  std::string name;
  Matrix<Scalar> value;
  Matrix<Scalar> grad;

  Parameter(std::string n, Matrix<Scalar> v)
      : name(std::move(n)), value(std::move(v)), grad(Matrix<Scalar>::Zero(value.rows(), value.cols())) {}

  void zero_grad() { grad.setZero(); }
};

/// Insertion-ordered parameter registry with stable element addresses.
template <typename Scalar>
class ParameterSet {
 public:
  using value_type = Parameter<Scalar>;

  ParameterSet() = default;
  ParameterSet(const ParameterSet& other) : items_(other.items_) { reindex(); }
  ParameterSet& operator=(const ParameterSet& other) {
    items_ = other.items_;
    reindex();
    return *this;
  }
  ParameterSet(ParameterSet&&) noexcept = default;
  ParameterSet& operator=(ParameterSet&&) noexcept = default;

  Parameter<Scalar>& add(std::string name, Matrix<Scalar> init) {
    if (index_.contains(name)) throw Error("duplicate parameter name: " + name);
    index_.emplace(name, items_.size());
    return items_.emplace_back(std::move(name), std::move(init));
  }

  Parameter<Scalar>& at(const std::string& name) {
    const auto it = index_.find(name);
    if (it == index_.end()) throw Error("unknown parameter: " + name);
    return items_[it->second];
  }
  const Parameter<Scalar>& at(const std::string& name) const {
    return const_cast<ParameterSet*>(this)->at(name);
  }
  bool contains(const std::string& name) const { return index_.contains(name); }

  std::size_t size() const { return items_.size(); }
  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& p : items_) n += static_cast<std::size_t>(p.value.size());
    return n;
  }

  void zero_grad() {
    for (auto& p : items_) p.zero_grad();
  }

  auto begin() { return items_.begin(); }
  auto end() { return items_.end(); }
  auto begin() const { return items_.begin(); }
  auto end() const { return items_.end(); }

 private:
  void reindex() {
    index_.clear();
    for (std::size_t i = 0; i < items_.size(); ++i) index_.emplace(items_[i].name, i);
  }

  std::deque<Parameter<Scalar>> items_;
  std::unordered_map<std::string, std::size_t> index_;
};

}  // namespace qg
