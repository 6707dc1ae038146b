#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "sma/common.hpp"

namespace sma::meta {

// Ordered collection of named parameter leaves. Gradients use a ParameterSet
// with identical layout (see zeros_like), so leaf indices are shared.
class ParameterSet {
 public:
  struct Leaf {
    std::string name;
    std::string group;  // "policy", "plasticity", "value", "encoder", "estimator"
    Mat value;
  };

  std::size_t add(std::string name, Mat value, std::string group);
  void remove_prefix(std::string_view prefix);

  bool contains(std::string_view name) const;
  std::size_t index(std::string_view name) const;

  Mat& operator[](std::string_view name) { return leaves_[index(name)].value; }
  const Mat& operator[](std::string_view name) const {
    return leaves_[index(name)].value;
  }
  Mat& at(std::size_t i) { return leaves_.at(i).value; }
  const Mat& at(std::size_t i) const { return leaves_.at(i).value; }

  std::size_t size() const { return leaves_.size(); }
  const std::vector<Leaf>& leaves() const { return leaves_; }
  std::vector<Leaf>& leaves() { return leaves_; }

  ParameterSet zeros_like() const;
  void set_zero();
  bool same_layout(const ParameterSet& other) const;

  std::size_t scalar_count() const;
  double squared_norm() const;
  Vec flatten() const;
  void assign_flat(const Vec& flat);

  // this += alpha * other (same layout).
  void axpy(double alpha, const ParameterSet& other);
  void scale(double alpha);

  // Name of the first leaf holding a non-finite value, or empty.
  std::string first_non_finite() const;

  // FNV-1a over names and raw value bytes of leaves in `groups` (all if empty).
  std::uint64_t checksum(const std::vector<std::string>& groups = {}) const;

 private:
  void reindex();

  std::vector<Leaf> leaves_;
  std::unordered_map<std::string, std::size_t> by_name_;
};

}  // namespace sma::meta
