#include "sma/meta/parameter_set.hpp"

#include <algorithm>
#include <cstring>

namespace sma::meta {

std::size_t ParameterSet::add(std::string name, Mat value, std::string group) {
  require(!contains(name), "ParameterSet: duplicate leaf '" + name + "'");
  leaves_.push_back({std::move(name), std::move(group), std::move(value)});
  by_name_.emplace(leaves_.back().name, leaves_.size() - 1);
  return leaves_.size() - 1;
}

void ParameterSet::remove_prefix(std::string_view prefix) {
  std::erase_if(leaves_, [&](const Leaf& l) {
    return std::string_view(l.name).substr(0, prefix.size()) == prefix;
  });
  reindex();
}

void ParameterSet::reindex() {
  by_name_.clear();
  for (std::size_t i = 0; i < leaves_.size(); ++i) by_name_[leaves_[i].name] = i;
}

bool ParameterSet::contains(std::string_view name) const {
  return by_name_.find(std::string(name)) != by_name_.end();
}

std::size_t ParameterSet::index(std::string_view name) const {
  auto it = by_name_.find(std::string(name));
  if (it == by_name_.end()) {
    throw ContractError("ParameterSet: no leaf named '" + std::string(name) + "'");
  }
  return it->second;
}

ParameterSet ParameterSet::zeros_like() const {
  ParameterSet out;
  out.leaves_.reserve(leaves_.size());
  for (const auto& l : leaves_) {
    out.leaves_.push_back({l.name, l.group, Mat::Zero(l.value.rows(), l.value.cols())});
  }
  out.by_name_ = by_name_;
  return out;
}

void ParameterSet::set_zero() {
  for (auto& l : leaves_) l.value.setZero();
}

bool ParameterSet::same_layout(const ParameterSet& other) const {
  if (other.leaves_.size() != leaves_.size()) return false;
  for (std::size_t i = 0; i < leaves_.size(); ++i) {
    const auto& a = leaves_[i];
    const auto& b = other.leaves_[i];
    if (a.name != b.name || a.value.rows() != b.value.rows() ||
        a.value.cols() != b.value.cols()) {
      return false;
    }
  }
  return true;
}

std::size_t ParameterSet::scalar_count() const {
  std::size_t n = 0;
  for (const auto& l : leaves_) n += static_cast<std::size_t>(l.value.size());
  return n;
}

double ParameterSet::squared_norm() const {
  double s = 0.0;
  for (const auto& l : leaves_) s += l.value.squaredNorm();
  return s;
}

Vec ParameterSet::flatten() const {
  Vec flat(static_cast<Eigen::Index>(scalar_count()));
  Eigen::Index off = 0;
  for (const auto& l : leaves_) {
    flat.segment(off, l.value.size()) = l.value.reshaped();
    off += l.value.size();
  }
  return flat;
}

void ParameterSet::assign_flat(const Vec& flat) {
  require(flat.size() == static_cast<Eigen::Index>(scalar_count()),
          "assign_flat: length mismatch");
  Eigen::Index off = 0;
  for (auto& l : leaves_) {
    l.value.reshaped() = flat.segment(off, l.value.size());
    off += l.value.size();
  }
}

void ParameterSet::axpy(double alpha, const ParameterSet& other) {
  require(same_layout(other), "axpy: layout mismatch");
  for (std::size_t i = 0; i < leaves_.size(); ++i) {
    leaves_[i].value += alpha * other.leaves_[i].value;
  }
}

void ParameterSet::scale(double alpha) {
  for (auto& l : leaves_) l.value *= alpha;
}

std::string ParameterSet::first_non_finite() const {
  for (const auto& l : leaves_) {
    if (!l.value.allFinite()) return l.name;
  }
  return {};
}

std::uint64_t ParameterSet::checksum(const std::vector<std::string>& groups) const {
  std::uint64_t h = 1469598103934665603ULL;
  auto mix = [&h](const void* data, std::size_t n) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= p[i];
      h *= 1099511628211ULL;
    }
  };
  for (const auto& l : leaves_) {
    if (!groups.empty() &&
        std::find(groups.begin(), groups.end(), l.group) == groups.end()) {
      continue;
    }
    mix(l.name.data(), l.name.size());
    mix(l.value.data(), sizeof(double) * static_cast<std::size_t>(l.value.size()));
  }
  return h;
}

}  // namespace sma::meta
