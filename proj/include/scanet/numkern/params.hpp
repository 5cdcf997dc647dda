#pragma once

#include <cmath>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "scanet/digest.hpp"
#include "scanet/error.hpp"
#include "scanet/numkern/tensor.hpp"
#include "scanet/rng.hpp"

namespace scanet::nk {

/// Named trainable leaves in registration order.
class ParamStore {
 public:
  Tensor add(const std::string& name, Array init) {
    if (index_.count(name)) throw ConfigError("duplicate parameter '" + name + "'");
    Tensor t(std::move(init), true);
    t.zero_grad();
    index_[name] = entries_.size();
    entries_.emplace_back(name, t);
    return t;
  }

  const Tensor& get(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw LookupError("no parameter '" + name + "'");
    return entries_[it->second].second;
  }

  bool contains(const std::string& name) const { return index_.count(name) > 0; }

  const std::vector<std::pair<std::string, Tensor>>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }

  std::size_t numel() const {
    std::size_t n = 0;
    for (const auto& [name, t] : entries_) n += t.numel();
    return n;
  }

  void zero_grad() {
    for (auto& [name, t] : entries_) t.zero_grad();
  }

  /// Hash of names, shapes and values.
  std::string digest() const {
    Fnv1a h;
    for (const auto& [name, t] : entries_) {
      h.update(name);
      const double shape[2] = {static_cast<double>(t.rows()), static_cast<double>(t.cols())};
      h.update(std::span<const double>(shape, 2));
      h.update(t.value().values());
    }
    return h.hex();
  }

 private:
  std::vector<std::pair<std::string, Tensor>> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

inline Array normal_array(std::size_t rows, std::size_t cols, double stddev, Rng& rng) {
  Array a(rows, cols);
  for (auto& x : a.values()) x = stddev * rng.normal();
  return a;
}

/// N(0, 1/fan_in) weights for a [fan_in x fan_out] projection.
inline Array fan_in_init(std::size_t fan_in, std::size_t fan_out, Rng& rng, double gain = 1.0) {
  return normal_array(fan_in, fan_out, gain / std::sqrt(static_cast<double>(fan_in)), rng);
}

}  // namespace scanet::nk
