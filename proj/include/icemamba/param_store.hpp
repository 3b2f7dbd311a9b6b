#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "icemamba/tensor.hpp"

namespace icemamba {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// Named trainable parameters in registration order, with Adam moments.
template <class T>
class ParamStore {
 public:
  struct Entry {
    std::string name;
    Tensor<T> value;
    std::vector<T> first_moment;
    std::vector<T> second_moment;
  };

  Tensor<T> add(const std::string& name, Shape shape, std::vector<T> init) {
    if (index_.contains(name)) throw ContractError("duplicate parameter '" + name + "'");
    auto t = Tensor<T>::from(std::move(shape), std::move(init), true);
    index_[name] = entries_.size();
    entries_.push_back({name, t, std::vector<T>(t.size(), T(0)), std::vector<T>(t.size(), T(0))});
    return t;
  }

  const Tensor<T>& get(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ContractError("unknown parameter '" + name + "'");
    return entries_[it->second].value;
  }

  bool contains(const std::string& name) const { return index_.contains(name); }
  std::size_t size() const { return entries_.size(); }
  const std::vector<Entry>& entries() const { return entries_; }
  std::vector<Entry>& entries() { return entries_; }
  std::uint64_t step() const { return step_; }
  void set_step(std::uint64_t s) { step_ = s; }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& e : entries_) n += e.value.size();
    return n;
  }

  /// Gives every parameter a gradient buffer; untouched ones become zeros.
  void ensure_grads() {
    for (auto& e : entries_) e.value.mutable_grad();
  }

  void zero_grads() {
    for (auto& e : entries_) e.value.zero_grad();
  }

  /// Snapshot of all parameter values, in registration order.
  std::vector<std::vector<T>> snapshot() const {
    std::vector<std::vector<T>> out;
    out.reserve(entries_.size());
    for (const auto& e : entries_) out.emplace_back(e.value.values().begin(), e.value.values().end());
    return out;
  }

  void restore(const std::vector<std::vector<T>>& values) {
    if (values.size() != entries_.size()) throw ContractError("snapshot does not match store");
    for (std::size_t i = 0; i < entries_.size(); ++i) {
      auto dst = entries_[i].value.mutable_values();
      if (values[i].size() != dst.size()) throw ContractError("snapshot shape mismatch");
      std::copy(values[i].begin(), values[i].end(), dst.begin());
    }
  }

 private:
  std::vector<Entry> entries_;
  std::map<std::string, std::size_t> index_;
  std::uint64_t step_ = 0;
};

/// Bias-corrected Adam step over every parameter; clears gradients.
template <class T>
void adam_update(ParamStore<T>& store, double lr, const AdamConfig& cfg = {}) {
  if (!(lr > 0.0)) throw ContractError("adam_update: learning rate must be positive");
  store.set_step(store.step() + 1);
  const double t = static_cast<double>(store.step());
  const double c1 = 1.0 - std::pow(cfg.beta1, t);
  const double c2 = 1.0 - std::pow(cfg.beta2, t);
  for (auto& e : store.entries()) {
    if (!e.value.has_grad()) continue;
    auto p = e.value.mutable_values();
    const auto g = e.value.grad();
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double gi = static_cast<double>(g[i]);
      const double m = cfg.beta1 * static_cast<double>(e.first_moment[i]) + (1.0 - cfg.beta1) * gi;
      const double v = cfg.beta2 * static_cast<double>(e.second_moment[i]) + (1.0 - cfg.beta2) * gi * gi;
      e.first_moment[i] = static_cast<T>(m);
      e.second_moment[i] = static_cast<T>(v);
      const double update = lr * (m / c1) / (std::sqrt(v / c2) + cfg.epsilon);
      p[i] = static_cast<T>(static_cast<double>(p[i]) - update);
    }
    e.value.zero_grad();
  }
}

/// Normal(0, std) resampled until it falls within two standard deviations.
template <class T>
std::vector<T> truncated_normal(std::size_t n, double std, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, 1.0);
  std::vector<T> out(n);
  for (auto& v : out) {
    double z;
    do z = dist(rng); while (std::abs(z) > 2.0);
    v = static_cast<T>(z * std);
  }
  return out;
}

template <class T>
std::vector<T> uniform_values(std::size_t n, double bound, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  std::vector<T> out(n);
  for (auto& v : out) v = static_cast<T>(dist(rng));
  return out;
}

}  // namespace icemamba
