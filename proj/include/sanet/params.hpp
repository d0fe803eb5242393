#pragma once

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "sanet/rng.hpp"
#include "sanet/tape.hpp"
#include "sanet/tensor.hpp"

namespace sanet {

enum class ParamGroup { trunk, stn, head };

inline const char* group_name(ParamGroup g) {
  switch (g) {
    case ParamGroup::trunk: return "trunk";
    case ParamGroup::stn: return "stn";
    case ParamGroup::head: return "head";
  }
  return "?";
}

inline ParamGroup parse_group(const std::string& s) {
  if (s == "trunk") return ParamGroup::trunk;
  if (s == "stn") return ParamGroup::stn;
  if (s == "head") return ParamGroup::head;
  throw std::invalid_argument("unknown parameter group: " + s);
}

template <class S>
struct ParameterT {
  std::string name;
  TensorT<S> value;
  ParamGroup group = ParamGroup::head;
};

// Ordered collection of named parameters. Order is registration order and is
// the canonical iteration order for the optimizer and the checkpoint layout.
template <class S>
class ParamStoreT {
 public:
  ParameterT<S>& add(std::string name, TensorT<S> value, ParamGroup g) {
    if (index_.count(name)) throw std::invalid_argument("duplicate parameter name: " + name);
    index_[name] = params_.size();
    params_.push_back(ParameterT<S>{std::move(name), std::move(value), g});
    return params_.back();
  }

  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  ParameterT<S>& get(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::invalid_argument("unknown parameter: " + name);
    return params_[it->second];
  }
  const ParameterT<S>& get(const std::string& name) const {
    return const_cast<ParamStoreT*>(this)->get(name);
  }

  std::vector<ParameterT<S>>& all() { return params_; }
  const std::vector<ParameterT<S>>& all() const { return params_; }
  size_t size() const { return params_.size(); }

  int64_t total_scalars() const {
    int64_t n = 0;
    for (auto& p : params_) n += p.value.numel();
    return n;
  }

  // Bind every parameter onto a tape as a named leaf.
  std::map<std::string, Var> bind(TapeT<S>& t) const {
    std::map<std::string, Var> vars;
    for (auto& p : params_) vars[p.name] = t.param(p.name, p.value);
    return vars;
  }

  // Registration-order parameter names per group; every parameter lands in
  // exactly one bucket by construction.
  std::map<ParamGroup, std::vector<std::string>> by_group() const {
    std::map<ParamGroup, std::vector<std::string>> m;
    for (auto& p : params_) m[p.group].push_back(p.name);
    return m;
  }

 private:
  std::vector<ParameterT<S>> params_;
  std::map<std::string, size_t> index_;
};

using ParamStore = ParamStoreT<float>;

// Fan-in scaled uniform init for layers followed by relu.
template <class S>
TensorT<S> he_uniform(std::vector<int> shape, int fan_in, RngStream rng) {
  TensorT<S> t(std::move(shape));
  double limit = std::sqrt(6.0 / (double)fan_in);
  for (auto& v : t.data) v = (S)rng.uniform(-limit, limit);
  return t;
}

// Symmetric fan-balanced init for linear output layers.
template <class S>
TensorT<S> glorot_uniform(std::vector<int> shape, int fan_in, int fan_out, RngStream rng) {
  TensorT<S> t(std::move(shape));
  double limit = std::sqrt(6.0 / (double)(fan_in + fan_out));
  for (auto& v : t.data) v = (S)rng.uniform(-limit, limit);
  return t;
}

// Every parameter draws from its own stream keyed by (seed, name), so adding
// or removing one parameter never changes the values any other one gets.
inline RngStream init_stream(uint64_t seed, const std::string& name) {
  return RngStream::derive(seed, "init:" + name);
}

}  // namespace sanet
