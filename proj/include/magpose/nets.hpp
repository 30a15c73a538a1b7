#pragma once

#include <string>
#include <type_traits>
#include <vector>

#include "magpose/autodiff.hpp"
#include "magpose/gaussian.hpp"
#include "magpose/params.hpp"
#include "magpose/rng.hpp"

namespace magpose {

// Fetch policies let the same forward code run untaped (double) or taped
// (Var). lift() turns observed constants into the scalar type.

struct RawFetch {
  const ParamStore& store;
  using Scalar = double;

  const std::vector<double>& operator()(const std::string& name) const {
    return store.at(name).value;
  }
  std::vector<double> lift(const std::vector<double>& x) const { return x; }
};

struct TapeFetch {
  Binding& binding;
  using Scalar = Var;

  const std::vector<Var>& operator()(const std::string& name) const {
    return binding.get(name);
  }
  std::vector<Var> lift(const std::vector<double>& x) const {
    std::vector<Var> out;
    out.reserve(x.size());
    for (double v : x) out.push_back(binding.tape().leaf(v));
    return out;
  }
};

// Registers weights/biases for a fully connected net with tanh hidden layers
// and a linear output layer. Names: <prefix>.W0, <prefix>.b0, ...
inline void register_mlp(ParamStore& store, const std::string& prefix,
                         const std::vector<int>& dims, Rng& rng) {
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
    const int fan_in = dims[l], fan_out = dims[l + 1];
    auto& w = store.create(prefix + ".W" + std::to_string(l), {fan_out, fan_in});
    init_xavier(w, fan_in, fan_out, rng);
    store.create(prefix + ".b" + std::to_string(l), {fan_out});
  }
}

template <class Fetch, class S = typename std::decay_t<Fetch>::Scalar>
std::vector<S> mlp_forward(Fetch&& fetch, const std::string& prefix,
                           const std::vector<int>& dims, std::vector<S> x) {
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
    const auto& w = fetch(prefix + ".W" + std::to_string(l));
    const auto& b = fetch(prefix + ".b" + std::to_string(l));
    x = matvec_affine(w, dims[l + 1], dims[l], x, b);
    if (l + 2 < dims.size())
      for (auto& v : x) v = tanh(v);
  }
  return x;
}

// Splits a 2d-dim head into a DiagGaussian: first half means, second half
// softplus(raw) + 1e-4 so sigma stays strictly positive.
template <class S>
DiagGaussianT<S> gaussian_head(const std::vector<S>& raw) {
  const std::size_t d = raw.size() / 2;
  DiagGaussianT<S> g;
  g.mu.assign(raw.begin(), raw.begin() + static_cast<std::ptrdiff_t>(d));
  g.sigma.reserve(d);
  for (std::size_t k = 0; k < d; ++k) g.sigma.push_back(softplus(raw[d + k]) + 1e-4);
  return g;
}

}  // namespace magpose
