#pragma once

#include <cmath>
#include <vector>

#include "magpose/autodiff.hpp"
#include "magpose/errors.hpp"

namespace magpose {

inline constexpr double kLog2Pi = 1.8378770664093454836;

// Diagonal Gaussian over d dimensions; sigma strictly positive elementwise.
// S is double for inference and Var for taped training.
template <class S>
struct DiagGaussianT {
  std::vector<S> mu;
  std::vector<S> sigma;

  std::size_t dim() const { return mu.size(); }
};

using DiagGaussian = DiagGaussianT<double>;

// Product of Gaussian densities, renormalized: precisions add, and the mean
// is the precision-weighted average scaled by the fused variance.
template <class S>
DiagGaussianT<S> fuse_gaussians(const std::vector<DiagGaussianT<S>>& components) {
  if (components.empty()) throw DimensionMismatch("fuse_gaussians: no components");
  const std::size_t d = components[0].dim();
  for (const auto& c : components)
    if (c.dim() != d || c.sigma.size() != d)
      throw DimensionMismatch("fuse_gaussians: component dimension mismatch");

  DiagGaussianT<S> out;
  out.mu.reserve(d);
  out.sigma.reserve(d);
  for (std::size_t k = 0; k < d; ++k) {
    S prec_sum = inv(square(components[0].sigma[k]));
    S weighted = prec_sum * components[0].mu[k];
    for (std::size_t i = 1; i < components.size(); ++i) {
      const S prec = inv(square(components[i].sigma[k]));
      prec_sum = prec_sum + prec;
      weighted = weighted + prec * components[i].mu[k];
    }
    const S variance = inv(prec_sum);
    out.sigma.push_back(sqrt(variance));
    out.mu.push_back(variance * weighted);
  }
  return out;
}

// Closed-form KL(q || p) for diagonal Gaussians, summed over dimensions.
template <class S>
S kl_diag(const DiagGaussianT<S>& q, const DiagGaussianT<S>& p) {
  if (q.dim() != p.dim() || q.dim() == 0)
    throw DimensionMismatch("kl_diag: dimension mismatch");
  S total = (q.sigma[0] - q.sigma[0]);  // zero of type S on the right tape
  for (std::size_t k = 0; k < q.dim(); ++k) {
    const S ratio = square(q.sigma[k]) * inv(square(p.sigma[k]));
    const S mean_term = square(q.mu[k] - p.mu[k]) * inv(square(p.sigma[k]));
    total = total + 0.5 * (ratio + mean_term - 1.0) + log(p.sigma[k]) - log(q.sigma[k]);
  }
  return total;
}

// log N(x; mu, sigma^2) summed over dimensions, x observed (constant).
template <class S>
S gaussian_log_likelihood(const std::vector<double>& x, const DiagGaussianT<S>& g) {
  if (x.size() != g.dim() || x.empty())
    throw DimensionMismatch("gaussian_log_likelihood: dimension mismatch");
  S total = (g.mu[0] - g.mu[0]);
  for (std::size_t k = 0; k < x.size(); ++k) {
    const S standardized = (g.mu[k] - x[k]) * inv(g.sigma[k]);
    total = total - 0.5 * square(standardized) - log(g.sigma[k]) - 0.5 * kLog2Pi;
  }
  return total;
}

}  // namespace magpose
