#pragma once

#include "sbwm/numkit/tensor.hpp"

#include <random>
#include <vector>

namespace sbwm::dist {

/// Floor added after softplus wherever a standard deviation is produced.
inline constexpr double sigma_min = 1e-4;

/// Diagonal Gaussian; `mu` and `sigma` share a shape, [n] or [batch, n].
/// Reductions run over the last axis, so batched inputs yield one value per
/// row.
struct DiagGaussian {
    nk::Tensor mu;
    nk::Tensor sigma;

    std::size_t dim() const { return mu.last_dim(); }
};

/// Splits a head output [.., 2n] into mean and std (softplus + sigma_min).
DiagGaussian from_raw(const nk::Tensor& raw);

/// Throws unless shapes agree, values are finite and sigma >= sigma_min.
void validate(const DiagGaussian& d);

/// mu + sigma * noise, differentiable in mu and sigma.
nk::Tensor rsample(const DiagGaussian& d, const nk::Tensor& noise);

nk::Tensor log_prob(const DiagGaussian& d, const nk::Tensor& x);

nk::Tensor kl_divergence(const DiagGaussian& q, const DiagGaussian& p);
nk::Tensor kl_per_dim(const DiagGaussian& q, const DiagGaussian& p);

/// max(kl, lambda) elementwise; no gradient below the threshold.
nk::Tensor free_bits(const nk::Tensor& kl, double lambda);

enum class FreeBitsMode {
    per_timestep,  // clamp the summed KL of each step at lambda
    per_dimension, // clamp each latent dimension at lambda / n, then sum
};

nk::Tensor effective_kl(const DiagGaussian& q, const DiagGaussian& p, double lambda, FreeBitsMode mode);

std::vector<double> standard_normal(std::size_t n, std::mt19937_64& rng);
nk::Tensor standard_normal(nk::Shape shape, std::mt19937_64& rng);

} // namespace sbwm::dist
