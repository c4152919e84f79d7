#include "sbwm/distributions.hpp"

#include "sbwm/numkit/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace sbwm::dist {

namespace {

void check_same(const char* op, const nk::Tensor& a, const nk::Tensor& b)
{
    if (a.shape() != b.shape()) {
        throw nk::ShapeError(op, a.shape(), b.shape());
    }
}

} // namespace

DiagGaussian from_raw(const nk::Tensor& raw)
{
    const auto width = raw.last_dim();
    if (width % 2 != 0) {
        throw nk::ShapeError("from_raw", raw.shape(), "last axis must be even");
    }
    const auto n = width / 2;
    return {nk::slice(raw, 0, n), nk::add_scalar(nk::softplus(nk::slice(raw, n, width)), sigma_min)};
}

void validate(const DiagGaussian& d)
{
    check_same("gaussian", d.mu, d.sigma);
    for (double m : d.mu.data()) {
        if (!std::isfinite(m)) {
            throw numerical_error("gaussian: non-finite mean");
        }
    }
    for (double s : d.sigma.data()) {
        if (!std::isfinite(s) || s < sigma_min) {
            throw numerical_error("gaussian: sigma " + std::to_string(s) + " below floor or non-finite");
        }
    }
}

nk::Tensor rsample(const DiagGaussian& d, const nk::Tensor& noise)
{
    check_same("rsample", d.mu, noise);
    return nk::add(d.mu, nk::mul(d.sigma, noise));
}

nk::Tensor log_prob(const DiagGaussian& d, const nk::Tensor& x)
{
    check_same("log_prob", d.mu, x);
    const double half_log_two_pi = 0.5 * std::log(2.0 * std::numbers::pi);
    auto standardized = nk::div(nk::sub(x, d.mu), d.sigma);
    auto per_dim = nk::add_scalar(nk::add(nk::log(d.sigma), nk::scale(nk::square(standardized), 0.5)),
                                  half_log_two_pi);
    return nk::scale(nk::sum_last(per_dim), -1.0);
}

nk::Tensor kl_per_dim(const DiagGaussian& q, const DiagGaussian& p)
{
    check_same("kl_divergence", q.mu, p.mu);
    check_same("kl_divergence", q.sigma, p.sigma);
    auto log_ratio = nk::sub(nk::log(p.sigma), nk::log(q.sigma));
    auto numerator = nk::add(nk::square(q.sigma), nk::square(nk::sub(q.mu, p.mu)));
    auto quad = nk::div(numerator, nk::scale(nk::square(p.sigma), 2.0));
    return nk::add_scalar(nk::add(log_ratio, quad), -0.5);
}

nk::Tensor kl_divergence(const DiagGaussian& q, const DiagGaussian& p)
{
    return nk::sum_last(kl_per_dim(q, p));
}

nk::Tensor free_bits(const nk::Tensor& kl, double lambda)
{
    if (lambda < 0.0) {
        throw bad_input("free_bits: negative threshold " + std::to_string(lambda));
    }
    // Closed-form KL can round a hair below zero.
    for (double v : kl.data()) {
        if (v < -1e-9) {
            throw bad_input("free_bits: negative KL " + std::to_string(v));
        }
    }
    return nk::clamp_min(kl, lambda);
}

nk::Tensor effective_kl(const DiagGaussian& q, const DiagGaussian& p, double lambda, FreeBitsMode mode)
{
    if (mode == FreeBitsMode::per_timestep) {
        return free_bits(kl_divergence(q, p), lambda);
    }
    const double per_dim = lambda / static_cast<double>(q.dim());
    return nk::sum_last(free_bits(kl_per_dim(q, p), per_dim));
}

std::vector<double> standard_normal(std::size_t n, std::mt19937_64& rng)
{
    std::normal_distribution<double> normal(0.0, 1.0);
    std::vector<double> out(n);
    for (auto& v : out) {
        v = normal(rng);
    }
    return out;
}

nk::Tensor standard_normal(nk::Shape shape, std::mt19937_64& rng)
{
    const auto n = nk::element_count(shape);
    return nk::Tensor::from(std::move(shape), standard_normal(n, rng));
}

} // namespace sbwm::dist
