#include "doctest.h"
#include "oracles.hpp"

#include "sbwm/distributions.hpp"

#include <numbers>

using namespace sbwm;
using namespace sbwm::nk;
using namespace sbwm::dist;

namespace {

DiagGaussian gaussian(std::vector<double> mu, std::vector<double> sigma)
{
    return {Tensor::vector(std::move(mu)), Tensor::vector(std::move(sigma))};
}

} // namespace

TEST_CASE("from_raw applies softplus plus floor")
{
    auto d = from_raw(Tensor::vector({0.5, -2.0, 0.0, -1000.0}));
    CHECK(d.dim() == 2);
    CHECK(d.mu[0] == 0.5);
    CHECK(d.sigma[0] == doctest::Approx(std::log(2.0) + sigma_min));
    CHECK(d.sigma[1] >= sigma_min);
    CHECK_THROWS(from_raw(Tensor::vector({1.0, 2.0, 3.0})));
}

TEST_CASE("log_prob of a standard normal at zero")
{
    auto d = gaussian({0.0}, {1.0});
    CHECK(log_prob(d, Tensor::vector({0.0})).item() == doctest::Approx(-0.5 * std::log(2.0 * std::numbers::pi)));
}

TEST_CASE("log_prob integrates to one (quadrature)")
{
    std::mt19937_64 rng(11);
    std::uniform_real_distribution<double> u(-2.0, 2.0);
    std::uniform_real_distribution<double> s(0.2, 2.0);
    for (int i = 0; i < 10; ++i) {
        const double mu = u(rng);
        const double sigma = s(rng);
        auto d = gaussian({mu}, {sigma});
        auto density = [&](double x) { return std::exp(log_prob(d, Tensor::vector({x})).item()); };
        const double mass = oracle::simpson(density, mu - 12 * sigma, mu + 12 * sigma, 4000);
        CHECK(mass == doctest::Approx(1.0).epsilon(1e-9));
    }
}

TEST_CASE("closed-form KL matches a Monte-Carlo estimate")
{
    std::mt19937_64 rng(21);
    std::uniform_real_distribution<double> u(-1.5, 1.5);
    std::uniform_real_distribution<double> s(0.3, 2.0);
    for (int pair = 0; pair < 10; ++pair) {
        const std::size_t n = 1 + pair % 4;
        std::vector<double> mq(n), sq(n), mp(n), sp(n);
        for (std::size_t i = 0; i < n; ++i) {
            mq[i] = u(rng);
            sq[i] = s(rng);
            mp[i] = u(rng);
            sp[i] = s(rng);
        }
        const double kl = kl_divergence(gaussian(mq, sq), gaussian(mp, sp)).item();
        const auto mc = oracle::kl_monte_carlo(mq, sq, mp, sp, 100000, rng);
        CHECK(std::abs(kl - mc.mean) < 3.0 * mc.standard_error);
    }
}

TEST_CASE("KL of identical Gaussians is zero and KL is non-negative")
{
    auto p = gaussian({0.3, -1.0}, {0.5, 2.0});
    CHECK(kl_divergence(p, p).item() == doctest::Approx(0.0).epsilon(1e-15));
    auto q = gaussian({0.0, 0.0}, {1.0, 1.0});
    CHECK(kl_divergence(q, p).item() > 0.0);
    // Closed form for unit variances: 0.5 * ||mu_q - mu_p||^2.
    auto a = gaussian({1.0, 2.0}, {1.0, 1.0});
    CHECK(kl_divergence(a, q).item() == doctest::Approx(2.5));
}

TEST_CASE("batched reductions give one value per row")
{
    DiagGaussian q{Tensor::from({2, 2}, {0, 0, 1, 1}), Tensor::from({2, 2}, {1, 1, 1, 1})};
    DiagGaussian p{Tensor::from({2, 2}, {0, 0, 0, 0}), Tensor::from({2, 2}, {1, 1, 1, 1})};
    auto kl = kl_divergence(q, p);
    CHECK(kl.shape() == Shape{2});
    CHECK(kl[0] == doctest::Approx(0.0));
    CHECK(kl[1] == doctest::Approx(1.0));
}

TEST_CASE("free bits clamps at lambda and passes gradient above it")
{
    auto kl = Tensor::vector({0.3, 2.0}, true);
    Tape tape;
    TapeScope scope(tape);
    auto fb = free_bits(kl, 1.0);
    CHECK(fb[0] == 1.0);
    CHECK(fb[1] == 2.0);
    tape.backward(sum(fb));
    CHECK(kl.grad()[0] == 0.0);
    CHECK(kl.grad()[1] == 1.0);
    CHECK_THROWS(free_bits(Tensor::vector({0.1}), -1.0));
}

TEST_CASE("effective KL is at least lambda in both modes")
{
    std::mt19937_64 rng(5);
    for (int i = 0; i < 20; ++i) {
        DiagGaussian q{oracle::random_tensor({3, 4}, rng), oracle::random_tensor({3, 4}, rng, 0.3, 2.0)};
        DiagGaussian p{oracle::random_tensor({3, 4}, rng), oracle::random_tensor({3, 4}, rng, 0.3, 2.0)};
        for (auto mode : {FreeBitsMode::per_timestep, FreeBitsMode::per_dimension}) {
            auto e = effective_kl(q, p, 1.0, mode);
            auto raw = kl_divergence(q, p);
            for (std::size_t r = 0; r < 3; ++r) {
                CHECK(e[r] >= 1.0);
                CHECK(e[r] >= raw[r] - 1e-12);
            }
        }
    }
}

TEST_CASE("gradients of log_prob, KL and rsample match finite differences")
{
    std::mt19937_64 rng(9);
    for (int i = 0; i < 5; ++i) {
        auto raw_q = oracle::random_tensor({2, 6}, rng);
        auto raw_p = oracle::random_tensor({2, 6}, rng);
        auto x = oracle::random_tensor({2, 3}, rng);
        auto noise = oracle::random_tensor({2, 3}, rng);
        auto fn = [&] {
            auto q = from_raw(raw_q);
            auto p = from_raw(raw_p);
            auto z = rsample(q, noise);
            return sum(log_prob(p, x)) + sum(kl_divergence(q, p)) + sum(square(z));
        };
        auto r = oracle::gradcheck(fn, {raw_q, raw_p, x});
        CHECK(r.rel_error < 1e-6);
    }
}

TEST_CASE("validate rejects bad parameters")
{
    CHECK_NOTHROW(validate(gaussian({0.0}, {1.0})));
    CHECK_THROWS(validate(gaussian({0.0}, {0.0})));
    CHECK_THROWS(validate(gaussian({std::nan("")}, {1.0})));
    CHECK_THROWS(validate(gaussian({0.0, 1.0}, {1.0})));
}
