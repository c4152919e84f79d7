#pragma once

// Reference computations used only by the tests: central finite
// differences, Monte-Carlo estimates and simple quadrature.

#include "sbwm/numkit/ops.hpp"
#include "sbwm/numkit/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <vector>

namespace oracle {

struct GradCheck {
    double rel_error = 0.0; // ||analytic - numeric|| / max(||analytic|| + ||numeric||, 1e-12)
    double analytic_norm = 0.0;
    std::size_t elements = 0;
};

/// Compares tape gradients of `loss()` w.r.t. `leaves` with central
/// differences of step h. `loss` must rebuild the graph from the current
/// leaf values on every call.
inline GradCheck gradcheck(const std::function<sbwm::nk::Tensor()>& loss, std::vector<sbwm::nk::Tensor> leaves,
                           double h = 1e-5)
{
    using namespace sbwm::nk;
    for (auto& l : leaves) {
        l.set_requires_grad(true);
        l.clear_grad();
    }
    {
        Tape tape;
        TapeScope scope(tape);
        auto value = loss();
        tape.backward(value);
    }
    std::vector<double> analytic;
    std::vector<double> numeric;
    for (auto& l : leaves) {
        for (std::size_t i = 0; i < l.size(); ++i) {
            analytic.push_back(l.has_grad() ? l.grad()[i] : 0.0);
        }
    }
    NoGradScope no_grad;
    for (auto& l : leaves) {
        auto data = l.mutable_data();
        for (std::size_t i = 0; i < data.size(); ++i) {
            const double saved = data[i];
            data[i] = saved + h;
            const double up = loss().item();
            data[i] = saved - h;
            const double down = loss().item();
            data[i] = saved;
            numeric.push_back((up - down) / (2.0 * h));
        }
    }
    double diff = 0.0;
    double na = 0.0;
    double nn = 0.0;
    for (std::size_t i = 0; i < analytic.size(); ++i) {
        diff += (analytic[i] - numeric[i]) * (analytic[i] - numeric[i]);
        na += analytic[i] * analytic[i];
        nn += numeric[i] * numeric[i];
    }
    GradCheck out;
    out.analytic_norm = std::sqrt(na);
    out.rel_error = std::sqrt(diff) / std::max(std::sqrt(na) + std::sqrt(nn), 1e-12);
    out.elements = analytic.size();
    return out;
}

/// Tensor with entries uniform in [lo, hi].
inline sbwm::nk::Tensor random_tensor(sbwm::nk::Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0)
{
    std::uniform_real_distribution<double> u(lo, hi);
    std::vector<double> v(sbwm::nk::element_count(shape));
    for (auto& x : v) {
        x = u(rng);
    }
    return sbwm::nk::Tensor::from(std::move(shape), std::move(v));
}

/// Composite Simpson rule on [a, b] with n (even) panels.
inline double simpson(const std::function<double(double)>& f, double a, double b, int n)
{
    const double h = (b - a) / n;
    double s = f(a) + f(b);
    for (int i = 1; i < n; ++i) {
        s += f(a + i * h) * (i % 2 == 1 ? 4.0 : 2.0);
    }
    return s * h / 3.0;
}

struct MonteCarlo {
    double mean = 0.0;
    double standard_error = 0.0;
};

/// KL(q || p) between diagonal Gaussians given as (mean, std) vectors,
/// estimated as the sample mean of log q(x) - log p(x) over x ~ q.
inline MonteCarlo kl_monte_carlo(const std::vector<double>& mq, const std::vector<double>& sq,
                                 const std::vector<double>& mp, const std::vector<double>& sp, std::size_t n,
                                 std::mt19937_64& rng)
{
    std::normal_distribution<double> normal(0.0, 1.0);
    double sum = 0.0;
    double sum_sq = 0.0;
    for (std::size_t s = 0; s < n; ++s) {
        double v = 0.0;
        for (std::size_t i = 0; i < mq.size(); ++i) {
            const double eps = normal(rng);
            const double x = mq[i] + sq[i] * eps;
            const double dp = (x - mp[i]) / sp[i];
            // log q - log p; the 2 pi terms cancel.
            v += -0.5 * eps * eps - std::log(sq[i]) + 0.5 * dp * dp + std::log(sp[i]);
        }
        sum += v;
        sum_sq += v * v;
    }
    const double dn = static_cast<double>(n);
    const double mean = sum / dn;
    const double var = (sum_sq - dn * mean * mean) / (dn - 1.0);
    return {mean, std::sqrt(var / dn)};
}

/// Average ranks (ties share the mean rank), 1-based.
inline std::vector<double> ranks(const std::vector<double>& x)
{
    std::vector<std::size_t> idx(x.size());
    for (std::size_t i = 0; i < idx.size(); ++i) {
        idx[i] = i;
    }
    std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
    std::vector<double> r(x.size());
    std::size_t i = 0;
    while (i < idx.size()) {
        std::size_t j = i;
        while (j + 1 < idx.size() && x[idx[j + 1]] == x[idx[i]]) {
            ++j;
        }
        const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
        for (std::size_t k = i; k <= j; ++k) {
            r[idx[k]] = avg;
        }
        i = j + 1;
    }
    return r;
}

} // namespace oracle
