#include "sbwm/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace sbwm::metrics {

namespace {

void check_lengths(const Sequence& a, const Sequence& b, const char* what)
{
    if (a.size() != b.size()) {
        throw bad_input(std::string(what) + ": length mismatch, predicted " + std::to_string(a.size()) +
                        " frames, truth " + std::to_string(b.size()));
    }
    for (std::size_t t = 0; t < a.size(); ++t) {
        if (a[t].size() != b[t].size()) {
            throw bad_input(std::string(what) + ": frame " + std::to_string(t) + " dimension mismatch");
        }
    }
}

double norm_diff(std::span<const double> a, std::span<const double> b)
{
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        s += d * d;
    }
    return std::sqrt(s);
}

Sequence positions(const body::BodyChain& chain, const Sequence& seq, Representation repr)
{
    Sequence out;
    out.reserve(seq.size());
    for (const auto& f : seq) {
        out.push_back(joints_of(chain, f, repr));
    }
    return out;
}

// Mean over joints of the Euclidean distance between two [3J] vectors.
double joint_distance(std::span<const double> a, std::span<const double> b)
{
    const std::size_t J = a.size() / 3;
    double s = 0.0;
    for (std::size_t j = 0; j < J; ++j) {
        s += norm_diff(a.subspan(3 * j, 3), b.subspan(3 * j, 3));
    }
    return s / static_cast<double>(J);
}

Sequence differences(const Sequence& seq, int order)
{
    Sequence cur = seq;
    for (int o = 0; o < order; ++o) {
        Sequence next;
        for (std::size_t t = 1; t < cur.size(); ++t) {
            std::vector<double> d(cur[t].size());
            for (std::size_t i = 0; i < d.size(); ++i) {
                d[i] = cur[t][i] - cur[t - 1][i];
            }
            next.push_back(std::move(d));
        }
        cur = std::move(next);
    }
    return cur;
}

double mean_delta(const Sequence& seq, std::size_t from)
{
    double s = 0.0;
    std::size_t n = 0;
    for (std::size_t t = std::max<std::size_t>(from, 1); t < seq.size(); ++t) {
        s += norm_diff(seq[t], seq[t - 1]);
        ++n;
    }
    return n == 0 ? 0.0 : s / static_cast<double>(n);
}

} // namespace

std::vector<double> joints_of(const body::BodyChain& chain, std::span<const double> frame, Representation repr)
{
    if (repr == Representation::joint_space) {
        if (frame.size() != chain.joint_space_dim()) {
            throw bad_input("joint-space frame has " + std::to_string(frame.size()) + " values, chain needs " +
                            std::to_string(chain.joint_space_dim()));
        }
        return {frame.begin(), frame.end()};
    }
    return body::forward_kinematics(chain, frame);
}

std::vector<double> mpjpe_per_frame(const body::BodyChain& chain, const Sequence& predicted, const Sequence& truth,
                                    Representation repr)
{
    check_lengths(predicted, truth, "mpjpe");
    std::vector<double> out;
    out.reserve(predicted.size());
    for (std::size_t t = 0; t < predicted.size(); ++t) {
        out.push_back(1000.0 *
                      joint_distance(joints_of(chain, predicted[t], repr), joints_of(chain, truth[t], repr)));
    }
    return out;
}

double mpjpe(const body::BodyChain& chain, const Sequence& predicted, const Sequence& truth, Representation repr)
{
    const auto per = mpjpe_per_frame(chain, predicted, truth, repr);
    if (per.empty()) {
        throw bad_input("mpjpe: empty sequence");
    }
    return std::accumulate(per.begin(), per.end(), 0.0) / static_cast<double>(per.size());
}

double diff_errors(const body::BodyChain& chain, const Sequence& predicted, const Sequence& truth, int order,
                   Representation repr)
{
    if (order != 1 && order != 2) {
        throw bad_input("diff_errors: order must be 1 or 2");
    }
    check_lengths(predicted, truth, "diff_errors");
    if (predicted.size() < static_cast<std::size_t>(order) + 1) {
        throw bad_input("diff_errors: need at least " + std::to_string(order + 1) + " frames");
    }
    const auto dp = differences(positions(chain, predicted, repr), order);
    const auto dt = differences(positions(chain, truth, repr), order);
    double s = 0.0;
    for (std::size_t t = 0; t < dp.size(); ++t) {
        s += joint_distance(dp[t], dt[t]);
    }
    return s / static_cast<double>(dp.size());
}

double persistence(const Sequence& predicted)
{
    return mean_delta(predicted, 1);
}

double joint_persistence(const body::BodyChain& chain, const Sequence& predicted, Representation repr)
{
    const auto p = positions(chain, predicted, repr);
    double s = 0.0;
    for (std::size_t t = 1; t < p.size(); ++t) {
        s += joint_distance(p[t], p[t - 1]);
    }
    return p.size() < 2 ? 0.0 : s / static_cast<double>(p.size() - 1);
}

std::size_t freeze_frames(std::size_t t_pred)
{
    return (t_pred + 2) / 3;
}

double terminal_persistence(const Sequence& predicted)
{
    const std::size_t n = predicted.size();
    return mean_delta(predicted, n - std::min(n, freeze_frames(n)));
}

double freeze_rate(const std::vector<Sequence>& predictions, double epsilon)
{
    if (!(epsilon > 0.0)) {
        throw bad_input("freeze_rate: epsilon must be positive");
    }
    if (predictions.empty()) {
        return 0.0;
    }
    std::size_t frozen = 0;
    for (const auto& p : predictions) {
        frozen += terminal_persistence(p) < epsilon ? 1 : 0;
    }
    return static_cast<double>(frozen) / static_cast<double>(predictions.size());
}

std::vector<std::size_t> default_ks(std::size_t k)
{
    std::vector<std::size_t> out;
    for (std::size_t v : {1, 5, 10, 20, 50, 100}) {
        if (v <= k) {
            out.push_back(v);
        }
    }
    return out;
}

std::map<std::size_t, double> best_of_k(const body::BodyChain& chain, const std::vector<std::vector<Sequence>>& samples,
                                        const std::vector<Sequence>& truths, const std::vector<std::size_t>& ks,
                                        Representation repr)
{
    if (samples.size() != truths.size() || samples.empty()) {
        throw bad_input("best_of_k: need one truth per window and at least one window");
    }
    std::size_t kmax = 0;
    for (auto k : ks) {
        if (k == 0) {
            throw bad_input("best_of_k: K' must be >= 1");
        }
        kmax = std::max(kmax, k);
    }
    std::vector<std::size_t> sorted = ks;
    std::sort(sorted.begin(), sorted.end());
    sorted.erase(std::unique(sorted.begin(), sorted.end()), sorted.end());
    std::map<std::size_t, double> out;
    for (auto k : sorted) {
        out[k] = 0.0;
    }
    for (std::size_t w = 0; w < samples.size(); ++w) {
        if (samples[w].size() < kmax) {
            throw bad_input("best_of_k: window " + std::to_string(w) + " has " + std::to_string(samples[w].size()) +
                            " samples, K'=" + std::to_string(kmax) + " requested");
        }
        double best = std::numeric_limits<double>::infinity();
        std::size_t next = 0;
        for (std::size_t k = 0; k < kmax; ++k) {
            best = std::min(best, mpjpe(chain, samples[w][k], truths[w], repr));
            while (next < sorted.size() && sorted[next] == k + 1) {
                out[sorted[next]] += best;
                ++next;
            }
        }
    }
    for (auto& [k, v] : out) {
        v /= static_cast<double>(samples.size());
    }
    return out;
}

std::vector<double> ranks(std::span<const double> values)
{
    std::vector<std::size_t> idx(values.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(), [&](auto a, auto b) { return values[a] < values[b]; });
    std::vector<double> r(values.size());
    for (std::size_t i = 0; i < idx.size();) {
        std::size_t j = i;
        while (j + 1 < idx.size() && values[idx[j + 1]] == values[idx[i]]) {
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

std::optional<double> spearman(std::span<const double> a, std::span<const double> b)
{
    if (a.size() != b.size()) {
        throw bad_input("spearman: sizes differ");
    }
    if (a.size() < 2) {
        return std::nullopt;
    }
    const auto ra = ranks(a);
    const auto rb = ranks(b);
    const double n = static_cast<double>(a.size());
    const double ma = std::accumulate(ra.begin(), ra.end(), 0.0) / n;
    const double mb = std::accumulate(rb.begin(), rb.end(), 0.0) / n;
    double sab = 0.0;
    double saa = 0.0;
    double sbb = 0.0;
    for (std::size_t i = 0; i < ra.size(); ++i) {
        sab += (ra[i] - ma) * (rb[i] - mb);
        saa += (ra[i] - ma) * (ra[i] - ma);
        sbb += (rb[i] - mb) * (rb[i] - mb);
    }
    if (saa == 0.0 || sbb == 0.0) {
        return std::nullopt;
    }
    return sab / std::sqrt(saa * sbb);
}

Calibration calibration(const body::BodyChain& chain, const std::vector<std::vector<Sequence>>& samples,
                        const std::vector<Sequence>& truths, Representation repr)
{
    if (samples.size() != truths.size()) {
        throw bad_input("calibration: need one truth per window");
    }
    Calibration out;
    for (std::size_t w = 0; w < samples.size(); ++w) {
        const std::size_t K = samples[w].size();
        if (K < 2) {
            throw bad_input("calibration: needs K >= 2 samples per window");
        }
        std::vector<Sequence> pos;
        for (const auto& s : samples[w]) {
            check_lengths(s, truths[w], "calibration");
            pos.push_back(positions(chain, s, repr));
        }
        for (std::size_t t = 0; t < truths[w].size(); ++t) {
            const std::size_t n = pos[0][t].size();
            std::vector<double> mean(n, 0.0);
            for (const auto& p : pos) {
                for (std::size_t i = 0; i < n; ++i) {
                    mean[i] += p[t][i];
                }
            }
            for (auto& m : mean) {
                m /= static_cast<double>(K);
            }
            double var = 0.0;
            for (const auto& p : pos) {
                for (std::size_t i = 0; i < n; ++i) {
                    var += (p[t][i] - mean[i]) * (p[t][i] - mean[i]);
                }
            }
            out.variance.push_back(var / static_cast<double>((K - 1) * n));
            out.error.push_back(1000.0 * joint_distance(mean, joints_of(chain, truths[w][t], repr)));
        }
    }
    out.rho = spearman(out.variance, out.error);
    return out;
}

std::size_t violations(const body::BodyChain& chain, const Sequence& predicted, Representation repr, double tol)
{
    std::size_t n = 0;
    for (const auto& f : predicted) {
        n += body::bone_length_violations(chain, joints_of(chain, f, repr), tol) > 0 ? 1 : 0;
    }
    return n;
}

std::vector<double> isotonic_fit(std::span<const double> values)
{
    // Blocks of (mean, weight), merged while they violate the order.
    std::vector<double> mean;
    std::vector<std::size_t> weight;
    for (double v : values) {
        mean.push_back(v);
        weight.push_back(1);
        while (mean.size() > 1 && mean[mean.size() - 2] > mean.back()) {
            const std::size_t w = weight.back() + weight[weight.size() - 2];
            const double m = (mean.back() * static_cast<double>(weight.back()) +
                              mean[mean.size() - 2] * static_cast<double>(weight[weight.size() - 2])) /
                             static_cast<double>(w);
            mean.pop_back();
            weight.pop_back();
            mean.back() = m;
            weight.back() = w;
        }
    }
    std::vector<double> out;
    out.reserve(values.size());
    for (std::size_t b = 0; b < mean.size(); ++b) {
        out.insert(out.end(), weight[b], mean[b]);
    }
    return out;
}

Trend isotonic_trend(std::span<const double> values)
{
    Trend t;
    if (values.size() < 2) {
        return t;
    }
    const auto fit = isotonic_fit(values);
    const double m = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
    double ss_tot = 0.0;
    double ss_res = 0.0;
    for (std::size_t i = 0; i < values.size(); ++i) {
        ss_tot += (values[i] - m) * (values[i] - m);
        ss_res += (values[i] - fit[i]) * (values[i] - fit[i]);
    }
    t.r2 = ss_tot == 0.0 ? 0.0 : 1.0 - ss_res / ss_tot;
    std::vector<double> idx(values.size());
    std::iota(idx.begin(), idx.end(), 0.0);
    t.rho = spearman(idx, values).value_or(0.0);
    t.increasing = fit.back() > fit.front();
    return t;
}

} // namespace sbwm::metrics
