#pragma once

#include "sbwm/body.hpp"
#include "sbwm/data.hpp"
#include "sbwm/rollout.hpp"

#include <map>
#include <optional>

// Evaluation metrics. A pose sequence is a list of frame vectors, either
// chain parameters (manifold) or flattened joint coordinates (joint_space).
// Position metrics run forward kinematics on manifold frames and use joint
// coordinates as given otherwise.

namespace sbwm::metrics {

using Sequence = std::vector<std::vector<double>>;
using data::Representation;

/// Joint positions [3J] of one frame.
std::vector<double> joints_of(const body::BodyChain& chain, std::span<const double> frame, Representation repr);

/// Mean per-joint position error in millimeters, per frame.
std::vector<double> mpjpe_per_frame(const body::BodyChain& chain, const Sequence& predicted, const Sequence& truth,
                                    Representation repr = Representation::manifold);
/// Mean over frames and joints, millimeters.
double mpjpe(const body::BodyChain& chain, const Sequence& predicted, const Sequence& truth,
             Representation repr = Representation::manifold);

/// Mean per-joint l2 norm of the difference between order-th temporal
/// differences of joint positions (meters per frame^order).
double diff_errors(const body::BodyChain& chain, const Sequence& predicted, const Sequence& truth, int order,
                   Representation repr = Representation::manifold);

/// Mean |x_{t+1} - x_t| over consecutive frames, in the frame's own space
/// (radians and meters mixed for manifold frames).
double persistence(const Sequence& predicted);
/// Same statistic on joint positions (meters).
double joint_persistence(const body::BodyChain& chain, const Sequence& predicted,
                         Representation repr = Representation::manifold);

/// Number of trailing frames used by the freeze detector: ceil(t_pred / 3).
std::size_t freeze_frames(std::size_t t_pred);
/// Persistence over the steps into the final ceil(n/3) frames.
double terminal_persistence(const Sequence& predicted);
/// Fraction of sequences whose terminal persistence is below epsilon.
double freeze_rate(const std::vector<Sequence>& predictions, double epsilon = 1e-3);

/// {1, 5, 10, 20, 50, 100} restricted to values <= k.
std::vector<std::size_t> default_ks(std::size_t k);
/// samples[w][k] are the K predictions for window w. For each K' in `ks`,
/// the mean over windows of the minimum MPJPE among the first K' samples.
std::map<std::size_t, double> best_of_k(const body::BodyChain& chain, const std::vector<std::vector<Sequence>>& samples,
                                        const std::vector<Sequence>& truths, const std::vector<std::size_t>& ks,
                                        Representation repr = Representation::manifold);

/// Average ranks (ties share the mean rank), 1-based.
std::vector<double> ranks(std::span<const double> values);
/// Spearman rank correlation; nullopt when either side has constant ranks
/// or fewer than two pairs.
std::optional<double> spearman(std::span<const double> a, std::span<const double> b);

struct Calibration {
    std::optional<double> rho;
    std::vector<double> variance; // one entry per (window, horizon step)
    std::vector<double> error;    // MPJPE of the sample-mean pose, mm
};
/// Per (window, step): across-sample variance of joint positions (mean over
/// coordinates, unbiased) against the sample mean's MPJPE.
Calibration calibration(const body::BodyChain& chain, const std::vector<std::vector<Sequence>>& samples,
                        const std::vector<Sequence>& truths, Representation repr = Representation::manifold);

/// Frames whose joint positions violate a bone length by more than tol.
std::size_t violations(const body::BodyChain& chain, const Sequence& predicted, Representation repr, double tol = 0.01);

/// Least-squares non-decreasing fit (pool adjacent violators).
std::vector<double> isotonic_fit(std::span<const double> values);
struct Trend {
    double r2 = 0.0;  // variance explained by the isotonic fit
    double rho = 0.0; // Spearman correlation with the step index (0 if undefined)
    bool increasing = false; // fitted last value > fitted first value
};
Trend isotonic_trend(std::span<const double> values);

// --- report ------------------------------------------------------------------

struct EvalOptions {
    double freeze_epsilon = 1e-3;
    std::vector<std::size_t> ks; // empty: default_ks(K)
};

struct MetricsReport {
    std::string label;
    std::size_t windows = 0;
    std::size_t samples = 0;
    std::size_t t_pred = 0;
    std::string representation = "manifold";
    double mpjpe = 0.0;             // mm, mean over every (window, sample)
    double vel_err = 0.0;           // m/frame
    double acc_err = 0.0;           // m/frame^2
    double persistence = 0.0;       // parameter units per frame
    double joint_persistence = 0.0; // m/frame
    double freeze_rate = 0.0;
    std::map<std::size_t, double> best_of_k;
    std::optional<double> calibration_rho; // needs K >= 2
    std::size_t violations = 0;
    std::size_t diverged = 0;
    std::vector<double> mpjpe_by_horizon;    // mm, mean over windows and samples
    std::vector<double> variance_by_horizon; // mean across windows; empty for K = 1
};

/// Metrics of K traces per window against the windows' target frames.
MetricsReport evaluate(const body::BodyChain& chain, const std::vector<std::vector<rollout::RolloutTrace>>& traces,
                       const std::vector<data::Window>& windows, const EvalOptions& options = {});

std::string report_json(const MetricsReport& report);
MetricsReport report_from_json(const std::string& text);
/// Fixed columns so rows from different runs stack into one table.
std::string report_csv_header();
std::string report_csv_row(const MetricsReport& report);

} // namespace sbwm::metrics
