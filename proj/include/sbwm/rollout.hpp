#pragma once

#include "sbwm/data.hpp"
#include "sbwm/model.hpp"

#include <array>
#include <optional>

// Filtering over an observed window, then open-loop prediction.
//
// Latent models: observe frames use e_t = encode(x_t) and z_t = posterior
// mean (or a posterior sample with `sampled_filtering`); predict frames use
// e_t = 0 and z_t from the prior (sample or mean), so the encoder is never
// called after the last observation. The reported pose is the emission
// mean mu_d(h_t, z_t).
//
// Models in root-displacement form emit the root's horizontal step; traces
// hold poses with the root integrated back to absolute positions.
//
// Deterministic RNN: the pose reported at frame t is the one-step
// prediction made from h_{t-1}; prediction feeds that mean back as input.

namespace sbwm::rollout {

enum class Mode { stochastic, mean };
std::string_view to_string(Mode mode);
Mode parse_mode(std::string_view text);

enum class InterventionKind { fix_to_mean, add_delta, resample };
std::string_view to_string(InterventionKind kind);

/// Applied at one prediction step (1-based): replace z by the prior mean,
/// add a vector to the sampled z, or redraw z from an independent stream.
struct Intervention {
    std::size_t step = 1;
    InterventionKind kind = InterventionKind::fix_to_mean;
    std::vector<double> delta; // add_delta only; size Z
};

/// Parses `step:kind[:d1,d2,...]`, kind in {fix-to-mean, add-delta, resample}.
Intervention parse_intervention(std::string_view text);

struct RolloutSpec {
    std::size_t t_in = 30;
    std::size_t t_pred = 15;
    Mode mode = Mode::stochastic;
    std::size_t samples = 1;
    std::uint64_t seed = 0;
    std::optional<Intervention> intervention;
    bool sampled_filtering = false; // draw z from the posterior while observing
    bool self_embed = false;        // predict with e_t = encode(previous emission mean)
};

void validate(const RolloutSpec& spec);

enum class Phase { observe, predict };
enum class LatentSource { none, posterior_mean, posterior_sample, prior_sample, prior_mean, intervened };
std::string_view to_string(Phase phase);
std::string_view to_string(LatentSource source);

struct TraceStep {
    Phase phase = Phase::observe;
    std::vector<double> h;
    std::vector<double> z; // empty without a latent
    LatentSource source = LatentSource::none;
    std::vector<double> mu;    // emission mean in data units = reported pose
    std::vector<double> sigma; // emission std in data units
};

struct RolloutTrace {
    std::string window;
    std::size_t sample = 0;
    std::uint64_t seed = 0;
    std::vector<TraceStep> steps;
    bool diverged = false; // aborted by the divergence guard; steps are partial

    /// Emission means of the predict phase, one vector per frame.
    std::vector<std::vector<double>> predicted() const;
    std::size_t count(Phase phase) const;
};

/// Beliefs after the observation phase for N windows (batched), plus the
/// per-window observe steps.
struct Filtered {
    nk::Tensor h;                              // [N, H]
    std::vector<std::vector<TraceStep>> steps; // N x t_in
    std::vector<bool> diverged;
    std::vector<std::array<double, 2>> last_root; // root xy of the last observed frame
    nk::Tensor last_emission;                     // [N, D] last emission mean, model units
};

/// `observations[i]` holds at least t_in frames of dim D, row-major.
Filtered filter(const model::Model& model, const std::vector<std::span<const double>>& observations,
                const RolloutSpec& spec);

/// Prediction phase for every row of `filtered.h`; row i uses its own
/// generator seeded with seeds[i]. Returns one predict-only trace per row.
std::vector<RolloutTrace> simulate(const model::Model& model, const Filtered& filtered, const RolloutSpec& spec,
                                   const std::vector<std::uint64_t>& seeds);

/// Single belief, seeded with spec.seed; the root starts at the origin and
/// the previous emission is zero.
RolloutTrace simulate(const model::Model& model, std::span<const double> h, const RolloutSpec& spec);

/// K = spec.samples traces per window. Each window is filtered once; sample
/// k uses seed spec.seed + k. Windows are processed in fixed-size chunks so
/// the result does not depend on the worker count (SBWM_THREADS).
std::vector<std::vector<RolloutTrace>> rollout_batch(const model::Model& model,
                                                     const std::vector<data::Window>& windows,
                                                     const RolloutSpec& spec);

/// Worker count from SBWM_THREADS (default: hardware concurrency, min 1).
std::size_t worker_count();

/// The guard threshold on |h|.
inline constexpr double divergence_limit = 1e6;

// --- export ----------------------------------------------------------------

/// One JSON object per line, per step of every trace:
/// {"window","sample","seed","t","phase","source","h","z","mu","sigma","diverged"}
std::string traces_ndjson(const std::vector<std::vector<RolloutTrace>>& traces);
/// Reads what traces_ndjson writes.
std::vector<std::vector<RolloutTrace>> parse_traces_ndjson(const std::string& text);
/// window,sample,t,phase,x0..x{D-1} with decoded poses only.
std::string poses_csv(const std::vector<std::vector<RolloutTrace>>& traces);

void write_text(const std::filesystem::path& path, const std::string& text);
std::string read_text(const std::filesystem::path& path);

} // namespace sbwm::rollout
