#pragma once

#include "sbwm/metrics.hpp"
#include "sbwm/training.hpp"

#include <iosfwd>
#include <optional>

// Run configuration, experiment drivers and the subcommands of the `sbwm`
// executable.

namespace sbwm::cli {

struct DataConfig {
    std::string path;             // dataset file; empty generates `synthetic`
    data::SyntheticSpec synthetic;
    double split_ratio = 0.8;     // fraction of sequences used for training
    std::uint64_t split_seed = 0; // fixed so every run holds out the same sequences
    std::size_t stride = 15;      // evaluation window stride; ignored when every sequence has a branch frame
};

struct RunConfig {
    model::SbwmConfig model; // obs_dim is taken from the data
    training::TrainConfig train;
    rollout::RolloutSpec rollout;
    metrics::EvalOptions eval;
    DataConfig data;
    std::uint64_t seed = 0;
    std::vector<std::uint64_t> seeds; // ablation seeds; empty: {seed}
    std::string out = "runs";
};

/// Pretty JSON with every field.
std::string config_json(const RunConfig& config);
/// Fields missing from `text` keep their defaults; unknown keys are errors.
RunConfig config_from_json(const std::string& text);
RunConfig load_config(const std::filesystem::path& path);
/// `section.key=value`; value is parsed as JSON when possible, else taken
/// as a string.
void apply_override(RunConfig& config, std::string_view assignment);
/// 16 hex digits of a hash over the configuration without seeds, model
/// kind, representation and output root.
std::string config_hash(const RunConfig& config);
void validate(const RunConfig& config);

// --- experiments -------------------------------------------------------------

struct Prepared {
    std::vector<data::MotionSequence> train;
    std::vector<data::MotionSequence> test;
    std::vector<data::Window> windows; // held-out evaluation windows
    std::vector<std::string> warnings;
};

/// Loads or generates the dataset, converts it to `repr` and splits it.
Prepared prepare_data(const RunConfig& config, data::Representation repr);
/// Evaluation windows cut from `sequences` per the config.
data::Windowed evaluation_windows(const RunConfig& config, const std::vector<data::MotionSequence>& sequences);

/// Model config for a variant, sized to the data.
model::SbwmConfig variant_config(const RunConfig& config, model::ModelKind kind, data::Representation repr,
                                 std::size_t obs_dim);

struct Variant {
    std::string name;
    model::ModelKind kind = model::ModelKind::sbwm;
    data::Representation repr = data::Representation::manifold;
};
/// sbwm, no-latent, latent-no-feedback, rnn (manifold) and sbwm-joints.
std::vector<Variant> ablation_variants();

struct VariantRun {
    model::Model model;
    training::TrainLog log;
    std::vector<std::vector<rollout::RolloutTrace>> traces;
    metrics::MetricsReport report;
};

/// Trains one variant with `seed` and evaluates it on held-out windows.
/// With a non-empty `dir` writes checkpoints, logs, traces and the report.
VariantRun run_variant(const RunConfig& config, const Variant& variant, std::uint64_t seed, const Prepared& data,
                       const std::filesystem::path& dir = {});

struct AblationRow {
    std::string variant;
    std::uint64_t seed = 0;
    std::string config_hash;
    std::string status = "ok"; // or "failed: <reason>"
    metrics::MetricsReport report;
};

std::string ablation_csv(const std::vector<AblationRow>& rows);
std::string ablation_text(const std::vector<AblationRow>& rows);

/// Latent diagnostics of a trained model.
struct Diagnostics {
    std::vector<training::TrainRecord> kl_curve; // empty without a TrainLog
    std::vector<rollout::RolloutTrace> baseline;
    std::vector<rollout::RolloutTrace> fixed_mean;
    std::vector<rollout::RolloutTrace> perturbed;
    std::size_t intervention_step = 0;
    std::vector<double> jacobian_norms; // ||dh/dz||_F at sampled states
    std::vector<std::string> warnings;
};

/// Intervention triples on the first `windows` held-out windows and
/// Jacobian norms at `states` beliefs reached by filtering then sampling.
Diagnostics diagnose(const model::Model& model, const std::optional<training::TrainLog>& log,
                     const std::vector<data::Window>& windows, const RunConfig& config, std::size_t max_windows = 8,
                     std::size_t states = 100);

// --- commands ----------------------------------------------------------------

/// Command line flags shared by the subcommands.
struct Options {
    std::string command;
    std::string config_path;
    std::vector<std::string> overrides; // --set a.b=v
    std::optional<std::uint64_t> seed;
    std::string data;
    std::string ckpt;
    std::string traces;
    std::string out;
    std::string model;
    std::string repr;
    std::optional<std::size_t> k;
    std::string mode;
    std::string intervene;
    std::vector<std::string> inputs; // table: report files
};

/// Config file, then --set overrides, then the dedicated flags.
RunConfig resolve_config(const Options& options);

/// Creates `<root>/<UTC timestamp>-seed<seed>-<tag>`, adding a numeric
/// suffix rather than reusing an existing directory.
std::filesystem::path make_run_dir(const std::filesystem::path& root, std::uint64_t seed, const std::string& tag);

/// Runs one subcommand; progress goes to `log`. Returns the exit code
/// (0 ok, 1 internal, 2 bad input) and prints `error category=... detail=...`
/// to `err` on failure.
int run(const Options& options, std::ostream& log, std::ostream& err);

int exit_code(ErrorCategory category);

} // namespace sbwm::cli
