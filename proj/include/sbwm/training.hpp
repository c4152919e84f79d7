#pragma once

#include "sbwm/model.hpp"

#include <filesystem>
#include <string>

namespace sbwm::training {

/// Where z comes from on scheduled-sampling steps that drop the observation.
enum class SelfLatent {
    prior,     // z ~ p(z | h), the rollout regime
    posterior, // z ~ q(z | h, e) with e withheld from the belief update
};

std::string_view to_string(SelfLatent s);
SelfLatent parse_self_latent(std::string_view text);

struct TrainConfig {
    double beta_max = 1.0;
    std::size_t kl_anneal_steps = 2000;
    double free_bits_lambda = 1.0; // nats per timestep
    dist::FreeBitsMode free_bits_mode = dist::FreeBitsMode::per_timestep;
    double vel_weight = 0.1;
    double acc_weight = 0.05;
    double tf_floor = 0.1;      // teacher-forcing probability floor
    double tf_decay_k = 1000.0; // inverse-sigmoid decay constant
    SelfLatent self_latent = SelfLatent::prior;
    std::size_t batch_size = 16;
    std::size_t window = 45;
    double learning_rate = 3e-4;
    double clip_norm = 10.0;
    std::size_t max_steps = 5000;
    std::size_t checkpoint_every = 1000; // 0: only the final checkpoint
    std::size_t log_every = 500;         // console progress cadence
    std::uint64_t seed = 0;
    /// Fit per-dimension standardization on training crops when the model
    /// has none.
    bool standardize = true;
};

void validate(const TrainConfig& cfg);

/// Linear 0 -> beta_max over kl_anneal_steps.
double beta_at(std::uint64_t step, const TrainConfig& cfg);

/// max(floor, k / (k + exp(step / k))).
double teacher_forcing_prob(std::uint64_t step, const TrainConfig& cfg);

struct TrainRecord {
    std::uint64_t step = 0;
    double loss = 0.0;
    double recon_logp = 0.0;   // per timestep; -squared error for the RNN
    double raw_kl = 0.0;       // nats per timestep
    double effective_kl = 0.0; // after free bits
    double beta = 0.0;
    double tf_prob = 0.0;
    double grad_norm = 0.0;
    double wall_time = 0.0; // seconds since training start
};

/// Per-step records; the CSV header is
/// step,loss,recon_logp,raw_kl,effective_kl,beta,tf_prob,grad_norm,wall_time
struct TrainLog {
    std::vector<TrainRecord> records;

    std::string to_csv() const;
    static TrainLog from_csv(const std::string& text);
    void save(const std::filesystem::path& path) const;
    static TrainLog load(const std::filesystem::path& path);
};

/// Fixed randomness for one objective evaluation: which (row, t) pairs see
/// the observation, and the standard-normal draws for z.
struct StepPlan {
    std::vector<std::uint8_t> teacher; // [B * T], row-major
    std::vector<nk::Tensor> noise;     // T tensors of [B, Z]; empty for models without z
};

StepPlan make_plan(const model::Model& model, std::size_t batch, std::size_t length, double tf_prob,
                   std::mt19937_64& rng);

struct Objective {
    nk::Tensor loss; // scalar, minimized
    double recon_logp = 0.0;
    double raw_kl = 0.0;
    double effective_kl = 0.0;
};

/// Negated, (B*T)-normalized training objective for a batch of crops
/// ([B][T*D] values). Deterministic given the plan; records on the active
/// tape if any.
Objective objective(const model::Model& model, const std::vector<std::vector<double>>& batch, const StepPlan& plan,
                    double beta, const TrainConfig& cfg);

/// One Adam step. Throws a numerical error (nothing updated) if the loss is
/// not finite.
TrainRecord elbo_step(model::Model& model, nk::AdamState& adam, const std::vector<std::vector<double>>& batch,
                      std::uint64_t step, const TrainConfig& cfg, std::mt19937_64& rng);

/// Mean and scale per dimension over `crops` random training crops in the
/// model's frame form; the scale is floored at `min_scale`.
std::pair<std::vector<double>, std::vector<double>> fit_normalization(
    const model::Model& model, const std::vector<data::MotionSequence>& sequences, std::size_t window, std::uint64_t seed,
    std::size_t crops = 256, double min_scale = 1e-2);

/// Trains from scratch on random crops. With a non-empty `out_dir` writes
/// checkpoints `step-<n>.ckpt` every checkpoint_every steps, the final
/// `model.ckpt` (each with a `.json` manifest) and `train_log.csv`.
TrainLog train(model::Model& model, const std::vector<data::MotionSequence>& sequences, const TrainConfig& cfg,
               const std::filesystem::path& out_dir = {});

} // namespace sbwm::training
