#pragma once

#include "sbwm/data.hpp"
#include "sbwm/distributions.hpp"
#include "sbwm/numkit/params.hpp"

#include <atomic>
#include <memory>
#include <optional>

// Network shapes. All tensors are batched, [B, n]:
//
//   encoder    x [B,D]        -> e [B,E]
//   prior      h [B,H]        -> N(mu_p, sigma_p) over Z
//   posterior  [h, e] [B,H+E] -> N(mu_q, sigma_q) over Z
//   gru        input [e, z] (or e alone), hidden h
//   decoder    [h, z] [B,H+Z] -> N(mu_d, sigma_d) over D
//
// Every MLP is Linear-tanh-Linear-tanh-Linear with Glorot-uniform weights and
// zero biases. The GRU follows the usual reset/update/candidate layout:
//
//   r  = sigmoid(x Wx_r + bx_r + h Wh_r + bh_r)
//   u  = sigmoid(x Wx_u + bx_u + h Wh_u + bh_u)
//   n  = tanh(x Wx_n + bx_n + r * (h Wh_n + bh_n))
//   h' = (1 - u) * n + u * h

namespace sbwm::model {

enum class ModelKind { sbwm, no_latent, latent_no_feedback, deterministic_rnn };

std::string_view to_string(ModelKind kind);
/// Accepts sbwm, rnn, deterministic-rnn, no-latent, latent-no-feedback
/// (underscores also accepted).
ModelKind parse_model_kind(std::string_view text);

struct SbwmConfig {
    ModelKind kind = ModelKind::sbwm;
    std::size_t obs_dim = 54;
    std::size_t embed_dim = 64;
    std::size_t hidden_dim = 128;
    std::size_t latent_dim = 16;
    std::size_t mlp_hidden = 128;
    data::Representation representation = data::Representation::manifold;
    bool sample_h0 = false; // draw h_0 ~ N(0, I) instead of zeros
    /// RNN hidden size; 0 picks the size whose parameter count is closest
    /// to the full model at the same settings.
    std::size_t rnn_hidden_dim = 0;
    /// Frames enter the networks in root-displacement form (see data.hpp);
    /// rollouts integrate the predicted steps back to positions.
    bool root_displacement = true;
    /// Per-dimension observation standardization, x_n = (x - mean) / scale.
    /// Empty means identity. Networks see and emit standardized frames.
    std::vector<double> obs_mean;
    std::vector<double> obs_scale;
};

void validate(const SbwmConfig& config);

class Mlp {
public:
    Mlp() = default;
    Mlp(nk::ParameterSet& params, const std::string& group, std::size_t in, std::size_t hidden, std::size_t out,
        std::mt19937_64& rng);

    nk::Tensor operator()(const nk::Tensor& x) const;
    std::size_t in_dim() const { return in_; }
    std::size_t out_dim() const { return out_; }

private:
    nk::Tensor w0_, b0_, w1_, b1_, w2_, b2_;
    std::size_t in_ = 0;
    std::size_t out_ = 0;
};

class Gru {
public:
    Gru() = default;
    Gru(nk::ParameterSet& params, const std::string& group, std::size_t in, std::size_t hidden, std::mt19937_64& rng);

    nk::Tensor operator()(const nk::Tensor& h, const nk::Tensor& x) const;
    std::size_t in_dim() const { return in_; }
    std::size_t hidden_dim() const { return hidden_; }

private:
    nk::Tensor wx_, wh_, bx_, bh_;
    std::size_t in_ = 0;
    std::size_t hidden_ = 0;
};

/// One network instance of any kind. Parameters are read-only outside
/// training, so one instance may serve many rollout threads.
class Model {
public:
    Model(const SbwmConfig& config, std::uint64_t seed);

    const SbwmConfig& config() const { return config_; }
    ModelKind kind() const { return config_.kind; }
    nk::ParameterSet& params() { return params_; }
    const nk::ParameterSet& params() const { return params_; }

    /// Hidden size actually used (differs from config for the RNN, which is
    /// sized to match the full model's parameter count).
    std::size_t hidden_dim() const { return gru_.hidden_dim(); }
    std::size_t latent_dim() const { return has_latent() ? config_.latent_dim : 0; }

    bool has_latent() const;
    bool latent_feeds_belief() const;
    bool is_recurrent_baseline() const { return config_.kind == ModelKind::deterministic_rnn; }

    /// Raw frames in, embedding out.
    nk::Tensor encode(const nk::Tensor& x) const;
    /// Standardized frames in.
    nk::Tensor encode_normalized(const nk::Tensor& xn) const;
    nk::Tensor normalize(const nk::Tensor& x) const;
    /// Maps an emission mean / std in standardized units back to data units.
    nk::Tensor denormalize_mean(const nk::Tensor& mu) const;
    nk::Tensor denormalize_std(const nk::Tensor& sigma) const;
    void set_normalization(std::vector<double> mean, std::vector<double> scale);
    bool has_normalization() const { return !config_.obs_mean.empty(); }
    /// Copies `frames` (whole frames, data units) into the networks' frame
    /// form: root-displacement form when configured, not standardized.
    std::vector<double> to_model_form(std::span<const double> frames) const;
    dist::DiagGaussian prior(const nk::Tensor& h) const;
    dist::DiagGaussian posterior(const nk::Tensor& h, const nk::Tensor& e) const;
    /// `z` is ignored (may be undefined) unless the latent feeds the belief.
    nk::Tensor belief_update(const nk::Tensor& h_prev, const nk::Tensor& z, const nk::Tensor& e) const;
    /// Emission over standardized frames. The RNN ignores z and reports
    /// sigma = sigma_min.
    dist::DiagGaussian decode(const nk::Tensor& h, const nk::Tensor& z) const;

    /// The zero embedding used when no observation is available.
    nk::Tensor null_embedding(std::size_t batch) const;
    nk::Tensor initial_belief(std::size_t batch, std::mt19937_64* rng = nullptr) const;

    /// Number of rows passed through the encoder so far (diagnostics).
    std::size_t encoder_calls() const { return encoder_calls_->load(); }
    /// Rows encoded by any model on the calling thread.
    static std::size_t thread_encoder_calls();

private:
    SbwmConfig config_;
    nk::ParameterSet params_;
    Mlp encoder_;
    Gru gru_;
    Mlp prior_;
    Mlp posterior_;
    Mlp decoder_;
    std::shared_ptr<std::atomic<std::size_t>> encoder_calls_ = std::make_shared<std::atomic<std::size_t>>(0);
};

/// Builds a model of `kind`; the deterministic RNN's hidden size is chosen
/// so its parameter count is as close as possible to the full model's.
Model build_baseline(ModelKind kind, const SbwmConfig& config, std::uint64_t seed);

std::size_t parameter_count(const SbwmConfig& config);

/// d h_t / d z_t at one state, row-major [H, Z]. All zeros when z is not an
/// input of the belief update; empty for models without a latent.
std::vector<double> belief_jacobian_z(const Model& model, std::span<const double> h_prev, std::span<const double> z,
                                      std::span<const double> e);
double frobenius_norm(std::span<const double> m);

/// Manifest stored next to every checkpoint.
std::string manifest_json(const Model& model, std::uint64_t step);
SbwmConfig config_from_manifest(const std::string& text);
std::string config_to_json(const SbwmConfig& config);
SbwmConfig config_from_json(const std::string& text);

void save_model(const std::filesystem::path& checkpoint, const Model& model, std::uint64_t step);
/// Reads `<checkpoint>.json` for the configuration, then the parameters.
Model load_model(const std::filesystem::path& checkpoint);

} // namespace sbwm::model
