#include "sbwm/model.hpp"

#include "sbwm/numkit/checkpoint.hpp"
#include "sbwm/numkit/ops.hpp"

#include "json.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

namespace sbwm::model {

using nk::Tensor;

namespace {

std::size_t mlp_count(std::size_t in, std::size_t hid, std::size_t out)
{
    return in * hid + hid + hid * hid + hid + hid * out + out;
}

std::size_t gru_count(std::size_t in, std::size_t h)
{
    return in * 3 * h + h * 3 * h + 6 * h;
}

void check_batch(const char* op, const Tensor& t, std::size_t width)
{
    if (!t.defined() || t.rank() != 2 || t.dim(1) != width) {
        throw nk::ShapeError(op, t.defined() ? t.shape() : nk::Shape{},
                             "expected [batch, " + std::to_string(width) + "]");
    }
}

std::size_t matched_rnn_hidden(const SbwmConfig& config)
{
    SbwmConfig full = config;
    full.kind = ModelKind::sbwm;
    const auto target = static_cast<double>(parameter_count(full));
    std::size_t best = 1;
    double best_gap = INFINITY;
    for (std::size_t h = 1; h <= 8 * config.hidden_dim + 64; ++h) {
        SbwmConfig rnn = config;
        rnn.kind = ModelKind::deterministic_rnn;
        rnn.rnn_hidden_dim = h;
        const double gap = std::abs(static_cast<double>(parameter_count(rnn)) - target);
        if (gap < best_gap) {
            best_gap = gap;
            best = h;
        }
    }
    return best;
}

} // namespace

std::string_view to_string(ModelKind kind)
{
    switch (kind) {
    case ModelKind::sbwm:
        return "sbwm";
    case ModelKind::no_latent:
        return "no-latent";
    case ModelKind::latent_no_feedback:
        return "latent-no-feedback";
    case ModelKind::deterministic_rnn:
        return "rnn";
    }
    return "sbwm";
}

ModelKind parse_model_kind(std::string_view text)
{
    std::string s(text);
    for (auto& c : s) {
        if (c == '_') {
            c = '-';
        }
    }
    if (s == "sbwm") {
        return ModelKind::sbwm;
    }
    if (s == "rnn" || s == "deterministic-rnn") {
        return ModelKind::deterministic_rnn;
    }
    if (s == "no-latent") {
        return ModelKind::no_latent;
    }
    if (s == "latent-no-feedback") {
        return ModelKind::latent_no_feedback;
    }
    throw bad_input("unknown model kind '" + std::string(text) + "'");
}

void validate(const SbwmConfig& c)
{
    if (c.obs_dim == 0 || c.embed_dim == 0 || c.hidden_dim == 0 || c.latent_dim == 0 || c.mlp_hidden == 0) {
        throw bad_input("model config: all dimensions must be >= 1");
    }
    if (c.obs_mean.size() != c.obs_scale.size() || (!c.obs_mean.empty() && c.obs_mean.size() != c.obs_dim)) {
        throw bad_input("model config: normalization needs " + std::to_string(c.obs_dim) + " means and scales");
    }
    for (std::size_t i = 0; i < c.obs_scale.size(); ++i) {
        if (!(c.obs_scale[i] > 0.0) || !std::isfinite(c.obs_scale[i]) || !std::isfinite(c.obs_mean[i])) {
            throw bad_input("model config: normalization scale must be positive and finite");
        }
    }
}

Mlp::Mlp(nk::ParameterSet& params, const std::string& group, std::size_t in, std::size_t hidden, std::size_t out,
         std::mt19937_64& rng)
    : in_(in), out_(out)
{
    w0_ = params.add(group + ".w0", nk::glorot_uniform(in, hidden, rng));
    b0_ = params.add(group + ".b0", Tensor::zeros({hidden}));
    w1_ = params.add(group + ".w1", nk::glorot_uniform(hidden, hidden, rng));
    b1_ = params.add(group + ".b1", Tensor::zeros({hidden}));
    w2_ = params.add(group + ".w2", nk::glorot_uniform(hidden, out, rng));
    b2_ = params.add(group + ".b2", Tensor::zeros({out}));
}

Tensor Mlp::operator()(const Tensor& x) const
{
    auto a = nk::tanh(nk::matmul(x, w0_) + b0_);
    auto b = nk::tanh(nk::matmul(a, w1_) + b1_);
    return nk::matmul(b, w2_) + b2_;
}

Gru::Gru(nk::ParameterSet& params, const std::string& group, std::size_t in, std::size_t hidden, std::mt19937_64& rng)
    : in_(in), hidden_(hidden)
{
    wx_ = params.add(group + ".wx", nk::glorot_uniform(in, 3 * hidden, rng));
    wh_ = params.add(group + ".wh", nk::glorot_uniform(hidden, 3 * hidden, rng));
    bx_ = params.add(group + ".bx", Tensor::zeros({3 * hidden}));
    bh_ = params.add(group + ".bh", Tensor::zeros({3 * hidden}));
}

Tensor Gru::operator()(const Tensor& h, const Tensor& x) const
{
    const std::size_t H = hidden_;
    auto gx = nk::matmul(x, wx_) + bx_;
    auto gh = nk::matmul(h, wh_) + bh_;
    auto r = nk::sigmoid(nk::slice(gx, 0, H) + nk::slice(gh, 0, H));
    auto u = nk::sigmoid(nk::slice(gx, H, 2 * H) + nk::slice(gh, H, 2 * H));
    auto n = nk::tanh(nk::slice(gx, 2 * H, 3 * H) + r * nk::slice(gh, 2 * H, 3 * H));
    // (1 - u) * n + u * h  ==  n + u * (h - n)
    return n + u * (h - n);
}

Model::Model(const SbwmConfig& config, std::uint64_t seed) : config_(config)
{
    validate(config_);
    std::mt19937_64 rng(seed);
    const auto D = config_.obs_dim;
    const auto E = config_.embed_dim;
    const auto H = config_.hidden_dim;
    const auto Z = config_.latent_dim;
    const auto M = config_.mlp_hidden;

    encoder_ = Mlp(params_, "encoder", D, M, E, rng);
    switch (config_.kind) {
    case ModelKind::sbwm:
        gru_ = Gru(params_, "gru", E + Z, H, rng);
        prior_ = Mlp(params_, "prior", H, M, 2 * Z, rng);
        posterior_ = Mlp(params_, "posterior", H + E, M, 2 * Z, rng);
        decoder_ = Mlp(params_, "decoder", H + Z, M, 2 * D, rng);
        break;
    case ModelKind::latent_no_feedback:
        gru_ = Gru(params_, "gru", E, H, rng);
        prior_ = Mlp(params_, "prior", H, M, 2 * Z, rng);
        posterior_ = Mlp(params_, "posterior", H + E, M, 2 * Z, rng);
        decoder_ = Mlp(params_, "decoder", H + Z, M, 2 * D, rng);
        break;
    case ModelKind::no_latent:
        gru_ = Gru(params_, "gru", E, H, rng);
        decoder_ = Mlp(params_, "decoder", H, M, 2 * D, rng);
        break;
    case ModelKind::deterministic_rnn: {
        if (config_.rnn_hidden_dim == 0) {
            config_.rnn_hidden_dim = matched_rnn_hidden(config_);
        }
        const auto Hr = config_.rnn_hidden_dim;
        gru_ = Gru(params_, "gru", E, Hr, rng);
        decoder_ = Mlp(params_, "decoder", Hr, M, D, rng);
        break;
    }
    }
}

bool Model::has_latent() const
{
    return config_.kind == ModelKind::sbwm || config_.kind == ModelKind::latent_no_feedback;
}

bool Model::latent_feeds_belief() const
{
    return config_.kind == ModelKind::sbwm;
}

namespace {
thread_local std::size_t thread_encoder_rows = 0;
}

Tensor Model::encode(const Tensor& x) const
{
    check_batch("encode", x, config_.obs_dim);
    return encode_normalized(normalize(x));
}

Tensor Model::encode_normalized(const Tensor& xn) const
{
    check_batch("encode", xn, config_.obs_dim);
    encoder_calls_->fetch_add(xn.dim(0));
    thread_encoder_rows += xn.dim(0);
    return encoder_(xn);
}

Tensor Model::normalize(const Tensor& x) const
{
    if (!has_normalization()) {
        return x;
    }
    return nk::div(x - Tensor::vector(config_.obs_mean), Tensor::vector(config_.obs_scale));
}

Tensor Model::denormalize_mean(const Tensor& mu) const
{
    if (!has_normalization()) {
        return mu;
    }
    return mu * Tensor::vector(config_.obs_scale) + Tensor::vector(config_.obs_mean);
}

Tensor Model::denormalize_std(const Tensor& sigma) const
{
    if (!has_normalization()) {
        return sigma;
    }
    return sigma * Tensor::vector(config_.obs_scale);
}

std::vector<double> Model::to_model_form(std::span<const double> frames) const
{
    std::vector<double> out(frames.begin(), frames.end());
    if (config_.root_displacement) {
        data::to_displacement_form(out, config_.obs_dim, config_.representation);
    }
    return out;
}

void Model::set_normalization(std::vector<double> mean, std::vector<double> scale)
{
    auto c = config_;
    c.obs_mean = std::move(mean);
    c.obs_scale = std::move(scale);
    validate(c);
    config_ = std::move(c);
}

std::size_t Model::thread_encoder_calls()
{
    return thread_encoder_rows;
}

dist::DiagGaussian Model::prior(const Tensor& h) const
{
    if (!has_latent()) {
        throw bad_input("prior: model kind '" + std::string(to_string(kind())) + "' has no latent");
    }
    check_batch("prior", h, hidden_dim());
    return dist::from_raw(prior_(h));
}

dist::DiagGaussian Model::posterior(const Tensor& h, const Tensor& e) const
{
    if (!has_latent()) {
        throw bad_input("posterior: model kind '" + std::string(to_string(kind())) + "' has no latent");
    }
    check_batch("posterior", h, hidden_dim());
    check_batch("posterior", e, config_.embed_dim);
    return dist::from_raw(posterior_(nk::concat({h, e})));
}

Tensor Model::belief_update(const Tensor& h_prev, const Tensor& z, const Tensor& e) const
{
    check_batch("belief_update", h_prev, hidden_dim());
    check_batch("belief_update", e, config_.embed_dim);
    if (latent_feeds_belief()) {
        check_batch("belief_update", z, config_.latent_dim);
        return gru_(h_prev, nk::concat({e, z}));
    }
    return gru_(h_prev, e);
}

dist::DiagGaussian Model::decode(const Tensor& h, const Tensor& z) const
{
    check_batch("decode", h, hidden_dim());
    if (is_recurrent_baseline()) {
        auto mu = decoder_(h);
        auto sigma = Tensor::from(mu.shape(), std::vector<double>(mu.size(), dist::sigma_min));
        return {mu, sigma};
    }
    if (!has_latent()) {
        return dist::from_raw(decoder_(h));
    }
    check_batch("decode", z, config_.latent_dim);
    return dist::from_raw(decoder_(nk::concat({h, z})));
}

Tensor Model::null_embedding(std::size_t batch) const
{
    return Tensor::zeros({batch, config_.embed_dim});
}

Tensor Model::initial_belief(std::size_t batch, std::mt19937_64* rng) const
{
    if (config_.sample_h0 && rng != nullptr) {
        return dist::standard_normal({batch, hidden_dim()}, *rng);
    }
    return Tensor::zeros({batch, hidden_dim()});
}

Model build_baseline(ModelKind kind, const SbwmConfig& config, std::uint64_t seed)
{
    SbwmConfig c = config;
    c.kind = kind;
    return Model(c, seed);
}

std::size_t parameter_count(const SbwmConfig& c)
{
    const auto D = c.obs_dim;
    const auto E = c.embed_dim;
    const auto H = c.hidden_dim;
    const auto Z = c.latent_dim;
    const auto M = c.mlp_hidden;
    const auto enc = mlp_count(D, M, E);
    switch (c.kind) {
    case ModelKind::sbwm:
        return enc + gru_count(E + Z, H) + mlp_count(H, M, 2 * Z) + mlp_count(H + E, M, 2 * Z) +
               mlp_count(H + Z, M, 2 * D);
    case ModelKind::latent_no_feedback:
        return enc + gru_count(E, H) + mlp_count(H, M, 2 * Z) + mlp_count(H + E, M, 2 * Z) +
               mlp_count(H + Z, M, 2 * D);
    case ModelKind::no_latent:
        return enc + gru_count(E, H) + mlp_count(H, M, 2 * D);
    case ModelKind::deterministic_rnn: {
        const auto Hr = c.rnn_hidden_dim == 0 ? matched_rnn_hidden(c) : c.rnn_hidden_dim;
        return enc + gru_count(E, Hr) + mlp_count(Hr, M, D);
    }
    }
    return 0;
}

std::vector<double> belief_jacobian_z(const Model& model, std::span<const double> h_prev, std::span<const double> z,
                                      std::span<const double> e)
{
    if (!model.has_latent()) {
        return {};
    }
    const std::size_t H = model.hidden_dim();
    const std::size_t Z = model.latent_dim();
    if (h_prev.size() != H || z.size() != Z || e.size() != model.config().embed_dim) {
        throw bad_input("belief_jacobian_z: state sizes do not match the model");
    }
    std::vector<double> jac(H * Z, 0.0);
    // Backward passes also reach the parameters; keep their gradients intact.
    std::vector<std::vector<double>> saved;
    for (const auto& p : model.params()) {
        saved.push_back(p.tensor.node()->grad);
    }
    const auto h_t = Tensor::from({1, H}, {h_prev.begin(), h_prev.end()});
    const auto e_t = Tensor::from({1, e.size()}, {e.begin(), e.end()});
    for (std::size_t i = 0; i < H; ++i) {
        auto z_t = Tensor::from({1, Z}, {z.begin(), z.end()}, true);
        nk::Tape tape;
        nk::TapeScope scope(tape);
        auto h_next = model.belief_update(h_t, z_t, e_t);
        auto out = nk::slice(h_next, i, i + 1);
        if (tape.empty()) {
            break; // z never entered the graph
        }
        tape.backward(nk::sum(out));
        if (z_t.has_grad()) {
            for (std::size_t k = 0; k < Z; ++k) {
                jac[i * Z + k] = z_t.grad()[k];
            }
        }
    }
    std::size_t k = 0;
    for (const auto& p : model.params()) {
        p.tensor.node()->grad = std::move(saved[k++]);
    }
    return jac;
}

double frobenius_norm(std::span<const double> m)
{
    double s = 0.0;
    for (double v : m) {
        s += v * v;
    }
    return std::sqrt(s);
}

std::string config_to_json(const SbwmConfig& c)
{
    nlohmann::json j = {{"kind", to_string(c.kind)},
                        {"obs_dim", c.obs_dim},
                        {"embed_dim", c.embed_dim},
                        {"hidden_dim", c.hidden_dim},
                        {"latent_dim", c.latent_dim},
                        {"mlp_hidden", c.mlp_hidden},
                        {"representation", data::to_string(c.representation)},
                        {"sample_h0", c.sample_h0},
                        {"rnn_hidden_dim", c.rnn_hidden_dim},
                        {"root_displacement", c.root_displacement}};
    if (!c.obs_mean.empty()) {
        j["obs_mean"] = c.obs_mean;
        j["obs_scale"] = c.obs_scale;
    }
    return j.dump(2);
}

namespace {

SbwmConfig config_from(const nlohmann::json& j)
{
    SbwmConfig c;
    c.kind = parse_model_kind(j.value("kind", std::string("sbwm")));
    c.obs_dim = j.value("obs_dim", c.obs_dim);
    c.embed_dim = j.value("embed_dim", c.embed_dim);
    c.hidden_dim = j.value("hidden_dim", c.hidden_dim);
    c.latent_dim = j.value("latent_dim", c.latent_dim);
    c.mlp_hidden = j.value("mlp_hidden", c.mlp_hidden);
    c.representation = data::parse_representation(j.value("representation", std::string("manifold")));
    c.sample_h0 = j.value("sample_h0", false);
    c.rnn_hidden_dim = j.value("rnn_hidden_dim", std::size_t{0});
    c.root_displacement = j.value("root_displacement", c.root_displacement);
    if (j.contains("obs_mean")) {
        c.obs_mean = j.at("obs_mean").get<std::vector<double>>();
        c.obs_scale = j.at("obs_scale").get<std::vector<double>>();
    }
    validate(c);
    return c;
}

} // namespace

SbwmConfig config_from_json(const std::string& text)
{
    try {
        return config_from(nlohmann::json::parse(text));
    } catch (const nlohmann::json::exception& e) {
        throw bad_input(std::string("model config json: ") + e.what());
    }
}

std::string manifest_json(const Model& model, std::uint64_t step)
{
    nlohmann::json j;
    j["format"] = "sbwm-model-manifest";
    j["version"] = 1;
    j["config"] = nlohmann::json::parse(config_to_json(model.config()));
    j["parameter_groups"] = model.params().group_names();
    j["parameter_count"] = model.params().scalar_count();
    j["step"] = step;
    return j.dump(2);
}

SbwmConfig config_from_manifest(const std::string& text)
{
    try {
        const auto j = nlohmann::json::parse(text);
        if (j.value("format", std::string()) != "sbwm-model-manifest") {
            throw bad_input("not a model manifest");
        }
        return config_from(j.at("config"));
    } catch (const nlohmann::json::exception& e) {
        throw bad_input(std::string("model manifest: ") + e.what());
    }
}

void save_model(const std::filesystem::path& checkpoint, const Model& model, std::uint64_t step)
{
    nk::save_checkpoint(checkpoint, model.params());
    auto manifest = checkpoint;
    manifest += ".json";
    std::ofstream out(manifest, std::ios::trunc);
    out << manifest_json(model, step) << '\n';
    if (!out) {
        throw io_error("cannot write " + manifest.string());
    }
}

Model load_model(const std::filesystem::path& checkpoint)
{
    if (!std::filesystem::exists(checkpoint)) {
        throw not_found("checkpoint not found: " + checkpoint.string());
    }
    auto manifest = checkpoint;
    manifest += ".json";
    if (!std::filesystem::exists(manifest)) {
        throw not_found("model manifest not found: " + manifest.string());
    }
    std::ifstream in(manifest);
    std::stringstream buffer;
    buffer << in.rdbuf();
    Model model(config_from_manifest(buffer.str()), 0);
    nk::load_checkpoint(checkpoint, model.params());
    return model;
}

} // namespace sbwm::model
