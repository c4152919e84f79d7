#include "sbwm/training.hpp"

#include "sbwm/numkit/ops.hpp"

#include <spdlog/spdlog.h>

#include <charconv>
#include <chrono>
#include <cmath>
#include <fstream>
#include <sstream>

namespace sbwm::training {

using nk::Tensor;

namespace {

constexpr const char* csv_header = "step,loss,recon_logp,raw_kl,effective_kl,beta,tf_prob,grad_norm,wall_time";

std::string fmt(double v)
{
    char buf[32];
    auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

// Row mask [B, width]: 1 where the row's flag is set.
Tensor row_mask(const std::vector<std::uint8_t>& flags, std::size_t length, std::size_t t, std::size_t width,
                bool invert)
{
    const std::size_t batch = flags.size() / length;
    std::vector<double> v(batch * width);
    for (std::size_t b = 0; b < batch; ++b) {
        const bool on = (flags[b * length + t] != 0) != invert;
        std::fill_n(v.begin() + static_cast<std::ptrdiff_t>(b * width), width, on ? 1.0 : 0.0);
    }
    return Tensor::from({batch, width}, std::move(v));
}

std::vector<Tensor> frames_at(const std::vector<std::vector<double>>& batch, std::size_t length, std::size_t dim)
{
    std::vector<Tensor> out;
    out.reserve(length);
    const std::size_t B = batch.size();
    for (std::size_t t = 0; t < length; ++t) {
        std::vector<double> v(B * dim);
        for (std::size_t b = 0; b < B; ++b) {
            std::copy_n(batch[b].begin() + static_cast<std::ptrdiff_t>(t * dim), dim,
                        v.begin() + static_cast<std::ptrdiff_t>(b * dim));
        }
        out.push_back(Tensor::from({B, dim}, std::move(v)));
    }
    return out;
}

// [T * B, D], time-major.
Tensor stack_rows(const std::vector<Tensor>& x)
{
    std::vector<double> v;
    v.reserve(x.size() * x.front().size());
    for (const auto& t : x) {
        v.insert(v.end(), t.data().begin(), t.data().end());
    }
    return Tensor::from({x.size() * x.front().dim(0), x.front().dim(1)}, std::move(v));
}

Tensor smoothness(const std::vector<Tensor>& mus, const TrainConfig& cfg)
{
    Tensor total = Tensor::scalar(0.0);
    if (cfg.vel_weight > 0.0) {
        for (std::size_t t = 1; t < mus.size(); ++t) {
            total = total + cfg.vel_weight * nk::sum(nk::square(mus[t] - mus[t - 1]));
        }
    }
    if (cfg.acc_weight > 0.0) {
        for (std::size_t t = 2; t < mus.size(); ++t) {
            total = total + cfg.acc_weight * nk::sum(nk::square(mus[t] - 2.0 * mus[t - 1] + mus[t - 2]));
        }
    }
    return total;
}

Objective latent_objective(const model::Model& model, const std::vector<Tensor>& x, const StepPlan& plan,
                           double beta, const TrainConfig& cfg)
{
    const std::size_t B = x.front().dim(0);
    const std::size_t T = x.size();
    const std::size_t E = model.config().embed_dim;
    const std::size_t Z = model.latent_dim();
    const bool latent = model.has_latent();

    Tensor h = model.initial_belief(B);
    Tensor logp = Tensor::scalar(0.0);
    Tensor kl_term = Tensor::scalar(0.0);
    double raw_kl = 0.0;
    double eff_kl = 0.0;
    std::vector<Tensor> mus;
    mus.reserve(T);
    // Observations do not depend on the recurrence: embed all frames at once.
    const Tensor e_all = model.encode_normalized(stack_rows(x));
    for (std::size_t t = 0; t < T; ++t) {
        const Tensor e_obs = nk::slice_rows(e_all, t * B, (t + 1) * B);
        const Tensor e_in = e_obs * row_mask(plan.teacher, T, t, E, false);
        Tensor z;
        if (latent) {
            const auto q = model.posterior(h, e_obs);
            const auto p = model.prior(h);
            const Tensor zq = dist::rsample(q, plan.noise[t]);
            if (cfg.self_latent == SelfLatent::prior) {
                const Tensor zp = dist::rsample(p, plan.noise[t]);
                z = zq * row_mask(plan.teacher, T, t, Z, false) + zp * row_mask(plan.teacher, T, t, Z, true);
            } else {
                z = zq;
            }
            const Tensor kl = dist::kl_divergence(q, p);
            const Tensor fb = dist::effective_kl(q, p, cfg.free_bits_lambda, cfg.free_bits_mode);
            for (double v : kl.data()) {
                raw_kl += v;
            }
            for (double v : fb.data()) {
                eff_kl += v;
            }
            if (beta > 0.0) {
                kl_term = kl_term + nk::sum(fb);
            }
        }
        h = model.belief_update(h, z, e_in);
        const auto d = model.decode(h, z);
        logp = logp + nk::sum(dist::log_prob(d, x[t]));
        mus.push_back(d.mu);
    }
    const double norm = 1.0 / static_cast<double>(B * T);
    Objective out;
    out.loss = norm * (beta * kl_term - logp + smoothness(mus, cfg));
    out.recon_logp = logp.item() * norm;
    out.raw_kl = raw_kl * norm;
    out.effective_kl = eff_kl * norm;
    return out;
}

Objective rnn_objective(const model::Model& model, const std::vector<Tensor>& x, const StepPlan& plan,
                        const TrainConfig& cfg)
{
    const std::size_t B = x.front().dim(0);
    const std::size_t T = x.size();
    const std::size_t D = model.config().obs_dim;
    Tensor h = model.initial_belief(B);
    Tensor sq = Tensor::scalar(0.0);
    Tensor prev;
    std::vector<Tensor> mus;
    for (std::size_t t = 0; t + 1 < T; ++t) {
        Tensor in = x[t];
        if (t > 0) {
            in = x[t] * row_mask(plan.teacher, T, t, D, false) + prev.detach() * row_mask(plan.teacher, T, t, D, true);
        }
        h = model.belief_update(h, Tensor(), model.encode_normalized(in));
        prev = model.decode(h, Tensor()).mu;
        sq = sq + nk::sum(nk::square(prev - x[t + 1]));
        mus.push_back(prev);
    }
    const double norm = 1.0 / static_cast<double>(B * (T - 1));
    Objective out;
    out.loss = norm * (sq + smoothness(mus, cfg));
    out.recon_logp = -sq.item() * norm;
    return out;
}

} // namespace

std::string_view to_string(SelfLatent s)
{
    return s == SelfLatent::prior ? "prior" : "posterior";
}

SelfLatent parse_self_latent(std::string_view text)
{
    if (text == "prior") {
        return SelfLatent::prior;
    }
    if (text == "posterior") {
        return SelfLatent::posterior;
    }
    throw bad_input("unknown self-latent source '" + std::string(text) + "'");
}

void validate(const TrainConfig& c)
{
    if (c.beta_max < 0 || c.free_bits_lambda < 0 || c.vel_weight < 0 || c.acc_weight < 0) {
        throw bad_input("train config: weights must be >= 0");
    }
    if (c.window < 2) {
        throw bad_input("train config: window must be >= 2");
    }
    if (c.batch_size == 0) {
        throw bad_input("train config: batch size must be >= 1");
    }
    if (!(c.tf_floor >= 0.0 && c.tf_floor <= 1.0) || !(c.tf_decay_k >= 1.0)) {
        throw bad_input("train config: teacher-forcing floor must lie in [0, 1] and k >= 1");
    }
    if (!(c.learning_rate > 0.0)) {
        throw bad_input("train config: learning rate must be positive");
    }
}

double beta_at(std::uint64_t step, const TrainConfig& cfg)
{
    if (cfg.kl_anneal_steps == 0 || step >= cfg.kl_anneal_steps) {
        return cfg.beta_max;
    }
    return cfg.beta_max * static_cast<double>(step) / static_cast<double>(cfg.kl_anneal_steps);
}

double teacher_forcing_prob(std::uint64_t step, const TrainConfig& cfg)
{
    const double k = cfg.tf_decay_k;
    const double ratio = static_cast<double>(step) / k;
    // exp overflows to inf for huge steps; the result then tends to 0.
    const double p = k / (k + std::exp(ratio));
    return std::max(cfg.tf_floor, p);
}

std::string TrainLog::to_csv() const
{
    std::ostringstream out;
    out << csv_header << '\n';
    for (const auto& r : records) {
        out << r.step << ',' << fmt(r.loss) << ',' << fmt(r.recon_logp) << ',' << fmt(r.raw_kl) << ','
            << fmt(r.effective_kl) << ',' << fmt(r.beta) << ',' << fmt(r.tf_prob) << ',' << fmt(r.grad_norm) << ','
            << fmt(r.wall_time) << '\n';
    }
    return out.str();
}

TrainLog TrainLog::from_csv(const std::string& text)
{
    TrainLog log;
    std::istringstream in(text);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (lineno == 1) {
            if (line != csv_header) {
                throw bad_input("train log: unexpected header");
            }
            continue;
        }
        if (line.empty()) {
            continue;
        }
        std::vector<double> v;
        std::size_t pos = 0;
        while (pos <= line.size()) {
            auto comma = line.find(',', pos);
            if (comma == std::string::npos) {
                comma = line.size();
            }
            double x = 0.0;
            auto res = std::from_chars(line.data() + pos, line.data() + comma, x);
            if (res.ec != std::errc() || res.ptr != line.data() + comma) {
                throw bad_input("train log: line " + std::to_string(lineno) + ": malformed number");
            }
            v.push_back(x);
            pos = comma + 1;
        }
        if (v.size() != 9) {
            throw bad_input("train log: line " + std::to_string(lineno) + ": expected 9 columns");
        }
        TrainRecord r;
        r.step = static_cast<std::uint64_t>(v[0]);
        r.loss = v[1];
        r.recon_logp = v[2];
        r.raw_kl = v[3];
        r.effective_kl = v[4];
        r.beta = v[5];
        r.tf_prob = v[6];
        r.grad_norm = v[7];
        r.wall_time = v[8];
        if (!log.records.empty() && r.step <= log.records.back().step) {
            throw bad_input("train log: line " + std::to_string(lineno) + ": step not increasing");
        }
        log.records.push_back(r);
    }
    return log;
}

void TrainLog::save(const std::filesystem::path& path) const
{
    std::ofstream out(path, std::ios::trunc);
    out << to_csv();
    if (!out) {
        throw io_error("cannot write " + path.string());
    }
}

TrainLog TrainLog::load(const std::filesystem::path& path)
{
    if (!std::filesystem::exists(path)) {
        throw not_found("train log not found: " + path.string());
    }
    std::ifstream in(path);
    std::stringstream buffer;
    buffer << in.rdbuf();
    return from_csv(buffer.str());
}

StepPlan make_plan(const model::Model& model, std::size_t batch, std::size_t length, double tf_prob,
                   std::mt19937_64& rng)
{
    StepPlan plan;
    plan.teacher.resize(batch * length);
    std::bernoulli_distribution coin(tf_prob);
    for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t t = 0; t < length; ++t) {
            // The first frame is always observed: there is nothing to predict from.
            plan.teacher[b * length + t] = t == 0 || coin(rng) ? 1 : 0;
        }
    }
    if (model.has_latent()) {
        for (std::size_t t = 0; t < length; ++t) {
            plan.noise.push_back(dist::standard_normal({batch, model.latent_dim()}, rng));
        }
    }
    return plan;
}

Objective objective(const model::Model& model, const std::vector<std::vector<double>>& batch, const StepPlan& plan,
                    double beta, const TrainConfig& cfg)
{
    const std::size_t D = model.config().obs_dim;
    if (batch.empty() || batch.front().size() % D != 0) {
        throw bad_input("objective: batch rows must hold whole frames of dim " + std::to_string(D));
    }
    const std::size_t T = batch.front().size() / D;
    for (const auto& row : batch) {
        if (row.size() != T * D) {
            throw bad_input("objective: ragged batch");
        }
    }
    if (T < 2 || plan.teacher.size() != batch.size() * T) {
        throw bad_input("objective: plan does not match the batch");
    }
    std::vector<std::vector<double>> rows;
    rows.reserve(batch.size());
    for (const auto& row : batch) {
        rows.push_back(model.to_model_form(row));
    }
    auto x = frames_at(rows, T, D);
    for (auto& f : x) {
        f = model.normalize(f);
    }
    if (model.is_recurrent_baseline()) {
        return rnn_objective(model, x, plan, cfg);
    }
    return latent_objective(model, x, plan, beta, cfg);
}

TrainRecord elbo_step(model::Model& model, nk::AdamState& adam, const std::vector<std::vector<double>>& batch,
                      std::uint64_t step, const TrainConfig& cfg, std::mt19937_64& rng)
{
    TrainRecord rec;
    rec.step = step;
    rec.beta = beta_at(step, cfg);
    rec.tf_prob = teacher_forcing_prob(step, cfg);
    const std::size_t T = batch.empty() ? 0 : batch.front().size() / model.config().obs_dim;
    const auto plan = make_plan(model, batch.size(), T, rec.tf_prob, rng);

    nk::Tape tape;
    nk::TapeScope scope(tape);
    const auto obj = objective(model, batch, plan, rec.beta, cfg);
    rec.loss = obj.loss.item();
    rec.recon_logp = obj.recon_logp;
    rec.raw_kl = obj.raw_kl;
    rec.effective_kl = obj.effective_kl;
    if (!std::isfinite(rec.loss)) {
        throw numerical_error("training diverged at step " + std::to_string(step) + ": loss=" + fmt(rec.loss) +
                              " recon_logp=" + fmt(rec.recon_logp) + " raw_kl=" + fmt(rec.raw_kl));
    }
    model.params().clear_grad();
    tape.backward(obj.loss);
    model.params().fill_missing_grads();
    const auto stats = nk::adam_step(model.params(), adam);
    rec.grad_norm = stats.grad_norm;
    return rec;
}

std::pair<std::vector<double>, std::vector<double>> fit_normalization(
    const model::Model& model, const std::vector<data::MotionSequence>& sequences, std::size_t window,
    std::uint64_t seed, std::size_t crops, double min_scale)
{
    data::CropSampler sampler(sequences, window, seed);
    const std::size_t D = sampler.dim();
    std::vector<double> sum(D, 0.0);
    std::vector<double> sq(D, 0.0);
    std::size_t n = 0;
    auto batch = sampler.next_batch(crops);
    for (auto& crop : batch) {
        crop = model.to_model_form(crop);
    }
    for (const auto& crop : batch) {
        for (std::size_t i = 0; i < crop.size(); ++i) {
            sum[i % D] += crop[i];
        }
        n += crop.size() / D;
    }
    for (auto& v : sum) {
        v /= static_cast<double>(n);
    }
    for (const auto& crop : batch) {
        for (std::size_t i = 0; i < crop.size(); ++i) {
            const double d = crop[i] - sum[i % D];
            sq[i % D] += d * d;
        }
    }
    for (auto& v : sq) {
        v = std::max(min_scale, std::sqrt(v / static_cast<double>(n)));
    }
    return {sum, sq};
}

TrainLog train(model::Model& model, const std::vector<data::MotionSequence>& sequences, const TrainConfig& cfg,
               const std::filesystem::path& out_dir)
{
    validate(cfg);
    if (sequences.empty()) {
        throw bad_input("train: empty dataset");
    }
    data::CropSampler sampler(sequences, cfg.window, cfg.seed);
    if (sampler.dim() != model.config().obs_dim) {
        throw bad_input("train: data has D=" + std::to_string(sampler.dim()) + ", model expects D=" +
                        std::to_string(model.config().obs_dim));
    }
    if (cfg.standardize && !model.has_normalization()) {
        auto [mean, scale] = fit_normalization(model, sequences, cfg.window, cfg.seed ^ 0x5851f42d4c957f2dULL);
        model.set_normalization(std::move(mean), std::move(scale));
    }
    if (!out_dir.empty()) {
        std::filesystem::create_directories(out_dir);
    }
    nk::AdamConfig adam_cfg;
    adam_cfg.learning_rate = cfg.learning_rate;
    adam_cfg.clip_norm = cfg.clip_norm;
    auto adam = nk::make_adam_state(model.params(), adam_cfg);
    std::mt19937_64 rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);

    TrainLog log;
    const auto start = std::chrono::steady_clock::now();
    for (std::uint64_t step = 0; step < cfg.max_steps; ++step) {
        const auto batch = sampler.next_batch(cfg.batch_size);
        TrainRecord rec;
        try {
            rec = elbo_step(model, adam, batch, step, cfg, rng);
        } catch (const Error&) {
            if (!out_dir.empty()) {
                log.save(out_dir / "train_log.csv");
            }
            throw;
        }
        rec.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        log.records.push_back(rec);
        if (cfg.log_every > 0 && (step + 1) % cfg.log_every == 0) {
            spdlog::info("{} step {}: loss={:.4f} recon={:.4f} kl={:.4f} beta={:.3f} p_tf={:.3f} |g|={:.3f}",
                         to_string(model.kind()), step + 1, rec.loss, rec.recon_logp, rec.raw_kl, rec.beta,
                         rec.tf_prob, rec.grad_norm);
        }
        if (!out_dir.empty() && cfg.checkpoint_every > 0 && (step + 1) % cfg.checkpoint_every == 0 &&
            step + 1 < cfg.max_steps) {
            model::save_model(out_dir / ("step-" + std::to_string(step + 1) + ".ckpt"), model, step + 1);
        }
    }
    if (!out_dir.empty()) {
        model::save_model(out_dir / "model.ckpt", model, cfg.max_steps);
        log.save(out_dir / "train_log.csv");
    }
    return log;
}

} // namespace sbwm::training
