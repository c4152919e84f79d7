#include "sbwm/rollout.hpp"

#include "sbwm/numkit/ops.hpp"

#include <charconv>
#include <cmath>
#include <cstdlib>
#include <atomic>
#include <mutex>
#include <thread>

namespace sbwm::rollout {

using nk::Tensor;

namespace {

constexpr std::size_t chunk_windows = 32;
constexpr std::uint64_t resample_stream = 0xd1b54a32d192ed03ULL;

std::vector<double> row_of(const Tensor& t, std::size_t r)
{
    const std::size_t n = t.dim(1);
    const auto d = t.data();
    return {d.begin() + static_cast<std::ptrdiff_t>(r * n), d.begin() + static_cast<std::ptrdiff_t>((r + 1) * n)};
}

bool row_ok(const Tensor& h, const Tensor& mu, std::size_t r)
{
    for (std::size_t i = 0; i < h.dim(1); ++i) {
        const double v = h.at(r, i);
        if (!std::isfinite(v) || std::abs(v) > divergence_limit) {
            return false;
        }
    }
    for (std::size_t i = 0; i < mu.dim(1); ++i) {
        if (!std::isfinite(mu.at(r, i))) {
            return false;
        }
    }
    return true;
}

// Records step `s` for every row still alive.
void record(std::vector<std::vector<TraceStep>*>& out, std::vector<bool>& diverged, Phase phase, const Tensor& h,
            const Tensor& z, const std::vector<LatentSource>& sources, const dist::DiagGaussian& d)
{
    for (std::size_t r = 0; r < out.size(); ++r) {
        if (diverged[r]) {
            continue;
        }
        if (!row_ok(h, d.mu, r)) {
            diverged[r] = true;
            continue;
        }
        TraceStep step;
        step.phase = phase;
        step.h = row_of(h, r);
        if (z.defined()) {
            step.z = row_of(z, r);
        }
        step.source = sources[r];
        step.mu = row_of(d.mu, r);
        step.sigma = row_of(d.sigma, r);
        out[r]->push_back(std::move(step));
    }
}

// Emission in data units.
dist::DiagGaussian raw(const model::Model& model, const dist::DiagGaussian& d)
{
    return {model.denormalize_mean(d.mu), model.denormalize_std(d.sigma)};
}

using Roots = std::vector<std::array<double, 2>>;

// Emission in data units; the root of displacement-form models is placed
// relative to `roots`, the root position of the preceding frame per row.
dist::DiagGaussian in_data_units(const model::Model& model, const dist::DiagGaussian& d, const Roots& roots)
{
    auto out = raw(model, d);
    if (!model.config().root_displacement) {
        return out;
    }
    const std::size_t N = out.mu.dim(0);
    const std::size_t D = out.mu.dim(1);
    std::vector<double> mu = out.mu.to_vector();
    for (std::size_t r = 0; r < N; ++r) {
        data::from_displacement_form(std::span<double>(mu).subspan(r * D, D), D, model.config().representation,
                                     roots[r]);
    }
    out.mu = Tensor::from({N, D}, std::move(mu));
    return out;
}

Tensor gather_frames(const std::vector<std::span<const double>>& obs, std::size_t t, std::size_t D)
{
    std::vector<double> v(obs.size() * D);
    for (std::size_t i = 0; i < obs.size(); ++i) {
        std::copy_n(obs[i].begin() + static_cast<std::ptrdiff_t>(t * D), D,
                    v.begin() + static_cast<std::ptrdiff_t>(i * D));
    }
    return Tensor::from({obs.size(), D}, std::move(v));
}

Tensor noise_rows(std::vector<std::mt19937_64>& rngs, std::size_t Z)
{
    std::vector<double> v;
    v.reserve(rngs.size() * Z);
    for (auto& rng : rngs) {
        auto draw = dist::standard_normal(Z, rng);
        v.insert(v.end(), draw.begin(), draw.end());
    }
    return Tensor::from({rngs.size(), Z}, std::move(v));
}

} // namespace

std::string_view to_string(Mode mode)
{
    return mode == Mode::stochastic ? "stochastic" : "mean";
}

Mode parse_mode(std::string_view text)
{
    if (text == "stochastic") {
        return Mode::stochastic;
    }
    if (text == "mean" || text == "deterministic-mean") {
        return Mode::mean;
    }
    throw bad_input("unknown rollout mode '" + std::string(text) + "'");
}

std::string_view to_string(InterventionKind kind)
{
    switch (kind) {
    case InterventionKind::fix_to_mean:
        return "fix-to-mean";
    case InterventionKind::add_delta:
        return "add-delta";
    case InterventionKind::resample:
        return "resample";
    }
    return "?";
}

std::string_view to_string(Phase phase)
{
    return phase == Phase::observe ? "observe" : "predict";
}

std::string_view to_string(LatentSource source)
{
    switch (source) {
    case LatentSource::none:
        return "none";
    case LatentSource::posterior_mean:
        return "posterior-mean";
    case LatentSource::posterior_sample:
        return "posterior-sample";
    case LatentSource::prior_sample:
        return "prior-sample";
    case LatentSource::prior_mean:
        return "prior-mean";
    case LatentSource::intervened:
        return "intervened";
    }
    return "?";
}

Intervention parse_intervention(std::string_view text)
{
    const auto bad = [&](const std::string& why) {
        return bad_input("intervention '" + std::string(text) + "': " + why);
    };
    const auto c1 = text.find(':');
    if (c1 == std::string_view::npos) {
        throw bad("expected step:kind[:delta]");
    }
    Intervention iv;
    const auto step_text = text.substr(0, c1);
    auto res = std::from_chars(step_text.data(), step_text.data() + step_text.size(), iv.step);
    if (res.ec != std::errc() || res.ptr != step_text.data() + step_text.size() || iv.step == 0) {
        throw bad("step must be a positive integer");
    }
    auto rest = text.substr(c1 + 1);
    const auto c2 = rest.find(':');
    const auto kind = rest.substr(0, c2);
    if (kind == "fix-to-mean") {
        iv.kind = InterventionKind::fix_to_mean;
    } else if (kind == "add-delta") {
        iv.kind = InterventionKind::add_delta;
    } else if (kind == "resample") {
        iv.kind = InterventionKind::resample;
    } else {
        throw bad("unknown kind '" + std::string(kind) + "'");
    }
    if (iv.kind == InterventionKind::add_delta) {
        if (c2 == std::string_view::npos) {
            throw bad("add-delta needs a comma-separated vector");
        }
        auto values = rest.substr(c2 + 1);
        std::size_t pos = 0;
        while (pos <= values.size()) {
            auto comma = values.find(',', pos);
            if (comma == std::string_view::npos) {
                comma = values.size();
            }
            double v = 0.0;
            auto r = std::from_chars(values.data() + pos, values.data() + comma, v);
            if (r.ec != std::errc() || r.ptr != values.data() + comma) {
                throw bad("malformed delta value");
            }
            iv.delta.push_back(v);
            pos = comma + 1;
        }
    } else if (c2 != std::string_view::npos) {
        throw bad("only add-delta takes a vector");
    }
    return iv;
}

void validate(const RolloutSpec& spec)
{
    if (spec.t_in < 1 || spec.t_pred < 1 || spec.samples < 1) {
        throw bad_input("rollout spec: t_in, t_pred and samples must be >= 1");
    }
    if (spec.intervention && (spec.intervention->step < 1 || spec.intervention->step > spec.t_pred)) {
        throw bad_input("rollout spec: intervention step must lie in [1, t_pred]");
    }
}

std::vector<std::vector<double>> RolloutTrace::predicted() const
{
    std::vector<std::vector<double>> out;
    for (const auto& s : steps) {
        if (s.phase == Phase::predict) {
            out.push_back(s.mu);
        }
    }
    return out;
}

std::size_t RolloutTrace::count(Phase phase) const
{
    std::size_t n = 0;
    for (const auto& s : steps) {
        n += s.phase == phase ? 1 : 0;
    }
    return n;
}

Filtered filter(const model::Model& model, const std::vector<std::span<const double>>& observations,
                const RolloutSpec& spec)
{
    validate(spec);
    const std::size_t N = observations.size();
    const std::size_t D = model.config().obs_dim;
    if (N == 0) {
        throw bad_input("filter: no observations");
    }
    for (const auto& o : observations) {
        if (o.size() < spec.t_in * D || o.size() % D != 0) {
            throw bad_input("filter: expected at least " + std::to_string(spec.t_in) + " frames of D=" +
                            std::to_string(D) + ", found " + std::to_string(o.size()) + " values");
        }
    }
    std::mt19937_64 rng(spec.seed);
    Filtered out;
    out.steps.resize(N);
    out.diverged.assign(N, false);
    std::vector<std::vector<TraceStep>*> sinks;
    std::vector<std::span<const double>> absolute;
    std::vector<std::vector<double>> model_form;
    Roots roots(N);
    for (std::size_t i = 0; i < N; ++i) {
        out.steps[i].reserve(spec.t_in);
        sinks.push_back(&out.steps[i]);
        absolute.push_back(observations[i].first(spec.t_in * D));
        model_form.push_back(model.to_model_form(absolute.back()));
        roots[i] = data::root_before_first(absolute.back(), D);
    }
    std::vector<std::span<const double>> inputs(model_form.begin(), model_form.end());
    // Observed root positions become the anchor for the next frame.
    auto observed_roots = [&](std::size_t t) {
        for (std::size_t i = 0; i < N; ++i) {
            roots[i] = {absolute[i][t * D], absolute[i][t * D + 1]};
        }
    };
    Tensor h = model.initial_belief(N, &rng);
    dist::DiagGaussian last;

    if (model.is_recurrent_baseline()) {
        const std::vector<LatentSource> none(N, LatentSource::none);
        for (std::size_t t = 0; t < spec.t_in; ++t) {
            last = model.decode(h, Tensor());
            h = model.belief_update(h, Tensor(), model.encode_normalized(model.normalize(gather_frames(inputs, t, D))));
            record(sinks, out.diverged, Phase::observe, h, Tensor(), none, in_data_units(model, last, roots));
            observed_roots(t);
        }
    } else {
        const bool latent = model.has_latent();
        const std::vector<LatentSource> sources(
            N, !latent ? LatentSource::none
                       : (spec.sampled_filtering ? LatentSource::posterior_sample : LatentSource::posterior_mean));
        for (std::size_t t = 0; t < spec.t_in; ++t) {
            const Tensor e = model.encode_normalized(model.normalize(gather_frames(inputs, t, D)));
            Tensor z;
            if (latent) {
                const auto q = model.posterior(h, e);
                z = spec.sampled_filtering ? dist::rsample(q, dist::standard_normal({N, model.latent_dim()}, rng))
                                           : q.mu;
            }
            h = model.belief_update(h, z, e);
            last = model.decode(h, z);
            record(sinks, out.diverged, Phase::observe, h, z, sources, in_data_units(model, last, roots));
            observed_roots(t);
        }
    }
    out.h = h;
    out.last_emission = last.mu;
    out.last_root = roots;
    return out;
}

std::vector<RolloutTrace> simulate(const model::Model& model, const Filtered& filtered, const RolloutSpec& spec,
                                   const std::vector<std::uint64_t>& seeds)
{
    validate(spec);
    const Tensor& h0 = filtered.h;
    const std::size_t N = h0.dim(0);
    if (h0.rank() != 2 || h0.dim(1) != model.hidden_dim() || seeds.size() != N ||
        filtered.last_root.size() != N || filtered.last_emission.dim(0) != N) {
        throw bad_input("simulate: belief must be [N, " + std::to_string(model.hidden_dim()) +
                        "] with N seeds, anchors and emissions");
    }
    const bool latent = model.has_latent();
    const std::size_t Z = model.latent_dim();
    const auto& iv = spec.intervention;
    if (iv && !latent) {
        throw bad_input("simulate: interventions need a model with a latent");
    }
    if (iv && iv->kind == InterventionKind::add_delta && iv->delta.size() != Z) {
        throw bad_input("simulate: delta has " + std::to_string(iv->delta.size()) + " entries, latent has " +
                        std::to_string(Z));
    }

    std::vector<RolloutTrace> traces(N);
    std::vector<std::vector<TraceStep>*> sinks;
    std::vector<std::mt19937_64> rngs;
    std::vector<std::mt19937_64> alt;
    for (std::size_t r = 0; r < N; ++r) {
        traces[r].seed = seeds[r];
        traces[r].steps.reserve(spec.t_pred);
        sinks.push_back(&traces[r].steps);
        rngs.emplace_back(seeds[r]);
        alt.emplace_back(seeds[r] ^ resample_stream);
    }
    std::vector<bool> diverged(N, false);
    Roots roots = filtered.last_root;
    // Predicted root positions become the anchor for the next frame.
    auto advance = [&](const dist::DiagGaussian& d) {
        if (!model.config().root_displacement) {
            return;
        }
        for (std::size_t r = 0; r < N; ++r) {
            roots[r] = {d.mu.at(r, 0), d.mu.at(r, 1)};
        }
    };
    Tensor h = h0;
    Tensor prev_mu = filtered.last_emission;
    const std::size_t encoded_before = model::Model::thread_encoder_calls();

    if (model.is_recurrent_baseline()) {
        const std::vector<LatentSource> none(N, LatentSource::none);
        for (std::size_t k = 1; k <= spec.t_pred; ++k) {
            const auto d = model.decode(h, Tensor());
            h = model.belief_update(h, Tensor(), model.encode_normalized(d.mu));
            const auto shown = in_data_units(model, d, roots);
            record(sinks, diverged, Phase::predict, h, Tensor(), none, shown);
            advance(shown);
        }
    } else {
        const Tensor null_e = model.null_embedding(N);
        const LatentSource base = !latent                          ? LatentSource::none
                                  : spec.mode == Mode::stochastic ? LatentSource::prior_sample
                                                                  : LatentSource::prior_mean;
        for (std::size_t k = 1; k <= spec.t_pred; ++k) {
            Tensor z;
            std::vector<LatentSource> sources(N, base);
            if (latent) {
                const auto p = model.prior(h);
                z = spec.mode == Mode::stochastic ? dist::rsample(p, noise_rows(rngs, Z)) : p.mu;
                if (iv && iv->step == k) {
                    switch (iv->kind) {
                    case InterventionKind::fix_to_mean:
                        z = p.mu;
                        break;
                    case InterventionKind::add_delta: {
                        std::vector<double> d;
                        for (std::size_t r = 0; r < N; ++r) {
                            d.insert(d.end(), iv->delta.begin(), iv->delta.end());
                        }
                        z = z + Tensor::from({N, Z}, std::move(d));
                        break;
                    }
                    case InterventionKind::resample:
                        z = dist::rsample(p, noise_rows(alt, Z));
                        break;
                    }
                    sources.assign(N, LatentSource::intervened);
                }
            }
            const Tensor e = spec.self_embed ? model.encode_normalized(prev_mu) : null_e;
            h = model.belief_update(h, z, e);
            const auto d = model.decode(h, z);
            prev_mu = d.mu;
            const auto shown = in_data_units(model, d, roots);
            record(sinks, diverged, Phase::predict, h, z, sources, shown);
            advance(shown);
        }
        if (!spec.self_embed && model::Model::thread_encoder_calls() != encoded_before) {
            throw Error(ErrorCategory::internal, "simulate: encoder invoked during latent-only prediction");
        }
    }
    for (std::size_t r = 0; r < N; ++r) {
        traces[r].diverged = diverged[r];
    }
    return traces;
}

RolloutTrace simulate(const model::Model& model, std::span<const double> h, const RolloutSpec& spec)
{
    Filtered f;
    f.h = Tensor::from({1, h.size()}, std::vector<double>(h.begin(), h.end()));
    f.last_root.assign(1, {0.0, 0.0});
    f.last_emission = Tensor::from({1, model.config().obs_dim}, std::vector<double>(model.config().obs_dim, 0.0));
    return simulate(model, f, spec, {spec.seed}).front();
}

std::size_t worker_count()
{
    if (const char* env = std::getenv("SBWM_THREADS")) {
        std::size_t n = 0;
        const std::string_view text(env);
        auto res = std::from_chars(text.data(), text.data() + text.size(), n);
        if (res.ec == std::errc() && n > 0) {
            return n;
        }
    }
    return std::max<std::size_t>(1, std::thread::hardware_concurrency());
}

std::vector<std::vector<RolloutTrace>> rollout_batch(const model::Model& model,
                                                     const std::vector<data::Window>& windows,
                                                     const RolloutSpec& spec)
{
    validate(spec);
    const std::size_t K = spec.samples;
    for (const auto& w : windows) {
        if (w.dim != model.config().obs_dim) {
            throw bad_input("rollout: window '" + w.source + "' has D=" + std::to_string(w.dim) +
                            ", model expects D=" + std::to_string(model.config().obs_dim));
        }
        if (w.t_in < spec.t_in) {
            throw bad_input("rollout: window '" + w.source + "' has only " + std::to_string(w.t_in) +
                            " observed frames");
        }
    }
    std::vector<std::vector<RolloutTrace>> out(windows.size());
    const std::size_t chunks = (windows.size() + chunk_windows - 1) / chunk_windows;

    auto run_chunk = [&](std::size_t c) {
        const std::size_t begin = c * chunk_windows;
        const std::size_t end = std::min(windows.size(), begin + chunk_windows);
        std::vector<std::span<const double>> obs;
        for (std::size_t i = begin; i < end; ++i) {
            // The observed frames directly precede the targets.
            const auto& w = windows[i];
            obs.emplace_back(w.frames.data() + (w.t_in - spec.t_in) * w.dim, spec.t_in * w.dim);
        }
        const auto filtered = filter(model, obs, spec);
        const std::size_t n = end - begin;
        Filtered rep;
        std::vector<double> h_rows;
        std::vector<double> mu_rows;
        std::vector<std::uint64_t> seeds;
        const std::size_t H = model.hidden_dim();
        const std::size_t D = model.config().obs_dim;
        for (std::size_t i = 0; i < n; ++i) {
            const auto h_row = filtered.h.data().subspan(i * H, H);
            const auto mu_row = filtered.last_emission.data().subspan(i * D, D);
            for (std::size_t k = 0; k < K; ++k) {
                h_rows.insert(h_rows.end(), h_row.begin(), h_row.end());
                mu_rows.insert(mu_rows.end(), mu_row.begin(), mu_row.end());
                rep.last_root.push_back(filtered.last_root[i]);
                seeds.push_back(spec.seed + k);
            }
        }
        rep.h = Tensor::from({n * K, H}, std::move(h_rows));
        rep.last_emission = Tensor::from({n * K, D}, std::move(mu_rows));
        auto sims = simulate(model, rep, spec, seeds);
        for (std::size_t i = 0; i < n; ++i) {
            auto& slot = out[begin + i];
            slot.resize(K);
            for (std::size_t k = 0; k < K; ++k) {
                auto& tr = slot[k];
                auto& sim = sims[i * K + k];
                tr.window = windows[begin + i].source + "@" + std::to_string(windows[begin + i].start);
                tr.sample = k;
                tr.seed = sim.seed;
                tr.steps = filtered.steps[i];
                if (filtered.diverged[i]) {
                    tr.diverged = true;
                    continue;
                }
                tr.steps.insert(tr.steps.end(), std::make_move_iterator(sim.steps.begin()),
                                std::make_move_iterator(sim.steps.end()));
                tr.diverged = sim.diverged;
            }
        }
    };

    const std::size_t workers = std::min(worker_count(), chunks);
    if (workers <= 1) {
        for (std::size_t c = 0; c < chunks; ++c) {
            run_chunk(c);
        }
        return out;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::mutex failure_mutex;
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
        pool.emplace_back([&] {
            for (std::size_t c = next++; c < chunks; c = next++) {
                try {
                    run_chunk(c);
                } catch (...) {
                    std::lock_guard lock(failure_mutex);
                    if (!failure) {
                        failure = std::current_exception();
                    }
                }
            }
        });
    }
    for (auto& t : pool) {
        t.join();
    }
    if (failure) {
        std::rethrow_exception(failure);
    }
    return out;
}

} // namespace sbwm::rollout
