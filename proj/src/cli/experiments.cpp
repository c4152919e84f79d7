#include "sbwm/cli.hpp"

#include <spdlog/spdlog.h>

#include <cmath>
#include <cstdio>

namespace sbwm::cli {

namespace {

std::string num(double v, int precision = 4)
{
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.*f", precision, v);
    return buf;
}

} // namespace

Prepared prepare_data(const RunConfig& config, data::Representation repr)
{
    const auto chain = body::default_chain();
    std::vector<data::MotionSequence> seqs;
    Prepared out;
    if (config.data.path.empty()) {
        seqs = data::generate(config.data.synthetic, chain);
    } else {
        const std::filesystem::path p(config.data.path);
        if (!std::filesystem::exists(p)) {
            throw not_found("data file '" + p.string() + "' does not exist");
        }
        auto in = data::ingest(p, data::format_from_extension(p));
        seqs = std::move(in.sequences);
        out.warnings = std::move(in.warnings);
    }
    if (seqs.empty()) {
        throw bad_input("dataset has no sequences");
    }
    const auto have = seqs.front().representation;
    if (have != repr) {
        if (have != data::Representation::manifold) {
            throw bad_input("dataset holds joint positions; a manifold model needs chain parameters");
        }
        seqs = data::to_joint_space(seqs, chain);
    }
    std::tie(out.train, out.test) = data::split(seqs, config.data.split_ratio, config.data.split_seed);
    auto w = evaluation_windows(config, out.test);
    out.windows = std::move(w.windows);
    out.warnings.insert(out.warnings.end(), w.warnings.begin(), w.warnings.end());
    if (out.windows.empty()) {
        throw bad_input("no held-out evaluation windows of " + std::to_string(config.rollout.t_in) + "+" +
                        std::to_string(config.rollout.t_pred) + " frames");
    }
    return out;
}

data::Windowed evaluation_windows(const RunConfig& config, const std::vector<data::MotionSequence>& sequences)
{
    const bool branching = !sequences.empty() && std::all_of(sequences.begin(), sequences.end(), [](const auto& s) {
        return s.branch_frame >= 0;
    });
    if (branching) {
        return data::branch_windows(sequences, config.rollout.t_in, config.rollout.t_pred);
    }
    return data::windows(sequences, config.rollout.t_in, config.rollout.t_pred, config.data.stride);
}

model::SbwmConfig variant_config(const RunConfig& config, model::ModelKind kind, data::Representation repr,
                                 std::size_t obs_dim)
{
    auto c = config.model;
    c.kind = kind;
    c.representation = repr;
    c.obs_dim = obs_dim;
    c.obs_mean.clear();
    c.obs_scale.clear();
    return c;
}

std::vector<Variant> ablation_variants()
{
    using model::ModelKind;
    using data::Representation;
    return {{"sbwm", ModelKind::sbwm, Representation::manifold},
            {"no-latent", ModelKind::no_latent, Representation::manifold},
            {"latent-no-feedback", ModelKind::latent_no_feedback, Representation::manifold},
            {"rnn", ModelKind::deterministic_rnn, Representation::manifold},
            {"sbwm-joints", ModelKind::sbwm, Representation::joint_space}};
}

VariantRun run_variant(const RunConfig& config, const Variant& variant, std::uint64_t seed, const Prepared& data,
                       const std::filesystem::path& dir)
{
    if (data.train.empty()) {
        throw bad_input("no training sequences");
    }
    const auto mc = variant_config(config, variant.kind, variant.repr, data.train.front().dim);
    VariantRun run{model::build_baseline(variant.kind, mc, seed), {}, {}, {}};
    auto tc = config.train;
    tc.seed = seed;
    run.log = training::train(run.model, data.train, tc, dir);
    auto spec = config.rollout;
    spec.intervention.reset();
    run.traces = rollout::rollout_batch(run.model, data.windows, spec);
    run.report = metrics::evaluate(body::default_chain(), run.traces, data.windows, config.eval);
    run.report.label = variant.name;
    if (!dir.empty()) {
        rollout::write_text(dir / "traces.ndjson", rollout::traces_ndjson(run.traces));
        rollout::write_text(dir / "report.json", metrics::report_json(run.report));
        rollout::write_text(dir / "report.csv",
                            metrics::report_csv_header() + "\n" + metrics::report_csv_row(run.report) + "\n");
    }
    return run;
}

std::string ablation_csv(const std::vector<AblationRow>& rows)
{
    std::string out = "variant,representation,seed,config_hash,status,mpjpe_mm,persistence,freeze_rate,violations,"
                      "joint_persistence,vel_err,acc_err\n";
    for (const auto& r : rows) {
        const bool ok = r.status == "ok";
        std::string status = r.status;
        for (auto& ch : status) {
            if (ch == ',' || ch == '\n') {
                ch = ';';
            }
        }
        out += r.variant + ',' + r.report.representation + ',' + std::to_string(r.seed) + ',' + r.config_hash + ',' +
               status;
        if (ok) {
            out += ',' + num(r.report.mpjpe, 6) + ',' + num(r.report.persistence, 6) + ',' +
                   num(r.report.freeze_rate, 6) + ',' + std::to_string(r.report.violations) + ',' +
                   num(r.report.joint_persistence, 6) + ',' + num(r.report.vel_err, 6) + ',' +
                   num(r.report.acc_err, 6);
        } else {
            out += ",,,,,,,";
        }
        out += '\n';
    }
    return out;
}

std::string ablation_text(const std::vector<AblationRow>& rows)
{
    std::string out;
    char line[256];
    std::snprintf(line, sizeof(line), "%-20s %-12s %5s %10s %12s %8s %10s  %s\n", "variant", "repr", "seed",
                  "MPJPE(mm)", "persistence", "freeze", "violations", "status");
    out += line;
    for (const auto& r : rows) {
        if (r.status == "ok") {
            std::snprintf(line, sizeof(line), "%-20s %-12s %5llu %10.2f %12.4f %8.3f %10zu  ok\n", r.variant.c_str(),
                          r.report.representation.c_str(), static_cast<unsigned long long>(r.seed), r.report.mpjpe,
                          r.report.persistence, r.report.freeze_rate, r.report.violations);
        } else {
            std::snprintf(line, sizeof(line), "%-20s %-12s %5llu %10s %12s %8s %10s  %s\n", r.variant.c_str(), "-",
                          static_cast<unsigned long long>(r.seed), "-", "-", "-", "-", r.status.c_str());
        }
        out += line;
    }
    return out;
}

Diagnostics diagnose(const model::Model& model, const std::optional<training::TrainLog>& log,
                     const std::vector<data::Window>& windows, const RunConfig& config, std::size_t max_windows,
                     std::size_t states)
{
    Diagnostics d;
    if (log) {
        d.kl_curve = log->records;
    } else {
        d.warnings.push_back("no training log: KL curve omitted");
    }
    if (!model.has_latent()) {
        d.warnings.push_back("model has no latent: intervention traces and Jacobian statistics omitted");
        return d;
    }
    if (windows.empty()) {
        throw bad_input("diagnose: no windows");
    }
    const std::vector<data::Window> subset(windows.begin(),
                                           windows.begin() + static_cast<std::ptrdiff_t>(
                                                                 std::min(max_windows, windows.size())));
    auto spec = config.rollout;
    spec.samples = 1;
    spec.mode = rollout::Mode::stochastic;
    const auto& requested = config.rollout.intervention;
    d.intervention_step = requested ? requested->step : std::min<std::size_t>(5, spec.t_pred);
    spec.intervention.reset();

    auto first = [](std::vector<std::vector<rollout::RolloutTrace>> t) {
        std::vector<rollout::RolloutTrace> out;
        for (auto& g : t) {
            out.push_back(std::move(g.front()));
        }
        return out;
    };
    d.baseline = first(rollout::rollout_batch(model, subset, spec));
    auto mean_spec = spec;
    mean_spec.mode = rollout::Mode::mean;
    d.fixed_mean = first(rollout::rollout_batch(model, subset, mean_spec));
    auto perturb = spec;
    rollout::Intervention iv;
    iv.step = d.intervention_step;
    iv.kind = rollout::InterventionKind::add_delta;
    iv.delta = requested && requested->kind == rollout::InterventionKind::add_delta
                   ? requested->delta
                   : std::vector<double>(model.latent_dim(), 1.0);
    perturb.intervention = iv;
    d.perturbed = first(rollout::rollout_batch(model, subset, perturb));

    // (h_{t-1}, z_t) pairs along stochastic predictions.
    const std::size_t per_sample = subset.size() * spec.t_pred;
    auto jspec = spec;
    jspec.samples = std::max<std::size_t>(1, (states + per_sample - 1) / per_sample);
    const auto traces = rollout::rollout_batch(model, subset, jspec);
    const std::vector<double> e(model.config().embed_dim, 0.0);
    for (const auto& group : traces) {
        for (const auto& tr : group) {
            const std::size_t obs = tr.count(rollout::Phase::observe);
            for (std::size_t s = obs; s < tr.steps.size() && d.jacobian_norms.size() < states; ++s) {
                const auto jac = model::belief_jacobian_z(model, tr.steps[s - 1].h, tr.steps[s].z, e);
                d.jacobian_norms.push_back(model::frobenius_norm(jac));
            }
        }
    }
    return d;
}

} // namespace sbwm::cli
