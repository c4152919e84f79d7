// Acceptance run: one PASS/FAIL line per criterion A1-A9.
//
//   acceptance [--only A1,A4] [--work DIR]
//
// Tolerances and thresholds are fixed below. Exit code 0 only when every
// selected criterion passes.

#include "oracles.hpp"

#include "sbwm/cli.hpp"
#include "sbwm/numkit/checkpoint.hpp"

#include <spdlog/spdlog.h>

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>

#ifndef SBWM_CONFIG_DIR
#error "SBWM_CONFIG_DIR must point at the configs directory"
#endif
#ifndef SBWM_METRICS_TEST
#error "SBWM_METRICS_TEST must name the metrics test binary"
#endif

using namespace sbwm;
using nk::Tensor;
namespace fs = std::filesystem;

namespace {

// --- pinned tolerances ---------------------------------------------------------
constexpr int a1_configs = 24;
constexpr double a1_rel_tol = 1e-4;
constexpr double a1_budget_s = 60;
constexpr int a2_pairs = 50;
constexpr std::size_t a2_samples = 100000;
constexpr double a2_se_multiple = 3.0;
constexpr double a2_quad_tol = 1e-6;
constexpr double a2_budget_s = 60;
constexpr int a3_poses = 10000;
constexpr double a3_bone_tol = 1e-9;
constexpr double a3_budget_s = 10;
constexpr std::uint64_t a4_seeds[] = {0, 1, 2};
constexpr double a4_persistence_ratio = 2.0;
constexpr double a4_budget_s = 30 * 60;
constexpr double a5_bok_ratio = 0.9;
constexpr double a5_budget_s = 20 * 60;
constexpr double a6_min_kl = 0.1;
constexpr std::size_t a6_states = 100;
constexpr double a6_budget_s = 5 * 60;
constexpr std::size_t a7_samples = 20;
constexpr double a7_min_isotonic_r2 = 0.9;
constexpr double a7_budget_s = 10 * 60;
constexpr double a8_budget_s = 60;
constexpr std::size_t a9_steps = 300;
constexpr double a9_budget_s = 10 * 60;

struct Outcome {
    bool pass = false;
    std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0)
{
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(const char* format, auto... args)
{
    char buf[512];
    std::snprintf(buf, sizeof(buf), format, args...);
    return buf;
}

cli::RunConfig load(const std::string& name)
{
    return cli::load_config(fs::path(SBWM_CONFIG_DIR) / name);
}

std::string slurp(const fs::path& p)
{
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// --- A1 ------------------------------------------------------------------------

Outcome a1()
{
    std::mt19937_64 rng(101);
    std::uniform_int_distribution<std::size_t> dim(2, 6);
    const model::ModelKind kinds[] = {model::ModelKind::sbwm, model::ModelKind::latent_no_feedback,
                                      model::ModelKind::no_latent, model::ModelKind::deterministic_rnn};
    double worst = 0.0;
    std::size_t checks = 0;
    for (int c = 0; c < a1_configs; ++c) {
        model::SbwmConfig mc;
        mc.kind = kinds[c % 4];
        mc.obs_dim = 3 + dim(rng);
        mc.embed_dim = dim(rng);
        mc.hidden_dim = dim(rng);
        mc.latent_dim = dim(rng);
        mc.mlp_hidden = dim(rng);
        mc.root_displacement = c % 2 == 0;
        model::Model m(mc, rng());
        if (c % 3 == 0) {
            std::vector<double> mean(mc.obs_dim);
            std::vector<double> scale(mc.obs_dim);
            for (std::size_t i = 0; i < mc.obs_dim; ++i) {
                mean[i] = 0.1 * static_cast<double>(i);
                scale[i] = 0.5 + 0.1 * static_cast<double>(i);
            }
            m.set_normalization(mean, scale);
        }
        std::vector<Tensor> params;
        for (const auto& p : m.params()) {
            params.push_back(p.tensor);
        }
        const std::size_t B = 2;
        auto x = oracle::random_tensor({B, mc.obs_dim}, rng);
        auto h = oracle::random_tensor({B, m.hidden_dim()}, rng);
        auto z = oracle::random_tensor({B, mc.latent_dim}, rng);
        auto w = oracle::random_tensor({B, mc.obs_dim}, rng);
        auto run = [&](const std::function<Tensor()>& f, std::vector<Tensor> leaves) {
            for (const auto& p : params) {
                leaves.push_back(p);
            }
            const auto r = oracle::gradcheck(f, leaves);
            m.params().clear_grad();
            worst = std::max(worst, r.rel_error);
            ++checks;
        };
        // Heads one at a time, then the full one-step objective.
        run([&] { return nk::sum(m.encode(x) * m.encode(x)); }, {x});
        run([&] { return nk::sum(m.belief_update(h, z, m.encode(x)) * nk::tanh(h)); }, {x, h, z});
        run([&] {
            const auto d = m.decode(h, z);
            return nk::sum(d.mu * w) + nk::sum(nk::log(d.sigma));
        },
            {h, z});
        if (m.has_latent()) {
            run([&] {
                const auto p = m.prior(h);
                return nk::sum(p.mu * p.mu) + nk::sum(nk::log(p.sigma));
            },
                {h});
            run([&] { return nk::sum(dist::kl_divergence(m.posterior(h, m.encode(x)), m.prior(h))); }, {x, h});
        }
        training::TrainConfig tc;
        tc.free_bits_lambda = 0.05;
        std::vector<std::vector<double>> batch(B, std::vector<double>(4 * mc.obs_dim));
        std::normal_distribution<double> n(0.0, 0.5);
        for (auto& row : batch) {
            for (auto& v : row) {
                v = n(rng);
            }
        }
        const double tf = mc.kind == model::ModelKind::deterministic_rnn ? 1.0 : 0.5;
        const auto plan = training::make_plan(m, B, 4, tf, rng);
        run([&] { return training::objective(m, batch, plan, 0.7, tc).loss; }, {});
    }
    return {worst < a1_rel_tol,
            fmt("%d configs, %zu gradchecks, worst relative error %.2e (tol %.0e)", a1_configs, checks, worst,
                a1_rel_tol)};
}

// --- A2 ------------------------------------------------------------------------

Outcome a2()
{
    std::mt19937_64 rng(202);
    std::uniform_real_distribution<double> u(-1.5, 1.5);
    std::uniform_real_distribution<double> s(0.3, 2.0);
    int within = 0;
    double worst_z = 0.0;
    for (int pair = 0; pair < a2_pairs; ++pair) {
        const std::size_t n = 1 + static_cast<std::size_t>(pair % 5);
        std::vector<double> mq(n), sq(n), mp(n), sp(n);
        for (std::size_t i = 0; i < n; ++i) {
            mq[i] = u(rng);
            sq[i] = s(rng);
            mp[i] = u(rng);
            sp[i] = s(rng);
        }
        const dist::DiagGaussian q{Tensor::vector(mq), Tensor::vector(sq)};
        const dist::DiagGaussian p{Tensor::vector(mp), Tensor::vector(sp)};
        const double kl = dist::kl_divergence(q, p).item();
        const auto mc = oracle::kl_monte_carlo(mq, sq, mp, sp, a2_samples, rng);
        const double zscore = std::abs(kl - mc.mean) / mc.standard_error;
        worst_z = std::max(worst_z, zscore);
        within += zscore < a2_se_multiple ? 1 : 0;
    }
    // Density integrates to 1 and reproduces its mean and variance.
    double worst_quad = 0.0;
    for (int i = 0; i < 10; ++i) {
        const double mu = u(rng);
        const double sigma = s(rng);
        const dist::DiagGaussian d{Tensor::vector({mu}), Tensor::vector({sigma})};
        auto density = [&](double x) { return std::exp(dist::log_prob(d, Tensor::vector({x})).item()); };
        const double lo = mu - 14 * sigma;
        const double hi = mu + 14 * sigma;
        const double mass = oracle::simpson(density, lo, hi, 20000);
        const double mean = oracle::simpson([&](double x) { return x * density(x); }, lo, hi, 20000);
        const double var =
            oracle::simpson([&](double x) { return (x - mu) * (x - mu) * density(x); }, lo, hi, 20000);
        worst_quad = std::max({worst_quad, std::abs(mass - 1.0), std::abs(mean - mu), std::abs(var - sigma * sigma)});
    }
    return {within == a2_pairs && worst_quad < a2_quad_tol,
            fmt("KL within %.0f SE on %d/%d pairs (max %.2f SE); quadrature max error %.1e (tol %.0e)",
                a2_se_multiple, within, a2_pairs, worst_z, worst_quad, a2_quad_tol)};
}

// --- A3 ------------------------------------------------------------------------

Outcome a3()
{
    const auto chain = body::default_chain();
    std::mt19937_64 rng(303);
    std::normal_distribution<double> n(0.0, 1.0);
    double worst = 0.0;
    std::size_t violating = 0;
    for (int i = 0; i < a3_poses; ++i) {
        std::vector<double> pose(chain.param_dim());
        for (auto& v : pose) {
            v = n(rng);
        }
        const auto joints = body::forward_kinematics(chain, pose);
        worst = std::max(worst, body::max_bone_length_deviation(chain, joints));
        violating += body::bone_length_violations(chain, joints) > 0 ? 1 : 0;
    }
    return {worst < a3_bone_tol && violating == 0,
            fmt("%d poses, max bone deviation %.1e m (tol %.0e), %zu violating", a3_poses, worst, a3_bone_tol,
                violating)};
}

// --- A4 / A6 -------------------------------------------------------------------

struct GaitRuns {
    cli::RunConfig config;
    cli::Prepared data;
    std::map<std::uint64_t, std::map<std::string, cli::VariantRun>> runs; // seed -> variant
};

const cli::Variant& variant(const std::string& name)
{
    static const auto all = cli::ablation_variants();
    for (const auto& v : all) {
        if (v.name == name) {
            return v;
        }
    }
    throw std::logic_error("no variant " + name);
}

Outcome a4(GaitRuns& g, const fs::path& work)
{
    g.config = load("acceptance_gait.json");
    g.data = cli::prepare_data(g.config, data::Representation::manifold);
    std::string detail;
    bool pass = true;
    for (auto seed : a4_seeds) {
        for (const char* name : {"sbwm", "no-latent", "rnn"}) {
            const auto dir = work / "a4" / (std::string(name) + "-seed" + std::to_string(seed));
            g.runs[seed].emplace(name, cli::run_variant(g.config, variant(name), seed, g.data, dir));
        }
        const auto& s = g.runs[seed].at("sbwm").report;
        const auto& nl = g.runs[seed].at("no-latent").report;
        const auto& rnn = g.runs[seed].at("rnn").report;
        const bool a = s.persistence >= a4_persistence_ratio * nl.persistence;
        const bool b = s.freeze_rate < nl.freeze_rate;
        const bool c = s.mpjpe < rnn.mpjpe;
        pass = pass && a && b && c;
        detail += fmt("[seed %llu: (a) pers %.4f vs %.4f %s (b) freeze %.3f vs %.3f %s (c) mpjpe %.2f vs rnn %.2f %s] ",
                      static_cast<unsigned long long>(seed), s.persistence, nl.persistence, a ? "ok" : "FAIL",
                      s.freeze_rate, nl.freeze_rate, b ? "ok" : "FAIL", s.mpjpe, rnn.mpjpe, c ? "ok" : "FAIL");
    }
    return {pass, detail};
}

std::vector<double> jacobian_norms(const model::Model& m, const std::vector<data::Window>& windows,
                                   const cli::RunConfig& config)
{
    const auto d = cli::diagnose(m, std::nullopt, windows, config, 8, a6_states);
    return d.jacobian_norms;
}

Outcome a6(const GaitRuns& g, const fs::path& work)
{
    bool pass = true;
    std::string detail;
    for (const auto& [seed, runs] : g.runs) {
        const auto& run = runs.at("sbwm");
        const auto& rec = run.log.records;
        const std::size_t tail = std::max<std::size_t>(1, rec.size() / 10);
        double kl = 0.0;
        for (std::size_t i = rec.size() - tail; i < rec.size(); ++i) {
            kl += rec[i].raw_kl;
        }
        kl /= static_cast<double>(tail);
        const auto norms = jacobian_norms(run.model, g.data.windows, g.config);
        const double lo = norms.empty() ? 0.0 : *std::min_element(norms.begin(), norms.end());
        const bool ok = kl > a6_min_kl && norms.size() == a6_states && lo > 0.0;
        pass = pass && ok;
        detail += fmt("[seed %llu: raw KL %.3f nats/step, min |dh/dz| %.3e over %zu states] ",
                      static_cast<unsigned long long>(seed), kl, lo, norms.size());
    }
    auto cfg = g.config;
    cfg.train.max_steps = std::min<std::size_t>(cfg.train.max_steps, 500);
    const auto lnf = cli::run_variant(cfg, variant("latent-no-feedback"), 0, g.data, work / "a6" / "lnf");
    const auto norms = jacobian_norms(lnf.model, g.data.windows, g.config);
    const bool zero = norms.size() == a6_states &&
                      std::all_of(norms.begin(), norms.end(), [](double v) { return v == 0.0; });
    pass = pass && zero;
    detail += fmt("[latent-no-feedback: %zu states, all exactly 0: %s]", norms.size(), zero ? "yes" : "no");
    return {pass, detail};
}

// --- A5 / A7 -------------------------------------------------------------------

struct BranchRuns {
    cli::RunConfig config;
    cli::Prepared data;
    std::optional<cli::VariantRun> sbwm;
};

Outcome a5(BranchRuns& b, const fs::path& work)
{
    b.config = load("acceptance_branching.json");
    b.config.rollout.samples = 10;
    b.data = cli::prepare_data(b.config, data::Representation::manifold);
    b.sbwm.emplace(cli::run_variant(b.config, variant("sbwm"), 0, b.data, work / "a5" / "sbwm"));
    const auto rnn = cli::run_variant(b.config, variant("rnn"), 0, b.data, work / "a5" / "rnn");
    const auto& s = b.sbwm->report.best_of_k;
    const auto& r = rnn.report.best_of_k;
    const bool order = s.at(10) < s.at(5) && s.at(5) < s.at(1) && s.at(10) <= a5_bok_ratio * s.at(1);
    const bool flat = r.at(1) == r.at(5) && r.at(5) == r.at(10);
    return {order && flat, fmt("sbwm BoK1/5/10 = %.2f / %.2f / %.2f mm (ratio %.3f, need <= %.2f); rnn = %.4f / "
                               "%.4f / %.4f mm (%s)",
                               s.at(1), s.at(5), s.at(10), s.at(10) / s.at(1), a5_bok_ratio, r.at(1), r.at(5), r.at(10),
                               flat ? "constant" : "NOT constant")};
}

Outcome a7(BranchRuns& b)
{
    auto spec = b.config.rollout;
    spec.samples = a7_samples;
    spec.mode = rollout::Mode::stochastic;
    const auto traces = rollout::rollout_batch(b.sbwm->model, b.data.windows, spec);
    const auto report = metrics::evaluate(body::default_chain(), traces, b.data.windows, b.config.eval);
    const double rho = report.calibration_rho.value_or(0.0);
    const auto trend = metrics::isotonic_trend(report.variance_by_horizon);
    const bool ok = report.calibration_rho && rho > 0.0 && trend.increasing && trend.r2 >= a7_min_isotonic_r2;
    return {ok, fmt("K=%zu over %zu windows: Spearman rho %.3f; per-horizon variance isotonic R2 %.3f (need >= %.2f), "
                    "first %.2e last %.2e",
                    a7_samples, report.windows, rho, trend.r2, a7_min_isotonic_r2, report.variance_by_horizon.front(),
                    report.variance_by_horizon.back())};
}

// --- A8 ------------------------------------------------------------------------

Outcome a8()
{
    const std::string cmd = std::string(SBWM_METRICS_TEST) + " --no-intro=true --minimal=true > /dev/null 2>&1";
    const int rc = std::system(cmd.c_str());
    return {rc == 0, fmt("metric example suite exit status %d", rc)};
}

// --- A9 ------------------------------------------------------------------------

Outcome a9(const fs::path& work)
{
    auto cfg = load("acceptance_gait.json");
    cfg.train.max_steps = a9_steps;
    cfg.train.checkpoint_every = a9_steps / 2;
    const auto data = cli::prepare_data(cfg, data::Representation::manifold);
    std::vector<fs::path> dirs;
    for (int rep = 0; rep < 2; ++rep) {
        const auto dir = work / "a9" / ("run" + std::to_string(rep));
        fs::remove_all(dir);
        cli::run_variant(cfg, variant("sbwm"), 7, data, dir);
        dirs.push_back(dir);
    }
    // Training logs differ only in wall-clock time; compare every other column.
    auto without_time = [](const fs::path& p) {
        auto log = training::TrainLog::load(p);
        for (auto& r : log.records) {
            r.wall_time = 0.0;
        }
        return log.to_csv();
    };
    std::vector<std::string> differing;
    std::size_t compared = 0;
    for (const auto& entry : fs::directory_iterator(dirs[0])) {
        const auto name = entry.path().filename();
        const auto other = dirs[1] / name;
        ++compared;
        const bool same = name == "train_log.csv" ? without_time(entry.path()) == without_time(other)
                                                  : slurp(entry.path()) == slurp(other);
        if (!fs::exists(other) || !same) {
            differing.push_back(name.string());
        }
    }
    std::string list;
    for (const auto& d : differing) {
        list += " " + d;
    }
    return {differing.empty() && compared >= 6,
            fmt("%zu artifacts compared (checkpoints, manifests, traces, report, log); differing:%s", compared,
                differing.empty() ? " none" : list.c_str())};
}

} // namespace

int main(int argc, char** argv)
{
    std::set<std::string> only;
    fs::path work = fs::temp_directory_path() / "sbwm_acceptance";
    for (int i = 1; i < argc; ++i) {
        const std::string a = argv[i];
        if (a == "--only" && i + 1 < argc) {
            std::stringstream ss(argv[++i]);
            for (std::string id; std::getline(ss, id, ',');) {
                only.insert(id);
            }
        } else if (a == "--work" && i + 1 < argc) {
            work = argv[++i];
        } else {
            std::fprintf(stderr, "usage: acceptance [--only A1,A2,...] [--work DIR]\n");
            return 2;
        }
    }
    spdlog::set_level(spdlog::level::warn);
    fs::create_directories(work);

    auto selected = [&](const std::string& id) { return only.empty() || only.count(id) > 0; };
    int failures = 0;
    auto report = [&](const std::string& id, double budget, const std::function<Outcome()>& fn) {
        const auto t0 = Clock::now();
        Outcome o;
        try {
            o = fn();
        } catch (const std::exception& e) {
            o = {false, std::string("error: ") + e.what()};
        }
        const double s = seconds_since(t0);
        const bool in_time = s < budget;
        const bool pass = o.pass && in_time;
        failures += pass ? 0 : 1;
        std::printf("%s %s %.1fs (budget %.0fs%s) %s\n", id.c_str(), pass ? "PASS" : "FAIL", s, budget,
                    in_time ? "" : ", EXCEEDED", o.detail.c_str());
        std::fflush(stdout);
    };

    if (selected("A1")) {
        report("A1", a1_budget_s, a1);
    }
    if (selected("A2")) {
        report("A2", a2_budget_s, a2);
    }
    if (selected("A3")) {
        report("A3", a3_budget_s, a3);
    }
    GaitRuns gait;
    if (selected("A4") || selected("A6")) {
        report("A4", a4_budget_s, [&] { return a4(gait, work); });
    }
    if (selected("A6")) {
        report("A6", a6_budget_s, [&] {
            if (gait.runs.empty()) {
                return Outcome{false, "A4 models unavailable"};
            }
            return a6(gait, work);
        });
    }
    BranchRuns branch;
    if (selected("A5") || selected("A7")) {
        report("A5", a5_budget_s, [&] { return a5(branch, work); });
    }
    if (selected("A7")) {
        report("A7", a7_budget_s, [&] {
            if (!branch.sbwm) {
                return Outcome{false, "A5 model unavailable"};
            }
            return a7(branch);
        });
    }
    if (selected("A8")) {
        report("A8", a8_budget_s, a8);
    }
    if (selected("A9")) {
        report("A9", a9_budget_s, [&] { return a9(work); });
    }
    return failures == 0 ? 0 : 1;
}
