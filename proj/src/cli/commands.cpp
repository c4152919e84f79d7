#include "sbwm/cli.hpp"

#include "json.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <ctime>
#include <map>
#include <numeric>
#include <ostream>

namespace sbwm::cli {

namespace {

using json = nlohmann::json;
namespace fs = std::filesystem;

std::uint64_t seed_of(const RunConfig& c)
{
    return c.seed;
}

fs::path require_file(const std::string& path, const char* flag)
{
    if (path.empty()) {
        throw bad_input(std::string(flag) + " is required");
    }
    if (!fs::exists(path)) {
        throw not_found(std::string(flag) + " '" + path + "' does not exist");
    }
    return path;
}

void write_config(const fs::path& dir, const RunConfig& config)
{
    rollout::write_text(dir / "config.json", config_json(config));
}

std::string report_text(const metrics::MetricsReport& r)
{
    std::string out;
    char line[256];
    auto add = [&](const char* name, const std::string& value) {
        std::snprintf(line, sizeof(line), "%-22s %s\n", name, value.c_str());
        out += line;
    };
    auto f = [](double v, int p) {
        char b[64];
        std::snprintf(b, sizeof(b), "%.*f", p, v);
        return std::string(b);
    };
    add("label", r.label);
    add("windows", std::to_string(r.windows) + " (" + std::to_string(r.diverged) + " diverged)");
    add("samples", std::to_string(r.samples));
    add("representation", r.representation);
    add("MPJPE (mm)", f(r.mpjpe, 2));
    add("velocity error", f(r.vel_err, 5));
    add("acceleration error", f(r.acc_err, 5));
    add("persistence", f(r.persistence, 5));
    add("joint persistence", f(r.joint_persistence, 5));
    add("freeze rate", f(r.freeze_rate, 3));
    add("violations", std::to_string(r.violations));
    add("calibration rho", r.calibration_rho ? f(*r.calibration_rho, 3) : std::string("undefined"));
    for (const auto& [k, v] : r.best_of_k) {
        add(("best-of-" + std::to_string(k) + " (mm)").c_str(), f(v, 2));
    }
    return out;
}

int cmd_gen_data(const RunConfig& config, const Options& o, std::ostream& log)
{
    if (o.out.empty()) {
        throw bad_input("--out <file.csv|file.ndjson> is required");
    }
    const fs::path path(o.out);
    const auto format = data::format_from_extension(path);
    auto seqs = data::generate(config.data.synthetic, body::default_chain());
    if (config.model.representation == data::Representation::joint_space) {
        seqs = data::to_joint_space(seqs, body::default_chain());
    }
    if (!path.parent_path().empty()) {
        fs::create_directories(path.parent_path());
    }
    data::export_sequences(path, seqs, format);
    log << "wrote " << seqs.size() << " sequences to " << path.string() << "\n";
    return 0;
}

int cmd_train(const RunConfig& config, std::ostream& log)
{
    auto prepared = prepare_data(config, config.model.representation);
    for (const auto& w : prepared.warnings) {
        spdlog::warn("{}", w);
    }
    const auto dir = make_run_dir(config.out, seed_of(config), "train");
    write_config(dir, config);
    const auto mc =
        variant_config(config, config.model.kind, config.model.representation, prepared.train.front().dim);
    auto model = model::build_baseline(mc.kind, mc, config.seed);
    auto tc = config.train;
    tc.seed = config.seed;
    training::train(model, prepared.train, tc, dir);
    log << "run " << dir.string() << "\n";
    log << "checkpoint " << (dir / "model.ckpt").string() << "\n";
    return 0;
}

int cmd_rollout(const RunConfig& config, const Options& o, std::ostream& log)
{
    const auto ckpt = require_file(o.ckpt, "--ckpt");
    const auto model = model::load_model(ckpt);
    auto prepared = prepare_data(config, model.config().representation);
    const auto dir = make_run_dir(config.out, seed_of(config), "rollout");
    write_config(dir, config);
    const auto traces = rollout::rollout_batch(model, prepared.windows, config.rollout);
    rollout::write_text(dir / "traces.ndjson", rollout::traces_ndjson(traces));
    rollout::write_text(dir / "poses.csv", rollout::poses_csv(traces));
    log << "run " << dir.string() << "\n";
    log << "traces " << (dir / "traces.ndjson").string() << " (" << traces.size() << " windows x "
        << config.rollout.samples << " samples)\n";
    return 0;
}

int cmd_eval(const RunConfig& config, const Options& o, std::ostream& log)
{
    const auto path = require_file(o.traces, "--traces");
    const auto traces = rollout::parse_traces_ndjson(rollout::read_text(path));
    if (traces.empty()) {
        throw bad_input("traces file holds no traces");
    }
    auto prepared = prepare_data(config, config.model.representation);
    std::map<std::string, const data::Window*> by_id;
    for (const auto& w : prepared.windows) {
        by_id[w.source + "@" + std::to_string(w.start)] = &w;
    }
    std::vector<data::Window> truth;
    for (const auto& group : traces) {
        const auto it = by_id.find(group.front().window);
        if (it == by_id.end()) {
            throw bad_input("trace window '" + group.front().window + "' is not a held-out window of the data");
        }
        truth.push_back(*it->second);
    }
    auto report = metrics::evaluate(body::default_chain(), traces, truth, config.eval);
    report.label = path.parent_path().filename().string();
    const auto dir = make_run_dir(config.out, seed_of(config), "eval");
    write_config(dir, config);
    rollout::write_text(dir / "report.json", metrics::report_json(report));
    rollout::write_text(dir / "report.csv",
                        metrics::report_csv_header() + "\n" + metrics::report_csv_row(report) + "\n");
    const auto text = report_text(report);
    rollout::write_text(dir / "report.txt", text);
    log << text << "report " << (dir / "report.json").string() << "\n";
    return 0;
}

int cmd_ablate(const RunConfig& config, std::ostream& log)
{
    const auto dir = make_run_dir(config.out, seed_of(config), "ablate");
    write_config(dir, config);
    const auto seeds = config.seeds.empty() ? std::vector<std::uint64_t>{config.seed} : config.seeds;
    const auto hash = config_hash(config);
    std::map<data::Representation, Prepared> prepared;
    std::vector<AblationRow> rows;
    for (auto seed : seeds) {
        for (const auto& v : ablation_variants()) {
            AblationRow row;
            row.variant = v.name;
            row.seed = seed;
            row.config_hash = hash;
            row.report.representation = std::string(data::to_string(v.repr));
            try {
                if (!prepared.count(v.repr)) {
                    prepared.emplace(v.repr, prepare_data(config, v.repr));
                }
                const auto sub = dir / (v.name + "-seed" + std::to_string(seed));
                row.report = run_variant(config, v, seed, prepared.at(v.repr), sub).report;
                spdlog::info("ablate {} seed {}: mpjpe {:.2f} mm", v.name, seed, row.report.mpjpe);
            } catch (const std::exception& e) {
                row.status = std::string("failed: ") + e.what();
                spdlog::warn("ablate {} seed {} failed: {}", v.name, seed, e.what());
            }
            rows.push_back(std::move(row));
            // Rewritten after every variant so a partial table survives.
            rollout::write_text(dir / "ablation.csv", ablation_csv(rows));
        }
    }
    const auto text = ablation_text(rows);
    rollout::write_text(dir / "ablation.txt", text);
    log << text << "table " << (dir / "ablation.csv").string() << "\n";
    const bool all_failed = std::all_of(rows.begin(), rows.end(), [](const auto& r) { return r.status != "ok"; });
    return all_failed ? 1 : 0;
}

int cmd_diagnose(const RunConfig& config, const Options& o, std::ostream& log)
{
    const auto ckpt = require_file(o.ckpt, "--ckpt");
    const auto model = model::load_model(ckpt);
    std::optional<training::TrainLog> train_log;
    const auto log_path = ckpt.parent_path() / "train_log.csv";
    if (fs::exists(log_path)) {
        train_log = training::TrainLog::load(log_path);
    }
    auto prepared = prepare_data(config, model.config().representation);
    const auto d = diagnose(model, train_log, prepared.windows, config);
    const auto dir = make_run_dir(config.out, seed_of(config), "diagnose");
    write_config(dir, config);
    for (const auto& w : d.warnings) {
        spdlog::warn("{}", w);
    }
    if (!d.kl_curve.empty()) {
        std::string csv = "step,raw_kl,effective_kl,beta\n";
        for (const auto& r : d.kl_curve) {
            csv += std::to_string(r.step) + ',' + json(r.raw_kl).dump() + ',' + json(r.effective_kl).dump() + ',' +
                   json(r.beta).dump() + '\n';
        }
        rollout::write_text(dir / "kl_curve.csv", csv);
    }
    auto wrap = [](const std::vector<rollout::RolloutTrace>& t) {
        std::vector<std::vector<rollout::RolloutTrace>> g;
        for (const auto& tr : t) {
            g.push_back({tr});
        }
        return g;
    };
    if (!d.baseline.empty()) {
        rollout::write_text(dir / "baseline.ndjson", rollout::traces_ndjson(wrap(d.baseline)));
        rollout::write_text(dir / "fixed_mean.ndjson", rollout::traces_ndjson(wrap(d.fixed_mean)));
        rollout::write_text(dir / "perturbed.ndjson", rollout::traces_ndjson(wrap(d.perturbed)));
    }
    json summary;
    summary["format"] = "sbwm-diagnostics";
    summary["checkpoint"] = ckpt.string();
    summary["warnings"] = d.warnings;
    summary["intervention_step"] = d.intervention_step;
    if (!d.kl_curve.empty()) {
        summary["final_raw_kl"] = d.kl_curve.back().raw_kl;
    }
    if (!d.jacobian_norms.empty()) {
        const auto& j = d.jacobian_norms;
        const auto [lo, hi] = std::minmax_element(j.begin(), j.end());
        summary["jacobian"] = {{"states", j.size()},
                               {"mean", std::accumulate(j.begin(), j.end(), 0.0) / static_cast<double>(j.size())},
                               {"min", *lo},
                               {"max", *hi},
                               {"norms", j}};
    }
    rollout::write_text(dir / "diagnostics.json", summary.dump(2) + "\n");
    log << "run " << dir.string() << "\n";
    if (summary.contains("jacobian")) {
        log << "jacobian norm mean " << summary["jacobian"]["mean"].get<double>() << " min "
            << summary["jacobian"]["min"].get<double>() << "\n";
    }
    return 0;
}

int cmd_table(const Options& o, std::ostream& log)
{
    if (o.inputs.empty()) {
        throw bad_input("table needs one or more report.json files");
    }
    std::string csv = metrics::report_csv_header() + "\n";
    std::string text;
    char line[256];
    std::snprintf(line, sizeof(line), "%-32s %10s %12s %8s %10s %8s %8s %8s\n", "label", "MPJPE(mm)", "persistence",
                  "freeze", "violations", "BoK1", "BoK5", "BoK10");
    text += line;
    for (const auto& in : o.inputs) {
        auto r = metrics::report_from_json(rollout::read_text(require_file(in, "report")));
        if (r.label.empty()) {
            r.label = fs::path(in).parent_path().filename().string();
        }
        csv += metrics::report_csv_row(r) + "\n";
        auto bok = [&](std::size_t k) {
            const auto it = r.best_of_k.find(k);
            char b[32] = "-";
            if (it != r.best_of_k.end()) {
                std::snprintf(b, sizeof(b), "%.2f", it->second);
            }
            return std::string(b);
        };
        std::snprintf(line, sizeof(line), "%-32s %10.2f %12.4f %8.3f %10zu %8s %8s %8s\n", r.label.c_str(), r.mpjpe,
                      r.persistence, r.freeze_rate, r.violations, bok(1).c_str(), bok(5).c_str(), bok(10).c_str());
        text += line;
    }
    if (!o.out.empty()) {
        rollout::write_text(fs::path(o.out) / "table.csv", csv);
        rollout::write_text(fs::path(o.out) / "table.txt", text);
    }
    log << text;
    return 0;
}

} // namespace

RunConfig resolve_config(const Options& o)
{
    RunConfig c = o.config_path.empty() ? RunConfig{} : load_config(o.config_path);
    for (const auto& s : o.overrides) {
        apply_override(c, s);
    }
    if (o.seed) {
        c.seed = *o.seed;
    }
    if (!o.data.empty()) {
        c.data.path = o.data;
    }
    if (!o.out.empty() && o.command != "gen-data" && o.command != "table") {
        c.out = o.out;
    }
    if (!o.model.empty()) {
        c.model.kind = model::parse_model_kind(o.model);
    }
    if (!o.repr.empty()) {
        c.model.representation = data::parse_representation(o.repr);
    }
    if (o.k) {
        c.rollout.samples = *o.k;
    }
    if (!o.mode.empty()) {
        c.rollout.mode = rollout::parse_mode(o.mode);
    }
    if (!o.intervene.empty()) {
        c.rollout.intervention = rollout::parse_intervention(o.intervene);
    }
    validate(c);
    return c;
}

fs::path make_run_dir(const fs::path& root, std::uint64_t seed, const std::string& tag)
{
    const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    char stamp[32];
    std::strftime(stamp, sizeof(stamp), "%Y%m%dT%H%M%SZ", &tm);
    const std::string base = std::string(stamp) + "-seed" + std::to_string(seed) + "-" + tag;
    fs::create_directories(root);
    for (int i = 0;; ++i) {
        const auto dir = root / (i == 0 ? base : base + "-" + std::to_string(i));
        // create_directory reports whether it made a new directory.
        if (fs::create_directory(dir)) {
            return dir;
        }
    }
}

int exit_code(ErrorCategory category)
{
    switch (category) {
    case ErrorCategory::bad_input:
    case ErrorCategory::not_found:
        return 2;
    default:
        return 1;
    }
}

int run(const Options& o, std::ostream& log, std::ostream& err)
{
    auto fail = [&](ErrorCategory category, const std::string& detail) {
        err << "error category=" << to_string(category) << " detail=" << json(detail).dump() << "\n";
        return exit_code(category);
    };
    try {
        if (o.command == "table") {
            return cmd_table(o, log);
        }
        const auto config = resolve_config(o);
        if (o.command == "gen-data") {
            return cmd_gen_data(config, o, log);
        }
        if (o.command == "train") {
            return cmd_train(config, log);
        }
        if (o.command == "rollout") {
            return cmd_rollout(config, o, log);
        }
        if (o.command == "eval") {
            return cmd_eval(config, o, log);
        }
        if (o.command == "ablate") {
            return cmd_ablate(config, log);
        }
        if (o.command == "diagnose") {
            return cmd_diagnose(config, o, log);
        }
        return fail(ErrorCategory::bad_input, "unknown command '" + o.command + "'");
    } catch (const Error& e) {
        return fail(e.category(), e.what());
    } catch (const fs::filesystem_error& e) {
        return fail(ErrorCategory::io, e.what());
    } catch (const std::exception& e) {
        return fail(ErrorCategory::internal, e.what());
    }
}

} // namespace sbwm::cli
