#include "doctest.h"

#include "sbwm/cli.hpp"

#include "json.hpp"

#include <algorithm>
#include <sstream>

using namespace sbwm;
using namespace sbwm::cli;
namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

RunConfig smoke_config(const fs::path& out)
{
    RunConfig c;
    c.model.embed_dim = 8;
    c.model.hidden_dim = 12;
    c.model.latent_dim = 4;
    c.model.mlp_hidden = 10;
    c.train.max_steps = 25;
    c.train.batch_size = 4;
    c.train.window = 20;
    c.train.checkpoint_every = 0;
    c.train.log_every = 0;
    c.train.kl_anneal_steps = 10;
    c.train.tf_decay_k = 10;
    c.rollout.t_in = 10;
    c.rollout.t_pred = 6;
    c.rollout.samples = 3;
    c.data.synthetic.num_sequences = 10;
    c.data.synthetic.length = 60;
    c.data.stride = 20;
    c.out = out.string();
    return c;
}

fs::path fresh_dir(const std::string& name)
{
    const auto dir = fs::temp_directory_path() / ("sbwm_test_cli_" + name);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

struct Result {
    int code = 0;
    std::string out;
    std::string err;
};

Result invoke(Options o)
{
    std::ostringstream out;
    std::ostringstream err;
    const int code = run(o, out, err);
    return {code, out.str(), err.str()};
}

// The value after `key ` on the line that starts with it.
std::string field(const std::string& text, const std::string& key)
{
    std::istringstream in(text);
    for (std::string line; std::getline(in, line);) {
        if (line.rfind(key + " ", 0) == 0) {
            auto v = line.substr(key.size() + 1);
            return v.substr(0, v.find(' '));
        }
    }
    return {};
}

Options with_config(const std::string& command, const fs::path& config)
{
    Options o;
    o.command = command;
    o.config_path = config.string();
    return o;
}

fs::path write_config(const fs::path& dir, const RunConfig& c)
{
    const auto p = dir / "config.json";
    rollout::write_text(p, config_json(c));
    return p;
}

} // namespace

TEST_CASE("config JSON round-trips and rejects unknown keys")
{
    RunConfig c;
    c.seed = 9;
    c.train.learning_rate = 1e-3;
    c.rollout.mode = rollout::Mode::mean;
    const auto text = config_json(c);
    CHECK(config_json(config_from_json(text)) == text);
    const auto partial = config_from_json(R"({"train": {"max_steps": 7}, "model": {"kind": "no-latent"}})");
    CHECK(partial.train.max_steps == 7);
    CHECK(partial.model.kind == model::ModelKind::no_latent);
    CHECK(partial.train.batch_size == RunConfig{}.train.batch_size);
    CHECK_THROWS_AS(config_from_json(R"({"train": {"max_step": 7}})"), Error);
    CHECK_THROWS_AS(config_from_json(R"({"train": 3})"), Error);
    CHECK_THROWS_AS(config_from_json(R"({"train": {"max_steps": "many"}})"), Error);
    CHECK_THROWS_AS(config_from_json("[1]"), Error);
    CHECK_THROWS_AS(load_config("/nonexistent/config.json"), Error);
}

TEST_CASE("overrides and the config hash")
{
    RunConfig c;
    apply_override(c, "train.learning_rate=0.002");
    apply_override(c, "data.synthetic.kind=branching");
    apply_override(c, "rollout.mode=mean");
    CHECK(c.train.learning_rate == 0.002);
    CHECK(c.data.synthetic.kind == data::SyntheticKind::branching);
    CHECK(c.rollout.mode == rollout::Mode::mean);
    CHECK_THROWS_AS(apply_override(c, "train.nope=1"), Error);
    CHECK_THROWS_AS(apply_override(c, "no-equals-sign"), Error);
    CHECK_THROWS_AS(apply_override(c, "data.split_ratio=1.5"), Error);

    RunConfig a;
    RunConfig b = a;
    b.seed = 4;
    b.model.kind = model::ModelKind::deterministic_rnn;
    b.model.representation = data::Representation::joint_space;
    CHECK(config_hash(a) == config_hash(b));
    CHECK(config_hash(a).size() == 16);
    b.train.learning_rate *= 2.0;
    CHECK(config_hash(a) != config_hash(b));
}

TEST_CASE("run directories are never reused")
{
    const auto root = fresh_dir("rundirs");
    const auto a = make_run_dir(root, 3, "train");
    const auto b = make_run_dir(root, 3, "train");
    CHECK(a != b);
    CHECK(fs::is_directory(a));
    CHECK(fs::is_directory(b));
    CHECK(a.filename().string().find("-seed3-train") != std::string::npos);
}

TEST_CASE("train, rollout and eval pipeline")
{
    const auto dir = fresh_dir("pipeline");
    const auto cfg = write_config(dir, smoke_config(dir / "runs"));

    auto train = with_config("train", cfg);
    train.seed = 5;
    const auto t = invoke(train);
    REQUIRE_MESSAGE(t.code == 0, t.err);
    const auto ckpt = field(t.out, "checkpoint");
    REQUIRE(fs::exists(ckpt));
    CHECK(fs::exists(fs::path(ckpt).parent_path() / "train_log.csv"));
    CHECK(fs::exists(fs::path(ckpt).parent_path() / "config.json"));

    auto roll = with_config("rollout", cfg);
    roll.ckpt = ckpt;
    const auto r1 = invoke(roll);
    REQUIRE_MESSAGE(r1.code == 0, r1.err);
    const auto r2 = invoke(roll);
    REQUIRE(r2.code == 0);
    const auto traces1 = fs::path(field(r1.out, "traces"));
    const auto traces2 = fs::path(field(r2.out, "traces"));
    CHECK(traces1 != traces2);
    CHECK(rollout::read_text(traces1) == rollout::read_text(traces2));
    CHECK(fs::exists(traces1.parent_path() / "poses.csv"));

    auto ev = with_config("eval", cfg);
    ev.traces = traces1.string();
    const auto e = invoke(ev);
    REQUIRE_MESSAGE(e.code == 0, e.err);
    const auto report = metrics::report_from_json(rollout::read_text(field(e.out, "report")));
    CHECK(report.samples == 3);
    CHECK(report.windows > 0);
    CHECK(report.mpjpe > 0.0);
    CHECK(report.violations == 0);

    Options table;
    table.command = "table";
    table.inputs = {field(e.out, "report"), field(e.out, "report")};
    table.out = (dir / "table").string();
    const auto tb = invoke(table);
    REQUIRE(tb.code == 0);
    const auto csv = rollout::read_text(dir / "table" / "table.csv");
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 3);
}

TEST_CASE("eval of traces equal to the truth reports zero error")
{
    const auto dir = fresh_dir("perfect");
    const auto config = smoke_config(dir / "runs");
    const auto cfg = write_config(dir, config);
    const auto prepared = prepare_data(config, data::Representation::manifold);
    std::vector<std::vector<rollout::RolloutTrace>> traces;
    for (const auto& w : prepared.windows) {
        rollout::RolloutTrace tr;
        tr.window = w.source + "@" + std::to_string(w.start);
        for (std::size_t t = 0; t < w.t_in + w.t_pred; ++t) {
            rollout::TraceStep s;
            s.phase = t < w.t_in ? rollout::Phase::observe : rollout::Phase::predict;
            const auto f = w.frame(t);
            s.mu.assign(f.begin(), f.end());
            s.sigma.assign(f.size(), 0.0);
            tr.steps.push_back(std::move(s));
        }
        traces.push_back({tr});
    }
    const auto path = dir / "perfect" / "traces.ndjson";
    rollout::write_text(path, rollout::traces_ndjson(traces));
    auto ev = with_config("eval", cfg);
    ev.traces = path.string();
    const auto e = invoke(ev);
    REQUIRE_MESSAGE(e.code == 0, e.err);
    const auto report = metrics::report_from_json(rollout::read_text(field(e.out, "report")));
    CHECK(report.mpjpe == 0.0);
    CHECK(report.vel_err == 0.0);
    CHECK(report.best_of_k.at(1) == 0.0);

    // A trace for a window that is not held out is rejected.
    traces.front().front().window = "elsewhere@0";
    rollout::write_text(path, rollout::traces_ndjson(traces));
    const auto bad = invoke(ev);
    CHECK(bad.code == 2);
    CHECK(bad.err.find("category=bad-input") != std::string::npos);
}

TEST_CASE("missing inputs exit with code 2 and a category")
{
    Options o;
    o.command = "rollout";
    o.ckpt = "/nonexistent/model.ckpt";
    auto r = invoke(o);
    CHECK(r.code == 2);
    CHECK(r.err.rfind("error category=not-found detail=", 0) == 0);
    CHECK(std::count(r.err.begin(), r.err.end(), '\n') == 1);

    o.command = "rollout";
    o.ckpt.clear();
    CHECK(invoke(o).code == 2);

    o.command = "frobnicate";
    r = invoke(o);
    CHECK(r.code == 2);
    CHECK(r.err.find("category=bad-input") != std::string::npos);

    Options bad_config;
    bad_config.command = "train";
    bad_config.config_path = "/nonexistent/config.json";
    r = invoke(bad_config);
    CHECK(r.code == 2);
    CHECK(r.err.find("category=not-found") != std::string::npos);

    CHECK(exit_code(ErrorCategory::internal) == 1);
    CHECK(exit_code(ErrorCategory::numerical) == 1);
}

TEST_CASE("gen-data writes a dataset that training reads back")
{
    const auto dir = fresh_dir("gendata");
    Options g;
    g.command = "gen-data";
    g.out = (dir / "gait.ndjson").string();
    g.overrides = {"data.synthetic.num_sequences=4", "data.synthetic.length=50"};
    REQUIRE(invoke(g).code == 0);
    const auto in = data::ingest(dir / "gait.ndjson", data::FileFormat::ndjson);
    CHECK(in.sequences.size() == 4);
    CHECK(in.sequences.front().length() == 50);

    auto config = smoke_config(dir / "runs");
    config.data.path = (dir / "gait.ndjson").string();
    config.data.split_ratio = 0.5;
    const auto prepared = prepare_data(config, data::Representation::joint_space);
    CHECK(prepared.train.size() == 2);
    CHECK(prepared.train.front().dim == 51);
}

TEST_CASE("ablation: five rows with one config hash; joint space violates bones")
{
    const auto dir = fresh_dir("ablate");
    const auto cfg = write_config(dir, smoke_config(dir / "runs"));
    const auto r = invoke(with_config("ablate", cfg));
    REQUIRE_MESSAGE(r.code == 0, r.err);
    const auto table = rollout::read_text(field(r.out, "table"));
    std::istringstream in(table);
    std::string header;
    std::getline(in, header);
    CHECK(header.rfind("variant,representation,seed,config_hash,status,mpjpe_mm,persistence,freeze_rate,violations", 0) ==
          0);
    std::vector<std::vector<std::string>> rows;
    for (std::string line; std::getline(in, line);) {
        std::vector<std::string> cells;
        std::stringstream ss(line);
        for (std::string cell; std::getline(ss, cell, ',');) {
            cells.push_back(cell);
        }
        rows.push_back(cells);
    }
    REQUIRE(rows.size() == 5);
    for (const auto& row : rows) {
        CHECK(row[3] == rows[0][3]);
        CHECK(row[4] == "ok");
    }
    CHECK(rows[0][0] == "sbwm");
    CHECK(rows[4][0] == "sbwm-joints");
    CHECK(rows[4][1] == "joint_space");
    for (std::size_t i = 0; i < 4; ++i) {
        CHECK(rows[i][8] == "0");
    }
    CHECK(std::stoul(rows[4][8]) > 0);
}

TEST_CASE("a failed variant keeps its row")
{
    AblationRow ok;
    ok.variant = "sbwm";
    ok.config_hash = "abc";
    ok.report.mpjpe = 12.5;
    AblationRow failed;
    failed.variant = "rnn";
    failed.config_hash = "abc";
    failed.status = "failed: numerical, non-finite loss";
    const auto csv = ablation_csv({ok, failed});
    std::istringstream in(csv);
    std::string a;
    std::string b;
    std::string c;
    std::getline(in, a);
    std::getline(in, b);
    std::getline(in, c);
    CHECK(std::count(a.begin(), a.end(), ',') == std::count(c.begin(), c.end(), ','));
    CHECK(c.find("failed: numerical; non-finite loss") != std::string::npos);
    CHECK(ablation_text({ok, failed}).find("failed") != std::string::npos);
}

TEST_CASE("diagnose: bundle, deterministic fixed-mean trace, partial bundle without a log")
{
    const auto dir = fresh_dir("diagnose");
    const auto cfg = write_config(dir, smoke_config(dir / "runs"));
    const auto t = invoke(with_config("train", cfg));
    REQUIRE(t.code == 0);
    const fs::path ckpt = field(t.out, "checkpoint");

    auto d = with_config("diagnose", cfg);
    d.ckpt = ckpt.string();
    const auto a = invoke(d);
    REQUIRE_MESSAGE(a.code == 0, a.err);
    const auto b = invoke(d);
    REQUIRE(b.code == 0);
    const fs::path da = field(a.out, "run");
    const fs::path db = field(b.out, "run");
    CHECK(fs::exists(da / "kl_curve.csv"));
    CHECK(rollout::read_text(da / "fixed_mean.ndjson") == rollout::read_text(db / "fixed_mean.ndjson"));
    const auto summary = json::parse(rollout::read_text(da / "diagnostics.json"));
    CHECK(summary.at("warnings").empty());
    CHECK(summary.at("jacobian").at("states").get<std::size_t>() == 100);
    CHECK(summary.at("jacobian").at("min").get<double>() > 0.0);
    CHECK(summary.at("final_raw_kl").get<double>() > 0.0);

    // Same checkpoint without its training log.
    const auto lone = dir / "lone";
    fs::create_directories(lone);
    fs::copy_file(ckpt, lone / "model.ckpt");
    fs::copy_file(fs::path(ckpt.string() + ".json"), lone / "model.ckpt.json");
    d.ckpt = (lone / "model.ckpt").string();
    const auto c = invoke(d);
    REQUIRE(c.code == 0);
    const fs::path dc = field(c.out, "run");
    CHECK(!fs::exists(dc / "kl_curve.csv"));
    CHECK(fs::exists(dc / "perturbed.ndjson"));
    const auto partial = json::parse(rollout::read_text(dc / "diagnostics.json"));
    CHECK(partial.at("warnings").size() == 1);
}

TEST_CASE("perturbed trace departs from the baseline only at the intervention step")
{
    const auto config = smoke_config(fresh_dir("perturb") / "runs");
    const auto prepared = prepare_data(config, data::Representation::manifold);
    auto mc = variant_config(config, model::ModelKind::sbwm, data::Representation::manifold, 54);
    model::Model m(mc, 2);
    const auto d = diagnose(m, std::nullopt, prepared.windows, config, 3, 40);
    REQUIRE(d.baseline.size() == 3);
    CHECK(d.intervention_step == 5);
    CHECK(d.jacobian_norms.size() == 40);
    CHECK(d.warnings.size() == 1);
    for (std::size_t w = 0; w < 3; ++w) {
        const auto& base = d.baseline[w].steps;
        const auto& pert = d.perturbed[w].steps;
        const std::size_t first = config.rollout.t_in + d.intervention_step - 1;
        for (std::size_t s = 0; s < first; ++s) {
            REQUIRE(base[s].mu == pert[s].mu);
        }
        CHECK(base[first].mu != pert[first].mu);
        CHECK(base.back().mu != pert.back().mu);
    }

    model::Model rnn(variant_config(config, model::ModelKind::deterministic_rnn, data::Representation::manifold, 54),
                     2);
    const auto none = diagnose(rnn, std::nullopt, prepared.windows, config);
    CHECK(none.baseline.empty());
    CHECK(none.jacobian_norms.empty());
    CHECK(none.warnings.size() == 2);
}
