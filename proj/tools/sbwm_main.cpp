#include "sbwm/cli.hpp"

#include "CLI11.hpp"

#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include <cstdlib>
#include <iostream>

int main(int argc, char** argv)
{
    using sbwm::cli::Options;
    CLI::App app{"Stochastic belief-state world model for human motion"};
    app.require_subcommand(1);
    app.fallthrough();
    app.set_version_flag("--version", "sbwm 1.0");
    bool quiet = false;
    app.add_flag("-q,--quiet", quiet, "Only warnings and errors on stderr");

    Options o;
    std::uint64_t seed = 0;
    std::size_t k = 0;
    auto common = [&](CLI::App* sub) {
        sub->add_option("--config", o.config_path, "Run configuration (JSON)");
        sub->add_option("--set", o.overrides, "Override a config field, section.key=value")->take_all();
        sub->add_option("--seed", seed, "Run seed");
        sub->add_option("--data", o.data, "Dataset file (.csv or .ndjson)");
        sub->add_option("--out", o.out, "Output root (gen-data: output file)");
        sub->add_option("--model", o.model, "sbwm | rnn | no-latent | latent-no-feedback");
        sub->add_option("--repr", o.repr, "manifold | joints");
        sub->add_option("--k", k, "Samples per window");
        sub->add_option("--mode", o.mode, "stochastic | mean");
    };
    struct Command {
        const char* name;
        const char* help;
    };
    const Command commands[] = {
        {"gen-data", "Write a synthetic dataset"},
        {"train", "Train a model; writes checkpoints and the training log"},
        {"rollout", "Filter held-out windows and sample predictions"},
        {"eval", "Metrics of rollout traces against the held-out data"},
        {"ablate", "Train and evaluate every ablation variant"},
        {"diagnose", "KL curve, latent interventions and Jacobian norms of a checkpoint"},
        {"table", "Assemble report.json files into one table"},
    };
    for (const auto& c : commands) {
        auto* sub = app.add_subcommand(c.name, c.help);
        sub->callback([&o, name = c.name] { o.command = name; });
        if (std::string(c.name) == "table") {
            sub->add_option("reports", o.inputs, "report.json files")->required();
            sub->add_option("--out", o.out, "Directory for table.csv and table.txt");
            continue;
        }
        common(sub);
        if (std::string(c.name) == "rollout" || std::string(c.name) == "diagnose") {
            sub->add_option("--ckpt", o.ckpt, "Model checkpoint")->required();
            sub->add_option("--intervene", o.intervene, "step:kind[:d1,d2,...], kind in fix-to-mean|add-delta|resample");
        }
        if (std::string(c.name) == "eval") {
            sub->add_option("--traces", o.traces, "traces.ndjson from rollout")->required();
        }
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) {
            return app.exit(e);
        }
        std::cerr << "error category=bad-input detail=\"" << e.what() << "\"\n";
        return 2;
    }
    spdlog::set_default_logger(spdlog::stderr_color_mt("sbwm"));
    spdlog::set_level(quiet ? spdlog::level::warn : spdlog::level::info);
    for (auto* sub : app.get_subcommands()) {
        if (sub->get_option_no_throw("--seed") != nullptr && sub->count("--seed") > 0) {
            o.seed = seed;
        }
        if (sub->get_option_no_throw("--k") != nullptr && sub->count("--k") > 0) {
            o.k = k;
        }
    }
    return sbwm::cli::run(o, std::cout, std::cerr);
}
