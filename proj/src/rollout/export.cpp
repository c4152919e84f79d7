#include "sbwm/rollout.hpp"

#include "json.hpp"

#include <charconv>
#include <fstream>
#include <map>
#include <sstream>

namespace sbwm::rollout {

namespace {

using json = nlohmann::json;

Phase parse_phase(const std::string& s)
{
    if (s == "observe") {
        return Phase::observe;
    }
    if (s == "predict") {
        return Phase::predict;
    }
    throw bad_input("unknown phase '" + s + "'");
}

LatentSource parse_source(const std::string& s)
{
    for (auto src : {LatentSource::none, LatentSource::posterior_mean, LatentSource::posterior_sample,
                     LatentSource::prior_sample, LatentSource::prior_mean, LatentSource::intervened}) {
        if (to_string(src) == s) {
            return src;
        }
    }
    throw bad_input("unknown latent source '" + s + "'");
}

void append_number(std::string& out, double v)
{
    char buf[32];
    auto res = std::to_chars(buf, buf + sizeof(buf), v);
    out.append(buf, res.ptr);
}

} // namespace

std::string traces_ndjson(const std::vector<std::vector<RolloutTrace>>& traces)
{
    std::string out;
    for (const auto& per_window : traces) {
        for (const auto& tr : per_window) {
            for (std::size_t t = 0; t < tr.steps.size(); ++t) {
                const auto& s = tr.steps[t];
                json rec = {{"window", tr.window},
                            {"sample", tr.sample},
                            {"seed", tr.seed},
                            {"t", t},
                            {"phase", to_string(s.phase)},
                            {"source", to_string(s.source)},
                            {"h", s.h},
                            {"z", s.z},
                            {"mu", s.mu},
                            {"sigma", s.sigma},
                            {"diverged", tr.diverged}};
                out += rec.dump();
                out += '\n';
            }
        }
    }
    return out;
}

std::vector<std::vector<RolloutTrace>> parse_traces_ndjson(const std::string& text)
{
    std::vector<std::vector<RolloutTrace>> out;
    std::map<std::string, std::size_t> window_index;
    std::istringstream in(text);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) {
            continue;
        }
        try {
            const auto rec = json::parse(line);
            const auto window = rec.at("window").get<std::string>();
            const auto sample = rec.at("sample").get<std::size_t>();
            auto [it, inserted] = window_index.try_emplace(window, out.size());
            if (inserted) {
                out.emplace_back();
            }
            auto& per_window = out[it->second];
            if (per_window.size() <= sample) {
                per_window.resize(sample + 1);
            }
            auto& tr = per_window[sample];
            tr.window = window;
            tr.sample = sample;
            tr.seed = rec.at("seed").get<std::uint64_t>();
            tr.diverged = rec.at("diverged").get<bool>();
            if (rec.at("t").get<std::size_t>() != tr.steps.size()) {
                throw bad_input("steps out of order");
            }
            TraceStep s;
            s.phase = parse_phase(rec.at("phase").get<std::string>());
            s.source = parse_source(rec.at("source").get<std::string>());
            s.h = rec.at("h").get<std::vector<double>>();
            s.z = rec.at("z").get<std::vector<double>>();
            s.mu = rec.at("mu").get<std::vector<double>>();
            s.sigma = rec.at("sigma").get<std::vector<double>>();
            tr.steps.push_back(std::move(s));
        } catch (const json::exception& e) {
            throw bad_input("traces: line " + std::to_string(lineno) + ": " + e.what());
        } catch (const Error& e) {
            throw bad_input("traces: line " + std::to_string(lineno) + ": " + e.what());
        }
    }
    return out;
}

std::string poses_csv(const std::vector<std::vector<RolloutTrace>>& traces)
{
    std::string out;
    std::size_t D = 0;
    for (const auto& w : traces) {
        for (const auto& tr : w) {
            if (!tr.steps.empty()) {
                D = tr.steps.front().mu.size();
            }
        }
    }
    out += "window,sample,t,phase";
    for (std::size_t i = 0; i < D; ++i) {
        out += ",x" + std::to_string(i);
    }
    out += '\n';
    for (const auto& w : traces) {
        for (const auto& tr : w) {
            for (std::size_t t = 0; t < tr.steps.size(); ++t) {
                out += tr.window + ',' + std::to_string(tr.sample) + ',' + std::to_string(t) + ',';
                out += to_string(tr.steps[t].phase);
                for (double v : tr.steps[t].mu) {
                    out += ',';
                    append_number(out, v);
                }
                out += '\n';
            }
        }
    }
    return out;
}

void write_text(const std::filesystem::path& path, const std::string& text)
{
    if (path.has_parent_path()) {
        std::filesystem::create_directories(path.parent_path());
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out << text;
    if (!out) {
        throw io_error("cannot write " + path.string());
    }
}

std::string read_text(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw not_found("file not found: " + path.string());
    }
    std::stringstream buffer;
    buffer << in.rdbuf();
    return buffer.str();
}

} // namespace sbwm::rollout
