#include "sbwm/cli.hpp"

#include "json.hpp"

#include <fstream>
#include <sstream>

namespace sbwm::cli {

namespace {

using json = nlohmann::json;

std::string_view to_string(dist::FreeBitsMode m)
{
    return m == dist::FreeBitsMode::per_timestep ? "per-timestep" : "per-dimension";
}

dist::FreeBitsMode parse_free_bits_mode(const std::string& s)
{
    if (s == "per-timestep" || s == "per_timestep") {
        return dist::FreeBitsMode::per_timestep;
    }
    if (s == "per-dimension" || s == "per_dimension") {
        return dist::FreeBitsMode::per_dimension;
    }
    throw bad_input("unknown free-bits mode '" + s + "'");
}

json to_json(const RunConfig& c)
{
    const auto& m = c.model;
    const auto& t = c.train;
    const auto& r = c.rollout;
    const auto& s = c.data.synthetic;
    json j;
    j["seed"] = c.seed;
    j["seeds"] = c.seeds;
    j["out"] = c.out;
    j["model"] = {{"kind", model::to_string(m.kind)},
                  {"embed_dim", m.embed_dim},
                  {"hidden_dim", m.hidden_dim},
                  {"latent_dim", m.latent_dim},
                  {"mlp_hidden", m.mlp_hidden},
                  {"representation", data::to_string(m.representation)},
                  {"sample_h0", m.sample_h0},
                  {"rnn_hidden_dim", m.rnn_hidden_dim},
                  {"root_displacement", m.root_displacement}};
    j["train"] = {{"beta_max", t.beta_max},
                  {"kl_anneal_steps", t.kl_anneal_steps},
                  {"free_bits_lambda", t.free_bits_lambda},
                  {"free_bits_mode", to_string(t.free_bits_mode)},
                  {"vel_weight", t.vel_weight},
                  {"acc_weight", t.acc_weight},
                  {"tf_floor", t.tf_floor},
                  {"tf_decay_k", t.tf_decay_k},
                  {"self_latent", training::to_string(t.self_latent)},
                  {"batch_size", t.batch_size},
                  {"window", t.window},
                  {"learning_rate", t.learning_rate},
                  {"clip_norm", t.clip_norm},
                  {"max_steps", t.max_steps},
                  {"checkpoint_every", t.checkpoint_every},
                  {"log_every", t.log_every},
                  {"standardize", t.standardize}};
    j["rollout"] = {{"t_in", r.t_in},
                    {"t_pred", r.t_pred},
                    {"mode", rollout::to_string(r.mode)},
                    {"samples", r.samples},
                    {"seed", r.seed},
                    {"sampled_filtering", r.sampled_filtering},
                    {"self_embed", r.self_embed}};
    j["eval"] = {{"freeze_epsilon", c.eval.freeze_epsilon}, {"ks", c.eval.ks}};
    j["data"] = {{"path", c.data.path},
                 {"split_ratio", c.data.split_ratio},
                 {"split_seed", c.data.split_seed},
                 {"stride", c.data.stride},
                 {"synthetic",
                  {{"kind", data::to_string(s.kind)},
                   {"num_sequences", s.num_sequences},
                   {"length", s.length},
                   {"fps", s.fps},
                   {"noise_std", s.noise_std},
                   {"freq_min", s.freq_min},
                   {"freq_max", s.freq_max},
                   {"amp_min", s.amp_min},
                   {"amp_max", s.amp_max},
                   {"phase_noise", s.phase_noise},
                   {"branch_probability", s.branch_probability},
                   {"branch_frame", s.branch_frame},
                   {"turn_rate", s.turn_rate},
                   {"walk_min", s.walk_min},
                   {"walk_max", s.walk_max},
                   {"idle_min", s.idle_min},
                   {"idle_max", s.idle_max},
                   {"seed", s.seed}}}};
    return j;
}

RunConfig from_json(const json& j)
{
    RunConfig c;
    c.seed = j.at("seed").get<std::uint64_t>();
    c.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
    c.out = j.at("out").get<std::string>();
    const auto& m = j.at("model");
    c.model.kind = model::parse_model_kind(m.at("kind").get<std::string>());
    c.model.embed_dim = m.at("embed_dim").get<std::size_t>();
    c.model.hidden_dim = m.at("hidden_dim").get<std::size_t>();
    c.model.latent_dim = m.at("latent_dim").get<std::size_t>();
    c.model.mlp_hidden = m.at("mlp_hidden").get<std::size_t>();
    c.model.representation = data::parse_representation(m.at("representation").get<std::string>());
    c.model.sample_h0 = m.at("sample_h0").get<bool>();
    c.model.rnn_hidden_dim = m.at("rnn_hidden_dim").get<std::size_t>();
    c.model.root_displacement = m.at("root_displacement").get<bool>();
    const auto& t = j.at("train");
    c.train.beta_max = t.at("beta_max").get<double>();
    c.train.kl_anneal_steps = t.at("kl_anneal_steps").get<std::size_t>();
    c.train.free_bits_lambda = t.at("free_bits_lambda").get<double>();
    c.train.free_bits_mode = parse_free_bits_mode(t.at("free_bits_mode").get<std::string>());
    c.train.vel_weight = t.at("vel_weight").get<double>();
    c.train.acc_weight = t.at("acc_weight").get<double>();
    c.train.tf_floor = t.at("tf_floor").get<double>();
    c.train.tf_decay_k = t.at("tf_decay_k").get<double>();
    c.train.self_latent = training::parse_self_latent(t.at("self_latent").get<std::string>());
    c.train.batch_size = t.at("batch_size").get<std::size_t>();
    c.train.window = t.at("window").get<std::size_t>();
    c.train.learning_rate = t.at("learning_rate").get<double>();
    c.train.clip_norm = t.at("clip_norm").get<double>();
    c.train.max_steps = t.at("max_steps").get<std::size_t>();
    c.train.checkpoint_every = t.at("checkpoint_every").get<std::size_t>();
    c.train.log_every = t.at("log_every").get<std::size_t>();
    c.train.standardize = t.at("standardize").get<bool>();
    const auto& r = j.at("rollout");
    c.rollout.t_in = r.at("t_in").get<std::size_t>();
    c.rollout.t_pred = r.at("t_pred").get<std::size_t>();
    c.rollout.mode = rollout::parse_mode(r.at("mode").get<std::string>());
    c.rollout.samples = r.at("samples").get<std::size_t>();
    c.rollout.seed = r.at("seed").get<std::uint64_t>();
    c.rollout.sampled_filtering = r.at("sampled_filtering").get<bool>();
    c.rollout.self_embed = r.at("self_embed").get<bool>();
    const auto& e = j.at("eval");
    c.eval.freeze_epsilon = e.at("freeze_epsilon").get<double>();
    c.eval.ks = e.at("ks").get<std::vector<std::size_t>>();
    const auto& d = j.at("data");
    c.data.path = d.at("path").get<std::string>();
    c.data.split_ratio = d.at("split_ratio").get<double>();
    c.data.split_seed = d.at("split_seed").get<std::uint64_t>();
    c.data.stride = d.at("stride").get<std::size_t>();
    const auto& s = d.at("synthetic");
    auto& ss = c.data.synthetic;
    ss.kind = data::parse_synthetic_kind(s.at("kind").get<std::string>());
    ss.num_sequences = s.at("num_sequences").get<std::size_t>();
    ss.length = s.at("length").get<std::size_t>();
    ss.fps = s.at("fps").get<double>();
    ss.noise_std = s.at("noise_std").get<double>();
    ss.freq_min = s.at("freq_min").get<double>();
    ss.freq_max = s.at("freq_max").get<double>();
    ss.amp_min = s.at("amp_min").get<double>();
    ss.amp_max = s.at("amp_max").get<double>();
    ss.phase_noise = s.at("phase_noise").get<double>();
    ss.branch_probability = s.at("branch_probability").get<double>();
    ss.branch_frame = s.at("branch_frame").get<int>();
    ss.turn_rate = s.at("turn_rate").get<double>();
    ss.walk_min = s.at("walk_min").get<std::size_t>();
    ss.walk_max = s.at("walk_max").get<std::size_t>();
    ss.idle_min = s.at("idle_min").get<std::size_t>();
    ss.idle_max = s.at("idle_max").get<std::size_t>();
    ss.seed = s.at("seed").get<std::uint64_t>();
    return c;
}

// Rejects keys of `patch` that the defaults do not have.
void check_keys(const json& base, const json& patch, const std::string& prefix)
{
    if (!patch.is_object()) {
        return;
    }
    for (const auto& [key, value] : patch.items()) {
        const auto it = base.find(key);
        if (it == base.end()) {
            throw bad_input("config: unknown key '" + prefix + key + "'");
        }
        if (it->is_object()) {
            if (!value.is_object()) {
                throw bad_input("config: '" + prefix + key + "' must be an object");
            }
            check_keys(*it, value, prefix + key + ".");
        }
    }
}

RunConfig merged(const json& patch)
{
    if (!patch.is_object()) {
        throw bad_input("config: top level must be an object");
    }
    auto base = to_json(RunConfig{});
    check_keys(base, patch, "");
    base.merge_patch(patch);
    try {
        auto c = from_json(base);
        validate(c);
        return c;
    } catch (const json::exception& e) {
        throw bad_input(std::string("config: ") + e.what());
    }
}

} // namespace

std::string config_json(const RunConfig& config)
{
    return to_json(config).dump(2) + "\n";
}

RunConfig config_from_json(const std::string& text)
{
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw bad_input(std::string("config: ") + e.what());
    }
    return merged(j);
}

RunConfig load_config(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw not_found("config file '" + path.string() + "' does not exist or is unreadable");
    }
    std::stringstream ss;
    ss << in.rdbuf();
    return config_from_json(ss.str());
}

void apply_override(RunConfig& config, std::string_view assignment)
{
    const auto eq = assignment.find('=');
    if (eq == std::string_view::npos || eq == 0) {
        throw bad_input("override '" + std::string(assignment) + "' is not key=value");
    }
    const std::string key(assignment.substr(0, eq));
    const std::string text(assignment.substr(eq + 1));
    json value = json::parse(text, nullptr, false);
    if (value.is_discarded()) {
        value = text;
    }
    json patch = value;
    std::string rest = key;
    std::vector<std::string> parts;
    for (std::size_t pos; (pos = rest.find('.')) != std::string::npos; rest = rest.substr(pos + 1)) {
        parts.push_back(rest.substr(0, pos));
    }
    parts.push_back(rest);
    for (auto it = parts.rbegin(); it != parts.rend(); ++it) {
        patch = json{{*it, patch}};
    }
    auto base = to_json(config);
    check_keys(base, patch, "");
    base.merge_patch(patch);
    try {
        config = from_json(base);
    } catch (const json::exception& e) {
        throw bad_input("override '" + key + "': " + e.what());
    }
    validate(config);
}

std::string config_hash(const RunConfig& config)
{
    auto j = to_json(config);
    j.erase("seed");
    j.erase("seeds");
    j.erase("out");
    j["model"].erase("kind");
    j["model"].erase("representation");
    const std::string text = j.dump();
    std::uint64_t h = 0xcbf29ce484222325ULL; // FNV-1a
    for (unsigned char ch : text) {
        h ^= ch;
        h *= 0x100000001b3ULL;
    }
    static constexpr char hex[] = "0123456789abcdef";
    std::string out(16, '0');
    for (int i = 15; i >= 0; --i) {
        out[static_cast<std::size_t>(i)] = hex[h & 0xf];
        h >>= 4;
    }
    return out;
}

void validate(const RunConfig& c)
{
    training::validate(c.train);
    rollout::validate(c.rollout);
    if (!(c.data.split_ratio > 0.0 && c.data.split_ratio < 1.0)) {
        throw bad_input("config: data.split_ratio must be in (0, 1)");
    }
    if (!(c.eval.freeze_epsilon > 0.0)) {
        throw bad_input("config: eval.freeze_epsilon must be positive");
    }
    if (c.train.window < 2) {
        throw bad_input("config: train.window must be at least 2");
    }
}

} // namespace sbwm::cli
