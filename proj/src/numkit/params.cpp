#include "sbwm/numkit/params.hpp"

#include <algorithm>
#include <cmath>

namespace sbwm::nk {

Tensor ParameterSet::add(std::string name, Tensor tensor)
{
    if (contains(name)) {
        throw bad_input("parameter '" + name + "' registered twice");
    }
    tensor.set_requires_grad(true);
    params_.push_back({std::move(name), tensor});
    return tensor;
}

const Tensor& ParameterSet::get(std::string_view name) const
{
    auto it = std::find_if(params_.begin(), params_.end(), [&](const NamedTensor& p) { return p.name == name; });
    if (it == params_.end()) {
        throw not_found("no parameter named '" + std::string(name) + "'");
    }
    return it->tensor;
}

bool ParameterSet::contains(std::string_view name) const
{
    return std::any_of(params_.begin(), params_.end(), [&](const NamedTensor& p) { return p.name == name; });
}

std::size_t ParameterSet::scalar_count() const
{
    std::size_t n = 0;
    for (const auto& p : params_) {
        n += p.tensor.size();
    }
    return n;
}

std::vector<std::string> ParameterSet::group_names() const
{
    std::vector<std::string> groups;
    for (const auto& p : params_) {
        auto group = p.name.substr(0, p.name.find('.'));
        if (std::find(groups.begin(), groups.end(), group) == groups.end()) {
            groups.push_back(std::move(group));
        }
    }
    return groups;
}

void ParameterSet::zero_grad()
{
    for (auto& p : params_) {
        p.tensor.zero_grad();
    }
}

void ParameterSet::clear_grad()
{
    for (auto& p : params_) {
        p.tensor.clear_grad();
    }
}

void ParameterSet::fill_missing_grads()
{
    for (auto& p : params_) {
        if (!p.tensor.has_grad()) {
            p.tensor.mutable_grad();
        }
    }
}

void ParameterSet::assign(const ParameterSet& other)
{
    if (other.size() != size()) {
        throw bad_input("parameter set size mismatch");
    }
    for (std::size_t i = 0; i < size(); ++i) {
        auto& dst = params_[i];
        const auto& src = other.params_[i];
        if (dst.name != src.name || dst.tensor.shape() != src.tensor.shape()) {
            throw ShapeError("assign:" + dst.name, dst.tensor.shape(), src.tensor.shape());
        }
        std::copy(src.tensor.data().begin(), src.tensor.data().end(), dst.tensor.mutable_data().begin());
    }
}

Tensor glorot_uniform(std::size_t fan_in, std::size_t fan_out, std::mt19937_64& rng)
{
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    std::uniform_real_distribution<double> dist(-limit, limit);
    std::vector<double> values(fan_in * fan_out);
    for (auto& v : values) {
        v = dist(rng);
    }
    return Tensor::from({fan_in, fan_out}, std::move(values));
}

AdamState make_adam_state(const ParameterSet& params, const AdamConfig& config)
{
    AdamState state;
    state.config = config;
    for (const auto& p : params) {
        state.first_moment.emplace_back(p.tensor.size(), 0.0);
        state.second_moment.emplace_back(p.tensor.size(), 0.0);
    }
    return state;
}

AdamStepStats adam_step(ParameterSet& params, AdamState& state)
{
    if (state.first_moment.size() != params.size()) {
        throw bad_input("adam_step: optimizer state does not match parameter set");
    }
    double sq = 0.0;
    for (std::size_t i = 0; i < params.size(); ++i) {
        const auto& p = params[i];
        if (!p.tensor.has_grad()) {
            throw bad_input("adam_step: parameter '" + p.name + "' has no gradient");
        }
        if (state.first_moment[i].size() != p.tensor.size()) {
            throw ShapeError("adam_step:" + p.name, p.tensor.shape(),
                             "moment buffer holds " + std::to_string(state.first_moment[i].size()));
        }
        for (double g : p.tensor.grad()) {
            sq += g * g;
        }
    }
    AdamStepStats stats;
    stats.grad_norm = std::sqrt(sq);
    const auto& cfg = state.config;
    if (cfg.clip_norm > 0.0 && stats.grad_norm > cfg.clip_norm) {
        stats.clip_scale = cfg.clip_norm / stats.grad_norm;
    }

    state.step += 1;
    const double t = static_cast<double>(state.step);
    const double bias1 = 1.0 - std::pow(cfg.beta1, t);
    const double bias2 = 1.0 - std::pow(cfg.beta2, t);
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto tensor = params[i].tensor;
        auto values = tensor.mutable_data();
        auto grads = tensor.mutable_grad();
        auto& m = state.first_moment[i];
        auto& v = state.second_moment[i];
        for (std::size_t j = 0; j < values.size(); ++j) {
            const double g = grads[j] * stats.clip_scale;
            m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * g;
            v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * g * g;
            const double m_hat = m[j] / bias1;
            const double v_hat = v[j] / bias2;
            values[j] -= cfg.learning_rate * m_hat / (std::sqrt(v_hat) + cfg.epsilon);
            grads[j] = 0.0;
        }
    }
    return stats;
}

} // namespace sbwm::nk
