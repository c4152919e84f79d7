#pragma once

#include "sbwm/numkit/tensor.hpp"

#include <cstdint>
#include <random>
#include <string>
#include <string_view>
#include <vector>

namespace sbwm::nk {

struct NamedTensor {
    std::string name;
    Tensor tensor;
};

/// Ordered, named collection of trainable leaves. Names are dotted,
/// `<group>.<param>`; insertion order is the iteration and checkpoint order.
class ParameterSet {
public:
    Tensor add(std::string name, Tensor tensor);

    const Tensor& get(std::string_view name) const;
    bool contains(std::string_view name) const;

    std::size_t size() const { return params_.size(); }
    std::size_t scalar_count() const;
    auto begin() const { return params_.begin(); }
    auto end() const { return params_.end(); }
    const NamedTensor& operator[](std::size_t i) const { return params_[i]; }

    /// Distinct `<group>` prefixes in first-seen order.
    std::vector<std::string> group_names() const;

    void zero_grad();
    void clear_grad();
    /// Gives parameters that the last backward pass did not reach an
    /// all-zero gradient.
    void fill_missing_grads();

    /// Overwrites every value; shapes must match.
    void assign(const ParameterSet& other);

private:
    std::vector<NamedTensor> params_;
};

/// Glorot/Xavier uniform init for a [fan_in, fan_out] weight.
Tensor glorot_uniform(std::size_t fan_in, std::size_t fan_out, std::mt19937_64& rng);

struct AdamConfig {
    double learning_rate = 3e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    double clip_norm = 10.0; // global gradient norm cap; <= 0 disables
};

struct AdamState {
    AdamConfig config;
    std::uint64_t step = 0;
    std::vector<std::vector<double>> first_moment;
    std::vector<std::vector<double>> second_moment;
};

AdamState make_adam_state(const ParameterSet& params, const AdamConfig& config);

struct AdamStepStats {
    double grad_norm = 0.0;  // before clipping
    double clip_scale = 1.0; // factor applied to every gradient
};

/// One bias-corrected Adam update after global-norm clipping; zeroes the
/// gradients afterwards. Every parameter must carry a gradient.
AdamStepStats adam_step(ParameterSet& params, AdamState& state);

} // namespace sbwm::nk
