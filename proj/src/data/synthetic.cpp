#include "sbwm/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>

namespace sbwm::data {

namespace {

constexpr double two_pi = 2.0 * std::numbers::pi;

// Parameter offsets of the rotation stored at a joint (see body.hpp: the
// angle at joint j orients the bone ending at j).
struct Layout {
    std::size_t spine;
    std::size_t l_thigh, r_thigh; // stored at the knees
    std::size_t l_shin, r_shin;   // stored at the ankles
    std::size_t l_upper, r_upper; // stored at the elbows
    std::size_t l_fore, r_fore;   // stored at the wrists

    explicit Layout(const body::BodyChain& chain)
    {
        auto at = [&](const char* name) { return 6 + 3 * (chain.index_of(name) - 1); };
        spine = at("spine");
        l_thigh = at("l_knee");
        r_thigh = at("r_knee");
        l_shin = at("l_ankle");
        r_shin = at("r_ankle");
        l_upper = at("l_elbow");
        r_upper = at("r_elbow");
        l_fore = at("l_wrist");
        r_fore = at("r_wrist");
    }
};

constexpr std::size_t axis_y = 1;
constexpr std::size_t axis_z = 2;

struct GaitParams {
    double freq;
    double amp;
    double phase0;
    double leg_length;
};

// Walking pose at gait `phase` with amplitude scaled by `envelope` in
// [0, 1]. Root translation and heading are filled in by the caller.
void gait_pose(const Layout& layout, const GaitParams& g, double phase, double envelope, double heading,
               std::span<double> x)
{
    std::fill(x.begin(), x.end(), 0.0);
    const double a = g.amp * envelope;
    const double s = std::sin(phase);
    const double c = std::cos(phase);

    const double thigh = -a * s;
    x[layout.l_thigh + axis_y] = thigh;
    x[layout.r_thigh + axis_y] = -thigh;

    // Knee flexion peaks during swing; always >= 0.
    const double knee = 1.2 * a;
    x[layout.l_shin + axis_y] = 0.5 * knee * (1.0 + c);
    x[layout.r_shin + axis_y] = 0.5 * knee * (1.0 - c);

    const double arm = 0.7 * a * s;
    x[layout.l_upper + axis_y] = arm;
    x[layout.r_upper + axis_y] = -arm;
    x[layout.l_fore + axis_y] = -(0.3 * envelope + 0.15 * a * (1.0 + s));
    x[layout.r_fore + axis_y] = -(0.3 * envelope + 0.15 * a * (1.0 - s));

    x[layout.spine + axis_z] = 0.08 * envelope * s;
    x[3 + axis_z] = heading + 0.05 * envelope * s;
    x[2] = g.leg_length - 0.03 * envelope + 0.02 * envelope * std::cos(2.0 * phase);
}

double uniform(std::mt19937_64& rng, double lo, double hi)
{
    return std::uniform_real_distribution<double>(lo, hi)(rng);
}

std::size_t uniform_int(std::mt19937_64& rng, std::size_t lo, std::size_t hi)
{
    return std::uniform_int_distribution<std::size_t>(lo, std::max(lo, hi))(rng);
}

// Smooth 0 -> 1 ramp over `width` frames.
double ramp(double t, double width)
{
    const double u = std::clamp(t / width, 0.0, 1.0);
    return 0.5 - 0.5 * std::cos(std::numbers::pi * u);
}

MotionSequence generate_one(const SyntheticSpec& spec, const body::BodyChain& chain, const Layout& layout,
                            std::size_t index, std::uint64_t seq_seed)
{
    std::mt19937_64 rng(seq_seed);
    std::normal_distribution<double> normal(0.0, 1.0);

    GaitParams g;
    g.freq = uniform(rng, spec.freq_min, spec.freq_max);
    g.amp = uniform(rng, spec.amp_min, spec.amp_max);
    g.phase0 = uniform(rng, 0.0, two_pi);
    g.leg_length = chain.bone_length[chain.index_of("l_knee")] + chain.bone_length[chain.index_of("l_ankle")];

    const std::size_t dim = chain.param_dim();
    const std::size_t length = spec.length;
    MotionSequence seq;
    char id[64];
    std::snprintf(id, sizeof(id), "%s-%04zu", std::string(to_string(spec.kind)).c_str(), index);
    seq.id = id;
    seq.fps = spec.fps;
    seq.dim = dim;
    seq.frames.assign(length * dim, 0.0);

    // Stop-go envelope: alternating walk and idle segments, cosine ramps.
    std::vector<double> envelope(length, 1.0);
    if (spec.kind == SyntheticKind::stop_go) {
        bool walking = uniform(rng, 0.0, 1.0) < 0.5;
        std::size_t t = 0;
        double level = walking ? 1.0 : 0.0;
        while (t < length) {
            const auto dur = walking ? uniform_int(rng, spec.walk_min, spec.walk_max)
                                     : uniform_int(rng, spec.idle_min, spec.idle_max);
            const double from = level;
            const double to = walking ? 1.0 : 0.0;
            for (std::size_t k = 0; k < dur && t < length; ++k, ++t) {
                envelope[t] = from + (to - from) * ramp(static_cast<double>(k), 15.0);
            }
            level = to;
            walking = !walking;
        }
    }

    double turn = 0.0;
    if (spec.kind == SyntheticKind::branching) {
        seq.branch_frame = spec.branch_frame >= 0 ? spec.branch_frame : static_cast<int>(length / 2);
        turn = uniform(rng, 0.0, 1.0) < spec.branch_probability ? spec.turn_rate : -spec.turn_rate;
    }

    const double dt = 1.0 / spec.fps;
    const double omega = two_pi * g.freq;
    // Distance per gait cycle: two steps of length 2 * L * sin(amp).
    const double speed = 4.0 * g.leg_length * std::sin(g.amp) * g.freq;
    double phase = g.phase0;
    double heading = 0.0;
    double px = 0.0;
    double py = 0.0;
    for (std::size_t t = 0; t < length; ++t) {
        std::span<double> x(seq.frames.data() + t * dim, dim);
        gait_pose(layout, g, phase, envelope[t], heading, x);
        x[0] = px;
        x[1] = py;
        for (std::size_t i = 3; i < dim; ++i) {
            x[i] += spec.noise_std * normal(rng);
        }
        const double v = speed * envelope[t];
        px += v * std::cos(heading) * dt;
        py += v * std::sin(heading) * dt;
        phase += omega * envelope[t] * dt + spec.phase_noise * normal(rng);
        if (seq.branch_frame >= 0 && static_cast<int>(t + 1) >= seq.branch_frame) {
            heading += turn * dt;
        }
    }
    return seq;
}

} // namespace

std::string_view to_string(SyntheticKind k)
{
    switch (k) {
    case SyntheticKind::gait:
        return "gait";
    case SyntheticKind::branching:
        return "branching";
    case SyntheticKind::stop_go:
        return "stop-go";
    }
    return "gait";
}

SyntheticKind parse_synthetic_kind(std::string_view text)
{
    if (text == "gait") {
        return SyntheticKind::gait;
    }
    if (text == "branching") {
        return SyntheticKind::branching;
    }
    if (text == "stop-go" || text == "stop_go") {
        return SyntheticKind::stop_go;
    }
    throw bad_input("unknown synthetic kind '" + std::string(text) + "'");
}

std::vector<MotionSequence> generate(const SyntheticSpec& spec, const body::BodyChain& chain)
{
    if (spec.num_sequences == 0 || spec.length < 2) {
        throw bad_input("synthetic spec: need at least one sequence of length >= 2");
    }
    if (spec.noise_std < 0.0 || spec.phase_noise < 0.0) {
        throw bad_input("synthetic spec: noise must be non-negative");
    }
    if (spec.freq_min > spec.freq_max || spec.amp_min > spec.amp_max || !(spec.fps > 0.0)) {
        throw bad_input("synthetic spec: invalid ranges");
    }
    const Layout layout(chain);
    std::mt19937_64 master(spec.seed);
    std::vector<MotionSequence> out;
    out.reserve(spec.num_sequences);
    for (std::size_t i = 0; i < spec.num_sequences; ++i) {
        out.push_back(generate_one(spec, chain, layout, i, master()));
    }
    return out;
}

MotionSequence to_joint_space(const MotionSequence& seq, const body::BodyChain& chain)
{
    if (seq.representation != Representation::manifold) {
        throw bad_input("to_joint_space: sequence '" + seq.id + "' is not in chain parameters");
    }
    MotionSequence out = seq;
    out.representation = Representation::joint_space;
    out.dim = chain.joint_space_dim();
    out.frames.clear();
    out.frames.reserve(seq.length() * out.dim);
    for (std::size_t t = 0; t < seq.length(); ++t) {
        const auto joints = body::forward_kinematics(chain, seq.frame(t));
        out.frames.insert(out.frames.end(), joints.begin(), joints.end());
    }
    return out;
}

std::vector<MotionSequence> to_joint_space(const std::vector<MotionSequence>& seqs, const body::BodyChain& chain)
{
    std::vector<MotionSequence> out;
    out.reserve(seqs.size());
    for (const auto& s : seqs) {
        out.push_back(to_joint_space(s, chain));
    }
    return out;
}

} // namespace sbwm::data
