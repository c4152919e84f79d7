#include "sbwm/data.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>

namespace sbwm::data {

void canonicalize(std::span<double> frames, std::size_t dim, Representation representation)
{
    if (dim < 3 || frames.size() < dim || frames.size() % dim != 0) {
        throw bad_input("canonicalize: buffer does not hold whole frames of dim >= 3");
    }
    const double ox = frames[0];
    const double oy = frames[1];
    const std::size_t n = frames.size() / dim;
    if (representation == Representation::manifold) {
        for (std::size_t t = 0; t < n; ++t) {
            frames[t * dim] -= ox;
            frames[t * dim + 1] -= oy;
        }
        return;
    }
    if (dim % 3 != 0) {
        throw bad_input("canonicalize: joint-space dim must be a multiple of 3");
    }
    for (std::size_t t = 0; t < n; ++t) {
        for (std::size_t j = 0; j < dim; j += 3) {
            frames[t * dim + j] -= ox;
            frames[t * dim + j + 1] -= oy;
        }
    }
}

namespace {

void check_frames(std::span<const double> frames, std::size_t dim, Representation representation, const char* what)
{
    if (dim < 3 || frames.size() < dim || frames.size() % dim != 0 ||
        (representation == Representation::joint_space && dim % 3 != 0)) {
        throw bad_input(std::string(what) + ": buffer does not hold whole frames of a valid dim");
    }
}

} // namespace

void to_displacement_form(std::span<double> frames, std::size_t dim, Representation representation)
{
    check_frames(frames, dim, representation, "to_displacement_form");
    const std::size_t n = frames.size() / dim;
    if (representation == Representation::joint_space) {
        for (std::size_t t = 0; t < n; ++t) {
            double* f = frames.data() + t * dim;
            for (std::size_t j = 3; j < dim; j += 3) {
                f[j] -= f[0];
                f[j + 1] -= f[1];
            }
        }
    }
    for (std::size_t t = n - 1; t >= 1; --t) {
        frames[t * dim] -= frames[(t - 1) * dim];
        frames[t * dim + 1] -= frames[(t - 1) * dim + 1];
    }
    frames[0] = n > 1 ? frames[dim] : 0.0;
    frames[1] = n > 1 ? frames[dim + 1] : 0.0;
}

void from_displacement_form(std::span<double> frames, std::size_t dim, Representation representation,
                            std::array<double, 2> root_before)
{
    check_frames(frames, dim, representation, "from_displacement_form");
    const std::size_t n = frames.size() / dim;
    auto root = root_before;
    for (std::size_t t = 0; t < n; ++t) {
        double* f = frames.data() + t * dim;
        root[0] += f[0];
        root[1] += f[1];
        f[0] = root[0];
        f[1] = root[1];
        if (representation == Representation::joint_space) {
            for (std::size_t j = 3; j < dim; j += 3) {
                f[j] += root[0];
                f[j + 1] += root[1];
            }
        }
    }
}

std::array<double, 2> root_before_first(std::span<const double> frames, std::size_t dim)
{
    if (frames.size() < 2 * dim) {
        return {frames[0], frames[1]};
    }
    return {2.0 * frames[0] - frames[dim], 2.0 * frames[1] - frames[dim + 1]};
}

namespace {

Window cut(const MotionSequence& s, std::size_t start, std::size_t t_in, std::size_t t_pred)
{
    Window w;
    w.source = s.id;
    w.start = start;
    w.dim = s.dim;
    w.t_in = t_in;
    w.t_pred = t_pred;
    w.representation = s.representation;
    const auto begin = s.frames.begin() + static_cast<std::ptrdiff_t>(start * s.dim);
    w.frames.assign(begin, begin + static_cast<std::ptrdiff_t>((t_in + t_pred) * s.dim));
    canonicalize(w.frames, w.dim, w.representation);
    return w;
}

void check_lengths(std::size_t t_in, std::size_t t_pred)
{
    if (t_in == 0 || t_pred == 0) {
        throw bad_input("windows: t_in and t_pred must be positive");
    }
}

} // namespace

Windowed windows(const std::vector<MotionSequence>& seqs, std::size_t t_in, std::size_t t_pred, std::size_t stride)
{
    check_lengths(t_in, t_pred);
    if (stride == 0) {
        throw bad_input("windows: stride must be positive");
    }
    Windowed out;
    const std::size_t need = t_in + t_pred;
    for (const auto& s : seqs) {
        if (s.length() < need) {
            out.warnings.push_back("sequence '" + s.id + "' has " + std::to_string(s.length()) +
                                   " frames, fewer than " + std::to_string(need) + "; skipped");
            continue;
        }
        for (std::size_t start = 0; start + need <= s.length(); start += stride) {
            out.windows.push_back(cut(s, start, t_in, t_pred));
        }
    }
    for (const auto& w : out.warnings) {
        spdlog::warn("windows: {}", w);
    }
    return out;
}

Windowed branch_windows(const std::vector<MotionSequence>& seqs, std::size_t t_in, std::size_t t_pred)
{
    check_lengths(t_in, t_pred);
    Windowed out;
    for (const auto& s : seqs) {
        if (s.branch_frame < 0) {
            continue;
        }
        const auto b = static_cast<std::size_t>(s.branch_frame);
        if (b < t_in || b + t_pred > s.length()) {
            out.warnings.push_back("sequence '" + s.id + "': branch frame " + std::to_string(b) +
                                   " leaves no room for the window; skipped");
            continue;
        }
        out.windows.push_back(cut(s, b - t_in, t_in, t_pred));
    }
    for (const auto& w : out.warnings) {
        spdlog::warn("branch windows: {}", w);
    }
    return out;
}

std::pair<std::vector<MotionSequence>, std::vector<MotionSequence>>
split(const std::vector<MotionSequence>& seqs, double ratio, std::uint64_t seed)
{
    if (!(ratio >= 0.0 && ratio <= 1.0)) {
        throw bad_input("split: ratio must lie in [0, 1]");
    }
    std::vector<std::size_t> order(seqs.size());
    for (std::size_t i = 0; i < order.size(); ++i) {
        order[i] = i;
    }
    std::mt19937_64 rng(seed);
    std::shuffle(order.begin(), order.end(), rng);
    const auto n_train = static_cast<std::size_t>(std::llround(ratio * static_cast<double>(seqs.size())));
    std::pair<std::vector<MotionSequence>, std::vector<MotionSequence>> out;
    for (std::size_t i = 0; i < order.size(); ++i) {
        (i < n_train ? out.first : out.second).push_back(seqs[order[i]]);
    }
    return out;
}

CropSampler::CropSampler(const std::vector<MotionSequence>& seqs, std::size_t length, std::uint64_t seed)
    : seqs_(&seqs), length_(length), rng_(seed)
{
    if (length < 2) {
        throw bad_input("crop sampler: crop length must be >= 2");
    }
    for (std::size_t i = 0; i < seqs.size(); ++i) {
        if (seqs[i].length() < length) {
            continue;
        }
        if (eligible_.empty()) {
            dim_ = seqs[i].dim;
            representation_ = seqs[i].representation;
        } else if (seqs[i].dim != dim_) {
            throw bad_input("crop sampler: sequences differ in dimension");
        }
        eligible_.push_back(i);
    }
    if (eligible_.empty()) {
        throw bad_input("crop sampler: no sequence has at least " + std::to_string(length) + " frames");
    }
    reshuffle();
}

void CropSampler::reshuffle()
{
    order_ = eligible_;
    std::shuffle(order_.begin(), order_.end(), rng_);
    cursor_ = 0;
}

std::vector<std::vector<double>> CropSampler::next_batch(std::size_t batch)
{
    std::vector<std::vector<double>> out;
    out.reserve(batch);
    for (std::size_t b = 0; b < batch; ++b) {
        if (cursor_ == order_.size()) {
            ++epoch_;
            reshuffle();
        }
        const auto& s = (*seqs_)[order_[cursor_++]];
        std::uniform_int_distribution<std::size_t> pick(0, s.length() - length_);
        const std::size_t start = pick(rng_);
        const auto begin = s.frames.begin() + static_cast<std::ptrdiff_t>(start * dim_);
        std::vector<double> crop(begin, begin + static_cast<std::ptrdiff_t>(length_ * dim_));
        canonicalize(crop, dim_, representation_);
        out.push_back(std::move(crop));
    }
    return out;
}

} // namespace sbwm::data
