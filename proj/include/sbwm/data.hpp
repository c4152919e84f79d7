#pragma once

#include "sbwm/body.hpp"

#include <cstdint>
#include <filesystem>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace sbwm::data {

/// What a frame vector holds: chain parameters (pose vectors, see body.hpp)
/// or flattened 3D joint coordinates.
enum class Representation { manifold, joint_space };

std::string_view to_string(Representation r);
Representation parse_representation(std::string_view text);

struct MotionSequence {
    std::string id;
    double fps = 30.0;
    Representation representation = Representation::manifold;
    std::size_t dim = 0;
    std::vector<double> frames; // length() x dim, row-major
    int branch_frame = -1;      // first frame after a branching decision, or -1

    std::size_t length() const { return dim == 0 ? 0 : frames.size() / dim; }
    std::span<const double> frame(std::size_t t) const { return {frames.data() + t * dim, dim}; }
};

/// Throws unless length() >= 2, all values are finite and sizes agree.
void validate(const MotionSequence& seq);

// --- synthetic generation --------------------------------------------------

enum class SyntheticKind { gait, branching, stop_go };

std::string_view to_string(SyntheticKind k);
SyntheticKind parse_synthetic_kind(std::string_view text);

struct SyntheticSpec {
    SyntheticKind kind = SyntheticKind::gait;
    std::size_t num_sequences = 200;
    std::size_t length = 240;
    double fps = 30.0;
    double noise_std = 0.01;        // radians, added to every rotation parameter
    double freq_min = 0.8;          // gait cycles per second
    double freq_max = 1.3;
    double amp_min = 0.3;           // thigh swing amplitude, radians
    double amp_max = 0.6;
    double phase_noise = 0.0;       // per-frame std of the gait-phase increment, radians
    double branch_probability = 0.5; // chance of turning left at the branch
    int branch_frame = -1;          // -1: length / 2
    double turn_rate = 1.5;         // yaw rate after the branch, rad/s
    std::size_t walk_min = 60;      // stop-go segment lengths, frames
    std::size_t walk_max = 150;
    std::size_t idle_min = 30;
    std::size_t idle_max = 90;
    std::uint64_t seed = 0;
};

/// Pure function of (spec, chain): same inputs give identical sequences.
std::vector<MotionSequence> generate(const SyntheticSpec& spec, const body::BodyChain& chain);

/// Maps every frame through forward kinematics (dim becomes 3J).
MotionSequence to_joint_space(const MotionSequence& seq, const body::BodyChain& chain);
std::vector<MotionSequence> to_joint_space(const std::vector<MotionSequence>& seqs, const body::BodyChain& chain);

// --- files -----------------------------------------------------------------

enum class FileFormat { csv, ndjson };

FileFormat parse_file_format(std::string_view text);
FileFormat format_from_extension(const std::filesystem::path& path);

struct Ingested {
    std::vector<MotionSequence> sequences;
    std::vector<std::string> warnings;
};

/// Reads sequences written by `export_sequences`. `expected_dim` of 0
/// accepts any dimension; otherwise a mismatch is an error naming both.
Ingested ingest(const std::filesystem::path& path, FileFormat format, std::size_t expected_dim = 0);
Ingested ingest_text(const std::string& text, FileFormat format, std::size_t expected_dim = 0);

void export_sequences(const std::filesystem::path& path, const std::vector<MotionSequence>& seqs, FileFormat format);
std::string export_text(const std::vector<MotionSequence>& seqs, FileFormat format);

// --- windows ---------------------------------------------------------------

/// An observation/target pair cut from one sequence. Frames are translated
/// so the root's horizontal position in the first frame is the origin.
struct Window {
    std::string source;
    std::size_t start = 0;
    std::size_t dim = 0;
    std::size_t t_in = 0;
    std::size_t t_pred = 0;
    Representation representation = Representation::manifold;
    std::vector<double> frames; // (t_in + t_pred) x dim

    std::span<const double> frame(std::size_t t) const { return {frames.data() + t * dim, dim}; }
    std::span<const double> observed(std::size_t t) const { return frame(t); }
    std::span<const double> target(std::size_t k) const { return frame(t_in + k); }
};

/// Moves the root horizontal position of frame 0 to the origin, in place.
void canonicalize(std::span<double> frames, std::size_t dim, Representation representation);

/// Root-displacement form, in place. The root's horizontal position becomes
/// its step from the previous frame (frame 0 repeats frame 1's step); in
/// joint space every other joint's horizontal coordinates become relative
/// to the root of the same frame.
void to_displacement_form(std::span<double> frames, std::size_t dim, Representation representation);
/// Inverse, given the root's horizontal position before frame 0.
void from_displacement_form(std::span<double> frames, std::size_t dim, Representation representation,
                            std::array<double, 2> root_before);
/// Root horizontal position before frame 0 implied by the repeated first
/// step: x_0 - (x_1 - x_0), or x_0 for a single frame.
std::array<double, 2> root_before_first(std::span<const double> frames, std::size_t dim);

struct Windowed {
    std::vector<Window> windows;
    std::vector<std::string> warnings;
};

/// Sliding windows at `stride`; sequences shorter than t_in + t_pred are
/// skipped with a warning.
Windowed windows(const std::vector<MotionSequence>& seqs, std::size_t t_in, std::size_t t_pred, std::size_t stride);

/// One window per branching sequence, with the prediction starting at the
/// branch frame.
Windowed branch_windows(const std::vector<MotionSequence>& seqs, std::size_t t_in, std::size_t t_pred);

/// Sequence-level split; the first round(ratio * n) shuffled sequences train.
std::pair<std::vector<MotionSequence>, std::vector<MotionSequence>>
split(const std::vector<MotionSequence>& seqs, double ratio, std::uint64_t seed);

/// Uniform random crops for training: each epoch visits every long-enough
/// sequence once in shuffled order, one crop per visit.
class CropSampler {
public:
    CropSampler(const std::vector<MotionSequence>& seqs, std::size_t length, std::uint64_t seed);

    /// batch x length x dim, canonicalized.
    std::vector<std::vector<double>> next_batch(std::size_t batch);

    std::size_t dim() const { return dim_; }
    std::size_t length() const { return length_; }
    std::size_t epoch() const { return epoch_; }

private:
    void reshuffle();

    const std::vector<MotionSequence>* seqs_;
    std::vector<std::size_t> eligible_;
    std::vector<std::size_t> order_;
    std::size_t cursor_ = 0;
    std::size_t epoch_ = 0;
    std::size_t length_;
    std::size_t dim_ = 0;
    Representation representation_ = Representation::manifold;
    std::mt19937_64 rng_;
};

} // namespace sbwm::data
