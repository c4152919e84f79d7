#include "doctest.h"

#include "sbwm/data.hpp"

#include <filesystem>
#include <fstream>
#include <set>

using namespace sbwm;
using namespace sbwm::data;

namespace {

SyntheticSpec small_spec(SyntheticKind kind, std::size_t n = 6, std::size_t length = 200)
{
    SyntheticSpec spec;
    spec.kind = kind;
    spec.num_sequences = n;
    spec.length = length;
    spec.seed = 17;
    return spec;
}

std::filesystem::path temp_file(const std::string& name, const std::string& contents)
{
    auto path = std::filesystem::temp_directory_path() / name;
    std::ofstream(path) << contents;
    return path;
}

} // namespace

TEST_CASE("generation is a pure function of the spec")
{
    auto chain = body::default_chain();
    for (auto kind : {SyntheticKind::gait, SyntheticKind::branching, SyntheticKind::stop_go}) {
        auto spec = small_spec(kind);
        auto a = generate(spec, chain);
        auto b = generate(spec, chain);
        REQUIRE(a.size() == spec.num_sequences);
        for (std::size_t i = 0; i < a.size(); ++i) {
            CHECK(a[i].frames == b[i].frames);
            CHECK(a[i].id == b[i].id);
        }
        spec.seed += 1;
        CHECK(generate(spec, chain)[0].frames != a[0].frames);
    }
}

TEST_CASE("noise-free gait: left and right thighs are exactly antiphase")
{
    auto chain = body::default_chain();
    auto spec = small_spec(SyntheticKind::gait, 3);
    spec.noise_std = 0.0;
    const auto l = 6 + 3 * (chain.index_of("l_knee") - 1) + 1;
    const auto r = 6 + 3 * (chain.index_of("r_knee") - 1) + 1;
    for (const auto& s : generate(spec, chain)) {
        double spread = 0.0;
        for (std::size_t t = 0; t < s.length(); ++t) {
            CHECK(s.frame(t)[l] + s.frame(t)[r] == 0.0);
            spread = std::max(spread, std::abs(s.frame(t)[l]));
        }
        CHECK(spread > 0.2);
    }
}

TEST_CASE("generated frames validate and keep bone lengths")
{
    auto chain = body::default_chain();
    for (auto kind : {SyntheticKind::gait, SyntheticKind::branching, SyntheticKind::stop_go}) {
        for (const auto& s : generate(small_spec(kind), chain)) {
            CHECK_NOTHROW(validate(s));
            CHECK(s.dim == chain.param_dim());
            for (std::size_t t = 0; t < s.length(); t += 7) {
                CHECK(body::bone_length_violations(chain, body::forward_kinematics(chain, s.frame(t))) == 0);
            }
        }
    }
}

TEST_CASE("branching: two heading modes after the branch, none before")
{
    auto chain = body::default_chain();
    auto spec = small_spec(SyntheticKind::branching, 40);
    spec.noise_std = 0.0;
    const auto seqs = generate(spec, chain);
    std::set<double> final_heading_sign;
    for (const auto& s : seqs) {
        REQUIRE(s.branch_frame == 100);
        for (int t = 0; t < s.branch_frame; ++t) {
            // Heading is the mean yaw; the oscillating part is at most 0.05.
            CHECK(std::abs(s.frame(static_cast<std::size_t>(t))[5]) <= 0.05 + 1e-12);
        }
        const double yaw = s.frame(s.length() - 1)[5];
        CHECK(std::abs(yaw) > 1.0);
        final_heading_sign.insert(yaw > 0 ? 1.0 : -1.0);
    }
    CHECK(final_heading_sign.size() == 2);
}

TEST_CASE("stop-go contains idle stretches")
{
    auto chain = body::default_chain();
    auto spec = small_spec(SyntheticKind::stop_go, 4, 400);
    spec.noise_std = 0.0;
    std::size_t still = 0;
    for (const auto& s : generate(spec, chain)) {
        for (std::size_t t = 1; t < s.length(); ++t) {
            if (s.frame(t)[0] == s.frame(t - 1)[0] && s.frame(t)[1] == s.frame(t - 1)[1]) {
                ++still;
            }
        }
    }
    CHECK(still > 20);
}

TEST_CASE("export then ingest is lossless in both formats")
{
    auto chain = body::default_chain();
    auto seqs = generate(small_spec(SyntheticKind::branching, 3, 50), chain);
    for (auto fmt : {FileFormat::csv, FileFormat::ndjson}) {
        auto back = ingest_text(export_text(seqs, fmt), fmt, chain.param_dim());
        REQUIRE(back.sequences.size() == seqs.size());
        for (std::size_t i = 0; i < seqs.size(); ++i) {
            CHECK(back.sequences[i].frames == seqs[i].frames);
            CHECK(back.sequences[i].id == seqs[i].id);
            CHECK(back.sequences[i].branch_frame == seqs[i].branch_frame);
            CHECK(back.sequences[i].fps == seqs[i].fps);
        }
    }
    const auto path = std::filesystem::temp_directory_path() / "sbwm_test_seqs.ndjson";
    export_sequences(path, seqs, format_from_extension(path));
    CHECK(ingest(path, FileFormat::ndjson).sequences.size() == 3);
    std::filesystem::remove(path);
}

TEST_CASE("a bad row is reported with its line number")
{
    const std::string text = "# sbwm-motion-csv 1\n# dim=3 fps=30 representation=manifold\n# sequence id=a branch=-1\n"
                             "0,1,2,3\n1,1,x,3\n2,1,2,3\n";
    try {
        ingest_text(text, FileFormat::csv);
        FAIL("expected an error");
    } catch (const Error& e) {
        CHECK(e.category() == ErrorCategory::bad_input);
        CHECK(std::string(e.what()).find("line 5") != std::string::npos);
    }
    const std::string short_row = "# sbwm-motion-csv 1\n# dim=3 fps=30\n# sequence id=a\n0,1,2,3\n1,1,2\n";
    CHECK_THROWS_WITH(ingest_text(short_row, FileFormat::csv), doctest::Contains("line 5"));
    const std::string nd = "{\"type\":\"header\",\"format\":\"sbwm-motion-ndjson\",\"version\":1,\"dim\":2}\n"
                           "{\"type\":\"sequence\",\"id\":\"a\"}\n{\"type\":\"frame\",\"frame\":0,\"x\":[1,2]}\n"
                           "{\"type\":\"frame\",\"frame\":1,\"x\":[1,\"q\"]}\n";
    CHECK_THROWS_WITH(ingest_text(nd, FileFormat::ndjson), doctest::Contains("line 4"));
}

TEST_CASE("dimension mismatch names expected and found")
{
    const std::string text = "# sbwm-motion-csv 1\n# dim=3 fps=30\n# sequence id=a\n0,1,2,3\n1,1,2,3\n";
    CHECK_THROWS_WITH(ingest_text(text, FileFormat::csv, 54), doctest::Contains("expected D=54, found D=3"));
}

TEST_CASE("empty file gives an empty list and a warning")
{
    auto path = temp_file("sbwm_test_empty.csv", "");
    auto result = ingest(path, FileFormat::csv);
    CHECK(result.sequences.empty());
    CHECK(result.warnings.size() == 1);
    std::filesystem::remove(path);
    CHECK_THROWS_AS(ingest(path, FileFormat::csv), Error);
}

TEST_CASE("window counts, skipping and canonical origin")
{
    auto chain = body::default_chain();
    auto seqs = generate(small_spec(SyntheticKind::gait, 4, 90), chain);
    auto w = windows(seqs, 30, 15, 45);
    CHECK(w.windows.size() == 4 * (90 / 45));
    CHECK(w.warnings.empty());
    for (const auto& win : w.windows) {
        CHECK(win.frame(0)[0] == 0.0);
        CHECK(win.frame(0)[1] == 0.0);
        CHECK(win.frames.size() == 45 * win.dim);
    }
    auto shortw = windows(seqs, 80, 20, 5);
    CHECK(shortw.windows.empty());
    CHECK(shortw.warnings.size() == 4);
}

TEST_CASE("joint-space windows translate every joint")
{
    auto chain = body::default_chain();
    auto seqs = to_joint_space(generate(small_spec(SyntheticKind::gait, 1, 60), chain), chain);
    auto w = windows(seqs, 30, 15, 15);
    REQUIRE(!w.windows.empty());
    const auto& win = w.windows.back();
    CHECK(win.frame(0)[0] == 0.0);
    const auto& s = seqs[0];
    const double dx = s.frame(win.start)[3] - s.frame(win.start)[0];
    CHECK(win.frame(0)[3] == doctest::Approx(dx));
}

TEST_CASE("branch windows start prediction at the branch frame")
{
    auto chain = body::default_chain();
    auto seqs = generate(small_spec(SyntheticKind::branching, 3, 200), chain);
    auto w = branch_windows(seqs, 30, 15);
    REQUIRE(w.windows.size() == 3);
    CHECK(w.windows[0].start == 70);
}

TEST_CASE("split is sequence level and leakage free")
{
    auto chain = body::default_chain();
    auto seqs = generate(small_spec(SyntheticKind::gait, 10, 60), chain);
    auto [train, test] = split(seqs, 0.8, 3);
    CHECK(train.size() == 8);
    CHECK(test.size() == 2);
    std::set<std::string> ids;
    for (const auto& w : windows(train, 30, 15, 5).windows) {
        ids.insert(w.source);
    }
    for (const auto& w : windows(test, 30, 15, 5).windows) {
        CHECK(ids.count(w.source) == 0);
    }
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        auto [a, b] = split(seqs, 0.37, seed);
        CHECK(a.size() + b.size() == seqs.size());
    }
}

TEST_CASE("crop sampler visits each sequence once per epoch")
{
    auto chain = body::default_chain();
    auto seqs = generate(small_spec(SyntheticKind::gait, 5, 60), chain);
    CropSampler sampler(seqs, 45, 1);
    auto batch = sampler.next_batch(5);
    CHECK(sampler.epoch() == 0);
    CHECK(batch.size() == 5);
    for (const auto& crop : batch) {
        CHECK(crop.size() == 45 * chain.param_dim());
        CHECK(crop[0] == 0.0);
    }
    sampler.next_batch(1);
    CHECK(sampler.epoch() == 1);
    CropSampler again(seqs, 45, 1);
    CHECK(again.next_batch(5) == batch);
    CHECK_THROWS(CropSampler(seqs, 61, 1));
}

TEST_CASE("displacement form round-trips in both representations")
{
    auto chain = body::default_chain();
    auto manifold = generate(small_spec(SyntheticKind::gait, 1, 40), chain);
    auto joints = to_joint_space(manifold, chain);
    for (const auto* seqs : {&manifold, &joints}) {
        const auto& s = seqs->front();
        std::vector<double> f = s.frames;
        to_displacement_form(f, s.dim, s.representation);
        // Root steps, with frame 0 repeating frame 1's step.
        CHECK(f[s.dim] == doctest::Approx(s.frames[s.dim] - s.frames[0]).epsilon(1e-12));
        CHECK(f[0] == f[s.dim]);
        CHECK(f[2] == s.frames[2]);
        if (s.representation == Representation::joint_space) {
            CHECK(f[3] == doctest::Approx(s.frames[3] - s.frames[0]).epsilon(1e-12));
            CHECK(f[5] == s.frames[5]);
        } else {
            CHECK(f[3] == s.frames[3]);
        }
        from_displacement_form(f, s.dim, s.representation, root_before_first(s.frames, s.dim));
        for (std::size_t i = 0; i < f.size(); ++i) {
            REQUIRE(f[i] == doctest::Approx(s.frames[i]).epsilon(1e-12));
        }
    }
}

TEST_CASE("displacement form of a single frame has zero root step")
{
    std::vector<double> f = {0.4, -0.2, 0.9, 0.1};
    to_displacement_form(f, 4, Representation::manifold);
    CHECK(f == std::vector<double>{0.0, 0.0, 0.9, 0.1});
    CHECK(root_before_first(std::vector<double>{0.4, -0.2, 0.9, 0.1}, 4) == std::array<double, 2>{0.4, -0.2});
    CHECK_THROWS_AS(to_displacement_form(f, 3, Representation::manifold), Error);
}
