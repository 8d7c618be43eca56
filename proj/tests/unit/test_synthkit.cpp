#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <sstream>

#include "gazedistill/metrics.hpp"
#include "gazedistill/synthkit.hpp"
#include "testkit.hpp"

using namespace gazedistill;

namespace {

SceneSpec base_spec(std::uint64_t seed) {
    SceneSpec s;
    s.seed = seed;
    return s;
}

std::pair<int, int> snap(const GazeRecord& g, int h, int w) {
    return {static_cast<int>(std::lround(g.y * (h - 1))), static_cast<int>(std::lround(g.x * (w - 1)))};
}

BinaryMask disk(int side, double cr, double cc, double radius) {
    BinaryMask m(side, side, 0);
    for (int r = 0; r < side; ++r) {
        for (int c = 0; c < side; ++c) m(r, c) = std::hypot(r + 0.5 - cr, c + 0.5 - cc) <= radius;
    }
    return m;
}

std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

}  // namespace

TEST_CASE("scenes are deterministic in the seed") {
    for (std::uint64_t seed : {0ULL, 7ULL, 123456789ULL}) {
        auto spec = base_spec(seed);
        spec.mimic_count = 2;
        const auto a = gen_scene(spec);
        const auto b = gen_scene(spec);
        CHECK(a.image == b.image);
        CHECK(a.gt == b.gt);
        spec.seed += 1;
        const auto c = gen_scene(spec);
        CHECK_FALSE(a.image == c.image);
    }
}

TEST_CASE("noiseless scenes are two-valued away from the lesion edge") {
    testkit::Rng rng(51);
    for (int trial = 0; trial < 40; ++trial) {
        auto spec = base_spec(rng());
        spec.texture_noise = 0.0;
        const auto scene = gen_scene(spec);
        const int n = spec.image_side;
        for (int r = 0; r < n; ++r) {
            for (int c = 0; c < n; ++c) {
                const double v = scene.image(r, c);
                CHECK(v >= spec.background_level - 1e-12);
                CHECK(v <= spec.lesion_level + 1e-12);
                int ones = 0;
                int cells = 0;
                for (int dr = -2; dr <= 2; ++dr) {
                    for (int dc = -2; dc <= 2; ++dc) {
                        const int rr = r + dr;
                        const int cc = c + dc;
                        if (rr < 0 || cc < 0 || rr >= n || cc >= n) continue;
                        ones += scene.gt(rr, cc);
                        ++cells;
                    }
                }
                if (ones == 0) CHECK(std::abs(v - spec.background_level) <= 1e-12);
                if (ones == cells) CHECK(std::abs(v - spec.lesion_level) <= 1e-12);
            }
        }
    }
}

TEST_CASE("lesion area respects the radius range") {
    testkit::Rng rng(52);
    for (int trial = 0; trial < 200; ++trial) {
        auto spec = base_spec(rng());
        spec.radius_min = testkit::uniform(rng, 4.0, 10.0);
        spec.radius_max = spec.radius_min + testkit::uniform(rng, 0.0, 10.0);
        const auto scene = gen_scene(spec);
        const double area = static_cast<double>(count_set(scene.gt));
        const double slack = std::numbers::sqrt2 / 2.0;
        CHECK(area >= std::numbers::pi * std::pow(spec.radius_min - slack, 2));
        CHECK(area <= std::numbers::pi * std::pow(spec.radius_max + slack, 2));
        for (int r = 0; r < spec.image_side; ++r) {
            for (int c = 0; c < spec.image_side; ++c) {
                const double d = std::hypot(r + 0.5 - scene.center_row, c + 0.5 - scene.center_col);
                if (d <= spec.radius_min) CHECK(scene.gt(r, c) == 1);
                if (d > spec.radius_max) CHECK(scene.gt(r, c) == 0);
            }
        }
    }
}

TEST_CASE("scene spec validation") {
    auto bad = [](auto mutate) {
        SceneSpec s;
        mutate(s);
        CHECK_THROWS_AS(gen_scene(s), ParameterError);
    };
    bad([](SceneSpec& s) { s.image_side = 4; });
    bad([](SceneSpec& s) { s.lesion_count = 2; });
    bad([](SceneSpec& s) { s.radius_min = 0.0; });
    bad([](SceneSpec& s) { s.radius_max = s.radius_min - 1.0; });
    bad([](SceneSpec& s) { s.radius_max = 40.0; });
    bad([](SceneSpec& s) { s.texture_noise = -0.1; });
    bad([](SceneSpec& s) { s.distractor_rate = 1.5; });
    bad([](SceneSpec& s) { s.mimic_attention = -0.5; });
}

TEST_CASE("gaze without distractors or jitter stays inside the lesion") {
    testkit::Rng rng(53);
    for (int trial = 0; trial < 50; ++trial) {
        auto spec = base_spec(rng());
        spec.distractor_rate = 0.0;
        spec.gaze_jitter_px = 0.0;
        spec.gaze_points = 200;
        const auto scene = gen_scene(spec);
        const auto gaze = simulate_gaze(scene.gt, spec);
        REQUIRE(gaze.size() == 200u);
        for (const auto& g : gaze) {
            const auto [r, c] = snap(g, spec.image_side, spec.image_side);
            CHECK(scene.gt(r, c) == 1);
            CHECK(g.duration_ms > 0.0);
        }
    }
}

TEST_CASE("distractor share outside the lesion follows the binomial band") {
    testkit::Rng rng(54);
    std::size_t outside_total = 0;
    double expected_total = 0.0;
    const int scenes = 60;
    for (int trial = 0; trial < scenes; ++trial) {
        auto spec = base_spec(rng());
        spec.distractor_rate = 0.2;
        spec.gaze_jitter_px = 0.0;
        spec.gaze_points = 500;
        const auto scene = gen_scene(spec);
        const auto gaze = simulate_gaze(scene.gt, spec);
        std::size_t outside = 0;
        for (const auto& g : gaze) {
            const auto [r, c] = snap(g, spec.image_side, spec.image_side);
            outside += scene.gt(r, c) == 0;
        }
        const double covered = static_cast<double>(count_set(scene.gt)) / static_cast<double>(scene.gt.size());
        // uniform distractors land inside the lesion with probability `covered`
        CHECK(testkit::within_binomial_band(outside, 500, 0.2 * (1.0 - covered)));
        outside_total += outside;
        expected_total += 500.0 * 0.2 * (1.0 - covered);
    }
    const double p = expected_total / (500.0 * scenes);
    CHECK(testkit::within_binomial_band(outside_total, 500 * scenes, p));
}

TEST_CASE("pure distractor gaze ignores the lesion") {
    testkit::Rng rng(55);
    std::size_t inside = 0;
    std::size_t total = 0;
    double expected = 0.0;
    for (int trial = 0; trial < 40; ++trial) {
        auto spec = base_spec(rng());
        spec.distractor_rate = 1.0;
        spec.gaze_points = 300;
        const auto scene = gen_scene(spec);
        const auto other = disk(spec.image_side, 10.0, 50.0, 6.0);
        const auto a = simulate_gaze(scene.gt, spec);
        const auto b = simulate_gaze(other, spec);
        CHECK(a == b);
        for (const auto& g : a) {
            const auto [r, c] = snap(g, spec.image_side, spec.image_side);
            inside += scene.gt(r, c);
        }
        total += a.size();
        expected += static_cast<double>(a.size()) * static_cast<double>(count_set(scene.gt)) /
                    static_cast<double>(scene.gt.size());
    }
    CHECK(testkit::within_binomial_band(inside, total, expected / static_cast<double>(total)));
}

TEST_CASE("gaze requires a nonempty lesion") {
    CHECK_THROWS_AS(simulate_gaze(BinaryMask(64, 64, 0), SceneSpec{}), InputError);
    CHECK_THROWS_AS(simulate_report(BinaryMask(64, 64, 0)), InputError);
}

TEST_CASE("gaze is deterministic in the seed") {
    auto spec = base_spec(9);
    spec.mimic_count = 2;
    spec.mimic_fixation_share = 0.5;
    spec.mimic_attention = 1.0;
    const auto scene = gen_scene(spec);
    CHECK(simulate_gaze(scene, spec) == simulate_gaze(scene, spec));
    auto other = spec;
    other.seed = 10;
    CHECK_FALSE(simulate_gaze(scene, spec) == simulate_gaze(scene, other));
}

TEST_CASE("attended mimics receive distractor fixations") {
    auto spec = base_spec(11);
    spec.mimic_count = 2;
    spec.mimic_attention = 1.0;
    spec.mimic_fixation_share = 1.0;
    spec.distractor_rate = 0.5;
    spec.gaze_jitter_px = 0.0;
    spec.gaze_points = 400;
    const auto scene = gen_scene(spec);
    REQUIRE_FALSE(scene.mimics.empty());
    for (const auto& g : simulate_gaze(scene, spec)) {
        const auto [r, c] = snap(g, spec.image_side, spec.image_side);
        bool near = scene.gt(r, c) == 1;
        for (const auto& m : scene.mimics) near = near || std::hypot(r + 0.5 - m.row, c + 0.5 - m.col) <= m.radius + 1.0;
        CHECK(near);
    }
}

TEST_CASE("report location follows the centroid quadrant") {
    CHECK(simulate_report(disk(64, 16, 16, 6)).location == Location::upper_left);
    CHECK(simulate_report(disk(64, 16, 48, 6)).location == Location::upper_right);
    CHECK(simulate_report(disk(64, 48, 16, 6)).location == Location::lower_left);
    CHECK(simulate_report(disk(64, 48, 48, 6)).location == Location::lower_right);
}

TEST_CASE("report area counts covered pixels") {
    BinaryMask quarter(64, 64, 0);
    for (int r = 10; r < 42; ++r) {
        for (int c = 20; c < 52; ++c) quarter(r, c) = 1;
    }
    CHECK(std::abs(simulate_report(quarter).area_percent - 25.0) <= 0.5);
    testkit::Rng rng(56);
    for (int trial = 0; trial < 100; ++trial) {
        const auto m = testkit::random_shape_mask(rng, 32, 32);
        const double exact = 100.0 * static_cast<double>(count_set(m)) / static_cast<double>(m.size());
        CHECK(std::abs(simulate_report(m).area_percent - exact) <= 0.05 + 1e-9);
    }
}

TEST_CASE("report classifies a disk as clear and smooth") {
    for (double radius : {6.0, 10.0, 20.0}) {
        const auto rep = simulate_report(disk(64, 32, 32, radius));
        CHECK(rep.boundary == Boundary::clear);
        CHECK(rep.characteristics == std::set<Characteristic>{Characteristic::smooth});
        CHECK(rep.confidence == ReportConfidence::high);
        CHECK(rep.remarks.empty());
    }
}

TEST_CASE("report classifies a star as irregular and lobulated") {
    BinaryMask star(64, 64, 0);
    for (int r = 0; r < 64; ++r) {
        for (int c = 0; c < 64; ++c) {
            const double dy = r + 0.5 - 32;
            const double dx = c + 0.5 - 32;
            const double radius = 12.0 + 9.0 * std::cos(5.0 * std::atan2(dy, dx));
            star(r, c) = std::hypot(dy, dx) <= radius;
        }
    }
    const auto rep = simulate_report(star);
    CHECK(rep.boundary == Boundary::irregular);
    CHECK(rep.characteristics == std::set<Characteristic>{Characteristic::lobulated});
}

TEST_CASE("shape descriptors on simple masks") {
    BinaryMask square(20, 20, 0);
    for (int r = 5; r < 15; ++r) {
        for (int c = 5; c < 15; ++c) square(r, c) = 1;
    }
    CHECK(convexity_defect(square) == 0.0);
    // 100 pixels, 40 exposed edges: 4π·100 / (10π)²
    CHECK(std::abs(isoperimetric_ratio(square) - 4.0 / std::numbers::pi) <= 1e-12);
    BinaryMask ring = square;
    for (int r = 7; r < 13; ++r) {
        for (int c = 7; c < 13; ++c) ring(r, c) = 0;
    }
    CHECK(std::abs(convexity_defect(ring) - 0.36) <= 1e-12);
}

TEST_CASE("broad masks cover at least as much lesion as confident masks") {
    testkit::Rng rng(57);
    int nonempty = 0;
    for (int trial = 0; trial < 60; ++trial) {
        auto spec = base_spec(rng());
        const auto scene = gen_scene(spec);
        const auto gaze = simulate_gaze(scene, spec);
        const auto masks = masks_from_gaze(gaze, spec.image_side, spec.image_side, MaskParams{});
        CHECK(recall(masks.m_bc, scene.gt) >= recall(masks.m_hc, scene.gt));
        nonempty += count_set(masks.m_hc) > 0;
    }
    CHECK(nonempty >= 50);
}

TEST_CASE("datasets are reproducible") {
    testkit::TempDir a;
    testkit::TempDir b;
    testkit::TempDir c;
    auto spec = base_spec(5);
    spec.image_side = 32;
    spec.radius_min = 4;
    spec.radius_max = 8;
    const auto sa = write_dataset(a.str(), spec, 4);
    const auto sb = write_dataset(b.str(), spec, 4);
    CHECK(sa.count == 4);
    CHECK(sa.manifest_sha256 == sb.manifest_sha256);
    CHECK(sa.manifest_sha256.size() == 64);
    namespace fs = std::filesystem;
    for (const char* sub : {"images", "masks", "gaze", "reports"}) {
        std::size_t files = 0;
        for (const auto& e : fs::directory_iterator(a.path() / sub)) {
            ++files;
            CHECK(slurp(e.path()) == slurp(b.path() / sub / e.path().filename()));
        }
        CHECK(files == 4u);
    }
    CHECK(fs::exists(a.path() / "manifest.json"));
    spec.seed = 6;
    CHECK(write_dataset(c.str(), spec, 4).manifest_sha256 != sa.manifest_sha256);
    CHECK_THROWS_AS(write_dataset(c.str(), spec, 0), ParameterError);
}

TEST_CASE("scene ids and per-scene seeds") {
    CHECK(scene_id(7) == "scene_0007");
    const SceneSpec base;
    CHECK(scene_spec_for(base, 1, 0).seed != scene_spec_for(base, 1, 1).seed);
    CHECK(scene_spec_for(base, 1, 0).seed != scene_spec_for(base, 2, 0).seed);
    CHECK(scene_spec_for(base, 1, 3).seed == scene_spec_for(base, 1, 3).seed);
}
