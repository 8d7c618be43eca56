#include "gazedistill/synthkit.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>

#include <json.hpp>

#include "gazedistill/io.hpp"

namespace gazedistill {

namespace {

constexpr int kSupersample = 4;
constexpr int kHarmonics = 3;  // k = 2..4

std::uint64_t mix(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

struct Blob {
    double cr = 0.0;
    double cc = 0.0;
    double r0 = 0.0;
    double amp[kHarmonics] = {};
    double phase[kHarmonics] = {};

    double radius(double theta) const {
        double s = 1.0;
        for (int k = 0; k < kHarmonics; ++k) s += amp[k] * std::cos((k + 2) * theta + phase[k]);
        return r0 * s;
    }
    bool contains(double row, double col) const {
        const double dr = row - cr;
        const double dc = col - cc;
        const double d = std::hypot(dr, dc);
        if (d == 0.0) return true;
        return d <= radius(std::atan2(dr, dc));
    }
};

}  // namespace

void SceneSpec::validate() const {
    if (image_side < 8) throw ParameterError("scene: image_side must be >= 8");
    if (lesion_count != 1) throw ParameterError("scene: only single-lesion scenes are supported");
    if (!(radius_min > 0.0 && radius_max >= radius_min)) throw ParameterError("scene: invalid radius range");
    if (2.0 * radius_max + 2.0 > image_side) throw ParameterError("scene: radius range does not fit the image");
    if (texture_noise < 0.0) throw ParameterError("scene: texture_noise must be >= 0");
    if (gaze_points < 0) throw ParameterError("scene: gaze_points must be >= 0");
    if (gaze_jitter_px < 0.0) throw ParameterError("scene: gaze_jitter_px must be >= 0");
    if (!(distractor_rate >= 0.0 && distractor_rate <= 1.0)) throw ParameterError("scene: distractor_rate must lie in [0,1]");
    if (mimic_count < 0) throw ParameterError("scene: mimic_count must be >= 0");
    if (mimic_count > 0 && !(mimic_radius_min > 0.0 && mimic_radius_max >= mimic_radius_min)) {
        throw ParameterError("scene: invalid mimic radius range");
    }
    if (!(mimic_attention >= 0.0 && mimic_attention <= 1.0)) throw ParameterError("scene: mimic_attention must lie in [0,1]");
    if (!(mimic_fixation_share >= 0.0 && mimic_fixation_share <= 1.0)) {
        throw ParameterError("scene: mimic_fixation_share must lie in [0,1]");
    }
}

Scene gen_scene(const SceneSpec& spec) {
    spec.validate();
    std::mt19937_64 rng(mix(spec.seed));
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    const int n = spec.image_side;

    Blob blob;
    const double spread = (spec.radius_max - spec.radius_min) / (spec.radius_max + spec.radius_min);
    const double total_amp = std::min(0.3, spread);
    double weights[kHarmonics];
    double wsum = 0.0;
    for (double& w : weights) {
        w = unit(rng);
        wsum += w;
    }
    const double used = total_amp * unit(rng);
    for (int k = 0; k < kHarmonics; ++k) {
        blob.amp[k] = wsum > 0.0 ? used * weights[k] / wsum : 0.0;
        blob.phase[k] = 2.0 * std::numbers::pi * unit(rng);
    }
    const double lo = spec.radius_min / (1.0 - used);
    const double hi = spec.radius_max / (1.0 + used);
    blob.r0 = lo + (std::max(hi, lo) - lo) * unit(rng);
    const double margin = spec.radius_max + 1.0;
    blob.cr = margin + (n - 2.0 * margin) * unit(rng);
    blob.cc = margin + (n - 2.0 * margin) * unit(rng);

    Scene scene{Image(n, n, spec.background_level), BinaryMask(n, n, 0), blob.cr, blob.cc, {}};
    if (spec.mimic_count > 0) {
        std::mt19937_64 mrng(mix(spec.seed ^ 0x6d696d6963ULL));
        std::uniform_real_distribution<double> u(0.0, 1.0);
        for (int m = 0; m < spec.mimic_count; ++m) {
            for (int attempt = 0; attempt < 100; ++attempt) {
                Mimic mm;
                mm.radius = spec.mimic_radius_min + (spec.mimic_radius_max - spec.mimic_radius_min) * u(mrng);
                const double edge = mm.radius + 1.0;
                mm.row = edge + (n - 2.0 * edge) * u(mrng);
                mm.col = edge + (n - 2.0 * edge) * u(mrng);
                bool clear = std::hypot(mm.row - blob.cr, mm.col - blob.cc) >= spec.radius_max + mm.radius + 2.0;
                for (const auto& o : scene.mimics) {
                    clear = clear && std::hypot(mm.row - o.row, mm.col - o.col) >= mm.radius + o.radius + 2.0;
                }
                if (!clear) continue;
                mm.attended = u(mrng) < spec.mimic_attention;
                scene.mimics.push_back(mm);
                break;
            }
        }
    }
    auto in_mimic = [&](double row, double col) {
        for (const auto& m : scene.mimics) {
            if (std::hypot(row - m.row, col - m.col) <= m.radius) return true;
        }
        return false;
    };
    std::normal_distribution<double> noise(0.0, 1.0);
    const double step = 1.0 / kSupersample;
    for (int r = 0; r < n; ++r) {
        for (int c = 0; c < n; ++c) {
            scene.gt(r, c) = blob.contains(r + 0.5, c + 0.5) ? 1 : 0;
            int hits = 0;
            int mimic_hits = 0;
            for (int i = 0; i < kSupersample; ++i) {
                for (int j = 0; j < kSupersample; ++j) {
                    const double y = r + (i + 0.5) * step;
                    const double x = c + (j + 0.5) * step;
                    hits += blob.contains(y, x);
                    if (!scene.mimics.empty()) mimic_hits += in_mimic(y, x);
                }
            }
            constexpr double kSamples = kSupersample * kSupersample;
            double v = spec.background_level + hits / kSamples * (spec.lesion_level - spec.background_level) +
                       mimic_hits / kSamples * (spec.mimic_level - spec.background_level);
            if (spec.texture_noise > 0.0) v += spec.texture_noise * noise(rng);
            scene.image(r, c) = std::clamp(v, 0.0, 1.0);
        }
    }
    return scene;
}

namespace {

std::vector<GazeRecord> gaze_impl(const BinaryMask& gt, const std::vector<Mimic>& mimics, const SceneSpec& spec) {
    spec.validate();
    std::vector<std::pair<int, int>> inside;
    for (int r = 0; r < gt.height(); ++r) {
        for (int c = 0; c < gt.width(); ++c) {
            if (gt(r, c) != 0) inside.emplace_back(r, c);
        }
    }
    if (inside.empty()) throw InputError("simulate_gaze: ground-truth mask is empty");
    std::vector<const Mimic*> attended;
    for (const auto& m : mimics) {
        if (m.attended) attended.push_back(&m);
    }
    std::mt19937_64 rng(mix(spec.seed ^ 0x67617a65ULL));
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::uniform_int_distribution<std::size_t> pick(0, inside.size() - 1);
    std::normal_distribution<double> jitter(0.0, 1.0);
    std::lognormal_distribution<double> duration(5.5, 0.4);
    const double hmax = gt.height() - 1;
    const double wmax = gt.width() - 1;
    const bool use_mimics = !attended.empty() && spec.mimic_fixation_share > 0.0;

    std::vector<GazeRecord> out;
    out.reserve(static_cast<std::size_t>(spec.gaze_points));
    for (int i = 0; i < spec.gaze_points; ++i) {
        double row = 0.0;
        double col = 0.0;
        bool jittered = false;
        if (unit(rng) < spec.distractor_rate) {
            if (use_mimics && unit(rng) < spec.mimic_fixation_share) {
                const Mimic& m = *attended[std::uniform_int_distribution<std::size_t>(0, attended.size() - 1)(rng)];
                const double rad = m.radius * std::sqrt(unit(rng));
                const double ang = 2.0 * std::numbers::pi * unit(rng);
                // pixel (r, c) has centre (r + 0.5, c + 0.5)
                row = m.row + rad * std::sin(ang) - 0.5;
                col = m.col + rad * std::cos(ang) - 0.5;
                jittered = true;
            } else {
                row = hmax * unit(rng);
                col = wmax * unit(rng);
            }
        } else {
            const auto [r, c] = inside[pick(rng)];
            row = r;
            col = c;
            jittered = true;
        }
        if (jittered && spec.gaze_jitter_px > 0.0) {
            row += spec.gaze_jitter_px * jitter(rng);
            col += spec.gaze_jitter_px * jitter(rng);
        }
        GazeRecord rec;
        rec.y = hmax > 0 ? std::clamp(row, 0.0, hmax) / hmax : 0.0;
        rec.x = wmax > 0 ? std::clamp(col, 0.0, wmax) / wmax : 0.0;
        rec.duration_ms = duration(rng);
        rec.confidence = 1.0;
        out.push_back(rec);
    }
    return out;
}

}  // namespace

std::vector<GazeRecord> simulate_gaze(const BinaryMask& gt, const SceneSpec& spec) { return gaze_impl(gt, {}, spec); }

std::vector<GazeRecord> simulate_gaze(const Scene& scene, const SceneSpec& spec) {
    return gaze_impl(scene.gt, scene.mimics, spec);
}

double isoperimetric_ratio(const BinaryMask& mask) {
    const int h = mask.height();
    const int w = mask.width();
    std::size_t area = 0;
    std::size_t edges = 0;
    auto at = [&](int r, int c) { return r >= 0 && c >= 0 && r < h && c < w && mask(r, c) != 0; };
    for (int r = 0; r < h; ++r) {
        for (int c = 0; c < w; ++c) {
            if (!at(r, c)) continue;
            ++area;
            edges += !at(r - 1, c) + !at(r + 1, c) + !at(r, c - 1) + !at(r, c + 1);
        }
    }
    if (area == 0) throw InputError("isoperimetric_ratio: empty mask");
    const double perimeter = static_cast<double>(edges) * std::numbers::pi / 4.0;
    return 4.0 * std::numbers::pi * static_cast<double>(area) / (perimeter * perimeter);
}

double convexity_defect(const BinaryMask& mask) {
    using Pt = std::pair<long, long>;
    std::vector<Pt> pts;
    for (int r = 0; r < mask.height(); ++r) {
        for (int c = 0; c < mask.width(); ++c) {
            if (mask(r, c) != 0) pts.emplace_back(c, r);
        }
    }
    if (pts.empty()) throw InputError("convexity_defect: empty mask");
    std::sort(pts.begin(), pts.end());
    auto cross = [](const Pt& o, const Pt& a, const Pt& b) {
        return (a.first - o.first) * (b.second - o.second) - (a.second - o.second) * (b.first - o.first);
    };
    std::vector<Pt> hull;
    if (pts.size() >= 3) {
        hull.resize(2 * pts.size());
        std::size_t k = 0;
        for (const auto& p : pts) {
            while (k >= 2 && cross(hull[k - 2], hull[k - 1], p) <= 0) --k;
            hull[k++] = p;
        }
        for (std::size_t i = pts.size() - 1, t = k + 1; i-- > 0;) {
            while (k >= t && cross(hull[k - 2], hull[k - 1], pts[i]) <= 0) --k;
            hull[k++] = pts[i];
        }
        hull.resize(k - 1);
    }
    std::size_t hull_points = pts.size();
    if (hull.size() >= 3) {
        hull_points = 0;
        for (int r = 0; r < mask.height(); ++r) {
            for (int c = 0; c < mask.width(); ++c) {
                const Pt p{c, r};
                bool in = true;
                for (std::size_t i = 0; i < hull.size() && in; ++i) {
                    in = cross(hull[i], hull[(i + 1) % hull.size()], p) >= 0;
                }
                hull_points += in;
            }
        }
    }
    return static_cast<double>(hull_points - pts.size()) / static_cast<double>(hull_points);
}

LesionReport simulate_report(const BinaryMask& gt) {
    const std::size_t area = count_set(gt);
    if (area == 0) throw InputError("simulate_report: ground-truth mask is empty");
    double sr = 0.0;
    double sc = 0.0;
    for (int r = 0; r < gt.height(); ++r) {
        for (int c = 0; c < gt.width(); ++c) {
            if (gt(r, c) == 0) continue;
            sr += r + 0.5;
            sc += c + 0.5;
        }
    }
    const double cr = sr / static_cast<double>(area);
    const double cc = sc / static_cast<double>(area);
    const bool upper = cr < gt.height() / 2.0;
    const bool left = cc < gt.width() / 2.0;
    LesionReport rep;
    rep.location = upper ? (left ? Location::upper_left : Location::upper_right)
                         : (left ? Location::lower_left : Location::lower_right);
    rep.area_percent = quantize_area(100.0 * static_cast<double>(area) / static_cast<double>(gt.size()));
    rep.boundary = isoperimetric_ratio(gt) >= kClearBoundaryRatio ? Boundary::clear : Boundary::irregular;
    rep.characteristics = {convexity_defect(gt) < kSmoothDefect ? Characteristic::smooth : Characteristic::lobulated};
    rep.confidence = ReportConfidence::high;
    return rep;
}

SceneSpec scene_spec_for(const SceneSpec& base, std::uint64_t seed, int index) {
    SceneSpec s = base;
    s.seed = mix(seed * 0x100000001b3ULL + static_cast<std::uint64_t>(index));
    return s;
}

std::string scene_id(int index) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "scene_%04d", index);
    return buf;
}

DatasetSummary write_dataset(const std::string& dir, const SceneSpec& base, int count) {
    base.validate();
    if (count < 1) throw ParameterError("write_dataset: count must be >= 1");
    namespace fs = std::filesystem;
    const fs::path root(dir);
    for (const char* sub : {"images", "masks", "gaze", "reports"}) fs::create_directories(root / sub);

    nlohmann::ordered_json manifest;
    manifest["spec"] = {{"image_side", base.image_side},
                        {"lesion_count", base.lesion_count},
                        {"radius_min", base.radius_min},
                        {"radius_max", base.radius_max},
                        {"texture_noise", base.texture_noise},
                        {"gaze_points", base.gaze_points},
                        {"gaze_jitter_px", base.gaze_jitter_px},
                        {"distractor_rate", base.distractor_rate},
                        {"background_level", base.background_level},
                        {"lesion_level", base.lesion_level},
                        {"mimic_count", base.mimic_count},
                        {"mimic_radius_min", base.mimic_radius_min},
                        {"mimic_radius_max", base.mimic_radius_max},
                        {"mimic_level", base.mimic_level},
                        {"mimic_attention", base.mimic_attention},
                        {"mimic_fixation_share", base.mimic_fixation_share}};
    manifest["seed"] = base.seed;
    manifest["count"] = count;
    nlohmann::ordered_json files = nlohmann::ordered_json::array();
    for (int i = 0; i < count; ++i) {
        const SceneSpec spec = scene_spec_for(base, base.seed, i);
        const Scene scene = gen_scene(spec);
        const auto gaze = simulate_gaze(scene, spec);
        const auto report = simulate_report(scene.gt);
        const std::string id = scene_id(i);
        write_image_png((root / "images" / (id + ".png")).string(), scene.image);
        write_mask_png((root / "masks" / (id + ".png")).string(), scene.gt);
        {
            std::ofstream out(root / "gaze" / (id + ".csv"));
            write_gaze_csv(out, gaze);
            if (!out) throw InputError("write_dataset: cannot write gaze log for " + id);
        }
        write_file_text((root / "reports" / (id + ".json")).string(), canonical_json(report) + "\n");
        nlohmann::ordered_json entry;
        entry["id"] = id;
        for (const char* sub : {"images", "masks", "reports"}) {
            const std::string ext = std::string(sub) == "reports" ? ".json" : ".png";
            entry[sub] = sha256_hex(read_file_bytes((root / sub / (id + ext)).string()));
        }
        entry["gaze"] = sha256_hex(read_file_bytes((root / "gaze" / (id + ".csv")).string()));
        files.push_back(entry);
    }
    manifest["files"] = files;
    const std::string text = manifest.dump(2) + "\n";
    write_file_text((root / "manifest.json").string(), text);
    return {count, sha256_hex(text)};
}

}  // namespace gazedistill
