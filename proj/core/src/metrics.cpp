#include "gazedistill/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include <json.hpp>

namespace gazedistill {

double dice(const BinaryMask& a, const BinaryMask& b) {
    require_same_shape(a, b, "dice");
    std::size_t inter = 0;
    std::size_t na = 0;
    std::size_t nb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const bool x = a[i] != 0;
        const bool y = b[i] != 0;
        inter += x && y;
        na += x;
        nb += y;
    }
    if (na + nb == 0) return 1.0;
    return 2.0 * static_cast<double>(inter) / static_cast<double>(na + nb);
}

double miou(const BinaryMask& a, const BinaryMask& b) {
    require_same_shape(a, b, "miou");
    std::size_t fg_inter = 0;
    std::size_t fg_union = 0;
    std::size_t bg_inter = 0;
    std::size_t bg_union = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const bool x = a[i] != 0;
        const bool y = b[i] != 0;
        fg_inter += x && y;
        fg_union += x || y;
        bg_inter += !x && !y;
        bg_union += !x || !y;
    }
    const double fg = fg_union == 0 ? 1.0 : static_cast<double>(fg_inter) / static_cast<double>(fg_union);
    const double bg = bg_union == 0 ? 1.0 : static_cast<double>(bg_inter) / static_cast<double>(bg_union);
    return 0.5 * (fg + bg);
}

std::vector<std::pair<int, int>> boundary_pixels(const BinaryMask& mask) {
    std::vector<std::pair<int, int>> out;
    const int h = mask.height();
    const int w = mask.width();
    for (int r = 0; r < h; ++r) {
        for (int c = 0; c < w; ++c) {
            if (mask(r, c) == 0) continue;
            const bool edge = r == 0 || c == 0 || r == h - 1 || c == w - 1 || mask(r - 1, c) == 0 ||
                              mask(r + 1, c) == 0 || mask(r, c - 1) == 0 || mask(r, c + 1) == 0;
            if (edge) out.emplace_back(r, c);
        }
    }
    return out;
}

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// 1-D squared distance transform of a sampled function (lower envelope of parabolas).
void dt_1d(const std::vector<double>& f, std::vector<double>& d, std::vector<int>& v, std::vector<double>& z) {
    const int n = static_cast<int>(f.size());
    int k = -1;
    for (int q = 0; q < n; ++q) {
        if (f[static_cast<std::size_t>(q)] == kInf) continue;
        if (k < 0) {
            k = 0;
            v[0] = q;
            z[0] = -kInf;
            z[1] = kInf;
            continue;
        }
        double s = 0.0;
        while (true) {
            const int p = v[static_cast<std::size_t>(k)];
            s = ((f[static_cast<std::size_t>(q)] + static_cast<double>(q) * q) -
                 (f[static_cast<std::size_t>(p)] + static_cast<double>(p) * p)) /
                (2.0 * (q - p));
            if (s <= z[static_cast<std::size_t>(k)]) {
                --k;
                if (k < 0) break;
            } else {
                break;
            }
        }
        ++k;
        v[static_cast<std::size_t>(k)] = q;
        z[static_cast<std::size_t>(k)] = k == 0 ? -kInf : s;
        z[static_cast<std::size_t>(k) + 1] = kInf;
    }
    if (k < 0) {
        std::fill(d.begin(), d.end(), kInf);
        return;
    }
    int j = 0;
    for (int q = 0; q < n; ++q) {
        while (z[static_cast<std::size_t>(j) + 1] < q) ++j;
        const int p = v[static_cast<std::size_t>(j)];
        d[static_cast<std::size_t>(q)] = static_cast<double>(q - p) * (q - p) + f[static_cast<std::size_t>(p)];
    }
}

}  // namespace

Grid<double> squared_distance_transform(const BinaryMask& sites) {
    const int h = sites.height();
    const int w = sites.width();
    Grid<double> out(h, w, kInf);
    for (std::size_t i = 0; i < sites.size(); ++i) {
        if (sites[i] != 0) out[i] = 0.0;
    }
    const int n = std::max(h, w);
    std::vector<double> f(static_cast<std::size_t>(n));
    std::vector<double> d(static_cast<std::size_t>(n));
    std::vector<int> v(static_cast<std::size_t>(n));
    std::vector<double> z(static_cast<std::size_t>(n) + 1);
    // columns
    f.resize(static_cast<std::size_t>(h));
    d.resize(static_cast<std::size_t>(h));
    for (int c = 0; c < w; ++c) {
        for (int r = 0; r < h; ++r) f[static_cast<std::size_t>(r)] = out(r, c);
        dt_1d(f, d, v, z);
        for (int r = 0; r < h; ++r) out(r, c) = d[static_cast<std::size_t>(r)];
    }
    // rows
    f.resize(static_cast<std::size_t>(w));
    d.resize(static_cast<std::size_t>(w));
    for (int r = 0; r < h; ++r) {
        for (int c = 0; c < w; ++c) f[static_cast<std::size_t>(c)] = out(r, c);
        dt_1d(f, d, v, z);
        for (int c = 0; c < w; ++c) out(r, c) = d[static_cast<std::size_t>(c)];
    }
    return out;
}

std::vector<double> surface_distances(const BinaryMask& a, const BinaryMask& b, double spacing) {
    require_same_shape(a, b, "surface distance");
    const auto ba = boundary_pixels(a);
    const auto bb = boundary_pixels(b);
    if (ba.empty() || bb.empty()) throw UndefinedMetricError("surface distance is undefined for an empty mask");
    auto to_mask = [&](const std::vector<std::pair<int, int>>& pts) {
        BinaryMask m(a.height(), a.width(), 0);
        for (auto [r, c] : pts) m(r, c) = 1;
        return m;
    };
    const Grid<double> dist_to_b = squared_distance_transform(to_mask(bb));
    const Grid<double> dist_to_a = squared_distance_transform(to_mask(ba));
    std::vector<double> out;
    out.reserve(ba.size() + bb.size());
    for (auto [r, c] : ba) out.push_back(std::sqrt(dist_to_b(r, c)) * spacing);
    for (auto [r, c] : bb) out.push_back(std::sqrt(dist_to_a(r, c)) * spacing);
    std::sort(out.begin(), out.end());
    return out;
}

double percentile(std::vector<double> values, double q) {
    if (values.empty()) throw UndefinedMetricError("percentile of an empty set");
    if (!(q >= 0.0 && q <= 1.0)) throw ParameterError("percentile: q must lie in [0,1]");
    std::sort(values.begin(), values.end());
    const double rank = q * static_cast<double>(values.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(rank));
    const auto hi = static_cast<std::size_t>(std::ceil(rank));
    const double frac = rank - static_cast<double>(lo);
    return values[lo] + (values[hi] - values[lo]) * frac;
}

double hd95(const BinaryMask& a, const BinaryMask& b, double spacing) {
    return percentile(surface_distances(a, b, spacing), 0.95);
}

double asd(const BinaryMask& a, const BinaryMask& b, double spacing) {
    const auto d = surface_distances(a, b, spacing);
    return std::accumulate(d.begin(), d.end(), 0.0) / static_cast<double>(d.size());
}

double recall(const BinaryMask& prediction, const BinaryMask& truth) {
    require_same_shape(prediction, truth, "recall");
    std::size_t hit = 0;
    std::size_t total = 0;
    for (std::size_t i = 0; i < truth.size(); ++i) {
        if (truth[i] == 0) continue;
        ++total;
        hit += prediction[i] != 0;
    }
    return total == 0 ? 1.0 : static_cast<double>(hit) / static_cast<double>(total);
}

MaskScores score_masks(const BinaryMask& prediction, const BinaryMask& truth, double spacing) {
    MaskScores s;
    s.dice = dice(prediction, truth);
    s.miou = miou(prediction, truth);
    if (count_set(prediction) > 0 && count_set(truth) > 0) {
        const auto d = surface_distances(prediction, truth, spacing);
        s.hd95 = percentile(d, 0.95);
        s.asd = std::accumulate(d.begin(), d.end(), 0.0) / static_cast<double>(d.size());
    }
    return s;
}

MetricSummary summarize(const std::vector<std::optional<double>>& values) {
    MetricSummary s;
    double sum = 0.0;
    for (const auto& v : values) {
        if (!v) continue;
        sum += *v;
        ++s.count;
    }
    if (s.count == 0) return s;
    s.mean = sum / static_cast<double>(s.count);
    double sq = 0.0;
    for (const auto& v : values) {
        if (v) sq += (*v - s.mean) * (*v - s.mean);
    }
    s.stddev = std::sqrt(sq / static_cast<double>(s.count));
    return s;
}

std::string evaluation_report_json(const std::vector<std::string>& ids, const std::vector<MaskScores>& scores) {
    if (ids.size() != scores.size()) throw StructuralError("evaluation report: id/score count mismatch");
    using nlohmann::ordered_json;
    auto optional_json = [](const std::optional<double>& v) { return v ? ordered_json(*v) : ordered_json(nullptr); };
    ordered_json doc;
    ordered_json per_image = ordered_json::array();
    std::vector<std::optional<double>> d;
    std::vector<std::optional<double>> m;
    std::vector<std::optional<double>> h;
    std::vector<std::optional<double>> a;
    for (std::size_t i = 0; i < ids.size(); ++i) {
        per_image.push_back({{"id", ids[i]},
                             {"dice", scores[i].dice},
                             {"miou", scores[i].miou},
                             {"hd95", optional_json(scores[i].hd95)},
                             {"asd", optional_json(scores[i].asd)}});
        d.emplace_back(scores[i].dice);
        m.emplace_back(scores[i].miou);
        h.push_back(scores[i].hd95);
        a.push_back(scores[i].asd);
    }
    auto summary = [](const std::vector<std::optional<double>>& v) {
        const auto s = summarize(v);
        return ordered_json{{"mean", s.mean}, {"std", s.stddev}, {"count", s.count}};
    };
    doc["images"] = per_image;
    doc["aggregate"] = {{"dice", summary(d)}, {"miou", summary(m)}, {"hd95", summary(h)}, {"asd", summary(a)}};
    return doc.dump(2) + "\n";
}

}  // namespace gazedistill
