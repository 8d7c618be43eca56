#include "gazedistill/gaze_masks.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <tuple>

#include <json.hpp>

namespace gazedistill {

namespace {

std::string trim(std::string_view s) {
    auto begin = s.find_first_not_of(" \t\r\n");
    if (begin == std::string_view::npos) return {};
    auto end = s.find_last_not_of(" \t\r\n");
    return std::string(s.substr(begin, end - begin + 1));
}

double parse_number(const std::string& field, std::size_t line, const char* name) {
    double v = 0.0;
    const char* first = field.data();
    const char* last = field.data() + field.size();
    auto [ptr, ec] = std::from_chars(first, last, v);
    if (ec != std::errc() || ptr != last || !std::isfinite(v)) {
        throw RecordError(line, std::string("invalid value for ") + name + ": '" + field + "'");
    }
    return v;
}

GazeRecord sanitize(GazeRecord r, std::size_t line, std::size_t& warnings) {
    if (r.duration_ms < 0.0) throw RecordError(line, "duration_ms must be nonnegative");
    auto clamp01 = [&](double& v) {
        if (v < 0.0 || v > 1.0) {
            v = std::clamp(v, 0.0, 1.0);
            ++warnings;
        }
    };
    clamp01(r.x);
    clamp01(r.y);
    clamp01(r.confidence);
    return r;
}

GazeLog load_csv(std::istream& in) {
    GazeLog log;
    std::string raw;
    std::size_t line_no = 0;
    bool header_seen = false;
    while (std::getline(in, raw)) {
        ++line_no;
        std::string line = trim(raw);
        if (line.empty()) continue;
        if (!header_seen) {
            header_seen = true;
            if (line == "x,y,duration_ms,confidence") continue;
            if (!line.empty() && (std::isalpha(static_cast<unsigned char>(line.front())) != 0)) {
                throw RecordError(line_no, "unexpected header '" + line + "'");
            }
            // headerless file: fall through and parse as data
        }
        std::vector<std::string> fields;
        std::stringstream ss(line);
        std::string field;
        while (std::getline(ss, field, ',')) fields.push_back(trim(field));
        if (!line.empty() && line.back() == ',') fields.emplace_back();
        if (fields.size() != 4) {
            throw RecordError(line_no, "expected 4 fields, got " + std::to_string(fields.size()));
        }
        GazeRecord r{parse_number(fields[0], line_no, "x"), parse_number(fields[1], line_no, "y"),
                     parse_number(fields[2], line_no, "duration_ms"),
                     parse_number(fields[3], line_no, "confidence")};
        log.records.push_back(sanitize(r, line_no, log.clamp_warnings));
    }
    return log;
}

GazeLog load_json(std::istream& in) {
    GazeLog log;
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (trim(text).empty()) return log;
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw RecordError(0, std::string("invalid JSON: ") + e.what());
    }
    if (!doc.is_array()) throw RecordError(0, "gaze JSON must be an array");
    std::size_t index = 0;
    for (const auto& item : doc) {
        ++index;
        if (!item.is_object()) throw RecordError(index, "record is not an object");
        auto field = [&](const char* key) {
            auto it = item.find(key);
            if (it == item.end()) throw RecordError(index, std::string("missing key '") + key + "'");
            if (!it->is_number()) throw RecordError(index, std::string("key '") + key + "' is not a number");
            return it->get<double>();
        };
        GazeRecord r{field("x"), field("y"), field("duration_ms"), field("confidence")};
        log.records.push_back(sanitize(r, index, log.clamp_warnings));
    }
    return log;
}

// Row or column index of a normalized coordinate.
int snap(double normalized, int extent) {
    return static_cast<int>(std::lround(normalized * static_cast<double>(extent - 1)));
}

}  // namespace

GazeLog load_gaze(std::istream& source, GazeFormat format) {
    return format == GazeFormat::csv ? load_csv(source) : load_json(source);
}

GazeLog load_gaze_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot open gaze log " + path);
    auto format = path.size() >= 5 && path.substr(path.size() - 5) == ".json" ? GazeFormat::json : GazeFormat::csv;
    return load_gaze(in, format);
}

void write_gaze_csv(std::ostream& out, const std::vector<GazeRecord>& records) {
    out << "x,y,duration_ms,confidence\n";
    out << std::setprecision(17);
    for (const auto& r : records) out << r.x << ',' << r.y << ',' << r.duration_ms << ',' << r.confidence << '\n';
}

double default_sigma_px(int height, int width) {
    return 0.03 * static_cast<double>(std::min(height, width));
}

DensityMap density_map(const std::vector<GazeRecord>& records, int height, int width, double sigma_px) {
    if (height < 1 || width < 1) throw ParameterError("density_map: height and width must be >= 1");
    if (!(sigma_px > 0.0)) throw ParameterError("density_map: sigma_px must be > 0");

    std::vector<GazeRecord> ordered = records;
    std::sort(ordered.begin(), ordered.end(), [](const GazeRecord& a, const GazeRecord& b) {
        return std::tie(a.x, a.y, a.duration_ms, a.confidence) < std::tie(b.x, b.y, b.duration_ms, b.confidence);
    });

    DensityMap dm{Grid<double>(height, width, 0.0), sigma_px};
    const double inv_two_sigma2 = 1.0 / (2.0 * sigma_px * sigma_px);
    std::vector<double> row_factor(static_cast<std::size_t>(height));
    std::vector<double> col_factor(static_cast<std::size_t>(width));
    for (const auto& r : ordered) {
        if (r.duration_ms <= 0.0) continue;
        const int cr = snap(r.y, height);
        const int cc = snap(r.x, width);
        for (int i = 0; i < height; ++i) {
            const double d = i - cr;
            row_factor[static_cast<std::size_t>(i)] = r.duration_ms * std::exp(-d * d * inv_two_sigma2);
        }
        for (int j = 0; j < width; ++j) {
            const double d = j - cc;
            col_factor[static_cast<std::size_t>(j)] = std::exp(-d * d * inv_two_sigma2);
        }
        for (int i = 0; i < height; ++i) {
            for (int j = 0; j < width; ++j) {
                dm.values(i, j) += row_factor[static_cast<std::size_t>(i)] * col_factor[static_cast<std::size_t>(j)];
            }
        }
    }
    const double peak = *std::max_element(dm.values.data().begin(), dm.values.data().end());
    if (peak > 0.0) {
        for (auto& v : dm.values.data()) v /= peak;
    }
    return dm;
}

BinaryMask remove_small_components(const BinaryMask& mask, int min_pixels) {
    BinaryMask out = mask;
    if (min_pixels <= 1) return out;
    const int h = mask.height();
    const int w = mask.width();
    Grid<int> label(h, w, -1);
    std::vector<std::pair<int, int>> stack;
    std::vector<std::pair<int, int>> component;
    for (int r = 0; r < h; ++r) {
        for (int c = 0; c < w; ++c) {
            if (mask(r, c) == 0 || label(r, c) >= 0) continue;
            component.clear();
            stack.assign(1, {r, c});
            label(r, c) = 1;
            while (!stack.empty()) {
                auto [pr, pc] = stack.back();
                stack.pop_back();
                component.emplace_back(pr, pc);
                constexpr int dr[4] = {-1, 1, 0, 0};
                constexpr int dc[4] = {0, 0, -1, 1};
                for (int k = 0; k < 4; ++k) {
                    const int nr = pr + dr[k];
                    const int nc = pc + dc[k];
                    if (nr < 0 || nr >= h || nc < 0 || nc >= w) continue;
                    if (mask(nr, nc) == 0 || label(nr, nc) >= 0) continue;
                    label(nr, nc) = 1;
                    stack.emplace_back(nr, nc);
                }
            }
            if (static_cast<int>(component.size()) < min_pixels) {
                for (auto [pr, pc] : component) out(pr, pc) = 0;
            }
        }
    }
    return out;
}

MaskPair threshold_masks(const DensityMap& dm, double tau_hc, double tau_bc, int min_component_px) {
    if (!(tau_bc > 0.0) || tau_hc > 1.0) throw ParameterError("threshold_masks: thresholds must lie in (0,1]");
    if (tau_hc < tau_bc) throw ParameterError("threshold_masks: tau_hc must be >= tau_bc");
    const int h = dm.values.height();
    const int w = dm.values.width();
    MaskPair pair{BinaryMask(h, w, 0), BinaryMask(h, w, 0), tau_hc, tau_bc};
    for (std::size_t i = 0; i < dm.values.size(); ++i) {
        pair.m_bc[i] = dm.values[i] >= tau_bc ? 1 : 0;
        pair.m_hc[i] = dm.values[i] >= tau_hc ? 1 : 0;
    }
    pair.m_bc = remove_small_components(pair.m_bc, min_component_px);
    for (std::size_t i = 0; i < pair.m_hc.size(); ++i) pair.m_hc[i] &= pair.m_bc[i];
    return pair;
}

MaskPair masks_from_gaze(const std::vector<GazeRecord>& records, int height, int width, const MaskParams& params) {
    const double sigma = params.sigma_px > 0.0 ? params.sigma_px : default_sigma_px(height, width);
    return threshold_masks(density_map(records, height, width, sigma), params.tau_hc, params.tau_bc,
                           params.min_component_px);
}

}  // namespace gazedistill
