#include "report_fuzz.hpp"

#include <algorithm>
#include <cctype>
#include <set>

#include <json.hpp>

namespace testkit {

namespace {

using nlohmann::json;

const std::vector<std::string> kLocation{"upper_left", "upper_right", "lower_left", "lower_right"};
const std::vector<std::string> kBoundary{"clear", "irregular", "ambiguous"};
const std::vector<std::string> kChars{"smooth", "spiculated", "lobulated"};
const std::vector<std::string> kConfidence{"high", "moderate", "low"};

std::string pick(Rng& rng, const std::vector<std::string>& v) {
    return v[static_cast<std::size_t>(uniform_int(rng, 0, static_cast<int>(v.size()) - 1))];
}

// Provider-style spelling: random case, spaces or hyphens instead of '_'.
std::string respell(Rng& rng, std::string word) {
    const int sep = uniform_int(rng, 0, 2);
    for (auto& ch : word) {
        if (ch == '_') ch = sep == 0 ? '_' : (sep == 1 ? ' ' : '-');
        if (uniform_int(rng, 0, 3) == 0) ch = static_cast<char>(std::toupper(static_cast<unsigned char>(ch)));
    }
    if (uniform_int(rng, 0, 3) == 0) word = "  " + word + " ";
    return word;
}

std::string fold(const std::string& s) {
    std::string out;
    bool sep = false;
    for (char ch : s) {
        const auto c = static_cast<unsigned char>(ch);
        if (c == ' ' || c == '-' || c == '_' || c == '\t' || c == '\n' || c == '\r') {
            sep = true;
            continue;
        }
        if (sep && !out.empty()) out.push_back('_');
        sep = false;
        out.push_back(static_cast<char>(std::tolower(c)));
    }
    return out;
}

bool in_any_vocabulary(const std::string& s) {
    const std::string f = fold(s);
    for (const auto* v : {&kLocation, &kBoundary, &kChars, &kConfidence})
        if (std::find(v->begin(), v->end(), f) != v->end()) return true;
    return false;
}

json valid_doc(Rng& rng) {
    json doc;
    doc["location"] = respell(rng, pick(rng, kLocation));
    doc["boundary"] = respell(rng, pick(rng, kBoundary));
    json chars = json::array();
    const int n = uniform_int(rng, 1, 3);
    for (int i = 0; i < n; ++i) chars.push_back(respell(rng, pick(rng, kChars)));
    doc["characteristics"] = chars;
    doc["area_percent"] = uniform(rng, 0.0, 100.0);
    doc["confidence"] = respell(rng, pick(rng, kConfidence));
    doc["remarks"] = uniform_int(rng, 0, 1) == 0 ? "" : "note " + std::to_string(uniform_int(rng, 0, 999));
    return doc;
}

}  // namespace

std::string out_of_vocabulary_word(Rng& rng) {
    static const std::vector<std::string> near_misses{
        "center", "centre", "middle", "upper", "left", "upperleft", "upper__left ", "top_left", "upper_lef",
        "uper_left", "clearly", "blurred", "irregularity", "ambiguous!", "smoothed", "spiky", "round",
        "lobular", "very high", "medium", "none", "", "   ", "high?", "lowest", "0", "null", "N/A", "unknown"};
    for (;;) {
        std::string s;
        if (uniform_int(rng, 0, 2) == 0) {
            s = near_misses[static_cast<std::size_t>(uniform_int(rng, 0, static_cast<int>(near_misses.size()) - 1))];
        } else {
            const int len = uniform_int(rng, 1, 14);
            for (int i = 0; i < len; ++i) s.push_back(static_cast<char>(uniform_int(rng, 32, 126)));
        }
        if (!in_any_vocabulary(s)) return s;
    }
}

std::string random_valid_report_json(Rng& rng) { return valid_doc(rng).dump(); }

std::vector<FuzzReport> invalid_report_corpus(Rng& rng, int count) {
    using gazedistill::ReportErrorKind;
    std::vector<FuzzReport> out;
    const std::vector<std::string> enum_fields{"location", "boundary", "characteristics", "confidence"};
    const std::vector<std::string> all_fields{"location", "boundary", "characteristics", "area_percent", "confidence"};
    for (int i = 0; i < count; ++i) {
        json doc = valid_doc(rng);
        const int mode = uniform_int(rng, 0, 5);
        if (mode <= 3) {
            const std::string field = enum_fields[static_cast<std::size_t>(mode)];
            if (field == "characteristics") {
                const auto at = static_cast<std::size_t>(uniform_int(rng, 0, static_cast<int>(doc[field].size())));
                doc[field].insert(doc[field].begin() + static_cast<long>(at), out_of_vocabulary_word(rng));
            } else {
                doc[field] = out_of_vocabulary_word(rng);
            }
            out.push_back({doc.dump(), ReportErrorKind::vocabulary, field});
        } else if (mode == 4) {
            const double a = uniform_int(rng, 0, 1) == 0 ? uniform(rng, 100.0001, 1e6) : -uniform(rng, 1e-4, 1e6);
            doc["area_percent"] = a;
            out.push_back({doc.dump(), ReportErrorKind::range, "area_percent"});
        } else {
            const std::string field = pick(rng, all_fields);
            doc.erase(field);
            out.push_back({doc.dump(), ReportErrorKind::schema, field});
        }
    }
    return out;
}

}  // namespace testkit
