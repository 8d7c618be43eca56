#include "gazedistill/report.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <httplib.h>
#include <json.hpp>

#include "gazedistill/io.hpp"

namespace gazedistill {

namespace {

using nlohmann::json;

constexpr std::string_view kLocations[] = {"upper_left", "upper_right", "lower_left", "lower_right"};
constexpr std::string_view kBoundaries[] = {"clear", "irregular", "ambiguous"};
constexpr std::string_view kCharacteristics[] = {"lobulated", "smooth", "spiculated"};
constexpr std::string_view kConfidences[] = {"high", "moderate", "low"};

std::string trim(std::string_view s) {
    auto begin = s.find_first_not_of(" \t\r\n");
    if (begin == std::string_view::npos) return {};
    auto end = s.find_last_not_of(" \t\r\n");
    return std::string(s.substr(begin, end - begin + 1));
}

// Lowercase, trim, and fold runs of spaces/hyphens/underscores into '_'.
std::string normalize_token(std::string_view raw) {
    std::string t = trim(raw);
    std::string out;
    bool pending_sep = false;
    for (char ch : t) {
        const auto c = static_cast<unsigned char>(ch);
        if (c == ' ' || c == '-' || c == '_' || c == '\t') {
            pending_sep = true;
            continue;
        }
        if (pending_sep && !out.empty()) out.push_back('_');
        pending_sep = false;
        out.push_back(static_cast<char>(std::tolower(c)));
    }
    return out;
}

template <typename Enum, std::size_t N>
Enum lookup(const std::string_view (&table)[N], const std::string& field, const std::string& raw) {
    const std::string key = normalize_token(raw);
    for (std::size_t i = 0; i < N; ++i) {
        if (table[i] == key) return static_cast<Enum>(i);
    }
    throw ReportError(ReportErrorKind::vocabulary, field, field + ": value '" + raw + "' is not in the vocabulary");
}

std::string strip_fences(std::string_view raw) {
    std::string t = trim(raw);
    if (t.rfind("```", 0) != 0) return t;
    auto first_newline = t.find('\n');
    if (first_newline == std::string::npos) return t;
    std::string body = t.substr(first_newline + 1);
    auto closing = body.rfind("```");
    if (closing != std::string::npos) body = body.substr(0, closing);
    return trim(body);
}

const json& require(const json& doc, const std::string& key) {
    auto it = doc.find(key);
    if (it == doc.end()) throw ReportError(ReportErrorKind::schema, key, "missing key '" + key + "'");
    return *it;
}

std::string require_string(const json& doc, const std::string& key) {
    const json& v = require(doc, key);
    if (!v.is_string()) throw ReportError(ReportErrorKind::schema, key, "key '" + key + "' must be a string");
    return v.get<std::string>();
}

}  // namespace

std::string_view to_string(Location v) { return kLocations[static_cast<int>(v)]; }
std::string_view to_string(Boundary v) { return kBoundaries[static_cast<int>(v)]; }
std::string_view to_string(Characteristic v) { return kCharacteristics[static_cast<int>(v)]; }
std::string_view to_string(ReportConfidence v) { return kConfidences[static_cast<int>(v)]; }

double quantize_area(double area_percent) { return std::round(area_percent * 10.0) / 10.0; }

const std::string& build_prompt() {
    static const std::string prompt =
        "Examine the abnormal region (for example a tumor or polyp) in this medical image and describe it "
        "with the following fields.\n"
        "Location: position of the region, one of upper left, upper right, lower left, lower right\n"
        "Boundary: continuity and clarity of the margin, one of clear, irregular, ambiguous\n"
        "Characteristics: shape, texture and brightness, one or more of smooth, spiculated, lobulated\n"
        "Area Percentage: estimated share of the image occupied by the region, a number between 0 and 100\n"
        "Confidence: how certain the localization is, one of high, moderate, low\n"
        "Remarks: additional notes, free text, may be empty\n"
        "Answer with a single JSON object using the keys \"location\", \"boundary\", \"characteristics\" "
        "(array of strings), \"area_percent\" (number), \"confidence\" and \"remarks\". "
        "Use only the listed values.\n";
    return prompt;
}

LesionReport validate_report(std::string_view raw) {
    const std::string body = strip_fences(raw);
    json doc;
    try {
        doc = json::parse(body);
    } catch (const json::parse_error& e) {
        throw ReportError(ReportErrorKind::parse, "", std::string("response is not JSON: ") + e.what());
    }
    if (!doc.is_object()) throw ReportError(ReportErrorKind::parse, "", "response is not a JSON object");

    LesionReport report;
    report.location = lookup<Location>(kLocations, "location", require_string(doc, "location"));
    report.boundary = lookup<Boundary>(kBoundaries, "boundary", require_string(doc, "boundary"));

    const json& chars = require(doc, "characteristics");
    std::vector<std::string> items;
    if (chars.is_string()) {
        std::stringstream ss(chars.get<std::string>());
        std::string item;
        while (std::getline(ss, item, ',')) items.push_back(item);
    } else if (chars.is_array()) {
        for (const auto& item : chars) {
            if (!item.is_string()) {
                throw ReportError(ReportErrorKind::schema, "characteristics", "characteristics entries must be strings");
            }
            items.push_back(item.get<std::string>());
        }
    } else {
        throw ReportError(ReportErrorKind::schema, "characteristics", "characteristics must be an array of strings");
    }
    report.characteristics.clear();
    for (const auto& item : items) {
        report.characteristics.insert(lookup<Characteristic>(kCharacteristics, "characteristics", item));
    }
    if (report.characteristics.empty()) {
        throw ReportError(ReportErrorKind::schema, "characteristics", "characteristics must be nonempty");
    }

    const json& area = require(doc, "area_percent");
    if (!area.is_number()) throw ReportError(ReportErrorKind::schema, "area_percent", "area_percent must be a number");
    const double a = area.get<double>();
    if (!(a >= 0.0 && a <= 100.0)) {
        throw ReportError(ReportErrorKind::range, "area_percent", "area_percent " + area.dump() + " outside [0,100]");
    }
    report.area_percent = quantize_area(a);

    report.confidence = lookup<ReportConfidence>(kConfidences, "confidence", require_string(doc, "confidence"));

    if (auto it = doc.find("remarks"); it != doc.end() && !it->is_null()) {
        if (!it->is_string()) throw ReportError(ReportErrorKind::schema, "remarks", "remarks must be a string");
        report.remarks = it->get<std::string>();
    }
    return report;
}

std::string canonical_text(const LesionReport& report) {
    std::string chars;
    for (auto c : report.characteristics) {
        if (!chars.empty()) chars.push_back(',');
        chars += to_string(c);
    }
    char area[32];
    std::snprintf(area, sizeof(area), "%.1f", report.area_percent);
    std::string remarks = report.remarks;
    std::replace_if(remarks.begin(), remarks.end(), [](char c) { return c == '\n' || c == '\r'; }, ' ');
    std::string out;
    out += "location: ";
    out += to_string(report.location);
    out += "; boundary: ";
    out += to_string(report.boundary);
    out += "; characteristics: " + chars;
    out += "; area: ";
    out += area;
    out += "%; confidence: ";
    out += to_string(report.confidence);
    out += "; remarks: " + remarks;
    return out;
}

std::string canonical_json(const LesionReport& report) {
    json doc;
    doc["location"] = std::string(to_string(report.location));
    doc["boundary"] = std::string(to_string(report.boundary));
    json chars = json::array();
    for (auto c : report.characteristics) chars.push_back(std::string(to_string(c)));
    doc["characteristics"] = chars;
    doc["area_percent"] = report.area_percent;
    doc["confidence"] = std::string(to_string(report.confidence));
    doc["remarks"] = report.remarks;
    return doc.dump();
}

// --- providers -------------------------------------------------------------

ReplayProvider::ReplayProvider(std::string fixture_dir) : fixture_dir_(std::move(fixture_dir)) {
    if (!std::filesystem::is_directory(fixture_dir_)) {
        throw StateError("replay fixture directory does not exist: " + fixture_dir_);
    }
}

std::string ReplayProvider::fixture_key(std::span<const std::uint8_t> image) { return sha256_hex(image); }

ProviderResponse ReplayProvider::request(std::span<const std::uint8_t> image, const std::string& /*prompt*/) {
    const auto start = std::chrono::steady_clock::now();
    const std::string key = fixture_key(image);
    const auto path = std::filesystem::path(fixture_dir_) / (key + ".json");
    if (!std::filesystem::exists(path)) throw FixtureMissingError(key);
    ProviderResponse r;
    r.raw_text = read_file_text(path.string());
    r.provider_id = id();
    r.latency_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
    if (r.raw_text.empty()) throw TransportError(id(), "fixture " + key + " is empty");
    return r;
}

std::string base64_encode(std::span<const std::uint8_t> bytes) {
    static constexpr char table[] = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
    std::string out;
    out.reserve((bytes.size() + 2) / 3 * 4);
    std::size_t i = 0;
    for (; i + 2 < bytes.size(); i += 3) {
        const std::uint32_t v = (bytes[i] << 16) | (bytes[i + 1] << 8) | bytes[i + 2];
        out.push_back(table[(v >> 18) & 63]);
        out.push_back(table[(v >> 12) & 63]);
        out.push_back(table[(v >> 6) & 63]);
        out.push_back(table[v & 63]);
    }
    if (i < bytes.size()) {
        std::uint32_t v = bytes[i] << 16;
        if (i + 1 < bytes.size()) v |= bytes[i + 1] << 8;
        out.push_back(table[(v >> 18) & 63]);
        out.push_back(table[(v >> 12) & 63]);
        out.push_back(i + 1 < bytes.size() ? table[(v >> 6) & 63] : '=');
        out.push_back('=');
    }
    return out;
}

LiveProvider::LiveProvider(LiveProviderConfig config) : config_(std::move(config)) {
    if (config_.endpoint.empty()) throw StateError("live provider requires an endpoint");
    if (config_.max_in_flight < 1) throw ParameterError("live provider max_in_flight must be >= 1");
    slots_ = std::make_unique<std::counting_semaphore<>>(config_.max_in_flight);
}

ProviderResponse LiveProvider::request(std::span<const std::uint8_t> image, const std::string& prompt) {
    // split endpoint into scheme://host[:port] and path
    const std::string& url = config_.endpoint;
    const auto scheme_end = url.find("://");
    if (scheme_end == std::string::npos) throw TransportError(id(), "endpoint lacks a scheme: " + url);
    const auto path_begin = url.find('/', scheme_end + 3);
    const std::string origin = path_begin == std::string::npos ? url : url.substr(0, path_begin);
    const std::string path = path_begin == std::string::npos ? "/" : url.substr(path_begin);

    json body;
    body["model"] = config_.model;
    body["messages"] = json::array({json{
        {"role", "user"},
        {"content", json::array({json{{"type", "text"}, {"text", prompt}},
                                 json{{"type", "image_url"},
                                      {"image_url", {{"url", "data:image/png;base64," + base64_encode(image)}}}}})}}});

    slots_->acquire();
    struct Release {
        std::counting_semaphore<>& s;
        ~Release() { s.release(); }
    } release{*slots_};

    const auto start = std::chrono::steady_clock::now();
    httplib::Client client(origin);
    const auto timeout = std::chrono::duration<double>(config_.timeout_s);
    client.set_connection_timeout(std::chrono::duration_cast<std::chrono::microseconds>(timeout));
    client.set_read_timeout(std::chrono::duration_cast<std::chrono::microseconds>(timeout));
    httplib::Headers headers;
    if (!config_.credential.empty()) headers.emplace("Authorization", "Bearer " + config_.credential);
    auto res = client.Post(path, headers, body.dump(), "application/json");
    if (!res) throw TransportError(id(), "request failed: " + httplib::to_string(res.error()));
    if (res->status == 401 || res->status == 403) throw TransportError(id(), "authentication rejected (HTTP " + std::to_string(res->status) + ")");
    if (res->status < 200 || res->status >= 300) throw TransportError(id(), "HTTP status " + std::to_string(res->status));

    ProviderResponse out;
    out.provider_id = id();
    out.latency_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
    try {
        const json reply = json::parse(res->body);
        out.raw_text = reply.at("choices").at(0).at("message").at("content").get<std::string>();
    } catch (const json::exception& e) {
        throw TransportError(id(), std::string("unexpected response shape: ") + e.what());
    }
    if (out.raw_text.empty()) throw TransportError(id(), "provider returned empty content");
    return out;
}

}  // namespace gazedistill
