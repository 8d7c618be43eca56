#pragma once

#include <chrono>
#include <cstdint>
#include <memory>
#include <optional>
#include <semaphore>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "gazedistill/errors.hpp"

namespace gazedistill {

enum class Location { upper_left, upper_right, lower_left, lower_right };
enum class Boundary { clear, irregular, ambiguous };
enum class Characteristic { lobulated, smooth, spiculated };  // lexicographic order
enum class ReportConfidence { high, moderate, low };

std::string_view to_string(Location v);
std::string_view to_string(Boundary v);
std::string_view to_string(Characteristic v);
std::string_view to_string(ReportConfidence v);

/// Validated, closed-vocabulary lesion description. `area_percent` is kept
/// on a 0.1 grid, the resolution at which it is rendered.
struct LesionReport {
    Location location = Location::upper_left;
    Boundary boundary = Boundary::clear;
    std::set<Characteristic> characteristics{Characteristic::smooth};
    double area_percent = 0.0;
    ReportConfidence confidence = ReportConfidence::high;
    std::string remarks;

    bool operator==(const LesionReport&) const = default;
};

/// Category of a report rejection.
enum class ReportErrorKind { parse, schema, vocabulary, range };

class ReportError : public Error {
public:
    ReportError(ReportErrorKind kind, std::string field, const std::string& what)
        : Error(what), kind_(kind), field_(std::move(field)) {}
    ReportErrorKind kind() const noexcept { return kind_; }
    /// Offending key, or empty for parse errors.
    const std::string& field() const noexcept { return field_; }

private:
    ReportErrorKind kind_;
    std::string field_;
};

/// The fixed structured prompt sent to the provider.
const std::string& build_prompt();

/// Parses and validates a provider response. Markdown code fences around the
/// JSON body are removed first. Enum values are trimmed and lowercased and
/// spaces/hyphens map to underscores. Out-of-vocabulary values are rejected.
LesionReport validate_report(std::string_view raw);

/// `location: <v>; boundary: <v>; characteristics: <a>,<b>; area: <p>%; confidence: <v>; remarks: <text>`
std::string canonical_text(const LesionReport& report);

/// JSON document with the provider schema's keys. validate_report inverts it.
std::string canonical_json(const LesionReport& report);

double quantize_area(double area_percent);

// --- providers -------------------------------------------------------------

struct ProviderResponse {
    std::string raw_text;
    std::string provider_id;
    double latency_ms = 0.0;
};

class TransportError : public Error {
public:
    TransportError(std::string provider_id, const std::string& what)
        : Error(provider_id + ": " + what), provider_id_(std::move(provider_id)) {}
    const std::string& provider_id() const noexcept { return provider_id_; }

private:
    std::string provider_id_;
};

class FixtureMissingError : public Error {
public:
    explicit FixtureMissingError(std::string hash)
        : Error("no recorded fixture for image " + hash), hash_(std::move(hash)) {}
    const std::string& hash() const noexcept { return hash_; }

private:
    std::string hash_;
};

class ProviderClient {
public:
    virtual ~ProviderClient() = default;
    virtual ProviderResponse request(std::span<const std::uint8_t> image, const std::string& prompt) = 0;
    virtual std::string id() const = 0;
};

/// Serves `<sha256-of-image>.json` files verbatim from a fixture directory.
class ReplayProvider final : public ProviderClient {
public:
    explicit ReplayProvider(std::string fixture_dir);
    ProviderResponse request(std::span<const std::uint8_t> image, const std::string& prompt) override;
    std::string id() const override { return "replay"; }

    static std::string fixture_key(std::span<const std::uint8_t> image);

private:
    std::string fixture_dir_;
};

struct LiveProviderConfig {
    std::string endpoint;         ///< http(s)://host[:port]/path
    std::string model;
    std::string credential;       ///< bearer token, may be empty
    double timeout_s = 30.0;
    int max_in_flight = 4;
    std::string provider_id = "live";
};

/// Chat-completions style HTTP provider. The image travels as a base64 data
/// URL next to the prompt; the first choice's message content is returned.
class LiveProvider final : public ProviderClient {
public:
    explicit LiveProvider(LiveProviderConfig config);
    ProviderResponse request(std::span<const std::uint8_t> image, const std::string& prompt) override;
    std::string id() const override { return config_.provider_id; }

private:
    LiveProviderConfig config_;
    std::unique_ptr<std::counting_semaphore<>> slots_;
};

std::string base64_encode(std::span<const std::uint8_t> bytes);

}  // namespace gazedistill
