#include "gazedistill/text_embed.hpp"

#include <cctype>
#include <cmath>
#include <numbers>

#include <httplib.h>
#include <json.hpp>

namespace gazedistill {

namespace {

constexpr std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

std::uint64_t fnv1a(const std::string& s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

// (0,1] uniform from the top 53 bits
double to_unit(std::uint64_t bits) { return (static_cast<double>(bits >> 11) + 1.0) * 0x1.0p-53; }

bool is_token_char(char c) {
    const auto u = static_cast<unsigned char>(c);
    return std::isalnum(u) != 0 || c == '_';
}

}  // namespace

std::vector<std::string> tokenize(const std::string& text) {
    std::vector<std::string> tokens;
    std::string current;
    for (std::size_t i = 0; i < text.size(); ++i) {
        const char c = text[i];
        const bool inner_dot = c == '.' && !current.empty() && std::isdigit(static_cast<unsigned char>(current.back())) &&
                               i + 1 < text.size() && std::isdigit(static_cast<unsigned char>(text[i + 1]));
        if (is_token_char(c) || inner_dot) {
            current.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
        } else if (!current.empty()) {
            tokens.push_back(std::move(current));
            current.clear();
        }
    }
    if (!current.empty()) tokens.push_back(std::move(current));
    return tokens;
}

HashTextEncoder::HashTextEncoder(int width, std::uint64_t seed) : width_(width), seed_(seed) {
    if (width < 1) throw ParameterError("text width must be >= 1");
}

Eigen::VectorXd HashTextEncoder::token_vector(const std::string& token) const {
    const std::uint64_t key = splitmix64(seed_ ^ splitmix64(fnv1a(token)));
    Eigen::VectorXd v(width_);
    for (int i = 0; i < width_; i += 2) {
        const std::uint64_t counter = static_cast<std::uint64_t>(i / 2);
        const double u1 = to_unit(splitmix64(key + 2 * counter));
        const double u2 = to_unit(splitmix64(key + 2 * counter + 1));
        const double radius = std::sqrt(-2.0 * std::log(u1));
        const double angle = 2.0 * std::numbers::pi * u2;
        v[i] = radius * std::cos(angle);
        if (i + 1 < width_) v[i + 1] = radius * std::sin(angle);
    }
    const double norm = v.norm();
    return norm > 0.0 ? Eigen::VectorXd(v / norm) : v;
}

TextEmbedding HashTextEncoder::encode(const std::string& text) const {
    const auto tokens = tokenize(text);
    if (tokens.empty()) throw InputError("cannot encode empty text");
    TextEmbedding out{Eigen::MatrixXd(static_cast<Eigen::Index>(tokens.size()), width_)};
    for (std::size_t i = 0; i < tokens.size(); ++i) out.vectors.row(static_cast<Eigen::Index>(i)) = token_vector(tokens[i]);
    return out;
}

PretrainedTextEncoder::PretrainedTextEncoder(std::string endpoint, std::string model_name, int width, double timeout_s)
    : endpoint_(std::move(endpoint)), model_name_(std::move(model_name)), width_(width), timeout_s_(timeout_s) {
    if (endpoint_.empty()) throw BackendError("pretrained text backend requires text.endpoint");
    if (model_name_.empty()) throw BackendError("pretrained text backend requires text.model_name");
}

TextEmbedding PretrainedTextEncoder::encode(const std::string& text) const {
    if (tokenize(text).empty()) throw InputError("cannot encode empty text");
    const auto scheme_end = endpoint_.find("://");
    const auto path_begin = scheme_end == std::string::npos ? std::string::npos : endpoint_.find('/', scheme_end + 3);
    const std::string origin = path_begin == std::string::npos ? endpoint_ : endpoint_.substr(0, path_begin);
    const std::string path = path_begin == std::string::npos ? "/embed" : endpoint_.substr(path_begin);

    httplib::Client client(origin);
    const auto timeout = std::chrono::duration_cast<std::chrono::microseconds>(std::chrono::duration<double>(timeout_s_));
    client.set_connection_timeout(timeout);
    client.set_read_timeout(timeout);
    nlohmann::json body{{"model", model_name_}, {"text", text}};
    auto res = client.Post(path, body.dump(), "application/json");
    if (!res) throw BackendError("text model " + model_name_ + " unreachable: " + httplib::to_string(res.error()));
    if (res->status != 200) throw BackendError("text model " + model_name_ + " returned HTTP " + std::to_string(res->status));
    try {
        const auto reply = nlohmann::json::parse(res->body);
        const auto& rows = reply.at("embeddings");
        if (!rows.is_array() || rows.empty()) throw BackendError("text model returned no embeddings");
        TextEmbedding out{Eigen::MatrixXd(static_cast<Eigen::Index>(rows.size()), width_)};
        for (std::size_t i = 0; i < rows.size(); ++i) {
            if (rows[i].size() != static_cast<std::size_t>(width_)) {
                throw BackendError("text model returned width " + std::to_string(rows[i].size()) + ", expected " +
                                   std::to_string(width_));
            }
            for (int j = 0; j < width_; ++j) {
                const double v = rows[i][static_cast<std::size_t>(j)].get<double>();
                if (!std::isfinite(v)) throw BackendError("text model returned a non-finite value");
                out.vectors(static_cast<Eigen::Index>(i), j) = v;
            }
        }
        return out;
    } catch (const nlohmann::json::exception& e) {
        throw BackendError(std::string("malformed embedding response: ") + e.what());
    }
}

std::unique_ptr<TextEncoder> make_text_encoder(const TextEncoderOptions& options) {
    if (options.backend == "deterministic_test") return std::make_unique<HashTextEncoder>(options.width, options.seed);
    if (options.backend != "pretrained") throw BackendError("unknown text backend '" + options.backend + "'");
    try {
        auto encoder = std::make_unique<PretrainedTextEncoder>(options.endpoint, options.model_name, options.width);
        encoder->encode("probe");
        return encoder;
    } catch (const BackendError&) {
        if (!options.allow_fallback) throw;
        return std::make_unique<HashTextEncoder>(options.width, options.seed);
    }
}

}  // namespace gazedistill
