#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "gazedistill/errors.hpp"

namespace gazedistill {

/// L×C_t token embedding matrix (one row per token).
struct TextEmbedding {
    Eigen::MatrixXd vectors;

    int token_count() const noexcept { return static_cast<int>(vectors.rows()); }
    int width() const noexcept { return static_cast<int>(vectors.cols()); }
    bool operator==(const TextEmbedding& other) const {
        return vectors.rows() == other.vectors.rows() && vectors.cols() == other.vectors.cols() &&
               vectors == other.vectors;
    }
};

class BackendError : public Error {
public:
    using Error::Error;
};

class TextEncoder {
public:
    virtual ~TextEncoder() = default;
    virtual TextEmbedding encode(const std::string& text) const = 0;
    virtual int width() const = 0;
    virtual std::string name() const = 0;
};

/// Splits on whitespace and punctuation. '_' and digit-internal '.' stay
/// inside tokens so `upper_left` and `12.5` survive as single tokens.
std::vector<std::string> tokenize(const std::string& text);

/// Each token maps to a unit-norm vector of Gaussian draws from a
/// counter-based generator keyed by (seed, token bytes).
class HashTextEncoder final : public TextEncoder {
public:
    explicit HashTextEncoder(int width = 768, std::uint64_t seed = 0);
    TextEmbedding encode(const std::string& text) const override;
    int width() const override { return width_; }
    std::string name() const override { return "deterministic_test"; }

    Eigen::VectorXd token_vector(const std::string& token) const;

private:
    int width_;
    std::uint64_t seed_;
};

/// Delegates to an embedding service hosting a pretrained text model.
/// POST {"model": name, "text": text} -> {"embeddings": [[...], ...]}.
class PretrainedTextEncoder final : public TextEncoder {
public:
    PretrainedTextEncoder(std::string endpoint, std::string model_name, int width, double timeout_s = 30.0);
    TextEmbedding encode(const std::string& text) const override;
    int width() const override { return width_; }
    std::string name() const override { return "pretrained:" + model_name_; }

private:
    std::string endpoint_;
    std::string model_name_;
    int width_;
    double timeout_s_;
};

struct TextEncoderOptions {
    std::string backend = "deterministic_test";
    int width = 768;
    std::uint64_t seed = 0;
    std::string model_name;
    std::string endpoint;
    bool allow_fallback = false;
};

/// Builds the configured backend. A pretrained backend is probed once; when
/// it is unreachable the call throws BackendError unless fallback is allowed.
std::unique_ptr<TextEncoder> make_text_encoder(const TextEncoderOptions& options);

}  // namespace gazedistill
