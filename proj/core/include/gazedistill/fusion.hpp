#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "gazedistill/nn.hpp"
#include "gazedistill/text_embed.hpp"

namespace gazedistill {

/// How the attended text is merged back into the visual stream.
enum class FusionVariant {
    sum,     ///< X + λ·MHAtt
    concat,  ///< [X, λ·MHAtt] projected back to C_v channels
};

/// Cross-attention fusion block for one encoder stage. Holds indices into
/// the owning ParamStore: query/key/value/output projections, positional
/// embeddings (N×C_v), the fusion scale λ (1×1) and the layer-norm affine.
struct FusionParams {
    int channels = 0;
    int text_width = 0;
    int positions = 0;
    int heads = 4;
    FusionVariant variant = FusionVariant::sum;
    std::size_t query_proj = 0;   ///< C_v × C_v
    std::size_t key_proj = 0;     ///< C_v × C_t
    std::size_t value_proj = 0;   ///< C_v × C_t
    std::size_t output_proj = 0;  ///< C_v × C_v
    std::size_t positional = 0;   ///< N × C_v
    std::size_t scale = 0;        ///< 1 × 1
    std::size_t ln_gamma = 0;     ///< 1 × C_v
    std::size_t ln_beta = 0;      ///< 1 × C_v
    std::size_t concat_proj = 0;  ///< C_v × 2C_v, concat variant only

    static FusionParams create(nn::ParamStore& store, const std::string& name, int channels, int height, int width,
                               int text_width, int heads, FusionVariant variant, double scale_init, nn::Rng& rng);
    int head_width() const noexcept { return channels / heads; }
};

/// Intermediates kept for the backward pass; also inspected by tests.
struct FusionCache {
    Eigen::MatrixXd x;          ///< N × C flattened input
    Eigen::MatrixXd queries;    ///< N × C
    Eigen::MatrixXd keys;       ///< L × C
    Eigen::MatrixXd values;     ///< L × C
    std::vector<Eigen::MatrixXd> attention;  ///< per head, N × L, rows sum to 1
    Eigen::MatrixXd heads_concat;            ///< N × C
    Eigen::MatrixXd attended;                ///< N × C, after W^O
    Eigen::MatrixXd residual;                ///< N × C, before layer norm
    nn::RowNormCache norm;
};

/// Row-per-position view of a C×H×W tensor and its inverse.
Eigen::MatrixXd flatten_positions(const nn::Tensor& x);
nn::Tensor unflatten_positions(const Eigen::MatrixXd& rows, int height, int width);

constexpr double kFusionNormEps = 1e-5;

nn::Tensor fuse_stage(const nn::Tensor& x, const TextEmbedding& text, const nn::ParamStore& store,
                      const FusionParams& params, FusionCache* cache = nullptr);

/// Accumulates parameter gradients into `store` and returns dL/dx.
nn::Tensor fuse_stage_backward(const nn::Tensor& dy, const TextEmbedding& text, nn::ParamStore& store,
                               const FusionParams& params, const FusionCache& cache, int height, int width);

}  // namespace gazedistill
