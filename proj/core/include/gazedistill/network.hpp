#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "gazedistill/fusion.hpp"
#include "gazedistill/grid.hpp"
#include "gazedistill/nn.hpp"
#include "gazedistill/text_embed.hpp"

namespace gazedistill {

constexpr int kStageCount = 4;

/// Architecture of one 4-stage encoder–decoder. Teachers carry fusion
/// blocks; students carry 1×1 projection heads into the teacher widths.
struct NetworkConfig {
    std::array<int, kStageCount> widths{16, 32, 64, 128};
    int height = 64;
    int width = 64;
    int classes = 2;
    bool text_fusion = false;
    std::array<bool, kStageCount> fusion_enabled{true, true, true, true};
    int heads = 4;
    FusionVariant variant = FusionVariant::sum;
    double lambda_init = 0.1;
    int text_width = 768;
    /// Empty for teachers; teacher widths for students.
    std::optional<std::array<int, kStageCount>> projection_widths;

    /// Stable textual description; hashed into checkpoint manifests.
    std::string describe() const;
};

/// Network output for one image: per-pixel class probabilities (classes×H×W)
/// and per-stage feature maps (teacher: post-fusion, student: projected).
struct StageBundle {
    nn::Tensor probs;
    std::vector<nn::Tensor> features;
};

struct ConvUnit {
    nn::Conv2d conv;
    nn::InstanceNorm norm;

    struct Cache {
        nn::RowMatrix col;
        nn::InstanceNorm::Cache norm;
        nn::Tensor pre_activation;
        int height = 0;
        int width = 0;
    };
    static ConvUnit create(nn::ParamStore& store, const std::string& name, int in, int out, nn::Rng& rng);
    nn::Tensor forward(const nn::ParamStore& store, const nn::Tensor& x, Cache& cache) const;
    nn::Tensor backward(nn::ParamStore& store, const Cache& cache, const nn::Tensor& dy) const;
};

struct ForwardCache {
    struct Encoder {
        nn::Tensor input;
        ConvUnit::Cache first;
        ConvUnit::Cache second;
        nn::Tensor raw;
        FusionCache fusion;
        bool fused = false;
        std::vector<int> pool_argmax;
        nn::RowMatrix projection_col;
    };
    struct Decoder {
        nn::RowMatrix reduce_col;
        nn::Tensor reduce_pre;
        ConvUnit::Cache unit;
        int skip_channels = 0;
    };
    std::array<Encoder, kStageCount> encoders;
    std::array<Decoder, kStageCount - 1> decoders;  // index 0 ↔ decoder at stage 1
    nn::RowMatrix head_col;
    nn::Tensor probs;
};

class SegNet {
public:
    SegNet() = default;
    SegNet(const NetworkConfig& config, std::uint64_t seed);

    static SegNet teacher(NetworkConfig config, std::uint64_t seed);
    static SegNet student(NetworkConfig config, const std::array<int, kStageCount>& teacher_widths, std::uint64_t seed);

    bool initialized() const noexcept { return !store_.empty(); }
    const NetworkConfig& config() const noexcept { return config_; }
    nn::ParamStore& params() noexcept { return store_; }
    const nn::ParamStore& params() const noexcept { return store_; }

    /// `text` is required iff the network fuses text.
    StageBundle forward(const Image& image, const TextEmbedding* text, ForwardCache* cache = nullptr) const;

    /// Accumulates gradients for dL/dprobs and optional dL/dfeatures[k].
    void backward(const ForwardCache& cache, const TextEmbedding* text, const nn::Tensor& dprobs,
                  const std::vector<nn::Tensor>* dfeatures);

    const std::array<std::optional<FusionParams>, kStageCount>& fusion_stages() const noexcept { return fusion_; }

private:
    NetworkConfig config_;
    nn::ParamStore store_;
    std::array<ConvUnit, kStageCount> enc_first_{};
    std::array<ConvUnit, kStageCount> enc_second_{};
    std::array<std::optional<FusionParams>, kStageCount> fusion_{};
    std::array<nn::Conv2d, kStageCount> projection_{};
    std::array<nn::Conv2d, kStageCount - 1> dec_reduce_{};
    std::array<ConvUnit, kStageCount - 1> dec_unit_{};
    nn::Conv2d head_{};
};

StageBundle forward_teacher(const SegNet& teacher, const Image& image, const TextEmbedding& text);
StageBundle forward_student(const SegNet& student, const Image& image);

/// Foreground mask by per-pixel argmax.
BinaryMask predict_mask(const StageBundle& bundle);

// --- checkpoints -----------------------------------------------------------

struct CheckpointManifest {
    std::string stage;        ///< "teacher" or "student"
    std::string config_hash;  ///< sha256 of NetworkConfig::describe()
    std::string network;      ///< NetworkConfig::describe()
    std::uint64_t seed = 0;
    std::uint64_t step = 0;
    std::string extra;        ///< free-form JSON object text, may be empty
};

/// Writes manifest.json plus one `<param>.bin` blob per parameter
/// (little-endian u32 rows, u32 cols, then row-major float64 values).
void save_checkpoint(const std::string& dir, const SegNet& net, CheckpointManifest manifest);

/// Rebuilds the network from `config` and loads the blobs. Throws
/// StructuralError when the manifest hash does not match `config`.
SegNet load_checkpoint(const std::string& dir, const NetworkConfig& config, CheckpointManifest* manifest = nullptr);

CheckpointManifest read_manifest(const std::string& dir);

/// sha256 over the manifest and every blob in parameter order.
std::string checkpoint_hash(const std::string& dir);

/// sha256 over all parameter values (bitwise).
std::string weights_hash(const nn::ParamStore& store);

}  // namespace gazedistill
