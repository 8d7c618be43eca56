#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "gazedistill/gaze_masks.hpp"
#include "gazedistill/losses.hpp"
#include "gazedistill/network.hpp"
#include "gazedistill/report.hpp"
#include "gazedistill/text_embed.hpp"

namespace gazedistill {

enum class Stage { teacher, student };
enum class PromptVariant { structured, blank, random };

std::string_view to_string(Stage s);
std::string_view to_string(PromptVariant v);
PromptVariant parse_prompt_variant(const std::string& s);

struct TrainConfig {
    Stage stage = Stage::teacher;
    int epochs = 30;
    int batch_size = 8;
    double lr_init = 1e-2;
    std::uint64_t seed = 0;
    int warmup_epochs = -1;  ///< < 0 selects 10% of epochs (at least 1)
    double clip_norm = 5.0;
    bool select_best = true;
    LossWeights weights;
    bool darm_enabled = true;
    DarmConfig darm;
    double tau_pos = 0.8;
    double tau_neg = 0.2;

    /// Throws ConfigError naming the offending key.
    void validate() const;
    int effective_warmup_epochs() const;
};

/// min(1, epoch / warmup_epochs) for 1-based epochs; 1 when warmup_epochs is 0.
double warmup_factor(int epoch, int warmup_epochs);

struct Sample {
    std::string id;
    Image image;
    BinaryMask gt;  ///< empty when the dataset has no ground truth
    MaskPair masks;
    std::optional<LesionReport> report;
    TextEmbedding text;
};

struct Dataset {
    std::vector<Sample> samples;
    std::size_t size() const noexcept { return samples.size(); }
};

struct DatasetOptions {
    MaskParams masks;
    std::string masks_dir;  ///< precomputed hc/ and bc/ masks; empty derives them from gaze/
};

/// Reads images/, masks/, gaze/ and reports/ from a dataset directory.
Dataset load_dataset(const std::string& dir, const DatasetOptions& options);

/// Deterministic shuffle-then-split; returns {train, held_out}.
std::pair<Dataset, Dataset> split_dataset(const Dataset& data, double held_out_fraction, std::uint64_t seed);

/// Text the teacher sees for one sample under a prompt variant.
std::string prompt_text(const Sample& sample, PromptVariant variant, std::uint64_t seed);

/// Fills Sample::text. Throws ConfigError when a structured prompt needs a
/// missing report.
void attach_text(Dataset& data, const TextEncoder& encoder, PromptVariant variant, std::uint64_t seed);

struct EpochRecord {
    int epoch = 0;
    double loss = 0.0;
    double pce = 0.0;
    double afc = 0.0;
    double cwc = 0.0;
    double ce = 0.0;
    double lr = 0.0;
    double cwc_weight = 0.0;
    std::optional<double> val_dice;
    double wall_s = 0.0;
    int samples = 0;
    int skipped_empty_hc = 0;
    int empty_pos = 0;
    int empty_neg = 0;
    int darm_patches = 0;

    /// Loss fields only; excludes wall time.
    bool same_losses(const EpochRecord& o) const;
};

struct RunRecord {
    Stage stage = Stage::teacher;
    std::vector<EpochRecord> epochs;
    int best_epoch = 0;
    std::string teacher_hash_before;
    std::string teacher_hash_after;

    std::string to_jsonl() const;
};

struct TrainResult {
    SegNet net;
    RunRecord record;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

/// pCE on the gaze partial labels with text fusion.
TrainResult train_teacher(const TrainConfig& cfg, const NetworkConfig& net_cfg, const Dataset& train,
                          const Dataset* val = nullptr, const EpochCallback& on_epoch = {});

/// Distillation from a frozen teacher with M_bc supervision.
TrainResult train_student(const TrainConfig& cfg, const NetworkConfig& net_cfg, const SegNet& teacher,
                          const Dataset& train, const Dataset* val = nullptr, const EpochCallback& on_epoch = {});

/// Mean Dice against ground truth (or M_bc when the set has none).
double mean_dice(const SegNet& net, const Dataset& data);

}  // namespace gazedistill
