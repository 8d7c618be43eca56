#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "gazedistill/config.hpp"
#include "gazedistill/network.hpp"
#include "gazedistill/report.hpp"
#include "gazedistill/synthkit.hpp"
#include "gazedistill/text_embed.hpp"
#include "gazedistill/trainer.hpp"

namespace gazedistill {

struct ProviderSettings {
    std::string mode = "replay";  ///< replay | live
    std::string fixtures;
    LiveProviderConfig live;
    std::string credential_env;
};

/// Typed view of a Config. Every field is validated; failures throw
/// ConfigError naming the key.
struct Settings {
    SceneSpec scene;
    int scene_count = 256;
    std::string data_dir;
    std::string test_dir;
    DatasetOptions data;
    TextEncoderOptions text;
    PromptVariant prompt = PromptVariant::structured;
    ProviderSettings provider;
    NetworkConfig teacher_net;
    NetworkConfig student_net;
    TrainConfig teacher_train;
    TrainConfig student_train;
    double val_fraction = 0.2;
    double test_fraction = 0.25;
    std::string teacher_checkpoint;
};

Settings resolve_settings(const Config& config);

std::unique_ptr<ProviderClient> make_provider(const ProviderSettings& settings);

struct PreparedData {
    Dataset train;
    Dataset val;
    Dataset test;
};

/// Loads data_dir (and test_dir when set, otherwise a held-out test split),
/// splits off validation scenes and attaches prompt embeddings.
PreparedData prepare_data(const Settings& settings, const TextEncoder& encoder);
PreparedData prepare_data(const Settings& settings);

struct StageRun {
    TrainResult result;
    std::string checkpoint_dir;
    std::string checkpoint_hash;
};

/// Trains and writes `<out_dir>/checkpoint/` and `<out_dir>/run_record.jsonl`.
StageRun run_teacher_stage(const Settings& settings, const PreparedData& data, const std::string& out_dir,
                           const EpochCallback& on_epoch = {});
StageRun run_student_stage(const Settings& settings, const PreparedData& data, const SegNet& teacher,
                           const std::string& out_dir, const EpochCallback& on_epoch = {});

SegNet load_teacher(const Settings& settings, const std::string& checkpoint_dir);

struct AblationVariant {
    std::string name;
    std::vector<std::pair<std::string, std::string>> overrides;
    bool retrain_teacher = false;
};

/// Named variants of one ablation axis: student_losses, darm, fusion_depth,
/// fusion_variant, thresholds, prompt. Unknown axes throw ConfigError.
std::vector<AblationVariant> ablation_variants(const std::string& axis);
const std::vector<std::string>& ablation_axes();

struct AblationEntry {
    std::string variant;
    std::uint64_t seed = 0;
    double student_dice = 0.0;
    double teacher_dice = 0.0;
    std::string student_checkpoint_hash;
};

struct AblationReport {
    std::string axis;
    std::vector<std::string> variants;
    std::vector<AblationEntry> entries;

    /// Mean student test Dice of one variant over seeds.
    double mean_student_dice(const std::string& variant) const;
    std::string to_json() const;
};

using LogFn = std::function<void(const std::string&)>;

/// Runs every variant of `axis` for each seed (train.seed and darm.seed).
/// A teacher is trained once per seed and shared by student-only variants.
AblationReport run_ablation(const Config& base, const std::string& axis, const std::vector<std::uint64_t>& seeds,
                            const std::string& out_dir, const LogFn& log = {});

}  // namespace gazedistill
