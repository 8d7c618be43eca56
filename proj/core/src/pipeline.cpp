#include "gazedistill/pipeline.hpp"

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <limits>
#include <map>

#include <json.hpp>

#include "gazedistill/io.hpp"
#include "gazedistill/metrics.hpp"

namespace gazedistill {

namespace fs = std::filesystem;

namespace {

int get_int_in(const Config& c, const std::string& key, long long lo, long long hi) {
    const long long v = c.get_int(key);
    if (v < lo || v > hi) {
        throw ConfigError(key, "value " + std::to_string(v) + " outside [" + std::to_string(lo) + ", " +
                                   std::to_string(hi) + "]");
    }
    return static_cast<int>(v);
}

double get_double_in(const Config& c, const std::string& key, double lo, double hi) {
    const double v = c.get_double(key);
    if (!(v >= lo && v <= hi)) throw ConfigError(key, "value " + c.get(key) + " out of range");
    return v;
}

std::array<int, kStageCount> widths(const Config& c, const std::string& key) {
    const auto v = c.get_int_list(key);
    if (v.size() != kStageCount) throw ConfigError(key, "expected 4 stage widths");
    std::array<int, kStageCount> out{};
    for (int i = 0; i < kStageCount; ++i) {
        if (v[static_cast<std::size_t>(i)] < 1) throw ConfigError(key, "stage widths must be positive");
        out[static_cast<std::size_t>(i)] = v[static_cast<std::size_t>(i)];
    }
    return out;
}

}  // namespace

Settings resolve_settings(const Config& c) {
    Settings s;
    s.scene.image_side = get_int_in(c, "scene.image_side", 8, 4096);
    s.scene.radius_min = c.get_double("scene.radius_min");
    s.scene.radius_max = c.get_double("scene.radius_max");
    s.scene.texture_noise = c.get_double("scene.texture_noise");
    s.scene.gaze_points = get_int_in(c, "scene.gaze_points", 0, 1000000);
    s.scene.gaze_jitter_px = c.get_double("scene.gaze_jitter_px");
    s.scene.distractor_rate = c.get_double("scene.distractor_rate");
    s.scene.mimic_count = get_int_in(c, "scene.mimic_count", 0, 64);
    s.scene.mimic_radius_min = c.get_double("scene.mimic_radius_min");
    s.scene.mimic_radius_max = c.get_double("scene.mimic_radius_max");
    s.scene.mimic_level = c.get_double("scene.mimic_level");
    s.scene.mimic_attention = c.get_double("scene.mimic_attention");
    s.scene.mimic_fixation_share = c.get_double("scene.mimic_fixation_share");
    s.scene.seed = c.get_uint("scene.seed");
    try {
        s.scene.validate();
    } catch (const ParameterError& e) {
        throw ConfigError("scene", e.what());
    }
    s.scene_count = get_int_in(c, "scene.count", 1, 1000000);
    s.data_dir = c.get("data.dir");
    s.test_dir = c.get("data.test_dir");
    s.test_fraction = get_double_in(c, "data.test_fraction", 0.0, 0.9);

    s.data.masks.sigma_px = c.get_double("masks.sigma_px");
    s.data.masks.tau_hc = get_double_in(c, "masks.tau_hc", 0.0, 1.0);
    s.data.masks.tau_bc = get_double_in(c, "masks.tau_bc", 0.0, 1.0);
    if (s.data.masks.tau_hc < s.data.masks.tau_bc) throw ConfigError("masks.tau_hc", "must be >= masks.tau_bc");
    s.data.masks.min_component_px = get_int_in(c, "masks.min_component_px", 0, 1 << 30);
    s.data.masks_dir = c.get("masks.dir");

    s.text.backend = c.get("text.backend");
    if (s.text.backend != "deterministic_test" && s.text.backend != "pretrained") {
        throw ConfigError("text.backend", "expected deterministic_test or pretrained");
    }
    s.text.width = get_int_in(c, "text.width", 1, 1 << 16);
    s.text.seed = c.get_uint("text.seed");
    s.text.model_name = c.get("text.model_name");
    s.text.endpoint = c.get("text.endpoint");
    s.text.allow_fallback = c.get_bool("text.allow_fallback");
    if (s.text.backend == "pretrained" && s.text.endpoint.empty()) {
        throw ConfigError("text.endpoint", "pretrained text backend needs an endpoint");
    }
    s.prompt = parse_prompt_variant(c.get("prompt.variant"));

    s.provider.mode = c.get("provider.mode");
    if (s.provider.mode != "replay" && s.provider.mode != "live") {
        throw ConfigError("provider.mode", "expected replay or live");
    }
    s.provider.fixtures = c.get("provider.fixtures");
    s.provider.live.endpoint = c.get("provider.endpoint");
    s.provider.live.model = c.get("provider.model");
    s.provider.live.timeout_s = get_double_in(c, "provider.timeout_s", 0.001, 86400.0);
    s.provider.live.max_in_flight = get_int_in(c, "provider.max_in_flight", 1, 1024);
    s.provider.live.provider_id = c.get("provider.id");
    s.provider.credential_env = c.get("provider.credential_env");

    NetworkConfig t;
    t.widths = widths(c, "model.teacher_widths");
    t.height = t.width = s.scene.image_side;
    t.text_fusion = true;
    const auto stages = c.get_int_list("model.fusion_stages");
    if (stages.size() != kStageCount) throw ConfigError("model.fusion_stages", "expected 4 flags");
    bool any = false;
    for (int i = 0; i < kStageCount; ++i) {
        const int f = stages[static_cast<std::size_t>(i)];
        if (f != 0 && f != 1) throw ConfigError("model.fusion_stages", "flags must be 0 or 1");
        t.fusion_enabled[static_cast<std::size_t>(i)] = f == 1;
        any = any || f == 1;
    }
    if (!any) throw ConfigError("model.fusion_stages", "at least one stage must fuse text");
    t.heads = get_int_in(c, "model.heads", 1, 1024);
    for (int i = 0; i < kStageCount; ++i) {
        if (t.fusion_enabled[static_cast<std::size_t>(i)] && t.widths[static_cast<std::size_t>(i)] % t.heads != 0) {
            throw ConfigError("model.heads", "must divide every fused stage width");
        }
    }
    const std::string variant = c.get("model.fusion_variant");
    if (variant == "sum") {
        t.variant = FusionVariant::sum;
    } else if (variant == "concat") {
        t.variant = FusionVariant::concat;
    } else {
        throw ConfigError("model.fusion_variant", "expected sum or concat");
    }
    t.lambda_init = c.get_double("model.lambda_init");
    t.text_width = s.text.width;
    s.teacher_net = t;

    NetworkConfig st;
    st.widths = widths(c, "model.student_widths");
    st.height = st.width = s.scene.image_side;
    st.text_fusion = false;
    st.fusion_enabled = {false, false, false, false};
    st.text_width = s.text.width;
    st.projection_widths = t.widths;
    s.student_net = st;

    TrainConfig tc;
    tc.epochs = get_int_in(c, "train.epochs", 1, 1000000);
    tc.batch_size = get_int_in(c, "train.batch_size", 1, 1000000);
    tc.lr_init = c.get_double("train.lr_init");
    tc.seed = c.get_uint("train.seed");
    tc.warmup_epochs = get_int_in(c, "train.warmup_epochs", -1, 1000000);
    tc.clip_norm = c.get_double("train.clip_norm");
    tc.select_best = c.get_bool("train.select_best");
    tc.weights.lambda_afc = c.get_double("loss.lambda_afc");
    tc.weights.lambda_cwc_max = c.get_double("loss.lambda_cwc");
    tc.weights.beta = c.get_double("loss.beta");
    tc.weights.epsilon = c.get_double("loss.epsilon");
    tc.tau_pos = c.get_double("loss.tau_pos");
    tc.tau_neg = c.get_double("loss.tau_neg");
    tc.darm_enabled = c.get_bool("darm.enabled");
    tc.darm.tau_dis = c.get_double("darm.tau_dis");
    tc.darm.patch_side = get_int_in(c, "darm.patch", 1, 1 << 16);
    tc.darm.rate = c.get_double("darm.rate");
    tc.darm.seed = c.get_uint("darm.seed");
    tc.stage = Stage::teacher;
    tc.validate();
    s.teacher_train = tc;
    tc.stage = Stage::student;
    s.student_train = tc;
    s.val_fraction = get_double_in(c, "train.val_fraction", 0.0, 0.9);
    s.teacher_checkpoint = c.get("teacher.checkpoint");
    return s;
}

std::unique_ptr<ProviderClient> make_provider(const ProviderSettings& p) {
    if (p.mode == "replay") {
        if (p.fixtures.empty()) throw ConfigError("provider.fixtures", "replay mode needs a fixture directory");
        if (!fs::is_directory(p.fixtures)) throw ConfigError("provider.fixtures", "not a directory: " + p.fixtures);
        return std::make_unique<ReplayProvider>(p.fixtures);
    }
    if (p.live.endpoint.empty()) throw ConfigError("provider.endpoint", "live mode needs an endpoint");
    LiveProviderConfig cfg = p.live;
    if (!p.credential_env.empty()) {
        const char* v = std::getenv(p.credential_env.c_str());
        if (v == nullptr) throw ConfigError("provider.credential_env", "environment variable " + p.credential_env + " is not set");
        cfg.credential = v;
    }
    return std::make_unique<LiveProvider>(cfg);
}

PreparedData prepare_data(const Settings& s, const TextEncoder& encoder) {
    if (s.data_dir.empty()) throw ConfigError("data.dir", "no dataset directory configured");
    const Dataset all = load_dataset(s.data_dir, s.data);
    PreparedData out;
    Dataset pool;
    if (!s.test_dir.empty()) {
        pool = all;
        DatasetOptions test_opts = s.data;
        test_opts.masks_dir.clear();
        out.test = load_dataset(s.test_dir, test_opts);
    } else {
        auto [train, test] = split_dataset(all, s.test_fraction, s.scene.seed ^ 0x74657374ULL);
        pool = std::move(train);
        out.test = std::move(test);
    }
    auto [train, val] = split_dataset(pool, s.val_fraction, s.scene.seed);
    out.train = std::move(train);
    out.val = std::move(val);
    attach_text(out.train, encoder, s.prompt, s.text.seed);
    attach_text(out.val, encoder, s.prompt, s.text.seed);
    attach_text(out.test, encoder, s.prompt, s.text.seed);
    return out;
}

PreparedData prepare_data(const Settings& s) {
    const auto encoder = make_text_encoder(s.text);
    return prepare_data(s, *encoder);
}

namespace {

NetworkConfig sized(NetworkConfig cfg, const PreparedData& data) {
    if (data.train.size() == 0) throw ConfigError("data.dir", "training set is empty");
    cfg.height = data.train.samples.front().image.height();
    cfg.width = data.train.samples.front().image.width();
    return cfg;
}

StageRun save_stage(TrainResult result, const std::string& stage, std::uint64_t seed, const std::string& out_dir,
                    long long steps) {
    fs::create_directories(out_dir);
    StageRun run{std::move(result), (fs::path(out_dir) / "checkpoint").string(), {}};
    CheckpointManifest m;
    m.stage = stage;
    m.seed = seed;
    m.step = static_cast<std::uint64_t>(steps);
    nlohmann::ordered_json extra;
    extra["best_epoch"] = run.result.record.best_epoch;
    if (!run.result.record.teacher_hash_before.empty()) extra["teacher_weights"] = run.result.record.teacher_hash_before;
    m.extra = extra.dump();
    save_checkpoint(run.checkpoint_dir, run.result.net, m);
    run.checkpoint_hash = checkpoint_hash(run.checkpoint_dir);
    write_file_text((fs::path(out_dir) / "run_record.jsonl").string(), run.result.record.to_jsonl());
    return run;
}

}  // namespace

StageRun run_teacher_stage(const Settings& s, const PreparedData& data, const std::string& out_dir,
                           const EpochCallback& on_epoch) {
    const NetworkConfig cfg = sized(s.teacher_net, data);
    TrainResult r = train_teacher(s.teacher_train, cfg, data.train, data.val.size() ? &data.val : nullptr, on_epoch);
    const long long steps = static_cast<long long>(data.train.size() / static_cast<std::size_t>(s.teacher_train.batch_size)) *
                            s.teacher_train.epochs;
    return save_stage(std::move(r), "teacher", s.teacher_train.seed, out_dir, steps);
}

StageRun run_student_stage(const Settings& s, const PreparedData& data, const SegNet& teacher,
                           const std::string& out_dir, const EpochCallback& on_epoch) {
    NetworkConfig cfg = sized(s.student_net, data);
    cfg.projection_widths = teacher.config().widths;
    TrainResult r =
        train_student(s.student_train, cfg, teacher, data.train, data.val.size() ? &data.val : nullptr, on_epoch);
    const long long steps = static_cast<long long>(data.train.size() / static_cast<std::size_t>(s.student_train.batch_size)) *
                            s.student_train.epochs;
    return save_stage(std::move(r), "student", s.student_train.seed, out_dir, steps);
}

SegNet load_teacher(const Settings& s, const std::string& checkpoint_dir) {
    if (checkpoint_dir.empty()) throw ConfigError("teacher.checkpoint", "no teacher checkpoint configured");
    if (!fs::exists(fs::path(checkpoint_dir) / "manifest.json")) {
        throw ConfigError("teacher.checkpoint", "no checkpoint manifest under " + checkpoint_dir);
    }
    const CheckpointManifest m = read_manifest(checkpoint_dir);
    if (m.stage != "teacher") throw StructuralError("checkpoint at " + checkpoint_dir + " is not a teacher");
    return load_checkpoint(checkpoint_dir, s.teacher_net);
}

// --- ablations ---------------------------------------------------------------

const std::vector<std::string>& ablation_axes() {
    static const std::vector<std::string> axes = {"student_losses", "darm",        "fusion_depth",
                                                  "fusion_variant", "thresholds", "prompt"};
    return axes;
}

std::vector<AblationVariant> ablation_variants(const std::string& axis) {
    if (axis == "student_losses") {
        return {{"wo_both", {{"loss.lambda_afc", "0"}, {"loss.lambda_cwc", "0"}}, false},
                {"wo_cwc", {{"loss.lambda_cwc", "0"}}, false},
                {"wo_afc", {{"loss.lambda_afc", "0"}}, false},
                {"w_both", {}, false}};
    }
    if (axis == "darm") {
        return {{"wo_darm", {{"darm.enabled", "false"}}, false}, {"w_darm", {{"darm.enabled", "true"}}, false}};
    }
    if (axis == "fusion_depth") {
        return {{"stages_1", {{"model.fusion_stages", "1,0,0,0"}}, true},
                {"stages_2", {{"model.fusion_stages", "1,1,0,0"}}, true},
                {"stages_3", {{"model.fusion_stages", "1,1,1,0"}}, true},
                {"stages_4", {{"model.fusion_stages", "1,1,1,1"}}, true}};
    }
    if (axis == "fusion_variant") {
        return {{"sum", {{"model.fusion_variant", "sum"}}, true},
                {"concat", {{"model.fusion_variant", "concat"}}, true}};
    }
    if (axis == "thresholds") {
        return {{"tau_0.1_0.9", {{"loss.tau_neg", "0.1"}, {"loss.tau_pos", "0.9"}}, false},
                {"tau_0.2_0.8", {{"loss.tau_neg", "0.2"}, {"loss.tau_pos", "0.8"}}, false},
                {"tau_0.3_0.7", {{"loss.tau_neg", "0.3"}, {"loss.tau_pos", "0.7"}}, false},
                {"tau_0.4_0.6", {{"loss.tau_neg", "0.4"}, {"loss.tau_pos", "0.6"}}, false}};
    }
    if (axis == "prompt") {
        return {{"random", {{"prompt.variant", "random"}}, true},
                {"blank", {{"prompt.variant", "blank"}}, true},
                {"structured", {{"prompt.variant", "structured"}}, true}};
    }
    throw ConfigError("axis", "unknown ablation axis '" + axis + "'");
}

double AblationReport::mean_student_dice(const std::string& variant) const {
    double sum = 0.0;
    int n = 0;
    for (const auto& e : entries) {
        if (e.variant != variant) continue;
        sum += e.student_dice;
        ++n;
    }
    if (n == 0) throw InputError("ablation report has no entries for " + variant);
    return sum / n;
}

std::string AblationReport::to_json() const {
    nlohmann::ordered_json doc;
    doc["axis"] = axis;
    nlohmann::ordered_json runs = nlohmann::ordered_json::array();
    for (const auto& e : entries) {
        runs.push_back({{"variant", e.variant},
                        {"seed", e.seed},
                        {"student_dice", e.student_dice},
                        {"teacher_dice", e.teacher_dice},
                        {"student_checkpoint", e.student_checkpoint_hash}});
    }
    doc["runs"] = runs;
    nlohmann::ordered_json summary = nlohmann::ordered_json::array();
    for (const auto& v : variants) {
        std::vector<std::optional<double>> sd;
        std::vector<std::optional<double>> td;
        for (const auto& e : entries) {
            if (e.variant != v) continue;
            sd.emplace_back(e.student_dice);
            td.emplace_back(e.teacher_dice);
        }
        const auto a = summarize(sd);
        const auto b = summarize(td);
        summary.push_back({{"variant", v},
                           {"student_dice_mean", a.mean},
                           {"student_dice_std", a.stddev},
                           {"teacher_dice_mean", b.mean},
                           {"teacher_dice_std", b.stddev},
                           {"seeds", a.count}});
    }
    doc["summary"] = summary;
    return doc.dump(2) + "\n";
}

AblationReport run_ablation(const Config& base, const std::string& axis, const std::vector<std::uint64_t>& seeds,
                            const std::string& out_dir, const LogFn& log) {
    const auto variants = ablation_variants(axis);
    if (seeds.empty()) throw ConfigError("ablate.seeds", "at least one seed is required");
    AblationReport report;
    report.axis = axis;
    for (const auto& v : variants) report.variants.push_back(v.name);

    std::map<std::string, PreparedData> data_cache;
    auto data_for = [&](const Settings& s, const Config& c) -> const PreparedData& {
        const std::string key = c.get("prompt.variant");
        auto it = data_cache.find(key);
        if (it == data_cache.end()) it = data_cache.emplace(key, prepare_data(s)).first;
        return it->second;
    };

    for (const auto seed : seeds) {
        Config seeded = base;
        seeded.set("train.seed", std::to_string(seed));
        seeded.set("darm.seed", std::to_string(seed));
        const Settings base_settings = resolve_settings(seeded);
        const fs::path seed_dir = fs::path(out_dir) / ("seed_" + std::to_string(seed));
        std::optional<StageRun> shared_teacher;
        for (const auto& v : variants) {
            Config c = seeded;
            for (const auto& [k, val] : v.overrides) c.set(k, val);
            const Settings s = resolve_settings(c);
            const PreparedData& data = data_for(s, c);
            const fs::path vdir = seed_dir / v.name;
            const SegNet* teacher = nullptr;
            std::optional<StageRun> own_teacher;
            if (v.retrain_teacher) {
                if (log) log("seed " + std::to_string(seed) + " " + v.name + ": teacher");
                own_teacher = run_teacher_stage(s, data, (vdir / "teacher").string());
                teacher = &own_teacher->result.net;
            } else {
                if (!shared_teacher) {
                    if (log) log("seed " + std::to_string(seed) + ": shared teacher");
                    shared_teacher = run_teacher_stage(base_settings, data_for(base_settings, seeded),
                                                       (seed_dir / "teacher").string());
                }
                teacher = &shared_teacher->result.net;
            }
            if (log) log("seed " + std::to_string(seed) + " " + v.name + ": student");
            const StageRun student = run_student_stage(s, data, *teacher, (vdir / "student").string());
            AblationEntry e;
            e.variant = v.name;
            e.seed = seed;
            e.student_dice = mean_dice(student.result.net, data.test);
            e.teacher_dice = mean_dice(*teacher, data.test);
            e.student_checkpoint_hash = student.checkpoint_hash;
            report.entries.push_back(e);
            if (log) {
                log("seed " + std::to_string(seed) + " " + v.name + ": student dice " +
                    std::to_string(e.student_dice) + ", teacher dice " + std::to_string(e.teacher_dice));
            }
        }
    }
    fs::create_directories(out_dir);
    write_file_text((fs::path(out_dir) / "ablation.json").string(), report.to_json());
    return report;
}

}  // namespace gazedistill
