#include "gazedistill/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <filesystem>
#include <numeric>
#include <random>

#include <json.hpp>

#include "gazedistill/io.hpp"
#include "gazedistill/metrics.hpp"
#include "gazedistill/optim.hpp"

namespace gazedistill {

namespace fs = std::filesystem;
using nn::Tensor;

std::string_view to_string(Stage s) { return s == Stage::teacher ? "teacher" : "student"; }

std::string_view to_string(PromptVariant v) {
    switch (v) {
        case PromptVariant::structured: return "structured";
        case PromptVariant::blank: return "blank";
        case PromptVariant::random: return "random";
    }
    return "structured";
}

PromptVariant parse_prompt_variant(const std::string& s) {
    if (s == "structured") return PromptVariant::structured;
    if (s == "blank") return PromptVariant::blank;
    if (s == "random") return PromptVariant::random;
    throw ConfigError("prompt.variant", "expected structured, blank or random, got '" + s + "'");
}

void TrainConfig::validate() const {
    if (epochs < 1) throw ConfigError("train.epochs", "must be >= 1");
    if (batch_size < 1) throw ConfigError("train.batch_size", "must be >= 1");
    if (!(lr_init >= 0.0)) throw ConfigError("train.lr_init", "must be >= 0");
    if (!(clip_norm > 0.0)) throw ConfigError("train.clip_norm", "must be > 0");
    if (weights.lambda_afc < 0.0) throw ConfigError("loss.lambda_afc", "must be >= 0");
    if (weights.lambda_cwc_max < 0.0) throw ConfigError("loss.lambda_cwc", "must be >= 0");
    if (!(weights.beta > 0.0)) throw ConfigError("loss.beta", "must be > 0");
    if (!(weights.epsilon > 0.0)) throw ConfigError("loss.epsilon", "must be > 0");
    if (!(tau_pos > 0.0 && tau_pos < 1.0)) throw ConfigError("loss.tau_pos", "must lie in (0,1)");
    if (!(tau_neg > 0.0 && tau_neg < 1.0)) throw ConfigError("loss.tau_neg", "must lie in (0,1)");
    if (darm.patch_side < 1) throw ConfigError("darm.patch", "must be >= 1");
    if (!(darm.rate >= 0.0 && darm.rate <= 1.0)) throw ConfigError("darm.rate", "must lie in [0,1]");
    if (!(darm.tau_dis >= 0.0 && darm.tau_dis <= 1.0)) throw ConfigError("darm.tau_dis", "must lie in [0,1]");
}

int TrainConfig::effective_warmup_epochs() const {
    if (warmup_epochs >= 0) return warmup_epochs;
    return std::max(1, static_cast<int>(std::lround(0.1 * epochs)));
}

double warmup_factor(int epoch, int warmup_epochs) {
    if (warmup_epochs <= 0) return 1.0;
    return std::min(1.0, static_cast<double>(epoch) / static_cast<double>(warmup_epochs));
}

// --- data --------------------------------------------------------------------

Dataset load_dataset(const std::string& dir, const DatasetOptions& options) {
    const fs::path root(dir);
    if (!fs::is_directory(root / "images")) throw ConfigError("data.dir", "no images/ directory under '" + dir + "'");
    std::vector<std::string> ids;
    for (const auto& entry : fs::directory_iterator(root / "images")) {
        if (entry.path().extension() == ".png") ids.push_back(entry.path().stem().string());
    }
    std::sort(ids.begin(), ids.end());
    if (ids.empty()) throw ConfigError("data.dir", "no images in '" + dir + "'");

    Dataset data;
    for (const auto& id : ids) {
        Sample s;
        s.id = id;
        s.image = read_image_png((root / "images" / (id + ".png")).string());
        const fs::path gt = root / "masks" / (id + ".png");
        if (fs::exists(gt)) {
            s.gt = read_mask_png(gt.string());
            require_same_shape(s.gt, s.image, "ground truth " + id);
        }
        if (!options.masks_dir.empty()) {
            const fs::path mroot(options.masks_dir);
            s.masks.m_hc = read_mask_png((mroot / "hc" / (id + ".png")).string());
            s.masks.m_bc = read_mask_png((mroot / "bc" / (id + ".png")).string());
            s.masks.tau_hc = options.masks.tau_hc;
            s.masks.tau_bc = options.masks.tau_bc;
            require_same_shape(s.masks.m_hc, s.image, "m_hc " + id);
            require_same_shape(s.masks.m_bc, s.image, "m_bc " + id);
        } else {
            const fs::path gaze = root / "gaze" / (id + ".csv");
            if (!fs::exists(gaze)) throw ConfigError("data.dir", "missing gaze log for " + id);
            const GazeLog log = load_gaze_file(gaze.string());
            s.masks = masks_from_gaze(log.records, s.image.height(), s.image.width(), options.masks);
        }
        const fs::path report = root / "reports" / (id + ".json");
        if (fs::exists(report)) s.report = validate_report(read_file_text(report.string()));
        data.samples.push_back(std::move(s));
    }
    return data;
}

std::pair<Dataset, Dataset> split_dataset(const Dataset& data, double held_out_fraction, std::uint64_t seed) {
    if (!(held_out_fraction >= 0.0 && held_out_fraction < 1.0)) {
        throw ConfigError("train.val_fraction", "must lie in [0,1)");
    }
    std::vector<std::size_t> order(data.size());
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 rng(seed ^ 0x73706c6974ULL);
    std::shuffle(order.begin(), order.end(), rng);
    const auto held = static_cast<std::size_t>(std::lround(held_out_fraction * static_cast<double>(data.size())));
    std::vector<std::size_t> a(order.begin() + static_cast<long>(held), order.end());
    std::vector<std::size_t> b(order.begin(), order.begin() + static_cast<long>(held));
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    std::pair<Dataset, Dataset> out;
    for (auto i : a) out.first.samples.push_back(data.samples[i]);
    for (auto i : b) out.second.samples.push_back(data.samples[i]);
    return out;
}

std::string prompt_text(const Sample& sample, PromptVariant variant, std::uint64_t seed) {
    switch (variant) {
        case PromptVariant::structured:
            if (!sample.report) throw ConfigError("data.dir", "structured prompt needs a report for " + sample.id);
            return canonical_text(*sample.report);
        case PromptVariant::blank:
            return "none";
        case PromptVariant::random: {
            std::uint64_t h = seed ^ 0xcbf29ce484222325ULL;
            for (char ch : sample.id) h = (h ^ static_cast<unsigned char>(ch)) * 0x100000001b3ULL;
            std::mt19937_64 rng(h);
            auto pick = [&](int n) { return std::uniform_int_distribution<int>(0, n - 1)(rng); };
            LesionReport r;
            r.location = static_cast<Location>(pick(4));
            r.boundary = static_cast<Boundary>(pick(3));
            r.characteristics = {static_cast<Characteristic>(pick(3))};
            if (pick(2) == 1) r.characteristics.insert(static_cast<Characteristic>(pick(3)));
            r.area_percent = quantize_area(std::uniform_real_distribution<double>(0.0, 100.0)(rng));
            r.confidence = static_cast<ReportConfidence>(pick(3));
            return canonical_text(r);
        }
    }
    return {};
}

void attach_text(Dataset& data, const TextEncoder& encoder, PromptVariant variant, std::uint64_t seed) {
    for (auto& s : data.samples) s.text = encoder.encode(prompt_text(s, variant, seed));
}

// --- records -----------------------------------------------------------------

bool EpochRecord::same_losses(const EpochRecord& o) const {
    return epoch == o.epoch && loss == o.loss && pce == o.pce && afc == o.afc && cwc == o.cwc && ce == o.ce &&
           lr == o.lr && cwc_weight == o.cwc_weight && val_dice == o.val_dice && samples == o.samples &&
           skipped_empty_hc == o.skipped_empty_hc && empty_pos == o.empty_pos && empty_neg == o.empty_neg &&
           darm_patches == o.darm_patches;
}

std::string RunRecord::to_jsonl() const {
    std::string out;
    for (const auto& e : epochs) {
        nlohmann::ordered_json j;
        j["stage"] = to_string(stage);
        j["epoch"] = e.epoch;
        j["loss"] = e.loss;
        j["pce"] = e.pce;
        j["afc"] = e.afc;
        j["cwc"] = e.cwc;
        j["ce"] = e.ce;
        j["lr"] = e.lr;
        j["cwc_weight"] = e.cwc_weight;
        j["val_dice"] = e.val_dice ? nlohmann::ordered_json(*e.val_dice) : nlohmann::ordered_json(nullptr);
        j["wall_s"] = e.wall_s;
        j["samples"] = e.samples;
        j["skip_empty_hc"] = e.skipped_empty_hc;
        j["empty_omega_pos"] = e.empty_pos;
        j["empty_omega_neg"] = e.empty_neg;
        j["darm_patches"] = e.darm_patches;
        out += j.dump() + "\n";
    }
    return out;
}

// --- training ----------------------------------------------------------------

namespace {

const TextEmbedding* text_for(const SegNet& net, const Sample& s) {
    return net.config().text_fusion ? &s.text : nullptr;
}

struct Loop {
    const TrainConfig& cfg;
    std::size_t n;
    long steps_per_epoch = 0;
    long total_steps = 0;

    Loop(const TrainConfig& c, std::size_t count) : cfg(c), n(count) {
        cfg.validate();
        if (n == 0) throw ConfigError("data.dir", "training set is empty");
        steps_per_epoch = static_cast<long>(n) / cfg.batch_size;
        if (steps_per_epoch == 0) throw ConfigError("train.batch_size", "larger than the training set");
        total_steps = steps_per_epoch * cfg.epochs;
    }
};

void finish_epoch(EpochRecord& rec, const SegNet& net, const Dataset* val, nn::ParamStore& best, double& best_dice,
                  RunRecord& run, const TrainConfig& cfg, const EpochCallback& on_epoch,
                  std::chrono::steady_clock::time_point start) {
    if (val != nullptr && val->size() > 0) rec.val_dice = mean_dice(net, *val);
    rec.wall_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    const double score = rec.val_dice.value_or(0.0);
    if (!cfg.select_best || !rec.val_dice || run.best_epoch == 0 || score > best_dice) {
        best_dice = score;
        best = net.params();
        run.best_epoch = rec.epoch;
    }
    run.epochs.push_back(rec);
    if (on_epoch) on_epoch(rec);
}

void apply_step(SegNet& net, Adam& opt, const TrainConfig& cfg, int used, double lr) {
    if (used == 0) return;
    net.params().scale_grad(1.0 / used);
    clip_grad_norm(net.params(), cfg.clip_norm);
    opt.step(net.params(), lr);
}

}  // namespace

TrainResult train_teacher(const TrainConfig& cfg, const NetworkConfig& net_cfg, const Dataset& train,
                          const Dataset* val, const EpochCallback& on_epoch) {
    Loop loop(cfg, train.size());
    if (!net_cfg.text_fusion) throw ConfigError("model.fusion_stages", "teacher network must fuse text");
    for (const auto& s : train.samples) {
        if (s.text.token_count() == 0) throw ConfigError("data.dir", "teacher stage requires text for " + s.id);
    }
    std::vector<LabelMap> labels;
    labels.reserve(train.size());
    for (const auto& s : train.samples) labels.push_back(partial_labels(s.masks));

    TrainResult result{SegNet::teacher(net_cfg, cfg.seed), {}};
    result.record.stage = Stage::teacher;
    SegNet& net = result.net;
    Adam opt(net.params());
    nn::ParamStore best = net.params();
    double best_dice = 0.0;
    std::mt19937_64 order_rng(cfg.seed ^ 0x6f72646572ULL);
    std::vector<std::size_t> order(train.size());
    std::iota(order.begin(), order.end(), 0);
    long step = 0;

    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        const auto start = std::chrono::steady_clock::now();
        std::shuffle(order.begin(), order.end(), order_rng);
        EpochRecord rec;
        rec.epoch = epoch;
        for (long b = 0; b < loop.steps_per_epoch; ++b) {
            net.params().zero_grad();
            int used = 0;
            for (int k = 0; k < cfg.batch_size; ++k) {
                const std::size_t i = order[static_cast<std::size_t>(b * cfg.batch_size + k)];
                const Sample& s = train.samples[i];
                if (count_set(s.masks.m_hc) == 0) {
                    ++rec.skipped_empty_hc;
                    continue;
                }
                ForwardCache cache;
                const StageBundle out = net.forward(s.image, &s.text, &cache);
                const LossValue l = pce_loss(out.probs, labels[i]);
                if (l.skipped) {
                    ++rec.skipped_empty_hc;
                    continue;
                }
                net.backward(cache, &s.text, l.grad, nullptr);
                rec.pce += l.value;
                ++used;
            }
            rec.lr = cosine_lr(step, loop.total_steps, cfg.lr_init);
            apply_step(net, opt, cfg, used, rec.lr);
            rec.samples += used;
            ++step;
        }
        if (rec.samples > 0) rec.pce /= rec.samples;
        rec.loss = rec.pce;
        finish_epoch(rec, net, val, best, best_dice, result.record, cfg, on_epoch, start);
    }
    net.params() = best;
    return result;
}

TrainResult train_student(const TrainConfig& cfg, const NetworkConfig& net_cfg, const SegNet& teacher,
                          const Dataset& train, const Dataset* val, const EpochCallback& on_epoch) {
    Loop loop(cfg, train.size());
    if (!teacher.initialized()) throw StateError("train_student: teacher is not initialized");
    const NetworkConfig& tcfg = teacher.config();
    if (!net_cfg.projection_widths || *net_cfg.projection_widths != tcfg.widths) {
        throw StructuralError("train_student: student projection widths do not match the teacher stage widths");
    }
    if (net_cfg.height != tcfg.height || net_cfg.width != tcfg.width) {
        throw StructuralError("train_student: student and teacher input sizes differ");
    }

    TrainResult result{SegNet::student(net_cfg, tcfg.widths, cfg.seed), {}};
    RunRecord& run = result.record;
    run.stage = Stage::student;
    run.teacher_hash_before = weights_hash(teacher.params());

    std::vector<StageBundle> targets;
    targets.reserve(train.size());
    for (const auto& s : train.samples) targets.push_back(teacher.forward(s.image, text_for(teacher, s)));

    SegNet& net = result.net;
    Adam opt(net.params());
    nn::ParamStore best = net.params();
    double best_dice = 0.0;
    std::mt19937_64 order_rng(cfg.seed ^ 0x6f72646572ULL);
    nn::Rng darm_rng(cfg.darm.seed ^ 0x6461726dULL);
    std::vector<std::size_t> order(train.size());
    std::iota(order.begin(), order.end(), 0);
    const int warmup = cfg.effective_warmup_epochs();
    const LossWeights& w = cfg.weights;
    long step = 0;

    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        const auto start = std::chrono::steady_clock::now();
        std::shuffle(order.begin(), order.end(), order_rng);
        EpochRecord rec;
        rec.epoch = epoch;
        const double ramp = warmup_factor(epoch, warmup);
        rec.cwc_weight = ramp * w.lambda_cwc_max;
        for (long b = 0; b < loop.steps_per_epoch; ++b) {
            net.params().zero_grad();
            int used = 0;
            for (int k = 0; k < cfg.batch_size; ++k) {
                const std::size_t i = order[static_cast<std::size_t>(b * cfg.batch_size + k)];
                const Sample& s = train.samples[i];
                const StageBundle& t = targets[i];
                ForwardCache cache;
                const StageBundle out = net.forward(s.image, nullptr, &cache);

                const AfcValue afc = afc_loss(out.features, t.features, w.beta, w.epsilon);
                const ConfidentRegions regions = confident_regions(t.probs, out.probs, cfg.tau_pos, cfg.tau_neg);
                const CwcValue cwc = cwc_loss(t.probs, out.probs, regions);
                rec.empty_pos += cwc.positive_empty;
                rec.empty_neg += cwc.negative_empty;

                const BinaryMask* target = &s.masks.m_bc;
                DarmResult darm;
                if (cfg.darm_enabled) {
                    darm = darm_mask(t.probs, out.probs, s.masks.m_bc, cfg.darm, darm_rng);
                    rec.darm_patches += static_cast<int>(darm.selected.size());
                    target = &darm.masked;
                }
                const LossValue ce = ce_loss(out.probs, *target);
                const double total = student_objective(ce.value, afc.value, cwc.value, w, ramp);

                Tensor dprobs = ce.grad;
                if (rec.cwc_weight > 0.0) dprobs.values += rec.cwc_weight * cwc.grad.values;
                if (w.lambda_afc > 0.0) {
                    std::vector<Tensor> dfeat = afc.grad;
                    for (auto& g : dfeat) g.values *= w.lambda_afc;
                    net.backward(cache, nullptr, dprobs, &dfeat);
                } else {
                    net.backward(cache, nullptr, dprobs, nullptr);
                }
                rec.loss += total;
                rec.ce += ce.value;
                rec.afc += afc.value;
                rec.cwc += cwc.value;
                ++used;
            }
            rec.lr = cosine_lr(step, loop.total_steps, cfg.lr_init);
            apply_step(net, opt, cfg, used, rec.lr);
            rec.samples += used;
            ++step;
        }
        if (rec.samples > 0) {
            rec.loss /= rec.samples;
            rec.ce /= rec.samples;
            rec.afc /= rec.samples;
            rec.cwc /= rec.samples;
        }
        finish_epoch(rec, net, val, best, best_dice, run, cfg, on_epoch, start);
    }
    net.params() = best;
    run.teacher_hash_after = weights_hash(teacher.params());
    if (run.teacher_hash_after != run.teacher_hash_before) throw StateError("train_student: teacher weights changed");
    return result;
}

double mean_dice(const SegNet& net, const Dataset& data) {
    if (data.size() == 0) throw InputError("mean_dice: empty dataset");
    double sum = 0.0;
    for (const auto& s : data.samples) {
        const BinaryMask pred = predict_mask(net.forward(s.image, text_for(net, s)));
        sum += dice(pred, s.gt.empty() ? s.masks.m_bc : s.gt);
    }
    return sum / static_cast<double>(data.size());
}

}  // namespace gazedistill
