#include "gazedistill_cli/cli.hpp"

#include <algorithm>
#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "gazedistill/config.hpp"
#include "gazedistill/gaze_masks.hpp"
#include "gazedistill/io.hpp"
#include "gazedistill/metrics.hpp"
#include "gazedistill/pipeline.hpp"
#include "gazedistill/report.hpp"
#include "gazedistill/synthkit.hpp"

namespace gazedistill::cli {

namespace fs = std::filesystem;
using nlohmann::ordered_json;

namespace {

/// Mask pair with different shapes handed to `eval`.
class ShapeMismatch : public Error {
public:
    ShapeMismatch(std::string a, std::string b) : Error("mask shapes differ"), a_(std::move(a)), b_(std::move(b)) {}
    const std::string& first() const noexcept { return a_; }
    const std::string& second() const noexcept { return b_; }

private:
    std::string a_;
    std::string b_;
};

struct Invocation {
    std::string config_path;
    std::vector<std::string> overrides;
    std::optional<std::uint64_t> seed;
    std::string axis;
    std::string validate_file;
};

Config build_config(const Invocation& inv) {
    Config c = inv.config_path.empty() ? Config::defaults() : Config::load_file(inv.config_path);
    for (const auto& o : inv.overrides) c.apply_override(o);
    if (inv.seed) {
        for (const char* k : {"scene.seed", "train.seed", "darm.seed"}) c.set(k, std::to_string(*inv.seed));
    }
    return c;
}

std::string make_run_dir(const Config& c, const std::string& command) {
    const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    std::ostringstream name;
    name << std::put_time(&tm, "%Y%m%d-%H%M%S") << "-" << command << "-" << c.hash().substr(0, 8);
    const fs::path root(c.get("run.root"));
    fs::path dir = root / name.str();
    for (int i = 1; fs::exists(dir); ++i) dir = root / (name.str() + "-" + std::to_string(i));
    fs::create_directories(dir);
    write_file_text((dir / "config.resolved").string(), c.dump());
    return dir.string();
}

void emit(std::ostream& out, const ordered_json& j) { out << j.dump() << "\n"; }

int cmd_synth(const Config& c, std::ostream& out) {
    const Settings s = resolve_settings(c);
    const std::string run = make_run_dir(c, "synth");
    const std::string data = (fs::path(run) / "dataset").string();
    const DatasetSummary summary = write_dataset(data, s.scene, s.scene_count);
    emit(out, {{"command", "synth"},
               {"run_dir", run},
               {"dataset", data},
               {"count", summary.count},
               {"manifest_sha256", summary.manifest_sha256}});
    return kOk;
}

int cmd_masks(const Config& c, std::ostream& out) {
    const Settings s = resolve_settings(c);
    if (s.data_dir.empty()) throw ConfigError("data.dir", "no dataset directory configured");
    const fs::path gaze_dir = fs::path(s.data_dir) / "gaze";
    if (!fs::is_directory(gaze_dir)) throw ConfigError("data.dir", "no gaze/ directory under " + s.data_dir);
    const std::string run = make_run_dir(c, "masks");
    const fs::path root = fs::path(run) / "masks";
    for (const char* sub : {"hc", "bc", "density"}) fs::create_directories(root / sub);
    std::vector<fs::path> logs;
    for (const auto& e : fs::directory_iterator(gaze_dir)) {
        if (e.path().extension() == ".csv" || e.path().extension() == ".json") logs.push_back(e.path());
    }
    std::sort(logs.begin(), logs.end());
    std::size_t clamped = 0;
    std::size_t empty_hc = 0;
    for (const auto& p : logs) {
        const std::string id = p.stem().string();
        const fs::path image = fs::path(s.data_dir) / "images" / (id + ".png");
        int h = s.scene.image_side;
        int w = s.scene.image_side;
        if (fs::exists(image)) {
            const Image img = read_image_png(image.string());
            h = img.height();
            w = img.width();
        }
        const GazeLog log = load_gaze_file(p.string());
        clamped += log.clamp_warnings;
        const double sigma = s.data.masks.sigma_px > 0.0 ? s.data.masks.sigma_px : default_sigma_px(h, w);
        const DensityMap dm = density_map(log.records, h, w, sigma);
        const MaskPair m = threshold_masks(dm, s.data.masks.tau_hc, s.data.masks.tau_bc, s.data.masks.min_component_px);
        empty_hc += count_set(m.m_hc) == 0;
        write_mask_png((root / "hc" / (id + ".png")).string(), m.m_hc);
        write_mask_png((root / "bc" / (id + ".png")).string(), m.m_bc);
        write_image_png((root / "density" / (id + ".png")).string(), dm.values);
    }
    emit(out, {{"command", "masks"},
               {"run_dir", run},
               {"masks_dir", root.string()},
               {"count", logs.size()},
               {"clamp_warnings", clamped},
               {"empty_hc", empty_hc}});
    return kOk;
}

ordered_json report_error_json(const ReportError& e) {
    static const char* kinds[] = {"parse", "schema", "vocabulary", "range"};
    return {{"error", "report"},
            {"kind", kinds[static_cast<int>(e.kind())]},
            {"field", e.field()},
            {"message", e.what()}};
}

int cmd_report(const Config& c, const Invocation& inv, std::ostream& out) {
    if (!inv.validate_file.empty()) {
        const std::string raw = read_file_text(inv.validate_file);
        try {
            const LesionReport r = validate_report(raw);
            emit(out, {{"command", "report"}, {"valid", true}, {"report", ordered_json::parse(canonical_json(r))}});
            return kOk;
        } catch (const ReportError& e) {
            ordered_json j = report_error_json(e);
            j["command"] = "report";
            j["valid"] = false;
            emit(out, j);
            return kFailure;
        }
    }
    const Settings s = resolve_settings(c);
    if (s.data_dir.empty()) throw ConfigError("data.dir", "no dataset directory configured");
    const fs::path images = fs::path(s.data_dir) / "images";
    if (!fs::is_directory(images)) throw ConfigError("data.dir", "no images/ directory under " + s.data_dir);
    auto provider = make_provider(s.provider);
    const std::string run = make_run_dir(c, "report");
    const fs::path root = fs::path(run) / "reports";
    fs::create_directories(root);
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(images)) {
        if (e.path().extension() == ".png") files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
    std::size_t accepted = 0;
    std::ofstream rejections(root / "rejections.jsonl");
    for (const auto& f : files) {
        const auto bytes = read_file_bytes(f.string());
        const ProviderResponse resp = provider->request(bytes, build_prompt());
        try {
            const LesionReport r = validate_report(resp.raw_text);
            write_file_text((root / (f.stem().string() + ".json")).string(), canonical_json(r) + "\n");
            ++accepted;
        } catch (const ReportError& e) {
            ordered_json j = report_error_json(e);
            j["id"] = f.stem().string();
            j["provider"] = resp.provider_id;
            rejections << j.dump() << "\n";
        }
    }
    emit(out, {{"command", "report"},
               {"run_dir", run},
               {"reports_dir", root.string()},
               {"accepted", accepted},
               {"rejected", files.size() - accepted}});
    return kOk;
}

EpochCallback progress(std::ostream& err, const std::string& stage) {
    return [&err, stage](const EpochRecord& e) {
        err << stage << " epoch " << e.epoch << " loss " << e.loss;
        if (e.val_dice) err << " val_dice " << *e.val_dice;
        err << " (" << std::fixed << std::setprecision(1) << e.wall_s << "s)" << std::defaultfloat
            << std::setprecision(6) << "\n";
    };
}

ordered_json stage_json(const std::string& command, const std::string& run, const StageRun& r) {
    ordered_json losses = ordered_json::array();
    for (const auto& e : r.result.record.epochs) losses.push_back(e.loss);
    return {{"command", command},
            {"run_dir", run},
            {"checkpoint", r.checkpoint_dir},
            {"checkpoint_sha256", r.checkpoint_hash},
            {"best_epoch", r.result.record.best_epoch},
            {"epoch_losses", losses}};
}

int cmd_train_teacher(const Config& c, std::ostream& out, std::ostream& err) {
    const Settings s = resolve_settings(c);
    const PreparedData data = prepare_data(s);
    const std::string run = make_run_dir(c, "train-teacher");
    const StageRun r = run_teacher_stage(s, data, (fs::path(run) / "teacher").string(), progress(err, "teacher"));
    emit(out, stage_json("train-teacher", run, r));
    return kOk;
}

int cmd_train_student(const Config& c, std::ostream& out, std::ostream& err) {
    const Settings s = resolve_settings(c);
    const SegNet teacher = load_teacher(s, s.teacher_checkpoint);
    const PreparedData data = prepare_data(s);
    const std::string run = make_run_dir(c, "train-student");
    const StageRun r =
        run_student_stage(s, data, teacher, (fs::path(run) / "student").string(), progress(err, "student"));
    emit(out, stage_json("train-student", run, r));
    return kOk;
}

std::vector<std::string> png_names(const fs::path& dir) {
    std::vector<std::string> out;
    for (const auto& e : fs::directory_iterator(dir)) {
        if (e.path().extension() == ".png") out.push_back(e.path().filename().string());
    }
    std::sort(out.begin(), out.end());
    return out;
}

int cmd_eval(const Config& c, std::ostream& out) {
    const Settings s = resolve_settings(c);
    const std::string pred_dir = c.get("eval.pred_dir");
    const std::string gt_dir = c.get("eval.gt_dir");
    const std::string ckpt = c.get("eval.checkpoint");
    std::vector<std::string> ids;
    std::vector<MaskScores> scores;
    std::string run;
    if (!pred_dir.empty() || !gt_dir.empty()) {
        if (pred_dir.empty()) throw ConfigError("eval.pred_dir", "needed together with eval.gt_dir");
        if (gt_dir.empty()) throw ConfigError("eval.gt_dir", "needed together with eval.pred_dir");
        if (!fs::is_directory(pred_dir)) throw ConfigError("eval.pred_dir", "not a directory: " + pred_dir);
        if (!fs::is_directory(gt_dir)) throw ConfigError("eval.gt_dir", "not a directory: " + gt_dir);
        for (const auto& name : png_names(gt_dir)) {
            const fs::path p = fs::path(pred_dir) / name;
            if (!fs::exists(p)) throw ConfigError("eval.pred_dir", "missing prediction " + p.string());
            const fs::path g = fs::path(gt_dir) / name;
            const BinaryMask pm = read_mask_png(p.string());
            const BinaryMask gm = read_mask_png(g.string());
            if (!pm.same_shape(gm)) throw ShapeMismatch(p.string(), g.string());
            ids.push_back(fs::path(name).stem().string());
            scores.push_back(score_masks(pm, gm));
        }
        if (ids.empty()) throw ConfigError("eval.gt_dir", "no masks in " + gt_dir);
        run = make_run_dir(c, "eval");
    } else {
        if (ckpt.empty()) throw ConfigError("eval.checkpoint", "set eval.checkpoint or eval.pred_dir/eval.gt_dir");
        if (s.data_dir.empty()) throw ConfigError("data.dir", "no dataset directory configured");
        const CheckpointManifest m = read_manifest(ckpt);
        SegNet net;
        if (m.stage == "teacher") {
            net = load_checkpoint(ckpt, s.teacher_net);
        } else {
            net = load_checkpoint(ckpt, s.student_net);
        }
        Dataset data = load_dataset(s.data_dir, s.data);
        if (net.config().text_fusion) attach_text(data, *make_text_encoder(s.text), s.prompt, s.text.seed);
        run = make_run_dir(c, "eval");
        const fs::path preds = fs::path(run) / "predictions";
        fs::create_directories(preds);
        for (const auto& sample : data.samples) {
            if (sample.gt.empty()) throw ConfigError("data.dir", "no ground-truth mask for " + sample.id);
            const BinaryMask pm = predict_mask(net.forward(sample.image, net.config().text_fusion ? &sample.text : nullptr));
            write_mask_png((preds / (sample.id + ".png")).string(), pm);
            ids.push_back(sample.id);
            scores.push_back(score_masks(pm, sample.gt));
        }
    }
    const std::string report = evaluation_report_json(ids, scores);
    write_file_text((fs::path(run) / "evaluation.json").string(), report);
    ordered_json j = ordered_json::parse(report);
    emit(out, {{"command", "eval"}, {"run_dir", run}, {"count", ids.size()}, {"aggregate", j["aggregate"]}});
    return kOk;
}

int cmd_ablate(const Config& c, const Invocation& inv, std::ostream& out, std::ostream& err) {
    if (inv.axis.empty()) throw ConfigError("axis", "ablate needs --axis");
    ablation_variants(inv.axis);
    std::vector<std::uint64_t> seeds;
    for (int v : c.get_int_list("ablate.seeds")) {
        if (v < 0) throw ConfigError("ablate.seeds", "seeds must be nonnegative");
        seeds.push_back(static_cast<std::uint64_t>(v));
    }
    resolve_settings(c);
    const std::string run = make_run_dir(c, "ablate");
    const AblationReport r = run_ablation(c, inv.axis, seeds, run, [&err](const std::string& m) { err << m << "\n"; });
    ordered_json summary = ordered_json::parse(r.to_json())["summary"];
    emit(out, {{"command", "ablate"},
               {"run_dir", run},
               {"axis", inv.axis},
               {"report", (fs::path(run) / "ablation.json").string()},
               {"summary", summary}});
    return kOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"gaze and report supervised teacher-student segmentation", "gazedistill"};
    app.set_help_all_flag("--help-all");
    Invocation inv;
    app.add_option("--config", inv.config_path, "flat key = value configuration file");
    app.add_option("--set", inv.overrides, "override one key (key=value); repeatable")->take_all();
    app.add_option("--seed", inv.seed, "sets scene.seed, train.seed and darm.seed");
    auto* synth = app.add_subcommand("synth", "write a synthetic dataset");
    auto* masks = app.add_subcommand("masks", "build gaze pseudo-masks for a dataset");
    auto* report = app.add_subcommand("report", "fetch and validate lesion reports");
    report->add_option("--validate", inv.validate_file, "validate one raw provider response file");
    auto* teacher = app.add_subcommand("train-teacher", "train the text-fused teacher");
    auto* student = app.add_subcommand("train-student", "train the student from a frozen teacher");
    auto* eval = app.add_subcommand("eval", "score predicted masks");
    auto* ablate = app.add_subcommand("ablate", "run one ablation axis");
    ablate->add_option("--axis", inv.axis, "ablation axis")->required()->check(CLI::IsMember(ablation_axes()));
    for (auto* sub : {synth, masks, report, teacher, student, eval, ablate}) {
        sub->add_option("--set", inv.overrides, "override one key (key=value); repeatable")->take_all();
        sub->add_option("--config", inv.config_path, "configuration file");
        sub->add_option("--seed", inv.seed, "sets scene.seed, train.seed and darm.seed");
    }
    app.require_subcommand(1, 1);

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return kOk;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return kOk;
    } catch (const CLI::ParseError& e) {
        emit(err, {{"error", "usage"}, {"message", e.what()}});
        err << app.help();
        return kUsage;
    }

    try {
        const Config c = build_config(inv);
        if (synth->parsed()) return cmd_synth(c, out);
        if (masks->parsed()) return cmd_masks(c, out);
        if (report->parsed()) return cmd_report(c, inv, out);
        if (teacher->parsed()) return cmd_train_teacher(c, out, err);
        if (student->parsed()) return cmd_train_student(c, out, err);
        if (eval->parsed()) return cmd_eval(c, out);
        if (ablate->parsed()) return cmd_ablate(c, inv, out, err);
        emit(err, {{"error", "usage"}, {"message", "no command"}});
        return kUsage;
    } catch (const ConfigError& e) {
        emit(err, {{"error", "config"}, {"key", e.key()}, {"message", e.what()}});
        return kConfig;
    } catch (const ShapeMismatch& e) {
        emit(err, {{"error", "shape_mismatch"},
                   {"key", "eval"},
                   {"files", {e.first(), e.second()}},
                   {"message", std::string(e.what()) + ": " + e.first() + " vs " + e.second()}});
        return kConfig;
    } catch (const std::exception& e) {
        emit(err, {{"error", "runtime"}, {"message", e.what()}});
        return kFailure;
    }
}

}  // namespace gazedistill::cli
