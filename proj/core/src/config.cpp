#include "gazedistill/config.hpp"

#include <charconv>
#include <cmath>
#include <sstream>

#include "gazedistill/io.hpp"

namespace gazedistill {

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream in(s);
    std::string item;
    while (std::getline(in, item, ',')) {
        item = trim(item);
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

}  // namespace

const std::map<std::string, std::string>& Config::schema() {
    static const std::map<std::string, std::string> keys = {
        {"scene.count", "256"},
        {"scene.image_side", "64"},
        {"scene.radius_min", "7"},
        {"scene.radius_max", "14"},
        {"scene.texture_noise", "0.08"},
        {"scene.gaze_points", "40"},
        {"scene.gaze_jitter_px", "3"},
        {"scene.distractor_rate", "0.2"},
        {"scene.mimic_count", "0"},
        {"scene.mimic_radius_min", "3"},
        {"scene.mimic_radius_max", "5"},
        {"scene.mimic_level", "0.6"},
        {"scene.mimic_attention", "0.5"},
        {"scene.mimic_fixation_share", "0"},
        {"scene.seed", "0"},
        {"masks.sigma_px", "0"},
        {"masks.tau_hc", "0.7"},
        {"masks.tau_bc", "0.3"},
        {"masks.min_component_px", "16"},
        {"text.backend", "deterministic_test"},
        {"text.width", "768"},
        {"text.seed", "0"},
        {"text.model_name", "roberta-base"},
        {"text.endpoint", ""},
        {"text.allow_fallback", "false"},
        {"provider.mode", "replay"},
        {"provider.fixtures", ""},
        {"provider.endpoint", ""},
        {"provider.model", ""},
        {"provider.credential_env", "GAZEDISTILL_PROVIDER_KEY"},
        {"provider.timeout_s", "60"},
        {"provider.max_in_flight", "4"},
        {"provider.id", "live"},
        {"model.teacher_widths", "16,32,64,128"},
        {"model.student_widths", "8,16,32,64"},
        {"model.heads", "4"},
        {"model.fusion_stages", "1,1,1,1"},
        {"model.fusion_variant", "sum"},
        {"model.lambda_init", "0.1"},
        {"train.epochs", "30"},
        {"train.batch_size", "8"},
        {"train.lr_init", "0.01"},
        {"train.seed", "0"},
        {"train.warmup_epochs", "-1"},
        {"train.clip_norm", "5"},
        {"train.val_fraction", "0.2"},
        {"train.select_best", "true"},
        {"loss.lambda_afc", "0.1"},
        {"loss.lambda_cwc", "1.0"},
        {"loss.beta", "1.0"},
        {"loss.epsilon", "1e-6"},
        {"loss.tau_pos", "0.8"},
        {"loss.tau_neg", "0.2"},
        {"darm.enabled", "true"},
        {"darm.tau_dis", "0.5"},
        {"darm.patch", "4"},
        {"darm.rate", "0.5"},
        {"darm.seed", "0"},
        {"prompt.variant", "structured"},
        {"data.dir", ""},
        {"data.test_dir", ""},
        {"data.test_fraction", "0.25"},
        {"masks.dir", ""},
        {"teacher.checkpoint", ""},
        {"eval.checkpoint", ""},
        {"eval.pred_dir", ""},
        {"eval.gt_dir", ""},
        {"run.root", "runs"},
        {"ablate.seeds", "0"},
    };
    return keys;
}

Config Config::defaults() {
    Config c;
    c.values_ = schema();
    return c;
}

Config Config::parse(const std::string& text) {
    Config c = defaults();
    std::stringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
        const std::string t = trim(line);
        if (t.empty() || t[0] == '#') continue;
        const auto eq = t.find('=');
        if (eq == std::string::npos) throw ConfigError(t, "expected key = value");
        c.set(trim(t.substr(0, eq)), trim(t.substr(eq + 1)));
    }
    return c;
}

Config Config::load_file(const std::string& path) {
    std::string text;
    try {
        text = read_file_text(path);
    } catch (const Error& e) {
        throw ConfigError("config", std::string("cannot read config file: ") + e.what());
    }
    return parse(text);
}

void Config::set(const std::string& key, const std::string& value) {
    if (!schema().count(key)) throw ConfigError(key, "unknown configuration key");
    values_[key] = value;
}

void Config::apply_override(const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos) throw ConfigError(assignment, "override must have the form key=value");
    set(trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)));
}

const std::string& Config::get(const std::string& key) const {
    const auto it = values_.find(key);
    if (it == values_.end()) throw ConfigError(key, "unknown configuration key");
    return it->second;
}

long long Config::get_int(const std::string& key) const {
    const std::string& v = get(key);
    long long out = 0;
    const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc{} || p != v.data() + v.size()) throw ConfigError(key, "expected an integer, got '" + v + "'");
    return out;
}

std::uint64_t Config::get_uint(const std::string& key) const {
    const std::string& v = get(key);
    std::uint64_t out = 0;
    const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc{} || p != v.data() + v.size()) {
        throw ConfigError(key, "expected a nonnegative integer, got '" + v + "'");
    }
    return out;
}

double Config::get_double(const std::string& key) const {
    const std::string& v = get(key);
    double out = 0.0;
    const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc{} || p != v.data() + v.size() || !std::isfinite(out)) {
        throw ConfigError(key, "expected a number, got '" + v + "'");
    }
    return out;
}

bool Config::get_bool(const std::string& key) const {
    const std::string& v = get(key);
    if (v == "true" || v == "1" || v == "on" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "off" || v == "no") return false;
    throw ConfigError(key, "expected a boolean, got '" + v + "'");
}

std::vector<int> Config::get_int_list(const std::string& key) const {
    std::vector<int> out;
    for (const auto& item : split_list(get(key))) {
        int x = 0;
        const auto [p, ec] = std::from_chars(item.data(), item.data() + item.size(), x);
        if (ec != std::errc{} || p != item.data() + item.size()) {
            throw ConfigError(key, "expected a comma-separated integer list, got '" + get(key) + "'");
        }
        out.push_back(x);
    }
    return out;
}

std::vector<double> Config::get_double_list(const std::string& key) const {
    std::vector<double> out;
    for (const auto& item : split_list(get(key))) {
        double x = 0.0;
        const auto [p, ec] = std::from_chars(item.data(), item.data() + item.size(), x);
        if (ec != std::errc{} || p != item.data() + item.size()) {
            throw ConfigError(key, "expected a comma-separated number list, got '" + get(key) + "'");
        }
        out.push_back(x);
    }
    return out;
}

std::string Config::dump() const {
    std::string out;
    for (const auto& [k, v] : values_) out += k + " = " + v + "\n";
    return out;
}

std::string Config::hash() const { return sha256_hex(dump()); }

}  // namespace gazedistill
