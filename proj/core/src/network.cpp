#include "gazedistill/network.hpp"

#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "gazedistill/io.hpp"

namespace gazedistill {

using nn::Tensor;

std::string NetworkConfig::describe() const {
    std::ostringstream ss;
    ss.precision(17);
    ss << "widths=" << widths[0] << ',' << widths[1] << ',' << widths[2] << ',' << widths[3];
    ss << ";input=" << height << 'x' << width << ";classes=" << classes;
    if (text_fusion) {
        ss << ";fusion=";
        for (int k = 0; k < kStageCount; ++k) ss << (fusion_enabled[static_cast<std::size_t>(k)] ? '1' : '0');
        ss << ";heads=" << heads << ";variant=" << (variant == FusionVariant::sum ? "sum" : "concat");
        ss << ";lambda_init=" << lambda_init << ";text_width=" << text_width;
    }
    if (projection_widths) {
        const auto& p = *projection_widths;
        ss << ";projection=" << p[0] << ',' << p[1] << ',' << p[2] << ',' << p[3];
    }
    return ss.str();
}

ConvUnit ConvUnit::create(nn::ParamStore& store, const std::string& name, int in, int out, nn::Rng& rng) {
    return ConvUnit{nn::Conv2d::create(store, name + ".conv", in, out, 3, rng),
                    nn::InstanceNorm::create(store, name + ".norm", out)};
}

Tensor ConvUnit::forward(const nn::ParamStore& store, const Tensor& x, Cache& cache) const {
    cache.height = x.height;
    cache.width = x.width;
    Tensor y = conv.forward(store, x, cache.col);
    cache.pre_activation = norm.forward(store, y, cache.norm);
    return nn::leaky_relu(cache.pre_activation);
}

Tensor ConvUnit::backward(nn::ParamStore& store, const Cache& cache, const Tensor& dy) const {
    Tensor d = nn::leaky_relu_backward(cache.pre_activation, dy);
    d = norm.backward(store, cache.norm, d);
    return conv.backward(store, cache.col, d, cache.height, cache.width);
}

SegNet::SegNet(const NetworkConfig& config, std::uint64_t seed) : config_(config) {
    if (config.height % 8 != 0 || config.width % 8 != 0) {
        throw StructuralError("network input must be divisible by 8, got " + std::to_string(config.height) + "x" +
                              std::to_string(config.width));
    }
    nn::Rng rng(seed);
    const auto& w = config.widths;
    int in = 1;
    for (int k = 0; k < kStageCount; ++k) {
        const auto ks = static_cast<std::size_t>(k);
        const std::string name = "enc" + std::to_string(k + 1);
        enc_first_[ks] = ConvUnit::create(store_, name + ".a", in, w[ks], rng);
        enc_second_[ks] = ConvUnit::create(store_, name + ".b", w[ks], w[ks], rng);
        if (config.text_fusion && config.fusion_enabled[ks]) {
            const int h = config.height >> k;
            const int wd = config.width >> k;
            fusion_[ks] = FusionParams::create(store_, "fuse" + std::to_string(k + 1), w[ks], h, wd, config.text_width,
                                               config.heads, config.variant, config.lambda_init, rng);
        }
        if (config.projection_widths) {
            projection_[ks] = nn::Conv2d::create(store_, "proj" + std::to_string(k + 1), w[ks],
                                                 (*config.projection_widths)[ks], 1, rng);
        }
        in = w[ks];
    }
    for (int j = kStageCount - 2; j >= 0; --j) {
        const auto js = static_cast<std::size_t>(j);
        const std::string name = "dec" + std::to_string(j + 1);
        dec_reduce_[js] = nn::Conv2d::create(store_, name + ".reduce", w[js + 1], w[js], 1, rng);
        dec_unit_[js] = ConvUnit::create(store_, name + ".unit", 2 * w[js], w[js], rng);
    }
    head_ = nn::Conv2d::create(store_, "head", w[0], config.classes, 1, rng);
}

SegNet SegNet::teacher(NetworkConfig config, std::uint64_t seed) {
    config.text_fusion = true;
    config.projection_widths.reset();
    return SegNet(config, seed);
}

SegNet SegNet::student(NetworkConfig config, const std::array<int, kStageCount>& teacher_widths, std::uint64_t seed) {
    config.text_fusion = false;
    config.projection_widths = teacher_widths;
    return SegNet(config, seed);
}

StageBundle SegNet::forward(const Image& image, const TextEmbedding* text, ForwardCache* cache) const {
    if (!initialized()) throw StateError("network weights are not initialized");
    if (image.height() != config_.height || image.width() != config_.width) {
        throw StructuralError("network expects " + std::to_string(config_.height) + "x" + std::to_string(config_.width) +
                              " input, got " + std::to_string(image.height()) + "x" + std::to_string(image.width()));
    }
    if (config_.text_fusion && text == nullptr) throw StateError("teacher forward requires a text embedding");

    ForwardCache local;
    ForwardCache& c = cache != nullptr ? *cache : local;
    StageBundle out;
    out.features.resize(kStageCount);
    std::array<Tensor, kStageCount> skips;

    Tensor x = Tensor::from_image(image);
    for (int k = 0; k < kStageCount; ++k) {
        const auto ks = static_cast<std::size_t>(k);
        auto& ec = c.encoders[ks];
        ec.input = k == 0 ? std::move(x) : nn::max_pool2(skips[ks - 1], c.encoders[ks - 1].pool_argmax);
        Tensor a = enc_first_[ks].forward(store_, ec.input, ec.first);
        ec.raw = enc_second_[ks].forward(store_, a, ec.second);
        ec.fused = fusion_[ks].has_value();
        skips[ks] = ec.fused ? fuse_stage(ec.raw, *text, store_, *fusion_[ks], &ec.fusion) : ec.raw;
        if (config_.projection_widths) {
            out.features[ks] = projection_[ks].forward(store_, ec.raw, ec.projection_col);
        } else {
            out.features[ks] = skips[ks];
        }
    }

    Tensor deep = skips[kStageCount - 1];
    for (int j = kStageCount - 2; j >= 0; --j) {
        const auto js = static_cast<std::size_t>(j);
        auto& dc = c.decoders[js];
        Tensor up = nn::upsample2(deep);
        dc.reduce_pre = dec_reduce_[js].forward(store_, up, dc.reduce_col);
        Tensor cat = nn::concat_channels(skips[js], nn::leaky_relu(dc.reduce_pre));
        dc.skip_channels = skips[js].channels;
        deep = dec_unit_[js].forward(store_, cat, dc.unit);
    }
    Tensor logits = head_.forward(store_, deep, c.head_col);
    out.probs = nn::softmax_channels(logits);
    c.probs = out.probs;
    return out;
}

void SegNet::backward(const ForwardCache& c, const TextEmbedding* text, const Tensor& dprobs,
                      const std::vector<Tensor>* dfeatures) {
    nn::require_same_shape(dprobs, c.probs, "SegNet::backward probs gradient");
    const int h0 = config_.height;
    const int w0 = config_.width;
    Tensor dlogits = nn::softmax_channels_backward(c.probs, dprobs);
    Tensor ddeep = head_.backward(store_, c.head_col, dlogits, h0, w0);

    std::array<Tensor, kStageCount> dskips;
    for (int j = 0; j < kStageCount - 1; ++j) {
        const auto js = static_cast<std::size_t>(j);
        const auto& dc = c.decoders[js];
        Tensor dcat = dec_unit_[js].backward(store_, dc.unit, ddeep);
        Tensor dreduced;
        nn::split_channels(dcat, dc.skip_channels, dskips[js], dreduced);
        Tensor dpre = nn::leaky_relu_backward(dc.reduce_pre, dreduced);
        Tensor dup = dec_reduce_[js].backward(store_, dc.reduce_col, dpre, h0 >> j, w0 >> j);
        ddeep = nn::upsample2_backward(dup);
    }
    dskips[kStageCount - 1] = std::move(ddeep);

    for (int k = kStageCount - 1; k >= 0; --k) {
        const auto ks = static_cast<std::size_t>(k);
        const auto& ec = c.encoders[ks];
        const int hk = h0 >> k;
        const int wk = w0 >> k;
        Tensor dskip = std::move(dskips[ks]);
        if (dfeatures != nullptr && !config_.projection_widths) dskip.values += (*dfeatures)[ks].values;
        Tensor draw = ec.fused ? fuse_stage_backward(dskip, *text, store_, *fusion_[ks], ec.fusion, hk, wk) : dskip;
        if (dfeatures != nullptr && config_.projection_widths) {
            draw.values += projection_[ks].backward(store_, ec.projection_col, (*dfeatures)[ks], hk, wk).values;
        }
        Tensor da = enc_second_[ks].backward(store_, ec.second, draw);
        Tensor din = enc_first_[ks].backward(store_, ec.first, da);
        if (k > 0) {
            Tensor dprev = nn::max_pool2_backward(c.encoders[ks - 1].pool_argmax, din, h0 >> (k - 1), w0 >> (k - 1));
            dskips[ks - 1].values += dprev.values;
        }
    }
}

StageBundle forward_teacher(const SegNet& teacher, const Image& image, const TextEmbedding& text) {
    if (!teacher.config().text_fusion) throw StateError("forward_teacher called on a network without fusion");
    return teacher.forward(image, &text);
}

StageBundle forward_student(const SegNet& student, const Image& image) {
    if (student.config().text_fusion) throw StateError("forward_student called on a fusion network");
    return student.forward(image, nullptr);
}

BinaryMask predict_mask(const StageBundle& bundle) {
    const auto& p = bundle.probs;
    BinaryMask mask(p.height, p.width, 0);
    for (int i = 0; i < p.pixels(); ++i) {
        int best = 0;
        for (int cls = 1; cls < p.channels; ++cls) {
            if (p.values(cls, i) > p.values(best, i)) best = cls;
        }
        mask[static_cast<std::size_t>(i)] = best == 1 ? 1 : 0;
    }
    return mask;
}

// --- checkpoints -----------------------------------------------------------

namespace {

void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

std::uint32_t get_u32(const std::string& in, std::size_t at) {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(in[at + i])) << (8 * i);
    return v;
}

std::string encode_blob(const Eigen::MatrixXd& m) {
    std::string out;
    put_u32(out, static_cast<std::uint32_t>(m.rows()));
    put_u32(out, static_cast<std::uint32_t>(m.cols()));
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        for (Eigen::Index col = 0; col < m.cols(); ++col) {
            std::uint64_t bits = 0;
            const double v = m(r, col);
            std::memcpy(&bits, &v, sizeof(bits));
            for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xFF));
        }
    }
    return out;
}

Eigen::MatrixXd decode_blob(const std::string& in, const std::string& name) {
    if (in.size() < 8) throw StructuralError("checkpoint blob " + name + " is truncated");
    const auto rows = get_u32(in, 0);
    const auto cols = get_u32(in, 4);
    if (in.size() != 8 + 8ULL * rows * cols) throw StructuralError("checkpoint blob " + name + " has the wrong size");
    Eigen::MatrixXd m(rows, cols);
    std::size_t at = 8;
    for (std::uint32_t r = 0; r < rows; ++r) {
        for (std::uint32_t col = 0; col < cols; ++col) {
            std::uint64_t bits = 0;
            for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[at + i])) << (8 * i);
            at += 8;
            double v = 0.0;
            std::memcpy(&v, &bits, sizeof(v));
            m(r, col) = v;
        }
    }
    return m;
}

std::string manifest_json(const CheckpointManifest& m, const nn::ParamStore& store) {
    nlohmann::ordered_json doc;
    doc["stage"] = m.stage;
    doc["config_hash"] = m.config_hash;
    doc["network"] = m.network;
    doc["seed"] = m.seed;
    doc["step"] = m.step;
    nlohmann::ordered_json names = nlohmann::ordered_json::array();
    for (const auto& p : store.all()) names.push_back(p.name);
    doc["params"] = names;
    if (!m.extra.empty()) doc["extra"] = nlohmann::ordered_json::parse(m.extra);
    return doc.dump(2) + "\n";
}

}  // namespace

void save_checkpoint(const std::string& dir, const SegNet& net, CheckpointManifest manifest) {
    if (!net.initialized()) throw StateError("cannot checkpoint an uninitialized network");
    std::filesystem::create_directories(dir);
    manifest.network = net.config().describe();
    manifest.config_hash = sha256_hex(manifest.network);
    write_file_text((std::filesystem::path(dir) / "manifest.json").string(), manifest_json(manifest, net.params()));
    for (const auto& p : net.params().all()) {
        write_file_text((std::filesystem::path(dir) / (p.name + ".bin")).string(), encode_blob(p.value));
    }
}

CheckpointManifest read_manifest(const std::string& dir) {
    const auto path = std::filesystem::path(dir) / "manifest.json";
    if (!std::filesystem::exists(path)) throw InputError("no checkpoint manifest in " + dir);
    const auto doc = nlohmann::json::parse(read_file_text(path.string()));
    CheckpointManifest m;
    m.stage = doc.at("stage").get<std::string>();
    m.config_hash = doc.at("config_hash").get<std::string>();
    m.network = doc.at("network").get<std::string>();
    m.seed = doc.at("seed").get<std::uint64_t>();
    m.step = doc.at("step").get<std::uint64_t>();
    if (doc.contains("extra")) m.extra = doc["extra"].dump();
    return m;
}

SegNet load_checkpoint(const std::string& dir, const NetworkConfig& config, CheckpointManifest* manifest) {
    CheckpointManifest m = read_manifest(dir);
    const std::string expected = sha256_hex(config.describe());
    if (m.config_hash != expected) {
        throw StructuralError("checkpoint " + dir + " was written for network '" + m.network +
                              "', live config is '" + config.describe() + "'");
    }
    SegNet net(config, m.seed);
    for (auto& p : net.params().all()) {
        const auto path = std::filesystem::path(dir) / (p.name + ".bin");
        if (!std::filesystem::exists(path)) throw StructuralError("checkpoint is missing parameter " + p.name);
        Eigen::MatrixXd v = decode_blob(read_file_text(path.string()), p.name);
        if (v.rows() != p.value.rows() || v.cols() != p.value.cols()) {
            throw StructuralError("checkpoint parameter " + p.name + " has shape " + std::to_string(v.rows()) + "x" +
                                  std::to_string(v.cols()));
        }
        p.value = std::move(v);
    }
    if (manifest != nullptr) *manifest = m;
    return net;
}

std::string checkpoint_hash(const std::string& dir) {
    const auto doc = nlohmann::json::parse(read_file_text((std::filesystem::path(dir) / "manifest.json").string()));
    std::string all = read_file_text((std::filesystem::path(dir) / "manifest.json").string());
    for (const auto& name : doc.at("params")) {
        all += read_file_text((std::filesystem::path(dir) / (name.get<std::string>() + ".bin")).string());
    }
    return sha256_hex(all);
}

std::string weights_hash(const nn::ParamStore& store) {
    std::string all;
    for (const auto& p : store.all()) {
        all += p.name;
        all += encode_blob(p.value);
    }
    return sha256_hex(all);
}

}  // namespace gazedistill
