#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "gazedistill/network.hpp"
#include "gazedistill/text_embed.hpp"
#include "testkit.hpp"

using namespace gazedistill;
using testkit::relative_error;

namespace {

NetworkConfig tiny_config() {
    NetworkConfig c;
    c.widths = {4, 4, 8, 8};
    c.height = 16;
    c.width = 16;
    c.heads = 2;
    c.text_width = 8;
    return c;
}

Image random_image(testkit::Rng& rng, int h, int w) {
    Image img(h, w);
    for (auto& v : img.data()) v = testkit::uniform(rng, 0.0, 1.0);
    return img;
}

TextEmbedding text_for(const std::string& s, int width) { return HashTextEncoder(width, 0).encode(s); }

}  // namespace

TEST_CASE("teacher forward is deterministic and probabilities are normalized") {
    testkit::Rng rng(1);
    auto cfg = tiny_config();
    auto a = SegNet::teacher(cfg, 7);
    auto b = SegNet::teacher(cfg, 7);
    CHECK(weights_hash(a.params()) == weights_hash(b.params()));
    auto img = random_image(rng, 16, 16);
    auto text = text_for("location: upper_left; boundary: clear", 8);
    auto x = forward_teacher(a, img, text);
    auto y = forward_teacher(b, img, text);
    CHECK(x.probs.values == y.probs.values);
    REQUIRE(x.features.size() == 4);
    for (std::size_t k = 0; k < 4; ++k) CHECK(x.features[k].values == y.features[k].values);
    for (int p = 0; p < x.probs.pixels(); ++p) CHECK(std::abs(x.probs.values.col(p).sum() - 1.0) <= 1e-5);
    CHECK(x.probs.channels == 2);
    CHECK(weights_hash(SegNet::teacher(cfg, 8).params()) != weights_hash(a.params()));
}

TEST_CASE("student forward is deterministic, normalized, and aligned with teacher stages") {
    testkit::Rng rng(2);
    auto cfg = tiny_config();
    auto teacher = SegNet::teacher(cfg, 1);
    NetworkConfig scfg = cfg;
    scfg.widths = {2, 2, 4, 4};
    auto s1 = SegNet::student(scfg, cfg.widths, 3);
    auto s2 = SegNet::student(scfg, cfg.widths, 3);
    auto img = random_image(rng, 16, 16);
    auto a = forward_student(s1, img);
    auto b = forward_student(s2, img);
    CHECK(a.probs.values == b.probs.values);
    for (int p = 0; p < a.probs.pixels(); ++p) CHECK(std::abs(a.probs.values.col(p).sum() - 1.0) <= 1e-5);
    auto t = forward_teacher(teacher, img, text_for("smooth", 8));
    REQUIRE(a.features.size() == t.features.size());
    for (std::size_t k = 0; k < 4; ++k) {
        CHECK(a.features[k].same_shape(t.features[k]));
        CHECK(a.features[k].height == 16 >> k);
        CHECK(a.features[k].channels == cfg.widths[k]);
    }
}

TEST_CASE("fusion at stage 1 only differs from fusion at all stages") {
    testkit::Rng rng(3);
    auto cfg = tiny_config();
    auto all = cfg;
    all.fusion_enabled = {true, true, true, true};
    auto one = cfg;
    one.fusion_enabled = {true, false, false, false};
    auto img = random_image(rng, 16, 16);
    auto text = text_for("lobulated irregular", 8);
    auto a = forward_teacher(SegNet::teacher(all, 5), img, text);
    auto b = forward_teacher(SegNet::teacher(one, 5), img, text);
    CHECK((a.probs.values - b.probs.values).cwiseAbs().maxCoeff() > 1e-9);
    CHECK(SegNet::teacher(one, 5).fusion_stages()[1] == std::nullopt);
    CHECK(SegNet::teacher(all, 5).fusion_stages()[3].has_value());
}

TEST_CASE("text changes the teacher output") {
    testkit::Rng rng(4);
    auto net = SegNet::teacher(tiny_config(), 2);
    auto img = random_image(rng, 16, 16);
    auto a = forward_teacher(net, img, text_for("upper_left clear", 8));
    auto b = forward_teacher(net, img, text_for("lower_right ambiguous spiculated", 8));
    CHECK((a.probs.values - b.probs.values).cwiseAbs().maxCoeff() > 1e-12);
}

TEST_CASE("zero fusion scale is identity modulo layer norm at every stage") {
    testkit::Rng rng(5);
    auto cfg = tiny_config();
    cfg.lambda_init = 0.0;
    auto net = SegNet::teacher(cfg, 9);
    auto text = text_for("boundary: clear; area: 12.5%", 8);
    for (int trial = 0; trial < 5; ++trial) {
        auto img = random_image(rng, 16, 16);
        ForwardCache cache;
        auto out = net.forward(img, &text, &cache);
        for (std::size_t k = 0; k < 4; ++k) {
            const auto& fp = *net.fusion_stages()[k];
            REQUIRE(cache.encoders[k].fused);
            const Eigen::MatrixXd expected = nn::row_layer_norm(
                flatten_positions(cache.encoders[k].raw), net.params()[fp.ln_gamma].value.row(0),
                net.params()[fp.ln_beta].value.row(0), kFusionNormEps, nullptr);
            CHECK(flatten_positions(out.features[k]) == expected);
        }
    }
}

TEST_CASE("network gradients match finite differences") {
    testkit::Rng rng(6);
    auto cfg = tiny_config();
    cfg.widths = {2, 2, 4, 4};
    cfg.text_width = 4;
    for (int trial = 0; trial < 20; ++trial) {
        const bool teacher = trial % 2 == 0;
        if (!teacher) cfg.projection_widths = std::array<int, kStageCount>{3, 3, 2, 2};
        SegNet net = teacher ? SegNet::teacher(cfg, static_cast<std::uint64_t>(trial))
                             : SegNet(cfg, static_cast<std::uint64_t>(trial));
        if (!teacher) cfg.projection_widths.reset();
        auto img = random_image(rng, 16, 16);
        TextEmbedding text{Eigen::MatrixXd::Random(3, 4)};
        const TextEmbedding* tp = teacher ? &text : nullptr;
        ForwardCache cache;
        auto out = net.forward(img, tp, &cache);
        auto rp = testkit::random_tensor(rng, 2, 16, 16);
        std::vector<nn::Tensor> rf;
        for (const auto& f : out.features) rf.push_back(testkit::random_tensor(rng, f.channels, f.height, f.width));
        auto readout = [&] {
            auto o = net.forward(img, tp);
            double s = (o.probs.values.array() * rp.values.array()).sum();
            for (std::size_t k = 0; k < o.features.size(); ++k) s += (o.features[k].values.array() * rf[k].values.array()).sum();
            return s;
        };
        net.params().zero_grad();
        net.backward(cache, tp, rp, &rf);
        // a random subset of scalars from every parameter
        std::vector<double*> picked;
        std::vector<double> analytic;
        for (auto& p : net.params().all()) {
            for (int n = 0; n < 2; ++n) {
                const auto r = static_cast<Eigen::Index>(testkit::uniform_int(rng, 0, static_cast<int>(p.value.rows()) - 1));
                const auto c = static_cast<Eigen::Index>(testkit::uniform_int(rng, 0, static_cast<int>(p.value.cols()) - 1));
                picked.push_back(&p.value(r, c));
                analytic.push_back(p.grad(r, c));
            }
        }
        const Eigen::VectorXd numeric = testkit::numeric_gradient(readout, picked, 1e-6);
        const Eigen::VectorXd a = Eigen::Map<Eigen::VectorXd>(analytic.data(), static_cast<Eigen::Index>(analytic.size()));
        CHECK(relative_error(a, numeric) < 1e-3);
    }
}

TEST_CASE("misuse raises state and structural errors") {
    testkit::Rng rng(7);
    SegNet empty;
    CHECK_THROWS_AS(empty.forward(random_image(rng, 16, 16), nullptr), StateError);
    auto teacher = SegNet::teacher(tiny_config(), 1);
    CHECK_THROWS_AS(teacher.forward(random_image(rng, 16, 16), nullptr), StateError);
    CHECK_THROWS_AS(forward_student(teacher, random_image(rng, 16, 16)), StateError);
    auto student = SegNet::student(tiny_config(), tiny_config().widths, 1);
    auto text = text_for("x", 8);
    CHECK_THROWS_AS(forward_teacher(student, random_image(rng, 16, 16), text), StateError);
    CHECK_THROWS_AS(student.forward(random_image(rng, 8, 16), nullptr), StructuralError);
    auto bad = tiny_config();
    bad.height = 12;
    CHECK_THROWS_AS(SegNet(bad, 0), StructuralError);
}

TEST_CASE("predict_mask takes the per-pixel argmax") {
    StageBundle b;
    b.probs = testkit::constant_probs(2, 2, 0.3);
    b.probs.values(1, 3) = 0.9;
    b.probs.values(0, 3) = 0.1;
    auto m = predict_mask(b);
    CHECK(count_set(m) == 1);
    CHECK(m(1, 1) == 1);
}

TEST_CASE("checkpoints round trip and reject a different network") {
    testkit::TempDir dir;
    testkit::Rng rng(8);
    auto cfg = tiny_config();
    auto net = SegNet::teacher(cfg, 11);
    for (auto& p : net.params().all()) p.value.array() += 0.01;
    save_checkpoint(dir / "ck", net, {"teacher", "", "", 11, 42, R"({"best_epoch":3})"});
    CheckpointManifest m;
    auto loaded = load_checkpoint(dir / "ck", net.config(), &m);
    CHECK(m.stage == "teacher");
    CHECK(m.step == 42);
    CHECK(m.seed == 11);
    CHECK(m.extra == R"({"best_epoch":3})");
    CHECK(weights_hash(loaded.params()) == weights_hash(net.params()));
    auto img = random_image(rng, 16, 16);
    auto text = text_for("smooth", 8);
    CHECK(forward_teacher(loaded, img, text).probs.values == forward_teacher(net, img, text).probs.values);

    const std::string h1 = checkpoint_hash(dir / "ck");
    save_checkpoint(dir / "ck2", net, {"teacher", "", "", 11, 42, R"({"best_epoch":3})"});
    CHECK(checkpoint_hash(dir / "ck2") == h1);

    auto other = net.config();
    other.heads = 4;
    CHECK_THROWS_AS(load_checkpoint(dir / "ck", other), StructuralError);
    CHECK_THROWS_AS(read_manifest(dir / "missing"), InputError);

    std::filesystem::remove(std::filesystem::path(dir / "ck") / "head.weight.bin");
    CHECK_THROWS_AS(load_checkpoint(dir / "ck", net.config()), StructuralError);
}

TEST_CASE("weights hash tracks every bit") {
    auto net = SegNet::teacher(tiny_config(), 1);
    const auto before = weights_hash(net.params());
    auto& v = net.params()[0].value(0, 0);
    v = std::nextafter(v, 1e9);
    CHECK(weights_hash(net.params()) != before);
}

TEST_CASE("describe distinguishes architectures") {
    auto a = tiny_config();
    a.text_fusion = true;
    auto b = a;
    b.variant = FusionVariant::concat;
    auto c = a;
    c.fusion_enabled[2] = false;
    CHECK(a.describe() != b.describe());
    CHECK(a.describe() != c.describe());
    auto d = tiny_config();
    d.text_fusion = true;
    CHECK(a.describe() == d.describe());
}
