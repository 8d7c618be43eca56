#include <doctest.h>

#include <cmath>

#include "gazedistill/fusion.hpp"
#include "testkit.hpp"

using namespace gazedistill;
using testkit::relative_error;

namespace {

struct Instance {
    nn::ParamStore store;
    FusionParams params;
    nn::Tensor x;
    TextEmbedding text;
};

Instance make_instance(testkit::Rng& rng, FusionVariant variant, int tokens = -1) {
    Instance in;
    const int heads = testkit::uniform_int(rng, 1, 3);
    const int channels = heads * testkit::uniform_int(rng, 1, 3);
    const int h = testkit::uniform_int(rng, 1, 4);
    const int w = testkit::uniform_int(rng, 1, 4);
    const int text_width = testkit::uniform_int(rng, 2, 6);
    const int l = tokens > 0 ? tokens : testkit::uniform_int(rng, 1, 5);
    in.params = FusionParams::create(in.store, "f", channels, h, w, text_width, heads, variant,
                                     testkit::uniform(rng, 0.2, 1.5), rng);
    for (auto& p : in.store.all()) p.value += 0.3 * Eigen::MatrixXd::Random(p.value.rows(), p.value.cols());
    in.x = testkit::random_tensor(rng, channels, h, w);
    in.text.vectors = Eigen::MatrixXd::Random(l, text_width);
    return in;
}

}  // namespace

TEST_CASE("attention rows sum to one for every head") {
    testkit::Rng rng(1);
    for (int trial = 0; trial < 200; ++trial) {
        auto in = make_instance(rng, trial % 2 == 0 ? FusionVariant::sum : FusionVariant::concat);
        in.x.values *= 10.0;
        FusionCache cache;
        fuse_stage(in.x, in.text, in.store, in.params, &cache);
        REQUIRE(cache.attention.size() == static_cast<std::size_t>(in.params.heads));
        for (const auto& a : cache.attention) {
            CHECK(a.rows() == in.x.pixels());
            CHECK(a.cols() == in.text.token_count());
            for (Eigen::Index r = 0; r < a.rows(); ++r) {
                CHECK(std::abs(a.row(r).sum() - 1.0) <= 1e-6);
                CHECK(a.row(r).minCoeff() >= 0.0);
            }
        }
    }
}

TEST_CASE("zero fusion scale returns the layer-normalized input exactly") {
    testkit::Rng rng(2);
    for (int trial = 0; trial < 100; ++trial) {
        auto in = make_instance(rng, FusionVariant::sum);
        in.store[in.params.scale].value(0, 0) = 0.0;
        auto y = fuse_stage(in.x, in.text, in.store, in.params);
        const Eigen::MatrixXd expected =
            nn::row_layer_norm(flatten_positions(in.x), in.store[in.params.ln_gamma].value.row(0),
                               in.store[in.params.ln_beta].value.row(0), kFusionNormEps, nullptr);
        CHECK(flatten_positions(y) == expected);
    }
}

TEST_CASE("zero fusion scale with the initial concat projection is the same identity") {
    testkit::Rng rng(3);
    for (int trial = 0; trial < 50; ++trial) {
        nn::ParamStore store;
        const int c = 4;
        auto p = FusionParams::create(store, "f", c, 3, 2, 5, 2, FusionVariant::concat, 0.0, rng);
        auto x = testkit::random_tensor(rng, c, 3, 2);
        TextEmbedding t{Eigen::MatrixXd::Random(3, 5)};
        auto y = fuse_stage(x, t, store, p);
        const Eigen::MatrixXd expected = nn::row_layer_norm(flatten_positions(x), Eigen::RowVectorXd::Ones(c),
                                                            Eigen::RowVectorXd::Zero(c), kFusionNormEps, nullptr);
        CHECK(flatten_positions(y) == expected);
    }
}

TEST_CASE("a single text token collapses attention onto its value row") {
    testkit::Rng rng(4);
    for (int trial = 0; trial < 100; ++trial) {
        auto in = make_instance(rng, FusionVariant::sum, 1);
        const Eigen::RowVectorXd value_row = in.text.vectors.row(0) * in.store[in.params.value_proj].value.transpose();
        FusionCache cache;
        fuse_stage(in.x, in.text, in.store, in.params, &cache);
        for (Eigen::Index r = 0; r < cache.heads_concat.rows(); ++r)
            CHECK((cache.heads_concat.row(r) - value_row).cwiseAbs().maxCoeff() <= 1e-6);

        auto other = in.x;
        other.values = 25.0 * Eigen::MatrixXd::Random(other.values.rows(), other.values.cols());
        FusionCache cache2;
        fuse_stage(other, in.text, in.store, in.params, &cache2);
        CHECK((cache2.heads_concat - cache.heads_concat).cwiseAbs().maxCoeff() <= 1e-6);
    }
}

TEST_CASE("fuse_stage matches a direct evaluation") {
    testkit::Rng rng(5);
    for (int trial = 0; trial < 50; ++trial) {
        auto in = make_instance(rng, FusionVariant::sum);
        const auto& s = in.store;
        const auto& p = in.params;
        const Eigen::MatrixXd x = in.x.values.transpose();
        const Eigen::MatrixXd q = x * s[p.query_proj].value.transpose() + s[p.positional].value;
        const Eigen::MatrixXd k = in.text.vectors * s[p.key_proj].value.transpose();
        const Eigen::MatrixXd v = in.text.vectors * s[p.value_proj].value.transpose();
        const int d = p.channels / p.heads;
        Eigen::MatrixXd heads(x.rows(), p.channels);
        for (int h = 0; h < p.heads; ++h) {
            Eigen::MatrixXd a = q.middleCols(h * d, d) * k.middleCols(h * d, d).transpose() / std::sqrt(double(d));
            for (Eigen::Index r = 0; r < a.rows(); ++r) {
                a.row(r) = a.row(r).array().exp();
                a.row(r) /= a.row(r).sum();
            }
            heads.middleCols(h * d, d) = a * v.middleCols(h * d, d);
        }
        const Eigen::MatrixXd res = x + s[p.scale].value(0, 0) * heads * s[p.output_proj].value.transpose();
        Eigen::MatrixXd expected(res.rows(), res.cols());
        for (Eigen::Index r = 0; r < res.rows(); ++r) {
            const double mean = res.row(r).mean();
            const double var = (res.row(r).array() - mean).square().mean();
            expected.row(r) = ((res.row(r).array() - mean) / std::sqrt(var + kFusionNormEps)).matrix().cwiseProduct(
                                  s[p.ln_gamma].value.row(0)) +
                              s[p.ln_beta].value.row(0);
        }
        auto y = fuse_stage(in.x, in.text, in.store, in.params);
        CHECK((flatten_positions(y) - expected).cwiseAbs().maxCoeff() < 1e-9);
    }
}

TEST_CASE("fusion gradients match finite differences") {
    testkit::Rng rng(6);
    for (int trial = 0; trial < 40; ++trial) {
        const auto variant = trial % 2 == 0 ? FusionVariant::sum : FusionVariant::concat;
        auto in = make_instance(rng, variant);
        auto r = testkit::random_tensor(rng, in.x.channels, in.x.height, in.x.width);
        auto f = [&] {
            auto y = fuse_stage(in.x, in.text, in.store, in.params);
            return (y.values.array() * r.values.array()).sum();
        };
        FusionCache cache;
        fuse_stage(in.x, in.text, in.store, in.params, &cache);
        in.store.zero_grad();
        auto dx = fuse_stage_backward(r, in.text, in.store, in.params, cache, in.x.height, in.x.width);
        CHECK(relative_error(testkit::flatten(dx.values), testkit::numeric_gradient(f, testkit::entries(in.x.values))) < 1e-3);
        std::vector<std::size_t> ids{in.params.scale,      in.params.query_proj, in.params.key_proj,
                                     in.params.value_proj, in.params.output_proj, in.params.positional,
                                     in.params.ln_gamma,   in.params.ln_beta};
        if (variant == FusionVariant::concat) ids.push_back(in.params.concat_proj);
        for (auto id : ids) {
            auto& param = in.store[id];
            INFO(param.name);
            const double err =
                relative_error(testkit::flatten(param.grad), testkit::numeric_gradient(f, testkit::entries(param.value)));
            CHECK(err < 1e-3);
        }
    }
}

TEST_CASE("flatten and unflatten round trip exactly") {
    testkit::Rng rng(7);
    for (int trial = 0; trial < 20; ++trial) {
        auto x = testkit::random_tensor(rng, testkit::uniform_int(rng, 1, 5), testkit::uniform_int(rng, 1, 5),
                                        testkit::uniform_int(rng, 1, 5));
        auto rows = flatten_positions(x);
        CHECK(rows.rows() == x.pixels());
        CHECK(rows(0, x.channels - 1) == x.values(x.channels - 1, 0));
        auto back = unflatten_positions(rows, x.height, x.width);
        CHECK(back.same_shape(x));
        CHECK(back.values == x.values);
    }
    CHECK_THROWS_AS(unflatten_positions(Eigen::MatrixXd::Zero(5, 2), 2, 2), StructuralError);
}

TEST_CASE("shape mismatches are structural errors naming the dimension") {
    testkit::Rng rng(8);
    nn::ParamStore store;
    auto p = FusionParams::create(store, "f", 4, 2, 2, 6, 2, FusionVariant::sum, 0.1, rng);
    TextEmbedding text{Eigen::MatrixXd::Random(2, 6)};
    auto check_message = [&](const nn::Tensor& x, const TextEmbedding& t, const char* word) {
        try {
            fuse_stage(x, t, store, p);
            FAIL("expected StructuralError");
        } catch (const StructuralError& e) {
            CHECK(std::string(e.what()).find(word) != std::string::npos);
        }
    };
    check_message(testkit::random_tensor(rng, 3, 2, 2), text, "channels");
    check_message(testkit::random_tensor(rng, 4, 3, 2), text, "positions");
    check_message(testkit::random_tensor(rng, 4, 2, 2), TextEmbedding{Eigen::MatrixXd::Random(2, 5)}, "text width");
    check_message(testkit::random_tensor(rng, 4, 2, 2), TextEmbedding{Eigen::MatrixXd(0, 6)}, "tokens");
    CHECK_THROWS_AS(FusionParams::create(store, "g", 6, 2, 2, 6, 4, FusionVariant::sum, 0.1, rng), StructuralError);
}
