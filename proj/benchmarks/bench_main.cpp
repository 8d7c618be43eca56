#include <benchmark/benchmark.h>

#include "gazedistill/fusion.hpp"
#include "gazedistill/gaze_masks.hpp"
#include "gazedistill/metrics.hpp"
#include "gazedistill/network.hpp"
#include "gazedistill/nn.hpp"
#include "gazedistill/synthkit.hpp"
#include "gazedistill/text_embed.hpp"

using namespace gazedistill;

namespace {

nn::Tensor random_tensor(int c, int h, int w, nn::Rng& rng) {
    nn::Tensor t(c, h, w);
    t.values = nn::normal_matrix(c, h * w, 1.0, rng);
    return t;
}

Scene scene_for(int side, std::uint64_t seed) {
    SceneSpec spec;
    spec.image_side = side;
    spec.radius_min = side / 8.0;
    spec.radius_max = side / 4.0;
    spec.seed = seed;
    return gen_scene(spec);
}

void BM_conv3x3_forward(benchmark::State& state) {
    const int side = static_cast<int>(state.range(0));
    const int channels = static_cast<int>(state.range(1));
    nn::Rng rng(1);
    nn::ParamStore store;
    const auto conv = nn::Conv2d::create(store, "conv", channels, channels, 3, rng);
    const auto x = random_tensor(channels, side, side, rng);
    nn::RowMatrix col;
    for (auto _ : state) benchmark::DoNotOptimize(conv.forward(store, x, col));
}
BENCHMARK(BM_conv3x3_forward)->Args({64, 16})->Args({32, 32})->Args({16, 64});

void BM_conv3x3_backward(benchmark::State& state) {
    const int side = static_cast<int>(state.range(0));
    const int channels = static_cast<int>(state.range(1));
    nn::Rng rng(2);
    nn::ParamStore store;
    const auto conv = nn::Conv2d::create(store, "conv", channels, channels, 3, rng);
    const auto x = random_tensor(channels, side, side, rng);
    nn::RowMatrix col;
    const auto y = conv.forward(store, x, col);
    const auto dy = random_tensor(channels, side, side, rng);
    for (auto _ : state) benchmark::DoNotOptimize(conv.backward(store, col, dy, side, side));
}
BENCHMARK(BM_conv3x3_backward)->Args({64, 16})->Args({32, 32});

void BM_fuse_stage(benchmark::State& state) {
    const int side = static_cast<int>(state.range(0));
    const int channels = static_cast<int>(state.range(1));
    nn::Rng rng(3);
    nn::ParamStore store;
    const auto params =
        FusionParams::create(store, "fuse", channels, side, side, 768, 4, FusionVariant::sum, 0.1, rng);
    const auto x = random_tensor(channels, side, side, rng);
    const HashTextEncoder encoder;
    const auto text = encoder.encode("location upper_left area 12.5 boundary clear characteristics smooth");
    for (auto _ : state) benchmark::DoNotOptimize(fuse_stage(x, text, store, params));
}
BENCHMARK(BM_fuse_stage)->Args({64, 16})->Args({32, 32})->Args({16, 64})->Args({8, 128});

void BM_segnet_forward(benchmark::State& state) {
    NetworkConfig cfg;
    cfg.text_fusion = state.range(0) != 0;
    if (!cfg.text_fusion) cfg.widths = {8, 16, 32, 64};
    const SegNet net(cfg, 4);
    const auto scene = scene_for(64, 4);
    const HashTextEncoder encoder;
    const auto text = encoder.encode("location center area 8.0 boundary clear characteristics smooth");
    for (auto _ : state) benchmark::DoNotOptimize(net.forward(scene.image, cfg.text_fusion ? &text : nullptr));
}
BENCHMARK(BM_segnet_forward)->Arg(1)->Arg(0)->Unit(benchmark::kMillisecond);

void BM_hd95(benchmark::State& state) {
    const int side = static_cast<int>(state.range(0));
    const auto a = scene_for(side, 5).gt;
    const auto b = scene_for(side, 6).gt;
    for (auto _ : state) benchmark::DoNotOptimize(hd95(a, b));
}
BENCHMARK(BM_hd95)->Arg(64)->Arg(256);

void BM_density_map(benchmark::State& state) {
    const int side = static_cast<int>(state.range(0));
    const auto scene = scene_for(side, 7);
    SceneSpec spec;
    spec.image_side = side;
    spec.gaze_points = static_cast<int>(state.range(1));
    const auto gaze = simulate_gaze(scene.gt, spec);
    for (auto _ : state) benchmark::DoNotOptimize(density_map(gaze, side, side, default_sigma_px(side, side)));
}
BENCHMARK(BM_density_map)->Args({64, 40})->Args({256, 200});

}  // namespace
BENCHMARK_MAIN();
