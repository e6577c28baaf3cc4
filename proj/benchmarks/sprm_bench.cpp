#include <random>

#include <benchmark/benchmark.h>

#include "sprm/model.hpp"
#include "sprm/ops.hpp"
#include "sprm/sampling.hpp"
#include "sprm/srtm.hpp"
#include "sprm/ssm.hpp"
#include "sprm/training.hpp"

namespace {

using namespace sprm;

NdArray random_array(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0, bool grad = false) {
  std::uniform_real_distribution<double> u(lo, hi);
  NdArray a(std::move(shape), grad);
  for (auto& v : a.mutable_data()) v = u(rng);
  return a;
}

// Selective scan over L frames, E = 64 channels, N = 16 states.
void BM_SelectiveScan(benchmark::State& state) {
  const auto len = static_cast<std::size_t>(state.range(0));
  Rng rng(1);
  const NdArray x = random_array({len, 64}, rng), dt = random_array({len, 64}, rng, 0.01, 0.1),
                a_log = random_array({64, 16}, rng), b = random_array({len, 16}, rng),
                c = random_array({len, 16}, rng);
  NoGradGuard guard;
  for (auto _ : state) {
    NdArray y = ssm::selective_scan(x, dt, a_log, b, c);
    benchmark::DoNotOptimize(y.data().data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(len));
}
BENCHMARK(BM_SelectiveScan)->RangeMultiplier(4)->Range(256, 4096);

// Windowed attention, W = 64, d = 32.
void BM_WindowAttention(benchmark::State& state) {
  const auto len = static_cast<std::size_t>(state.range(0));
  Rng rng(2);
  const auto layout = sampling::window_layout(len, 64);
  const NdArray q = random_array({layout.segments.rows(), 32}, rng), k = random_array({layout.segments.rows(), 32}, rng),
                v = random_array({layout.segments.rows(), 32}, rng);
  NoGradGuard guard;
  for (auto _ : state) {
    NdArray y = attention(q, k, v, &layout.segments);
    benchmark::DoNotOptimize(y.data().data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(len));
}
BENCHMARK(BM_WindowAttention)->RangeMultiplier(4)->Range(256, 4096);

// One SRTM block at C = 64 on a windowed layout, inference.
void BM_SrtmForward(benchmark::State& state) {
  const auto len = static_cast<std::size_t>(state.range(0));
  Rng rng(3);
  SrtmConfig cfg;
  cfg.channels = 64;
  const SrtmBlock block(cfg, rng);
  const auto layout = sampling::window_layout(len, 64);
  const NdArray rows = sampling::apply_layout(random_array({len, 64}, rng), layout);
  NoGradGuard guard;
  for (auto _ : state) {
    NdArray y = block.forward(rows, layout.segments, nullptr, {}, layout.frame_to_row);
    benchmark::DoNotOptimize(y.data().data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(len));
}
BENCHMARK(BM_SrtmForward)->RangeMultiplier(4)->Range(256, 4096);

// Forward and backward through one LSTContext block at C = 64.
void BM_LstContextTrainStep(benchmark::State& state) {
  const auto len = static_cast<std::size_t>(state.range(0));
  Rng rng(4);
  LstContextBlock::Options opt;
  opt.dilation = 4;
  const LstContextBlock block(opt, rng);
  const NdArray x = random_array({len, 64}, rng);
  for (auto _ : state) {
    NdArray loss = sum(block.forward(x, nullptr, {}));
    loss.backward();
    benchmark::DoNotOptimize(loss.item());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(len));
}
BENCHMARK(BM_LstContextTrainStep)->Arg(512)->Arg(2048);

// Paper-scale model inference (D = 2048, 4 stages of 10 blocks).
void BM_ModelPredict(benchmark::State& state) {
  const auto len = static_cast<std::size_t>(state.range(0));
  Rng rng(5);
  const Model model = build_model(ModelConfig{}, 0);
  const NdArray x = random_array({len, 2048}, rng);
  for (auto _ : state) {
    Prediction p = predict(model, x);
    benchmark::DoNotOptimize(p.probs.data().data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(len));
}
BENCHMARK(BM_ModelPredict)->Arg(512)->Arg(2048)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
