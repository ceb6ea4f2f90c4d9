#include <benchmark/benchmark.h>

#include "mrecg/nn.hpp"
#include "mrecg/quantizer.hpp"
#include "mrecg/reconstruction.hpp"
#include "mrecg/rng.hpp"
#include "mrecg/solver.hpp"

using namespace mrecg;

namespace {

Tensor random_tensor(std::vector<int> shape, Rng& rng) {
  Tensor t(std::move(shape));
  for (double& v : t.data) v = rng.next_gaussian();
  return t;
}

LayerSpec conv_spec(int ch) {
  LayerSpec s;
  s.in_channels = s.out_channels = ch;
  s.kernel_h = s.kernel_w = 3;
  s.stride = 1;
  s.padding = 1;
  return s;
}

void bm_conv_forward(benchmark::State& state) {
  const int ch = int(state.range(0));
  Rng rng(1);
  LayerSpec s = conv_spec(ch);
  Tensor in = random_tensor({8, ch, 8, 8}, rng);
  Tensor w = random_tensor({ch, ch, 3, 3}, rng);
  std::vector<double> bias(ch, 0.1);
  for (auto _ : state) {
    benchmark::DoNotOptimize(conv2d_forward(in, w, bias, s));
  }
  state.SetItemsProcessed(int64_t(state.iterations()) * in.size());
}
BENCHMARK(bm_conv_forward)->Arg(4)->Arg(8)->Arg(16);

void bm_conv_backward(benchmark::State& state) {
  const int ch = int(state.range(0));
  Rng rng(2);
  LayerSpec s = conv_spec(ch);
  Tensor in = random_tensor({8, ch, 8, 8}, rng);
  Tensor w = random_tensor({ch, ch, 3, 3}, rng);
  Tensor go = random_tensor({8, ch, 8, 8}, rng);
  for (auto _ : state) {
    benchmark::DoNotOptimize(conv2d_backward(in, w, go, s));
  }
}
BENCHMARK(bm_conv_backward)->Arg(4)->Arg(8)->Arg(16);

void bm_fake_quantize(benchmark::State& state) {
  Rng rng(3);
  Tensor t = random_tensor({16, 16, 3, 3}, rng);
  QuantParams q = calibrate_scale(t, 4, true, true);
  for (auto _ : state) {
    benchmark::DoNotOptimize(fake_quantize(t, q));
  }
  state.SetItemsProcessed(int64_t(state.iterations()) * t.size());
}
BENCHMARK(bm_fake_quantize);

void bm_calibrate_scale(benchmark::State& state) {
  Rng rng(4);
  Tensor t = random_tensor({16, 16, 3, 3}, rng);
  for (auto _ : state) {
    benchmark::DoNotOptimize(calibrate_scale(t, 4, true, true));
  }
}
BENCHMARK(bm_calibrate_scale);

void bm_select_topk(benchmark::State& state) {
  const int n = int(state.range(0));
  Rng rng(5);
  std::vector<double> values(n);
  for (double& v : values) v = rng.next_gaussian();
  CapacityVector cm{values, CapacityMetric::kModCap};
  auto scores = score_pairs(cm);
  for (auto _ : state) {
    benchmark::DoNotOptimize(
        select_topk(scores, n / 3, SelectMode::kDataDependent));
    benchmark::DoNotOptimize(select_topk(scores, n / 3, SelectMode::kDataFree));
  }
}
BENCHMARK(bm_select_topk)->Arg(16)->Arg(64)->Arg(256);

void bm_reconstruction_loss(benchmark::State& state) {
  ModelGraph g = generate_synthetic_model(2, int(state.range(0)),
                                          std::nullopt, 6, 6);
  ModuleSpec m{0, 1, true};
  Rng rng(7);
  Tensor x = random_tensor({8, int(state.range(0)), 6, 6}, rng);
  std::vector<QuantParams> wq;
  std::vector<SoftRoundState> states;
  for (int l = 0; l < 2; ++l) {
    wq.push_back(calibrate_scale(g.weights[l], 4, true, true));
    states.push_back(init_soft_round(g.weights[l], wq.back()));
  }
  Tensor fp = module_forward(g, m, {g.weights[0], g.weights[1]}, x);
  for (auto _ : state) {
    benchmark::DoNotOptimize(reconstruction_loss(g, m, wq, states, fp, x));
  }
}
BENCHMARK(bm_reconstruction_loss)->Arg(4)->Arg(8);

}  // namespace

BENCHMARK_MAIN();
