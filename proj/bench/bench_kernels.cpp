// Reference vs Parallel timings for the batch kernels, plus naive vs tuned conv.

#include <benchmark/benchmark.h>

#include "polarcast/dataio.hpp"
#include "polarcast/kernels.hpp"
#include "polarcast/parallel.hpp"
#include "polarcast/rng.hpp"
#include "polarcast/somclean.hpp"

using namespace polarcast;

namespace {

const ArchConfig kArch{.window_len = 128,
                       .conv_channels = {8, 8, 16, 16, 16},
                       .kernel_size = 3,
                       .pool_every_block = true,
                       .dense_widths = {16, 1},
                       .dropout_enabled = true};

const std::vector<Window>& windows() {
  static const std::vector<Window> w = [] {
    SynthConfig sc;
    sc.n_defined = 1024;
    sc.n_undecidable = 0;
    sc.window_len = 128;
    sc.seed = 1;
    const auto traces = synth_generate(sc).traces;
    return make_windows(traces, {48, 80}).windows;
  }();
  return w;
}

ExecMode mode_of(const benchmark::State& s) {
  return s.range(0) ? ExecMode::Parallel : ExecMode::Reference;
}

void BM_BatchGradients(benchmark::State& state) {
  const Network net(kArch);
  const auto params = net.init_params(7);
  const auto& w = windows();
  std::vector<const Window*> batch;
  for (std::size_t i = 0; i < 512; ++i) batch.push_back(&w[i]);
  GradientWorkspace ws(net);
  Gradients g = net.zero_gradients();
  for (auto _ : state)
    benchmark::DoNotOptimize(batch_gradients(net, params, batch, 11, mode_of(state), ws, g));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(batch.size()));
}
BENCHMARK(BM_BatchGradients)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

void BM_PredictBatch(benchmark::State& state) {
  const Network net(kArch);
  const auto params = net.init_params(7);
  for (auto _ : state) benchmark::DoNotOptimize(predict_batch(net, params, windows(), mode_of(state)));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(windows().size()));
}
BENCHMARK(BM_PredictBatch)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

void BM_BmuBatch(benchmark::State& state) {
  SomConfig cfg;
  cfg.epochs = 1;
  const auto som = som_train(std::span<const Window>(windows()), cfg);
  const auto views = views_of(windows());
  for (auto _ : state) benchmark::DoNotOptimize(bmu_batch(som, views, mode_of(state)));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(views.size()));
}
BENCHMARK(BM_BmuBatch)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

void BM_Conv(benchmark::State& state) {
  const std::size_t in_ch = 16, out_ch = 16, len = 128, k = 3;
  Rng rng(3);
  std::vector<double> x(in_ch * len), out(out_ch * (len - k + 1));
  std::vector<float> w(out_ch * in_ch * k), b(out_ch);
  for (auto& v : x) v = rng.normal();
  for (auto& v : w) v = static_cast<float>(rng.normal());
  const bool tuned = state.range(0) != 0;
  for (auto _ : state) {
    if (tuned)
      kernels::conv1d_forward(x, in_ch, len, w, b, out_ch, k, out);
    else
      kernels::conv1d_forward_reference(x, in_ch, len, w, b, out_ch, k, out);
    benchmark::DoNotOptimize(out.data());
  }
}
BENCHMARK(BM_Conv)->ArgName("tuned")->Arg(0)->Arg(1);

}  // namespace

BENCHMARK_MAIN();
