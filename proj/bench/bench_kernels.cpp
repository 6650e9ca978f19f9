// Serial reference kernels vs. the parallel padded-volume kernels on the
// default grid autoencoder shapes.

#include <benchmark/benchmark.h>

#include <vector>

#include "scenlat/kernels.hpp"
#include "scenlat/rng.hpp"

using namespace scenlat;
using namespace scenlat::kernels;

namespace {

// layer 1 of the encoder and the last decoder layer
const ConvGeometry kEncoderFirst{{2, 13, 30, 30}, 4, {5, 7, 7}};
const ConvGeometry kDecoderLast{{4, 13, 30, 30}, 2, {5, 7, 7}};
const ConvGeometry kEncoderSecond{{4, 6, 15, 15}, 6, {3, 5, 5}};

std::vector<float> random_vector(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<float> v(n);
  for (auto& x : v) x = static_cast<float>(rng.uniform(-1.0, 1.0));
  return v;
}

const ConvGeometry& geometry(int which) {
  switch (which) {
    case 0:
      return kEncoderFirst;
    case 1:
      return kEncoderSecond;
    default:
      return kDecoderLast;
  }
}

template <bool Parallel>
void BM_ConvForward(benchmark::State& state) {
  const auto& g = geometry(static_cast<int>(state.range(0)));
  const int batch = static_cast<int>(state.range(1));
  auto in = random_vector(batch * g.in.size(), 1);
  auto w = random_vector(g.weight_size(), 2);
  std::vector<float> out(batch * g.out().size());
  for (auto _ : state) {
    if constexpr (Parallel)
      conv3d_forward(in.data(), batch, g, w.data(), static_cast<const float*>(nullptr), out.data());
    else
      conv3d_forward_reference(in.data(), batch, g, w.data(), static_cast<const float*>(nullptr), out.data());
    benchmark::DoNotOptimize(out.data());
  }
  state.SetItemsProcessed(state.iterations() * batch);
}

template <bool Parallel>
void BM_ConvBackward(benchmark::State& state) {
  const auto& g = geometry(static_cast<int>(state.range(0)));
  const int batch = static_cast<int>(state.range(1));
  auto in = random_vector(batch * g.in.size(), 1);
  auto go = random_vector(batch * g.out().size(), 3);
  auto w = random_vector(g.weight_size(), 2);
  std::vector<float> gi(in.size()), gw(w.size());
  for (auto _ : state) {
    if constexpr (Parallel)
      conv3d_backward(in.data(), go.data(), batch, g, w.data(), gi.data(), gw.data(), static_cast<float*>(nullptr));
    else
      conv3d_backward_reference(in.data(), go.data(), batch, g, w.data(), gi.data(), gw.data(),
                                static_cast<float*>(nullptr));
    benchmark::DoNotOptimize(gw.data());
  }
  state.SetItemsProcessed(state.iterations() * batch);
}

template <bool Parallel>
void BM_MaxPool(benchmark::State& state) {
  const Volume v{4, 13, 30, 30};
  const Kernel3 p{2, 2, 2};
  const int batch = static_cast<int>(state.range(0));
  auto in = random_vector(batch * v.size(), 4);
  std::vector<float> out(batch * pooled(v, p).size());
  std::vector<std::int32_t> idx(out.size());
  for (auto _ : state) {
    if constexpr (Parallel)
      maxpool3d_forward(in.data(), batch, v, p, out.data(), idx.data());
    else
      maxpool3d_forward_reference(in.data(), batch, v, p, out.data(), idx.data());
    benchmark::DoNotOptimize(out.data());
  }
  state.SetItemsProcessed(state.iterations() * batch);
}

}  // namespace

BENCHMARK(BM_ConvForward<false>)->Args({0, 4})->Args({1, 4})->Args({2, 4})->Unit(benchmark::kMillisecond);
BENCHMARK(BM_ConvForward<true>)->Args({0, 4})->Args({1, 4})->Args({2, 4})->Unit(benchmark::kMillisecond);
BENCHMARK(BM_ConvBackward<false>)->Args({0, 4})->Args({1, 4})->Args({2, 4})->Unit(benchmark::kMillisecond);
BENCHMARK(BM_ConvBackward<true>)->Args({0, 4})->Args({1, 4})->Args({2, 4})->Unit(benchmark::kMillisecond);
BENCHMARK(BM_MaxPool<false>)->Arg(16)->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_MaxPool<true>)->Arg(16)->Unit(benchmark::kMicrosecond);

BENCHMARK_MAIN();
