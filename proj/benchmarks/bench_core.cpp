#include <benchmark/benchmark.h>

#include <vector>

#include "protodistill/metrics.hpp"
#include "protodistill/ops.hpp"
#include "protodistill/pipeline.hpp"
#include "protodistill/rng.hpp"

using namespace protodistill;
using namespace protodistill::ops;

namespace {

Tensor random_tensor(Shape shape, std::uint64_t seed, bool grad = false) {
  Rng rng(seed);
  std::vector<double> v(numel_of(shape));
  for (auto& x : v) x = rng.normal();
  return Tensor(std::move(shape), std::move(v), grad);
}

void BM_Conv2dForward(benchmark::State& state) {
  const auto size = static_cast<std::size_t>(state.range(0));
  const auto x = random_tensor({8, 1, size, size}, 1);
  const auto k = random_tensor({16, 1, 8, 8}, 2);
  const auto b = random_tensor({16}, 3);
  NoGradGuard guard;
  for (auto _ : state) benchmark::DoNotOptimize(conv2d(x, k, b, 4, 2));
}
BENCHMARK(BM_Conv2dForward)->Arg(32)->Arg(64);

void BM_Conv2dBackward(benchmark::State& state) {
  const auto x = random_tensor({8, 1, 64, 64}, 1);
  auto k = random_tensor({16, 1, 8, 8}, 2, true);
  auto b = random_tensor({16}, 3, true);
  for (auto _ : state) {
    auto loss = sum(conv2d(x, k, b, 4, 2));
    loss.backward();
    k.clear_grad();
    b.clear_grad();
  }
}
BENCHMARK(BM_Conv2dBackward);

void BM_PatchDistances(benchmark::State& state) {
  const auto fmap = random_tensor({16, 4, 4, 32}, 4);
  const auto protos = random_tensor({static_cast<std::size_t>(state.range(0)), 32}, 5);
  NoGradGuard guard;
  for (auto _ : state) benchmark::DoNotOptimize(patch_distances(fmap, protos));
}
BENCHMARK(BM_PatchDistances)->Arg(40)->Arg(160);

void BM_Hungarian(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  Rng rng(6);
  std::vector<std::vector<double>> scores(n, std::vector<double>(n));
  for (auto& row : scores)
    for (auto& s : row) s = rng.uniform();
  for (auto _ : state) benchmark::DoNotOptimize(hungarian(scores, true));
}
BENCHMARK(BM_Hungarian)->Arg(6)->Arg(40)->Arg(200);

void BM_ModelForward(benchmark::State& state) {
  const auto config = state.range(0) == 0 ? ModelConfig::teacher_default() : ModelConfig::student_default();
  const auto model = init_model(config, 7);
  const auto size = static_cast<std::size_t>(config.input_size);
  Rng rng(8);
  std::vector<double> px(16 * size * size);
  for (auto& v : px) v = rng.uniform();
  const Tensor x({16, 1, size, size}, std::move(px));
  NoGradGuard guard;
  for (auto _ : state) benchmark::DoNotOptimize(model.forward(x));
}
BENCHMARK(BM_ModelForward)->Arg(0)->Arg(1)->ArgNames({"student"});

}  // namespace
BENCHMARK_MAIN();
