#include <benchmark/benchmark.h>

#include "stablekd/experiments.hpp"
#include "stablekd/ops.hpp"
#include "stablekd/random.hpp"
#include "stablekd/trainer.hpp"

namespace {

using namespace skd;

Tensor<float> random_tensor(Shape shape, std::uint64_t seed) {
  Tensor<float> t(shape, 0.0f);
  Rng rng(seed);
  for (float& v : t.values()) v = static_cast<float>(rng.uniform(-1.0, 1.0));
  return t;
}

void BM_Matmul(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const Parameter<float> w{"w", random_tensor(Shape{n, n}, 2)};
  const Tensor<float> x = random_tensor(Shape{n, n}, 1);
  for (auto _ : state) {
    Tape<float> tape;
    const auto y = matmul(tape.constant(x), tape.parameter(w));
    benchmark::DoNotOptimize(tape.backward(sum(y)));
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(2 * n * n * n));
}
BENCHMARK(BM_Matmul)->Arg(32)->Arg(64)->Arg(128);

void BM_Conv2d(benchmark::State& state) {
  const auto channels = static_cast<std::size_t>(state.range(0));
  const Parameter<float> k{"k", random_tensor(Shape{channels, channels, 3, 3}, 2)};
  const Tensor<float> x = random_tensor(Shape{32, channels, 8, 8}, 1);
  for (auto _ : state) {
    Tape<float> tape;
    const auto y = conv2d(tape.constant(x), tape.parameter(k), 1, 1);
    benchmark::DoNotOptimize(tape.backward(sum(y)));
  }
}
BENCHMARK(BM_Conv2d)->Arg(8)->Arg(16)->Arg(32);

// One blockwise optimizer step of the toy student on a batch of 32 tiles.
void BM_StepBlocks(benchmark::State& state) {
  const ToyTask task = make_toy_task({});
  const Architecture ta = toy_teacher_arch(8, 8);
  auto teacher = Network<float>::build(ta.layers, ta.input_shape, ta.classes);
  teacher.init_params(1);
  teacher.freeze();
  DistillSetup setup = make_distill_setup(teacher, toy_student_arch(8, 8), static_cast<std::size_t>(state.range(0)), 2);
  MomentumBuffers<float> buffers(setup.student);
  std::vector<std::size_t> idx(32);
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  const Tensor<float> x = task.train.gather<float>(idx);
  const auto labels = task.train.gather_labels(idx);
  for (auto _ : state) {
    benchmark::DoNotOptimize(step_blocks(teacher, setup.student, setup.decomposition, x, labels, {},
                                         buffers, OptimConfig::stablekd_defaults(), 0.01, 1));
  }
}
BENCHMARK(BM_StepBlocks)->Arg(1)->Arg(5)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
