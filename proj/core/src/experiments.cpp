#include "stablekd/experiments.hpp"

#include <array>

#include "stablekd/errors.hpp"
#include "stablekd/partition.hpp"
#include "stablekd/random.hpp"

namespace skd {

namespace {

bool same_kinds(const std::vector<LayerSpec>& a, const std::vector<LayerSpec>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].kind != b[i].kind) return false;
  }
  return true;
}

Network<float> build(const Architecture& arch) {
  return Network<float>::build(arch.layers, arch.input_shape, arch.classes);
}

Curve make_curve(std::string label, RunResult run) {
  Curve curve;
  curve.label = std::move(label);
  for (const auto& r : run.metrics) curve.val_acc.push_back(r.val_acc);
  curve.fluctuation = fluctuation_score(curve.val_acc);
  curve.metrics = std::move(run.metrics);
  return curve;
}

// Four width stages (w, 2w, 3w, 4w) with depths[s] 3x3 convolutions each and
// a 2x pooling after the second and fourth stage.
Architecture four_stage(std::size_t classes, std::size_t side, std::size_t width,
                        const std::array<std::size_t, 4>& depths) {
  Architecture arch;
  arch.input_shape = Shape{1, side, side};
  arch.classes = classes;
  for (std::size_t stage = 1; stage <= 4; ++stage) {
    for (std::size_t d = 0; d < depths[stage - 1]; ++d) {
      arch.layers.push_back(LayerSpec::conv2d(stage * width, 3, 1, 1));
      arch.layers.push_back(LayerSpec::relu());
    }
    if (stage % 2 == 0) arch.layers.push_back(LayerSpec::avgpool2d(2));
  }
  arch.layers.push_back(LayerSpec::flatten());
  arch.layers.push_back(LayerSpec::affine(classes));
  return arch;
}

}  // namespace

DistillSetup make_distill_setup(const Network<float>& teacher, const Architecture& student_arch,
                                std::size_t k, std::uint64_t init_seed,
                                const std::optional<std::vector<std::size_t>>& teacher_ends) {
  const Partition teacher_part = teacher_ends ? Partition(*teacher_ends) : make_partition(teacher, k);
  validate(teacher_part, teacher);
  if (teacher_part.k() != k) {
    throw ConfigError("boundaries describe " + std::to_string(teacher_part.k()) +
                      " blocks but k = " + std::to_string(k));
  }
  Network<float> student = build(student_arch);
  const Partition student_part = same_kinds(teacher.specs(), student.specs())
                                     ? teacher_part
                                     : make_partition(student, k);
  validate(student_part, student);

  ProjectedStudent<float> projected = insert_projectors(student, teacher, student_part, teacher_part);
  DistillSetup setup{std::move(projected.network),
                     Decomposition{teacher_part, Partition(projected.block_ends)},
                     projected.projectors_inserted};
  setup.student.init_params(init_seed);
  validate(setup.decomposition, teacher, setup.student);
  return setup;
}

ToyTask make_toy_task(const ToyTaskConfig& config) {
  const Dataset all = gen_tiles(config.classes, config.per_class, config.side, config.noise,
                                derive_seed(config.seed, 1));
  auto [train, val] = train_val_split(all, config.val_fraction, derive_seed(config.seed, 2));
  return {std::move(train), std::move(val)};
}

Architecture toy_teacher_arch(std::size_t classes, std::size_t side) {
  return four_stage(classes, side, 8, {2, 2, 2, 2});
}

Architecture toy_student_arch(std::size_t classes, std::size_t side) {
  return four_stage(classes, side, 8, {2, 1, 1, 1});
}

std::vector<Curve> experiment_fluctuation(const Network<float>* teacher,
                                          const Architecture& student_arch, const ToyTask& task,
                                          const FluctuationConfig& config) {
  if (!teacher) throw DataError("fluctuation experiment needs a trained teacher checkpoint");
  std::vector<Curve> curves;
  for (double lr : config.max_lrs) {
    Network<float> student = build(student_arch);
    student.init_params(derive_seed(config.seed, 11));
    RunOptions options;
    options.optim = config.optim;
    options.optim.max_lr = lr;
    options.seed = config.seed;
    options.record_wall_time = false;
    RunResult run = run_vanilla_kd(*teacher, student, config.alpha, config.epochs,
                                   {&task.train, &task.val}, options);
    curves.push_back(make_curve("lr=" + format_number(lr), std::move(run)));
  }
  return curves;
}

HeadDistanceResult experiment_head_distance(const Network<float>* small_pretrained,
                                            const Network<float>* large_pretrained,
                                            const Network<float>& teacher, const ToyTask& task,
                                            const HeadDistanceConfig& config) {
  if (!small_pretrained || !large_pretrained) {
    throw DataError("head-distance experiment needs pretrained small and large backbones");
  }
  Network<float> random_small = Network<float>::build(
      small_pretrained->specs(), small_pretrained->input_shape(), small_pretrained->classes());
  random_small.init_params(derive_seed(config.seed, 21));
  Network<float> small = *small_pretrained;
  Network<float> large = *large_pretrained;

  auto train = [&](Network<float>& net) {
    const std::size_t head = net.layer_count() - 1;
    net.init_layers(config.head_seed, head, head + 1);
    for (auto& p : net.parameters()) p.trainable = true;
    RunOptions options;
    options.optim = config.optim;
    options.seed = config.seed;
    options.record_wall_time = false;
    return run_vanilla_kd(teacher, net, config.alpha, config.epochs, {&task.train, &task.val},
                          options)
        .trace;
  };
  HeadDistanceResult result;
  result.random_small = train(random_small);
  result.pretrained_small = train(small);
  result.pretrained_large = train(large);
  return result;
}

std::vector<Curve> experiment_block_counts(const Network<float>& teacher,
                                           const Architecture& student_arch, const ToyTask& task,
                                           const BlockCountConfig& config) {
  std::vector<Curve> curves;
  for (std::size_t k : config.ks) {
    DistillSetup setup = make_distill_setup(teacher, student_arch, k, derive_seed(config.seed, 11));
    StableKDConfig run_config{setup.decomposition, StageSchedule{{config.epochs}}, config.lambda,
                              1.0};
    RunOptions options;
    options.optim = config.optim;
    options.seed = config.seed;
    options.record_wall_time = false;
    RunResult run =
        run_stablekd(teacher, setup.student, run_config, {&task.train, &task.val}, options);
    curves.push_back(make_curve("StableKD-" + std::to_string(k) + "/0", std::move(run)));
  }
  return curves;
}

PlotData curves_plot(const std::vector<Curve>& curves) {
  PlotData plot;
  for (const auto& c : curves) plot.add_curve(c.label, c.val_acc);
  return plot;
}

}  // namespace skd
