#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "stablekd/datasets.hpp"
#include "stablekd/instrumentation.hpp"
#include "stablekd/network.hpp"
#include "stablekd/trainer.hpp"

namespace skd {

/// Student network (with any projectors) and aligned decomposition ready
/// for blockwise distillation.
struct DistillSetup {
  Network<float> student;
  Decomposition decomposition;
  std::size_t projectors_inserted = 0;
};

/// Partitions teacher and student into k blocks, inserts projectors where
/// boundary widths differ and initializes the student from `init_seed`.
/// `teacher_ends` overrides the teacher's automatic partition. The student
/// reuses the teacher's ends when both stacks have the same layer kinds,
/// otherwise it is partitioned on its own.
DistillSetup make_distill_setup(const Network<float>& teacher, const Architecture& student_arch,
                                std::size_t k, std::uint64_t init_seed,
                                const std::optional<std::vector<std::size_t>>& teacher_ends = {});

/// Train/validation pair of oriented-grating tiles.
struct ToyTask {
  Dataset train;
  Dataset val;
};

struct ToyTaskConfig {
  std::size_t classes = 8;
  std::size_t per_class = 120;
  std::size_t side = 8;
  double noise = 0.4;
  double val_fraction = 0.25;
  std::uint64_t seed = 1;
};

ToyTask make_toy_task(const ToyTaskConfig& config);

/// Four width stages (8, 16, 24, 32 channels) of two 3x3 convolutions each
/// on square tiles, two 2x poolings, flatten and an affine head.
Architecture toy_teacher_arch(std::size_t classes, std::size_t side);
/// The teacher's stages and widths with one convolution per stage. Its
/// block boundaries and head shape match the teacher's.
Architecture toy_student_arch(std::size_t classes, std::size_t side);

/// One labelled validation-accuracy curve.
struct Curve {
  std::string label;
  std::vector<double> val_acc;
  double fluctuation = 0.0;
  std::vector<MetricRecord> metrics;
};

struct FluctuationConfig {
  std::vector<double> max_lrs{0.005, 0.01, 0.02};
  std::size_t epochs = 30;
  double alpha = 0.5;
  OptimConfig optim = OptimConfig::baseline_defaults();
  std::uint64_t seed = 0;
};

/// Vanilla-KD runs differing only in peak learning rate. A null teacher is
/// a DataError.
std::vector<Curve> experiment_fluctuation(const Network<float>* teacher,
                                          const Architecture& student_arch, const ToyTask& task,
                                          const FluctuationConfig& config);

struct HeadDistanceConfig {
  std::size_t epochs = 5;
  double alpha = 0.5;
  OptimConfig optim = OptimConfig::baseline_defaults();
  std::uint64_t seed = 0;
  std::uint64_t head_seed = 7;
};

struct HeadDistanceResult {
  DistanceTrace random_small;
  DistanceTrace pretrained_small;
  DistanceTrace pretrained_large;
};

/// Fresh, identically seeded heads on a random-init small backbone, the
/// pretrained small backbone and the pretrained large backbone, each
/// trained by vanilla KD from `teacher` while the head's per-step distance
/// is traced. A null pretrained network is a DataError.
HeadDistanceResult experiment_head_distance(const Network<float>* small_pretrained,
                                            const Network<float>* large_pretrained,
                                            const Network<float>& teacher, const ToyTask& task,
                                            const HeadDistanceConfig& config);

struct BlockCountConfig {
  std::vector<std::size_t> ks{1, 3, 5};
  std::size_t epochs = 40;
  double lambda = 1.0;
  OptimConfig optim = OptimConfig::stablekd_defaults();
  std::uint64_t seed = 0;
};

/// StableKD-k/0 for each k, all students initialized from the same seed.
std::vector<Curve> experiment_block_counts(const Network<float>& teacher,
                                           const Architecture& student_arch, const ToyTask& task,
                                           const BlockCountConfig& config);

/// Long-format plot data with one series per curve.
PlotData curves_plot(const std::vector<Curve>& curves);

}  // namespace skd
