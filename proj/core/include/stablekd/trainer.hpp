#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "stablekd/datasets.hpp"
#include "stablekd/instrumentation.hpp"
#include "stablekd/losses.hpp"
#include "stablekd/network.hpp"
#include "stablekd/optim.hpp"
#include "stablekd/partition.hpp"
#include "stablekd/schedule.hpp"

namespace skd {

struct TrainData {
  const Dataset* train = nullptr;
  const Dataset* val = nullptr;
};

struct RunOptions {
  OptimConfig optim;
  std::uint64_t seed = 0;
  /// Concurrent block workers for blockwise training; results do not depend
  /// on this value.
  std::size_t workers = 1;
  bool record_wall_time = true;
  /// Per-step parameter distances; disabling leaves training unchanged.
  bool track_distance = true;
  /// Parameter ids measured by the step-distance trace; empty selects the
  /// student's classifier head.
  std::vector<std::string> distance_scope;
  std::function<void(const MetricRecord&)> on_epoch;
};

struct StableKDConfig {
  Decomposition decomposition;
  StageSchedule schedule;
  double lambda = 1.0;
  double temperature = 1.0;
};

struct RunResult {
  std::vector<MetricRecord> metrics;
  DistanceTrace trace;
  Decomposition final_decomposition;
};

/// Fraction of samples whose argmax logit (lowest index on ties) matches
/// the label.
double accuracy(const Network<float>& net, const Dataset& data);

/// Outcome of one teacher-routed batch, aggregated in block order.
struct BlockStepStats {
  double ce = 0.0;
  double kl = 0.0;
  std::vector<double> mse;
  std::size_t correct = 0;
};

/// One optimizer step of every student block on a batch. The teacher route
/// is computed once; block terms are evaluated and stepped by up to
/// `workers` threads, each block owned by exactly one of them. The result
/// is bit-identical for any worker count.
BlockStepStats step_blocks(const Network<float>& teacher, Network<float>& student,
                           const Decomposition& decomposition, const Tensor<float>& x,
                           const std::vector<std::uint32_t>& labels,
                           const BlockLossOptions& loss_options, MomentumBuffers<float>& buffers,
                           const OptimConfig& optim, double lr, std::size_t workers);

/// Staged blockwise distillation: for each stage c, e_c epochs minimizing
/// the blockwise objective under the current decomposition, then the
/// decomposition is recomposed (not after the last stage). Momentum buffers
/// restart at every stage. The teacher must be frozen.
RunResult run_stablekd(const Network<float>& teacher, Network<float>& student,
                       const StableKDConfig& config, const TrainData& data,
                       const RunOptions& options);

/// End-to-end distillation with (1 - alpha)·CE + alpha·KL and a single
/// triangular learning-rate cycle over all epochs.
RunResult run_vanilla_kd(const Network<float>& teacher, Network<float>& student, double alpha,
                         std::size_t epochs, const TrainData& data, const RunOptions& options,
                         double temperature = 1.0);

/// Plain cross-entropy training (teachers, pretrained backbones).
RunResult run_supervised(Network<float>& net, std::size_t epochs, const TrainData& data,
                         const RunOptions& options);

}  // namespace skd
