#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "stablekd/autodiff.hpp"
#include "stablekd/network.hpp"
#include "stablekd/partition.hpp"

namespace skd {

using Labels = std::vector<std::uint32_t>;

/// Row-wise softmax of logits / temperature. Rows are non-negative and sum
/// to one.
template <typename T>
Tensor<T> softmax(const Tensor<T>& logits, double temperature = 1.0);

/// Mean over the batch of -log softmax(logits)[label], via log-sum-exp.
template <typename T>
Var<T> cross_entropy(Var<T> logits, std::span<const std::uint32_t> labels);

/// temperature² · mean over the batch of KL(p_teacher ‖ p_student) on
/// temperature-softened distributions.
template <typename T>
Var<T> kl_divergence(Var<T> student_logits, Var<T> teacher_logits, double temperature = 1.0);

/// Mean squared elementwise difference. A shape mismatch raises
/// IncompatibilityError: a projector is missing.
template <typename T>
Var<T> mse_feature(Var<T> a, Var<T> b);

/// (1 - alpha)·CE + alpha·KL with alpha strictly inside (0, 1).
template <typename T>
Var<T> vanilla_kd_loss(Var<T> student_logits, Var<T> teacher_logits,
                       std::span<const std::uint32_t> labels, double alpha,
                       double temperature = 1.0);

struct LossBreakdown {
  double ce = 0.0;
  double kl = 0.0;
  std::vector<double> mse_per_block;  ///< blocks 1..k-1
  double total = 0.0;
};

/// Teacher activations at every block boundary of a batch: entry i is the
/// teacher prefix through block i (entry 0 is the input, entry k the
/// logits). Computed once and shared by every student block.
template <typename T>
struct TeacherRoute {
  std::vector<Tensor<T>> boundaries;
};

template <typename T>
TeacherRoute<T> route_teacher(const Network<T>& teacher, const Tensor<T>& x,
                              const Partition& teacher_partition);

/// Loss of one student block (0-based `block`) fed by the teacher route.
/// Body blocks regress the next teacher boundary with MSE; the last block
/// gets CE + lambda·KL on its logits.
template <typename T>
struct BlockLoss {
  Var<T> loss;
  Var<T> output;  ///< the block's student output (logits for the last block)
  double ce = 0.0;
  double kl = 0.0;
  double mse = 0.0;
};

struct BlockLossOptions {
  double lambda = 1.0;
  double temperature = 1.0;
};

template <typename T>
BlockLoss<T> block_loss(Tape<T>& tape, const Network<T>& student, const Partition& student_partition,
                        const TeacherRoute<T>& route, std::size_t block,
                        std::span<const std::uint32_t> labels, const BlockLossOptions& options);

template <typename T>
struct StableKDLoss {
  LossBreakdown breakdown;
  Var<T> total;
  std::vector<Var<T>> terms;  ///< one per block, in block order
};

/// Aggregate blockwise objective on a single tape: every term recorded and
/// summed. No student block consumes another student block's output.
template <typename T>
StableKDLoss<T> stablekd_loss(Tape<T>& tape, const Tensor<T>& x,
                              std::span<const std::uint32_t> labels, const Network<T>& teacher,
                              const Network<T>& student, const Decomposition& decomposition,
                              const BlockLossOptions& options);

}  // namespace skd
