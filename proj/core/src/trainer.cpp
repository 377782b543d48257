#include "stablekd/trainer.hpp"

#include <atomic>
#include <cmath>
#include <chrono>
#include <exception>
#include <thread>

#include "stablekd/errors.hpp"
#include "stablekd/ops.hpp"
#include "stablekd/random.hpp"

namespace skd {

namespace {

constexpr std::size_t kEvalBatch = 256;

template <typename Fn>
void for_each_block(std::size_t count, std::size_t workers, Fn&& fn) {
  const std::size_t w = std::min(workers, count);
  if (w <= 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> errors(count);
  auto work = [&] {
    for (std::size_t i = next++; i < count; i = next++) {
      try {
        fn(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  {
    std::vector<std::jthread> pool;
    pool.reserve(w - 1);
    for (std::size_t t = 1; t < w; ++t) pool.emplace_back(work);
    work();
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

std::size_t count_correct(const Tensor<float>& logits, const std::vector<std::uint32_t>& labels) {
  const std::size_t n = logits.shape()[0], c = logits.shape()[1];
  std::size_t correct = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const float* row = logits.data() + i * c;
    std::size_t best = 0;
    for (std::size_t j = 1; j < c; ++j) {
      if (row[j] > row[best]) best = j;
    }
    if (best == labels[i]) ++correct;
  }
  return correct;
}

void require_finite(double value, const char* what) {
  if (!std::isfinite(value)) throw ContractError(std::string("non-finite ") + what + " loss");
}

void require_data(const TrainData& data) {
  if (!data.train || !data.val) throw ConfigError("training needs train and validation data");
  if (data.train->size() == 0) throw DataError("training set is empty");
  if (data.val->size() == 0) throw DataError("validation set is empty");
}

std::size_t steps_per_epoch(const Dataset& train, std::size_t batch_size) {
  return (train.size() + batch_size - 1) / batch_size;
}

std::uint64_t epoch_seed(std::uint64_t seed, std::size_t epoch) {
  return derive_seed(seed, 0x100000ULL + epoch);
}

// Shared per-run bookkeeping: distance trace, epoch metrics, wall clock.
class RunLog {
 public:
  RunLog(const Network<float>& student, const RunOptions& options)
      : options_(options),
        scope_(options.distance_scope.empty() ? head_scope(student) : options.distance_scope),
        start_(std::chrono::steady_clock::now()) {
    result_.trace = DistanceTrace(scope_);
  }

  ParamSnapshot before(const Network<float>& student) const {
    return options_.track_distance ? snapshot(student, scope_) : ParamSnapshot{};
  }

  void after(const ParamSnapshot& prev, const Network<float>& student) {
    if (!options_.track_distance) return;
    const double d = param_distance(prev, snapshot(student, scope_));
    result_.trace.push(d);
    epoch_distance_ += d;
    ++epoch_steps_;
  }

  void finish_epoch(MetricRecord record) {
    record.step_param_dist_mean =
        epoch_steps_ ? epoch_distance_ / static_cast<double>(epoch_steps_) : 0.0;
    if (options_.record_wall_time) {
      record.wall_seconds =
          std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    }
    epoch_distance_ = 0.0;
    epoch_steps_ = 0;
    if (options_.on_epoch) options_.on_epoch(record);
    result_.metrics.push_back(std::move(record));
  }

  RunResult take() { return std::move(result_); }

 private:
  const RunOptions& options_;
  std::vector<std::string> scope_;
  std::chrono::steady_clock::time_point start_;
  RunResult result_;
  double epoch_distance_ = 0.0;
  std::size_t epoch_steps_ = 0;
};

[[noreturn]] void rethrow_with_context(const Error& e, std::size_t stage, std::size_t epoch) {
  throw Error(e.kind(), "stage " + std::to_string(stage) + ", epoch " + std::to_string(epoch) +
                            ": " + e.what());
}

// Runs one end-to-end step: builds the loss on a fresh tape, back-propagates
// and steps every trainable parameter.
template <typename LossFn>
Tensor<float> end_to_end_step(Network<float>& student, const Tensor<float>& x, LossFn&& loss_fn,
                              MomentumBuffers<float>& buffers, const OptimConfig& optim, double lr) {
  Tape<float> tape;
  const Var<float> logits = student.forward_layers(tape.constant(x), 0, student.layer_count());
  const Var<float> loss = loss_fn(tape, logits);
  require_finite(loss.value()[0], "training");
  const GradientMap<float> grads = tape.backward(loss);
  std::vector<std::size_t> slots;
  for (std::size_t i = 0; i < student.parameters().size(); ++i) {
    if (student.parameters()[i].trainable) slots.push_back(i);
  }
  sgd_step(student, slots, grads, buffers, lr, optim.momentum, optim.weight_decay);
  return logits.value();
}

}  // namespace

double accuracy(const Network<float>& net, const Dataset& data) {
  if (data.size() == 0) return 0.0;
  std::size_t correct = 0;
  for (std::size_t start = 0; start < data.size(); start += kEvalBatch) {
    std::vector<std::size_t> idx;
    for (std::size_t i = start; i < std::min(data.size(), start + kEvalBatch); ++i) idx.push_back(i);
    correct += count_correct(net.evaluate(data.gather<float>(idx)), data.gather_labels(idx));
  }
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

BlockStepStats step_blocks(const Network<float>& teacher, Network<float>& student,
                           const Decomposition& decomposition, const Tensor<float>& x,
                           const std::vector<std::uint32_t>& labels,
                           const BlockLossOptions& loss_options, MomentumBuffers<float>& buffers,
                           const OptimConfig& optim, double lr, std::size_t workers) {
  const std::size_t k = decomposition.k();
  const TeacherRoute<float> route = route_teacher(teacher, x, decomposition.teacher);

  struct Slot {
    double ce = 0.0, kl = 0.0, mse = 0.0;
    std::size_t correct = 0;
  };
  std::vector<Slot> slots(k);
  for_each_block(k, workers, [&](std::size_t b) {
    Tape<float> tape;
    const BlockLoss<float> term =
        block_loss(tape, student, decomposition.student, route, b, labels, loss_options);
    require_finite(term.loss.value()[0], b + 1 == k ? "head block" : "feature block");
    const GradientMap<float> grads = tape.backward(term.loss);
    const std::vector<std::size_t> owned = student.parameter_indices(
        decomposition.student.block_begin(b), decomposition.student.block_end(b));
    sgd_step(student, owned, grads, buffers, lr, optim.momentum, optim.weight_decay);
    slots[b] = {term.ce, term.kl, term.mse, 0};
    if (b + 1 == k) slots[b].correct = count_correct(term.output.value(), labels);
  });

  BlockStepStats stats;
  for (std::size_t b = 0; b < k; ++b) {
    if (b + 1 < k) {
      stats.mse.push_back(slots[b].mse);
    } else {
      stats.ce = slots[b].ce;
      stats.kl = slots[b].kl;
      stats.correct = slots[b].correct;
    }
  }
  return stats;
}

RunResult run_stablekd(const Network<float>& teacher, Network<float>& student,
                       const StableKDConfig& config, const TrainData& data,
                       const RunOptions& options) {
  require_data(data);
  options.optim.validate();
  config.schedule.validate();
  if (!teacher.frozen()) throw ContractError("teacher network must be frozen");
  if (config.lambda < 0.0) throw ConfigError("lambda must be non-negative");
  validate(config.decomposition, teacher, student);

  const Dataset& train = *data.train;
  const std::size_t spe = steps_per_epoch(train, options.optim.batch_size);
  const BlockLossOptions loss_options{config.lambda, config.temperature};
  Decomposition decomposition = config.decomposition;
  MomentumBuffers<float> buffers(student);
  RunLog log(student, options);

  std::size_t epoch = 0, step = 0;
  for (std::size_t stage = 0; stage < config.schedule.stages(); ++stage) {
    buffers.reset();
    for (std::size_t e = 0; e < config.schedule.epochs[stage]; ++e, ++epoch) {
      try {
        MetricRecord record;
        record.epoch = epoch;
        record.stage = stage;
        record.k_current = decomposition.k();
        record.lr_peak = stage_peak_lr(stage, options.optim.max_lr);
        record.loss_mse.assign(decomposition.k() - 1, 0.0);
        std::size_t correct = 0;
        for (const auto& batch : batches(train.size(), options.optim.batch_size,
                                         epoch_seed(options.seed, epoch))) {
          const Tensor<float> x = train.gather<float>(batch);
          const std::vector<std::uint32_t> labels = train.gather_labels(batch);
          const double lr = lr_at(step++, config.schedule, spe, options.optim.max_lr);
          const ParamSnapshot prev = log.before(student);
          const BlockStepStats stats =
              step_blocks(teacher, student, decomposition, x, labels, loss_options, buffers,
                          options.optim, lr, options.workers);
          log.after(prev, student);
          const double w = static_cast<double>(batch.size());
          record.loss_ce += stats.ce * w;
          record.loss_kl += stats.kl * w;
          for (std::size_t i = 0; i < stats.mse.size(); ++i) record.loss_mse[i] += stats.mse[i] * w;
          correct += stats.correct;
        }
        const double n = static_cast<double>(train.size());
        record.loss_ce /= n;
        record.loss_kl /= n;
        for (double& m : record.loss_mse) m /= n;
        record.train_acc = static_cast<double>(correct) / n;
        record.val_acc = accuracy(student, *data.val);
        log.finish_epoch(std::move(record));
      } catch (const Error& err) {
        rethrow_with_context(err, stage, epoch);
      }
    }
    if (stage + 1 < config.schedule.stages()) decomposition = recompose(decomposition);
  }
  RunResult result = log.take();
  result.final_decomposition = decomposition;
  return result;
}

RunResult run_vanilla_kd(const Network<float>& teacher, Network<float>& student, double alpha,
                         std::size_t epochs, const TrainData& data, const RunOptions& options,
                         double temperature) {
  require_data(data);
  options.optim.validate();
  if (!teacher.frozen()) throw ContractError("teacher network must be frozen");
  if (!(alpha > 0.0 && alpha < 1.0)) throw ConfigError("alpha must lie strictly inside (0, 1)");
  const StageSchedule schedule{{epochs}};
  schedule.validate();

  const Dataset& train = *data.train;
  const std::size_t spe = steps_per_epoch(train, options.optim.batch_size);
  MomentumBuffers<float> buffers(student);
  RunLog log(student, options);
  const std::size_t layers = teacher.layer_count();

  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < epochs; ++epoch) {
    try {
      MetricRecord record;
      record.epoch = epoch;
      record.lr_peak = options.optim.max_lr;
      std::size_t correct = 0;
      for (const auto& batch :
           batches(train.size(), options.optim.batch_size, epoch_seed(options.seed, epoch))) {
        const Tensor<float> x = train.gather<float>(batch);
        const std::vector<std::uint32_t> labels = train.gather_labels(batch);
        const Tensor<float> teacher_logits = teacher.evaluate(x, 0, layers);
        const double lr = lr_at(step++, schedule, spe, options.optim.max_lr);
        double ce = 0.0, kl = 0.0;
        const ParamSnapshot prev = log.before(student);
        const Tensor<float> logits = end_to_end_step(
            student, x,
            [&](Tape<float>& tape, Var<float> out) {
              const Var<float> t = tape.constant(teacher_logits);
              const Var<float> ce_term = cross_entropy(out, labels);
              const Var<float> kl_term = kl_divergence(out, t, temperature);
              ce = ce_term.value()[0];
              kl = kl_term.value()[0];
              return add(scale(ce_term, static_cast<float>(1.0 - alpha)),
                         scale(kl_term, static_cast<float>(alpha)));
            },
            buffers, options.optim, lr);
        log.after(prev, student);
        const double w = static_cast<double>(batch.size());
        record.loss_ce += ce * w;
        record.loss_kl += kl * w;
        correct += count_correct(logits, labels);
      }
      const double n = static_cast<double>(train.size());
      record.loss_ce /= n;
      record.loss_kl /= n;
      record.train_acc = static_cast<double>(correct) / n;
      record.val_acc = accuracy(student, *data.val);
      log.finish_epoch(std::move(record));
    } catch (const Error& err) {
      rethrow_with_context(err, 0, epoch);
    }
  }
  RunResult result = log.take();
  result.final_decomposition = {Partition({teacher.layer_count()}),
                                Partition({student.layer_count()})};
  return result;
}

RunResult run_supervised(Network<float>& net, std::size_t epochs, const TrainData& data,
                         const RunOptions& options) {
  require_data(data);
  options.optim.validate();
  const StageSchedule schedule{{epochs}};
  schedule.validate();

  const Dataset& train = *data.train;
  const std::size_t spe = steps_per_epoch(train, options.optim.batch_size);
  MomentumBuffers<float> buffers(net);
  RunLog log(net, options);

  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < epochs; ++epoch) {
    try {
      MetricRecord record;
      record.epoch = epoch;
      record.lr_peak = options.optim.max_lr;
      std::size_t correct = 0;
      for (const auto& batch :
           batches(train.size(), options.optim.batch_size, epoch_seed(options.seed, epoch))) {
        const Tensor<float> x = train.gather<float>(batch);
        const std::vector<std::uint32_t> labels = train.gather_labels(batch);
        const double lr = lr_at(step++, schedule, spe, options.optim.max_lr);
        double ce = 0.0;
        const ParamSnapshot prev = log.before(net);
        const Tensor<float> logits = end_to_end_step(
            net, x,
            [&](Tape<float>&, Var<float> out) {
              const Var<float> loss = cross_entropy(out, labels);
              ce = loss.value()[0];
              return loss;
            },
            buffers, options.optim, lr);
        log.after(prev, net);
        record.loss_ce += ce * static_cast<double>(batch.size());
        correct += count_correct(logits, labels);
      }
      const double n = static_cast<double>(train.size());
      record.loss_ce /= n;
      record.train_acc = static_cast<double>(correct) / n;
      record.val_acc = accuracy(net, *data.val);
      log.finish_epoch(std::move(record));
    } catch (const Error& err) {
      rethrow_with_context(err, 0, epoch);
    }
  }
  return log.take();
}

}  // namespace skd
