#include "stablekd/losses.hpp"

#include <algorithm>
#include <cmath>

#include "stablekd/errors.hpp"
#include "stablekd/ops.hpp"

namespace skd {

namespace {

template <typename T>
void require_logits(const Var<T>& logits, const char* op) {
  if (logits.shape().rank() != 2) {
    throw DimensionError(std::string(op) + ": expected [batch×classes] logits, got " +
                         logits.shape().str());
  }
}

// log-softmax of one row of logits / temperature.
template <typename T>
void log_softmax_row(const T* z, std::size_t c, T inv_temp, T* out) {
  T mx = z[0] * inv_temp;
  for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, z[j] * inv_temp);
  T acc{0};
  for (std::size_t j = 0; j < c; ++j) acc += std::exp(z[j] * inv_temp - mx);
  const T lse = mx + std::log(acc);
  for (std::size_t j = 0; j < c; ++j) out[j] = z[j] * inv_temp - lse;
}

}  // namespace

template <typename T>
Tensor<T> softmax(const Tensor<T>& logits, double temperature) {
  if (logits.shape().rank() != 2) throw DimensionError("softmax: expected rank-2 logits");
  const std::size_t n = logits.shape()[0], c = logits.shape()[1];
  Tensor<T> out(logits.shape());
  const T inv = static_cast<T>(1.0 / temperature);
  for (std::size_t i = 0; i < n; ++i) {
    log_softmax_row(logits.data() + i * c, c, inv, out.data() + i * c);
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] = std::exp(out[i * c + j]);
  }
  return out;
}

template <typename T>
Var<T> cross_entropy(Var<T> logits, std::span<const std::uint32_t> labels) {
  require_logits(logits, "cross_entropy");
  const std::size_t n = logits.shape()[0], c = logits.shape()[1];
  if (labels.size() != n) {
    throw DimensionError("cross_entropy: " + std::to_string(labels.size()) + " labels for batch of " +
                         std::to_string(n));
  }
  Tensor<T> logp(logits.shape());
  T total{0};
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i] >= c) {
      throw DataError("cross_entropy: label " + std::to_string(labels[i]) + " out of range for " +
                      std::to_string(c) + " classes");
    }
    log_softmax_row(logits.value().data() + i * c, c, T{1}, logp.data() + i * c);
    total -= logp[i * c + labels[i]];
  }
  const T inv_n = T{1} / static_cast<T>(n);
  Labels kept(labels.begin(), labels.end());
  const std::size_t il = logits.index();
  return logits.tape().record(
      Tensor<T>::scalar(total * inv_n), OpKind::CrossEntropy, {il},
      [il, n, c, inv_n, logp = std::move(logp), kept = std::move(kept)](Tape<T>& tape,
                                                                        const Tensor<T>& g) {
        Tensor<T>* gl = tape.grad_buffer(il);
        if (!gl) return;
        const T s = g[0] * inv_n;
        for (std::size_t i = 0; i < n; ++i) {
          for (std::size_t j = 0; j < c; ++j) {
            const T p = std::exp(logp[i * c + j]);
            (*gl)[i * c + j] += s * (p - (j == kept[i] ? T{1} : T{0}));
          }
        }
      });
}

template <typename T>
Var<T> kl_divergence(Var<T> student_logits, Var<T> teacher_logits, double temperature) {
  require_logits(student_logits, "kl_divergence");
  if (student_logits.shape() != teacher_logits.shape()) {
    throw DimensionError("kl_divergence: student " + student_logits.shape().str() +
                         " vs teacher " + teacher_logits.shape().str());
  }
  if (&student_logits.tape() != &teacher_logits.tape()) {
    throw ContractError("kl_divergence: operands on different tapes");
  }
  if (!(temperature > 0.0)) throw ConfigError("kl_divergence: temperature must be positive");
  const std::size_t n = student_logits.shape()[0], c = student_logits.shape()[1];
  const T tau = static_cast<T>(temperature);
  const T inv_tau = static_cast<T>(1.0 / temperature);
  Tensor<T> logps(student_logits.shape()), logpt(student_logits.shape());
  T total{0};
  for (std::size_t i = 0; i < n; ++i) {
    log_softmax_row(student_logits.value().data() + i * c, c, inv_tau, logps.data() + i * c);
    log_softmax_row(teacher_logits.value().data() + i * c, c, inv_tau, logpt.data() + i * c);
    T acc{0};
    for (std::size_t j = 0; j < c; ++j) {
      const T lt = logpt[i * c + j];
      acc += std::exp(lt) * (lt - logps[i * c + j]);
    }
    // Rounding can leave a tiny negative value when the rows coincide.
    total += std::max(acc, T{0});
  }
  const T factor = tau * tau / static_cast<T>(n);
  const std::size_t is = student_logits.index(), it = teacher_logits.index();
  return student_logits.tape().record(
      Tensor<T>::scalar(total * factor), OpKind::KlDivergence, {is, it},
      [is, it, n, c, tau, logps = std::move(logps), logpt = std::move(logpt)](Tape<T>& tape, const Tensor<T>& g) {
        // d/dz_s = tau·(p_s - p_t)/n ; d/dz_t = tau·p_t·(u - KL_row)/n with
        // u = log p_t - log p_s.
        const T s = g[0] * tau / static_cast<T>(n);
        if (Tensor<T>* gs = tape.grad_buffer(is)) {
          for (std::size_t k = 0; k < n * c; ++k) {
            (*gs)[k] += s * (std::exp(logps[k]) - std::exp(logpt[k]));
          }
        }
        if (Tensor<T>* gt = tape.grad_buffer(it)) {
          for (std::size_t i = 0; i < n; ++i) {
            T row{0};
            for (std::size_t j = 0; j < c; ++j) {
              const std::size_t k = i * c + j;
              row += std::exp(logpt[k]) * (logpt[k] - logps[k]);
            }
            for (std::size_t j = 0; j < c; ++j) {
              const std::size_t k = i * c + j;
              (*gt)[k] += s * std::exp(logpt[k]) * ((logpt[k] - logps[k]) - row);
            }
          }
        }
      });
}

template <typename T>
Var<T> mse_feature(Var<T> a, Var<T> b) {
  if (a.shape() != b.shape()) {
    throw IncompatibilityError("mse_feature: activation shapes " + a.shape().str() + " and " +
                               b.shape().str() + " differ (missing projector?)");
  }
  if (&a.tape() != &b.tape()) throw ContractError("mse_feature: operands on different tapes");
  const std::size_t m = a.value().numel();
  T acc{0};
  for (std::size_t i = 0; i < m; ++i) {
    const T d = a.value()[i] - b.value()[i];
    acc += d * d;
  }
  const T inv_m = T{1} / static_cast<T>(m);
  const std::size_t ia = a.index(), ib = b.index();
  return a.tape().record(Tensor<T>::scalar(acc * inv_m), OpKind::Mse, {ia, ib},
                         [ia, ib, m, inv_m](Tape<T>& tape, const Tensor<T>& g) {
                           const T s = T{2} * g[0] * inv_m;
                           const Tensor<T>& va = tape.value(ia);
                           const Tensor<T>& vb = tape.value(ib);
                           if (Tensor<T>* ga = tape.grad_buffer(ia)) {
                             for (std::size_t i = 0; i < m; ++i) (*ga)[i] += s * (va[i] - vb[i]);
                           }
                           if (Tensor<T>* gb = tape.grad_buffer(ib)) {
                             for (std::size_t i = 0; i < m; ++i) (*gb)[i] -= s * (va[i] - vb[i]);
                           }
                         });
}

template <typename T>
Var<T> vanilla_kd_loss(Var<T> student_logits, Var<T> teacher_logits,
                       std::span<const std::uint32_t> labels, double alpha, double temperature) {
  if (!(alpha > 0.0 && alpha < 1.0)) {
    throw ConfigError("alpha must lie strictly inside (0, 1), got " + std::to_string(alpha));
  }
  const Var<T> ce = cross_entropy(student_logits, labels);
  const Var<T> kl = kl_divergence(student_logits, teacher_logits, temperature);
  return add(scale(ce, static_cast<T>(1.0 - alpha)), scale(kl, static_cast<T>(alpha)));
}

template <typename T>
TeacherRoute<T> route_teacher(const Network<T>& teacher, const Tensor<T>& x,
                              const Partition& teacher_partition) {
  TeacherRoute<T> route;
  route.boundaries.reserve(teacher_partition.k() + 1);
  route.boundaries.push_back(x);
  for (std::size_t b = 0; b < teacher_partition.k(); ++b) {
    route.boundaries.push_back(teacher.evaluate(route.boundaries.back(),
                                                teacher_partition.block_begin(b),
                                                teacher_partition.block_end(b)));
  }
  return route;
}

template <typename T>
BlockLoss<T> block_loss(Tape<T>& tape, const Network<T>& student, const Partition& student_partition,
                        const TeacherRoute<T>& route, std::size_t block,
                        std::span<const std::uint32_t> labels, const BlockLossOptions& options) {
  const std::size_t k = student_partition.k();
  if (block >= k) throw ContractError("block_loss: block " + std::to_string(block) + " out of range");
  if (route.boundaries.size() != k + 1) {
    throw ContractError("block_loss: teacher route has " + std::to_string(route.boundaries.size()) +
                        " boundaries for k = " + std::to_string(k));
  }
  if (options.lambda < 0.0) throw ConfigError("lambda must be non-negative");
  const Var<T> in = tape.constant(route.boundaries[block]);
  const Var<T> out = student.forward_layers(in, student_partition.block_begin(block),
                                            student_partition.block_end(block));
  const Var<T> target = tape.constant(route.boundaries[block + 1]);
  BlockLoss<T> result;
  result.output = out;
  if (block + 1 < k) {
    result.loss = mse_feature(target, out);
    result.mse = static_cast<double>(result.loss.value()[0]);
    return result;
  }
  const Var<T> ce = cross_entropy(out, labels);
  const Var<T> kl = kl_divergence(out, target, options.temperature);
  result.ce = static_cast<double>(ce.value()[0]);
  result.kl = static_cast<double>(kl.value()[0]);
  result.loss = add(ce, scale(kl, static_cast<T>(options.lambda)));
  return result;
}

template <typename T>
StableKDLoss<T> stablekd_loss(Tape<T>& tape, const Tensor<T>& x,
                              std::span<const std::uint32_t> labels, const Network<T>& teacher,
                              const Network<T>& student, const Decomposition& decomposition,
                              const BlockLossOptions& options) {
  validate(decomposition, teacher, student);
  const TeacherRoute<T> route = route_teacher(teacher, x, decomposition.teacher);
  StableKDLoss<T> result;
  const std::size_t k = decomposition.k();
  for (std::size_t b = 0; b < k; ++b) {
    BlockLoss<T> term = block_loss(tape, student, decomposition.student, route, b, labels, options);
    if (b + 1 < k) {
      result.breakdown.mse_per_block.push_back(term.mse);
    } else {
      result.breakdown.ce = term.ce;
      result.breakdown.kl = term.kl;
    }
    result.terms.push_back(term.loss);
    result.total = b == 0 ? term.loss : add(result.total, term.loss);
  }
  result.breakdown.total = static_cast<double>(result.total.value()[0]);
  return result;
}

#define SKD_INSTANTIATE_LOSSES(T)                                                              \
  template Tensor<T> softmax(const Tensor<T>&, double);                                        \
  template Var<T> cross_entropy(Var<T>, std::span<const std::uint32_t>);                       \
  template Var<T> kl_divergence(Var<T>, Var<T>, double);                                       \
  template Var<T> mse_feature(Var<T>, Var<T>);                                                 \
  template Var<T> vanilla_kd_loss(Var<T>, Var<T>, std::span<const std::uint32_t>, double,      \
                                  double);                                                     \
  template TeacherRoute<T> route_teacher(const Network<T>&, const Tensor<T>&,                  \
                                         const Partition&);                                    \
  template BlockLoss<T> block_loss(Tape<T>&, const Network<T>&, const Partition&,              \
                                   const TeacherRoute<T>&, std::size_t,                        \
                                   std::span<const std::uint32_t>, const BlockLossOptions&);   \
  template StableKDLoss<T> stablekd_loss(Tape<T>&, const Tensor<T>&,                           \
                                         std::span<const std::uint32_t>, const Network<T>&,    \
                                         const Network<T>&, const Decomposition&,              \
                                         const BlockLossOptions&);

SKD_INSTANTIATE_LOSSES(float)
SKD_INSTANTIATE_LOSSES(double)

#undef SKD_INSTANTIATE_LOSSES

}  // namespace skd
