#pragma once

#include <cstddef>
#include <vector>

#include "stablekd/autodiff.hpp"
#include "stablekd/network.hpp"

namespace skd {

struct OptimConfig {
  double max_lr = 0.5;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  std::size_t batch_size = 128;

  /// Throws ConfigError for non-positive lr/batch, momentum outside [0,1) or
  /// negative decay.
  void validate() const;

  static OptimConfig stablekd_defaults() { return {}; }
  static OptimConfig baseline_defaults() { return {0.1, 0.9, 5e-4, 128}; }
};

/// Momentum velocity per parameter slot of one network. Slots are touched
/// only through their own index, so distinct slots may be stepped from
/// different threads.
template <typename T>
class MomentumBuffers {
 public:
  MomentumBuffers() = default;
  /// One zeroed buffer per trainable parameter; frozen ones get none.
  explicit MomentumBuffers(const Network<T>& net);

  bool has(std::size_t slot) const { return slot < buffers_.size() && !buffers_[slot].empty(); }
  Tensor<T>& at(std::size_t slot);
  void reset();

 private:
  std::vector<Tensor<T>> buffers_;
};

/// v ← momentum·v + (g + weight_decay·θ); θ ← θ − lr·v for every listed
/// parameter slot. `grads` must hold exactly the ids of those parameters.
template <typename T>
void sgd_step(Network<T>& net, const std::vector<std::size_t>& slots, const GradientMap<T>& grads,
              MomentumBuffers<T>& buffers, double lr, double momentum, double weight_decay);

}  // namespace skd
