#include "stablekd/optim.hpp"

#include "stablekd/errors.hpp"

namespace skd {

void OptimConfig::validate() const {
  if (!(max_lr > 0.0)) throw ConfigError("max_lr must be positive");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("momentum must lie in [0, 1)");
  if (!(weight_decay >= 0.0)) throw ConfigError("weight_decay must be non-negative");
  if (batch_size == 0) throw ConfigError("batch_size must be positive");
}

template <typename T>
MomentumBuffers<T>::MomentumBuffers(const Network<T>& net) {
  for (const auto& p : net.parameters()) {
    buffers_.push_back(p.trainable ? Tensor<T>::zeros(p.value.shape()) : Tensor<T>());
  }
}

template <typename T>
Tensor<T>& MomentumBuffers<T>::at(std::size_t slot) {
  if (!has(slot)) throw ContractError("no optimizer state for parameter slot " + std::to_string(slot));
  return buffers_[slot];
}

template <typename T>
void MomentumBuffers<T>::reset() {
  for (auto& b : buffers_) {
    for (T& v : b.values()) v = T{0};
  }
}

template <typename T>
void sgd_step(Network<T>& net, const std::vector<std::size_t>& slots, const GradientMap<T>& grads,
              MomentumBuffers<T>& buffers, double lr, double momentum, double weight_decay) {
  if (grads.size() != slots.size()) {
    throw ContractError("sgd_step: " + std::to_string(grads.size()) + " gradients for " +
                        std::to_string(slots.size()) + " parameters");
  }
  const T mu = static_cast<T>(momentum);
  const T wd = static_cast<T>(weight_decay);
  const T step = static_cast<T>(lr);
  for (std::size_t slot : slots) {
    Parameter<T>& p = net.parameters().at(slot);
    if (!p.trainable) throw ContractError("sgd_step: parameter '" + p.id + "' is frozen");
    const auto it = grads.find(p.id);
    if (it == grads.end()) throw ContractError("sgd_step: no gradient for '" + p.id + "'");
    const Tensor<T>& g = it->second;
    if (g.shape() != p.value.shape()) {
      throw ContractError("sgd_step: gradient shape " + g.shape().str() + " for '" + p.id +
                          "' of shape " + p.value.shape().str());
    }
    Tensor<T>& v = buffers.at(slot);
    for (std::size_t i = 0; i < g.numel(); ++i) {
      v[i] = mu * v[i] + (g[i] + wd * p.value[i]);
      p.value[i] -= step * v[i];
    }
  }
}

template class MomentumBuffers<float>;
template class MomentumBuffers<double>;
template void sgd_step(Network<float>&, const std::vector<std::size_t>&, const GradientMap<float>&,
                       MomentumBuffers<float>&, double, double, double);
template void sgd_step(Network<double>&, const std::vector<std::size_t>&,
                       const GradientMap<double>&, MomentumBuffers<double>&, double, double, double);

}  // namespace skd
