#include "stablekd/autodiff.hpp"

#include "stablekd/errors.hpp"

namespace skd {

const char* op_name(OpKind kind) noexcept {
  switch (kind) {
    case OpKind::Leaf: return "leaf";
    case OpKind::MatMul: return "matmul";
    case OpKind::Add: return "add";
    case OpKind::AddRowBias: return "add_row_bias";
    case OpKind::AddChannelBias: return "add_channel_bias";
    case OpKind::Conv2d: return "conv2d";
    case OpKind::Relu: return "relu";
    case OpKind::AvgPool2d: return "avgpool2d";
    case OpKind::Reshape: return "reshape";
    case OpKind::Sum: return "sum";
    case OpKind::Scale: return "scale";
    case OpKind::Mul: return "mul";
    case OpKind::CrossEntropy: return "cross_entropy";
    case OpKind::KlDivergence: return "kl_divergence";
    case OpKind::Mse: return "mse";
  }
  return "unknown";
}

template <typename T>
Var<T> Tape<T>::constant(Tensor<T> value) {
  Node node;
  node.value = std::move(value);
  nodes_.push_back(std::move(node));
  return Var<T>(this, nodes_.size() - 1);
}

template <typename T>
Var<T> Tape<T>::parameter(const Parameter<T>& param) {
  Node node;
  node.value = param.value;
  node.requires_grad = param.trainable;
  nodes_.push_back(std::move(node));
  const std::size_t index = nodes_.size() - 1;
  if (param.trainable) param_leaves_.emplace_back(param.id, index);
  return Var<T>(this, index);
}

template <typename T>
Var<T> Tape<T>::record(Tensor<T> value, OpKind kind, std::vector<std::size_t> parents,
                       BackwardFn backward) {
  Node node;
  node.value = std::move(value);
  node.kind = kind;
  for (std::size_t p : parents) {
    if (p >= nodes_.size()) throw ContractError("tape parent index out of range");
    node.requires_grad = node.requires_grad || nodes_[p].requires_grad;
  }
  // Nodes that cannot reach a trainable leaf keep no backward state.
  if (node.requires_grad) {
    node.parents = std::move(parents);
    node.backward = std::move(backward);
  }
  nodes_.push_back(std::move(node));
  return Var<T>(this, nodes_.size() - 1);
}

template <typename T>
Tensor<T>* Tape<T>::grad_buffer(std::size_t index) {
  Node& node = nodes_.at(index);
  if (!node.requires_grad) return nullptr;
  if (node.grad.empty()) node.grad = Tensor<T>::zeros(node.value.shape());
  return &node.grad;
}

template <typename T>
void Tape<T>::accumulate(std::size_t index, const Tensor<T>& delta) {
  Tensor<T>* g = grad_buffer(index);
  if (!g) return;
  if (g->shape() != delta.shape()) {
    throw ContractError("gradient shape " + delta.shape().str() + " does not match node shape " +
                        g->shape().str());
  }
  auto dst = g->values();
  auto src = delta.values();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

template <typename T>
GradientMap<T> Tape<T>::backward(Var<T> loss) {
  if (&loss.tape() != this) throw ContractError("loss belongs to a different tape");
  const std::size_t root = loss.index();
  if (nodes_.at(root).value.numel() != 1) {
    throw ContractError("backward() needs a scalar loss, got shape " +
                        nodes_[root].value.shape().str());
  }
  for (Node& node : nodes_) node.grad = Tensor<T>();
  if (Tensor<T>* g = grad_buffer(root)) (*g)[0] = T{1};

  for (std::size_t i = root + 1; i-- > 0;) {
    Node& node = nodes_[i];
    if (!node.requires_grad || node.grad.empty() || !node.backward) continue;
    // Parents always precede their child, so rules never write to `upstream`.
    const Tensor<T>& upstream = node.grad;
    node.backward(*this, upstream);
  }

  GradientMap<T> grads;
  for (const auto& [id, index] : param_leaves_) {
    Tensor<T> g = grad(index);
    auto it = grads.find(id);
    if (it == grads.end()) {
      grads.emplace(id, std::move(g));
    } else {
      auto dst = it->second.values();
      for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += g[j];
    }
  }
  return grads;
}

template <typename T>
Tensor<T> Tape<T>::grad(std::size_t index) const {
  const Node& node = nodes_.at(index);
  if (node.grad.empty()) return Tensor<T>::zeros(node.value.shape());
  return node.grad;
}

template class Tape<float>;
template class Tape<double>;

}  // namespace skd
