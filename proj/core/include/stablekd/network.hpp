#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "stablekd/autodiff.hpp"
#include "stablekd/tensor.hpp"

namespace skd {

enum class LayerKind { Affine, Conv2d, Relu, AvgPool2d, Flatten, Projector1x1 };

const char* layer_kind_name(LayerKind kind) noexcept;
LayerKind parse_layer_kind(const std::string& name);

/// One layer of a sequential stack. Input extents are inferred when the
/// network is built, so a spec only carries output-side hyperparameters.
struct LayerSpec {
  LayerKind kind = LayerKind::Relu;
  std::size_t out = 0;  ///< output features (affine) or channels (conv, projector)
  std::size_t kernel = 0;
  std::size_t stride = 1;
  std::size_t padding = 0;
  std::size_t window = 0;

  static LayerSpec affine(std::size_t out_features);
  static LayerSpec conv2d(std::size_t out_channels, std::size_t kernel, std::size_t stride = 1,
                          std::size_t padding = 0);
  static LayerSpec relu();
  static LayerSpec avgpool2d(std::size_t window);
  static LayerSpec flatten();
  static LayerSpec projector(std::size_t out_width);

  bool has_parameters() const noexcept {
    return kind == LayerKind::Affine || kind == LayerKind::Conv2d ||
           kind == LayerKind::Projector1x1;
  }

  friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

class Partition;

/// Output of a network prefix: the tensor and the number of layers applied.
template <typename T>
struct Activation {
  Tensor<T> tensor;
  std::size_t layer_index = 0;
};

/// Width of a per-sample activation: channels for [C×H×W], features for [D].
std::size_t feature_width(const Shape& sample_shape);

/// Sequential layer stack with its parameter store and a build-time shape
/// table. Teacher and student both instantiate it.
template <typename T>
class Network {
 public:
  /// Validates the shape chain and allocates zeroed parameters. Throws
  /// ConfigError naming the offending layer index.
  static Network build(std::vector<LayerSpec> specs, Shape input_shape, std::size_t classes);

  /// Scaled-uniform fan-in weights (bound sqrt(6 / fan_in)), zero biases.
  void init_params(std::uint64_t seed);
  /// Same scheme for layers [begin, end) only, from a fresh stream of `seed`.
  void init_layers(std::uint64_t seed, std::size_t begin, std::size_t end);

  std::size_t layer_count() const noexcept { return specs_.size(); }
  const std::vector<LayerSpec>& specs() const noexcept { return specs_; }
  const LayerSpec& spec(std::size_t layer) const { return specs_.at(layer); }
  std::size_t classes() const noexcept { return classes_; }
  const Shape& input_shape() const { return shapes_.front(); }
  /// Per-sample shape after `layers` layers; shape_after(0) is the input shape.
  const Shape& shape_after(std::size_t layers) const { return shapes_.at(layers); }

  std::vector<Parameter<T>>& parameters() noexcept { return params_; }
  const std::vector<Parameter<T>>& parameters() const noexcept { return params_; }
  /// Indices into parameters() owned by layers [begin, end).
  std::vector<std::size_t> parameter_indices(std::size_t begin, std::size_t end) const;
  std::size_t parameter_count() const noexcept;
  std::size_t parameter_count(std::size_t begin, std::size_t end) const;
  Parameter<T>* find(const std::string& id);
  const Parameter<T>* find(const std::string& id) const;

  /// Clears every trainable flag.
  void freeze();
  bool frozen() const noexcept;

  /// Applies layers [begin, end) to `x`, binding parameters to x's tape.
  Var<T> forward_layers(Var<T> x, std::size_t begin, std::size_t end) const;
  /// Untracked evaluation of layers [begin, end).
  Tensor<T> evaluate(const Tensor<T>& x, std::size_t begin, std::size_t end) const;
  Tensor<T> evaluate(const Tensor<T>& x) const { return evaluate(x, 0, layer_count()); }

  template <typename U>
  Network<U> cast() const {
    Network<U> out = Network<U>::build(specs_, shapes_.front(), classes_);
    for (std::size_t i = 0; i < params_.size(); ++i) {
      out.parameters()[i].value = params_[i].value.template cast<U>();
      out.parameters()[i].trainable = params_[i].trainable;
    }
    return out;
  }

 private:
  struct LayerParams {
    std::optional<std::size_t> weight;
    std::optional<std::size_t> bias;
  };

  std::vector<LayerSpec> specs_;
  std::vector<Shape> shapes_;
  std::size_t classes_ = 0;
  std::vector<Parameter<T>> params_;
  std::vector<LayerParams> layer_params_;
};

/// Applies blocks 1..through_block of `partition` (block 0 is the identity).
template <typename T>
Activation<T> forward_prefix(const Network<T>& net, const Tensor<T>& x, std::size_t through_block,
                             const Partition& partition);

/// Student after projector insertion, with its block boundaries shifted to
/// cover the inserted layers.
template <typename T>
struct ProjectedStudent {
  Network<T> network;
  std::vector<std::size_t> block_ends;
  std::size_t projectors_inserted = 0;
};

/// Appends a trainable projector to every student block whose output width
/// differs from the teacher's at the same boundary. Spatial extents must
/// already agree. When nothing is inserted the student is returned as is;
/// otherwise the rebuilt network carries fresh (zero) parameters.
template <typename T>
ProjectedStudent<T> insert_projectors(const Network<T>& student, const Network<T>& teacher,
                                      const Partition& student_partition,
                                      const Partition& teacher_partition);

/// SKDW checkpoint: "SKDW", version byte, then per parameter
/// {u32 id length, id bytes, u32 rank, u32 extents..., f32 elements...},
/// all little-endian.
inline constexpr std::uint8_t kCheckpointVersion = 1;

template <typename T>
std::vector<std::uint8_t> encode_checkpoint(const Network<T>& net);
/// Loads values into matching parameter ids; shapes must match exactly.
template <typename T>
void decode_checkpoint(Network<T>& net, const std::vector<std::uint8_t>& bytes);

template <typename T>
void save_checkpoint(const Network<T>& net, const std::filesystem::path& path);
template <typename T>
void load_checkpoint(Network<T>& net, const std::filesystem::path& path);

/// FNV-1a over the encoded checkpoint, as 16 hex digits.
template <typename T>
std::string checkpoint_hash(const Network<T>& net);

/// Architecture file: {"input_shape": [...], "classes": n, "layers": [{"kind": ...}, ...]}.
struct Architecture {
  std::vector<LayerSpec> layers;
  Shape input_shape;
  std::size_t classes = 0;
};

Architecture parse_architecture(const std::string& json_text);
Architecture load_architecture(const std::filesystem::path& path);
std::string architecture_json(const Architecture& arch);

extern template class Network<float>;
extern template class Network<double>;

}  // namespace skd
