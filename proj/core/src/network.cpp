#include "stablekd/network.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>

#include <json.hpp>

#include "stablekd/errors.hpp"
#include "stablekd/ops.hpp"
#include "stablekd/partition.hpp"
#include "stablekd/random.hpp"

namespace skd {

const char* layer_kind_name(LayerKind kind) noexcept {
  switch (kind) {
    case LayerKind::Affine: return "affine";
    case LayerKind::Conv2d: return "conv2d";
    case LayerKind::Relu: return "relu";
    case LayerKind::AvgPool2d: return "avgpool2d";
    case LayerKind::Flatten: return "flatten";
    case LayerKind::Projector1x1: return "projector1x1";
  }
  return "unknown";
}

LayerKind parse_layer_kind(const std::string& name) {
  for (LayerKind k : {LayerKind::Affine, LayerKind::Conv2d, LayerKind::Relu, LayerKind::AvgPool2d,
                      LayerKind::Flatten, LayerKind::Projector1x1}) {
    if (name == layer_kind_name(k)) return k;
  }
  throw ConfigError("unknown layer kind '" + name + "'");
}

LayerSpec LayerSpec::affine(std::size_t out_features) {
  return {LayerKind::Affine, out_features, 0, 1, 0, 0};
}
LayerSpec LayerSpec::conv2d(std::size_t out_channels, std::size_t kernel, std::size_t stride,
                            std::size_t padding) {
  return {LayerKind::Conv2d, out_channels, kernel, stride, padding, 0};
}
LayerSpec LayerSpec::relu() { return {LayerKind::Relu, 0, 0, 1, 0, 0}; }
LayerSpec LayerSpec::avgpool2d(std::size_t window) {
  return {LayerKind::AvgPool2d, 0, 0, 1, 0, window};
}
LayerSpec LayerSpec::flatten() { return {LayerKind::Flatten, 0, 0, 1, 0, 0}; }
LayerSpec LayerSpec::projector(std::size_t out_width) {
  return {LayerKind::Projector1x1, out_width, 1, 1, 0, 0};
}

std::size_t feature_width(const Shape& sample_shape) {
  if (sample_shape.rank() == 0) return 0;
  return sample_shape[0];
}

namespace {

struct ParamShapes {
  std::optional<Shape> weight;
  std::optional<Shape> bias;
  std::size_t fan_in = 0;
};

std::string layer_error(std::size_t index, const LayerSpec& spec, const std::string& why) {
  return "layer " + std::to_string(index) + " (" + layer_kind_name(spec.kind) + "): " + why;
}

// Computes the output sample shape of one layer and its parameter shapes.
Shape infer_layer(std::size_t index, const LayerSpec& spec, const Shape& in, ParamShapes& ps) {
  const bool image = in.rank() == 3;
  switch (spec.kind) {
    case LayerKind::Affine:
      if (in.rank() != 1) {
        throw ConfigError(layer_error(index, spec, "expects flat input, got " + in.str() +
                                                       " (missing flatten?)"));
      }
      if (spec.out == 0) throw ConfigError(layer_error(index, spec, "zero output features"));
      ps.weight = Shape{in[0], spec.out};
      ps.bias = Shape{spec.out};
      ps.fan_in = in[0];
      return Shape{spec.out};
    case LayerKind::Conv2d: {
      if (!image) throw ConfigError(layer_error(index, spec, "expects [C×H×W] input, got " + in.str()));
      if (spec.out == 0 || spec.kernel == 0) {
        throw ConfigError(layer_error(index, spec, "zero channels or kernel extent"));
      }
      std::size_t oh = 0, ow = 0;
      try {
        oh = conv_output_extent(in[1], spec.kernel, spec.stride, spec.padding);
        ow = conv_output_extent(in[2], spec.kernel, spec.stride, spec.padding);
      } catch (const ConfigError& e) {
        throw ConfigError(layer_error(index, spec, e.what()));
      }
      ps.weight = Shape{spec.out, in[0], spec.kernel, spec.kernel};
      ps.bias = Shape{spec.out};
      ps.fan_in = in[0] * spec.kernel * spec.kernel;
      return Shape{spec.out, oh, ow};
    }
    case LayerKind::Projector1x1:
      if (spec.out == 0) throw ConfigError(layer_error(index, spec, "zero output width"));
      if (image) {
        ps.weight = Shape{spec.out, in[0], 1, 1};
        ps.bias = Shape{spec.out};
        ps.fan_in = in[0];
        return Shape{spec.out, in[1], in[2]};
      }
      if (in.rank() != 1) throw ConfigError(layer_error(index, spec, "unsupported input " + in.str()));
      ps.weight = Shape{in[0], spec.out};
      ps.bias = Shape{spec.out};
      ps.fan_in = in[0];
      return Shape{spec.out};
    case LayerKind::Relu:
      return in;
    case LayerKind::AvgPool2d:
      if (!image) throw ConfigError(layer_error(index, spec, "expects [C×H×W] input, got " + in.str()));
      if (spec.window == 0 || in[1] % spec.window != 0 || in[2] % spec.window != 0) {
        throw ConfigError(layer_error(index, spec, "window " + std::to_string(spec.window) +
                                                       " does not divide " + in.str()));
      }
      return Shape{in[0], in[1] / spec.window, in[2] / spec.window};
    case LayerKind::Flatten:
      return Shape{in.numel()};
  }
  throw ConfigError(layer_error(index, spec, "unknown kind"));
}

}  // namespace

template <typename T>
Network<T> Network<T>::build(std::vector<LayerSpec> specs, Shape input_shape, std::size_t classes) {
  if (specs.empty()) throw ConfigError("network needs at least an affine head layer");
  if (input_shape.rank() != 1 && input_shape.rank() != 3) {
    throw ConfigError("input shape must be [D] or [C×H×W], got " + input_shape.str());
  }
  if (classes < 2) throw ConfigError("class count must be at least 2");

  Network net;
  net.classes_ = classes;
  net.shapes_.push_back(input_shape);
  for (std::size_t i = 0; i < specs.size(); ++i) {
    ParamShapes ps;
    net.shapes_.push_back(infer_layer(i, specs[i], net.shapes_.back(), ps));
    LayerParams lp;
    const std::string prefix = "layer" + std::to_string(i) + "." + layer_kind_name(specs[i].kind);
    if (ps.weight) {
      lp.weight = net.params_.size();
      net.params_.push_back({prefix + ".weight", Tensor<T>(*ps.weight), true});
    }
    if (ps.bias) {
      lp.bias = net.params_.size();
      net.params_.push_back({prefix + ".bias", Tensor<T>(*ps.bias), true});
    }
    net.layer_params_.push_back(lp);
  }
  const LayerSpec& last = specs.back();
  if (last.kind != LayerKind::Affine) {
    throw ConfigError("layer " + std::to_string(specs.size() - 1) +
                      ": final layer must be an affine head");
  }
  if (last.out != classes) {
    throw ConfigError("layer " + std::to_string(specs.size() - 1) + ": head produces " +
                      std::to_string(last.out) + " logits for " + std::to_string(classes) +
                      " classes");
  }
  net.specs_ = std::move(specs);
  return net;
}

template <typename T>
void Network<T>::init_params(std::uint64_t seed) {
  init_layers(seed, 0, specs_.size());
}

template <typename T>
void Network<T>::init_layers(std::uint64_t seed, std::size_t begin, std::size_t end) {
  if (begin > end || end > specs_.size()) {
    throw ContractError("init_layers: range [" + std::to_string(begin) + ", " +
                        std::to_string(end) + ") outside " + std::to_string(specs_.size()) +
                        " layers");
  }
  Rng rng(seed);
  for (std::size_t layer = begin; layer < end; ++layer) {
    const LayerParams& lp = layer_params_[layer];
    if (lp.weight) {
      Parameter<T>& w = params_[*lp.weight];
      const Shape& s = w.value.shape();
      const std::size_t fan_in = s.rank() == 4 ? s[1] * s[2] * s[3] : s[0];
      const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
      for (T& v : w.value.values()) v = static_cast<T>(rng.uniform(-bound, bound));
    }
    if (lp.bias) {
      for (T& v : params_[*lp.bias].value.values()) v = T{0};
    }
  }
}

template <typename T>
std::vector<std::size_t> Network<T>::parameter_indices(std::size_t begin, std::size_t end) const {
  std::vector<std::size_t> out;
  for (std::size_t layer = begin; layer < end && layer < layer_params_.size(); ++layer) {
    if (layer_params_[layer].weight) out.push_back(*layer_params_[layer].weight);
    if (layer_params_[layer].bias) out.push_back(*layer_params_[layer].bias);
  }
  return out;
}

template <typename T>
std::size_t Network<T>::parameter_count() const noexcept {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.value.numel();
  return n;
}

template <typename T>
std::size_t Network<T>::parameter_count(std::size_t begin, std::size_t end) const {
  std::size_t n = 0;
  for (std::size_t i : parameter_indices(begin, end)) n += params_[i].value.numel();
  return n;
}

template <typename T>
Parameter<T>* Network<T>::find(const std::string& id) {
  for (auto& p : params_) {
    if (p.id == id) return &p;
  }
  return nullptr;
}

template <typename T>
const Parameter<T>* Network<T>::find(const std::string& id) const {
  for (const auto& p : params_) {
    if (p.id == id) return &p;
  }
  return nullptr;
}

template <typename T>
void Network<T>::freeze() {
  for (auto& p : params_) p.trainable = false;
}

template <typename T>
bool Network<T>::frozen() const noexcept {
  for (const auto& p : params_) {
    if (p.trainable) return false;
  }
  return true;
}

template <typename T>
Var<T> Network<T>::forward_layers(Var<T> x, std::size_t begin, std::size_t end) const {
  if (begin > end || end > specs_.size()) {
    throw ContractError("layer range [" + std::to_string(begin) + ", " + std::to_string(end) +
                        ") outside a " + std::to_string(specs_.size()) + "-layer network");
  }
  const Shape expected = shapes_.at(begin).with_batch(x.shape()[0]);
  if (x.shape() != expected) {
    throw DimensionError("layer " + std::to_string(begin) + " expects input " + expected.str() +
                         ", got " + x.shape().str());
  }
  Tape<T>& tape = x.tape();
  for (std::size_t layer = begin; layer < end; ++layer) {
    const LayerSpec& spec = specs_[layer];
    const LayerParams& lp = layer_params_[layer];
    switch (spec.kind) {
      case LayerKind::Affine:
        x = affine(x, tape.parameter(params_[*lp.weight]), tape.parameter(params_[*lp.bias]));
        break;
      case LayerKind::Conv2d:
        x = add_channel_bias(conv2d(x, tape.parameter(params_[*lp.weight]), spec.stride, spec.padding),
                             tape.parameter(params_[*lp.bias]));
        break;
      case LayerKind::Projector1x1:
        if (x.shape().rank() == 4) {
          x = add_channel_bias(conv2d(x, tape.parameter(params_[*lp.weight]), 1, 0),
                               tape.parameter(params_[*lp.bias]));
        } else {
          x = affine(x, tape.parameter(params_[*lp.weight]), tape.parameter(params_[*lp.bias]));
        }
        break;
      case LayerKind::Relu:
        x = relu(x);
        break;
      case LayerKind::AvgPool2d:
        x = avgpool2d(x, spec.window);
        break;
      case LayerKind::Flatten:
        x = flatten(x);
        break;
    }
  }
  return x;
}

template <typename T>
Tensor<T> Network<T>::evaluate(const Tensor<T>& x, std::size_t begin, std::size_t end) const {
  if (begin == end) return x;
  Tape<T> tape;
  Var<T> out = forward_layers(tape.constant(x), begin, end);
  return out.value();
}

template <typename T>
Activation<T> forward_prefix(const Network<T>& net, const Tensor<T>& x, std::size_t through_block,
                             const Partition& partition) {
  if (through_block > partition.k()) {
    throw ContractError("forward_prefix: block " + std::to_string(through_block) +
                        " out of range for k = " + std::to_string(partition.k()));
  }
  const std::size_t end = partition.prefix_end(through_block);
  return {net.evaluate(x, 0, end), end};
}

template <typename T>
ProjectedStudent<T> insert_projectors(const Network<T>& student, const Network<T>& teacher,
                                      const Partition& student_partition,
                                      const Partition& teacher_partition) {
  if (student_partition.k() != teacher_partition.k()) {
    throw IncompatibilityError("teacher has " + std::to_string(teacher_partition.k()) +
                               " blocks, student " + std::to_string(student_partition.k()));
  }
  if (student.classes() != teacher.classes()) {
    throw IncompatibilityError("teacher and student class counts differ");
  }
  const std::size_t k = student_partition.k();
  std::vector<LayerSpec> specs;
  std::vector<std::size_t> ends;
  std::size_t inserted = 0;
  for (std::size_t b = 0; b < k; ++b) {
    for (std::size_t l = student_partition.block_begin(b); l < student_partition.block_end(b); ++l) {
      specs.push_back(student.spec(l));
    }
    if (b + 1 < k) {
      const Shape& s = student.shape_after(student_partition.block_end(b));
      const Shape& t = teacher.shape_after(teacher_partition.block_end(b));
      if (s != t) {
        const bool same_space =
            s.rank() == t.rank() && (s.rank() == 1 || (s[1] == t[1] && s[2] == t[2]));
        if (!same_space) {
          throw IncompatibilityError("block " + std::to_string(b + 1) + " boundary: student " +
                                     s.str() + " vs teacher " + t.str() +
                                     " differ in spatial extent");
        }
        specs.push_back(LayerSpec::projector(t[0]));
        ++inserted;
      }
    }
    ends.push_back(specs.size());
  }
  if (inserted == 0) return {student, student_partition.ends(), 0};
  return {Network<T>::build(std::move(specs), student.input_shape(), student.classes()),
          std::move(ends), inserted};
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_f32(std::vector<std::uint8_t>& out, float f) {
  std::uint32_t bits;
  std::memcpy(&bits, &f, sizeof bits);
  put_u32(out, bits);
}

class Reader {
 public:
  explicit Reader(const std::vector<std::uint8_t>& bytes) : bytes_(bytes) {}

  bool done() const noexcept { return pos_ == bytes_.size(); }
  std::size_t pos() const noexcept { return pos_; }

  void need(std::size_t n, const char* what) const {
    if (bytes_.size() - pos_ < n) {
      throw FormatError(std::string("truncated checkpoint reading ") + what, pos_);
    }
  }
  std::uint8_t u8(const char* what) {
    need(1, what);
    return bytes_[pos_++];
  }
  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }
  float f32(const char* what) {
    const std::uint32_t bits = u32(what);
    float f;
    std::memcpy(&f, &bits, sizeof f);
    return f;
  }
  std::string str(std::size_t n, const char* what) {
    need(n, what);
    std::string s(bytes_.begin() + static_cast<long>(pos_), bytes_.begin() + static_cast<long>(pos_ + n));
    pos_ += n;
    return s;
  }

 private:
  const std::vector<std::uint8_t>& bytes_;
  std::size_t pos_ = 0;
};

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("failed writing " + path.string());
}

}  // namespace

template <typename T>
std::vector<std::uint8_t> encode_checkpoint(const Network<T>& net) {
  std::vector<std::uint8_t> out{'S', 'K', 'D', 'W', kCheckpointVersion};
  for (const auto& p : net.parameters()) {
    put_u32(out, static_cast<std::uint32_t>(p.id.size()));
    out.insert(out.end(), p.id.begin(), p.id.end());
    const auto& dims = p.value.shape().dims();
    put_u32(out, static_cast<std::uint32_t>(dims.size()));
    for (std::size_t d : dims) put_u32(out, static_cast<std::uint32_t>(d));
    for (T v : p.value.values()) put_f32(out, static_cast<float>(v));
  }
  return out;
}

template <typename T>
void decode_checkpoint(Network<T>& net, const std::vector<std::uint8_t>& bytes) {
  Reader r(bytes);
  if (r.str(4, "magic") != "SKDW") throw FormatError("bad checkpoint magic", 0);
  const std::uint8_t version = r.u8("version");
  if (version != kCheckpointVersion) {
    throw FormatError("unsupported checkpoint version " + std::to_string(version), 4);
  }
  std::size_t loaded = 0;
  while (!r.done()) {
    const std::size_t at = r.pos();
    const std::uint32_t id_len = r.u32("id length");
    const std::string id = r.str(id_len, "parameter id");
    const std::uint32_t rank = r.u32("rank");
    if (rank == 0 || rank > 8) throw FormatError("implausible rank " + std::to_string(rank), at);
    std::vector<std::size_t> dims;
    for (std::uint32_t i = 0; i < rank; ++i) {
      const std::uint32_t d = r.u32("extent");
      if (d == 0) throw FormatError("zero extent in '" + id + "'", r.pos() - 4);
      dims.push_back(d);
    }
    Parameter<T>* p = net.find(id);
    if (!p) throw FormatError("checkpoint parameter '" + id + "' not in network", at);
    if (p->value.shape().dims() != dims) {
      throw FormatError("checkpoint parameter '" + id + "' has shape " + Shape(dims).str() +
                            ", network expects " + p->value.shape().str(),
                        at);
    }
    r.need(p->value.numel() * 4, "elements");
    for (T& v : p->value.values()) v = static_cast<T>(r.f32("element"));
    ++loaded;
  }
  if (loaded != net.parameters().size()) {
    throw FormatError("checkpoint holds " + std::to_string(loaded) + " of " +
                          std::to_string(net.parameters().size()) + " parameters",
                      bytes.size());
  }
}

template <typename T>
void save_checkpoint(const Network<T>& net, const std::filesystem::path& path) {
  write_file(path, encode_checkpoint(net));
}

template <typename T>
void load_checkpoint(Network<T>& net, const std::filesystem::path& path) {
  decode_checkpoint(net, read_file(path));
}

template <typename T>
std::string checkpoint_hash(const Network<T>& net) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (std::uint8_t b : encode_checkpoint(net)) {
    h ^= b;
    h *= 0x100000001b3ULL;
  }
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << h;
  return os.str();
}

// ---------------------------------------------------------------------------
// Architecture files

Architecture parse_architecture(const std::string& json_text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(json_text);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("architecture: ") + e.what());
  }
  Architecture arch;
  try {
    arch.input_shape = Shape(j.at("input_shape").get<std::vector<std::size_t>>());
    arch.classes = j.at("classes").get<std::size_t>();
    const auto& layers = j.at("layers");
    for (std::size_t i = 0; i < layers.size(); ++i) {
      const auto& l = layers[i];
      LayerSpec spec;
      spec.kind = parse_layer_kind(l.at("kind").get<std::string>());
      spec.out = l.value("out", std::size_t{0});
      spec.kernel = l.value("kernel", spec.kind == LayerKind::Projector1x1 ? std::size_t{1} : 0);
      spec.stride = l.value("stride", std::size_t{1});
      spec.padding = l.value("padding", std::size_t{0});
      spec.window = l.value("window", std::size_t{0});
      arch.layers.push_back(spec);
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("architecture: ") + e.what());
  }
  return arch;
}

Architecture load_architecture(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open architecture file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_architecture(ss.str());
}

std::string architecture_json(const Architecture& arch) {
  nlohmann::json j;
  j["input_shape"] = arch.input_shape.dims();
  j["classes"] = arch.classes;
  j["layers"] = nlohmann::json::array();
  for (const auto& l : arch.layers) {
    nlohmann::json e{{"kind", layer_kind_name(l.kind)}};
    switch (l.kind) {
      case LayerKind::Affine:
      case LayerKind::Projector1x1:
        e["out"] = l.out;
        break;
      case LayerKind::Conv2d:
        e["out"] = l.out;
        e["kernel"] = l.kernel;
        e["stride"] = l.stride;
        e["padding"] = l.padding;
        break;
      case LayerKind::AvgPool2d:
        e["window"] = l.window;
        break;
      default:
        break;
    }
    j["layers"].push_back(e);
  }
  return j.dump(2);
}

#define SKD_INSTANTIATE_NETWORK(T)                                                              \
  template class Network<T>;                                                                    \
  template Activation<T> forward_prefix(const Network<T>&, const Tensor<T>&, std::size_t,      \
                                        const Partition&);                                      \
  template ProjectedStudent<T> insert_projectors(const Network<T>&, const Network<T>&,         \
                                                 const Partition&, const Partition&);           \
  template std::vector<std::uint8_t> encode_checkpoint(const Network<T>&);                      \
  template void decode_checkpoint(Network<T>&, const std::vector<std::uint8_t>&);               \
  template void save_checkpoint(const Network<T>&, const std::filesystem::path&);               \
  template void load_checkpoint(Network<T>&, const std::filesystem::path&);                     \
  template std::string checkpoint_hash(const Network<T>&);

SKD_INSTANTIATE_NETWORK(float)
SKD_INSTANTIATE_NETWORK(double)

#undef SKD_INSTANTIATE_NETWORK

}  // namespace skd
