#include "stablekd/datasets.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>

#include "stablekd/errors.hpp"
#include "stablekd/random.hpp"

namespace skd {

template <typename T>
Tensor<T> Dataset::gather(const std::vector<std::size_t>& indices) const {
  if (indices.empty()) throw ContractError("gather: empty index list");
  const std::size_t d = sample_size();
  std::vector<T> out;
  out.reserve(indices.size() * d);
  for (std::size_t i : indices) {
    if (i >= size()) throw ContractError("gather: sample index out of range");
    const float* src = features.data() + i * d;
    for (std::size_t j = 0; j < d; ++j) out.push_back(static_cast<T>(src[j]));
  }
  return Tensor<T>(sample_shape.with_batch(indices.size()), std::move(out));
}

template Tensor<float> Dataset::gather(const std::vector<std::size_t>&) const;
template Tensor<double> Dataset::gather(const std::vector<std::size_t>&) const;

std::vector<std::uint32_t> Dataset::gather_labels(const std::vector<std::size_t>& indices) const {
  std::vector<std::uint32_t> out;
  out.reserve(indices.size());
  for (std::size_t i : indices) out.push_back(labels.at(i));
  return out;
}

Dataset Dataset::subset(const std::vector<std::size_t>& indices) const {
  Dataset out;
  out.sample_shape = sample_shape;
  out.classes = classes;
  out.split = split;
  const std::size_t d = sample_size();
  out.features.reserve(indices.size() * d);
  for (std::size_t i : indices) {
    const auto first = features.begin() + static_cast<long>(i * d);
    out.features.insert(out.features.end(), first, first + static_cast<long>(d));
    out.labels.push_back(labels.at(i));
  }
  return out;
}

std::vector<std::size_t> Dataset::class_counts() const {
  std::vector<std::size_t> counts(classes, 0);
  for (std::uint32_t l : labels) ++counts.at(l);
  return counts;
}

// ---------------------------------------------------------------------------
// Generators

std::pair<double, double> spiral_point(std::size_t classes, std::size_t c, double t) {
  const double angle =
      2.0 * std::numbers::pi * static_cast<double>(c) / static_cast<double>(classes) +
      3.0 * std::numbers::pi * t;
  const double radius = 0.1 + 0.9 * t;
  return {radius * std::cos(angle), radius * std::sin(angle)};
}

Dataset gen_spirals(std::size_t classes, std::size_t per_class, double noise_sigma,
                    std::uint64_t seed) {
  if (classes < 2) throw ConfigError("gen_spirals: need at least 2 classes");
  Rng rng(seed);
  Dataset ds;
  ds.sample_shape = Shape{2};
  ds.classes = classes;
  for (std::size_t c = 0; c < classes; ++c) {
    for (std::size_t i = 0; i < per_class; ++i) {
      const double t = (static_cast<double>(i) + 0.5) / static_cast<double>(per_class);
      auto [x, y] = spiral_point(classes, c, t);
      if (noise_sigma > 0.0) {
        x += noise_sigma * rng.normal();
        y += noise_sigma * rng.normal();
      }
      ds.features.push_back(static_cast<float>(x));
      ds.features.push_back(static_cast<float>(y));
      ds.labels.push_back(static_cast<std::uint32_t>(c));
    }
  }
  return ds;
}

double tile_pixel(std::size_t classes, std::size_t c, std::size_t side, std::size_t y,
                  std::size_t x, double phase) {
  // Orientation sweeps half a turn across classes; odd classes use a finer
  // wavelength so neighbouring orientations stay separable.
  const double angle = std::numbers::pi * static_cast<double>(c) / static_cast<double>(classes);
  const double cycles = (c % 2 == 0) ? 1.5 : 2.5;
  const double u = (static_cast<double>(x) * std::cos(angle) + static_cast<double>(y) * std::sin(angle)) /
                   static_cast<double>(side);
  return 0.5 + 0.35 * std::cos(2.0 * std::numbers::pi * cycles * u + phase);
}

Dataset gen_tiles(std::size_t classes, std::size_t per_class, std::size_t side, double noise_sigma,
                  std::uint64_t seed) {
  if (classes < 2) throw ConfigError("gen_tiles: need at least 2 classes");
  if (side != 8 && side != 16 && side != 32) throw ConfigError("gen_tiles: side must be 8, 16 or 32");
  Rng rng(seed);
  Dataset ds;
  ds.sample_shape = Shape{1, side, side};
  ds.classes = classes;
  for (std::size_t c = 0; c < classes; ++c) {
    for (std::size_t i = 0; i < per_class; ++i) {
      const double phase =
          2.0 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(per_class);
      for (std::size_t y = 0; y < side; ++y) {
        for (std::size_t x = 0; x < side; ++x) {
          double v = tile_pixel(classes, c, side, y, x, phase);
          if (noise_sigma > 0.0) v = std::clamp(v + noise_sigma * rng.normal(), 0.0, 1.0);
          ds.features.push_back(static_cast<float>(v));
        }
      }
      ds.labels.push_back(static_cast<std::uint32_t>(c));
    }
  }
  return ds;
}

// ---------------------------------------------------------------------------
// SKD1 files

namespace {

void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
  out.push_back(static_cast<std::uint8_t>(v));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint32_t get_u32(const std::vector<std::uint8_t>& b, std::size_t at) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[at + i]) << (8 * i);
  return v;
}

struct ImageGeometry {
  std::size_t h, w, c;
};

ImageGeometry geometry(const Shape& s) {
  if (s.rank() == 1) return {1, 1, s[0]};
  if (s.rank() == 3) return {s[1], s[2], s[0]};
  throw ContractError("SKD1: unsupported sample shape " + s.str());
}

}  // namespace

std::vector<std::uint8_t> encode_skd(const Dataset& ds) {
  const ImageGeometry g = geometry(ds.sample_shape);
  if (ds.classes > 65536) throw ContractError("SKD1: labels are 16-bit; too many classes");
  std::vector<std::uint8_t> out{'S', 'K', 'D', '1'};
  put_u32(out, static_cast<std::uint32_t>(ds.size()));
  put_u32(out, static_cast<std::uint32_t>(g.h));
  put_u32(out, static_cast<std::uint32_t>(g.w));
  put_u32(out, static_cast<std::uint32_t>(g.c));
  put_u32(out, static_cast<std::uint32_t>(ds.classes));
  const std::size_t d = ds.sample_size();
  out.reserve(out.size() + ds.size() * (2 + 4 * d));
  for (std::size_t n = 0; n < ds.size(); ++n) {
    if (ds.labels[n] >= ds.classes) throw ContractError("SKD1: label exceeds class count");
    put_u16(out, static_cast<std::uint16_t>(ds.labels[n]));
    const float* sample = ds.features.data() + n * d;
    // Internal images are C,H,W; the file stores H,W,C.
    for (std::size_t y = 0; y < g.h; ++y) {
      for (std::size_t x = 0; x < g.w; ++x) {
        for (std::size_t c = 0; c < g.c; ++c) {
          std::uint32_t bits;
          std::memcpy(&bits, sample + (c * g.h + y) * g.w + x, sizeof bits);
          put_u32(out, bits);
        }
      }
    }
  }
  return out;
}

Dataset decode_skd(const std::vector<std::uint8_t>& bytes) {
  constexpr std::size_t kHeader = 4 + 5 * 4;
  if (bytes.size() < 4) throw FormatError("truncated SKD1 magic", bytes.size());
  if (std::memcmp(bytes.data(), "SKD1", 4) != 0) throw FormatError("bad SKD1 magic", 0);
  if (bytes.size() < kHeader) throw FormatError("truncated SKD1 header", bytes.size());
  const std::size_t n = get_u32(bytes, 4);
  const std::size_t h = get_u32(bytes, 8);
  const std::size_t w = get_u32(bytes, 12);
  const std::size_t c = get_u32(bytes, 16);
  const std::size_t classes = get_u32(bytes, 20);
  if (h == 0 || w == 0 || c == 0) throw FormatError("zero image extent in SKD1 header", 8);
  if (classes == 0) throw FormatError("zero class count in SKD1 header", 20);

  Dataset ds;
  ds.classes = classes;
  ds.sample_shape = (h == 1 && w == 1) ? Shape{c} : Shape{c, h, w};
  const std::size_t d = h * w * c;
  const std::size_t record = 2 + 4 * d;
  const std::size_t whole_records = (bytes.size() - kHeader) / record;
  if (n > whole_records) {
    throw FormatError("truncated SKD1 record " + std::to_string(whole_records) + " of " +
                          std::to_string(n),
                      kHeader + whole_records * record);
  }
  ds.features.resize(n * d);
  ds.labels.resize(n);
  std::size_t pos = kHeader;
  for (std::size_t i = 0; i < n; ++i) {
    const std::uint32_t label = bytes[pos] | (static_cast<std::uint32_t>(bytes[pos + 1]) << 8);
    if (label >= classes) {
      throw FormatError("label " + std::to_string(label) + " >= class count " +
                            std::to_string(classes),
                        pos);
    }
    ds.labels[i] = label;
    pos += 2;
    float* sample = ds.features.data() + i * d;
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < w; ++x) {
        for (std::size_t ch = 0; ch < c; ++ch) {
          const std::uint32_t bits = get_u32(bytes, pos);
          std::memcpy(sample + (ch * h + y) * w + x, &bits, sizeof bits);
          pos += 4;
        }
      }
    }
  }
  if (pos != bytes.size()) throw FormatError("trailing bytes after SKD1 records", pos);
  return ds;
}

void save_skd(const Dataset& dataset, const std::filesystem::path& path) {
  const auto bytes = encode_skd(dataset);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("failed writing " + path.string());
}

Dataset load_skd(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open dataset " + path.string());
  const std::vector<std::uint8_t> bytes{std::istreambuf_iterator<char>(in),
                                        std::istreambuf_iterator<char>()};
  return decode_skd(bytes);
}

// ---------------------------------------------------------------------------
// Sampling

namespace {

std::vector<std::vector<std::size_t>> indices_by_class(const Dataset& ds) {
  std::vector<std::vector<std::size_t>> by_class(ds.classes);
  for (std::size_t i = 0; i < ds.size(); ++i) by_class.at(ds.labels[i]).push_back(i);
  return by_class;
}

}  // namespace

Dataset stratified_subset(const Dataset& dataset, double fraction, std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction <= 1.0)) {
    throw DataError("subset fraction must lie in (0, 1], got " + std::to_string(fraction));
  }
  auto by_class = indices_by_class(dataset);
  std::vector<std::size_t> chosen;
  for (std::size_t c = 0; c < by_class.size(); ++c) {
    auto& members = by_class[c];
    // The per-class order depends on the seed only, so smaller fractions
    // take prefixes of larger ones.
    Rng rng(derive_seed(seed, c));
    rng.shuffle(members);
    const auto keep = static_cast<std::size_t>(
        std::floor(fraction * static_cast<double>(members.size()) + 0.5));
    if (keep == 0) {
      throw DataError("subset fraction " + std::to_string(fraction) + " keeps no samples of class " +
                      std::to_string(c));
    }
    chosen.insert(chosen.end(), members.begin(), members.begin() + static_cast<long>(keep));
  }
  Rng order(derive_seed(seed, 0x5ab5e7ULL));
  order.shuffle(chosen);
  return dataset.subset(chosen);
}

std::vector<std::vector<std::size_t>> batches(std::size_t n, std::size_t batch_size,
                                              std::uint64_t epoch_seed) {
  if (batch_size == 0) throw ConfigError("batch size must be positive");
  Rng rng(epoch_seed);
  const std::vector<std::size_t> order = permutation(n, rng);
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t start = 0; start < n; start += batch_size) {
    const std::size_t end = std::min(n, start + batch_size);
    out.emplace_back(order.begin() + static_cast<long>(start), order.begin() + static_cast<long>(end));
  }
  return out;
}

std::pair<Dataset, Dataset> train_val_split(const Dataset& dataset, double val_fraction,
                                            std::uint64_t seed) {
  if (!(val_fraction > 0.0 && val_fraction < 1.0)) {
    throw ConfigError("validation fraction must lie in (0, 1)");
  }
  auto by_class = indices_by_class(dataset);
  std::vector<std::size_t> train, val;
  for (std::size_t c = 0; c < by_class.size(); ++c) {
    auto& members = by_class[c];
    Rng rng(derive_seed(seed ^ 0x7a11ULL, c));
    rng.shuffle(members);
    const auto nval = static_cast<std::size_t>(
        std::floor(val_fraction * static_cast<double>(members.size()) + 0.5));
    val.insert(val.end(), members.begin(), members.begin() + static_cast<long>(nval));
    train.insert(train.end(), members.begin() + static_cast<long>(nval), members.end());
  }
  Dataset tr = dataset.subset(train);
  Dataset va = dataset.subset(val);
  tr.split = Split::Train;
  va.split = Split::Val;
  return {std::move(tr), std::move(va)};
}

}  // namespace skd
