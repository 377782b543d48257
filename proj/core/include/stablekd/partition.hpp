#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "stablekd/network.hpp"

namespace skd {

/// Decomposition of a layer stack into k contiguous blocks. Stored as the
/// exclusive end layer of every block; the last end equals the layer count.
class Partition {
 public:
  Partition() = default;
  /// Throws ValidationError unless `ends` is non-empty and strictly increasing
  /// from a positive first end.
  explicit Partition(std::vector<std::size_t> ends);

  std::size_t k() const noexcept { return ends_.size(); }
  const std::vector<std::size_t>& ends() const noexcept { return ends_; }
  /// First layer of block `b` (0-based).
  std::size_t block_begin(std::size_t b) const;
  std::size_t block_end(std::size_t b) const;
  /// Number of layers in blocks 1..i; prefix_end(0) == 0.
  std::size_t prefix_end(std::size_t blocks) const;

  std::string str() const;

  friend bool operator==(const Partition&, const Partition&) = default;

 private:
  std::vector<std::size_t> ends_;
};

/// First layer of the classifier head: the final affine, pulled back over a
/// directly preceding flatten.
template <typename T>
std::size_t head_begin(const Network<T>& net);

/// Body cut positions where the feature width changes between consecutive
/// layers (parameter-free layers inherit their input width).
template <typename T>
std::vector<std::size_t> width_change_cuts(const Network<T>& net);

template <typename T>
std::size_t max_blocks(const Network<T>& net);

/// Head as its own block; the body split at width-change cuts chosen to make
/// body-block parameter counts as even as possible (smallest max-min spread,
/// ties toward earlier cuts). Throws ConfigError naming the maximum k.
template <typename T>
Partition make_partition(const Network<T>& net, std::size_t k);

/// Merges blocks (i, i+1) for every odd 1-based i ≤ k-1; an unpaired last
/// block survives. The result has ceil(k/2) blocks.
Partition recompose(const Partition& d);

/// Checks tiling against `net` and that the head sits inside the last block.
template <typename T>
void validate(const Partition& d, const Network<T>& net);

/// Aligned teacher/student partitions with equal block counts.
struct Decomposition {
  Partition teacher;
  Partition student;

  std::size_t k() const noexcept { return student.k(); }
  friend bool operator==(const Decomposition&, const Decomposition&) = default;
};

Decomposition recompose(const Decomposition& d);

/// Validates both partitions and that every student block boundary matches
/// the teacher's boundary shape, which teacher routing requires.
template <typename T>
void validate(const Decomposition& d, const Network<T>& teacher, const Network<T>& student);

}  // namespace skd
