#include "stablekd/partition.hpp"

#include <algorithm>
#include <limits>
#include <sstream>

#include "stablekd/errors.hpp"

namespace skd {

Partition::Partition(std::vector<std::size_t> ends) : ends_(std::move(ends)) {
  if (ends_.empty()) throw ValidationError("partition needs at least one block (k >= 1)");
  std::size_t prev = 0;
  for (std::size_t i = 0; i < ends_.size(); ++i) {
    if (ends_[i] <= prev) {
      throw ValidationError("partition " + str() + ": block " + std::to_string(i + 1) +
                            " is empty or overlaps its predecessor");
    }
    prev = ends_[i];
  }
}

std::size_t Partition::block_begin(std::size_t b) const {
  if (b >= ends_.size()) throw ContractError("block index " + std::to_string(b) + " out of range");
  return b == 0 ? 0 : ends_[b - 1];
}

std::size_t Partition::block_end(std::size_t b) const {
  if (b >= ends_.size()) throw ContractError("block index " + std::to_string(b) + " out of range");
  return ends_[b];
}

std::size_t Partition::prefix_end(std::size_t blocks) const {
  if (blocks > ends_.size()) {
    throw ContractError("prefix of " + std::to_string(blocks) + " blocks exceeds k = " +
                        std::to_string(ends_.size()));
  }
  return blocks == 0 ? 0 : ends_[blocks - 1];
}

std::string Partition::str() const {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < ends_.size(); ++i) os << (i ? "," : "") << ends_[i];
  os << ']';
  return os.str();
}

template <typename T>
std::size_t head_begin(const Network<T>& net) {
  const std::size_t last = net.layer_count() - 1;
  if (last > 0 && net.spec(last - 1).kind == LayerKind::Flatten) return last - 1;
  return last;
}

template <typename T>
std::vector<std::size_t> width_change_cuts(const Network<T>& net) {
  const std::size_t body = head_begin(net);
  std::vector<std::size_t> cuts;
  for (std::size_t p = 1; p < body; ++p) {
    // shape_after(p) is the input of layer p, shape_after(p + 1) its output.
    if (feature_width(net.shape_after(p + 1)) != feature_width(net.shape_after(p))) {
      cuts.push_back(p);
    }
  }
  return cuts;
}

template <typename T>
std::size_t max_blocks(const Network<T>& net) {
  if (head_begin(net) == 0) return 1;
  return 2 + width_change_cuts(net).size();
}

template <typename T>
Partition make_partition(const Network<T>& net, std::size_t k) {
  const std::size_t layers = net.layer_count();
  const std::size_t limit = max_blocks(net);
  if (k < 1 || k > limit) {
    throw ConfigError("k = " + std::to_string(k) + " is infeasible for this architecture; maximum k is " +
                      std::to_string(limit));
  }
  if (k == 1) return Partition({layers});
  const std::size_t body = head_begin(net);
  if (k == 2) return Partition({body, layers});

  const std::vector<std::size_t> cuts = width_change_cuts(net);
  const std::size_t pick = k - 2;

  // Enumerate cut subsets in lexicographic order; only strict improvements
  // replace the incumbent, so ties resolve toward earlier cuts.
  std::vector<std::size_t> idx(pick);
  for (std::size_t i = 0; i < pick; ++i) idx[i] = i;
  std::vector<std::size_t> best;
  std::size_t best_spread = std::numeric_limits<std::size_t>::max();
  while (true) {
    std::size_t lo = std::numeric_limits<std::size_t>::max(), hi = 0, begin = 0;
    for (std::size_t i = 0; i <= pick; ++i) {
      const std::size_t end = i < pick ? cuts[idx[i]] : body;
      const std::size_t count = net.parameter_count(begin, end);
      lo = std::min(lo, count);
      hi = std::max(hi, count);
      begin = end;
    }
    if (hi - lo < best_spread) {
      best_spread = hi - lo;
      best.clear();
      for (std::size_t i : idx) best.push_back(cuts[i]);
    }
    std::size_t i = pick;
    while (i > 0 && idx[i - 1] == cuts.size() - pick + (i - 1)) --i;
    if (i == 0) break;
    ++idx[i - 1];
    for (std::size_t j = i; j < pick; ++j) idx[j] = idx[j - 1] + 1;
  }
  best.push_back(body);
  best.push_back(layers);
  return Partition(std::move(best));
}

Partition recompose(const Partition& d) {
  const std::size_t k = d.k();
  std::vector<std::size_t> ends;
  // 0-based block j merges into its predecessor when j is odd; a block
  // survives as a boundary when it closes a pair or is the unpaired last.
  for (std::size_t j = 0; j < k; ++j) {
    if (j % 2 == 1 || j + 1 == k) ends.push_back(d.ends()[j]);
  }
  return Partition(std::move(ends));
}

Decomposition recompose(const Decomposition& d) {
  return {recompose(d.teacher), recompose(d.student)};
}

template <typename T>
void validate(const Partition& d, const Network<T>& net) {
  if (d.k() < 1) throw ValidationError("partition has no blocks");
  if (d.ends().back() != net.layer_count()) {
    throw ValidationError("partition " + d.str() + " does not tile all " +
                          std::to_string(net.layer_count()) + " layers");
  }
  std::size_t prev = 0;
  for (std::size_t e : d.ends()) {
    if (e <= prev) throw ValidationError("partition " + d.str() + " has overlapping or empty blocks");
    prev = e;
  }
  const std::size_t head = head_begin(net);
  if (d.block_begin(d.k() - 1) > head) {
    throw ValidationError("partition " + d.str() + " splits the classifier head (starts at layer " +
                          std::to_string(head) + ") across blocks");
  }
}

template <typename T>
void validate(const Decomposition& d, const Network<T>& teacher, const Network<T>& student) {
  validate(d.teacher, teacher);
  validate(d.student, student);
  if (d.teacher.k() != d.student.k()) {
    throw ValidationError("teacher partition has " + std::to_string(d.teacher.k()) +
                          " blocks, student " + std::to_string(d.student.k()));
  }
  for (std::size_t b = 0; b + 1 < d.k(); ++b) {
    const Shape& s = student.shape_after(d.student.block_end(b));
    const Shape& t = teacher.shape_after(d.teacher.block_end(b));
    if (s != t) {
      throw IncompatibilityError("block " + std::to_string(b + 1) + " boundary: student " +
                                 s.str() + " vs teacher " + t.str() +
                                 " (a projector is required)");
    }
  }
}

#define SKD_INSTANTIATE_PARTITION(T)                                                   \
  template std::size_t head_begin(const Network<T>&);                                  \
  template std::vector<std::size_t> width_change_cuts(const Network<T>&);              \
  template std::size_t max_blocks(const Network<T>&);                                  \
  template Partition make_partition(const Network<T>&, std::size_t);                   \
  template void validate(const Partition&, const Network<T>&);                         \
  template void validate(const Decomposition&, const Network<T>&, const Network<T>&);

SKD_INSTANTIATE_PARTITION(float)
SKD_INSTANTIATE_PARTITION(double)

#undef SKD_INSTANTIATE_PARTITION

}  // namespace skd
