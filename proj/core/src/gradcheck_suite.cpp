#include <algorithm>
#include <cstdint>
#include <functional>
#include <memory>

#include "stablekd/errors.hpp"
#include "stablekd/gradcheck.hpp"
#include "stablekd/losses.hpp"
#include "stablekd/network.hpp"
#include "stablekd/ops.hpp"
#include "stablekd/partition.hpp"
#include "stablekd/random.hpp"

namespace skd {

namespace {

using Params = std::vector<Parameter<double>>;
// Builds the parameters and the scalar function for one seed.
using CaseFactory = std::function<std::pair<ScalarFn, Params>(std::uint64_t seed)>;

Parameter<double> random_param(const std::string& id, Shape shape, Rng& rng, double scale = 1.0) {
  Tensor<double> t(shape, 0.0);
  for (double& v : t.values()) v = scale * rng.normal();
  return {id, std::move(t), true};
}

// Magnitudes in [0.1, 1.1] keep central differences off the ReLU kink.
Parameter<double> off_kink_param(const std::string& id, Shape shape, Rng& rng) {
  Tensor<double> t(shape, 0.0);
  for (double& v : t.values()) {
    const double mag = 0.1 + rng.uniform();
    v = rng.below(2) ? mag : -mag;
  }
  return {id, std::move(t), true};
}

Var<double> weighted_sum(Tape<double>& tape, Var<double> y, std::uint64_t seed) {
  Rng rng(derive_seed(seed, 0x57));
  Tensor<double> w(y.shape(), 0.0);
  for (double& v : w.values()) v = rng.normal();
  return sum(mul(y, tape.constant(w)));
}

std::vector<std::uint32_t> random_labels(std::size_t n, std::size_t classes, Rng& rng) {
  std::vector<std::uint32_t> labels;
  for (std::size_t i = 0; i < n; ++i) labels.push_back(static_cast<std::uint32_t>(rng.below(classes)));
  return labels;
}

std::vector<std::pair<std::string, CaseFactory>> cases() {
  std::vector<std::pair<std::string, CaseFactory>> out;
  out.emplace_back("matmul", [](std::uint64_t s) {
    Rng rng(s);
    Params p{random_param("a", Shape{3, 4}, rng), random_param("b", Shape{4, 2}, rng)};
    ScalarFn f = [s](Tape<double>& t, const Params& ps) {
      return weighted_sum(t, matmul(t.parameter(ps[0]), t.parameter(ps[1])), s);
    };
    return std::pair{f, p};
  });
  out.emplace_back("add+row_bias", [](std::uint64_t s) {
    Rng rng(s);
    Params p{random_param("a", Shape{3, 4}, rng), random_param("b", Shape{3, 4}, rng),
             random_param("bias", Shape{4}, rng)};
    ScalarFn f = [s](Tape<double>& t, const Params& ps) {
      return weighted_sum(
          t, add_row_bias(add(t.parameter(ps[0]), t.parameter(ps[1])), t.parameter(ps[2])), s);
    };
    return std::pair{f, p};
  });
  out.emplace_back("affine", [](std::uint64_t s) {
    Rng rng(s);
    Params p{random_param("x", Shape{2, 5}, rng), random_param("w", Shape{5, 3}, rng),
             random_param("b", Shape{3}, rng)};
    ScalarFn f = [s](Tape<double>& t, const Params& ps) {
      return weighted_sum(t, affine(t.parameter(ps[0]), t.parameter(ps[1]), t.parameter(ps[2])), s);
    };
    return std::pair{f, p};
  });
  out.emplace_back("conv2d+channel_bias", [](std::uint64_t s) {
    Rng rng(s);
    const std::size_t stride = 1 + s % 2, pad = s % 3 == 0 ? 1 : 0;
    Params p{random_param("x", Shape{2, 3, 5, 5}, rng), random_param("k", Shape{4, 3, 3, 3}, rng),
             random_param("b", Shape{4}, rng)};
    ScalarFn f = [s, stride, pad](Tape<double>& t, const Params& ps) {
      const Var<double> y = conv2d(t.parameter(ps[0]), t.parameter(ps[1]), stride, pad);
      return weighted_sum(t, add_channel_bias(y, t.parameter(ps[2])), s);
    };
    return std::pair{f, p};
  });
  out.emplace_back("relu", [](std::uint64_t s) {
    Rng rng(s);
    Params p{off_kink_param("x", Shape{4, 6}, rng)};
    ScalarFn f = [s](Tape<double>& t, const Params& ps) {
      return weighted_sum(t, relu(t.parameter(ps[0])), s);
    };
    return std::pair{f, p};
  });
  out.emplace_back("avgpool2d+reshape+flatten", [](std::uint64_t s) {
    Rng rng(s);
    Params p{random_param("x", Shape{2, 3, 4, 4}, rng)};
    ScalarFn f = [s](Tape<double>& t, const Params& ps) {
      const Var<double> pooled = avgpool2d(t.parameter(ps[0]), 2);
      return weighted_sum(t, reshape(flatten(pooled), Shape{2, 3, 4}), s);
    };
    return std::pair{f, p};
  });
  out.emplace_back("scale+mul+sum", [](std::uint64_t s) {
    Rng rng(s);
    Params p{random_param("a", Shape{3, 3}, rng), random_param("b", Shape{3, 3}, rng)};
    ScalarFn f = [](Tape<double>& t, const Params& ps) {
      return scale(sum(mul(t.parameter(ps[0]), t.parameter(ps[1]))), -1.7);
    };
    return std::pair{f, p};
  });
  out.emplace_back("cross_entropy", [](std::uint64_t s) {
    Rng rng(s);
    Params p{random_param("z", Shape{5, 4}, rng, 2.0)};
    const auto labels = random_labels(5, 4, rng);
    ScalarFn f = [labels](Tape<double>& t, const Params& ps) {
      return cross_entropy(t.parameter(ps[0]), labels);
    };
    return std::pair{f, p};
  });
  out.emplace_back("kl_divergence", [](std::uint64_t s) {
    Rng rng(s);
    const double temperature = 1.0 + static_cast<double>(s % 3);
    Params p{random_param("s", Shape{4, 5}, rng, 2.0), random_param("t", Shape{4, 5}, rng, 2.0)};
    ScalarFn f = [temperature](Tape<double>& t, const Params& ps) {
      return kl_divergence(t.parameter(ps[0]), t.parameter(ps[1]), temperature);
    };
    return std::pair{f, p};
  });
  out.emplace_back("mse_feature", [](std::uint64_t s) {
    Rng rng(s);
    Params p{random_param("a", Shape{2, 3, 2, 2}, rng), random_param("b", Shape{2, 3, 2, 2}, rng)};
    ScalarFn f = [](Tape<double>& t, const Params& ps) {
      return mse_feature(t.parameter(ps[0]), t.parameter(ps[1]));
    };
    return std::pair{f, p};
  });
  out.emplace_back("vanilla_kd_loss", [](std::uint64_t s) {
    Rng rng(s);
    Params p{random_param("s", Shape{3, 4}, rng, 2.0), random_param("t", Shape{3, 4}, rng, 2.0)};
    const auto labels = random_labels(3, 4, rng);
    ScalarFn f = [labels](Tape<double>& t, const Params& ps) {
      return vanilla_kd_loss(t.parameter(ps[0]), t.parameter(ps[1]), labels, 0.3, 2.0);
    };
    return std::pair{f, p};
  });
  out.emplace_back("stablekd_loss", [](std::uint64_t s) {
    // Two-block CNN pair whose student needs a projector at the boundary.
    const Shape input{1, 4, 4};
    const std::vector<LayerSpec> teacher_layers{LayerSpec::conv2d(4, 3, 1, 1), LayerSpec::relu(),
                                                LayerSpec::avgpool2d(2), LayerSpec::flatten(),
                                                LayerSpec::affine(3)};
    std::vector<LayerSpec> student_layers = teacher_layers;
    student_layers[0] = LayerSpec::conv2d(2, 3, 1, 1);
    auto teacher = std::make_shared<Network<double>>(
        Network<double>::build(teacher_layers, input, 3));
    teacher->init_params(derive_seed(s, 1));
    teacher->freeze();
    const Partition part({3, 5});
    const Network<double> plain = Network<double>::build(student_layers, input, 3);
    ProjectedStudent<double> projected = insert_projectors(plain, *teacher, part, part);
    auto student = std::make_shared<Network<double>>(std::move(projected.network));
    student->init_params(derive_seed(s, 2));
    const Decomposition dec{part, Partition(projected.block_ends)};

    Rng rng(derive_seed(s, 3));
    Tensor<double> x(Shape{3, 1, 4, 4}, 0.0);
    for (double& v : x.values()) v = rng.normal();
    const auto labels = random_labels(3, 3, rng);
    ScalarFn f = [teacher, student, dec, x, labels](Tape<double>& t, const Params& ps) {
      for (std::size_t i = 0; i < ps.size(); ++i) student->parameters()[i].value = ps[i].value;
      return stablekd_loss(t, x, labels, *teacher, *student, dec, BlockLossOptions{0.7, 2.0}).total;
    };
    return std::pair{f, student->parameters()};
  });
  return out;
}

}  // namespace

std::vector<SuiteEntry> run_gradcheck_suite(std::size_t seeds) {
  std::vector<SuiteEntry> entries;
  for (const auto& [name, factory] : cases()) {
    SuiteEntry entry;
    entry.name = name;
    for (std::uint64_t s = 0; s < seeds; ++s) {
      auto [f, params] = factory(s);
      try {
        const GradCheckReport r = finite_diff_check(f, std::move(params));
        entry.report.coordinates += r.coordinates;
        if (r.max_error >= entry.report.max_error) {
          entry.report.max_error = r.max_error;
          entry.report.worst_param = r.worst_param;
          entry.report.worst_index = r.worst_index;
        }
      } catch (const OracleError& e) {
        if (entry.error.empty()) entry.error = "seed " + std::to_string(s) + ": " + e.what();
      }
      ++entry.seeds;
    }
    entries.push_back(std::move(entry));
  }
  return entries;
}

}  // namespace skd
