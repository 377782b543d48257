#include <gtest/gtest.h>

#include <limits>

#include "stablekd/errors.hpp"
#include "stablekd/gradcheck.hpp"
#include "stablekd/losses.hpp"
#include "stablekd/ops.hpp"
#include "stablekd/random.hpp"

namespace skd {
namespace {

constexpr double kTolerance = 1e-5;
constexpr std::uint64_t kSeeds = 10;

Parameter<double> random_param(const std::string& id, Shape shape, Rng& rng, double scale = 1.0) {
  Tensor<double> t(shape, 0.0);
  for (double& v : t.values()) v = scale * rng.normal();
  return {id, std::move(t), true};
}

// Keeps inputs away from the ReLU kink so central differences stay smooth.
Parameter<double> off_kink_param(const std::string& id, Shape shape, Rng& rng) {
  Tensor<double> t(shape, 0.0);
  for (double& v : t.values()) {
    const double mag = 0.1 + rng.uniform();
    v = rng.below(2) ? mag : -mag;
  }
  return {id, std::move(t), true};
}

// Weighted sum so every output coordinate carries a distinct gradient.
Var<double> weighted_sum(Tape<double>& tape, Var<double> y, std::uint64_t seed) {
  Rng rng(seed);
  Tensor<double> w(y.shape(), 0.0);
  for (double& v : w.values()) v = rng.normal();
  return sum(mul(y, tape.constant(w)));
}

void expect_passes(const ScalarFn& f, const std::vector<Parameter<double>>& params) {
  const GradCheckReport report = finite_diff_check(f, params);
  EXPECT_LE(report.max_error, kTolerance) << "worst at " << report.worst_param << "["
                                          << report.worst_index << "]";
  EXPECT_GT(report.coordinates, 0u);
}

TEST(GradCheck, MatMul) {
  for (std::uint64_t s = 0; s < kSeeds; ++s) {
    Rng rng(s);
    std::vector<Parameter<double>> p{random_param("a", Shape{3, 4}, rng),
                                     random_param("b", Shape{4, 2}, rng)};
    expect_passes(
        [s](Tape<double>& t, const auto& ps) {
          return weighted_sum(t, matmul(t.parameter(ps[0]), t.parameter(ps[1])), s);
        },
        p);
  }
}

TEST(GradCheck, AddAndRowBias) {
  for (std::uint64_t s = 0; s < kSeeds; ++s) {
    Rng rng(s);
    std::vector<Parameter<double>> p{random_param("a", Shape{3, 4}, rng),
                                     random_param("b", Shape{3, 4}, rng),
                                     random_param("bias", Shape{4}, rng)};
    expect_passes(
        [s](Tape<double>& t, const auto& ps) {
          return weighted_sum(
              t, add_row_bias(add(t.parameter(ps[0]), t.parameter(ps[1])), t.parameter(ps[2])), s);
        },
        p);
  }
}

TEST(GradCheck, Affine) {
  for (std::uint64_t s = 0; s < kSeeds; ++s) {
    Rng rng(s);
    std::vector<Parameter<double>> p{random_param("x", Shape{2, 5}, rng),
                                     random_param("w", Shape{5, 3}, rng),
                                     random_param("b", Shape{3}, rng)};
    expect_passes(
        [s](Tape<double>& t, const auto& ps) {
          return weighted_sum(t, affine(t.parameter(ps[0]), t.parameter(ps[1]), t.parameter(ps[2])),
                              s);
        },
        p);
  }
}

TEST(GradCheck, Conv2dWithChannelBias) {
  for (std::uint64_t s = 0; s < kSeeds; ++s) {
    Rng rng(s);
    const std::size_t stride = 1 + s % 2, pad = s % 3 == 0 ? 1 : 0;
    std::vector<Parameter<double>> p{random_param("x", Shape{2, 3, 5, 5}, rng),
                                     random_param("k", Shape{4, 3, 3, 3}, rng),
                                     random_param("b", Shape{4}, rng)};
    expect_passes(
        [s, stride, pad](Tape<double>& t, const auto& ps) {
          const Var<double> y = conv2d(t.parameter(ps[0]), t.parameter(ps[1]), stride, pad);
          return weighted_sum(t, add_channel_bias(y, t.parameter(ps[2])), s);
        },
        p);
  }
}

TEST(GradCheck, Relu) {
  for (std::uint64_t s = 0; s < kSeeds; ++s) {
    Rng rng(s);
    std::vector<Parameter<double>> p{off_kink_param("x", Shape{4, 6}, rng)};
    expect_passes(
        [s](Tape<double>& t, const auto& ps) { return weighted_sum(t, relu(t.parameter(ps[0])), s); },
        p);
  }
}

TEST(GradCheck, AvgPoolReshapeFlatten) {
  for (std::uint64_t s = 0; s < kSeeds; ++s) {
    Rng rng(s);
    std::vector<Parameter<double>> p{random_param("x", Shape{2, 3, 4, 4}, rng)};
    expect_passes(
        [s](Tape<double>& t, const auto& ps) {
          const Var<double> pooled = avgpool2d(t.parameter(ps[0]), 2);
          return weighted_sum(t, reshape(flatten(pooled), Shape{2, 3, 4}), s);
        },
        p);
  }
}

TEST(GradCheck, ScaleMulSum) {
  for (std::uint64_t s = 0; s < kSeeds; ++s) {
    Rng rng(s);
    std::vector<Parameter<double>> p{random_param("a", Shape{3, 3}, rng),
                                     random_param("b", Shape{3, 3}, rng)};
    expect_passes(
        [](Tape<double>& t, const auto& ps) {
          return scale(sum(mul(t.parameter(ps[0]), t.parameter(ps[1]))), -1.7);
        },
        p);
  }
}

TEST(GradCheck, CrossEntropy) {
  for (std::uint64_t s = 0; s < kSeeds; ++s) {
    Rng rng(s);
    std::vector<Parameter<double>> p{random_param("z", Shape{5, 4}, rng, 2.0)};
    std::vector<std::uint32_t> labels;
    for (int i = 0; i < 5; ++i) labels.push_back(static_cast<std::uint32_t>(rng.below(4)));
    expect_passes(
        [labels](Tape<double>& t, const auto& ps) { return cross_entropy(t.parameter(ps[0]), labels); },
        p);
  }
}

TEST(GradCheck, KlDivergenceBothArguments) {
  for (std::uint64_t s = 0; s < kSeeds; ++s) {
    Rng rng(s);
    const double temperature = 1.0 + static_cast<double>(s % 3);
    std::vector<Parameter<double>> p{random_param("s", Shape{4, 5}, rng, 2.0),
                                     random_param("t", Shape{4, 5}, rng, 2.0)};
    expect_passes(
        [temperature](Tape<double>& t, const auto& ps) {
          return kl_divergence(t.parameter(ps[0]), t.parameter(ps[1]), temperature);
        },
        p);
  }
}

TEST(GradCheck, MseFeatureBothArguments) {
  for (std::uint64_t s = 0; s < kSeeds; ++s) {
    Rng rng(s);
    std::vector<Parameter<double>> p{random_param("a", Shape{2, 3, 2, 2}, rng),
                                     random_param("b", Shape{2, 3, 2, 2}, rng)};
    expect_passes(
        [](Tape<double>& t, const auto& ps) {
          return mse_feature(t.parameter(ps[0]), t.parameter(ps[1]));
        },
        p);
  }
}

TEST(GradCheck, VanillaKdLoss) {
  for (std::uint64_t s = 0; s < kSeeds; ++s) {
    Rng rng(s);
    std::vector<Parameter<double>> p{random_param("s", Shape{3, 4}, rng, 2.0),
                                     random_param("t", Shape{3, 4}, rng, 2.0)};
    const std::vector<std::uint32_t> labels{0, 3, 1};
    expect_passes(
        [labels](Tape<double>& t, const auto& ps) {
          return vanilla_kd_loss(t.parameter(ps[0]), t.parameter(ps[1]), labels, 0.3, 2.0);
        },
        p);
  }
}

TEST(GradCheck, ReportsDeliberatelyWrongGradient) {
  // A rule with a doubled gradient must be caught by the oracle.
  Rng rng(3);
  std::vector<Parameter<double>> p{random_param("x", Shape{3}, rng)};
  const GradCheckReport report = finite_diff_check(
      [](Tape<double>& t, const auto& ps) {
        const Var<double> x = t.parameter(ps[0]);
        return sum(t.record(x.value(), OpKind::Scale, {x.index()},
                            [x](Tape<double>& tape, const Tensor<double>& up) {
                              Tensor<double>* g = tape.grad_buffer(x.index());
                              if (!g) return;
                              for (std::size_t i = 0; i < up.numel(); ++i) (*g)[i] += 2.0 * up[i];
                            }));
      },
      p);
  EXPECT_GT(report.max_error, 0.5);
}

TEST(GradCheck, NonFiniteFunctionIsAnOracleError) {
  std::vector<Parameter<double>> p{{"x", Tensor<double>::vector({1.0}), true}};
  EXPECT_THROW(finite_diff_check(
                   [](Tape<double>& t, const auto& ps) {
                     return scale(t.parameter(ps[0]), std::numeric_limits<double>::infinity());
                   },
                   p),
               OracleError);
}

}  // namespace
}  // namespace skd
