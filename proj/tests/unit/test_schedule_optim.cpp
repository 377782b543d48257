#include <gtest/gtest.h>

#include "stablekd/errors.hpp"
#include "stablekd/optim.hpp"
#include "stablekd/schedule.hpp"

namespace skd {
namespace {

// Triangle of one stage: rises from base to peak over the first half of its
// steps and falls back over the second half.
double closed_form(double t, double steps, double base, double peak) {
  const double h = steps / 2.0;
  if (t < h) return base + (peak - base) * (t / h);
  return peak - (peak - base) * ((t - h) / h);
}

TEST(StageSchedule, FiveTwoWithTwentyEpochs) {
  const StageSchedule s = StageSchedule::split(20, 2);
  EXPECT_EQ(s.epochs, (std::vector<std::size_t>{6, 6, 8}));
  EXPECT_EQ(s.total_epochs(), 20u);
  EXPECT_EQ(s.recompositions(), 2u);
}

TEST(StageSchedule, ZeroEpochStageIsConfigError) {
  EXPECT_THROW((StageSchedule{{3, 0, 2}}.validate()), ConfigError);
  EXPECT_THROW(StageSchedule{}.validate(), ConfigError);
  EXPECT_THROW(StageSchedule::split(2, 2), ConfigError);
}

TEST(LrAt, StartMidpointAndHalvedPeaks) {
  const StageSchedule s{{6, 6, 8}};
  const double max_lr = 0.5;
  const std::size_t spe = 10;
  EXPECT_EQ(lr_at(0, s, spe, max_lr), max_lr / 25.0);
  EXPECT_EQ(lr_at(30, s, spe, max_lr), max_lr);
  EXPECT_EQ(lr_at(60, s, spe, max_lr), max_lr / 25.0);
  EXPECT_EQ(lr_at(90, s, spe, max_lr), max_lr / 2.0);
  EXPECT_EQ(lr_at(120, s, spe, max_lr), max_lr / 25.0);
  EXPECT_EQ(lr_at(160, s, spe, max_lr), max_lr / 4.0);
  EXPECT_THROW(lr_at(200, s, spe, max_lr), ContractError);
}

TEST(LrAt, EveryStepMatchesClosedForm) {
  const StageSchedule s{{6, 6, 8}};
  const double max_lr = 0.5, base = max_lr / 25.0;
  const std::size_t spe = 7;
  std::size_t begin = 0;
  for (std::size_t c = 0; c < 3; ++c) {
    const std::size_t steps = s.epochs[c] * spe;
    const double peak = max_lr / static_cast<double>(1u << c);
    for (std::size_t t = 0; t < steps; ++t) {
      EXPECT_EQ(lr_at(begin + t, s, spe, max_lr),
                closed_form(static_cast<double>(t), static_cast<double>(steps), base, peak))
          << "stage " << c << " step " << t;
    }
    begin += steps;
  }
}

TEST(LrAt, StagePeakHalves) {
  EXPECT_EQ(stage_peak_lr(0, 0.5), 0.5);
  EXPECT_EQ(stage_peak_lr(1, 0.5), 0.25);
  EXPECT_EQ(stage_peak_lr(2, 0.5), 0.125);
}

Network<double> scalar_net(double theta) {
  auto net = Network<double>::build({LayerSpec::affine(2)}, Shape{1}, 2);
  for (auto& p : net.parameters()) {
    for (double& v : p.value.values()) v = theta;
  }
  return net;
}

GradientMap<double> constant_grads(const Network<double>& net, double g) {
  GradientMap<double> grads;
  for (const auto& p : net.parameters()) grads[p.id] = Tensor<double>(p.value.shape(), g);
  return grads;
}

TEST(Sgd, CoupledWeightDecayArithmetic) {
  auto net = scalar_net(1.0);
  MomentumBuffers<double> buffers(net);
  sgd_step(net, {0, 1}, constant_grads(net, 0.0), buffers, 1.0, 0.0, 0.1);
  for (const auto& p : net.parameters()) {
    for (double v : p.value.values()) EXPECT_EQ(v, 1.0 - 1.0 * (0.0 + 0.1 * 1.0));
  }
  EXPECT_EQ(net.parameters()[0].value[0], 0.9);
}

TEST(Sgd, ZeroLearningRateAndPlainStep) {
  auto net = scalar_net(2.0);
  MomentumBuffers<double> buffers(net);
  sgd_step(net, {0, 1}, constant_grads(net, 3.0), buffers, 0.0, 0.9, 5e-4);
  EXPECT_EQ(net.parameters()[0].value[0], 2.0);

  auto plain = scalar_net(2.0);
  MomentumBuffers<double> b2(plain);
  sgd_step(plain, {0, 1}, constant_grads(plain, 3.0), b2, 0.1, 0.0, 0.0);
  EXPECT_EQ(plain.parameters()[0].value[0], 2.0 - 0.1 * 3.0);
}

TEST(Sgd, MomentumAccumulatesAndResets) {
  auto net = scalar_net(0.0);
  MomentumBuffers<double> buffers(net);
  const auto grads = constant_grads(net, 1.0);
  sgd_step(net, {0, 1}, grads, buffers, 0.1, 0.9, 0.0);
  sgd_step(net, {0, 1}, grads, buffers, 0.1, 0.9, 0.0);
  // v1 = 1, v2 = 0.9 + 1 = 1.9; θ = -0.1 - 0.19
  EXPECT_DOUBLE_EQ(net.parameters()[0].value[0], -0.1 - 0.19);
  buffers.reset();
  EXPECT_EQ(buffers.at(0)[0], 0.0);
}

TEST(Sgd, FrozenParametersHaveNoStateAndCannotStep) {
  auto net = scalar_net(1.0);
  net.parameters()[1].trainable = false;
  MomentumBuffers<double> buffers(net);
  EXPECT_TRUE(buffers.has(0));
  EXPECT_FALSE(buffers.has(1));
  GradientMap<double> g{{net.parameters()[1].id, Tensor<double>(Shape{2}, 1.0)}};
  EXPECT_THROW(sgd_step(net, {1}, g, buffers, 0.1, 0.9, 0.0), ContractError);
}

TEST(OptimConfig, ValidationRules) {
  EXPECT_NO_THROW(OptimConfig::stablekd_defaults().validate());
  EXPECT_THROW((OptimConfig{0.0, 0.9, 0.0, 8}).validate(), ConfigError);
  EXPECT_THROW((OptimConfig{0.1, 1.0, 0.0, 8}).validate(), ConfigError);
  EXPECT_THROW((OptimConfig{0.1, 0.9, -1.0, 8}).validate(), ConfigError);
  EXPECT_THROW((OptimConfig{0.1, 0.9, 0.0, 0}).validate(), ConfigError);
}

}  // namespace
}  // namespace skd
