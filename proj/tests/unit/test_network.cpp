#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>

#include "stablekd/errors.hpp"
#include "stablekd/network.hpp"
#include "stablekd/partition.hpp"
#include "stablekd/random.hpp"

namespace skd {
namespace {

Network<double> small_cnn(std::size_t mid_width) {
  return Network<double>::build({LayerSpec::conv2d(8, 3, 1, 1), LayerSpec::relu(),
                                 LayerSpec::conv2d(mid_width, 3, 1, 1), LayerSpec::relu(),
                                 LayerSpec::flatten(), LayerSpec::affine(3)},
                                Shape{1, 4, 4}, 3);
}

Tensor<double> random_batch(Shape shape, std::uint64_t seed) {
  Rng rng(seed);
  Tensor<double> t(shape, 0.0);
  for (double& v : t.values()) v = rng.normal();
  return t;
}

TEST(NetworkBuild, SingleAffineHasFifteenParameters) {
  const auto net = Network<float>::build({LayerSpec::affine(3)}, Shape{4}, 3);
  EXPECT_EQ(net.layer_count(), 1u);
  EXPECT_EQ(net.parameter_count(), 4u * 3u + 3u);
}

TEST(NetworkBuild, EmptySpecListIsAnError) {
  EXPECT_THROW(Network<float>::build({}, Shape{4}, 3), ConfigError);
}

TEST(NetworkBuild, ConvHeadWithoutFlattenIsAnError) {
  EXPECT_THROW(Network<float>::build({LayerSpec::conv2d(4, 3, 1, 1), LayerSpec::affine(3)},
                                     Shape{1, 4, 4}, 3),
               ConfigError);
}

TEST(NetworkBuild, HeadMustMatchClassCount) {
  EXPECT_THROW(Network<float>::build({LayerSpec::affine(4)}, Shape{4}, 3), ConfigError);
}

TEST(NetworkBuild, ShapeTableFollowsLayers) {
  const auto net = small_cnn(16);
  EXPECT_EQ(net.shape_after(0), (Shape{1, 4, 4}));
  EXPECT_EQ(net.shape_after(3), (Shape{16, 4, 4}));
  EXPECT_EQ(net.shape_after(5), (Shape{16 * 16}));
  EXPECT_EQ(net.shape_after(6), (Shape{3}));
}

TEST(NetworkInit, SameSeedIsBitIdenticalOtherSeedDiffers) {
  auto a = small_cnn(16), b = small_cnn(16), c = small_cnn(16);
  a.init_params(7);
  b.init_params(7);
  c.init_params(8);
  EXPECT_EQ(encode_checkpoint(a), encode_checkpoint(b));
  EXPECT_NE(encode_checkpoint(a), encode_checkpoint(c));
}

TEST(NetworkInit, AffineWeightsWithinFanInBound) {
  auto net = Network<double>::build({LayerSpec::affine(3)}, Shape{4}, 3);
  net.init_params(1);
  const double bound = std::sqrt(6.0 / 4.0);
  for (double w : net.parameters()[0].value.values()) EXPECT_LE(std::abs(w), bound);
  for (double b : net.parameters()[1].value.values()) EXPECT_EQ(b, 0.0);
}

TEST(NetworkInit, InitLayersTouchesOnlyItsRange) {
  auto net = small_cnn(16);
  net.init_params(1);
  const auto before = net.parameters();
  net.init_layers(99, 5, 6);
  for (std::size_t i = 0; i + 2 < before.size(); ++i) EXPECT_EQ(net.parameters()[i].value, before[i].value);
  EXPECT_NE(net.parameters()[before.size() - 2].value, before[before.size() - 2].value);
  EXPECT_THROW(net.init_layers(1, 4, 9), ContractError);
}

TEST(ForwardPrefix, EmptyFullAndAssociative) {
  auto net = small_cnn(16);
  net.init_params(3);
  const Partition p({2, 4, 6});
  const auto x = random_batch(Shape{2, 1, 4, 4}, 4);
  const auto zero = forward_prefix(net, x, 0, p);
  EXPECT_EQ(zero.tensor, x);
  EXPECT_EQ(zero.layer_index, 0u);
  EXPECT_EQ(forward_prefix(net, x, 3, p).tensor, net.evaluate(x));
  for (std::size_t i = 0; i < 3; ++i) {
    const auto prefix = forward_prefix(net, x, i, p);
    const auto stepped = net.evaluate(prefix.tensor, p.prefix_end(i), p.prefix_end(i + 1));
    EXPECT_EQ(stepped, forward_prefix(net, x, i + 1, p).tensor);
  }
  EXPECT_THROW(forward_prefix(net, x, 4, p), ContractError);
}

TEST(Projectors, EqualWidthsReturnTheStudentUnchanged) {
  auto teacher = small_cnn(16), student = small_cnn(16);
  student.init_params(2);
  const Partition p({2, 4, 6});
  const auto projected = insert_projectors(student, teacher, p, p);
  EXPECT_EQ(projected.projectors_inserted, 0u);
  EXPECT_EQ(projected.network.specs(), student.specs());
  EXPECT_EQ(encode_checkpoint(projected.network), encode_checkpoint(student));
}

TEST(Projectors, NarrowStudentGetsOneProjectorInBlockTwo) {
  const auto teacher = small_cnn(16), student = small_cnn(8);
  const Partition p({2, 4, 6});
  const auto projected = insert_projectors(student, teacher, p, p);
  EXPECT_EQ(projected.projectors_inserted, 1u);
  EXPECT_EQ(projected.block_ends, (std::vector<std::size_t>{2, 5, 7}));
  const auto& net = projected.network;
  EXPECT_EQ(net.spec(4).kind, LayerKind::Projector1x1);
  EXPECT_EQ(net.shape_after(4), (Shape{8, 4, 4}));
  EXPECT_EQ(net.shape_after(5), (Shape{16, 4, 4}));
  EXPECT_EQ(net.parameter_count(4, 5), 8u * 16u + 16u);
  EXPECT_EQ(net.parameter_count(4, 5), 144u);
}

TEST(Projectors, SpatialMismatchIsIncompatible) {
  const auto teacher = small_cnn(16);
  const auto student = Network<double>::build(
      {LayerSpec::conv2d(8, 3, 1, 1), LayerSpec::relu(), LayerSpec::avgpool2d(2), LayerSpec::relu(),
       LayerSpec::flatten(), LayerSpec::affine(3)},
      Shape{1, 4, 4}, 3);
  const Partition p({2, 4, 6});
  EXPECT_THROW(insert_projectors(student, teacher, p, p), IncompatibilityError);
}

TEST(Checkpoint, RoundTripAndHashStability) {
  auto net = small_cnn(16).cast<float>();
  net.init_params(11);
  const auto bytes = encode_checkpoint(net);
  auto copy = small_cnn(16).cast<float>();
  decode_checkpoint(copy, bytes);
  EXPECT_EQ(encode_checkpoint(copy), bytes);
  EXPECT_EQ(checkpoint_hash(copy), checkpoint_hash(net));
  EXPECT_EQ(checkpoint_hash(copy).size(), 16u);

  const auto path = std::filesystem::temp_directory_path() / "skd_test_checkpoint.skdw";
  save_checkpoint(net, path);
  auto loaded = small_cnn(16).cast<float>();
  load_checkpoint(loaded, path);
  EXPECT_EQ(encode_checkpoint(loaded), bytes);
  std::filesystem::remove(path);
}

TEST(Checkpoint, RejectsTruncationAndShapeMismatch) {
  auto net = small_cnn(16).cast<float>();
  net.init_params(1);
  const auto bytes = encode_checkpoint(net);
  for (std::size_t cut : {std::size_t{0}, std::size_t{3}, std::size_t{5}, bytes.size() / 2, bytes.size() - 1}) {
    auto target = small_cnn(16).cast<float>();
    EXPECT_THROW(decode_checkpoint(target, {bytes.begin(), bytes.begin() + static_cast<long>(cut)}), FormatError)
        << "cut at " << cut;
  }
  auto other = small_cnn(8).cast<float>();
  EXPECT_THROW(decode_checkpoint(other, bytes), Error);
}

TEST(Architecture, JsonRoundTrip) {
  const auto net = small_cnn(16);
  const Architecture arch{net.specs(), net.input_shape(), net.classes()};
  const Architecture back = parse_architecture(architecture_json(arch));
  EXPECT_EQ(back.layers, arch.layers);
  EXPECT_EQ(back.input_shape, arch.input_shape);
  EXPECT_EQ(back.classes, arch.classes);
  EXPECT_THROW(parse_architecture("{\"input_shape\": [2], \"classes\": 2, \"layers\": [{\"kind\": \"bogus\"}]}"),
               ConfigError);
}

}  // namespace
}  // namespace skd
