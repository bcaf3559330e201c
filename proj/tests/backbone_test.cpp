#include <gtest/gtest.h>

#include <cmath>

#include "alnet/backbone.hpp"
#include "test_util.hpp"

using namespace alnet;
using alnet::testing::random_tensor;

namespace {

bool all_finite(const Tensor& t) {
  for (real v : t.data())
    if (!std::isfinite(v)) return false;
  return true;
}

}  // namespace

TEST(Backbone, FullPresetYields512x7x7) {
  const BackboneConfig c = BackboneConfig::full();
  EXPECT_EQ(c.feature_shape(), (Shape{512, 7, 7}));
  Backbone b = Backbone::init(c, 3);
  Rng rng(5);
  Tensor image = random_tensor({3, 224, 224}, rng, 0, 1);
  Tape tape(false);
  Tensor map = resnet_forward(tape, b, image, BnMode::Eval);
  EXPECT_EQ(map.shape(), (Shape{512, 7, 7}));
  EXPECT_TRUE(all_finite(map));
}

TEST(Backbone, ToyPresetYields32x7x7) {
  for (Arch arch : {Arch::ResNets, Arch::RoR}) {
    const BackboneConfig c = BackboneConfig::toy(arch);
    EXPECT_EQ(c.feature_shape(), (Shape{32, 7, 7}));
    Backbone b = Backbone::init(c, 1);
    Tape tape(false);
    Tensor zeros(Shape{3, 56, 56});
    Tensor map = backbone_forward(tape, b, zeros, BnMode::Train);
    EXPECT_EQ(map.shape(), (Shape{32, 7, 7}));
    EXPECT_TRUE(all_finite(map));
  }
}

TEST(Backbone, RejectsWrongInputGeometry) {
  Backbone b = Backbone::init(BackboneConfig::toy(), 1);
  Tape tape(false);
  try {
    backbone_forward(tape, b, Tensor(Shape{3, 48, 48}), BnMode::Eval);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::Input);
  }
  EXPECT_THROW(backbone_forward(tape, b, Tensor(Shape{1, 56, 56}), BnMode::Eval), Error);
}

TEST(Backbone, ZeroResidualIsIdentityShortcut) {
  Backbone b = Backbone::init(BackboneConfig::toy(), 2);
  ResidualBlock& block = b.groups()[0].blocks[0];
  ASSERT_FALSE(block.projection.defined());
  for (real& v : block.conv2.gamma.data()) v = 0;
  Rng rng(9);
  Tensor x = random_tensor({8, 56, 56}, rng);
  Tape tape(false);
  Tensor y = residual_block_forward(tape, x, block, BnMode::Eval);
  Tensor expected = relu(tape, x);
  EXPECT_TRUE(y.bitwise_equal(expected));
}

TEST(Backbone, ProjectionOnShapeChange) {
  Backbone b = Backbone::init(BackboneConfig::toy(), 2);
  EXPECT_FALSE(b.groups()[0].blocks[0].projection.defined());
  for (std::size_t g = 1; g < 4; ++g) {
    EXPECT_TRUE(b.groups()[g].blocks[0].projection.defined());
    EXPECT_EQ(b.groups()[g].blocks[0].stride, 2u);
  }
}

TEST(Backbone, JunctionsCloseEachGroup) {
  EXPECT_EQ(junction_blocks(BackboneConfig::full()), (std::vector<std::size_t>{3, 7, 13, 16}));
  EXPECT_EQ(junction_blocks(BackboneConfig::toy()), (std::vector<std::size_t>{1, 2, 3, 4}));
}

TEST(Backbone, RorWithoutShortcutsMatchesResnetBitwise) {
  BackboneConfig c = BackboneConfig::toy(Arch::RoR);
  c.group_depths = {2, 1, 2, 1};
  Backbone b = Backbone::init(c, 4);
  Rng rng(11);
  for (int trial = 0; trial < 10; ++trial) {
    Tensor image = random_tensor({3, 56, 56}, rng, 0, 1);
    Tape tape(false);
    b.set_ror_shortcuts(true);
    Tensor with = ror_forward(tape, b, image, BnMode::Eval);
    b.set_ror_shortcuts(false);
    Tensor without = ror_forward(tape, b, image, BnMode::Eval);
    Tensor plain = resnet_forward(tape, b, image, BnMode::Eval);
    EXPECT_TRUE(without.bitwise_equal(plain));
    EXPECT_FALSE(with.bitwise_equal(plain));
  }
}

// Recomposes the multi-level junctions by hand from the block primitive.
TEST(Backbone, RorJunctionsMatchExplicitComposition) {
  BackboneConfig c = BackboneConfig::toy(Arch::RoR);
  c.group_depths = {2, 2, 1, 2};
  Backbone b = Backbone::init(c, 6);
  ASSERT_FALSE(b.groups()[0].middle_projection.defined());
  ASSERT_TRUE(b.groups()[3].has_root);
  ASSERT_TRUE(b.groups()[3].root_projection.defined());
  Rng rng(12);
  Tensor image = random_tensor({3, 56, 56}, rng, 0, 1);
  Tape tape(false);

  const ConvBn& s = b.stem();
  Tensor root = relu(tape, batchnorm2d(tape, conv2d(tape, image, s.weight, Tensor(), 1, 1),
                                       s.gamma, s.beta, b.stem().stats, BnMode::Eval));
  Tensor x = root;
  for (std::size_t g = 0; g < 4; ++g) {
    ResidualGroup& group = b.groups()[g];
    const Tensor in = x;
    for (std::size_t i = 0; i + 1 < group.blocks.size(); ++i)
      x = residual_block_forward(tape, x, group.blocks[i], BnMode::Eval);
    std::vector<Tensor> terms;
    terms.push_back(g == 0 ? in : conv2d(tape, in, group.middle_projection, Tensor(), 2, 0));
    if (g == 3) terms.push_back(conv2d(tape, root, group.root_projection, Tensor(), 8, 0));
    x = residual_block_forward(tape, x, group.blocks.back(), BnMode::Eval, terms);
  }
  Tensor expected = x;
  Tensor actual = ror_forward(tape, b, image, BnMode::Eval);
  EXPECT_TRUE(actual.bitwise_equal(expected));
}

TEST(Backbone, ParameterNamesAndRoles) {
  Backbone b = Backbone::init(BackboneConfig::toy(Arch::RoR), 1);
  const ParamList params = b.parameters();
  std::size_t buffers = 0, weights = 0;
  for (const Param& p : params) {
    if (p.role == ParamRole::Buffer) ++buffers;
    if (p.role == ParamRole::Weight) ++weights;
  }
  // stem + 8 block convs, each with two running statistics.
  EXPECT_EQ(buffers, 18u);
  // 9 conv weights, 3 block projections, 3 middle shortcuts, 1 root shortcut.
  EXPECT_EQ(weights, 16u);
  EXPECT_EQ(params.front().name, "backbone.stem.weight");
}

TEST(Backbone, FrozenBackboneRecordsNothing) {
  Backbone b = Backbone::init(BackboneConfig::toy(), 1);
  b.set_frozen(true);
  for (const Param& p : b.parameters()) EXPECT_FALSE(p.tensor.requires_grad());
  Tape tape;
  Tensor image(Shape{3, 56, 56}, real{0.5});
  backbone_forward(tape, b, image, BnMode::Eval);
  EXPECT_EQ(tape.size(), 0u);
}
