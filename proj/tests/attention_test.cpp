#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "alnet/attention.hpp"
#include "test_util.hpp"

using namespace alnet;
using alnet::testing::random_tensor;

namespace {

Tensor box_tensor(double l1, double l2, double l3, double l4) {
  return Tensor(Shape{1, 4}, std::vector<real>{real(l1), real(l2), real(l3), real(l4)});
}

// Box whose edges land on the integer region; a full-extent side may take any position.
Tensor aligned_box(const Region& r, std::size_t h, std::size_t w) {
  auto pos = [](std::size_t start, std::size_t len, std::size_t extent) {
    return len == extent ? 0.5 : double(start) / double(extent - len);
  };
  return box_tensor(pos(r.col0, r.cols, w), pos(r.row0, r.rows, h), double(r.cols) / double(w),
                    double(r.rows) / double(h));
}

Region random_region(Rng& rng, std::size_t h, std::size_t w) {
  Region r;
  r.rows = 1 + rng.below(h);
  r.cols = 1 + rng.below(w);
  r.row0 = rng.below(h - r.rows + 1);
  r.col0 = rng.below(w - r.cols + 1);
  return r;
}

double max_rel_gap(const Tensor& a, const Tensor& b) {
  double gap = 0;
  for (std::size_t i = 0; i < a.numel(); ++i) {
    const double den = std::max(std::abs(double(b.data()[i])), 1e-12);
    gap = std::max(gap, std::abs(double(a.data()[i]) - b.data()[i]) / den);
  }
  return gap;
}

}  // namespace

TEST(Lstm, GateGeometry) {
  const AttentionParams p = AttentionParams::init(512, 8, kLstmHidden, 1);
  for (const Tensor* w : {&p.lstm.w_input, &p.lstm.w_forget, &p.lstm.w_output, &p.lstm.w_cell})
    EXPECT_EQ(w->shape(), (Shape{128, 640}));
  EXPECT_EQ(p.w_locate.shape(), (Shape{4, 256}));
  EXPECT_EQ(p.lstm.input_dim(), 512u);
  EXPECT_EQ(p.parameters().size(), 11u);
}

TEST(Lstm, ZeroWeightsFixedPoint) {
  const AttentionParams p = AttentionParams::zeros(6, 3, 4);
  Tape tape(false);
  Rng rng(1);
  LstmStep step = lstm_step(tape, random_tensor({1, 6}, rng), LstmState::zeros(4), p.lstm);
  ASSERT_EQ(step.s_next.shape(), (Shape{1, 8}));
  for (real v : step.s_next.data()) EXPECT_EQ(v, 0);
}

TEST(Lstm, ZeroWeightsHalveTheCell) {
  const AttentionParams p = AttentionParams::zeros(6, 3, 4);
  LstmState state = LstmState::zeros(4);
  const std::vector<real> c = {1.0f, -2.0f, 0.25f, 3.0f};
  std::copy(c.begin(), c.end(), state.cell.data().begin());
  Tape tape(false);
  Rng rng(2);
  LstmStep step = lstm_step(tape, random_tensor({1, 6}, rng), state, p.lstm);
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_NEAR(step.state.cell.data()[i], 0.5 * c[i], 1e-7);
    EXPECT_NEAR(step.state.hidden.data()[i], 0.5 * std::tanh(0.5 * c[i]), 1e-7);
    EXPECT_EQ(step.s_next.data()[i], step.state.cell.data()[i]);
    EXPECT_EQ(step.s_next.data()[4 + i], step.state.hidden.data()[i]);
  }
}

TEST(Lstm, DimensionMismatchIsConfigError) {
  const AttentionParams p = AttentionParams::zeros(6, 3, 4);
  Tape tape(false);
  try {
    lstm_step(tape, Tensor(Shape{1, 5}), LstmState::zeros(4), p.lstm);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::Config);
  }
  EXPECT_THROW(lstm_step(tape, Tensor(Shape{1, 6}), LstmState::zeros(3), p.lstm), Error);
}

TEST(Lstm, StaysFiniteOverManySteps) {
  const AttentionParams p = AttentionParams::init(16, 4, 8, 3);
  LstmState state = LstmState::zeros(8);
  Rng rng(4);
  for (int i = 0; i < 500; ++i) {
    Tape tape(false);
    state = lstm_step(tape, random_tensor({1, 16}, rng, -50, 50), state, p.lstm).state;
  }
  for (real v : state.cell.data()) EXPECT_TRUE(std::isfinite(v));
  for (real v : state.hidden.data()) EXPECT_TRUE(std::isfinite(v));
}

TEST(Locate, ZeroWeightsGiveCentredBox) {
  Tape tape(false);
  Rng rng(5);
  Tensor box = locate(tape, random_tensor({1, 8}, rng), Tensor(Shape{4, 8}));
  for (real v : box.data()) EXPECT_EQ(v, 0.5f);
}

TEST(Locate, OneHotRowsSelectEntries) {
  Rng rng(6);
  Tensor s = random_tensor({1, 256}, rng, -3, 3);
  Tensor w(Shape{4, 256});
  const std::size_t pick[4] = {3, 100, 200, 255};
  for (std::size_t r = 0; r < 4; ++r) w.data()[r * 256 + pick[r]] = 1;
  Tape tape(false);
  Tensor box = locate(tape, s, w);
  for (std::size_t r = 0; r < 4; ++r)
    EXPECT_NEAR(box.data()[r], 1.0 / (1.0 + std::exp(-double(s.data()[pick[r]]))), 1e-7);
}

TEST(Locate, ComponentsStrictlyInsideUnitInterval) {
  Rng rng(7);
  for (int i = 0; i < 100; ++i) {
    Tape tape(false);
    Tensor box = locate(tape, random_tensor({1, 16}, rng, -5, 5), random_tensor({4, 16}, rng));
    for (real v : box.data()) {
      EXPECT_GT(v, 0);
      EXPECT_LT(v, 1);
    }
  }
}

TEST(Box, UnitBoxCoversMap) {
  const BoxEdges e = box_to_edges({0, 0, 1, 1}, 7, 7);
  EXPECT_EQ(e.x0, 0);
  EXPECT_EQ(e.x1, 7);
  EXPECT_EQ(e.y0, 0);
  EXPECT_EQ(e.y1, 7);
  EXPECT_EQ(box_to_region({0, 0, 1, 1}, 7, 7), (Region{0, 0, 7, 7}));
}

TEST(Box, CentredHalfBox) {
  const BoxEdges e = box_to_edges({0.5, 0.5, 0.5, 0.5}, 7, 7);
  EXPECT_DOUBLE_EQ(e.x0, 1.75);
  EXPECT_DOUBLE_EQ(e.x1, 5.25);
  EXPECT_DOUBLE_EQ(e.y0, 1.75);
  EXPECT_DOUBLE_EQ(e.y1, 5.25);
  EXPECT_EQ(box_to_region({0.5, 0.5, 0.5, 0.5}, 7, 7), (Region{2, 2, 3, 3}));
}

TEST(Box, TinyBoxClampsToCornerCell) {
  EXPECT_EQ(box_to_region({1, 1, 1e-9, 1e-9}, 7, 7), (Region{6, 6, 1, 1}));
  EXPECT_EQ(box_to_region({0, 0, 1e-9, 1e-9}, 7, 7), (Region{0, 0, 1, 1}));
}

TEST(Box, RandomBoxesStayInBounds) {
  Rng rng(8);
  const AttentionParams p = AttentionParams::init(4, 2, 4, 9);
  for (int i = 0; i < 10000; ++i) {
    Tape tape(false);
    const AttentionBox b =
        to_box(locate(tape, random_tensor({1, 8}, rng, -20, 20), p.w_locate));
    const std::size_t h = 1 + rng.below(9), w = 1 + rng.below(9);
    const BoxEdges e = box_to_edges(b, h, w);
    ASSERT_GE(e.x0, 0);
    ASSERT_LE(e.x1, double(w));
    ASSERT_GE(e.y0, 0);
    ASSERT_LE(e.y1, double(h));
    const Region r = box_to_region(b, h, w);
    ASSERT_GE(r.rows, 1u);
    ASSERT_GE(r.cols, 1u);
    ASSERT_LE(r.row0 + r.rows, h);
    ASSERT_LE(r.col0 + r.cols, w);
  }
}

TEST(HardCrop, SingleCellAndFullMap) {
  Rng rng(10);
  Tensor map = random_tensor({3, 7, 7}, rng);
  Tensor cell = hard_crop_pool(map, {2, 5, 1, 1});
  for (std::size_t c = 0; c < 3; ++c) EXPECT_EQ(cell.data()[c], map.data()[c * 49 + 2 * 7 + 5]);
  Tape tape(false);
  Tensor pooled = global_avg_pool(tape, map);
  Tensor full = hard_crop_pool(map, {0, 0, 7, 7});
  for (std::size_t c = 0; c < 3; ++c) EXPECT_NEAR(full.data()[c], pooled.data()[c], 1e-6);
}

TEST(HardCrop, TwoByTwoHandMean) {
  Tensor map(Shape{1, 3, 3}, std::vector<real>{1, 2, 3, 4, 5, 6, 7, 8, 9});
  EXPECT_FLOAT_EQ(hard_crop_pool(map, {1, 1, 2, 2}).item(), (5 + 6 + 8 + 9) / 4.0f);
  EXPECT_FLOAT_EQ(hard_crop_pool(map, {0, 0, 2, 2}).item(), 3.0f);
}

TEST(HardCrop, OutOfBoundsIsInputError) {
  Tensor map(Shape{1, 3, 3});
  try {
    hard_crop_pool(map, {2, 2, 2, 1});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::Input);
  }
  EXPECT_THROW(hard_crop_pool(map, {0, 0, 0, 1}), Error);
}

TEST(SoftCrop, ConstantMapGivesConstant) {
  Tensor map(Shape{2, 7, 7}, real{0.75});
  Rng rng(11);
  for (double tau : {1.0, 5.0, 25.0, 50.0})
    for (int i = 0; i < 20; ++i) {
      Tape tape(false);
      Tensor box = random_tensor({1, 4}, rng, 0.01, 0.99);
      SoftCrop crop = soft_crop_pool(tape, map, box, tau);
      for (real v : crop.features.data()) EXPECT_NEAR(v, 0.75, 1e-6);
    }
}

TEST(SoftCrop, FullBoxMatchesGlobalPool) {
  Rng rng(12);
  Tensor map = random_tensor({4, 7, 7}, rng);
  Tape tape(false);
  Tensor soft = soft_crop_pool(tape, map, box_tensor(0, 0, 1, 1), 50).features;
  Tensor pooled = global_avg_pool(tape, map);
  for (std::size_t c = 0; c < 4; ++c) EXPECT_NEAR(soft.data()[c], pooled.data()[c], 1e-3);
}

TEST(SoftCrop, AlignedBoxMatchesHardCrop) {
  Rng rng(13);
  Tensor map = random_tensor({4, 7, 7}, rng, 0.5, 2.0);
  for (int i = 0; i < 200; ++i) {
    const Region r = random_region(rng, 7, 7);
    Tape tape(false);
    Tensor soft = soft_crop_pool(tape, map, aligned_box(r, 7, 7), 50).features;
    ASSERT_EQ(box_to_region(to_box(aligned_box(r, 7, 7)), 7, 7), r);
    EXPECT_LT(max_rel_gap(soft, hard_crop_pool(map, r)), 1e-3);
  }
}

TEST(SoftCrop, ConvergesToHardCropAsSharpnessGrows) {
  Rng rng(14);
  Tensor map = random_tensor({4, 7, 7}, rng, 0.5, 2.0);
  std::vector<Region> regions;
  for (int i = 0; i < 100; ++i) regions.push_back(random_region(rng, 7, 7));
  double previous = INFINITY;
  for (double tau : {5.0, 10.0, 25.0, 50.0}) {
    double worst = 0;
    for (const Region& r : regions) {
      Tape tape(false);
      Tensor soft = soft_crop_pool(tape, map, aligned_box(r, 7, 7), tau).features;
      worst = std::max(worst, max_rel_gap(soft, hard_crop_pool(map, r)));
    }
    EXPECT_LT(worst, previous) << "tau " << tau;
    previous = worst;
  }
}

// The one-cell minimum extent keeps a cell centre inside every box, so the
// mass floor is never reached even at extreme sharpness.
TEST(SoftCrop, ExtremeSharpnessStaysFinite) {
  Rng rng(15);
  Tensor map = random_tensor({2, 7, 7}, rng);
  for (int i = 0; i < 1000; ++i) {
    Tape tape(false);
    SoftCrop crop = soft_crop_pool(tape, map, random_tensor({1, 4}, rng, 0, 0.3), 5000);
    ASSERT_FALSE(crop.mass_clamped);
    for (real v : crop.features.data()) ASSERT_TRUE(std::isfinite(v));
  }
}

TEST(SoftCrop, LocationWeightsReceiveMatchingGradients) {
  const std::size_t channels = 6, classes = 3, hidden = 5;
  AttentionParams p = AttentionParams::init(channels, classes, hidden, 16);
  Rng rng(17);
  Tensor map = random_tensor({channels, 7, 7}, rng, 0, 2);
  const std::size_t label = 1;
  LossFn loss = [&](Tape& tape) {
    AttentionOutput out = attention_forward(tape, map, LstmState::zeros(hidden), p, 5.0);
    CrossEntropy ce = softmax_cross_entropy(tape, out.local_logits, std::span(&label, 1));
    return ce.loss;
  };
  ParamList locate_only = {{"w", p.w_locate, ParamRole::Weight}};
  GradCheckOptions opts;
  opts.samples = 40;
  opts.abs_floor = 1e-2;
  const GradCheckReport report = grad_check(loss, locate_only, opts);
  EXPECT_TRUE(report.passed()) << report.max_rel_err;
  EXPECT_GT(report.checked, 20u);
  double norm = 0;
  for (real g : p.w_locate.grad()) norm += std::abs(g);
  EXPECT_GT(norm, 1e-6);

  const GradCheckReport all = grad_check(loss, p.parameters(), opts);
  EXPECT_TRUE(all.passed()) << all.max_rel_err;
}

TEST(Fusion, HandEvaluation) {
  AgeDistribution g{{0.5, 0.5}, true}, l{{0.2, 0.8}, true};
  const std::vector<double> raw = fuse_raw(g, l);
  EXPECT_DOUBLE_EQ(raw[0], 0.6);
  EXPECT_DOUBLE_EQ(raw[1], 0.9);
  const AgeDistribution f = fuse_predictions(g, l);
  EXPECT_NEAR(f.probs[0], 0.4, 1e-12);
  EXPECT_NEAR(f.probs[1], 0.6, 1e-12);
}

TEST(Fusion, FixedPointAndGlobalVote) {
  AgeDistribution p{{0.1, 0.2, 0.7}, true};
  const AgeDistribution f = fuse_predictions(p, p);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(f.probs[i], p.probs[i], 1e-15);
  for (std::size_t a = 0; a < 4; ++a)
    for (std::size_t b = 0; b < 4; ++b) {
      if (a == b) continue;
      AgeDistribution g{std::vector<double>(4, 0.0), true}, l{std::vector<double>(4, 0.0), true};
      g.probs[a] = 1;
      l.probs[b] = 1;
      EXPECT_EQ(fuse_predictions(g, l).argmax(), a);
    }
}

TEST(Fusion, NormalizationKeepsTheDecision) {
  Rng rng(18);
  for (int i = 0; i < 10000; ++i) {
    const std::size_t k = 2 + rng.below(9);
    AgeDistribution g, l;
    for (auto* d : {&g, &l}) {
      double total = 0;
      for (std::size_t j = 0; j < k; ++j) total += d->probs.emplace_back(rng.uniform());
      for (double& v : d->probs) v /= total;
    }
    const std::vector<double> raw = fuse_raw(g, l);
    const std::size_t raw_arg = std::max_element(raw.begin(), raw.end()) - raw.begin();
    ASSERT_EQ(fuse_predictions(g, l).argmax(), raw_arg);
  }
}

TEST(Fusion, LengthMismatchIsInputError) {
  AgeDistribution g{{0.5, 0.5}, true}, l{{1.0}, true};
  try {
    fuse_predictions(g, l);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::Input);
  }
}

TEST(Fusion, DifferentiableFormMatches) {
  Tensor pg(Shape{1, 2}, std::vector<real>{0.5f, 0.5f});
  Tensor pl(Shape{1, 2}, std::vector<real>{0.2f, 0.8f});
  Tape tape(false);
  Tensor f = fuse(tape, pg, pl);
  EXPECT_NEAR(f.data()[0], 0.4, 1e-7);
  EXPECT_NEAR(f.data()[1], 0.6, 1e-7);
}

TEST(AttentionForward, ZeroParamsCentreTheBox) {
  const AttentionParams p = AttentionParams::zeros(4, 3, 6);
  Rng rng(19);
  Tensor map = random_tensor({4, 7, 7}, rng);
  Tape tape(false);
  AttentionOutput out = attention_forward(tape, map, LstmState::zeros(6), p, 25);
  for (real v : out.box.data()) EXPECT_EQ(v, 0.5f);
  for (real v : out.local_probs.data()) EXPECT_NEAR(v, 1.0 / 3, 1e-7);
  AttentionOutput again = attention_forward(tape, map, LstmState::zeros(6), p, 25);
  EXPECT_TRUE(again.local_features.bitwise_equal(out.local_features));
}

TEST(AttentionForward, UniformMapIgnoresTheBox) {
  Tensor map(Shape{4, 7, 7}, real{0.3});
  Tape tape(false);
  Tensor reference;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    AttentionParams p = AttentionParams::init(4, 3, 6, 100);
    Rng rng(seed);
    p.w_locate = random_tensor({4, 12}, rng, -3, 3);
    AttentionOutput out = attention_forward(tape, map, LstmState::zeros(6), p, 25);
    if (!reference.defined()) reference = out.local_probs;
    for (std::size_t k = 0; k < 3; ++k) EXPECT_NEAR(out.local_probs.data()[k], reference.data()[k], 1e-6);
  }
}

TEST(AttentionForward, MatchesScriptedComposition) {
  const AttentionParams p = AttentionParams::init(8, 4, 6, 20);
  Rng rng(21);
  Tensor map = random_tensor({8, 7, 7}, rng);
  LstmState state = LstmState::zeros(6);
  state.cell = random_tensor({1, 6}, rng);
  Tape tape(false);
  AttentionOutput out = attention_forward(tape, map, state, p, 25);

  Tensor x = global_avg_pool(tape, map);
  LstmStep step = lstm_step(tape, x, state, p.lstm);
  Tensor box = locate(tape, step.s_next, p.w_locate);
  Tensor crop = soft_crop_pool(tape, map, box, 25).features;
  Tensor probs = softmax(tape, linear(tape, crop, p.local_weight, p.local_bias));
  EXPECT_TRUE(out.box.bitwise_equal(box));
  EXPECT_TRUE(out.local_probs.bitwise_equal(probs));
  EXPECT_TRUE(out.state.hidden.bitwise_equal(step.state.hidden));
}
