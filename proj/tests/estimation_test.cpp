#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include <nlohmann/json.hpp>

#include "alnet/estimation.hpp"
#include "test_util.hpp"

using namespace alnet;
using alnet::testing::random_tensor;

namespace {

ErrorKind kind_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.kind();
  }
  ADD_FAILURE() << "expected an error";
  return ErrorKind::Numeric;
}

AgeDistribution dist(std::vector<double> p) { return {std::move(p), true}; }

std::vector<EvalRecord> records(std::vector<double> predicted, std::vector<double> actual) {
  std::vector<EvalRecord> out;
  for (std::size_t i = 0; i < predicted.size(); ++i) out.push_back({predicted[i], actual[i]});
  return out;
}

DatasetManifest subjects_manifest(std::size_t subjects, std::size_t per_subject) {
  DatasetManifest m;
  for (std::size_t s = 0; s < subjects; ++s)
    for (std::size_t k = 0; k < per_subject; ++k) {
      Sample x;
      x.id = "p" + std::to_string(s) + "_" + std::to_string(k);
      x.path = x.id + ".ppm";
      x.age = 20;
      x.subject_id = "person" + std::to_string(s);
      x.fold = int(s % 3);
      m.samples.push_back(x);
    }
  return m;
}

void expect_subject_exclusive(const DatasetManifest& m, const Split& split) {
  std::set<std::string> train, test;
  for (std::size_t i : split.train) train.insert(*m.samples[i].subject_id);
  for (std::size_t i : split.test) test.insert(*m.samples[i].subject_id);
  for (const auto& s : test) EXPECT_EQ(train.count(s), 0u) << s << " crosses sides";
  EXPECT_EQ(split.train.size() + split.test.size(), m.size());
}

}  // namespace

TEST(Dex, OneHotGivesItsAge) {
  const HeadConfig head = HeadConfig::dex(101, 0);
  for (std::size_t k : {0u, 25u, 100u}) {
    std::vector<double> p(101, 0.0);
    p[k] = 1;
    EXPECT_EQ(dex_expected_age(dist(p), head.age_values), double(k));
  }
}

TEST(Dex, UniformOverHundredAndOneAgesIsFifty) {
  const HeadConfig head = HeadConfig::dex_preset("lap");
  ASSERT_EQ(head.classes, 101u);
  EXPECT_EQ(head.age_values.front(), 0);
  EXPECT_EQ(head.age_values.back(), 100);
  EXPECT_EQ(dex_expected_age(dist(std::vector<double>(101, 1.0 / 101)), head.age_values), 50.0);
}

TEST(Dex, HandExpectation) {
  const std::vector<double> ages{20, 40};
  EXPECT_DOUBLE_EQ(dex_expected_age(dist({0.25, 0.75}), ages), 35.0);
}

TEST(Dex, PresetsMatchTheirAgeSpans) {
  EXPECT_EQ(HeadConfig::dex_preset("morph").classes, 62u);
  EXPECT_EQ(HeadConfig::dex_preset("morph").age_values.front(), 16);
  EXPECT_EQ(HeadConfig::dex_preset("fgnet").classes, 70u);
  EXPECT_EQ(HeadConfig::dex_preset("fgnet").age_values.back(), 69);
  EXPECT_EQ(kind_of([] { HeadConfig::dex_preset("imdb"); }), ErrorKind::Config);
}

TEST(Dex, UnnormalizedInputIsRejected) {
  const std::vector<double> ages{1, 2};
  EXPECT_EQ(kind_of([&] { dex_expected_age(dist({0.5, 0.6}), ages); }), ErrorKind::Input);
  EXPECT_EQ(kind_of([&] { dex_expected_age({{0.5, 0.5}, false}, ages); }), ErrorKind::Input);
}

TEST(Dex, MovingMassUpwardNeverLowersTheAge) {
  Rng rng(1);
  const HeadConfig head = HeadConfig::dex(30, 10);
  for (int t = 0; t < 1000; ++t) {
    std::vector<double> p(30);
    for (double& v : p) v = rng.uniform(0, 1);
    const double total = std::accumulate(p.begin(), p.end(), 0.0);
    for (double& v : p) v /= total;
    const std::size_t from = rng.below(29);
    const std::size_t to = from + 1 + rng.below(29 - from);
    std::vector<double> q = p;
    const double moved = p[from] * rng.uniform(0, 1);
    q[from] -= moved;
    q[to] += moved;
    const double a = dex_expected_age(dist(p), head.age_values);
    const double b = dex_expected_age(dist(q), head.age_values);
    EXPECT_GE(b, a - 1e-12);
    EXPECT_GE(a, 10);
    EXPECT_LE(a, 39);
  }
}

TEST(HeadLabels, GroupAndNearestAge) {
  HeadConfig groups = HeadConfig::groups(8);
  Sample s;
  s.age = 30;
  EXPECT_EQ(groups.label_of(s), 4u);
  s.group = 3;
  EXPECT_EQ(groups.label_of(s), 3u);
  HeadConfig dex = HeadConfig::dex(5, 10);
  Sample d;
  d.age = 12.4;
  EXPECT_EQ(dex.label_of(d), 2u);
  d.age = 3;
  EXPECT_EQ(dex.label_of(d), 0u);
  d.age = 99;
  EXPECT_EQ(dex.label_of(d), 4u);
  HeadConfig small = HeadConfig::groups(4);
  s.group = 6;
  EXPECT_EQ(kind_of([&] { small.label_of(s); }), ErrorKind::Input);
}

TEST(Mae, HandCases) {
  EXPECT_EQ(mae(records({20, 30}, {25, 28})), 3.5);
  EXPECT_EQ(mae(records({1, 2, 3}, {1, 2, 3})), 0.0);
  EXPECT_EQ(mae(records({7}, {5})), 2.0);
  EXPECT_EQ(kind_of([] { mae({}); }), ErrorKind::Input);
}

TEST(Mae, PermutationInvariant) {
  Rng rng(2);
  std::vector<EvalRecord> r;
  for (int i = 0; i < 50; ++i) r.push_back({rng.uniform(0, 80), rng.uniform(0, 80)});
  const double base = mae(r);
  std::reverse(r.begin(), r.end());
  EXPECT_NEAR(mae(r), base, 1e-12);
}

TEST(EpsilonError, HandCases) {
  EvalRecord at_delta{33, 30, 30.0, 3.0};
  EXPECT_NEAR(epsilon_error(std::vector<EvalRecord>{at_delta}), 1 - std::exp(-0.5), 1e-9);
  EXPECT_NEAR(epsilon_error(std::vector<EvalRecord>{at_delta}), 0.393469, 1e-6);
  EvalRecord exact{30, 30, 30.0, 3.0};
  EXPECT_EQ(epsilon_error(std::vector<EvalRecord>{exact, exact}), 0.0);
  EvalRecord far{3030, 30, 30.0, 3.0};
  EXPECT_NEAR(epsilon_error(std::vector<EvalRecord>{far}), 1.0, 1e-12);
}

TEST(EpsilonError, ZeroDeltaIsClamped) {
  EvalRecord r{30.000001, 30, 30.0, 0.0};  // |x−μ| equals the clamp
  EXPECT_NEAR(epsilon_error(std::vector<EvalRecord>{r}), 1 - std::exp(-0.5), 1e-6);
  EvalRecord missing{30, 30};
  EXPECT_EQ(kind_of([&] { epsilon_error(std::vector<EvalRecord>{missing}); }), ErrorKind::Input);
  EXPECT_EQ(kind_of([] { epsilon_error({}); }), ErrorKind::Input);
}

TEST(EpsilonError, StaysBelowOne) {
  Rng rng(4);
  std::vector<EvalRecord> r;
  for (int i = 0; i < 200; ++i) {
    const double mu = rng.uniform(0, 80);
    r.push_back({rng.uniform(0, 80), mu, mu, rng.uniform(0.5, 8)});
    const double e = epsilon_error(std::vector<EvalRecord>{r.back()});
    EXPECT_GE(e, 0);
    EXPECT_LT(e, 1);
  }
  const double base = epsilon_error(r);
  std::reverse(r.begin(), r.end());
  EXPECT_NEAR(epsilon_error(r), base, 1e-12);
}

TEST(GroupAccuracy, HandCount) {
  const GroupScores s = group_accuracy(records({2, 4, 7}, {3, 4, 0}));
  EXPECT_DOUBLE_EQ(s.accuracy, 1.0 / 3.0);
  EXPECT_DOUBLE_EQ(s.one_off, 2.0 / 3.0);
  const GroupScores all = group_accuracy(records({1, 5}, {1, 5}));
  EXPECT_EQ(all.accuracy, 1.0);
  EXPECT_EQ(all.one_off, 1.0);
}

TEST(GroupAccuracy, OneOffNeverBelowExact) {
  Rng rng(5);
  for (int t = 0; t < 1000; ++t) {
    std::vector<EvalRecord> r;
    const std::size_t n = 1 + rng.below(20);
    for (std::size_t i = 0; i < n; ++i) r.push_back({double(rng.below(8)), double(rng.below(8))});
    const GroupScores s = group_accuracy(r);
    EXPECT_GE(s.one_off, s.accuracy);
  }
}

TEST(GroupAccuracy, OutOfRangeIndexIsRejected) {
  EXPECT_EQ(kind_of([] { group_accuracy(records({8}, {1})); }), ErrorKind::Input);
  EXPECT_EQ(kind_of([] { group_accuracy(records({1.5}, {1})); }), ErrorKind::Input);
  EXPECT_EQ(kind_of([] { group_accuracy(records({3}, {1}), 3); }), ErrorKind::Input);
}

TEST(Protocols, FivefoldOnTenSubjects) {
  const DatasetManifest m = subjects_manifest(10, 3);
  const std::vector<Split> splits = protocol_split(m, Protocol::FiveFold, 7);
  ASSERT_EQ(splits.size(), 5u);
  std::vector<int> seen(m.size(), 0);
  for (const Split& s : splits) {
    std::set<std::string> test_subjects;
    for (std::size_t i : s.test) {
      test_subjects.insert(*m.samples[i].subject_id);
      seen[i]++;
    }
    EXPECT_EQ(test_subjects.size(), 2u);
    expect_subject_exclusive(m, s);
  }
  for (int c : seen) EXPECT_EQ(c, 1);
}

TEST(Protocols, FivefoldIsSeededAndOrderInvariant) {
  const DatasetManifest m = subjects_manifest(23, 2);
  DatasetManifest shuffled = m;
  std::reverse(shuffled.samples.begin(), shuffled.samples.end());
  auto test_sets = [](const DatasetManifest& d, std::uint64_t seed) {
    std::vector<std::set<std::string>> out;
    for (const Split& s : protocol_split(d, Protocol::FiveFold, seed)) {
      std::set<std::string> ids;
      for (std::size_t i : s.test) ids.insert(d.samples[i].id);
      out.push_back(ids);
    }
    return out;
  };
  EXPECT_EQ(test_sets(m, 3), test_sets(shuffled, 3));
  EXPECT_EQ(test_sets(m, 3), test_sets(m, 3));
  EXPECT_NE(test_sets(m, 3), test_sets(m, 4));
  for (const auto& t : test_sets(m, 3)) EXPECT_TRUE(t.size() == 8 || t.size() == 10);
}

TEST(Protocols, LoopOnEightyTwoSubjects) {
  const DatasetManifest m = subjects_manifest(82, 2);
  const std::vector<Split> splits = protocol_split(m, Protocol::Loop, 0);
  ASSERT_EQ(splits.size(), 82u);
  for (const Split& s : splits) {
    EXPECT_EQ(s.test.size(), 2u);
    expect_subject_exclusive(m, s);
  }
}

TEST(Protocols, FixedFollowsTheFoldField) {
  const DatasetManifest m = subjects_manifest(9, 1);
  const std::vector<Split> splits = protocol_split(m, Protocol::Fixed, 0);
  ASSERT_EQ(splits.size(), 3u);
  EXPECT_EQ(splits[0].name, "fold0");
  EXPECT_EQ(splits[1].test, (std::vector<std::size_t>{1, 4, 7}));
}

TEST(Protocols, MissingSubjectsAreAnInputError) {
  DatasetManifest m = subjects_manifest(6, 1);
  m.samples[2].subject_id.reset();
  EXPECT_EQ(kind_of([&] { protocol_split(m, Protocol::FiveFold, 0); }), ErrorKind::Input);
  EXPECT_EQ(kind_of([&] { protocol_split(subjects_manifest(1, 3), Protocol::Loop, 0); }),
            ErrorKind::Input);
  EXPECT_EQ(kind_of([] { parse_protocol("tenfold"); }), ErrorKind::Usage);
}

namespace {

// Two classes scored from the mean of the left half and of the green channel.
AgeDistribution toy_predictor(const Tensor& crop) {
  const std::size_t h = crop.dim(1), w = crop.dim(2);
  double left = 0, green = 0;
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      if (x < w / 2) left += crop.data()[(0 * h + y) * w + x];
      green += crop.data()[(1 * h + y) * w + x];
    }
  const double a = std::exp(4 * left / double(h * (w / 2)));
  const double b = std::exp(3 * green / double(h * w));
  return dist({a / (a + b), b / (a + b)});
}

Tensor symmetric_image(Rng& rng, std::size_t h, std::size_t w) {
  Tensor img(Shape{3, h, w});
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < (w + 1) / 2; ++x) {
        const real v = static_cast<real>(rng.uniform());
        img.data()[(c * h + y) * w + x] = v;
        img.data()[(c * h + y) * w + (w - 1 - x)] = v;
      }
  return img;
}

}  // namespace

TEST(TenCrop, OriginsAndOrder) {
  const auto o = five_crop_origins(64, 70, 56);
  EXPECT_EQ(o[0].row, 0u);
  EXPECT_EQ(o[1].col, 14u);
  EXPECT_EQ(o[2].row, 8u);
  EXPECT_EQ(o[3].row, 8u);
  EXPECT_EQ(o[3].col, 14u);
  EXPECT_EQ(o[4].row, 4u);
  EXPECT_EQ(o[4].col, 7u);
  EXPECT_EQ(kind_of([] { five_crop_origins(50, 64, 56); }), ErrorKind::Input);
}

TEST(TenCrop, SymmetricImageMatchesFiveCrop) {
  Rng rng(6);
  const Tensor img = symmetric_image(rng, 64, 64);
  const AgeDistribution ten = ten_crop_predict(toy_predictor, img, 56);
  const AgeDistribution five = five_crop_predict(toy_predictor, img, 56);
  for (std::size_t k = 0; k < 2; ++k) EXPECT_NEAR(ten.probs[k], five.probs[k], 1e-6);
}

TEST(TenCrop, ConstantImageEqualsOneForward) {
  Tensor img(Shape{3, 64, 64}, real(0.3));
  const AgeDistribution ten = ten_crop_predict(toy_predictor, img, 56);
  const AgeDistribution one = toy_predictor(crop_image(img, 4, 4, 56, 56));
  for (std::size_t k = 0; k < 2; ++k) EXPECT_NEAR(ten.probs[k], one.probs[k], 1e-12);
}

TEST(TenCrop, MatchesExplicitAveraging) {
  Rng rng(7);
  const std::size_t h = 60, w = 66, s = 48;
  const Tensor img = random_tensor({3, h, w}, rng, 0, 1);
  const std::size_t rows[5] = {0, 0, h - s, h - s, (h - s) / 2};
  const std::size_t cols[5] = {0, w - s, 0, w - s, (w - s) / 2};
  std::vector<double> acc(2, 0.0);
  for (int mirror = 0; mirror < 2; ++mirror)
    for (int k = 0; k < 5; ++k) {
      Tensor crop(Shape{3, s, s});
      for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t y = 0; y < s; ++y)
          for (std::size_t x = 0; x < s; ++x) {
            const std::size_t sx = cols[k] + (mirror ? s - 1 - x : x);
            crop.data()[(c * s + y) * s + x] = img.data()[(c * h + rows[k] + y) * w + sx];
          }
      const AgeDistribution p = toy_predictor(crop);
      acc[0] += p.probs[0] / 10;
      acc[1] += p.probs[1] / 10;
    }
  const AgeDistribution ten = ten_crop_predict(toy_predictor, img, s);
  EXPECT_NEAR(ten.probs[0], acc[0], 1e-6);
  EXPECT_NEAR(ten.probs[1], acc[1], 1e-6);
  EXPECT_NEAR(ten.probs[0] + ten.probs[1], 1.0, 1e-12);
}

TEST(TenCrop, CallsFollowTheFixedOrder) {
  Tensor img(Shape{3, 10, 10});
  for (std::size_t i = 0; i < img.numel(); ++i) img.data()[i] = static_cast<real>(i);
  std::vector<real> first;
  CropPredictor record = [&](const Tensor& c) {
    first.push_back(c.data()[0]);
    return dist({0.5, 0.5});
  };
  ten_crop_predict(record, img, 8);
  // Top-left sample of each crop: corners, centre, then the mirrors' (top-right source pixel).
  const std::vector<real> expected{0, 2, 20, 22, 11, 7, 9, 27, 29, 18};
  EXPECT_EQ(first, expected);
}

TEST(Report, MeanAndSampleDeviation) {
  EvalReport r;
  r.protocol = "fivefold";
  r.metrics = metric_names(HeadMode::Group, false);
  for (double a : {0.6, 0.7, 0.8}) r.splits.push_back({"s", 10, {a, 1.0}});
  EXPECT_NEAR(r.mean(0), 0.7, 1e-12);
  EXPECT_NEAR(r.stddev(0), 0.1, 1e-12);
  EXPECT_EQ(r.stddev(1), 0.0);
  const auto j = nlohmann::json::parse(r.json());
  EXPECT_EQ(j["protocol"], "fivefold");
  EXPECT_EQ(j["splits"].size(), 3u);
  EXPECT_NEAR(j["summary"]["accuracy"]["sample_stddev"].get<double>(), 0.1, 1e-12);
  EXPECT_NE(r.table().find("70.00%±10.00%"), std::string::npos) << r.table();
}

TEST(Report, ScoresFollowTheHeadMode) {
  const auto recs = records({20, 30}, {25, 28});
  EXPECT_EQ(score_records(HeadMode::Dex, false, recs, 0), std::vector<double>{3.5});
  EXPECT_EQ(metric_names(HeadMode::Dex, true), (std::vector<std::string>{"mae", "epsilon_error"}));
}
