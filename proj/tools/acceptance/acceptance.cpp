// Runs every acceptance criterion and prints one PASS/FAIL line for each.
#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "alnet/commands.hpp"
#include "oracles.hpp"

using namespace alnet;

namespace {

struct Verdict {
  bool pass = false;
  std::string detail;
};

std::string fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

std::string sci(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.3g", v);
  return buf;
}

Tensor random_image(Rng& rng, std::size_t h, std::size_t w) {
  Tensor t(Shape{3, h, w});
  for (real& v : t.data()) v = static_cast<real>(rng.uniform());
  return t;
}

// ---- 1 ---------------------------------------------------------------------

Verdict gradient_integrity() {
  const auto t0 = std::chrono::steady_clock::now();
  RunConfig config;  // toy network, 100 entries, h = 1e-3, tolerance 1e-2
  const GradCheckReport r = network_gradcheck(config);
  const double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  // The RoR variant is reported alongside; it is not part of the verdict.
  RunConfig ror = config;
  ror.train.backbone.arch = Arch::RoR;
  const GradCheckReport rr = network_gradcheck(ror);

  Verdict v;
  v.pass = r.passed() && r.checked + r.skipped == config.gradcheck.samples && secs < 60;
  v.detail = "resnets: " + std::to_string(r.checked) + " checked, " + std::to_string(r.kinks) +
             " set aside at kinks, max rel " + sci(r.max_rel_err) + ", " + fixed(secs, 1) +
             " s; ror (informational): " + std::to_string(rr.failures.size()) +
             " over tolerance, max rel " + sci(rr.max_rel_err);
  return v;
}

// ---- 2 ---------------------------------------------------------------------

Verdict architecture_equivalence() {
  const auto t0 = std::chrono::steady_clock::now();
  Backbone b = Backbone::init(BackboneConfig::toy(Arch::RoR), 2);
  Rng rng(21);
  std::size_t equal = 0, differs_with_shortcuts = 0;
  for (int i = 0; i < 100; ++i) {
    const Tensor image = random_image(rng, 56, 56);
    Tape tape(false);
    b.set_ror_shortcuts(false);
    const Tensor without = ror_forward(tape, b, image, BnMode::Eval);
    const Tensor plain = resnet_forward(tape, b, image, BnMode::Eval);
    equal += without.bitwise_equal(plain);
    b.set_ror_shortcuts(true);
    differs_with_shortcuts += !ror_forward(tape, b, image, BnMode::Eval).bitwise_equal(plain);
  }
  const double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  Verdict v;
  v.pass = equal == 100 && secs < 10;
  v.detail = std::to_string(equal) + "/100 bitwise equal, shortcuts on changes " +
             std::to_string(differs_with_shortcuts) + "/100, " + fixed(secs, 1) + " s";
  return v;
}

// ---- 3 ---------------------------------------------------------------------

Verdict lstm_oracle() {
  const double worst = acceptance::lstm_scalar_worst_gap(1000, 40);
  return {worst < 1e-12, "1000 draws, worst gap " + sci(worst)};
}

// ---- 4 ---------------------------------------------------------------------

Tensor aligned_box(const Region& r, std::size_t h, std::size_t w) {
  auto pos = [](std::size_t start, std::size_t len, std::size_t extent) {
    return len == extent ? 0.5 : double(start) / double(extent - len);
  };
  return Tensor(Shape{1, 4},
                std::vector<real>{real(pos(r.col0, r.cols, w)), real(pos(r.row0, r.rows, h)),
                                  real(double(r.cols) / double(w)),
                                  real(double(r.rows) / double(h))});
}

Verdict crop_soundness() {
  Rng rng(8);
  const AttentionParams p = AttentionParams::init(8, 2, 4, 9);
  std::size_t bad = 0;
  for (int i = 0; i < 10000; ++i) {
    Tensor x(Shape{1, 8});
    for (real& v : x.data()) v = static_cast<real>(rng.uniform(-20, 20));
    Tape tape(false);
    const AttentionBox box = to_box(locate(tape, x, p.w_locate));
    const std::size_t h = 1 + rng.below(9), w = 1 + rng.below(9);
    const Region r = box_to_region(box, h, w);
    bad += !(r.rows >= 1 && r.cols >= 1 && r.row0 + r.rows <= h && r.col0 + r.cols <= w);
  }

  Tensor map(Shape{4, 7, 7});
  for (real& v : map.data()) v = static_cast<real>(rng.uniform(0.5, 2.0));
  double worst = 0;
  std::size_t regions = 0;
  for (std::size_t rows = 1; rows <= 7; ++rows)
    for (std::size_t cols = 1; cols <= 7; ++cols)
      for (std::size_t r0 = 0; r0 + rows <= 7; ++r0)
        for (std::size_t c0 = 0; c0 + cols <= 7; ++c0) {
          const Region r{r0, c0, rows, cols};
          Tape tape(false);
          const Tensor soft = soft_crop_pool(tape, map, aligned_box(r, 7, 7), 50).features;
          const Tensor hard = hard_crop_pool(map, r);
          for (std::size_t k = 0; k < soft.numel(); ++k)
            worst = std::max(worst, std::abs(double(soft.data()[k]) - hard.data()[k]) /
                                        std::abs(double(hard.data()[k])));
          ++regions;
        }
  Verdict v;
  v.pass = bad == 0 && worst < 1e-3;
  v.detail = std::to_string(10000 - bad) + "/10000 regions in bounds; " + std::to_string(regions) +
             " aligned boxes at tau 50, worst relative gap " + sci(worst);
  return v;
}

// ---- 5 ---------------------------------------------------------------------

Verdict metric_exactness() {
  const std::vector<EvalRecord> hand{{22, 20, {}, {}}, {25, 30, {}, {}}, {43.5, 40, {}, {}}};
  const double m = mae(hand);

  const std::vector<EvalRecord> at_delta{{33, 30, 30.0, 3.0}};
  const std::vector<EvalRecord> at_mu{{30, 30, 30.0, 3.0}};
  const double eps_delta = epsilon_error(at_delta);
  const double eps_mu = epsilon_error(at_mu);

  Rng rng(5);
  std::size_t violations = 0;
  for (int set = 0; set < 1000; ++set) {
    std::vector<EvalRecord> r;
    const std::size_t n = 1 + rng.below(40);
    for (std::size_t i = 0; i < n; ++i)
      r.push_back({double(rng.below(8)), double(rng.below(8)), {}, {}});
    const GroupScores s = group_accuracy(r, 8);
    violations += s.one_off < s.accuracy;
  }
  Verdict v;
  v.pass = m == 3.5 && std::abs(eps_delta - (1 - std::exp(-0.5))) <= 1e-9 && eps_mu == 0 &&
           violations == 0;
  v.detail = "mae " + format_number(m) + ", eps at delta " + fixed(eps_delta, 12) +
             ", eps at mu " + format_number(eps_mu) + ", 1-off below exact in " +
             std::to_string(violations) + "/1000 label sets";
  return v;
}

// ---- 6 ---------------------------------------------------------------------

Verdict fusion_invariance() {
  Rng rng(18);
  std::size_t mismatches = 0;
  for (int i = 0; i < 10000; ++i) {
    const std::size_t k = 2 + rng.below(9);
    AgeDistribution g, l;
    for (AgeDistribution* d : {&g, &l}) {
      double total = 0;
      for (std::size_t j = 0; j < k; ++j) total += d->probs.emplace_back(rng.uniform());
      for (double& p : d->probs) p /= total;
    }
    const std::vector<double> raw = fuse_raw(g, l);
    const std::size_t raw_arg = std::size_t(std::max_element(raw.begin(), raw.end()) - raw.begin());
    mismatches += fuse_predictions(g, l).argmax() != raw_arg;
  }
  std::size_t lost = 0, pairs = 0;
  for (std::size_t k = 2; k <= 8; ++k)
    for (std::size_t a = 0; a < k; ++a)
      for (std::size_t b = 0; b < k; ++b) {
        if (a == b) continue;
        AgeDistribution g{std::vector<double>(k, 0.0), true}, l{std::vector<double>(k, 0.0), true};
        g.probs[a] = 1;
        l.probs[b] = 1;
        lost += fuse_predictions(g, l).argmax() != a;
        ++pairs;
      }
  Verdict v;
  v.pass = mismatches == 0 && lost == 0;
  v.detail = std::to_string(mismatches) + "/10000 argmax mismatches; global one-hot lost " +
             std::to_string(lost) + "/" + std::to_string(pairs) + " conflicts";
  return v;
}

// ---- 7 ---------------------------------------------------------------------

Verdict dex() {
  const HeadConfig lap = HeadConfig::dex(101, 0);
  std::size_t inexact = 0;
  for (std::size_t a = 0; a < 101; ++a) {
    AgeDistribution one{std::vector<double>(101, 0.0), true};
    one.probs[a] = 1;
    inexact += dex_expected_age(one, lap.age_values) != double(a);
  }
  const AgeDistribution uniform{std::vector<double>(101, 1.0 / 101), true};
  const double mean = dex_expected_age(uniform, lap.age_values);
  Verdict v;
  v.pass = inexact == 0 && mean == 50.0;
  v.detail = "one-hot inexact " + std::to_string(inexact) + "/101, uniform over 0..100 gives " +
             format_number(mean);
  return v;
}

// ---- 8 ---------------------------------------------------------------------

DatasetManifest subjects(std::size_t count, Rng& rng) {
  DatasetManifest m;
  for (std::size_t s = 0; s < count; ++s) {
    const std::size_t images = 1 + rng.below(4);
    for (std::size_t i = 0; i < images; ++i) {
      Sample x;
      x.id = "s" + std::to_string(s) + "_" + std::to_string(i);
      x.pixels = Tensor(Shape{3, 1, 1});
      x.age = double(rng.below(80));
      x.subject_id = "subject" + std::to_string(s);
      m.samples.push_back(std::move(x));
    }
  }
  // Interleave subjects so the protocol cannot lean on file order.
  for (std::size_t i = m.samples.size(); i > 1; --i)
    std::swap(m.samples[i - 1], m.samples[rng.below(i)]);
  return m;
}

bool subject_exclusive(const DatasetManifest& m, const Split& s) {
  std::set<std::string> train, test;
  for (std::size_t i : s.train) train.insert(*m.samples[i].subject_id);
  for (std::size_t i : s.test) test.insert(*m.samples[i].subject_id);
  for (const std::string& id : test)
    if (train.count(id)) return false;
  return s.train.size() + s.test.size() == m.size();
}

Verdict protocols() {
  Rng rng(3);
  const DatasetManifest ten = subjects(10, rng);
  const std::vector<Split> five = protocol_split(ten, Protocol::FiveFold, 0);
  std::vector<int> covered(ten.size(), 0);
  bool exclusive = five.size() == 5;
  for (const Split& s : five) {
    exclusive = exclusive && subject_exclusive(ten, s);
    for (std::size_t i : s.test) ++covered[i];
  }
  const bool cover = std::all_of(covered.begin(), covered.end(), [](int c) { return c == 1; });

  const DatasetManifest many = subjects(82, rng);
  const std::vector<Split> loop = protocol_split(many, Protocol::Loop, 0);
  bool loop_ok = loop.size() == 82;
  for (const Split& s : loop) {
    std::set<std::string> ids;
    for (std::size_t i : s.test) ids.insert(*many.samples[i].subject_id);
    loop_ok = loop_ok && ids.size() == 1 && subject_exclusive(many, s);
  }
  Verdict v;
  v.pass = exclusive && cover && loop_ok;
  v.detail = "fivefold: " + std::to_string(five.size()) + " splits over " +
             std::to_string(ten.size()) + " images, disjoint cover " + (cover ? "yes" : "no") +
             ", subject-exclusive " + (exclusive ? "yes" : "no") + "; loop: " +
             std::to_string(loop.size()) + " splits";
  return v;
}

// ---- 9 ---------------------------------------------------------------------

struct EfficacyRun {
  double global = 0, fused = 0;
};

double accuracy_of(Model& model, const TrainConfig& config, const DatasetManifest& data,
                   const std::vector<std::size_t>& test, Branch branch) {
  const std::vector<EvalRecord> r = evaluate(model, config, data, test, branch, false);
  return group_accuracy(r, config.head.classes).accuracy;
}

EfficacyRun efficacy_seed(const DatasetManifest& data, const Split& split, std::uint64_t seed) {
  TrainConfig a;
  a.head = HeadConfig::groups(4);
  a.seed = seed;
  a.epochs = 15;
  a.base_lr = 0.01;
  a.lr_drop_epochs = {11};
  TrainRun global = start_global(a);
  train(global, data, {}, split.train);

  TrainConfig b = a;
  b.stage = Stage::Local;
  b.epochs = 20;
  b.lr_drop_epochs = {15};
  b.augment = false;
  TrainRun local = start_local(b, make_checkpoint(global));
  train(local, data, {}, split.train);

  EfficacyRun out;
  out.global = accuracy_of(global.model, a, data, split.test, Branch::Global);
  out.fused = accuracy_of(local.model, b, data, split.test, Branch::Fused);
  return out;
}

Verdict attention_efficacy() {
  const auto t0 = std::chrono::steady_clock::now();
  const SynthDataset synth = synth_dataset(SynthConfig{});  // 640 images, 4 classes, seed 0
  const Split split = protocol_split(synth.manifest, Protocol::Fixed, 0).front();
  std::string detail = std::to_string(split.train.size()) + " train / " +
                       std::to_string(split.test.size()) + " test;";
  double gain = 0;
  bool never_worse = true;
  for (std::uint64_t seed : {0, 1, 2}) {
    const EfficacyRun r = efficacy_seed(synth.manifest, split, seed);
    gain += (r.fused - r.global) / 3;
    never_worse = never_worse && r.fused >= r.global;
    detail += " seed " + std::to_string(seed) + " global " + fixed(100 * r.global, 2) +
              "% fused " + fixed(100 * r.fused, 2) + "%;";
  }
  const double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  Verdict v;
  v.pass = never_worse && gain >= 0.03 && secs < 15 * 60;
  v.detail = detail + " mean gain " + fixed(100 * gain, 2) + " pp, " + fixed(secs / 60, 1) + " min";
  return v;
}

// ---- 10 --------------------------------------------------------------------

Verdict determinism_and_resume() {
  SynthConfig sc;
  sc.samples = 32;
  const DatasetManifest data = synth_dataset(sc).manifest;
  TrainConfig c;
  c.head = HeadConfig::groups(4);
  c.seed = 11;
  c.epochs = 2;
  c.lr_drop_epochs = {1};

  const auto once = encode_checkpoint(train_global(c, data));
  const auto twice = encode_checkpoint(train_global(c, data));

  const auto path = std::filesystem::temp_directory_path() / "alnet_acceptance_resume.ckpt";
  TrainRun half = start_global(c);
  train_epoch(half, data);
  save_checkpoint(make_checkpoint(half), path);
  TrainRun resumed = resume(load_checkpoint(path));
  train(resumed, data);
  const bool global_resume = encode_checkpoint(make_checkpoint(resumed)) == once;

  const Checkpoint base = decode_checkpoint(once);
  TrainConfig l = c;
  l.stage = Stage::Local;
  const auto local_once = encode_checkpoint(train_local(l, data, base));
  const auto local_twice = encode_checkpoint(train_local(l, data, base));
  TrainRun lhalf = start_local(l, base);
  train_epoch(lhalf, data);
  save_checkpoint(make_checkpoint(lhalf), path);
  TrainRun lresumed = resume(load_checkpoint(path));
  train(lresumed, data);
  const bool local_resume = encode_checkpoint(make_checkpoint(lresumed)) == local_once;
  std::filesystem::remove(path);

  Verdict v;
  v.pass = once == twice && local_once == local_twice && global_resume && local_resume;
  v.detail = std::string("same seed identical: global ") + (once == twice ? "yes" : "no") +
             ", local " + (local_once == local_twice ? "yes" : "no") +
             "; resume identical: global " + (global_resume ? "yes" : "no") + ", local " +
             (local_resume ? "yes" : "no") + " (" + std::to_string(once.size()) + " bytes)";
  return v;
}

// ---- 11 --------------------------------------------------------------------

Verdict ten_crop() {
  ModelConfig mc;
  mc.classes = 4;
  Model model = Model::init(mc, 0);
  CropPredictor predictor = [&](const Tensor& crop) {
    LstmState state = LstmState::zeros();
    return predict(model, crop, state, kDefaultSharpness).fused;
  };
  Rng rng(6);
  Tensor sym(Shape{3, 64, 64});
  for (std::size_t ch = 0; ch < 3; ++ch)
    for (std::size_t y = 0; y < 64; ++y)
      for (std::size_t x = 0; x < 32; ++x) {
        const real v = static_cast<real>(rng.uniform());
        sym.data()[(ch * 64 + y) * 64 + x] = v;
        sym.data()[(ch * 64 + y) * 64 + 63 - x] = v;
      }
  const AgeDistribution ten = ten_crop_predict(predictor, sym, 56);
  const AgeDistribution five = five_crop_predict(predictor, sym, 56);
  double sym_gap = 0;
  for (std::size_t k = 0; k < 4; ++k) sym_gap = std::max(sym_gap, std::abs(ten.probs[k] - five.probs[k]));

  const std::size_t h = 64, w = 70, s = 56;
  const Tensor img = random_image(rng, h, w);
  const std::size_t rows[5] = {0, 0, h - s, h - s, (h - s) / 2};
  const std::size_t cols[5] = {0, w - s, 0, w - s, (w - s) / 2};
  std::vector<double> acc(4, 0.0);
  for (int mirror = 0; mirror < 2; ++mirror)
    for (int k = 0; k < 5; ++k) {
      Tensor crop(Shape{3, s, s});
      for (std::size_t ch = 0; ch < 3; ++ch)
        for (std::size_t y = 0; y < s; ++y)
          for (std::size_t x = 0; x < s; ++x) {
            const std::size_t sx = cols[k] + (mirror ? s - 1 - x : x);
            crop.data()[(ch * s + y) * s + x] = img.data()[(ch * h + rows[k] + y) * w + sx];
          }
      const AgeDistribution p = predictor(crop);
      for (std::size_t j = 0; j < 4; ++j) acc[j] += p.probs[j] / 10;
    }
  const AgeDistribution avg = ten_crop_predict(predictor, img, s);
  double avg_gap = 0;
  for (std::size_t j = 0; j < 4; ++j) avg_gap = std::max(avg_gap, std::abs(avg.probs[j] - acc[j]));

  Verdict v;
  v.pass = sym_gap <= 1e-6 && avg_gap <= 1e-6;
  v.detail = "symmetric image ten vs five crop " + sci(sym_gap) + ", explicit 10-forward " +
             sci(avg_gap);
  return v;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria"};
  std::vector<int> only;
  app.add_option("--only", only, "run just these criteria (1-11)")->check(CLI::Range(1, 11));
  CLI11_PARSE(app, argc, argv);

  const std::vector<std::pair<std::string, std::function<Verdict()>>> criteria{
      {"gradient integrity", gradient_integrity},
      {"architecture equivalence", architecture_equivalence},
      {"lstm oracle", lstm_oracle},
      {"crop soundness", crop_soundness},
      {"metric exactness", metric_exactness},
      {"fusion decision invariance", fusion_invariance},
      {"dex", dex},
      {"protocol correctness", protocols},
      {"attention efficacy", attention_efficacy},
      {"determinism and resume", determinism_and_resume},
      {"ten-crop", ten_crop},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int number = int(i) + 1;
    if (!only.empty() && std::find(only.begin(), only.end(), number) == only.end()) continue;
    Verdict v;
    try {
      v = criteria[i].second();
    } catch (const std::exception& e) {
      v = {false, std::string("raised: ") + e.what()};
    }
    failed += !v.pass;
    std::printf("criterion %2d %-4s %s: %s\n", number, v.pass ? "PASS" : "FAIL",
                criteria[i].first.c_str(), v.detail.c_str());
    std::fflush(stdout);
  }
  return failed == 0 ? 0 : 1;
}
