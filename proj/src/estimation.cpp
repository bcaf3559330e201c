#include "alnet/estimation.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

ALNET_NS_BEGIN

const char* to_string(HeadMode mode) { return mode == HeadMode::Dex ? "dex" : "group"; }

HeadMode parse_head_mode(const std::string& text) {
  if (text == "group") return HeadMode::Group;
  if (text == "dex") return HeadMode::Dex;
  fail(ErrorKind::Config, "unknown head mode '" + text + "' (expected group or dex)");
}

HeadConfig HeadConfig::groups(std::size_t classes) {
  HeadConfig h;
  h.mode = HeadMode::Group;
  h.classes = classes;
  for (std::size_t g = 0; g < std::min(classes, kAgeGroups.size()); ++g)
    h.age_values.push_back(age_group_centre(g));
  h.validate();
  return h;
}

HeadConfig HeadConfig::dex(std::size_t m, double first_age) {
  HeadConfig h;
  h.mode = HeadMode::Dex;
  h.classes = m;
  for (std::size_t i = 0; i < m; ++i) h.age_values.push_back(first_age + double(i));
  h.validate();
  return h;
}

HeadConfig HeadConfig::dex_preset(const std::string& dataset) {
  if (dataset == "morph") return dex(62, 16);
  if (dataset == "fgnet") return dex(70, 0);
  if (dataset == "lap") return dex(101, 0);
  fail(ErrorKind::Config, "unknown dex preset '" + dataset + "' (expected morph, fgnet or lap)");
}

void HeadConfig::validate() const {
  require(classes >= 2, ErrorKind::Config, "head needs at least 2 classes");
  if (mode == HeadMode::Group) {
    require(classes <= kAgeGroups.size(), ErrorKind::Config,
            "group head has at most 8 classes, got " + std::to_string(classes));
    return;
  }
  require(age_values.size() == classes, ErrorKind::Config,
          "dex head needs one age value per class");
  for (std::size_t i = 1; i < age_values.size(); ++i)
    require(age_values[i] > age_values[i - 1], ErrorKind::Config,
            "dex age values must be strictly increasing");
}

std::size_t HeadConfig::label_of(const Sample& s) const {
  if (mode == HeadMode::Group) {
    const std::size_t g = s.group ? std::size_t(*s.group) : nearest_age_group(s.age);
    require(g < classes, ErrorKind::Input,
            "sample '" + s.id + "' has group " + std::to_string(g) + " but the head has " +
                std::to_string(classes) + " classes");
    return g;
  }
  auto it = std::lower_bound(age_values.begin(), age_values.end(), s.age);
  if (it == age_values.end()) return classes - 1;
  if (it != age_values.begin() && s.age - *(it - 1) <= *it - s.age) --it;
  return std::size_t(it - age_values.begin());
}

double HeadConfig::point_prediction(const AgeDistribution& probs) const {
  if (mode == HeadMode::Group) return double(probs.argmax());
  return dex_expected_age(probs, age_values);
}

double HeadConfig::point_truth(const Sample& s) const {
  return mode == HeadMode::Group ? double(label_of(s)) : s.age;
}

namespace {

// Neumaier-compensated running sum.
struct CompensatedSum {
  double sum = 0, carry = 0;
  void add(double v) {
    const double t = sum + v;
    carry += std::abs(sum) >= std::abs(v) ? (sum - t) + v : (v - t) + sum;
    sum = t;
  }
  double value() const { return sum + carry; }
};

}  // namespace

double dex_expected_age(const AgeDistribution& probs, std::span<const double> ages) {
  require(probs.probs.size() == ages.size(), ErrorKind::Input,
          "distribution and age values differ in length");
  CompensatedSum total, weighted;
  for (std::size_t i = 0; i < ages.size(); ++i) {
    require(probs.probs[i] >= 0, ErrorKind::Input, "negative probability");
    total.add(probs.probs[i]);
    weighted.add(probs.probs[i] * ages[i]);
  }
  require(probs.normalized && std::abs(total.value() - 1.0) <= 1e-6, ErrorKind::Input,
          "expected age needs a normalized distribution");
  // Dividing by the realized total cancels the rounding of the stored masses.
  return std::clamp(weighted.value() / total.value(), ages.front(), ages.back());
}

double mae(std::span<const EvalRecord> records) {
  require(!records.empty(), ErrorKind::Input, "MAE of an empty record list");
  double sum = 0;
  for (const EvalRecord& r : records) sum += std::abs(r.actual - r.predicted);
  return sum / double(records.size());
}

double epsilon_error(std::span<const EvalRecord> records) {
  // The error never reaches 1; far tails would otherwise round up to it.
  const double kBelowOne = std::nextafter(1.0, 0.0);
  require(!records.empty(), ErrorKind::Input, "epsilon-error of an empty record list");
  double sum = 0;
  for (const EvalRecord& r : records) {
    require(r.delta.has_value() && *r.delta >= 0, ErrorKind::Input,
            "epsilon-error needs a non-negative delta on every record");
    const double delta = std::max(*r.delta, kMinDelta);
    const double d = r.predicted - r.mu.value_or(r.actual);
    sum += std::min(1.0 - std::exp(-(d * d) / (2 * delta * delta)), kBelowOne);
  }
  return std::min(sum / double(records.size()), kBelowOne);
}

GroupScores group_accuracy(std::span<const EvalRecord> records, std::size_t classes) {
  require(!records.empty(), ErrorKind::Input, "accuracy of an empty record list");
  std::size_t exact = 0, near = 0;
  for (const EvalRecord& r : records) {
    auto index = [classes](double v) {
      const double k = std::round(v);
      require(v == k && k >= 0 && k < double(classes), ErrorKind::Input,
              "group index out of range: " + std::to_string(v));
      return long(k);
    };
    const long p = index(r.predicted), a = index(r.actual);
    exact += p == a;
    near += std::labs(p - a) <= 1;
  }
  const double n = double(records.size());
  return {double(exact) / n, double(near) / n};
}

const char* to_string(Protocol p) {
  switch (p) {
    case Protocol::FiveFold: return "fivefold";
    case Protocol::Loop: return "loop";
    case Protocol::Fixed: return "fixed";
  }
  return "?";
}

Protocol parse_protocol(const std::string& text) {
  if (text == "fivefold") return Protocol::FiveFold;
  if (text == "loop") return Protocol::Loop;
  if (text == "fixed") return Protocol::Fixed;
  fail(ErrorKind::Usage, "unknown protocol '" + text + "' (expected fivefold, loop or fixed)");
}

std::vector<Split> protocol_split(const DatasetManifest& m, Protocol protocol,
                                  std::uint64_t seed) {
  require(!m.samples.empty(), ErrorKind::Input, "cannot split an empty manifest");
  // Key of each sample: its subject (fivefold, loop) or fold (fixed).
  std::vector<std::string> key(m.size());
  for (std::size_t i = 0; i < m.size(); ++i) {
    const Sample& s = m.samples[i];
    if (protocol == Protocol::Fixed) {
      require(s.fold.has_value(), ErrorKind::Input,
              "sample '" + s.id + "' has no fold for the fixed protocol");
      key[i] = std::to_string(*s.fold);
    } else {
      require(s.subject_id.has_value(), ErrorKind::Input,
              "sample '" + s.id + "' has no subject id");
      key[i] = *s.subject_id;
    }
  }
  const std::set<std::string> distinct(key.begin(), key.end());

  // Map each key to the index of its test group.
  std::map<std::string, std::size_t> group_of;
  std::vector<std::string> names;
  if (protocol == Protocol::FiveFold) {
    require(distinct.size() >= 5, ErrorKind::Input,
            "five-fold splitting needs at least 5 subjects, found " +
                std::to_string(distinct.size()));
    std::vector<std::string> subjects(distinct.begin(), distinct.end());
    Rng rng(seed);
    for (std::size_t i = subjects.size(); i > 1; --i) std::swap(subjects[i - 1], subjects[rng.below(i)]);
    for (std::size_t i = 0; i < subjects.size(); ++i) group_of[subjects[i]] = i % 5;
    for (int f = 1; f <= 5; ++f) names.push_back("fold" + std::to_string(f));
  } else if (protocol == Protocol::Loop) {
    require(distinct.size() >= 2, ErrorKind::Input, "leave-one-out needs at least 2 subjects");
    for (const std::string& s : distinct) {
      group_of[s] = names.size();
      names.push_back(s);
    }
  } else {
    require(distinct.size() >= 2, ErrorKind::Input, "fixed protocol needs at least 2 folds");
    std::vector<int> folds;
    for (const std::string& s : distinct) folds.push_back(std::stoi(s));
    std::sort(folds.begin(), folds.end());
    for (int f : folds) {
      group_of[std::to_string(f)] = names.size();
      names.push_back("fold" + std::to_string(f));
    }
  }

  std::vector<Split> splits(names.size());
  for (std::size_t g = 0; g < names.size(); ++g) splits[g].name = names[g];
  for (std::size_t i = 0; i < m.size(); ++i) {
    const std::size_t g = group_of.at(key[i]);
    for (std::size_t s = 0; s < splits.size(); ++s) (s == g ? splits[s].test : splits[s].train).push_back(i);
  }
  return splits;
}

std::array<CropOrigin, 5> five_crop_origins(std::size_t h, std::size_t w, std::size_t crop) {
  require(crop >= 1 && crop <= h && crop <= w, ErrorKind::Input,
          "image " + std::to_string(h) + "x" + std::to_string(w) + " is smaller than the " +
              std::to_string(crop) + " px crop");
  return {{{0, 0}, {0, w - crop}, {h - crop, 0}, {h - crop, w - crop},
           {(h - crop) / 2, (w - crop) / 2}}};
}

std::vector<Tensor> ten_crops(const Tensor& image, std::size_t crop) {
  require(image.defined() && image.rank() == 3, ErrorKind::Input, "ten-crop expects [3,H,W]");
  std::vector<Tensor> out;
  for (const CropOrigin& o : five_crop_origins(image.dim(1), image.dim(2), crop))
    out.push_back(crop_image(image, o.row, o.col, crop, crop));
  for (std::size_t i = 0; i < 5; ++i) out.push_back(flip_horizontal(out[i]));
  return out;
}

AgeDistribution average_predictions(std::span<const AgeDistribution> preds) {
  require(!preds.empty(), ErrorKind::Input, "nothing to average");
  std::vector<double> avg(preds.front().probs.size(), 0.0);
  for (const AgeDistribution& p : preds) {
    require(p.probs.size() == avg.size(), ErrorKind::Input, "predictions differ in length");
    for (std::size_t k = 0; k < avg.size(); ++k) avg[k] += p.probs[k];
  }
  const double total = std::accumulate(avg.begin(), avg.end(), 0.0);
  require(total > 0, ErrorKind::Numeric, "averaged prediction has no mass");
  for (double& v : avg) v /= total;
  return {std::move(avg), true};
}

AgeDistribution ten_crop_predict(const CropPredictor& predict, const Tensor& image,
                                 std::size_t crop) {
  std::vector<AgeDistribution> preds;
  for (const Tensor& c : ten_crops(image, crop)) preds.push_back(predict(c));
  return average_predictions(preds);
}

AgeDistribution five_crop_predict(const CropPredictor& predict, const Tensor& image,
                                  std::size_t crop) {
  std::vector<Tensor> crops = ten_crops(image, crop);
  std::vector<AgeDistribution> preds;
  for (std::size_t i = 0; i < 5; ++i) preds.push_back(predict(crops[i]));
  return average_predictions(preds);
}

double EvalReport::mean(std::size_t metric) const {
  require(!splits.empty(), ErrorKind::Input, "report has no splits");
  double s = 0;
  for (const SplitResult& r : splits) s += r.values.at(metric);
  return s / double(splits.size());
}

double EvalReport::stddev(std::size_t metric) const {
  if (splits.size() < 2) return 0;
  const double mu = mean(metric);
  double s = 0;
  for (const SplitResult& r : splits) s += (r.values.at(metric) - mu) * (r.values.at(metric) - mu);
  return std::sqrt(s / double(splits.size() - 1));
}

namespace {

bool is_fraction(const std::string& metric) { return metric == "accuracy" || metric == "one_off"; }

std::string show(const std::string& metric, double v) {
  std::ostringstream out;
  if (is_fraction(metric))
    out << std::fixed << std::setprecision(2) << 100 * v << '%';
  else
    out << std::fixed << std::setprecision(4) << v;
  return out.str();
}

}  // namespace

std::string EvalReport::table() const {
  std::ostringstream out;
  out << std::left << std::setw(16) << "split" << std::setw(8) << "n";
  for (const auto& m : metrics) out << std::setw(20) << m;
  out << '\n';
  for (const SplitResult& r : splits) {
    out << std::setw(16) << r.name << std::setw(8) << r.test_count;
    for (std::size_t i = 0; i < metrics.size(); ++i) out << std::setw(20) << show(metrics[i], r.values[i]);
    out << '\n';
  }
  out << std::setw(24) << "mean±sd(n-1)";
  for (std::size_t i = 0; i < metrics.size(); ++i) {
    std::string cell = show(metrics[i], mean(i)) + "±" + show(metrics[i], stddev(i));
    out << std::setw(20) << cell;
  }
  out << '\n';
  return out.str();
}

std::string EvalReport::json() const {
  nlohmann::ordered_json j;
  j["protocol"] = protocol;
  j["metrics"] = metrics;
  j["splits"] = nlohmann::ordered_json::array();
  for (const SplitResult& r : splits) {
    nlohmann::ordered_json s;
    s["name"] = r.name;
    s["test_count"] = r.test_count;
    for (std::size_t i = 0; i < metrics.size(); ++i) s[metrics[i]] = r.values[i];
    j["splits"].push_back(s);
  }
  for (std::size_t i = 0; i < metrics.size(); ++i)
    j["summary"][metrics[i]] = {{"mean", mean(i)}, {"sample_stddev", stddev(i)}};
  return j.dump(2) + "\n";
}

std::vector<std::string> metric_names(HeadMode mode, bool with_epsilon) {
  if (mode == HeadMode::Group) return {"accuracy", "one_off"};
  if (with_epsilon) return {"mae", "epsilon_error"};
  return {"mae"};
}

std::vector<double> score_records(HeadMode mode, bool with_epsilon,
                                  std::span<const EvalRecord> records, std::size_t classes) {
  if (mode == HeadMode::Group) {
    const GroupScores g = group_accuracy(records, classes);
    return {g.accuracy, g.one_off};
  }
  if (with_epsilon) return {mae(records), epsilon_error(records)};
  return {mae(records)};
}

ALNET_NS_END
