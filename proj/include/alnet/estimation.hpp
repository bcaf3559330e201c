#pragma once

#include <array>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "alnet/attention.hpp"
#include "alnet/data.hpp"

ALNET_NS_BEGIN

enum class HeadMode { Group, Dex };

const char* to_string(HeadMode mode);
HeadMode parse_head_mode(const std::string& text);

/// Output layer semantics. Group mode classifies into the first `classes` of
/// the eight age ranges (all eight outside toy runs); dex mode has one class
/// per integer age in `age_values` and predicts the expected age.
struct HeadConfig {
  HeadMode mode = HeadMode::Group;
  std::size_t classes = 8;
  std::vector<double> age_values;

  static HeadConfig groups(std::size_t classes = 8);
  /// Consecutive integer ages first_age, ..., first_age + m - 1.
  static HeadConfig dex(std::size_t m, double first_age = 0);
  /// "morph" (M=62, 16..77), "fgnet" (M=70, 0..69) or "lap" (M=101, 0..100).
  static HeadConfig dex_preset(const std::string& dataset);

  void validate() const;
  /// Training target of a sample: its group index, or the nearest age class.
  std::size_t label_of(const Sample& sample) const;
  /// Point prediction: group index (as a number) or the expected age.
  double point_prediction(const AgeDistribution& probs) const;
  /// Ground truth on the same scale as point_prediction.
  double point_truth(const Sample& sample) const;
};

/// Σ p_i · age_i. Input error when the distribution does not sum to 1 (±1e-6).
double dex_expected_age(const AgeDistribution& probs, std::span<const double> age_values);

struct EvalRecord {
  double predicted = 0;
  double actual = 0;
  std::optional<double> mu;     // defaults to `actual`
  std::optional<double> delta;
};

double mae(std::span<const EvalRecord> records);
/// Mean of 1 − exp(−(x−μ)²/2δ²) with δ clamped below at 1e-6. Values stay
/// strictly below 1.
double epsilon_error(std::span<const EvalRecord> records);
inline constexpr double kMinDelta = 1e-6;

struct GroupScores {
  double accuracy = 0;
  double one_off = 0;
};
/// Exact and within-one index agreement; indices must lie in [0, classes).
GroupScores group_accuracy(std::span<const EvalRecord> records, std::size_t classes = 8);

enum class Protocol { FiveFold, Loop, Fixed };
const char* to_string(Protocol protocol);
Protocol parse_protocol(const std::string& text);

/// Indices into the manifest, each side in manifest order.
struct Split {
  std::string name;
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
};

/// fivefold: distinct subject ids are sorted, shuffled by `seed` and dealt
/// round-robin into five groups. loop: one split per subject, in sorted order.
/// fixed: one split per distinct fold value.
std::vector<Split> protocol_split(const DatasetManifest& manifest, Protocol protocol,
                                  std::uint64_t seed);

/// Crop origins for the ten-crop scheme: top-left, top-right, bottom-left,
/// bottom-right, centre; the mirrored crops follow in the same order.
struct CropOrigin {
  std::size_t row, col;
};
std::array<CropOrigin, 5> five_crop_origins(std::size_t height, std::size_t width,
                                            std::size_t crop);
std::vector<Tensor> ten_crops(const Tensor& image, std::size_t crop);

using CropPredictor = std::function<AgeDistribution(const Tensor& crop)>;
/// Averages the predictor over the crops and renormalizes.
AgeDistribution average_predictions(std::span<const AgeDistribution> predictions);
AgeDistribution ten_crop_predict(const CropPredictor& predict, const Tensor& image,
                                 std::size_t crop);
AgeDistribution five_crop_predict(const CropPredictor& predict, const Tensor& image,
                                  std::size_t crop);

struct SplitResult {
  std::string name;
  std::size_t test_count = 0;
  std::vector<double> values;  // one per report metric
};

/// Per-split metrics with mean and sample standard deviation (n−1) across splits.
struct EvalReport {
  std::string protocol;
  std::vector<std::string> metrics;
  std::vector<SplitResult> splits;

  double mean(std::size_t metric) const;
  double stddev(std::size_t metric) const;
  std::string table() const;
  std::string json() const;
};

/// Metric names and values of one set of records for the head's mode:
/// accuracy and one_off for groups; mae (and epsilon_error when every record
/// has a delta) for dex.
std::vector<std::string> metric_names(HeadMode mode, bool with_epsilon);
std::vector<double> score_records(HeadMode mode, bool with_epsilon,
                                  std::span<const EvalRecord> records, std::size_t classes);

ALNET_NS_END
