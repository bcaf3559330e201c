#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "alnet/random.hpp"
#include "alnet/tensor.hpp"

ALNET_NS_BEGIN

/// The eight age ranges, youngest first, in whole years (inclusive).
struct AgeRange {
  double lo, hi;
};
inline constexpr std::array<AgeRange, 8> kAgeGroups{{
    {0, 2}, {4, 6}, {8, 13}, {15, 20}, {25, 32}, {38, 43}, {48, 53}, {60, 100}}};

/// Index of the range nearest to `age` (distance 0 inside a range).
std::size_t nearest_age_group(double age);
/// True when no other range is strictly nearer to `age` than `group`.
bool age_fits_group(double age, std::size_t group);
/// Midpoint of a range.
double age_group_centre(std::size_t group);

/// Planar RGB raster in [0,1], [3,H,W].
Tensor read_ppm(const std::filesystem::path& path);
void write_ppm(const std::filesystem::path& path, const Tensor& image);
/// Values quantized to bytes, round-half-up.
std::vector<std::uint8_t> to_bytes(const Tensor& image);

struct Sample {
  std::string id;
  std::string path;      // empty when the pixels are inline
  Tensor pixels;         // [3,H,W]; populated for inline records or after loading
  double age = 0;
  std::optional<int> group;
  std::optional<std::string> subject_id;
  std::optional<double> sigma;
  std::optional<int> fold;
};

/// Shortest decimal text that reads back to the same double.
std::string format_number(double v);

/// Ordered sample records with `# key=value` metadata.
///
/// Line format, tab separated: id, path or inline:HxW:hex, age, group,
/// subject_id, sigma, fold. Absent optional fields are written as `-`.
struct DatasetManifest {
  std::map<std::string, std::string> metadata;
  std::vector<Sample> samples;
  std::filesystem::path base_dir;  // raster paths are relative to this

  std::size_t size() const { return samples.size(); }
  std::string meta(const std::string& key, const std::string& fallback = "") const;
  /// Pixels of sample i, reading the raster when not already in memory.
  Tensor pixels(std::size_t i) const;
  /// Reads every referenced raster into memory.
  void load_all_pixels();
  DatasetManifest subset(const std::vector<std::size_t>& indices) const;
};

DatasetManifest parse_manifest(const std::string& text,
                               const std::filesystem::path& base_dir = {});
DatasetManifest load_manifest(const std::filesystem::path& path);
std::string format_manifest(const DatasetManifest& manifest);
void save_manifest(const DatasetManifest& manifest, const std::filesystem::path& path);

/// Inline pixel encoding: `inline:HxW:` followed by the interleaved RGB bytes
/// in row-major order as lowercase hex.
std::string encode_inline(const Tensor& image);
Tensor decode_inline(const std::string& field);

enum class PreprocessMode { Train, Eval };

struct PreprocessConfig {
  std::size_t resize = 64;  // R
  std::size_t crop = 56;    // S
  bool jitter = true;       // scale and aspect jitter in train mode
  bool flip = true;         // horizontal flip with p = 0.5 in train mode
  double min_scale = 0.7, max_scale = 1.0;
  double min_aspect = 3.0 / 4.0, max_aspect = 4.0 / 3.0;

  static PreprocessConfig full() { return {256, 224}; }
  static PreprocessConfig toy() { return {64, 56}; }
  void validate() const;
};

/// Bilinear resampling with half-pixel centres; output stays inside the input range.
Tensor resize_bilinear(const Tensor& image, std::size_t height, std::size_t width);
/// Sub-image [3, h, w] starting at (row, col).
Tensor crop_image(const Tensor& image, std::size_t row, std::size_t col, std::size_t height,
                  std::size_t width);
Tensor flip_horizontal(const Tensor& image);

/// Resize to R×R; eval takes the centre S×S crop, train a seeded random crop
/// (optionally jittered and flipped) resampled to S×S.
Tensor preprocess(const Tensor& image, const PreprocessConfig& config, PreprocessMode mode,
                  std::uint64_t seed);

enum class Quadrant { TopLeft, TopRight, BottomLeft, BottomRight };
const char* to_string(Quadrant q);
Quadrant parse_quadrant(const std::string& text);

struct SynthConfig {
  std::size_t samples = 640;
  std::size_t classes = 4;
  std::size_t image_size = 64;
  std::size_t patch_size = 20;
  Quadrant region = Quadrant::TopLeft;
  /// Stripe patches of random class in the other quadrants.
  bool distractors = true;
  std::size_t images_per_subject = 4;
  std::uint64_t seed = 0;
};

/// Where the class-bearing patch was drawn, in image pixels.
struct PatchBox {
  std::string id;
  std::size_t row = 0, col = 0, size = 0;
};

struct SynthDataset {
  DatasetManifest manifest;
  std::vector<PatchBox> patches;
};

/// Images whose class is carried only by the stripe orientation inside one
/// patch in the chosen quadrant. Labels cycle through the classes.
SynthDataset synth_dataset(const SynthConfig& config);
/// Writes manifest.tsv, patches.tsv and images/<id>.ppm under `dir`.
void write_synth_dataset(const SynthDataset& data, const std::filesystem::path& dir);

ALNET_NS_END
