#include "alnet/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numbers>
#include <set>
#include <sstream>

ALNET_NS_BEGIN

namespace fs = std::filesystem;

std::size_t nearest_age_group(double age) {
  std::size_t best = 0;
  double best_d = INFINITY;
  for (std::size_t g = 0; g < kAgeGroups.size(); ++g) {
    const double d = std::max({kAgeGroups[g].lo - age, 0.0, age - kAgeGroups[g].hi});
    if (d < best_d) {
      best_d = d;
      best = g;
    }
  }
  return best;
}

bool age_fits_group(double age, std::size_t group) {
  if (group >= kAgeGroups.size()) return false;
  auto dist = [age](const AgeRange& r) { return std::max({r.lo - age, 0.0, age - r.hi}); };
  const double mine = dist(kAgeGroups[group]);
  for (const AgeRange& r : kAgeGroups)
    if (dist(r) < mine) return false;
  return true;
}

double age_group_centre(std::size_t group) {
  require(group < kAgeGroups.size(), ErrorKind::Input, "age group index out of range");
  return 0.5 * (kAgeGroups[group].lo + kAgeGroups[group].hi);
}

// ---- rasters --------------------------------------------------------------

namespace {

void check_image(const Tensor& image, const char* what) {
  require(image.defined() && image.rank() == 3 && image.dim(0) == 3, ErrorKind::Input,
          std::string(what) + " expects a [3,H,W] image");
  require(image.dim(1) >= 1 && image.dim(2) >= 1, ErrorKind::Input,
          std::string(what) + ": image has zero extent");
}

std::string read_token(std::istream& in) {
  std::string tok;
  char ch;
  while (in.get(ch)) {
    if (ch == '#') {
      std::string skip;
      std::getline(in, skip);
    } else if (!std::isspace(static_cast<unsigned char>(ch))) {
      tok.push_back(ch);
      break;
    }
  }
  while (in.get(ch) && !std::isspace(static_cast<unsigned char>(ch))) tok.push_back(ch);
  return tok;
}

template <typename T>
bool parse_number(const std::string& text, T& out) {
  const char* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data(), end, out);
  return ec == std::errc() && ptr == end;
}

}  // namespace

std::string format_number(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

std::vector<std::uint8_t> to_bytes(const Tensor& image) {
  check_image(image, "to_bytes");
  const std::size_t h = image.dim(1), w = image.dim(2);
  std::vector<std::uint8_t> out(3 * h * w);
  auto v = image.data();
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t c = 0; c < 3; ++c) {
        const double q = std::floor(std::clamp(double(v[(c * h + y) * w + x]), 0.0, 1.0) * 255 + 0.5);
        out[(y * w + x) * 3 + c] = static_cast<std::uint8_t>(q);
      }
  return out;
}

namespace {

Tensor from_bytes(const std::uint8_t* bytes, std::size_t h, std::size_t w, double maxval) {
  Tensor t(Shape{3, h, w});
  auto v = t.data();
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t c = 0; c < 3; ++c)
        v[(c * h + y) * w + x] = static_cast<real>(bytes[(y * w + x) * 3 + c] / maxval);
  return t;
}

}  // namespace

Tensor read_ppm(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(bool(in), ErrorKind::Io, "cannot open raster " + path.string());
  require(read_token(in) == "P6", ErrorKind::Parse, path.string() + ": not a binary PPM (P6)");
  std::size_t w = 0, h = 0;
  unsigned maxval = 0;
  const bool ok = parse_number(read_token(in), w) && parse_number(read_token(in), h) &&
                  parse_number(read_token(in), maxval);
  require(ok && w > 0 && h > 0, ErrorKind::Parse, path.string() + ": malformed PPM header");
  require(maxval >= 1 && maxval <= 255, ErrorKind::Parse,
          path.string() + ": only 8-bit PPM is supported");
  std::vector<std::uint8_t> bytes(3 * w * h);
  in.read(reinterpret_cast<char*>(bytes.data()), std::streamsize(bytes.size()));
  require(std::size_t(in.gcount()) == bytes.size(), ErrorKind::Parse,
          path.string() + ": truncated pixel data");
  return from_bytes(bytes.data(), h, w, maxval);
}

void write_ppm(const fs::path& path, const Tensor& image) {
  const std::vector<std::uint8_t> bytes = to_bytes(image);
  std::ofstream out(path, std::ios::binary);
  require(bool(out), ErrorKind::Io, "cannot write raster " + path.string());
  out << "P6\n" << image.dim(2) << ' ' << image.dim(1) << "\n255\n";
  out.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
  require(bool(out), ErrorKind::Io, "failed writing " + path.string());
}

std::string encode_inline(const Tensor& image) {
  static const char* digits = "0123456789abcdef";
  const std::vector<std::uint8_t> bytes = to_bytes(image);
  std::string out = "inline:" + std::to_string(image.dim(1)) + "x" + std::to_string(image.dim(2)) + ":";
  out.reserve(out.size() + 2 * bytes.size());
  for (std::uint8_t b : bytes) {
    out.push_back(digits[b >> 4]);
    out.push_back(digits[b & 15]);
  }
  return out;
}

Tensor decode_inline(const std::string& field) {
  const std::string prefix = "inline:";
  require(field.rfind(prefix, 0) == 0, ErrorKind::Parse, "inline pixels must start with 'inline:'");
  const std::size_t x = field.find('x', prefix.size());
  const std::size_t colon = field.find(':', prefix.size());
  std::size_t h = 0, w = 0;
  require(x != std::string::npos && colon != std::string::npos && x < colon &&
              parse_number(field.substr(prefix.size(), x - prefix.size()), h) &&
              parse_number(field.substr(x + 1, colon - x - 1), w) && h > 0 && w > 0,
          ErrorKind::Parse, "inline pixels need an HxW size");
  const std::string hex = field.substr(colon + 1);
  require(hex.size() == 6 * h * w, ErrorKind::Parse,
          "inline pixels: expected " + std::to_string(6 * h * w) + " hex digits, got " +
              std::to_string(hex.size()));
  std::vector<std::uint8_t> bytes(3 * h * w);
  for (std::size_t i = 0; i < bytes.size(); ++i) {
    unsigned v = 0;
    auto [ptr, ec] = std::from_chars(hex.data() + 2 * i, hex.data() + 2 * i + 2, v, 16);
    require(ec == std::errc() && ptr == hex.data() + 2 * i + 2, ErrorKind::Parse,
            "inline pixels: invalid hex digit");
    bytes[i] = static_cast<std::uint8_t>(v);
  }
  return from_bytes(bytes.data(), h, w, 255.0);
}

// ---- manifest -------------------------------------------------------------

std::string DatasetManifest::meta(const std::string& key, const std::string& fallback) const {
  auto it = metadata.find(key);
  return it == metadata.end() ? fallback : it->second;
}

Tensor DatasetManifest::pixels(std::size_t i) const {
  require(i < samples.size(), ErrorKind::Input, "sample index out of range");
  const Sample& s = samples[i];
  if (s.pixels.defined()) return s.pixels;
  return read_ppm(base_dir / s.path);
}

void DatasetManifest::load_all_pixels() {
  for (std::size_t i = 0; i < samples.size(); ++i)
    if (!samples[i].pixels.defined()) samples[i].pixels = pixels(i);
}

DatasetManifest DatasetManifest::subset(const std::vector<std::size_t>& indices) const {
  DatasetManifest out;
  out.metadata = metadata;
  out.base_dir = base_dir;
  for (std::size_t i : indices) {
    require(i < samples.size(), ErrorKind::Input, "sample index out of range");
    out.samples.push_back(samples[i]);
  }
  return out;
}

namespace {

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  for (;;) {
    const std::size_t tab = line.find('\t', start);
    out.push_back(line.substr(start, tab - start));
    if (tab == std::string::npos) break;
    start = tab + 1;
  }
  return out;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t");
  if (b == std::string::npos) return "";
  return s.substr(b, s.find_last_not_of(" \t") - b + 1);
}

}  // namespace

DatasetManifest parse_manifest(const std::string& text, const fs::path& base_dir) {
  DatasetManifest m;
  m.base_dir = base_dir;
  std::set<std::string> ids;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (trim(line).empty()) continue;
    const std::string where = "line " + std::to_string(lineno) + ": ";
    if (line[0] == '#') {
      const std::string body = trim(line.substr(1));
      const auto eq = body.find('=');
      if (eq != std::string::npos) m.metadata[trim(body.substr(0, eq))] = trim(body.substr(eq + 1));
      continue;
    }
    const std::vector<std::string> f = split_tabs(line);
    require(f.size() == 7, ErrorKind::Parse,
            where + "expected 7 tab-separated fields, got " + std::to_string(f.size()));
    auto field_error = [&](const char* name, const std::string& what) {
      return where + "field '" + name + "' " + what;
    };
    Sample s;
    s.id = f[0];
    require(!s.id.empty() && s.id != "-" && s.id.find(' ') == std::string::npos,
            ErrorKind::Parse, field_error("id", "must be a non-empty token"));
    if (f[1].rfind("inline:", 0) == 0) {
      try {
        s.pixels = decode_inline(f[1]);
      } catch (const Error& e) {
        fail(ErrorKind::Parse, field_error("path", e.what()));
      }
    } else {
      require(!f[1].empty() && f[1] != "-", ErrorKind::Parse,
              field_error("path", "must name a raster or carry inline pixels"));
      s.path = f[1];
    }
    require(parse_number(f[2], s.age), ErrorKind::Parse, field_error("age", "is not a number"));
    require(std::isfinite(s.age) && s.age >= 0, ErrorKind::Validation,
            field_error("age", "must be >= 0, got " + f[2]));
    if (f[3] != "-") {
      int g = 0;
      require(parse_number(f[3], g), ErrorKind::Parse, field_error("group", "is not an integer"));
      require(g >= 0 && g < int(kAgeGroups.size()), ErrorKind::Validation,
              field_error("group", "must be in [0,8), got " + f[3]));
      require(age_fits_group(s.age, std::size_t(g)), ErrorKind::Validation,
              field_error("group", f[3] + " is inconsistent with age " + f[2]));
      s.group = g;
    }
    if (f[4] != "-") s.subject_id = f[4];
    if (f[5] != "-") {
      double sigma = 0;
      require(parse_number(f[5], sigma), ErrorKind::Parse, field_error("sigma", "is not a number"));
      require(std::isfinite(sigma) && sigma >= 0, ErrorKind::Validation,
              field_error("sigma", "must be >= 0, got " + f[5]));
      s.sigma = sigma;
    }
    if (f[6] != "-") {
      int fold = 0;
      require(parse_number(f[6], fold), ErrorKind::Parse, field_error("fold", "is not an integer"));
      require(fold >= 0, ErrorKind::Validation, field_error("fold", "must be >= 0"));
      s.fold = fold;
    }
    require(ids.insert(s.id).second, ErrorKind::Validation, where + "duplicate id '" + s.id + "'");
    m.samples.push_back(std::move(s));
  }
  require(!m.samples.empty(), ErrorKind::Validation, "manifest has no records");
  return m;
}

DatasetManifest load_manifest(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(bool(in), ErrorKind::Io, "cannot open manifest " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  DatasetManifest m = parse_manifest(buf.str(), path.parent_path());
  for (const Sample& s : m.samples)
    if (!s.path.empty())
      require(fs::exists(m.base_dir / s.path), ErrorKind::Io,
              "sample '" + s.id + "': raster " + (m.base_dir / s.path).string() + " not found");
  return m;
}

std::string format_manifest(const DatasetManifest& m) {
  std::ostringstream out;
  for (const auto& [k, v] : m.metadata) out << "# " << k << '=' << v << '\n';
  auto opt = [](const auto& o, auto fmt) { return o ? fmt(*o) : std::string("-"); };
  for (const Sample& s : m.samples) {
    out << s.id << '\t' << (s.path.empty() ? encode_inline(s.pixels) : s.path) << '\t'
        << format_number(s.age) << '\t'
        << opt(s.group, [](int g) { return std::to_string(g); }) << '\t'
        << opt(s.subject_id, [](const std::string& v) { return v; }) << '\t'
        << opt(s.sigma, format_number) << '\t'
        << opt(s.fold, [](int f) { return std::to_string(f); }) << '\n';
  }
  return out.str();
}

void save_manifest(const DatasetManifest& m, const fs::path& path) {
  std::ofstream out(path, std::ios::binary);
  require(bool(out), ErrorKind::Io, "cannot write manifest " + path.string());
  out << format_manifest(m);
  require(bool(out), ErrorKind::Io, "failed writing " + path.string());
}

// ---- preprocessing --------------------------------------------------------

void PreprocessConfig::validate() const {
  require(crop >= 1 && resize >= crop, ErrorKind::Config,
          "preprocess needs 1 <= crop <= resize, got crop " + std::to_string(crop) + ", resize " +
              std::to_string(resize));
  require(0 < min_scale && min_scale <= max_scale && max_scale <= 1, ErrorKind::Config,
          "scale jitter must satisfy 0 < min <= max <= 1");
  require(0 < min_aspect && min_aspect <= max_aspect, ErrorKind::Config,
          "aspect jitter must satisfy 0 < min <= max");
}

Tensor resize_bilinear(const Tensor& image, std::size_t oh, std::size_t ow) {
  check_image(image, "resize");
  require(oh >= 1 && ow >= 1, ErrorKind::Input, "resize target has zero extent");
  const std::size_t h = image.dim(1), w = image.dim(2);
  Tensor out(Shape{3, oh, ow});
  auto src = image.data();
  auto dst = out.data();
  auto axis = [](std::size_t o, std::size_t in_n, std::size_t out_n, std::size_t& i0,
                 std::size_t& i1, double& f) {
    double p = (double(o) + 0.5) * double(in_n) / double(out_n) - 0.5;
    p = std::clamp(p, 0.0, double(in_n - 1));
    i0 = std::size_t(p);
    i1 = std::min(i0 + 1, in_n - 1);
    f = p - double(i0);
  };
  for (std::size_t y = 0; y < oh; ++y) {
    std::size_t y0, y1;
    double fy;
    axis(y, h, oh, y0, y1, fy);
    for (std::size_t x = 0; x < ow; ++x) {
      std::size_t x0, x1;
      double fx;
      axis(x, w, ow, x0, x1, fx);
      for (std::size_t c = 0; c < 3; ++c) {
        const real* plane = src.data() + c * h * w;
        const double a = plane[y0 * w + x0], b = plane[y0 * w + x1];
        const double d = plane[y1 * w + x0], e = plane[y1 * w + x1];
        const double v = (1 - fy) * ((1 - fx) * a + fx * b) + fy * ((1 - fx) * d + fx * e);
        dst[(c * oh + y) * ow + x] =
            static_cast<real>(std::clamp(v, std::min({a, b, d, e}), std::max({a, b, d, e})));
      }
    }
  }
  return out;
}

Tensor crop_image(const Tensor& image, std::size_t row, std::size_t col, std::size_t ch,
                  std::size_t cw) {
  check_image(image, "crop");
  const std::size_t h = image.dim(1), w = image.dim(2);
  require(ch >= 1 && cw >= 1 && row + ch <= h && col + cw <= w, ErrorKind::Input,
          "crop " + std::to_string(ch) + "x" + std::to_string(cw) + " at (" + std::to_string(row) +
              "," + std::to_string(col) + ") exceeds a " + std::to_string(h) + "x" +
              std::to_string(w) + " image");
  Tensor out(Shape{3, ch, cw});
  auto src = image.data();
  auto dst = out.data();
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t y = 0; y < ch; ++y)
      std::copy_n(src.begin() + (c * h + row + y) * w + col, cw, dst.begin() + (c * ch + y) * cw);
  return out;
}

Tensor flip_horizontal(const Tensor& image) {
  check_image(image, "flip");
  const std::size_t h = image.dim(1), w = image.dim(2);
  Tensor out(Shape{3, h, w});
  auto src = image.data();
  auto dst = out.data();
  for (std::size_t r = 0; r < 3 * h; ++r)
    for (std::size_t x = 0; x < w; ++x) dst[r * w + x] = src[r * w + (w - 1 - x)];
  return out;
}

Tensor preprocess(const Tensor& image, const PreprocessConfig& config, PreprocessMode mode,
                  std::uint64_t seed) {
  config.validate();
  check_image(image, "preprocess");
  const std::size_t r = config.resize, s = config.crop;
  const Tensor resized =
      (image.dim(1) == r && image.dim(2) == r) ? image : resize_bilinear(image, r, r);
  if (mode == PreprocessMode::Eval) return crop_image(resized, (r - s) / 2, (r - s) / 2, s, s);

  Rng rng(seed);
  std::size_t ch = s, cw = s;
  if (config.jitter) {
    const double scale = rng.uniform(config.min_scale, config.max_scale);
    const double aspect =
        std::exp(rng.uniform(std::log(config.min_aspect), std::log(config.max_aspect)));
    auto side = [r](double v) {
      return std::clamp<std::size_t>(std::size_t(std::lround(double(r) * v)), 1, r);
    };
    cw = side(std::sqrt(scale * aspect));
    ch = side(std::sqrt(scale / aspect));
  }
  const std::size_t row = rng.below(r - ch + 1), col = rng.below(r - cw + 1);
  Tensor out = crop_image(resized, row, col, ch, cw);
  if (ch != s || cw != s) out = resize_bilinear(out, s, s);
  if (config.flip && rng.uniform() < 0.5) out = flip_horizontal(out);
  return out;
}

// ---- synthetic data -------------------------------------------------------

const char* to_string(Quadrant q) {
  switch (q) {
    case Quadrant::TopLeft: return "top-left";
    case Quadrant::TopRight: return "top-right";
    case Quadrant::BottomLeft: return "bottom-left";
    case Quadrant::BottomRight: return "bottom-right";
  }
  return "?";
}

Quadrant parse_quadrant(const std::string& text) {
  for (Quadrant q : {Quadrant::TopLeft, Quadrant::TopRight, Quadrant::BottomLeft,
                     Quadrant::BottomRight})
    if (text == to_string(q)) return q;
  fail(ErrorKind::Config, "unknown region '" + text +
                              "' (expected top-left, top-right, bottom-left or bottom-right)");
}

namespace {

constexpr double kStripePeriod = 5.0;

void draw_stripes(Tensor& image, std::size_t row, std::size_t col, std::size_t size,
                  std::size_t cls, std::size_t classes, Rng& rng) {
  const std::size_t h = image.dim(1), w = image.dim(2);
  const double theta = std::numbers::pi * double(cls) / double(classes);
  const double phase = rng.uniform(0, 2 * std::numbers::pi);
  const double cx = std::cos(theta), cy = std::sin(theta);
  auto v = image.data();
  for (std::size_t y = 0; y < size; ++y)
    for (std::size_t x = 0; x < size; ++x) {
      const double t = 2 * std::numbers::pi * (double(x) * cx + double(y) * cy) / kStripePeriod;
      const double base = 0.5 + 0.4 * std::sin(t + phase);
      for (std::size_t c = 0; c < 3; ++c)
        v[(c * h + row + y) * w + col + x] =
            static_cast<real>(std::clamp(base + rng.uniform(-0.05, 0.05), 0.0, 1.0));
    }
}

}  // namespace

SynthDataset synth_dataset(const SynthConfig& config) {
  require(config.classes >= 2, ErrorKind::Config, "synthetic data needs at least 2 classes");
  require(config.samples >= 1, ErrorKind::Config, "synthetic data needs at least 1 sample");
  require(config.images_per_subject >= 1, ErrorKind::Config, "images_per_subject must be >= 1");
  const std::size_t n = config.image_size, half = n / 2;
  require(config.patch_size >= 1 && config.patch_size <= half, ErrorKind::Config,
          "patch of " + std::to_string(config.patch_size) + " px does not fit a quadrant of a " +
              std::to_string(n) + " px image");

  SynthDataset out;
  DatasetManifest& m = out.manifest;
  const bool grouped = config.classes <= kAgeGroups.size();
  m.metadata = {{"name", "synthetic"},
                {"head", grouped ? "group" : "dex"},
                {"classes", std::to_string(config.classes)},
                {"region", to_string(config.region)},
                {"image_size", std::to_string(n)},
                {"patch_size", std::to_string(config.patch_size)},
                {"seed", std::to_string(config.seed)}};
  const Quadrant all[4] = {Quadrant::TopLeft, Quadrant::TopRight, Quadrant::BottomLeft,
                           Quadrant::BottomRight};
  const std::size_t width = std::to_string(config.samples - 1).size();
  for (std::size_t i = 0; i < config.samples; ++i) {
    Rng rng(derive_seed(config.seed, i));
    const std::size_t label = i % config.classes;
    Tensor image(Shape{3, n, n});
    for (real& v : image.data()) v = static_cast<real>(rng.uniform(0.35, 0.65));
    auto place = [&](Quadrant q, std::size_t cls) {
      const std::size_t r0 = (q == Quadrant::BottomLeft || q == Quadrant::BottomRight) ? half : 0;
      const std::size_t c0 = (q == Quadrant::TopRight || q == Quadrant::BottomRight) ? half : 0;
      const std::size_t row = r0 + rng.below(half - config.patch_size + 1);
      const std::size_t col = c0 + rng.below(half - config.patch_size + 1);
      draw_stripes(image, row, col, config.patch_size, cls, config.classes, rng);
      return PatchBox{"", row, col, config.patch_size};
    };
    PatchBox patch = place(config.region, label);
    if (config.distractors)
      for (Quadrant q : all)
        if (q != config.region) place(q, rng.below(config.classes));
    // Quantize so the in-memory image equals its raster.
    const std::vector<std::uint8_t> bytes = to_bytes(image);
    for (std::size_t y = 0; y < n; ++y)
      for (std::size_t x = 0; x < n; ++x)
        for (std::size_t c = 0; c < 3; ++c)
          image.data()[(c * n + y) * n + x] = static_cast<real>(bytes[(y * n + x) * 3 + c] / 255.0);

    std::string idx = std::to_string(i);
    idx.insert(0, width - idx.size(), '0');
    Sample s;
    s.id = "synth-" + idx;
    s.pixels = image;
    if (grouped) {
      s.age = age_group_centre(label);
      s.group = int(label);
    } else {
      s.age = double(label);
    }
    const std::size_t subject = i / config.images_per_subject;
    s.subject_id = "subject-" + std::to_string(subject);
    s.fold = int(subject % 5);
    patch.id = s.id;
    out.patches.push_back(patch);
    m.samples.push_back(std::move(s));
  }
  return out;
}

void write_synth_dataset(const SynthDataset& data, const fs::path& dir) {
  fs::create_directories(dir / "images");
  DatasetManifest m = data.manifest;
  m.base_dir = dir;
  for (Sample& s : m.samples) {
    s.path = "images/" + s.id + ".ppm";
    write_ppm(dir / s.path, s.pixels);
    s.pixels = Tensor();
  }
  save_manifest(m, dir / "manifest.tsv");
  std::ofstream patches(dir / "patches.tsv");
  require(bool(patches), ErrorKind::Io, "cannot write " + (dir / "patches.tsv").string());
  patches << "# id\trow\tcol\tsize\n";
  for (const PatchBox& p : data.patches)
    patches << p.id << '\t' << p.row << '\t' << p.col << '\t' << p.size << '\n';
}

ALNET_NS_END
