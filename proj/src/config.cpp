#include "alnet/config.hpp"

#include <array>
#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

ALNET_NS_BEGIN

namespace {

std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

[[noreturn]] void bad_value(const std::string& key, const std::string& value, const char* want) {
  fail(ErrorKind::Config, "'" + key + "': cannot use '" + value + "' (expected " + want + ")");
}

std::size_t to_size(const std::string& key, const std::string& v) {
  std::size_t out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) bad_value(key, v, "a non-negative integer");
  return out;
}

std::uint64_t to_u64(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) bad_value(key, v, "a non-negative integer");
  return out;
}

double to_double(const std::string& key, const std::string& v) {
  double out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size() || !std::isfinite(out))
    bad_value(key, v, "a finite number");
  return out;
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  bad_value(key, v, "true or false");
}

std::vector<std::size_t> to_list(const std::string& key, const std::string& v) {
  std::vector<std::size_t> out;
  if (v.empty() || v == "-") return out;
  std::stringstream in(v);
  std::string item;
  while (std::getline(in, item, ',')) out.push_back(to_size(key, trim(item)));
  return out;
}

std::array<std::size_t, 4> to_four(const std::string& key, const std::string& v) {
  const auto list = to_list(key, v);
  if (list.size() != 4) bad_value(key, v, "four comma-separated integers");
  return {list[0], list[1], list[2], list[3]};
}

std::string show(double v) { return format_number(v); }
std::string show(std::size_t v) { return std::to_string(v); }
std::string show(bool v) { return v ? "true" : "false"; }

template <typename C>
std::string show_list(const C& list) {
  if (list.empty()) return "-";
  std::string out;
  for (auto v : list) out += (out.empty() ? "" : ",") + std::to_string(v);
  return out;
}

double first_age(const HeadConfig& h) { return h.age_values.empty() ? 0.0 : h.age_values.front(); }

void rebuild_head(HeadConfig& h, HeadMode mode, std::size_t classes, double first) {
  h = mode == HeadMode::Group ? HeadConfig::groups(classes) : HeadConfig::dex(classes, first);
}

struct Key {
  std::string name;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;  // null: write-only (presets)
  bool train = false;
};

const std::vector<Key>& keys() {
  static const std::vector<Key> table = [] {
    std::vector<Key> k;
    auto train = [&k](std::string name, auto set, auto get) {
      k.push_back({std::move(name), set, get, true});
    };
    auto other = [&k](std::string name, auto set, auto get) {
      k.push_back({std::move(name), set, get, false});
    };
    using R = RunConfig;
    using S = const std::string&;
    train("stage", [](R& c, S v) { c.train.stage = parse_stage(v); },
          [](const R& c) { return std::string(to_string(c.train.stage)); });
    train("epochs", [](R& c, S v) { c.train.epochs = to_size("epochs", v); },
          [](const R& c) { return show(c.train.epochs); });
    train("base_lr", [](R& c, S v) { c.train.base_lr = to_double("base_lr", v); },
          [](const R& c) { return show(c.train.base_lr); });
    train("lr_drop_epochs", [](R& c, S v) { c.train.lr_drop_epochs = to_list("lr_drop_epochs", v); },
          [](const R& c) { return show_list(c.train.lr_drop_epochs); });
    train("momentum", [](R& c, S v) { c.train.momentum = to_double("momentum", v); },
          [](const R& c) { return show(c.train.momentum); });
    train("weight_decay", [](R& c, S v) { c.train.weight_decay = to_double("weight_decay", v); },
          [](const R& c) { return show(c.train.weight_decay); });
    train("batch_size", [](R& c, S v) { c.train.batch_size = to_size("batch_size", v); },
          [](const R& c) { return show(c.train.batch_size); });
    train("seed", [](R& c, S v) { c.train.seed = to_u64("seed", v); },
          [](const R& c) { return std::to_string(c.train.seed); });
    train("sharpness", [](R& c, S v) { c.train.sharpness = to_double("sharpness", v); },
          [](const R& c) { return show(c.train.sharpness); });
    train("augment", [](R& c, S v) { c.train.augment = to_bool("augment", v); },
          [](const R& c) { return show(c.train.augment); });
    train("fused_loss", [](R& c, S v) { c.train.fused_loss = to_bool("fused_loss", v); },
          [](const R& c) { return show(c.train.fused_loss); });

    train("head.preset",
          [](R& c, S v) {
            if (v == "groups")
              c.train.head = HeadConfig::groups(8);
            else
              c.train.head = HeadConfig::dex_preset(v);
          },
          nullptr);
    train("head.mode",
          [](R& c, S v) {
            HeadConfig& h = c.train.head;
            rebuild_head(h, parse_head_mode(v), h.classes, first_age(h));
          },
          [](const R& c) { return std::string(to_string(c.train.head.mode)); });
    train("head.classes",
          [](R& c, S v) {
            HeadConfig& h = c.train.head;
            rebuild_head(h, h.mode, to_size("head.classes", v), first_age(h));
          },
          [](const R& c) { return show(c.train.head.classes); });
    train("head.first_age",
          [](R& c, S v) {
            HeadConfig& h = c.train.head;
            require(h.mode == HeadMode::Dex, ErrorKind::Config, "head.first_age needs head.mode = dex");
            rebuild_head(h, h.mode, h.classes, to_double("head.first_age", v));
          },
          [](const R& c) {
            return c.train.head.mode == HeadMode::Dex ? show(first_age(c.train.head)) : std::string();
          });

    train("backbone.preset",
          [](R& c, S v) {
            const Arch arch = c.train.backbone.arch;
            if (v == "toy")
              c.train.backbone = BackboneConfig::toy(arch);
            else if (v == "full")
              c.train.backbone = BackboneConfig::full(arch);
            else
              bad_value("backbone.preset", v, "toy or full");
          },
          nullptr);
    train("backbone.arch", [](R& c, S v) { c.train.backbone.arch = parse_arch(v); },
          [](const R& c) { return std::string(to_string(c.train.backbone.arch)); });
    train("backbone.depths",
          [](R& c, S v) { c.train.backbone.group_depths = to_four("backbone.depths", v); },
          [](const R& c) { return show_list(c.train.backbone.group_depths); });
    train("backbone.channels",
          [](R& c, S v) { c.train.backbone.group_channels = to_four("backbone.channels", v); },
          [](const R& c) { return show_list(c.train.backbone.group_channels); });
    train("backbone.input_size",
          [](R& c, S v) { c.train.backbone.input_size = to_size("backbone.input_size", v); },
          [](const R& c) { return show(c.train.backbone.input_size); });
    train("backbone.ror_shortcuts",
          [](R& c, S v) { c.train.backbone.ror_shortcuts = to_bool("backbone.ror_shortcuts", v); },
          [](const R& c) { return show(c.train.backbone.ror_shortcuts); });
    train("backbone.stem_kernel",
          [](R& c, S v) { c.train.backbone.stem_kernel = to_size("backbone.stem_kernel", v); },
          [](const R& c) { return show(c.train.backbone.stem_kernel); });
    train("backbone.stem_stride",
          [](R& c, S v) { c.train.backbone.stem_stride = to_size("backbone.stem_stride", v); },
          [](const R& c) { return show(c.train.backbone.stem_stride); });
    train("backbone.stem_pool",
          [](R& c, S v) { c.train.backbone.stem_pool = to_bool("backbone.stem_pool", v); },
          [](const R& c) { return show(c.train.backbone.stem_pool); });
    train("lstm.hidden", [](R& c, S v) { c.train.lstm_hidden = to_size("lstm.hidden", v); },
          [](const R& c) { return show(c.train.lstm_hidden); });

    train("preprocess.preset",
          [](R& c, S v) {
            if (v == "toy")
              c.train.preprocess = PreprocessConfig::toy();
            else if (v == "full")
              c.train.preprocess = PreprocessConfig::full();
            else
              bad_value("preprocess.preset", v, "toy or full");
          },
          nullptr);
    train("preprocess.resize",
          [](R& c, S v) { c.train.preprocess.resize = to_size("preprocess.resize", v); },
          [](const R& c) { return show(c.train.preprocess.resize); });
    train("preprocess.crop", [](R& c, S v) { c.train.preprocess.crop = to_size("preprocess.crop", v); },
          [](const R& c) { return show(c.train.preprocess.crop); });
    train("preprocess.jitter",
          [](R& c, S v) { c.train.preprocess.jitter = to_bool("preprocess.jitter", v); },
          [](const R& c) { return show(c.train.preprocess.jitter); });
    train("preprocess.flip", [](R& c, S v) { c.train.preprocess.flip = to_bool("preprocess.flip", v); },
          [](const R& c) { return show(c.train.preprocess.flip); });
    train("preprocess.min_scale",
          [](R& c, S v) { c.train.preprocess.min_scale = to_double("preprocess.min_scale", v); },
          [](const R& c) { return show(c.train.preprocess.min_scale); });
    train("preprocess.max_scale",
          [](R& c, S v) { c.train.preprocess.max_scale = to_double("preprocess.max_scale", v); },
          [](const R& c) { return show(c.train.preprocess.max_scale); });
    train("preprocess.min_aspect",
          [](R& c, S v) { c.train.preprocess.min_aspect = to_double("preprocess.min_aspect", v); },
          [](const R& c) { return show(c.train.preprocess.min_aspect); });
    train("preprocess.max_aspect",
          [](R& c, S v) { c.train.preprocess.max_aspect = to_double("preprocess.max_aspect", v); },
          [](const R& c) { return show(c.train.preprocess.max_aspect); });

    other("synth.samples", [](R& c, S v) { c.synth.samples = to_size("synth.samples", v); },
          [](const R& c) { return show(c.synth.samples); });
    other("synth.classes", [](R& c, S v) { c.synth.classes = to_size("synth.classes", v); },
          [](const R& c) { return show(c.synth.classes); });
    other("synth.image_size", [](R& c, S v) { c.synth.image_size = to_size("synth.image_size", v); },
          [](const R& c) { return show(c.synth.image_size); });
    other("synth.patch_size", [](R& c, S v) { c.synth.patch_size = to_size("synth.patch_size", v); },
          [](const R& c) { return show(c.synth.patch_size); });
    other("synth.region", [](R& c, S v) { c.synth.region = parse_quadrant(v); },
          [](const R& c) { return std::string(to_string(c.synth.region)); });
    other("synth.distractors",
          [](R& c, S v) { c.synth.distractors = to_bool("synth.distractors", v); },
          [](const R& c) { return show(c.synth.distractors); });
    other("synth.images_per_subject",
          [](R& c, S v) { c.synth.images_per_subject = to_size("synth.images_per_subject", v); },
          [](const R& c) { return show(c.synth.images_per_subject); });
    other("synth.seed", [](R& c, S v) { c.synth.seed = to_u64("synth.seed", v); },
          [](const R& c) { return std::to_string(c.synth.seed); });

    other("eval.protocol",
          [](R& c, S v) {
            if (v == "none" || v == "-")
              c.eval.protocol.reset();
            else
              c.eval.protocol = parse_protocol(v);
          },
          [](const R& c) {
            return c.eval.protocol ? std::string(to_string(*c.eval.protocol)) : std::string("none");
          });
    other("eval.ten_crop", [](R& c, S v) { c.eval.ten_crop = to_bool("eval.ten_crop", v); },
          [](const R& c) { return show(c.eval.ten_crop); });
    other("eval.branch", [](R& c, S v) { c.eval.branch = parse_branch(v); },
          [](const R& c) { return std::string(to_string(c.eval.branch)); });
    other("eval.split_seed", [](R& c, S v) { c.eval.split_seed = to_u64("eval.split_seed", v); },
          [](const R& c) { return std::to_string(c.eval.split_seed); });

    other("gradcheck.samples",
          [](R& c, S v) { c.gradcheck.samples = to_size("gradcheck.samples", v); },
          [](const R& c) { return show(c.gradcheck.samples); });
    other("gradcheck.step", [](R& c, S v) { c.gradcheck.step = to_double("gradcheck.step", v); },
          [](const R& c) { return show(c.gradcheck.step); });
    other("gradcheck.tolerance",
          [](R& c, S v) { c.gradcheck.tolerance = to_double("gradcheck.tolerance", v); },
          [](const R& c) { return show(c.gradcheck.tolerance); });
    other("gradcheck.abs_floor",
          [](R& c, S v) { c.gradcheck.abs_floor = to_double("gradcheck.abs_floor", v); },
          [](const R& c) { return show(c.gradcheck.abs_floor); });
    other("gradcheck.batch", [](R& c, S v) { c.gradcheck.batch = to_size("gradcheck.batch", v); },
          [](const R& c) { return show(c.gradcheck.batch); });
    other("gradcheck.seed", [](R& c, S v) { c.gradcheck.seed = to_u64("gradcheck.seed", v); },
          [](const R& c) { return std::to_string(c.gradcheck.seed); });
    return k;
  }();
  return table;
}

std::string format_keys(const RunConfig& c, bool train_only) {
  std::string out;
  for (const Key& k : keys()) {
    if (!k.get || (train_only && !k.train)) continue;
    const std::string v = k.get(c);
    if (v.empty()) continue;
    out += k.name + " = " + v + "\n";
  }
  return out;
}

}  // namespace

void apply_setting(RunConfig& config, const std::string& key, const std::string& value) {
  for (const Key& k : keys())
    if (k.name == key) {
      k.set(config, value);
      return;
    }
  fail(ErrorKind::Usage, "unknown config key '" + key + "'");
}

void apply_override(RunConfig& config, const std::string& assignment) {
  const auto eq = assignment.find('=');
  require(eq != std::string::npos, ErrorKind::Usage,
          "override '" + assignment + "' is not of the form key=value");
  apply_setting(config, trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)));
}

RunConfig parse_config(const std::string& text, RunConfig base) {
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const std::string where = "config line " + std::to_string(lineno) + ": ";
    const auto eq = line.find('=');
    require(eq != std::string::npos, ErrorKind::Parse, where + "expected 'key = value'");
    try {
      apply_setting(base, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    } catch (const Error& e) {
      fail(e.kind() == ErrorKind::Usage ? ErrorKind::Parse : e.kind(), where + e.what());
    }
  }
  return base;
}

RunConfig load_config(const std::filesystem::path& path, RunConfig base) {
  std::ifstream in(path);
  require(bool(in), ErrorKind::Io, "cannot open config " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_config(buf.str(), std::move(base));
}

std::string format_config(const RunConfig& config) { return format_keys(config, false); }

std::string format_train_config(const TrainConfig& config) {
  RunConfig c;
  c.train = config;
  return format_keys(c, true);
}

TrainConfig parse_train_config(const std::string& text) { return parse_config(text).train; }

std::vector<std::string> config_keys() {
  std::vector<std::string> out;
  for (const Key& k : keys()) out.push_back(k.name);
  return out;
}

ALNET_NS_END
