#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "alnet/trainer.hpp"

ALNET_NS_BEGIN

struct EvalSettings {
  std::optional<Protocol> protocol;  // none: one split holding every record
  bool ten_crop = false;
  Branch branch = Branch::Fused;
  std::uint64_t split_seed = 0;
};

struct GradCheckSettings {
  std::size_t samples = 100;
  double step = 1e-3;
  double tolerance = 1e-2;
  double abs_floor = 1e-2;
  std::size_t batch = 2;
  std::uint64_t seed = 0;
};

/// Everything a command can be configured with. Text form: one `key = value`
/// per line, `#` starts a comment, keys are dotted (`backbone.arch = ror`).
struct RunConfig {
  TrainConfig train;
  SynthConfig synth;
  EvalSettings eval;
  GradCheckSettings gradcheck;
};

/// Sets one key. Unknown keys are usage errors; malformed values are
/// configuration errors.
void apply_setting(RunConfig& config, const std::string& key, const std::string& value);
/// Splits `key=value` and applies it.
void apply_override(RunConfig& config, const std::string& assignment);

/// Applies every line of `text` on top of `base`. Errors carry the line number.
RunConfig parse_config(const std::string& text, RunConfig base = {});
RunConfig load_config(const std::filesystem::path& path, RunConfig base = {});

/// Every key with its resolved value; parse_config reproduces the input.
std::string format_config(const RunConfig& config);
/// The training keys only (as stored in checkpoints).
std::string format_train_config(const TrainConfig& config);
TrainConfig parse_train_config(const std::string& text);

/// Known keys in output order.
std::vector<std::string> config_keys();

ALNET_NS_END
