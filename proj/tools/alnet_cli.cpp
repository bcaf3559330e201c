// Command-line front end over the C API.
#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "alnet/alnet.h"

namespace {

constexpr int kExitUsage = 2;
constexpr int kExitFailure = 1;

struct Owned {
  char* text = nullptr;
  ~Owned() { alnet_string_free(text); }
};

struct ConfigHandle {
  alnet_config* ptr = nullptr;
  ~ConfigHandle() { alnet_config_free(ptr); }
};

// Thrown from the verb bodies; carries the process exit code.
struct Exit {
  int code;
};

void check(alnet_status status) {
  if (status == ALNET_OK) return;
  std::cerr << "error (" << alnet_status_name(status) << "): " << alnet_last_error() << '\n';
  throw Exit{status == ALNET_ERR_USAGE ? kExitUsage : kExitFailure};
}

struct Common {
  std::string config;
  std::vector<std::string> sets;
  std::optional<unsigned long long> seed;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config, "key = value settings file")->check(CLI::ExistingFile);
  cmd->add_option("--set", c.sets, "override one setting, key=value (repeatable)");
  cmd->add_option("--seed", c.seed, "random seed for this verb");
}

// Settings file, then the verb's flag shortcuts, then --set overrides.
void resolve(ConfigHandle& h, const Common& c,
             const std::vector<std::pair<std::string, std::string>>& flags) {
  check(alnet_config_new(&h.ptr));
  if (!c.config.empty()) check(alnet_config_load(h.ptr, c.config.c_str()));
  for (const auto& [key, value] : flags) check(alnet_config_set(h.ptr, key.c_str(), value.c_str()));
  for (const std::string& s : c.sets) check(alnet_config_override(h.ptr, s.c_str()));
  Owned text;
  check(alnet_config_format(h.ptr, &text.text));
  std::cerr << "# resolved config\n" << text.text << std::flush;
}

void write_or_print(const std::string& path, const char* text) {
  if (path.empty()) {
    std::cout << text;
    return;
  }
  std::ofstream out(path, std::ios::binary);
  out << text;
  if (!out) {
    std::cerr << "error: cannot write " << path << '\n';
    throw Exit{kExitFailure};
  }
}

void print_line(const char* line, void*) { std::cout << line << '\n' << std::flush; }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Attention-LSTM age estimation: synthesize, train, evaluate, predict, check"};
  app.require_subcommand(1);

  Common synth_common;
  std::string synth_out;
  CLI::App* synth = app.add_subcommand("synth", "write a synthetic planted-region dataset");
  add_common(synth, synth_common);
  synth->add_option("--out", synth_out, "output directory")->required();

  Common train_common;
  std::string train_manifest, train_out, train_base, train_resume, train_log, train_stage,
      train_protocol;
  long train_split = -1;
  CLI::App* train = app.add_subcommand("train", "run one training stage");
  add_common(train, train_common);
  train->add_option("--manifest", train_manifest, "dataset manifest")->required();
  train->add_option("--out", train_out, "checkpoint to write")->required();
  train->add_option("--stage", train_stage, "global or local")
      ->check(CLI::IsMember({"global", "local"}));
  train->add_option("--base", train_base, "initial (global) or base (local) checkpoint")
      ->check(CLI::ExistingFile);
  train->add_option("--resume", train_resume, "continue a saved run")->check(CLI::ExistingFile);
  train->add_option("--log", train_log, "append epoch lines to this file");
  train->add_option("--protocol", train_protocol, "fivefold, loop or fixed")
      ->check(CLI::IsMember({"fivefold", "loop", "fixed"}));
  train->add_option("--split", train_split, "train on this split's training side")
      ->check(CLI::NonNegativeNumber);

  Common eval_common;
  std::string eval_manifest, eval_predictions, eval_protocol, eval_branch, eval_out;
  std::vector<std::string> eval_models;
  bool eval_ten_crop = false;
  CLI::App* eval = app.add_subcommand("eval", "score a model or a predictions file");
  add_common(eval, eval_common);
  eval->add_option("--manifest", eval_manifest, "dataset manifest")->required();
  eval->add_option("--model", eval_models, "checkpoint, once or once per split")
      ->check(CLI::ExistingFile);
  eval->add_option("--predictions", eval_predictions, "lines of 'id value'")
      ->check(CLI::ExistingFile);
  eval->add_option("--protocol", eval_protocol, "fivefold, loop or fixed")
      ->check(CLI::IsMember({"fivefold", "loop", "fixed"}));
  eval->add_flag("--ten-crop", eval_ten_crop, "average over ten crops");
  eval->add_option("--branch", eval_branch, "global, local or fused")
      ->check(CLI::IsMember({"global", "local", "fused"}));
  eval->add_option("--out", eval_out, "write the JSON report here");

  Common predict_common;
  std::string predict_model, predict_manifest, predict_branch, predict_out;
  bool predict_ten_crop = false, predict_boxes = false;
  CLI::App* predict = app.add_subcommand("predict", "per-image ages or groups");
  add_common(predict, predict_common);
  predict->add_option("--model", predict_model, "checkpoint")->required()->check(CLI::ExistingFile);
  predict->add_option("--manifest", predict_manifest, "dataset manifest")->required();
  predict->add_flag("--ten-crop", predict_ten_crop, "average over ten crops");
  predict->add_flag("--emit-boxes", predict_boxes, "append the attention region in input pixels");
  predict->add_option("--branch", predict_branch, "global, local or fused")
      ->check(CLI::IsMember({"global", "local", "fused"}));
  predict->add_option("--out", predict_out, "write here instead of standard output");

  Common grad_common;
  std::string grad_tolerance, grad_step, grad_samples;
  CLI::App* grad = app.add_subcommand("gradcheck", "finite-difference check of the network");
  add_common(grad, grad_common);
  grad->add_option("--tolerance", grad_tolerance, "relative tolerance");
  grad->add_option("--step", grad_step, "central-difference step");
  grad->add_option("--samples", grad_samples, "sampled parameter entries");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  using Flags = std::vector<std::pair<std::string, std::string>>;
  auto seed_flag = [](Flags& f, const Common& c, const char* key) {
    if (c.seed) f.emplace_back(key, std::to_string(*c.seed));
  };

  try {
    ConfigHandle cfg;
    if (*synth) {
      Flags f;
      seed_flag(f, synth_common, "synth.seed");
      resolve(cfg, synth_common, f);
      check(alnet_synth(cfg.ptr, synth_out.c_str()));
      std::cout << "wrote " << synth_out << '\n';
    } else if (*train) {
      Flags f;
      seed_flag(f, train_common, "seed");
      if (!train_stage.empty()) f.emplace_back("stage", train_stage);
      if (!train_protocol.empty()) f.emplace_back("eval.protocol", train_protocol);
      resolve(cfg, train_common, f);
      alnet_train_args args{};
      args.manifest = train_manifest.c_str();
      args.out = train_out.c_str();
      args.base = train_base.empty() ? nullptr : train_base.c_str();
      args.resume = train_resume.empty() ? nullptr : train_resume.c_str();
      args.log = train_log.empty() ? nullptr : train_log.c_str();
      args.split = train_split;
      check(alnet_train(cfg.ptr, &args, print_line, nullptr));
      std::cout << "wrote " << train_out << '\n';
    } else if (*eval) {
      Flags f;
      seed_flag(f, eval_common, "eval.split_seed");
      if (!eval_protocol.empty()) f.emplace_back("eval.protocol", eval_protocol);
      if (eval_ten_crop) f.emplace_back("eval.ten_crop", "true");
      if (!eval_branch.empty()) f.emplace_back("eval.branch", eval_branch);
      resolve(cfg, eval_common, f);
      std::vector<const char*> models;
      for (const std::string& m : eval_models) models.push_back(m.c_str());
      Owned table, json;
      check(alnet_eval(cfg.ptr, eval_manifest.c_str(), models.data(), models.size(),
                       eval_predictions.empty() ? nullptr : eval_predictions.c_str(), &table.text,
                       &json.text));
      std::cout << table.text;
      if (!eval_out.empty()) write_or_print(eval_out, json.text);
    } else if (*predict) {
      Flags f;
      if (predict_ten_crop) f.emplace_back("eval.ten_crop", "true");
      if (!predict_branch.empty()) f.emplace_back("eval.branch", predict_branch);
      resolve(cfg, predict_common, f);
      Owned text;
      check(alnet_predict(cfg.ptr, predict_model.c_str(), predict_manifest.c_str(),
                          predict_boxes ? 1 : 0, &text.text));
      write_or_print(predict_out, text.text);
    } else if (*grad) {
      Flags f;
      seed_flag(f, grad_common, "gradcheck.seed");
      if (!grad_tolerance.empty()) f.emplace_back("gradcheck.tolerance", grad_tolerance);
      if (!grad_step.empty()) f.emplace_back("gradcheck.step", grad_step);
      if (!grad_samples.empty()) f.emplace_back("gradcheck.samples", grad_samples);
      resolve(cfg, grad_common, f);
      Owned report;
      int passed = 0;
      check(alnet_gradcheck(cfg.ptr, &report.text, &passed));
      std::cout << report.text;
      return passed ? 0 : kExitFailure;
    }
  } catch (const Exit& e) {
    return e.code;
  }
  return 0;
}
