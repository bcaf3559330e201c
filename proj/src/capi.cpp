#include "alnet/alnet.h"

#include <cstdlib>
#include <cstring>
#include <exception>
#include <string>

#include "alnet/commands.hpp"

struct alnet_config {
  alnet::RunConfig value;
};

struct alnet_model {
  alnet::LoadedModel loaded;
  alnet::LstmState state;
};

namespace {

thread_local std::string last_error;

alnet_status status_of(alnet::ErrorKind kind) {
  using alnet::ErrorKind;
  switch (kind) {
    case ErrorKind::Config: return ALNET_ERR_CONFIG;
    case ErrorKind::Input: return ALNET_ERR_INPUT;
    case ErrorKind::Parse: return ALNET_ERR_PARSE;
    case ErrorKind::Validation: return ALNET_ERR_VALIDATION;
    case ErrorKind::Usage: return ALNET_ERR_USAGE;
    case ErrorKind::Io: return ALNET_ERR_IO;
    case ErrorKind::CheckpointMagic: return ALNET_ERR_CHECKPOINT_MAGIC;
    case ErrorKind::CheckpointVersion: return ALNET_ERR_CHECKPOINT_VERSION;
    case ErrorKind::CheckpointTruncated: return ALNET_ERR_CHECKPOINT_TRUNCATED;
    case ErrorKind::CheckpointShape: return ALNET_ERR_CHECKPOINT_SHAPE;
    case ErrorKind::Numeric: return ALNET_ERR_NUMERIC;
  }
  return ALNET_ERR_INTERNAL;
}

template <typename F>
alnet_status guarded(F&& body) {
  last_error.clear();
  try {
    body();
    return ALNET_OK;
  } catch (const alnet::Error& e) {
    last_error = e.what();
    return status_of(e.kind());
  } catch (const std::bad_alloc&) {
    last_error = "out of memory";
  } catch (const std::exception& e) {
    last_error = e.what();
  } catch (...) {
    last_error = "unknown failure";
  }
  return ALNET_ERR_INTERNAL;
}

void need(const void* p, const char* what) {
  alnet::require(p != nullptr, alnet::ErrorKind::Usage, std::string(what) + " must not be null");
}

char* copy_out(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (!out) throw std::bad_alloc();
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

}  // namespace

extern "C" {

const char* alnet_last_error(void) { return last_error.c_str(); }

const char* alnet_status_name(alnet_status status) {
  switch (status) {
    case ALNET_OK: return "ok";
    case ALNET_ERR_INTERNAL: return "internal error";
    default: return alnet::to_string(static_cast<alnet::ErrorKind>(int(status) - 1));
  }
}

void alnet_string_free(char* text) { std::free(text); }

alnet_status alnet_config_new(alnet_config** out) {
  return guarded([&] {
    need(out, "out");
    *out = new alnet_config{};
  });
}

void alnet_config_free(alnet_config* config) { delete config; }

alnet_status alnet_config_load(alnet_config* config, const char* path) {
  return guarded([&] {
    need(config, "config");
    need(path, "path");
    config->value = alnet::load_config(path, config->value);
  });
}

alnet_status alnet_config_set(alnet_config* config, const char* key, const char* value) {
  return guarded([&] {
    need(config, "config");
    need(key, "key");
    need(value, "value");
    alnet::apply_setting(config->value, key, value);
  });
}

alnet_status alnet_config_override(alnet_config* config, const char* assignment) {
  return guarded([&] {
    need(config, "config");
    need(assignment, "assignment");
    alnet::apply_override(config->value, assignment);
  });
}

alnet_status alnet_config_format(const alnet_config* config, char** text) {
  return guarded([&] {
    need(config, "config");
    need(text, "text");
    *text = copy_out(alnet::format_config(config->value));
  });
}

alnet_status alnet_config_validate(const alnet_config* config) {
  return guarded([&] {
    need(config, "config");
    config->value.train.validate();
  });
}

alnet_status alnet_synth(const alnet_config* config, const char* out_dir) {
  return guarded([&] {
    need(config, "config");
    need(out_dir, "out_dir");
    alnet::write_synth_dataset(alnet::synth_dataset(config->value.synth), out_dir);
  });
}

alnet_status alnet_train(const alnet_config* config, const alnet_train_args* args,
                         alnet_line_fn on_epoch, void* user) {
  return guarded([&] {
    need(config, "config");
    need(args, "args");
    need(args->manifest, "manifest");
    need(args->out, "out");
    alnet::TrainRequest req;
    req.config = config->value;
    req.manifest = args->manifest;
    req.out = args->out;
    if (args->base) req.base = args->base;
    if (args->resume) req.resume = args->resume;
    if (args->log) req.log = args->log;
    if (args->split >= 0) req.split = std::size_t(args->split);
    alnet::run_train(req, [&](const alnet::EpochLog& log) {
      if (on_epoch) on_epoch(log.line().c_str(), user);
    });
  });
}

alnet_status alnet_eval(const alnet_config* config, const char* manifest,
                        const char* const* models, size_t model_count, const char* predictions,
                        char** table, char** json) {
  return guarded([&] {
    need(config, "config");
    need(manifest, "manifest");
    alnet::EvalRequest req;
    req.config = config->value;
    req.manifest = manifest;
    for (size_t i = 0; i < model_count; ++i) {
      need(models[i], "model path");
      req.models.emplace_back(models[i]);
    }
    if (predictions) req.predictions = predictions;
    const alnet::EvalReport report = alnet::run_eval(req);
    if (table) *table = copy_out(report.table());
    if (json) *json = copy_out(report.json());
  });
}

alnet_status alnet_predict(const alnet_config* config, const char* model, const char* manifest,
                           int emit_boxes, char** text) {
  return guarded([&] {
    need(config, "config");
    need(model, "model");
    need(manifest, "manifest");
    need(text, "text");
    const auto rows = alnet::run_predict(config->value, model, manifest);
    *text = copy_out(alnet::format_predictions(rows, emit_boxes != 0));
  });
}

alnet_status alnet_gradcheck(const alnet_config* config, char** report, int* passed) {
  return guarded([&] {
    need(config, "config");
    const alnet::GradCheckReport r = alnet::network_gradcheck(config->value);
    if (passed) *passed = r.passed() ? 1 : 0;
    if (report) *report = copy_out(alnet::format_gradcheck(r, config->value.gradcheck));
  });
}

alnet_status alnet_model_load(const char* checkpoint, alnet_model** out) {
  return guarded([&] {
    need(checkpoint, "checkpoint");
    need(out, "out");
    auto m = new alnet_model{alnet::load_model(alnet::load_checkpoint(checkpoint)), {}};
    m->state = alnet::LstmState::zeros(m->loaded.config.lstm_hidden);
    *out = m;
  });
}

void alnet_model_free(alnet_model* model) { delete model; }

size_t alnet_model_classes(const alnet_model* model) {
  return model ? model->loaded.config.head.classes : 0;
}

void alnet_model_reset(alnet_model* model) {
  if (model) model->state = alnet::LstmState::zeros(model->loaded.config.lstm_hidden);
}

alnet_status alnet_model_predict(alnet_model* model, const float* rgb, size_t height, size_t width,
                                 double* probs, alnet_prediction* prediction) {
  return guarded([&] {
    need(model, "model");
    need(rgb, "rgb");
    alnet::require(height > 0 && width > 0, alnet::ErrorKind::Input, "empty image");
    alnet::Tensor image(alnet::Shape{3, height, width});
    auto px = image.data();
    for (size_t y = 0; y < height; ++y)
      for (size_t x = 0; x < width; ++x)
        for (size_t c = 0; c < 3; ++c)
          px[(c * height + y) * width + x] = static_cast<alnet::real>(rgb[(y * width + x) * 3 + c]);
    const alnet::TrainConfig& cfg = model->loaded.config;
    const alnet::Tensor input =
        alnet::preprocess(image, cfg.preprocess, alnet::PreprocessMode::Eval, 0);
    alnet::LstmState state = model->state;
    const alnet::Prediction p = alnet::predict(model->loaded.model, input, state, cfg.sharpness);
    model->state = state;
    if (probs)
      for (size_t k = 0; k < p.fused.probs.size(); ++k) probs[k] = p.fused.probs[k];
    if (prediction) {
      const alnet::Region r = alnet::region_on_input(p.region, cfg);
      prediction->value = cfg.head.point_prediction(p.fused);
      prediction->region_row = r.row0;
      prediction->region_col = r.col0;
      prediction->region_rows = r.rows;
      prediction->region_cols = r.cols;
    }
  });
}

}  // extern "C"
