#ifndef ALNET_ALNET_H
#define ALNET_ALNET_H

#include <stddef.h>

#if defined(_WIN32)
#  define ALNET_API __declspec(dllexport)
#else
#  define ALNET_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum alnet_status {
  ALNET_OK = 0,
  ALNET_ERR_CONFIG = 1,
  ALNET_ERR_INPUT = 2,
  ALNET_ERR_PARSE = 3,
  ALNET_ERR_VALIDATION = 4,
  ALNET_ERR_USAGE = 5,
  ALNET_ERR_IO = 6,
  ALNET_ERR_CHECKPOINT_MAGIC = 7,
  ALNET_ERR_CHECKPOINT_VERSION = 8,
  ALNET_ERR_CHECKPOINT_TRUNCATED = 9,
  ALNET_ERR_CHECKPOINT_SHAPE = 10,
  ALNET_ERR_NUMERIC = 11,
  ALNET_ERR_INTERNAL = 12
} alnet_status;

/* Message of the last failure on the calling thread; empty after success. */
ALNET_API const char* alnet_last_error(void);
ALNET_API const char* alnet_status_name(alnet_status status);
/* Releases strings returned through char** out-parameters. */
ALNET_API void alnet_string_free(char* text);

typedef struct alnet_config alnet_config;

ALNET_API alnet_status alnet_config_new(alnet_config** out);
ALNET_API void alnet_config_free(alnet_config* config);
/* Applies a `key = value` file on top of the current settings. */
ALNET_API alnet_status alnet_config_load(alnet_config* config, const char* path);
ALNET_API alnet_status alnet_config_set(alnet_config* config, const char* key, const char* value);
/* `key=value` */
ALNET_API alnet_status alnet_config_override(alnet_config* config, const char* assignment);
ALNET_API alnet_status alnet_config_format(const alnet_config* config, char** text);
ALNET_API alnet_status alnet_config_validate(const alnet_config* config);

/* Writes manifest.tsv, patches.tsv and images/ under out_dir. */
ALNET_API alnet_status alnet_synth(const alnet_config* config, const char* out_dir);

typedef void (*alnet_line_fn)(const char* line, void* user);

typedef struct alnet_train_args {
  const char* manifest;
  const char* out;     /* checkpoint path */
  const char* base;    /* optional: init (global stage) or base (local stage) */
  const char* resume;  /* optional */
  const char* log;     /* optional: epoch lines appended here */
  long split;          /* train side of this protocol split; -1 for every record */
} alnet_train_args;

ALNET_API alnet_status alnet_train(const alnet_config* config, const alnet_train_args* args,
                                   alnet_line_fn on_epoch, void* user);

/* Exactly one of models (count > 0) and predictions must be given. The
   report is returned as an aligned table and as JSON. */
ALNET_API alnet_status alnet_eval(const alnet_config* config, const char* manifest,
                                  const char* const* models, size_t model_count,
                                  const char* predictions, char** table, char** json);

ALNET_API alnet_status alnet_predict(const alnet_config* config, const char* model,
                                     const char* manifest, int emit_boxes, char** text);

/* Report text; *passed is set to 1 or 0. */
ALNET_API alnet_status alnet_gradcheck(const alnet_config* config, char** report, int* passed);

/* A trained network for one image at a time. The LSTM state carries over
   between calls until reset. */
typedef struct alnet_model alnet_model;

typedef struct alnet_prediction {
  double value;  /* expected age or group index */
  size_t region_row, region_col, region_rows, region_cols;  /* on the network input */
} alnet_prediction;

ALNET_API alnet_status alnet_model_load(const char* checkpoint, alnet_model** out);
ALNET_API void alnet_model_free(alnet_model* model);
ALNET_API size_t alnet_model_classes(const alnet_model* model);
ALNET_API void alnet_model_reset(alnet_model* model);
/* rgb: height*width*3 interleaved values in [0,1]. probs (optional) receives
   alnet_model_classes() fused probabilities. */
ALNET_API alnet_status alnet_model_predict(alnet_model* model, const float* rgb, size_t height,
                                           size_t width, double* probs,
                                           alnet_prediction* prediction);

#ifdef __cplusplus
}
#endif

#endif
