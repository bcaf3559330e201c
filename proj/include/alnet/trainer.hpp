#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "alnet/data.hpp"
#include "alnet/estimation.hpp"
#include "alnet/model.hpp"

ALNET_NS_BEGIN

enum class Stage { Global, Local };
const char* to_string(Stage stage);
Stage parse_stage(const std::string& text);

struct TrainConfig {
  Stage stage = Stage::Global;
  std::size_t epochs = 30;
  double base_lr = 0.01;
  std::vector<std::size_t> lr_drop_epochs;  // strictly increasing, each < epochs
  static constexpr double kLrDropFactor = 10;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  std::size_t batch_size = 16;
  std::uint64_t seed = 0;
  double sharpness = kDefaultSharpness;
  HeadConfig head;
  BackboneConfig backbone = BackboneConfig::toy();
  std::size_t lstm_hidden = kLstmHidden;
  PreprocessConfig preprocess = PreprocessConfig::toy();
  bool augment = true;      // train-mode preprocessing; eval-mode crops otherwise
  bool fused_loss = false;  // local stage: supervise the fused output instead

  void validate() const;
  ModelConfig model() const;
  /// Rate in effect during `epoch` (0-based).
  double lr_at(std::size_t epoch) const;
};

/// SGD with momentum: v = μv + g + λθ, θ −= lr·v. Decay applies to the
/// Weight role only.
class Sgd {
 public:
  Sgd() = default;
  Sgd(double momentum, double weight_decay) : momentum_(momentum), decay_(weight_decay) {}

  void step(const ParamList& params, double lr);
  std::map<std::string, Tensor>& buffers() { return velocity_; }
  const std::map<std::string, Tensor>& buffers() const { return velocity_; }

 private:
  double momentum_ = 0.9;
  double decay_ = 1e-4;
  std::map<std::string, Tensor> velocity_;
};

struct EpochLog {
  std::size_t epoch = 0;  // 1-based count of completed epochs
  Stage stage = Stage::Global;
  double lr = 0;
  double loss = 0;
  double accuracy = 0;
  /// One line: epoch, stage, lr, loss, accuracy, tab separated.
  std::string line() const;
};

/// Named tensors with the configuration and progress they belong to.
struct Checkpoint {
  static constexpr std::uint32_t kVersion = 1;
  std::uint32_t version = kVersion;
  std::string config_text;
  std::uint64_t epoch = 0;  // completed epochs of the stage in config_text
  std::uint64_t seed = 0;   // every random draw derives from (seed, epoch, index)
  std::vector<std::pair<std::string, Tensor>> tensors;

  const Tensor* find(const std::string& name) const;
};

/// Layout: "ALNC", u32 version, u64 length + config text, u64 epoch, u64 seed,
/// u64 record count, then per record u32 name length + name, u32 rank, u64
/// extents and f32 values, all little-endian.
void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);
std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& checkpoint);
Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes);

/// Copies the checkpoint's tensors into `params`; a missing name or a
/// different shape is a checkpoint shape error.
void restore_params(const Checkpoint& checkpoint, const ParamList& params);

/// One training stage in progress.
struct TrainRun {
  TrainConfig config;
  Model model;
  Sgd optimizer;
  std::size_t epoch = 0;
  // Frozen-branch outputs by sample index; only filled when they cannot change
  // (local stage without augmentation).
  std::map<std::size_t, GlobalOutput> feature_cache;
};

/// Fresh run from the config's seed.
TrainRun start_global(const TrainConfig& config);
/// Stage A initialized from another checkpoint's weights (pretraining chain).
TrainRun start_global(const TrainConfig& config, const Checkpoint& init);
/// Stage B on top of a stage-A checkpoint; the attention branch is drawn anew
/// from the config's seed and everything else is frozen.
TrainRun start_local(const TrainConfig& config, const Checkpoint& base);
/// Continues where the checkpoint stopped. `config` replaces the stored one
/// when given (for instance to extend the epoch count).
TrainRun resume(const Checkpoint& checkpoint, const TrainConfig* config = nullptr);

Checkpoint make_checkpoint(const TrainRun& run);

using EpochCallback = std::function<void(const EpochLog&)>;

/// Runs one epoch over `indices` of the manifest (all samples when empty).
EpochLog train_epoch(TrainRun& run, const DatasetManifest& data,
                     const std::vector<std::size_t>& indices = {});
/// Runs epochs until config.epochs have completed.
void train(TrainRun& run, const DatasetManifest& data, const EpochCallback& on_epoch = {},
           const std::vector<std::size_t>& indices = {});

Checkpoint train_global(const TrainConfig& config, const DatasetManifest& data,
                        const EpochCallback& on_epoch = {});
Checkpoint train_local(const TrainConfig& config, const DatasetManifest& data,
                       const Checkpoint& base, const EpochCallback& on_epoch = {});

/// Rebuilds the model stored in a checkpoint together with its config.
struct LoadedModel {
  TrainConfig config;
  Model model;
};
LoadedModel load_model(const Checkpoint& checkpoint);

enum class Branch { Global, Local, Fused };
const char* to_string(Branch branch);
Branch parse_branch(const std::string& text);

struct SamplePrediction {
  Prediction prediction;
  AgeDistribution chosen;  // the requested branch
};

/// Eval-mode predictions for `indices` in order, the LSTM state carried from
/// one sample to the next. With ten-crop every crop starts from the same
/// incoming state and the centre crop's state is carried on.
std::vector<SamplePrediction> predict_samples(Model& model, const TrainConfig& config,
                                              const DatasetManifest& data,
                                              const std::vector<std::size_t>& indices,
                                              Branch branch, bool ten_crop);

/// Point predictions against the head's ground truth.
std::vector<EvalRecord> evaluate(Model& model, const TrainConfig& config,
                                 const DatasetManifest& data,
                                 const std::vector<std::size_t>& indices, Branch branch,
                                 bool ten_crop);

ALNET_NS_END
