#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "alnet/config.hpp"
#include "alnet/gradcheck.hpp"

ALNET_NS_BEGIN

/// The splits a run config selects for a manifest: the configured protocol,
/// or a single split named "all" testing on every record.
std::vector<Split> configured_splits(const DatasetManifest& manifest, const RunConfig& config);

struct TrainRequest {
  RunConfig config;
  std::filesystem::path manifest;
  std::optional<std::filesystem::path> base;    // stage-A init, or the stage-B base
  std::optional<std::filesystem::path> resume;  // continue a saved run
  std::optional<std::size_t> split;             // train side of this split only
  std::filesystem::path out;
  std::optional<std::filesystem::path> log;     // epoch lines are appended here
};

/// Runs one stage and writes the checkpoint. A resumed run keeps the stored
/// configuration except for `epochs`, which may extend it.
Checkpoint run_train(const TrainRequest& request, const EpochCallback& on_epoch = {});

struct EvalRequest {
  RunConfig config;
  std::filesystem::path manifest;
  /// One checkpoint for every split, or one per split in split order.
  std::vector<std::filesystem::path> models;
  /// Instead of models: lines of `id value` holding point predictions.
  std::optional<std::filesystem::path> predictions;
};

EvalReport run_eval(const EvalRequest& request);

/// Feature-map cells scaled to pixels of the network input.
Region region_on_input(const Region& region, const TrainConfig& config);

struct PredictRow {
  std::string id;
  double value = 0;  // expected age or group index
  AgeDistribution probs;
  Region region;     // attention region on the feature map
  Region pixels;     // the same region on the network input
};

std::vector<PredictRow> run_predict(const RunConfig& config, const std::filesystem::path& model,
                                    const std::filesystem::path& manifest);
/// Tab separated: id, value, then row, col, height, width in input pixels
/// when `boxes` is set.
std::string format_predictions(const std::vector<PredictRow>& rows, bool boxes);

/// Finite-difference check of the full network's joint loss at a fresh
/// initialization, on a random batch in train-mode normalization.
GradCheckReport network_gradcheck(const RunConfig& config);
std::string format_gradcheck(const GradCheckReport& report, const GradCheckSettings& settings);

ALNET_NS_END
