#pragma once

#include <cstdint>
#include <span>

#include "alnet/attention.hpp"
#include "alnet/backbone.hpp"

ALNET_NS_BEGIN

struct ModelConfig {
  BackboneConfig backbone = BackboneConfig::toy();
  std::size_t classes = 8;
  std::size_t lstm_hidden = kLstmHidden;

  void validate() const;
};

/// Fully connected classifier over the pooled feature map.
struct GlobalHead {
  Tensor weight;  // [classes, C]
  Tensor bias;    // [classes]
};

/// Backbone with the global classifier and the attention LSTM branch.
class Model {
 public:
  Model() = default;
  static Model init(const ModelConfig& config, std::uint64_t seed);

  const ModelConfig& config() const { return config_; }
  Backbone& backbone() { return backbone_; }
  const Backbone& backbone() const { return backbone_; }
  GlobalHead& global_head() { return head_; }
  const GlobalHead& global_head() const { return head_; }
  AttentionParams& attention() { return attention_; }
  const AttentionParams& attention() const { return attention_; }

  ParamList parameters() const;
  /// Backbone and global head.
  ParamList global_parameters() const;
  /// LSTM, location network and local head.
  ParamList attention_parameters() const;

  /// Re-draws the attention branch exactly as init() would for `seed`.
  void reset_attention(std::uint64_t seed);
  /// Independent copy of every tensor.
  Model clone() const;

 private:
  ModelConfig config_;
  Backbone backbone_;
  GlobalHead head_;
  AttentionParams attention_;
};

/// Copies values between two lists with identical names and shapes.
void copy_values(const ParamList& from, const ParamList& to);

struct GlobalOutput {
  Tensor map;     // [N, C, Hf, Wf]
  Tensor logits;  // [N, K]
  Tensor probs;   // [N, K]
};

/// Backbone, global average pool, global classifier. Accepts [3,S,S] or [N,3,S,S].
GlobalOutput global_forward(Tape& tape, Model& model, const Tensor& images, BnMode mode);

/// Attention branch over one image's feature map ([C,Hf,Wf] or [1,C,Hf,Wf]).
AttentionOutput local_forward(Tape& tape, Model& model, const Tensor& map,
                              const LstmState& state, double sharpness);

/// Joint cross-entropy of both branches over a batch: mean global CE plus mean
/// local CE, with the LSTM state carried through the batch in order.
Loss joint_loss(Tape& tape, Model& model, const Tensor& images, std::span<const std::size_t> labels,
                const LstmState& state, BnMode mode, double sharpness);

struct Prediction {
  AgeDistribution global;
  AgeDistribution local;
  AgeDistribution fused;
  AttentionBox box;
  Region region;  // on the feature map
};

/// Inference on one preprocessed image; `state` is advanced in place.
Prediction predict(Model& model, const Tensor& image, LstmState& state, double sharpness);

ALNET_NS_END
