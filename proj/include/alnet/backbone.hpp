#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "alnet/ops.hpp"
#include "alnet/params.hpp"

ALNET_NS_BEGIN

enum class Arch { ResNets, RoR };

const char* to_string(Arch arch);
Arch parse_arch(const std::string& text);

/// Topology of a four-group residual backbone.
///
/// The stem is a k×k convolution (BN, ReLU) with its own stride, optionally
/// followed by a 3×3 stride-2 max pool. Group 1 keeps the stem resolution and
/// each later group halves it in its first block.
struct BackboneConfig {
  Arch arch = Arch::ResNets;
  std::array<std::size_t, 4> group_depths{1, 1, 1, 1};
  std::array<std::size_t, 4> group_channels{8, 16, 24, 32};
  std::size_t input_channels = 3;
  std::size_t input_size = 56;
  bool ror_shortcuts = true;
  std::size_t stem_kernel = 3;
  std::size_t stem_stride = 1;
  bool stem_pool = false;

  /// 34-layer layout: depths (3,4,6,3), 224 input, 512×7×7 output.
  static BackboneConfig full(Arch arch = Arch::ResNets);
  /// Desk-scale layout: depths (1,1,1,1), 56 input, 32×7×7 output.
  static BackboneConfig toy(Arch arch = Arch::ResNets);

  void validate() const;
  /// Shape of the final feature map for one image, [C4, Hf, Wf].
  Shape feature_shape() const;
};

/// Indices (1-based, counted over all blocks) of the blocks that close each group.
std::vector<std::size_t> junction_blocks(const BackboneConfig& config);

struct ConvBn {
  Tensor weight;
  Tensor gamma;
  Tensor beta;
  BatchNormStats stats;
};

/// Two-layer basic block: f(h(x) + F(x)), F = conv-BN-ReLU-conv-BN, f = ReLU.
/// `projection` is the 1×1 strided shortcut when the block changes shape and
/// is undefined for the identity shortcut.
struct ResidualBlock {
  ConvBn conv1;
  ConvBn conv2;
  Tensor projection;
  std::size_t stride = 1;
};

struct ResidualGroup {
  std::vector<ResidualBlock> blocks;
  // Multi-level shortcut weights; undefined where the shortcut is an identity
  // or does not exist.
  Tensor middle_projection;
  Tensor root_projection;
  bool has_root = false;
};

class Backbone {
 public:
  Backbone() = default;
  static Backbone init(const BackboneConfig& config, std::uint64_t seed);

  const BackboneConfig& config() const { return config_; }
  ConvBn& stem() { return stem_; }
  const ConvBn& stem() const { return stem_; }
  std::array<ResidualGroup, 4>& groups() { return groups_; }
  const std::array<ResidualGroup, 4>& groups() const { return groups_; }

  /// Named tensors: weights, BN affine terms, and running statistics.
  ParamList parameters() const;

  /// Downsampling between the stem output and the final map.
  std::size_t root_stride() const;

  /// Switches the multi-level junction terms; weights are kept either way.
  void set_ror_shortcuts(bool on);

  void set_frozen(bool frozen);
  bool frozen() const { return frozen_; }

 private:
  BackboneConfig config_;
  ConvBn stem_;
  std::array<ResidualGroup, 4> groups_;
  bool frozen_ = false;
};

/// One residual block. `extra` terms (RoR shortcuts) are added to h(x) + F(x)
/// before the output ReLU.
Tensor residual_block_forward(Tape& tape, const Tensor& x, ResidualBlock& block, BnMode mode,
                              std::span<const Tensor> extra = {});

/// Plain residual forward; RoR shortcut weights, if any, are ignored.
Tensor resnet_forward(Tape& tape, Backbone& backbone, const Tensor& image, BnMode mode);

/// Residual forward with group-level and root-level junction terms. With
/// ror_shortcuts off this computes exactly what resnet_forward computes.
Tensor ror_forward(Tape& tape, Backbone& backbone, const Tensor& image, BnMode mode);

/// Dispatches on config().arch.
Tensor backbone_forward(Tape& tape, Backbone& backbone, const Tensor& image, BnMode mode);

ALNET_NS_END
