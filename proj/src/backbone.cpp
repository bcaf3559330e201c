#include "alnet/backbone.hpp"

#include <numeric>

ALNET_NS_BEGIN

const char* to_string(Arch arch) { return arch == Arch::RoR ? "ror" : "resnets"; }

Arch parse_arch(const std::string& text) {
  if (text == "resnets" || text == "resnet") return Arch::ResNets;
  if (text == "ror") return Arch::RoR;
  fail(ErrorKind::Config, "unknown backbone architecture '" + text + "'");
}

BackboneConfig BackboneConfig::full(Arch arch) {
  BackboneConfig c;
  c.arch = arch;
  c.group_depths = {3, 4, 6, 3};
  c.group_channels = {64, 128, 256, 512};
  c.input_size = 224;
  c.stem_kernel = 7;
  c.stem_stride = 2;
  c.stem_pool = true;
  return c;
}

BackboneConfig BackboneConfig::toy(Arch arch) {
  BackboneConfig c;
  c.arch = arch;
  return c;
}

namespace {

struct Plan {
  std::size_t stem_out;       // spatial size after the stem conv
  std::size_t group_in;       // spatial size entering group 1
  std::array<std::size_t, 4> group_out;
};

Plan stride_plan(const BackboneConfig& c) {
  Plan p{};
  p.stem_out = sweep_extent(c.input_size, c.stem_kernel, c.stem_stride, c.stem_kernel / 2);
  p.group_in = c.stem_pool ? sweep_extent(p.stem_out, 3, 2, 1) : p.stem_out;
  std::size_t s = p.group_in;
  for (std::size_t g = 0; g < 4; ++g) {
    if (g > 0) s = sweep_extent(s, 3, 2, 1);
    p.group_out[g] = s;
  }
  return p;
}

ConvBn make_conv_bn(std::size_t in_c, std::size_t out_c, std::size_t k, Rng& rng) {
  ConvBn c;
  c.weight = glorot_uniform({out_c, in_c, k, k}, in_c * k * k, out_c * k * k, rng);
  c.gamma = Tensor(Shape{out_c}, real{1});
  c.beta = Tensor(Shape{out_c}, real{0});
  c.stats = BatchNormStats::fresh(out_c);
  return c;
}

Tensor make_projection(std::size_t in_c, std::size_t out_c, Rng& rng) {
  return glorot_uniform({out_c, in_c, 1, 1}, in_c, out_c, rng);
}

void add_conv_bn(ParamList& out, const std::string& prefix, const ConvBn& c) {
  out.push_back({prefix + ".weight", c.weight, ParamRole::Weight});
  out.push_back({prefix + ".bn.gamma", c.gamma, ParamRole::Norm});
  out.push_back({prefix + ".bn.beta", c.beta, ParamRole::Norm});
  out.push_back({prefix + ".bn.running_mean", c.stats.running_mean, ParamRole::Buffer});
  out.push_back({prefix + ".bn.running_var", c.stats.running_var, ParamRole::Buffer});
}

Tensor conv_bn(Tape& tape, const Tensor& x, ConvBn& c, std::size_t stride, BnMode mode) {
  const std::size_t k = c.weight.dim(2);
  Tensor y = conv2d(tape, x, c.weight, Tensor(), stride, k / 2);
  return batchnorm2d(tape, y, c.gamma, c.beta, c.stats, mode);
}

// Shortcut term for a junction: identity when `projection` is undefined,
// otherwise a strided 1×1 convolution.
Tensor shortcut(Tape& tape, const Tensor& x, const Tensor& projection, std::size_t stride) {
  if (!projection.defined()) return x;
  return conv2d(tape, x, projection, Tensor(), stride, 0);
}

void check_image(const BackboneConfig& c, const Tensor& image) {
  const auto& s = image.shape();
  require(s.size() == 3 || s.size() == 4, ErrorKind::Input,
          "backbone input must be [C,H,W] or [N,C,H,W], got " + to_string(s));
  const std::size_t off = s.size() - 3;
  require(s[off] == c.input_channels && s[off + 1] == c.input_size && s[off + 2] == c.input_size,
          ErrorKind::Input,
          "backbone expects " + std::to_string(c.input_channels) + "x" +
              std::to_string(c.input_size) + "x" + std::to_string(c.input_size) + " input, got " +
              to_string(s));
}

Tensor stem_forward(Tape& tape, Backbone& b, const Tensor& image, BnMode mode) {
  const auto& c = b.config();
  check_image(c, image);
  Tensor x = relu(tape, conv_bn(tape, image, b.stem(), c.stem_stride, mode));
  if (c.stem_pool) x = max_pool2d(tape, x, 3, 2, 1);
  return x;
}

}  // namespace

void BackboneConfig::validate() const {
  for (std::size_t d : group_depths)
    require(d >= 1, ErrorKind::Config, "every residual group needs at least one block");
  for (std::size_t ch : group_channels)
    require(ch >= 1, ErrorKind::Config, "group channel counts must be positive");
  require(input_channels >= 1, ErrorKind::Config, "input_channels must be positive");
  require(stem_kernel % 2 == 1, ErrorKind::Config, "stem kernel must be odd");
  stride_plan(*this);
}

Shape BackboneConfig::feature_shape() const {
  const Plan p = stride_plan(*this);
  return {group_channels[3], p.group_out[3], p.group_out[3]};
}

std::vector<std::size_t> junction_blocks(const BackboneConfig& config) {
  std::vector<std::size_t> out;
  std::size_t total = 0;
  for (std::size_t d : config.group_depths) out.push_back(total += d);
  return out;
}

Backbone Backbone::init(const BackboneConfig& config, std::uint64_t seed) {
  config.validate();
  Rng rng(seed);
  Backbone b;
  b.config_ = config;
  const std::size_t stem_c = config.group_channels[0];
  b.stem_ = make_conv_bn(config.input_channels, stem_c, config.stem_kernel, rng);
  std::size_t in_c = stem_c;
  for (std::size_t g = 0; g < 4; ++g) {
    ResidualGroup& group = b.groups_[g];
    const std::size_t out_c = config.group_channels[g];
    const std::size_t group_stride = g == 0 ? 1 : 2;
    for (std::size_t i = 0; i < config.group_depths[g]; ++i) {
      ResidualBlock block;
      block.stride = i == 0 ? group_stride : 1;
      const std::size_t block_in = i == 0 ? in_c : out_c;
      block.conv1 = make_conv_bn(block_in, out_c, 3, rng);
      block.conv2 = make_conv_bn(out_c, out_c, 3, rng);
      if (block.stride != 1 || block_in != out_c)
        block.projection = make_projection(block_in, out_c, rng);
      group.blocks.push_back(std::move(block));
    }
    if (config.arch == Arch::RoR) {
      if (group_stride != 1 || in_c != out_c)
        group.middle_projection = make_projection(in_c, out_c, rng);
      // Group 1's input is the stem output, so its group-level term is also
      // the root term; only the last group gets a separate root shortcut.
      if (g == 3) {
        group.has_root = true;
        if (stem_c != out_c || b.root_stride() != 1)
          group.root_projection = make_projection(stem_c, out_c, rng);
      }
    }
    in_c = out_c;
  }
  return b;
}

std::size_t Backbone::root_stride() const { return std::size_t{1} << 3; }

ParamList Backbone::parameters() const {
  ParamList out;
  add_conv_bn(out, "backbone.stem", stem_);
  for (std::size_t g = 0; g < 4; ++g) {
    const std::string gp = "backbone.group" + std::to_string(g + 1);
    const ResidualGroup& group = groups_[g];
    for (std::size_t i = 0; i < group.blocks.size(); ++i) {
      const std::string bp = gp + ".block" + std::to_string(i + 1);
      add_conv_bn(out, bp + ".conv1", group.blocks[i].conv1);
      add_conv_bn(out, bp + ".conv2", group.blocks[i].conv2);
      if (group.blocks[i].projection.defined())
        out.push_back({bp + ".projection", group.blocks[i].projection, ParamRole::Weight});
    }
    if (group.middle_projection.defined())
      out.push_back({gp + ".middle_shortcut", group.middle_projection, ParamRole::Weight});
    if (group.root_projection.defined())
      out.push_back({gp + ".root_shortcut", group.root_projection, ParamRole::Weight});
  }
  return out;
}

void Backbone::set_ror_shortcuts(bool on) { config_.ror_shortcuts = on; }

void Backbone::set_frozen(bool frozen) {
  frozen_ = frozen;
  set_requires_grad(parameters(), !frozen);
}

Tensor residual_block_forward(Tape& tape, const Tensor& x, ResidualBlock& block, BnMode mode,
                              std::span<const Tensor> extra) {
  const std::size_t in_c = x.dim(x.rank() - 3);
  require(in_c == block.conv1.weight.dim(1), ErrorKind::Config,
          "residual block expects " + std::to_string(block.conv1.weight.dim(1)) +
              " channels, got " + std::to_string(in_c));
  const bool reshapes = block.stride != 1 || in_c != block.conv2.weight.dim(0);
  require(!reshapes || block.projection.defined(), ErrorKind::Config,
          "residual block changes shape but has no projection shortcut");
  Tensor f = relu(tape, conv_bn(tape, x, block.conv1, block.stride, mode));
  f = conv_bn(tape, f, block.conv2, 1, mode);
  Tensor y = add(tape, shortcut(tape, x, block.projection, block.stride), f);
  for (const Tensor& term : extra) y = add(tape, y, term);
  return relu(tape, y);
}

Tensor resnet_forward(Tape& tape, Backbone& backbone, const Tensor& image, BnMode mode) {
  Tensor x = stem_forward(tape, backbone, image, mode);
  for (auto& group : backbone.groups())
    for (auto& block : group.blocks) x = residual_block_forward(tape, x, block, mode);
  return x;
}

Tensor ror_forward(Tape& tape, Backbone& backbone, const Tensor& image, BnMode mode) {
  const auto& c = backbone.config();
  require(c.arch == Arch::RoR, ErrorKind::Config, "ror_forward needs a RoR backbone");
  const Tensor root = stem_forward(tape, backbone, image, mode);
  Tensor x = root;
  for (std::size_t g = 0; g < 4; ++g) {
    ResidualGroup& group = backbone.groups()[g];
    const Tensor group_input = x;
    const std::size_t group_stride = g == 0 ? 1 : 2;
    for (std::size_t i = 0; i + 1 < group.blocks.size(); ++i)
      x = residual_block_forward(tape, x, group.blocks[i], mode);
    std::vector<Tensor> terms;
    if (c.ror_shortcuts) {
      terms.push_back(shortcut(tape, group_input, group.middle_projection, group_stride));
      if (group.has_root)
        terms.push_back(shortcut(tape, root, group.root_projection, backbone.root_stride()));
    }
    x = residual_block_forward(tape, x, group.blocks.back(), mode, terms);
  }
  return x;
}

Tensor backbone_forward(Tape& tape, Backbone& backbone, const Tensor& image, BnMode mode) {
  if (backbone.config().arch == Arch::RoR) return ror_forward(tape, backbone, image, mode);
  return resnet_forward(tape, backbone, image, mode);
}

ALNET_NS_END
