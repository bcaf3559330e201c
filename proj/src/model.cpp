#include "alnet/model.hpp"

ALNET_NS_BEGIN

void ModelConfig::validate() const {
  backbone.validate();
  require(classes >= 2, ErrorKind::Config, "model needs at least 2 classes");
  require(lstm_hidden >= 1, ErrorKind::Config, "LSTM hidden size must be positive");
}

Model Model::init(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  Model m;
  m.config_ = config;
  m.backbone_ = Backbone::init(config.backbone, derive_seed(seed, 1));
  const std::size_t c = config.backbone.group_channels[3];
  Rng rng(derive_seed(seed, 2));
  m.head_.weight = glorot_uniform({config.classes, c}, c, config.classes, rng);
  m.head_.bias = Tensor(Shape{config.classes}, real{0});
  m.reset_attention(seed);
  return m;
}

void Model::reset_attention(std::uint64_t seed) {
  attention_ = AttentionParams::init(config_.backbone.group_channels[3], config_.classes,
                                     config_.lstm_hidden, derive_seed(seed, 3));
}

ParamList Model::global_parameters() const {
  ParamList out = backbone_.parameters();
  out.push_back({"global_head.weight", head_.weight, ParamRole::Weight});
  out.push_back({"global_head.bias", head_.bias, ParamRole::Bias});
  return out;
}

ParamList Model::attention_parameters() const { return attention_.parameters(); }

ParamList Model::parameters() const {
  ParamList out = global_parameters();
  for (Param& p : attention_parameters()) out.push_back(std::move(p));
  return out;
}

void copy_values(const ParamList& from, const ParamList& to) {
  require(from.size() == to.size(), ErrorKind::Config, "parameter lists differ in length");
  for (std::size_t i = 0; i < from.size(); ++i) {
    require(from[i].name == to[i].name && from[i].tensor.shape() == to[i].tensor.shape(),
            ErrorKind::Config, "parameter mismatch at '" + from[i].name + "'");
    auto src = from[i].tensor.data();
    Tensor dst = to[i].tensor;
    std::copy(src.begin(), src.end(), dst.data().begin());
  }
}

Model Model::clone() const {
  Model copy = Model::init(config_, 0);
  copy_values(parameters(), copy.parameters());
  copy.backbone_.set_frozen(backbone_.frozen());
  return copy;
}

GlobalOutput global_forward(Tape& tape, Model& model, const Tensor& images, BnMode mode) {
  GlobalOutput out;
  out.map = backbone_forward(tape, model.backbone(), images, mode);
  if (out.map.rank() == 3) out.map = reshape(tape, out.map, {1, out.map.dim(0), out.map.dim(1), out.map.dim(2)});
  const Tensor pooled = global_avg_pool(tape, out.map);
  out.logits = linear(tape, pooled, model.global_head().weight, model.global_head().bias);
  out.probs = softmax(tape, out.logits);
  return out;
}

AttentionOutput local_forward(Tape& tape, Model& model, const Tensor& map,
                              const LstmState& state, double sharpness) {
  return attention_forward(tape, map, state, model.attention(), sharpness);
}

Loss joint_loss(Tape& tape, Model& model, const Tensor& images, std::span<const std::size_t> labels,
                const LstmState& state, BnMode mode, double sharpness) {
  GlobalOutput g = global_forward(tape, model, images, mode);
  const std::size_t n = g.map.dim(0);
  require(labels.size() == n, ErrorKind::Input, "one label per image is required");
  CrossEntropy global = softmax_cross_entropy(tape, g.logits, labels);
  Tensor total = global.loss.tensor;
  double value = global.loss.value;
  LstmState s = state;
  for (std::size_t i = 0; i < n; ++i) {
    AttentionOutput a = local_forward(tape, model, select(tape, g.map, i), s, sharpness);
    CrossEntropy local = softmax_cross_entropy(tape, a.local_logits, labels.subspan(i, 1));
    const double w = 1.0 / double(n);
    total = add(tape, total, scale(tape, local.loss.tensor, w));
    value += w * local.loss.value;
    s = a.state;
  }
  return {total, value};
}

Prediction predict(Model& model, const Tensor& image, LstmState& state, double sharpness) {
  Tape tape(false);
  GlobalOutput g = global_forward(tape, model, image, BnMode::Eval);
  require(g.map.dim(0) == 1, ErrorKind::Input, "predict takes one image");
  AttentionOutput a = local_forward(tape, model, g.map, state, sharpness);
  state = a.state.detached();
  Prediction p;
  p.global = AgeDistribution::from_tensor(g.probs);
  p.local = AgeDistribution::from_tensor(a.local_probs);
  p.fused = fuse_predictions(p.global, p.local);
  p.box = to_box(a.box);
  p.region = box_to_region(p.box, g.map.dim(2), g.map.dim(3));
  return p;
}

ALNET_NS_END
