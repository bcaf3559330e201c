#include "alnet/trainer.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>

#include "alnet/config.hpp"

ALNET_NS_BEGIN

namespace {

// Independent random streams, mixed with the run seed.
constexpr std::uint64_t kShuffleStream = 4;
constexpr std::uint64_t kAugmentStream = 5;

}  // namespace

const char* to_string(Stage stage) { return stage == Stage::Local ? "local" : "global"; }

Stage parse_stage(const std::string& text) {
  if (text == "global") return Stage::Global;
  if (text == "local") return Stage::Local;
  fail(ErrorKind::Config, "unknown stage '" + text + "' (expected global or local)");
}

const char* to_string(Branch branch) {
  switch (branch) {
    case Branch::Global: return "global";
    case Branch::Local: return "local";
    case Branch::Fused: return "fused";
  }
  return "fused";
}

Branch parse_branch(const std::string& text) {
  if (text == "global") return Branch::Global;
  if (text == "local") return Branch::Local;
  if (text == "fused") return Branch::Fused;
  fail(ErrorKind::Config, "unknown branch '" + text + "' (expected global, local or fused)");
}

void TrainConfig::validate() const {
  require(base_lr > 0 && std::isfinite(base_lr), ErrorKind::Config,
          "base_lr must be positive");
  require(momentum >= 0 && momentum < 1, ErrorKind::Config, "momentum must lie in [0,1)");
  require(weight_decay >= 0, ErrorKind::Config, "weight_decay must be >= 0");
  require(batch_size >= 1, ErrorKind::Config, "batch_size must be >= 1");
  require(sharpness > 0, ErrorKind::Config, "sharpness must be positive");
  for (std::size_t i = 0; i < lr_drop_epochs.size(); ++i) {
    require(lr_drop_epochs[i] < epochs, ErrorKind::Config,
            "lr_drop_epochs must be below epochs (" + std::to_string(epochs) + ")");
    require(i == 0 || lr_drop_epochs[i] > lr_drop_epochs[i - 1], ErrorKind::Config,
            "lr_drop_epochs must be strictly increasing");
  }
  head.validate();
  model().validate();
  preprocess.validate();
  require(preprocess.crop == backbone.input_size, ErrorKind::Config,
          "preprocess.crop (" + std::to_string(preprocess.crop) +
              ") must equal backbone.input_size (" + std::to_string(backbone.input_size) + ")");
}

ModelConfig TrainConfig::model() const {
  ModelConfig m;
  m.backbone = backbone;
  m.classes = head.classes;
  m.lstm_hidden = lstm_hidden;
  return m;
}

double TrainConfig::lr_at(std::size_t epoch) const {
  double lr = base_lr;
  for (std::size_t e : lr_drop_epochs)
    if (epoch >= e) lr /= kLrDropFactor;
  return lr;
}

void Sgd::step(const ParamList& params, double lr) {
  for (const Param& p : params) {
    if (p.role == ParamRole::Buffer || !p.tensor.requires_grad() || !p.tensor.has_grad()) continue;
    Tensor& v = velocity_[p.name];
    if (!v.defined()) v = Tensor(p.tensor.shape());
    require(v.shape() == p.tensor.shape(), ErrorKind::CheckpointShape,
            "momentum buffer for '" + p.name + "' has the wrong shape");
    const double decay = p.role == ParamRole::Weight ? decay_ : 0.0;
    Tensor t = p.tensor;
    auto theta = t.data();
    auto g = t.grad();
    auto vel = v.data();
    for (std::size_t i = 0; i < theta.size(); ++i) {
      const real vi = static_cast<real>(momentum_ * double(vel[i]) + double(g[i]) +
                                        decay * double(theta[i]));
      vel[i] = vi;
      theta[i] = static_cast<real>(double(theta[i]) - lr * double(vi));
    }
    t.zero_grad();
  }
}

std::string EpochLog::line() const {
  return std::to_string(epoch) + '\t' + to_string(stage) + '\t' + format_number(lr) + '\t' +
         format_number(loss) + '\t' + format_number(accuracy);
}

// ---- checkpoints ----------------------------------------------------------

const Tensor* Checkpoint::find(const std::string& name) const {
  for (const auto& [n, t] : tensors)
    if (n == name) return &t;
  return nullptr;
}

namespace {

constexpr std::array<char, 4> kMagic{'A', 'L', 'N', 'C'};

class Writer {
 public:
  template <typename T>
  void put(T v) {
    static_assert(std::is_integral_v<T>);
    for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(std::uint8_t((std::uint64_t(v) >> (8 * i)) & 0xff));
  }
  void put_f32(float f) { put(std::bit_cast<std::uint32_t>(f)); }
  void bytes(const std::string& s) { out.insert(out.end(), s.begin(), s.end()); }
  std::vector<std::uint8_t> out;
};

class Reader {
 public:
  explicit Reader(const std::vector<std::uint8_t>& b) : buf(b) {}
  void need(std::size_t n, const char* what) {
    require(n <= buf.size() - pos, ErrorKind::CheckpointTruncated,
            std::string("checkpoint truncated while reading ") + what);
  }
  template <typename T>
  T get(const char* what) {
    need(sizeof(T), what);
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) v |= std::uint64_t(buf[pos + i]) << (8 * i);
    pos += sizeof(T);
    return T(v);
  }
  std::string text(std::size_t n, const char* what) {
    need(n, what);
    std::string s(buf.begin() + long(pos), buf.begin() + long(pos + n));
    pos += n;
    return s;
  }
  const std::vector<std::uint8_t>& buf;
  std::size_t pos = 0;
};

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& c) {
  Writer w;
  w.bytes(std::string(kMagic.begin(), kMagic.end()));
  w.put<std::uint32_t>(c.version);
  w.put<std::uint64_t>(c.config_text.size());
  w.bytes(c.config_text);
  w.put<std::uint64_t>(c.epoch);
  w.put<std::uint64_t>(c.seed);
  w.put<std::uint64_t>(c.tensors.size());
  for (const auto& [name, t] : c.tensors) {
    w.put<std::uint32_t>(std::uint32_t(name.size()));
    w.bytes(name);
    w.put<std::uint32_t>(std::uint32_t(t.rank()));
    for (std::size_t d : t.shape()) w.put<std::uint64_t>(d);
    for (real v : t.data()) w.put_f32(static_cast<float>(v));
  }
  return std::move(w.out);
}

Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes) {
  Reader r(bytes);
  require(r.text(4, "magic") == std::string(kMagic.begin(), kMagic.end()),
          ErrorKind::CheckpointMagic, "not a checkpoint (bad magic bytes)");
  Checkpoint c;
  c.version = r.get<std::uint32_t>("version");
  require(c.version == Checkpoint::kVersion, ErrorKind::CheckpointVersion,
          "checkpoint version " + std::to_string(c.version) + " is not supported (expected " +
              std::to_string(Checkpoint::kVersion) + ")");
  c.config_text = r.text(r.get<std::uint64_t>("config length"), "config");
  c.epoch = r.get<std::uint64_t>("epoch");
  c.seed = r.get<std::uint64_t>("seed");
  const auto count = r.get<std::uint64_t>("tensor count");
  for (std::uint64_t k = 0; k < count; ++k) {
    std::string name = r.text(r.get<std::uint32_t>("name length"), "tensor name");
    const auto rank = r.get<std::uint32_t>("rank");
    Shape shape;
    std::size_t n = 1;
    for (std::uint32_t d = 0; d < rank; ++d) {
      shape.push_back(r.get<std::uint64_t>("extent"));
      require(shape.back() == 0 || n <= (bytes.size() / shape.back()), ErrorKind::CheckpointTruncated,
              "checkpoint truncated: tensor '" + name + "' is larger than the file");
      n *= shape.back();
    }
    r.need(4 * n, "tensor values");
    Tensor t(shape);
    for (real& v : t.data()) v = static_cast<real>(std::bit_cast<float>(r.get<std::uint32_t>("value")));
    c.tensors.emplace_back(std::move(name), std::move(t));
  }
  require(r.pos == bytes.size(), ErrorKind::CheckpointTruncated,
          "checkpoint has trailing bytes after the last tensor");
  return c;
}

void save_checkpoint(const Checkpoint& c, const std::filesystem::path& path) {
  const std::vector<std::uint8_t> bytes = encode_checkpoint(c);
  std::ofstream out(path, std::ios::binary);
  require(bool(out), ErrorKind::Io, "cannot write checkpoint " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
  require(bool(out), ErrorKind::Io, "failed writing checkpoint " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(bool(in), ErrorKind::Io, "cannot open checkpoint " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

void restore_params(const Checkpoint& c, const ParamList& params) {
  for (const Param& p : params) {
    const Tensor* t = c.find(p.name);
    require(t != nullptr, ErrorKind::CheckpointShape, "checkpoint has no tensor '" + p.name + "'");
    require(t->shape() == p.tensor.shape(), ErrorKind::CheckpointShape,
            "tensor '" + p.name + "' is " + to_string(t->shape()) + " in the checkpoint but " +
                to_string(p.tensor.shape()) + " in the model");
    Tensor dst = p.tensor;
    std::copy(t->data().begin(), t->data().end(), dst.data().begin());
  }
}

// ---- runs -----------------------------------------------------------------

namespace {

const std::string kMomentumPrefix = "momentum/";

void prepare(TrainRun& run) {
  run.config.validate();
  run.optimizer = Sgd(run.config.momentum, run.config.weight_decay);
  Model& m = run.model;
  if (run.config.stage == Stage::Global) {
    m.backbone().set_frozen(false);
    set_requires_grad(m.global_parameters(), true);
    set_requires_grad(m.attention_parameters(), false);
  } else {
    m.backbone().set_frozen(true);
    set_requires_grad(m.global_parameters(), false);
    set_requires_grad(m.attention_parameters(), true);
  }
}

}  // namespace

TrainRun start_global(const TrainConfig& config) {
  require(config.stage == Stage::Global, ErrorKind::Usage, "start_global needs stage = global");
  TrainRun run;
  run.config = config;
  config.validate();
  run.model = Model::init(config.model(), config.seed);
  prepare(run);
  return run;
}

TrainRun start_global(const TrainConfig& config, const Checkpoint& init) {
  TrainRun run = start_global(config);
  restore_params(init, run.model.global_parameters());
  return run;
}

TrainRun start_local(const TrainConfig& config, const Checkpoint& base) {
  require(config.stage == Stage::Local, ErrorKind::Usage, "start_local needs stage = local");
  config.validate();
  TrainRun run;
  run.config = config;
  run.model = Model::init(config.model(), config.seed);
  restore_params(base, run.model.global_parameters());
  prepare(run);
  return run;
}

TrainRun resume(const Checkpoint& c, const TrainConfig* config) {
  TrainRun run;
  run.config = config ? *config : parse_train_config(c.config_text);
  run.config.validate();
  run.model = Model::init(run.config.model(), run.config.seed);
  restore_params(c, run.model.parameters());
  prepare(run);
  for (const auto& [name, t] : c.tensors)
    if (name.rfind(kMomentumPrefix, 0) == 0)
      run.optimizer.buffers()[name.substr(kMomentumPrefix.size())] = t.clone();
  run.epoch = c.epoch;
  return run;
}

Checkpoint make_checkpoint(const TrainRun& run) {
  Checkpoint c;
  c.config_text = format_train_config(run.config);
  c.epoch = run.epoch;
  c.seed = run.config.seed;
  for (const Param& p : run.model.parameters()) c.tensors.emplace_back(p.name, p.tensor.clone());
  for (const auto& [name, v] : run.optimizer.buffers())
    c.tensors.emplace_back(kMomentumPrefix + name, v.clone());
  return c;
}

LoadedModel load_model(const Checkpoint& c) {
  LoadedModel out;
  out.config = parse_train_config(c.config_text);
  out.config.validate();
  out.model = Model::init(out.config.model(), out.config.seed);
  restore_params(c, out.model.parameters());
  return out;
}

// ---- epochs ---------------------------------------------------------------

namespace {

Tensor stack(const std::vector<Tensor>& images) {
  Shape shape = images.front().shape();
  shape.insert(shape.begin(), images.size());
  Tensor out(shape);
  auto dst = out.data().begin();
  for (const Tensor& t : images) dst = std::copy(t.data().begin(), t.data().end(), dst);
  return out;
}

std::size_t row_argmax(const Tensor& rows, std::size_t row) {
  const std::size_t k = rows.dim(rows.rank() - 1);
  auto v = rows.data().subspan(row * k, k);
  return std::size_t(std::max_element(v.begin(), v.end()) - v.begin());
}

Tensor training_image(const TrainRun& run, const DatasetManifest& data, std::size_t index) {
  const TrainConfig& c = run.config;
  const std::uint64_t seed = derive_seed(c.seed, kAugmentStream, derive_seed(run.epoch, index));
  return preprocess(data.pixels(index), c.preprocess,
                    c.augment ? PreprocessMode::Train : PreprocessMode::Eval, seed);
}

void check_finite(double loss, std::size_t epoch, std::size_t batch) {
  require(std::isfinite(loss), ErrorKind::Numeric,
          "training diverged: loss is " + format_number(loss) + " at epoch " + std::to_string(epoch) +
              ", batch " + std::to_string(batch));
}

}  // namespace

EpochLog train_epoch(TrainRun& run, const DatasetManifest& data,
                     const std::vector<std::size_t>& subset) {
  const TrainConfig& c = run.config;
  std::vector<std::size_t> order = subset;
  if (order.empty()) {
    order.resize(data.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
  }
  require(!order.empty(), ErrorKind::Input, "no training samples");
  Rng shuffle(derive_seed(c.seed, kShuffleStream, run.epoch));
  for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[shuffle.below(i)]);

  Model& model = run.model;
  const double lr = c.lr_at(run.epoch);
  const ParamList params =
      c.stage == Stage::Global ? model.global_parameters() : model.attention_parameters();
  double loss_sum = 0;
  std::size_t correct = 0;
  LstmState state = LstmState::zeros(c.lstm_hidden);
  const bool cache = c.stage == Stage::Local && !c.augment;

  for (std::size_t start = 0, batch = 1; start < order.size(); start += c.batch_size, ++batch) {
    const std::size_t end = std::min(order.size(), start + c.batch_size);
    const std::size_t n = end - start;
    std::vector<std::size_t> labels;
    for (std::size_t i = start; i < end; ++i) labels.push_back(c.head.label_of(data.samples[order[i]]));

    Tape tape;
    Tensor total;
    if (c.stage == Stage::Global) {
      std::vector<Tensor> images;
      for (std::size_t i = start; i < end; ++i) images.push_back(training_image(run, data, order[i]));
      GlobalOutput g = global_forward(tape, model, stack(images), BnMode::Train);
      CrossEntropy ce = softmax_cross_entropy(tape, g.logits, labels);
      check_finite(ce.loss.value, run.epoch + 1, batch);
      loss_sum += ce.loss.value * double(n);
      for (std::size_t i = 0; i < n; ++i) correct += row_argmax(g.logits, i) == labels[i];
      total = ce.loss.tensor;
    } else {
      double batch_loss = 0;
      for (std::size_t i = start; i < end; ++i) {
        const std::size_t idx = order[i];
        GlobalOutput g;
        if (auto hit = run.feature_cache.find(idx); cache && hit != run.feature_cache.end()) {
          g = hit->second;
        } else {
          g = global_forward(tape, model, training_image(run, data, idx), BnMode::Eval);
          if (cache) run.feature_cache[idx] = g;
        }
        AttentionOutput a = local_forward(tape, model, g.map, state, c.sharpness);
        const std::size_t label = labels[i - start];
        const std::span<const std::size_t> one(&labels[i - start], 1);
        Loss loss;
        Tensor out_probs = a.local_probs;
        if (c.fused_loss) {
          out_probs = fuse(tape, g.probs, a.local_probs);
          loss = negative_log_likelihood(tape, out_probs, one);
        } else {
          loss = softmax_cross_entropy(tape, a.local_logits, one).loss;
        }
        correct += row_argmax(out_probs, 0) == label;
        batch_loss += loss.value;
        Tensor term = scale(tape, loss.tensor, 1.0 / double(n));
        total = total.defined() ? add(tape, total, term) : term;
        state = a.state.detached();
      }
      check_finite(batch_loss, run.epoch + 1, batch);
      loss_sum += batch_loss;
    }
    tape.backward(total);
    run.optimizer.step(params, lr);
  }
  ++run.epoch;
  EpochLog log;
  log.epoch = run.epoch;
  log.stage = c.stage;
  log.lr = lr;
  log.loss = loss_sum / double(order.size());
  log.accuracy = double(correct) / double(order.size());
  return log;
}

void train(TrainRun& run, const DatasetManifest& data, const EpochCallback& on_epoch,
           const std::vector<std::size_t>& indices) {
  while (run.epoch < run.config.epochs) {
    const EpochLog log = train_epoch(run, data, indices);
    if (on_epoch) on_epoch(log);
  }
}

Checkpoint train_global(const TrainConfig& config, const DatasetManifest& data,
                        const EpochCallback& on_epoch) {
  TrainRun run = start_global(config);
  train(run, data, on_epoch);
  return make_checkpoint(run);
}

Checkpoint train_local(const TrainConfig& config, const DatasetManifest& data,
                       const Checkpoint& base, const EpochCallback& on_epoch) {
  TrainRun run = start_local(config, base);
  train(run, data, on_epoch);
  return make_checkpoint(run);
}

// ---- inference ------------------------------------------------------------

std::vector<SamplePrediction> predict_samples(Model& model, const TrainConfig& config,
                                              const DatasetManifest& data,
                                              const std::vector<std::size_t>& indices,
                                              Branch branch, bool ten_crop) {
  const PreprocessConfig& pp = config.preprocess;
  std::vector<SamplePrediction> out;
  LstmState state = LstmState::zeros(config.lstm_hidden);
  auto choose = [branch](const Prediction& p) {
    return branch == Branch::Global ? p.global : branch == Branch::Local ? p.local : p.fused;
  };
  for (std::size_t idx : indices) {
    SamplePrediction sp;
    if (!ten_crop) {
      sp.prediction = predict(model, preprocess(data.pixels(idx), pp, PreprocessMode::Eval, 0),
                              state, config.sharpness);
    } else {
      Tensor resized = data.pixels(idx);
      if (resized.dim(1) != pp.resize || resized.dim(2) != pp.resize)
        resized = resize_bilinear(resized, pp.resize, pp.resize);
      std::vector<AgeDistribution> g, l, f;
      LstmState next;
      const std::vector<Tensor> crops = ten_crops(resized, pp.crop);
      for (std::size_t k = 0; k < crops.size(); ++k) {
        LstmState s = state;
        Prediction p = predict(model, crops[k], s, config.sharpness);
        g.push_back(p.global);
        l.push_back(p.local);
        f.push_back(p.fused);
        if (k == 4) {
          next = s;
          sp.prediction = p;
        }
      }
      state = next;
      sp.prediction.global = average_predictions(g);
      sp.prediction.local = average_predictions(l);
      sp.prediction.fused = average_predictions(f);
    }
    sp.chosen = choose(sp.prediction);
    out.push_back(std::move(sp));
  }
  return out;
}

std::vector<EvalRecord> evaluate(Model& model, const TrainConfig& config,
                                 const DatasetManifest& data,
                                 const std::vector<std::size_t>& indices, Branch branch,
                                 bool ten_crop) {
  const std::vector<SamplePrediction> preds =
      predict_samples(model, config, data, indices, branch, ten_crop);
  std::vector<EvalRecord> records;
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const Sample& s = data.samples[indices[i]];
    EvalRecord r;
    r.predicted = config.head.point_prediction(preds[i].chosen);
    r.actual = config.head.point_truth(s);
    if (config.head.mode == HeadMode::Dex) {
      r.mu = s.age;
      r.delta = s.sigma;
    }
    records.push_back(r);
  }
  return records;
}

ALNET_NS_END
