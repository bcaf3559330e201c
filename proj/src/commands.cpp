#include "alnet/commands.hpp"

#include <fstream>
#include <map>
#include <numeric>
#include <sstream>

ALNET_NS_BEGIN

namespace {

DatasetManifest load_with_pixels(const std::filesystem::path& path) {
  DatasetManifest m = load_manifest(path);
  m.load_all_pixels();
  return m;
}

std::vector<std::size_t> all_indices(const DatasetManifest& m) {
  std::vector<std::size_t> out(m.size());
  std::iota(out.begin(), out.end(), std::size_t{0});
  return out;
}

std::map<std::string, double> read_predictions(const std::filesystem::path& path) {
  std::ifstream in(path);
  require(bool(in), ErrorKind::Io, "cannot open predictions " + path.string());
  std::map<std::string, double> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream fields(line);
    std::string id;
    double value = 0;
    require(bool(fields >> id >> value), ErrorKind::Parse,
            path.filename().string() + " line " + std::to_string(lineno) +
                ": expected 'id value'");
    require(out.emplace(id, value).second, ErrorKind::Validation,
            "duplicate prediction for '" + id + "'");
  }
  return out;
}

EvalRecord truth_record(const HeadConfig& head, const Sample& s, double predicted) {
  EvalRecord r;
  r.predicted = predicted;
  r.actual = head.point_truth(s);
  if (head.mode == HeadMode::Dex) {
    r.mu = s.age;
    r.delta = s.sigma;
  }
  return r;
}

}  // namespace

std::vector<Split> configured_splits(const DatasetManifest& manifest, const RunConfig& config) {
  if (config.eval.protocol)
    return protocol_split(manifest, *config.eval.protocol, config.eval.split_seed);
  return {Split{"all", {}, all_indices(manifest)}};
}

Checkpoint run_train(const TrainRequest& req, const EpochCallback& on_epoch) {
  const TrainConfig& c = req.config.train;
  require(c.stage == Stage::Global || req.base || req.resume, ErrorKind::Usage,
          "the local stage needs a base checkpoint (--base)");
  require(!(req.base && req.resume), ErrorKind::Usage, "--base and --resume exclude each other");
  const DatasetManifest data = load_with_pixels(req.manifest);

  std::vector<std::size_t> indices;
  if (req.split) {
    require(req.config.eval.protocol.has_value(), ErrorKind::Usage,
            "--split needs a protocol (--protocol or eval.protocol)");
    const std::vector<Split> splits = configured_splits(data, req.config);
    require(*req.split < splits.size(), ErrorKind::Usage,
            "split " + std::to_string(*req.split) + " does not exist (protocol has " +
                std::to_string(splits.size()) + ")");
    indices = splits[*req.split].train;
  }

  TrainRun run;
  if (req.resume) {
    const Checkpoint saved = load_checkpoint(*req.resume);
    TrainConfig stored = parse_train_config(saved.config_text);
    stored.epochs = c.epochs;
    run = resume(saved, &stored);
  } else if (c.stage == Stage::Local) {
    run = start_local(c, load_checkpoint(*req.base));
  } else if (req.base) {
    run = start_global(c, load_checkpoint(*req.base));
  } else {
    run = start_global(c);
  }

  std::ofstream log;
  if (req.log) {
    log.open(*req.log, std::ios::app);
    require(bool(log), ErrorKind::Io, "cannot open log " + req.log->string());
  }
  train(run, data, [&](const EpochLog& entry) {
    if (log.is_open()) log << entry.line() << '\n' << std::flush;
    if (on_epoch) on_epoch(entry);
  }, indices);
  Checkpoint out = make_checkpoint(run);
  save_checkpoint(out, req.out);
  return out;
}

EvalReport run_eval(const EvalRequest& req) {
  const bool from_file = req.predictions.has_value();
  require(from_file != !req.models.empty(), ErrorKind::Usage,
          "eval needs either --model or --predictions");
  DatasetManifest data = from_file ? load_manifest(req.manifest) : load_with_pixels(req.manifest);
  const std::vector<Split> splits = configured_splits(data, req.config);
  require(req.models.size() <= 1 || req.models.size() == splits.size(), ErrorKind::Usage,
          "got " + std::to_string(req.models.size()) + " models for " +
              std::to_string(splits.size()) + " splits");

  std::map<std::string, double> given;
  if (from_file) given = read_predictions(*req.predictions);
  std::optional<LoadedModel> shared;
  if (req.models.size() == 1) shared = load_model(load_checkpoint(req.models.front()));

  EvalReport report;
  report.protocol = req.config.eval.protocol ? to_string(*req.config.eval.protocol) : "none";
  for (std::size_t k = 0; k < splits.size(); ++k) {
    const Split& split = splits[k];
    std::vector<EvalRecord> records;
    HeadConfig head = req.config.train.head;
    if (from_file) {
      for (std::size_t idx : split.test) {
        const Sample& s = data.samples[idx];
        auto it = given.find(s.id);
        require(it != given.end(), ErrorKind::Input, "no prediction for sample '" + s.id + "'");
        records.push_back(truth_record(head, s, it->second));
      }
    } else {
      std::optional<LoadedModel> own;
      if (!shared) own = load_model(load_checkpoint(req.models[k]));
      LoadedModel& m = shared ? *shared : *own;
      head = m.config.head;
      records = evaluate(m.model, m.config, data, split.test, req.config.eval.branch,
                         req.config.eval.ten_crop);
    }
    bool with_eps = head.mode == HeadMode::Dex && !records.empty();
    for (const EvalRecord& r : records) with_eps = with_eps && r.delta.has_value();
    const std::vector<std::string> names = metric_names(head.mode, with_eps);
    if (report.metrics.empty()) report.metrics = names;
    require(report.metrics == names, ErrorKind::Validation,
            "split " + split.name + " reports different metrics than the first split");
    report.splits.push_back(
        {split.name, records.size(), score_records(head.mode, with_eps, records, head.classes)});
  }
  return report;
}

Region region_on_input(const Region& r, const TrainConfig& config) {
  const Shape fmap = config.backbone.feature_shape();
  const std::size_t size = config.preprocess.crop;
  return {r.row0 * size / fmap[1], r.col0 * size / fmap[2], r.rows * size / fmap[1],
          r.cols * size / fmap[2]};
}

std::vector<PredictRow> run_predict(const RunConfig& config, const std::filesystem::path& model,
                                    const std::filesystem::path& manifest) {
  LoadedModel m = load_model(load_checkpoint(model));
  const DatasetManifest data = load_with_pixels(manifest);
  const std::vector<SamplePrediction> preds = predict_samples(
      m.model, m.config, data, all_indices(data), config.eval.branch, config.eval.ten_crop);
  std::vector<PredictRow> rows;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    PredictRow row;
    row.id = data.samples[i].id;
    row.probs = preds[i].chosen;
    row.value = m.config.head.point_prediction(row.probs);
    row.region = preds[i].prediction.region;
    row.pixels = region_on_input(row.region, m.config);
    rows.push_back(std::move(row));
  }
  return rows;
}

std::string format_predictions(const std::vector<PredictRow>& rows, bool boxes) {
  std::ostringstream out;
  for (const PredictRow& r : rows) {
    out << r.id << '\t' << format_number(r.value);
    if (boxes)
      out << '\t' << r.pixels.row0 << '\t' << r.pixels.col0 << '\t' << r.pixels.rows << '\t'
          << r.pixels.cols;
    out << '\n';
  }
  return out.str();
}

GradCheckReport network_gradcheck(const RunConfig& config) {
  const TrainConfig& c = config.train;
  const GradCheckSettings& g = config.gradcheck;
  require(g.batch >= 1, ErrorKind::Config, "gradcheck.batch must be >= 1");
  c.validate();
  Model model = Model::init(c.model(), g.seed);
  set_requires_grad(model.parameters(), true);
  Rng rng(derive_seed(g.seed, 6, 0));
  const std::size_t s = c.backbone.input_size;
  Tensor images(Shape{g.batch, c.backbone.input_channels, s, s});
  for (real& v : images.data()) v = static_cast<real>(rng.uniform());
  std::vector<std::size_t> labels;
  for (std::size_t i = 0; i < g.batch; ++i) labels.push_back(rng.below(c.head.classes));

  LossFn loss = [&](Tape& tape) {
    return joint_loss(tape, model, images, labels, LstmState::zeros(c.lstm_hidden), BnMode::Train,
                      c.sharpness);
  };
  GradCheckOptions opts;
  opts.samples = g.samples;
  opts.step = g.step;
  opts.tolerance = g.tolerance;
  opts.abs_floor = g.abs_floor;
  opts.seed = g.seed;
  return grad_check(loss, model.parameters(), opts);
}

std::string format_gradcheck(const GradCheckReport& r, const GradCheckSettings& g) {
  std::ostringstream out;
  out << "checked " << r.checked << ", skipped " << r.skipped << " (both zero), " << r.kinks
      << " set aside at kinks\n";
  out << "max relative error " << format_number(r.max_rel_err) << " (tolerance "
      << format_number(g.tolerance) << ", step " << format_number(g.step) << ")\n";
  for (const GradCheckEntry& e : r.failures)
    out << "FAIL " << e.param << '[' << e.index << "] analytic " << format_number(e.analytic)
        << " numeric " << format_number(e.numeric) << " rel " << format_number(e.rel_err) << '\n';
  out << (r.passed() ? "PASS" : "FAIL") << '\n';
  return out.str();
}

ALNET_NS_END
