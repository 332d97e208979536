#include "bernnet/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <limits>
#include <ostream>

#include "bernnet/error.hpp"
#include "bernnet/loss.hpp"

#ifndef BERNNET_DEFAULT_DATA_ROOT
#define BERNNET_DEFAULT_DATA_ROOT "data"
#endif

namespace bernnet {

namespace fs = std::filesystem;

std::string data_root() {
  if (const char* env = std::getenv("BERNNET_DATA_ROOT"); env && *env) return env;
  return BERNNET_DEFAULT_DATA_ROOT;
}

namespace {

std::string resolve(const std::string& root, const std::string& path) {
  const fs::path p(path);
  return p.is_absolute() ? p.string() : (fs::path(root) / p).string();
}

void standardize(PreparedData& d) {
  const Standardizer s = Standardizer::fit(d.train.features);
  d.train.features = s.apply(d.train.features);
  d.validation.features = s.apply(d.validation.features);
}

std::size_t cap(std::size_t limit, std::size_t n) { return limit == 0 ? n : std::min(limit, n); }

}  // namespace

PreparedData prepare_data(const ExperimentConfig& config, const std::string& root) {
  const DatasetConfig& dc = config.dataset;
  PreparedData out;
  if (dc.kind == "mnist") {
    const fs::path dir = resolve(root, dc.path);
    auto file = [&](const char* name) {
      const fs::path gz = dir / (std::string(name) + ".gz");
      return fs::exists(gz) ? gz.string() : (dir / name).string();
    };
    out.train = load_mnist(file("train-images-idx3-ubyte"), file("train-labels-idx1-ubyte"));
    out.validation = load_mnist(file("t10k-images-idx3-ubyte"), file("t10k-labels-idx1-ubyte"));
    out.train = take_first(out.train, cap(dc.train_rows, out.train.size()));
    out.validation = take_first(out.validation, cap(dc.val_rows, out.validation.size()));
    out.train.split = "train";
    out.validation.split = "validation";
    standardize(out);
  } else if (dc.kind == "higgs_csv") {
    std::optional<std::size_t> rows;
    if (dc.max_rows > 0) rows = dc.max_rows;
    const Dataset all = load_higgs_csv(resolve(root, dc.path), rows);
    auto [train, val] = split(all, dc.train_fraction, dc.split_seed);
    out.train = take_first(train, cap(dc.train_rows, train.size()));
    out.validation = take_first(val, cap(dc.val_rows, val.size()));
    out.train.split = "train";
    out.validation.split = "validation";
    standardize(out);
  } else if (dc.kind == "synthetic") {
    out.train = synth_regression(dc.target, dc.split_seed);
    out.train.split = "train";
    out.validation = out.train;
  } else {
    throw ConfigError("unknown dataset kind '" + dc.kind + "'");
  }
  if (out.train.size() == 0) throw ConfigError("training split is empty");
  if (out.validation.size() == 0) throw ConfigError("validation split is empty");
  return out;
}

PreparedData prepare_data(const ExperimentConfig& config) { return prepare_data(config, data_root()); }

Network build_network(const ModelConfig& m, std::size_t input_width, std::size_t output_width) {
  const ActivationKind kind = activation_kind_from_string(m.activation);
  const bool bern = kind == ActivationKind::bernstein;
  const WeightInit init = (bern || kind == ActivationKind::selu) ? WeightInit::lecun : WeightInit::kaiming;
  const CoefficientSharing sharing =
      m.sharing == "per_layer" ? CoefficientSharing::per_layer : CoefficientSharing::per_neuron;
  const InitMode bern_init = init_mode_from_string(m.init);

  auto hidden_block = [&](std::size_t in, std::size_t width) {
    std::vector<LayerSpec> block{linear_layer(in, width, init)};
    if (m.batch_norm || bern) block.push_back(batch_norm_layer(width));
    if (bern) {
      block.push_back(clamp_layer(m.bernstein.lower, m.bernstein.upper, m.clamp_straight_through));
      block.push_back(bernstein_layer(width, m.bernstein, sharing, bern_init));
    } else {
      block.push_back(activation_layer(kind, width, m.leaky_slope));
    }
    return block;
  };

  std::vector<LayerSpec> layers;
  std::size_t width = input_width;
  if (m.residual) {
    if (bern) throw ConfigError("residual blocks are only built for non-Bernstein activations");
    layers.push_back(linear_layer(width, m.width, init));
    width = m.width;
    for (std::size_t i = 0; i < m.depth; ++i) layers.push_back(residual_block(hidden_block(width, width)));
  } else {
    std::vector<std::size_t> hidden = m.hidden;
    if (hidden.empty()) hidden.assign(m.depth, m.width);
    for (std::size_t w : hidden) {
      auto block = hidden_block(width, w);
      layers.insert(layers.end(), block.begin(), block.end());
      width = w;
    }
  }
  layers.push_back(linear_layer(width, output_width, WeightInit::lecun));
  return Network(input_width, std::move(layers));
}

std::vector<double> derivative_floors(const Network& net) {
  std::vector<double> floors(net.activation_count(), 0.0);
  for (std::size_t i = 0; i < floors.size(); ++i) {
    const auto& spec = net.activation_spec(i);
    if (spec.kind == ActivationKind::bernstein) floors[i] = theoretical_lower_bound(spec.bernstein);
  }
  return floors;
}

MetricDirection metric_direction(TaskKind task) noexcept {
  return task == TaskKind::regression ? MetricDirection::minimize : MetricDirection::maximize;
}

namespace {

LossResult task_loss(TaskKind task, const Matrix& out, const std::vector<std::size_t>& labels, const Matrix& targets) {
  switch (task) {
    case TaskKind::multiclass: return loss_softmax_ce(out, labels);
    case TaskKind::binary: {
      std::vector<double> t(labels.begin(), labels.end());
      return loss_bce_logits(out, t);
    }
    case TaskKind::regression: return loss_mse(out, targets);
  }
  throw Error("unknown task kind");
}

struct Evaluation {
  double loss = 0.0;
  double metric = 0.0;
};

Evaluation evaluate(const Network& net, const Parameters& params, const Dataset& data) {
  constexpr std::size_t kChunk = 4096;
  Matrix out(data.size(), net.output_width());
  std::vector<std::size_t> rows;
  for (std::size_t start = 0; start < data.size(); start += kChunk) {
    const std::size_t end = std::min(data.size(), start + kChunk);
    rows.resize(end - start);
    for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = start + i;
    const Matrix part = predict(net, params, gather_rows(data.features, rows));
    std::copy(part.values().begin(), part.values().end(), out.values().begin() + start * out.cols());
  }
  Evaluation e;
  e.loss = task_loss(data.task, out, data.labels, data.targets).loss;
  switch (data.task) {
    case TaskKind::multiclass: e.metric = compute_accuracy(out, data.labels); break;
    case TaskKind::binary: e.metric = compute_auc(out.values(), data.labels); break;
    case TaskKind::regression: e.metric = e.loss; break;
  }
  return e;
}

bool bounds_hold(const Network& net, const Parameters& params) {
  for (const auto& r : check_network_bounds(net, params))
    if (!r.holds) return false;
  return true;
}

ScheduleSpec schedule_spec(const SchedulerConfig& s, MetricDirection dir) {
  if (s.kind == "exponential") return ExponentialDecay{s.gamma, s.start_epoch};
  if (s.kind == "plateau") return ReduceOnPlateau{dir, s.factor, s.patience, s.min_delta};
  return NoSchedule{};
}

std::uint64_t shuffle_seed(std::uint64_t seed) { return seed * 0xd1342543de82ef95ULL + 0x2545f4914f6cdd1dULL; }

}  // namespace

TrainResult train_model(const ExperimentConfig& config, const PreparedData& data, const TrainOptions& options) {
  const Dataset& train = data.train;
  TrainResult result;
  result.network = build_network(config.model, train.features.cols(), train.output_width());
  const Network& net = result.network;
  Rng rng(config.seed);
  result.parameters = net.init_parameters(rng);
  Parameters& params = result.parameters;

  const std::size_t layers = net.activation_count();
  const std::size_t batch_size = config.training.batch_size == 0 ? train.size() : config.training.batch_size;
  const DeadNeuronPolicy policy{config.diagnostics.dead_threshold};
  const MetricDirection dir = metric_direction(train.task);
  BackwardOptions bopts;
  if (layers > 0) bopts.capture_output_of_op = net.activation_op(0);

  const AdamWConfig acfg{config.optimizer.lr,           config.optimizer.beta1,
                         config.optimizer.beta2,        config.optimizer.eps,
                         config.optimizer.weight_decay, config.optimizer.decay_start_epoch,
                         config.optimizer.decay_bernstein, config.optimizer.decay_bn_affine};
  AdamW opt(params, acfg);
  Scheduler sched(config.optimizer.lr, schedule_spec(config.scheduler, dir), config.scheduler.min_lr);
  EarlyStopping stopper(config.early_stop.patience, config.early_stop.min_delta, dir);
  BatchIterator batches(train, batch_size, shuffle_seed(config.seed));

  auto log_record = [&](const DiagnosticsRecord& r) {
    if (!options.log) return;
    double min_d = std::numeric_limits<double>::infinity();
    for (double v : r.min_abs_derivative) min_d = std::min(min_d, v);
    *options.log << "epoch " << r.epoch << " train_loss " << format_double(r.train_loss) << " val_loss "
                 << format_double(r.val_loss) << " val_metric " << format_double(r.val_metric) << " lr "
                 << format_double(r.lr) << " min|σ′| " << format_double(layers ? min_d : 0.0) << "\n";
  };

  // Epoch 0: statistics of the initial parameters on a few batches, no update.
  {
    Parameters probe = params;
    EpochAccumulator acc(layers);
    MagAccumulator mag;
    double loss_sum = 0.0;
    std::size_t rows = 0;
    batches.start_epoch(0);
    Batch b;
    for (std::size_t k = 0; k < std::max<std::size_t>(1, config.diagnostics.init_batches) && batches.next(b); ++k) {
      auto fr = forward(net, probe, b.x, Mode::train);
      const LossResult loss = task_loss(train.task, fr.output, b.labels, b.targets);
      if (!std::isfinite(loss.loss)) throw NumericError("non-finite loss at initialization, batch " + std::to_string(k + 1));
      const Gradients g = backward(net, probe, fr.cache, loss.grad, bopts);
      acc.add(layer_batch_stats(net, fr.cache, policy));
      if (g.captured) mag.add(*g.captured);
      loss_sum += loss.loss * static_cast<double>(b.x.rows());
      rows += b.x.rows();
    }
    DiagnosticsRecord r;
    r.epoch = 0;
    acc.write_to(r);
    r.mag = mag.value();
    r.train_loss = loss_sum / static_cast<double>(rows);
    const Evaluation ev = evaluate(net, params, data.validation);
    r.val_loss = ev.loss;
    r.val_metric = ev.metric;
    r.lr = sched.lr();
    r.bounds_hold = bounds_hold(net, params);
    result.records.push_back(r);
    log_record(r);
  }

  bool have_best = false;
  for (int epoch = 1; epoch <= config.training.epochs; ++epoch) {
    opt.set_lr(sched.lr());
    batches.start_epoch(epoch);
    EpochAccumulator acc(layers);
    MagAccumulator mag;
    double loss_sum = 0.0;
    std::size_t rows = 0, index = 0;
    bool holds = true;
    Batch b;
    while (batches.next(b)) {
      ++index;
      auto fr = forward(net, params, b.x, Mode::train);
      const LossResult loss = task_loss(train.task, fr.output, b.labels, b.targets);
      if (!std::isfinite(loss.loss)) {
        throw NumericError("non-finite training loss at epoch " + std::to_string(epoch) + ", batch " +
                           std::to_string(index));
      }
      const Gradients g = backward(net, params, fr.cache, loss.grad, bopts);
      if ((index - 1) % config.diagnostics.stride == 0) acc.add(layer_batch_stats(net, fr.cache, policy));
      if (g.captured) mag.add(*g.captured);
      loss_sum += loss.loss * static_cast<double>(b.x.rows());
      rows += b.x.rows();
      opt.step(params, g.tensors, epoch);
      if (config.diagnostics.check_bounds && holds) holds = bounds_hold(net, params);
    }

    DiagnosticsRecord r;
    r.epoch = epoch;
    acc.write_to(r);
    r.mag = mag.value();
    r.train_loss = loss_sum / static_cast<double>(rows);
    const Evaluation ev = evaluate(net, params, data.validation);
    if (!std::isfinite(ev.loss)) throw NumericError("non-finite validation loss at epoch " + std::to_string(epoch));
    r.val_loss = ev.loss;
    r.val_metric = ev.metric;
    r.lr = opt.lr();
    r.bounds_hold = config.diagnostics.check_bounds ? holds : bounds_hold(net, params);
    result.records.push_back(r);
    log_record(r);

    if (!have_best) {
      result.best_train_loss = r.train_loss;
      result.best_val_metric = r.val_metric;
      have_best = true;
    } else {
      result.best_train_loss = std::min(result.best_train_loss, r.train_loss);
      result.best_val_metric = dir == MetricDirection::maximize ? std::max(result.best_val_metric, r.val_metric)
                                                                : std::min(result.best_val_metric, r.val_metric);
    }
    result.epochs_run = epoch;

    sched.step(epoch, r.val_metric);
    if (config.early_stop.enabled && stopper.update(r.val_metric)) {
      result.early_stopped = true;
      break;
    }
  }
  if (!have_best) {
    result.best_train_loss = result.records[0].train_loss;
    result.best_val_metric = result.records[0].val_metric;
  }
  return result;
}

void write_run_outputs(const ExperimentConfig& config, const TrainResult& result, const std::string& dir) {
  fs::create_directories(dir);
  const fs::path d(dir);
  const std::string fp = config_fingerprint(config);
  export_metrics_csv(result.records, (d / "metrics.csv").string(), fp);
  export_heatmap_csv(result.records, (d / "heatmap.csv").string(), fp);
  export_depth_profile_csv(result.records.back(), derivative_floors(result.network), (d / "depth_profile.csv").string(),
                           fp);
  save_config(config, (d / "config.json").string());
  if (config.diagnostics.checkpoint) {
    write_checkpoint((d / "checkpoint.txt").string(), result.network, result.parameters);
  }
  if (config.diagnostics.plots && result.network.activation_count() > 0) {
    const std::size_t layers = result.network.activation_count();
    std::vector<PlotSeries> mins;
    for (std::size_t layer : {std::size_t{0}, layers / 2, layers - 1}) {
      if (!mins.empty() && mins.back().name == "layer " + std::to_string(layer)) continue;
      PlotSeries s{"layer " + std::to_string(layer), {}, {}};
      for (const auto& r : result.records) {
        s.x.push_back(r.epoch);
        s.y.push_back(r.min_abs_derivative[layer]);
      }
      mins.push_back(std::move(s));
    }
    write_svg_plot((d / "min_derivative.svg").string(), config.name + ": min |σ′|", "epoch", "min |σ′|", mins, true);
    PlotSeries loss{"train", {}, {}}, mag{"first-layer MAG", {}, {}};
    for (const auto& r : result.records) {
      loss.x.push_back(r.epoch);
      loss.y.push_back(r.train_loss);
      mag.x.push_back(r.epoch);
      mag.y.push_back(r.mag);
    }
    write_svg_plot((d / "train_loss.svg").string(), config.name + ": training loss", "epoch", "loss", {loss}, true);
    write_svg_plot((d / "mag.svg").string(), config.name + ": first-layer MAG", "epoch", "MAG", {mag}, true);
  }
}

}  // namespace bernnet
