#include "bernnet/experiments.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <limits>
#include <ostream>
#include <sstream>

#include "bernnet/error.hpp"
#include "bernnet/gradcheck.hpp"
#include "bernnet/loss.hpp"

namespace bernnet {

namespace fs = std::filesystem;

namespace {

std::string path_in(const ExperimentConfig& c, const std::string& file) {
  return (fs::path(c.output_dir) / file).string();
}

void require_safe_name(const std::string& name) {
  const bool ok = !name.empty() && name != "." && name != ".." &&
                  std::all_of(name.begin(), name.end(), [](unsigned char ch) {
                    return std::isalnum(ch) || ch == '_' || ch == '-' || ch == '.';
                  });
  if (!ok) throw ConfigError("variant name '" + name + "' must use only letters, digits, '_', '-' and '.'");
}

std::string join_widths(const ModelConfig& m) {
  if (m.hidden.empty()) return std::to_string(m.width);
  std::string s;
  for (std::size_t i = 0; i < m.hidden.size(); ++i) s += (i ? "-" : "") + std::to_string(m.hidden[i]);
  return s;
}

std::size_t hidden_depth(const ModelConfig& m) { return m.hidden.empty() ? m.depth : m.hidden.size(); }

int degree_of(const ModelConfig& m) { return m.activation == "bernstein" ? m.bernstein.degree : 0; }

void summary_line(std::ostream& out, const std::string& name, const TrainResult& r) {
  out << name << ": best_train_loss " << format_double(r.best_train_loss) << " best_val_metric "
      << format_double(r.best_val_metric) << " epochs " << r.epochs_run << (r.early_stopped ? " (early stop)" : "")
      << "\n";
}

}  // namespace

TrainResult cmd_train(const ExperimentConfig& config, std::ostream& out, std::ostream* log) {
  const PreparedData data = prepare_data(config);
  TrainResult r = train_model(config, data, {log});
  write_run_outputs(config, r, config.output_dir);
  summary_line(out, config.name, r);
  return r;
}

std::vector<VariantRun> run_variants(const ExperimentConfig& base, std::ostream* log) {
  std::vector<VariantRun> runs;
  for (const auto& v : base.sweep.variants) {
    require_safe_name(v.name);
    ExperimentConfig c = apply_patch(base, v.patch);
    c.name = v.name;
    c.sweep = {};
    c.output_dir = path_in(base, v.name);
    if (log) *log << "== " << v.name << " ==\n";
    const PreparedData data = prepare_data(c);
    TrainResult r = train_model(c, data, {log});
    write_run_outputs(c, r, c.output_dir);
    runs.push_back({v.name, std::move(c), std::move(r)});
  }
  return runs;
}

std::vector<VariantRun> cmd_exp1(const ExperimentConfig& config, std::ostream& out, std::ostream* log) {
  if (config.sweep.variants.empty()) {
    out << "exp1: no variants configured under sweep.variants; nothing to do\n";
    return {};
  }
  auto runs = run_variants(config, log);
  fs::create_directories(config.output_dir);
  const std::string fp = config_fingerprint(config);

  CsvWriter curves(path_in(config, "exp1_min_derivative.csv"), fp,
                   {"variant", "activation", "position", "layer_index", "epoch", "min_abs_derivative",
                    "theoretical_floor"});
  CsvWriter depth(path_in(config, "exp1_depth_profile.csv"), fp,
                  {"variant", "activation", "layer_index", "min_abs_derivative", "dead_ratio", "theoretical_floor"});
  for (const auto& run : runs) {
    const auto floors = derivative_floors(run.result.network);
    const std::size_t layers = floors.size();
    if (layers == 0) continue;
    const std::pair<const char*, std::size_t> tracked[] = {{"first", 0}, {"middle", layers / 2}, {"last", layers - 1}};
    for (const auto& [position, layer] : tracked) {
      for (const auto& r : run.result.records) {
        curves.cell(run.name).cell(run.config.model.activation).cell(std::string(position));
        curves.cell(static_cast<long long>(layer)).cell(static_cast<long long>(r.epoch));
        curves.cell(r.min_abs_derivative[layer]).cell(floors[layer]).end_row();
      }
    }
    const auto& last = run.result.records.back();
    for (std::size_t i = 0; i < layers; ++i) {
      depth.cell(run.name).cell(run.config.model.activation).cell(static_cast<long long>(i));
      depth.cell(last.min_abs_derivative[i]).cell(last.dead_ratio[i]).cell(floors[i]).end_row();
    }
    summary_line(out, run.name, run.result);
  }
  curves.close();
  depth.close();
  return runs;
}

std::vector<VariantRun> cmd_exp2(const ExperimentConfig& config, std::ostream& out, std::ostream* log) {
  if (config.sweep.variants.empty()) {
    out << "exp2: no variants configured under sweep.variants; nothing to do\n";
    return {};
  }
  auto runs = run_variants(config, log);
  fs::create_directories(config.output_dir);
  const std::string fp = config_fingerprint(config);

  CsvWriter dead(path_in(config, "exp2_dead_ratio.csv"), fp,
                 {"variant", "activation", "layer_index", "dead_ratio", "clamp_saturation"});
  CsvWriter mag(path_in(config, "exp2_mag.csv"), fp, {"variant", "activation", "epoch", "mag"});
  for (const auto& run : runs) {
    const auto& last = run.result.records.back();
    for (std::size_t i = 0; i < last.dead_ratio.size(); ++i) {
      dead.cell(run.name).cell(run.config.model.activation).cell(static_cast<long long>(i));
      dead.cell(last.dead_ratio[i]).cell(last.clamp_saturation[i]).end_row();
    }
    for (const auto& r : run.result.records) {
      mag.cell(run.name).cell(run.config.model.activation).cell(static_cast<long long>(r.epoch)).cell(r.mag).end_row();
    }
    summary_line(out, run.name, run.result);
  }
  dead.close();
  mag.close();

  if (config.diagnostics.plots) {
    std::vector<PlotSeries> dead_series, mag_series;
    for (const auto& run : runs) {
      PlotSeries d{run.name, {}, {}}, m{run.name, {}, {}};
      const auto& last = run.result.records.back();
      for (std::size_t i = 0; i < last.dead_ratio.size(); ++i) {
        d.x.push_back(static_cast<double>(i));
        d.y.push_back(last.dead_ratio[i]);
      }
      for (const auto& r : run.result.records) {
        m.x.push_back(r.epoch);
        m.y.push_back(r.mag);
      }
      dead_series.push_back(std::move(d));
      mag_series.push_back(std::move(m));
    }
    write_svg_plot(path_in(config, "exp2_dead_ratio.svg"), "final-epoch dead ratio", "layer", "dead ratio",
                   dead_series);
    write_svg_plot(path_in(config, "exp2_mag.svg"), "first-layer MAG", "epoch", "MAG", mag_series, true);
  }
  return runs;
}

std::vector<ScalingRow> cmd_exp3(const ExperimentConfig& config, std::ostream& out, std::ostream* log) {
  if (config.sweep.variants.empty()) {
    out << "exp3: no variants configured under sweep.variants; nothing to do\n";
    return {};
  }
  std::vector<ScalingRow> rows;
  for (const auto& v : config.sweep.variants) {
    require_safe_name(v.name);
    const ExperimentConfig variant = apply_patch(config, v.patch);
    std::vector<std::size_t> depths = config.sweep.depths;
    if (depths.empty() || !variant.model.hidden.empty()) depths = {hidden_depth(variant.model)};
    for (std::size_t d : depths) {
      ExperimentConfig c = variant;
      if (c.model.hidden.empty()) c.model.depth = d;
      c.name = v.name + "_d" + std::to_string(d);
      c.sweep = {};
      c.output_dir = path_in(config, c.name);
      if (log) *log << "== " << c.name << " ==\n";
      const PreparedData data = prepare_data(c);
      const TrainResult r = train_model(c, data, {log});
      write_run_outputs(c, r, c.output_dir);
      summary_line(out, c.name, r);
      rows.push_back({v.name, c.model.activation, degree_of(c.model), hidden_depth(c.model), join_widths(c.model),
                      r.parameters.trainable_count(), r.best_train_loss, r.best_val_metric, r.epochs_run});
    }
  }
  fs::create_directories(config.output_dir);
  CsvWriter w(path_in(config, "exp3_scaling.csv"), config_fingerprint(config),
              {"variant", "activation", "degree", "depth", "widths", "parameters", "best_train_loss",
               "best_val_metric", "epochs_run"});
  for (const auto& r : rows) {
    w.cell(r.variant).cell(r.activation).cell(static_cast<long long>(r.degree)).cell(static_cast<long long>(r.depth));
    w.cell(r.widths).cell(static_cast<long long>(r.parameters)).cell(r.best_train_loss).cell(r.best_val_metric);
    w.cell(static_cast<long long>(r.epochs_run)).end_row();
  }
  w.close();
  return rows;
}

ApproxFit fit_full_batch(const Network& net, Parameters& params, const Dataset& data, std::size_t steps, double lr) {
  AdamWConfig cfg;
  cfg.lr = lr;
  AdamW opt(params, cfg);
  ApproxFit best{std::numeric_limits<double>::infinity(), std::numeric_limits<double>::infinity()};
  for (std::size_t s = 1; s <= steps; ++s) {
    auto fr = forward(net, params, data.features, Mode::train);
    const LossResult loss = loss_mse(fr.output, data.targets);
    if (!std::isfinite(loss.loss)) throw NumericError("non-finite loss at step " + std::to_string(s));
    double sup = 0.0;
    for (std::size_t i = 0; i < fr.output.size(); ++i) {
      sup = std::max(sup, std::abs(fr.output.values()[i] - data.targets.values()[i]));
    }
    best.best_mse = std::min(best.best_mse, loss.loss);
    best.best_sup_error = std::min(best.best_sup_error, sup);
    const Gradients g = backward(net, params, fr.cache, loss.grad);
    opt.step(params, g.tensors, 1);
  }
  return best;
}

double approx_theory_modulus(const SyntheticTarget& target, std::size_t samples, double delta) {
  SyntheticTarget dense = target;
  dense.samples = samples;
  dense.noise = 0.0;
  dense.random_x = false;
  const Dataset d = synth_regression(dense, 0);
  std::vector<double> x(d.size());
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = d.features(i, 0);
  return modulus_estimate(x, d.targets, delta);
}

namespace {

std::size_t param_count(const ModelConfig& m, std::size_t outputs) {
  return build_network(m, 1, outputs).zero_parameters().trainable_count();
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace

std::vector<ApproxRow> cmd_approx(const ExperimentConfig& config, std::ostream& out, std::ostream* log) {
  const ApproxConfig& a = config.approx;
  std::vector<ApproxRow> rows;
  for (const auto& functions : a.targets) {
    SyntheticTarget target = config.dataset.target;
    target.functions = functions;
    target.samples = a.samples;
    const Dataset data = synth_regression(target, config.dataset.split_seed);
    std::string name;
    for (const auto& f : functions) name += (name.empty() ? "" : "+") + f;

    for (int n : a.degrees) {
      for (std::size_t depth : a.depths) {
        ModelConfig bern = config.model;
        bern.activation = "bernstein";
        bern.residual = false;
        bern.hidden.clear();
        bern.depth = depth;
        bern.width = a.width;
        bern.bernstein.degree = n;
        bern.bernstein.validate();
        const double theory = approx_theory_modulus(target, a.theory_samples, std::pow(static_cast<double>(n), -static_cast<double>(depth)));

        ModelConfig relu = bern;
        relu.activation = "relu";
        relu.batch_norm = true;
        const std::size_t target_params = param_count(bern, functions.size());
        std::size_t best_w = 1, best_gap = std::numeric_limits<std::size_t>::max();
        for (std::size_t w = 1; w <= 8 * a.width; ++w) {
          relu.width = w;
          const std::size_t p = param_count(relu, functions.size());
          const std::size_t gap = p > target_params ? p - target_params : target_params - p;
          if (gap < best_gap) best_gap = gap, best_w = w;
        }
        relu.width = best_w;

        for (std::uint64_t seed : a.seeds) {
          std::vector<std::pair<std::string, const ModelConfig*>> models{{"bernstein", &bern}};
          if (a.relu_baseline) models.push_back({"relu", &relu});
          for (const auto& [model_name, model] : models) {
            const Network net = build_network(*model, 1, functions.size());
            Rng rng(seed);
            Parameters params = net.init_parameters(rng);
            const ApproxFit fit = fit_full_batch(net, params, data, a.steps, a.lr);
            ApproxRow row{name, depth, n, model_name, model->width, seed, params.trainable_count(),
                          fit.best_mse, fit.best_sup_error, model_name == "bernstein" ? theory : 0.0};
            if (log) {
              *log << name << " n=" << n << " L=" << depth << " " << model_name << " seed " << seed << ": mse "
                   << format_double(fit.best_mse) << " sup " << format_double(fit.best_sup_error) << "\n";
            }
            rows.push_back(row);
          }
        }
      }
    }
  }

  fs::create_directories(config.output_dir);
  const std::string fp = config_fingerprint(config);
  CsvWriter all(path_in(config, "approx.csv"), fp,
                {"target", "degree", "depth", "model", "width", "seed", "parameters", "best_mse", "best_sup_error",
                 "theory_modulus"});
  for (const auto& r : rows) {
    all.cell(r.target).cell(static_cast<long long>(r.degree)).cell(static_cast<long long>(r.depth)).cell(r.model);
    all.cell(static_cast<long long>(r.width)).cell(static_cast<long long>(r.seed));
    all.cell(static_cast<long long>(r.parameters)).cell(r.best_mse).cell(r.best_sup_error);
    r.model == "bernstein" ? all.cell(r.theory_modulus) : all.cell(std::string());
    all.end_row();
  }
  all.close();

  CsvWriter summary(path_in(config, "approx_summary.csv"), fp,
                    {"target", "degree", "depth", "model", "median_best_mse", "median_best_sup_error",
                     "theory_modulus"});
  for (std::size_t i = 0; i < rows.size();) {
    std::size_t j = i;
    std::vector<double> mse, sup;
    // Rows of one (target, degree, depth) group alternate between models seed by seed.
    while (j < rows.size() && rows[j].target == rows[i].target && rows[j].degree == rows[i].degree &&
           rows[j].depth == rows[i].depth) {
      ++j;
    }
    for (const std::string model : {"bernstein", "relu"}) {
      mse.clear();
      sup.clear();
      for (std::size_t k = i; k < j; ++k) {
        if (rows[k].model != model) continue;
        mse.push_back(rows[k].best_mse);
        sup.push_back(rows[k].best_sup_error);
      }
      if (mse.empty()) continue;
      summary.cell(rows[i].target).cell(static_cast<long long>(rows[i].degree));
      summary.cell(static_cast<long long>(rows[i].depth)).cell(model).cell(median(mse)).cell(median(sup));
      model == "bernstein" ? summary.cell(rows[i].theory_modulus) : summary.cell(std::string());
      summary.end_row();
      out << rows[i].target << " n=" << rows[i].degree << " L=" << rows[i].depth << " " << model
          << ": median best mse " << format_double(median(mse)) << "\n";
    }
    i = j;
  }
  summary.close();
  return rows;
}

// ---------------------------------------------------------------------------
// verify

namespace {

struct Battery {
  std::vector<CheckResult> results;
  std::ostream& out;

  void add(CheckResult r) {
    out << (r.pass ? "PASS " : "FAIL ") << r.module << "/" << r.name << "  measured " << format_double(r.measured)
        << " " << r.relation << " " << format_double(r.tolerance);
    if (!r.detail.empty()) out << "  (" << r.detail << ")";
    out << "\n";
    results.push_back(std::move(r));
  }
  void at_most(const std::string& module, const std::string& name, double measured, double tol, std::string detail = {}) {
    add({module, name, measured <= tol, measured, tol, "<=", std::move(detail)});
  }
  void at_least(const std::string& module, const std::string& name, double measured, double tol, std::string detail = {}) {
    add({module, name, measured >= tol, measured, tol, ">=", std::move(detail)});
  }
};

Parameters randomized(const Network& net, Rng& rng) {
  Parameters p = net.init_parameters(rng);
  for (auto& t : p.tensors) {
    if (t.role == ParamRole::bern_rho || t.role == ParamRole::bern_c0 || t.role == ParamRole::bias ||
        t.role == ParamRole::bn_beta) {
      for (double& v : t.value.values()) v += rng.normal(0, 0.5);
    } else if (t.role == ParamRole::bn_gamma) {
      for (double& v : t.value.values()) v = rng.uniform(0.5, 1.5);
    }
  }
  p.touch();
  return p;
}

std::vector<LayerSpec> bern_block(std::size_t in, std::size_t width, const BernsteinSpec& spec,
                                  CoefficientSharing sharing = CoefficientSharing::per_neuron) {
  return {linear_layer(in, width), batch_norm_layer(width), clamp_layer(spec.lower, spec.upper),
          bernstein_layer(width, spec, sharing)};
}

void gradient_checks(Battery& b, Rng& rng, bool inject_fault) {
  const BernsteinSpec s5{5, -3, 3, 0.01}, s7{7, -2, 2, 0.05}, s9{9, -3, 3, 0.01};
  struct Case {
    std::string name;
    Network net;
  };
  std::vector<Case> cases;
  cases.push_back({"linear", Network(3, {linear_layer(3, 4), linear_layer(4, 2)})});
  cases.push_back({"batch_norm", Network(3, {linear_layer(3, 4), batch_norm_layer(4), linear_layer(4, 2)})});
  cases.push_back({"batch_norm_plain", Network(3, {linear_layer(3, 4), batch_norm_layer(4, false), linear_layer(4, 2)})});
  cases.push_back({"clamp", Network(3, {linear_layer(3, 4), clamp_layer(-0.5, 0.5), linear_layer(4, 2)})});
  cases.push_back({"clamp_straight_through", Network(3, {linear_layer(3, 4), clamp_layer(-5, 5, true), linear_layer(4, 2)})});
  for (auto kind : {ActivationKind::relu, ActivationKind::leaky_relu, ActivationKind::selu, ActivationKind::gelu}) {
    cases.push_back({std::string(to_string(kind)),
                     Network(3, {linear_layer(3, 4), activation_layer(kind, 4, 0.05), linear_layer(4, 2)})});
  }
  {
    auto l = bern_block(3, 4, s5);
    l.push_back(linear_layer(4, 2));
    cases.push_back({"bernstein_per_neuron", Network(3, l)});
    auto m = bern_block(3, 4, s7, CoefficientSharing::per_layer);
    m.push_back(linear_layer(4, 2));
    cases.push_back({"bernstein_shared", Network(3, m)});
  }
  cases.push_back({"residual", Network(3, {linear_layer(3, 4),
                                           residual_block({linear_layer(4, 4, WeightInit::kaiming), batch_norm_layer(4),
                                                           activation_layer(ActivationKind::relu, 4)}),
                                           linear_layer(4, 2)})});
  std::size_t fault_op = 0;
  {
    auto l = bern_block(3, 5, s5);
    auto more = bern_block(5, 4, s9, CoefficientSharing::per_layer);
    fault_op = l.size();  // the second block's Linear, right after a Bernstein layer
    l.insert(l.end(), more.begin(), more.end());
    l.push_back(linear_layer(4, 4, WeightInit::kaiming));
    l.push_back(activation_layer(ActivationKind::gelu, 4));
    l.push_back(linear_layer(4, 1));
    cases.push_back({"mixed_stack", Network(3, l)});
  }

  for (const auto& c : cases) {
    GradCheckOptions opts;
    if (inject_fault && c.name == "mixed_stack") opts.backward.fault_op = fault_op;
    bool done = false;
    for (int attempt = 0; attempt < 50 && !done; ++attempt) {
      const Parameters p = randomized(c.net, rng);
      const Matrix x = rng_normal(rng, 6, c.net.input_width(), 0, 1);
      const Matrix t = rng_normal(rng, 6, c.net.output_width(), 0, 1);
      if (kink_margin(c.net, p, x) < 1e-3) continue;
      const GradCheckReport rep = gradient_check(c.net, p, x, t, opts);
      std::string detail = std::to_string(rep.checked) + " entries";
      if (!rep.pass) {
        detail += "; worst " + rep.worst + "; failing tensors:";
        for (const auto& f : rep.failing_tensors) detail += " " + f;
        detail += "; error introduced in:";
        for (const auto& o : rep.suspect_ops) detail += " " + o;
      }
      b.at_most("network", "gradient/" + c.name, rep.worst_ratio, 1.0, detail);
      done = true;
    }
    if (!done) b.add({"network", "gradient/" + c.name, false, 0, 1e-3, ">=", "no kink-free sample found"});
  }
}

void basis_checks(Battery& b, Rng& rng) {
  double unity = 0.0, positivity = 0.0, precision = 0.0;
  for (int i = 0; i < 1000; ++i) {
    const int n = 1 + static_cast<int>(rng.below(20));
    const double l = rng.uniform(-10, 10);
    const BernsteinSpec s{n, l, l + rng.uniform(0.5, 10), 0.5 / n};
    const double x = rng.uniform(s.lower, s.upper);
    const auto basis = basis_eval_all(s, x);
    double sum = 0.0;
    for (double v : basis) {
      sum += v;
      positivity = std::min(positivity, v);
    }
    unity = std::max(unity, std::abs(sum - 1.0));
    std::vector<double> c(n + 1);
    for (int k = 0; k <= n; ++k) c[k] = s.lower + k * s.width() / n;
    precision = std::max(precision, std::abs(poly_eval(c, s, x) - x));
  }
  b.at_most("bernstein", "partition_of_unity", unity, 1e-13);
  b.at_least("bernstein", "positivity", positivity, -1e-15);
  b.at_most("bernstein", "linear_precision", precision, 1e-12);
}

void floor_checks(Battery& b, Rng& rng) {
  double worst_bound = std::numeric_limits<double>::infinity();
  double worst_sample = std::numeric_limits<double>::infinity();
  for (int i = 0; i < 1000; ++i) {
    const int n = 1 + static_cast<int>(rng.below(20));
    const double l = rng.uniform(-5, 0);
    const BernsteinSpec s{n, l, l + rng.uniform(1, 10), rng.uniform(1e-4, 0.99 / n)};
    ConstrainedCoefficients cc;
    cc.c0 = rng.normal(0, 2);
    for (int k = 0; k < n; ++k) cc.rho.push_back(rng.normal(0, 4));
    const auto c = reconstruct_coefficients(cc, s.delta);
    const double floor = theoretical_lower_bound(s);
    worst_bound = std::min(worst_bound, derivative_bounds(c, s).m_lower - floor);
    for (int k = 0; k < 20; ++k) {
      worst_sample = std::min(worst_sample, poly_derivative(c, s, rng.uniform(s.lower, s.upper)) - floor);
    }
  }
  b.at_least("bernstein", "floor_vs_coefficient_bound", worst_bound, -1e-12, "min m_lower - n*delta/(u-l)");
  b.at_least("bernstein", "floor_vs_sampled_derivative", worst_sample, -1e-12, "min sigma' - n*delta/(u-l)");
  b.at_most("bernstein", "floor_n9_interval3", std::abs(theoretical_lower_bound({9, -3, 3, 0.01}) - 0.015), 1e-15);
  b.at_most("bernstein", "floor_n9_interval5", std::abs(theoretical_lower_bound({9, -5, 5, 0.01}) - 0.009), 1e-15);
}

void bound_checks(Battery& b, Rng& rng) {
  const BernsteinSpec s{9, -3, 3, 0.01};
  auto layers = bern_block(3, 8, s);
  auto more = bern_block(8, 8, s, CoefficientSharing::per_layer);
  layers.insert(layers.end(), more.begin(), more.end());
  const Network net(3, layers);
  std::size_t violations = 0;
  for (int trial = 0; trial < 50; ++trial) {
    Parameters p = net.init_parameters(rng);
    for (auto& t : p.tensors) {
      if (t.role == ParamRole::bern_rho) for (double& v : t.value.values()) v = rng.normal(0, 20);
      if (t.role == ParamRole::bern_c0) for (double& v : t.value.values()) v = rng.normal(0, 5);
    }
    for (const auto& r : check_network_bounds(net, p)) violations += r.violating_neurons.size();
  }
  b.at_most("network", "diagonal_bound", static_cast<double>(violations), 0.0, "violating neurons over 50 draws");

  // A constrained layer never reports dead neurons at the default threshold.
  Parameters p = randomized(net, rng);
  const Matrix x = rng_normal(rng, 32, 3, 0, 3);
  auto fr = forward(net, p, x, Mode::train);
  double dead = 0.0;
  for (double r : dead_neuron_ratio(net, fr.cache)) dead = std::max(dead, r);
  b.at_most("diagnostics", "constrained_layers_not_dead", dead, 0.0);
}

struct ProbeNet {
  Network net;
  Parameters params;
};

// Scalar Linear/Bernstein stack whose pre-activations span 90% of the
// interval on [−1, 1], with random monotone coefficients.
ProbeNet probe_net(int n, std::size_t depth, std::size_t width, Rng& rng) {
  const BernsteinSpec s{n, -3, 3, 0.01};
  std::vector<LayerSpec> layers;
  std::size_t in = 1;
  for (std::size_t l = 0; l < depth; ++l) {
    layers.push_back(linear_layer(in, width));
    layers.push_back(bernstein_layer(width, s));
    in = width;
  }
  layers.push_back(linear_layer(in, 1));
  ProbeNet pn{Network(1, layers, {.allow_unguarded_bernstein = true}), {}};
  pn.params = pn.net.zero_parameters();
  for (auto& t : pn.params.tensors) {
    if (t.role == ParamRole::weight || t.role == ParamRole::bias) for (double& v : t.value.values()) v = rng.normal(0, 1);
    if (t.role == ParamRole::bern_rho) for (double& v : t.value.values()) v = rng.normal(0, 1.5);
  }
  Matrix grid(1001, 1);
  for (std::size_t i = 0; i < grid.rows(); ++i) grid(i, 0) = -1.0 + 2.0 * static_cast<double>(i) / 1000.0;
  Matrix h = grid;
  const double lo = s.lower + 0.05 * s.width(), hi = s.upper - 0.05 * s.width();
  for (std::size_t l = 0; l < depth; ++l) {
    const std::size_t op = 2 * l;
    Matrix& w = pn.params.tensors[pn.net.ops()[op].first_param].value;
    Matrix& bias = pn.params.tensors[pn.net.ops()[op].first_param + 1].value;
    Matrix z = add_row_vector(matmul(h, w), bias.values());
    for (std::size_t j = 0; j < width; ++j) {
      double zmin = std::numeric_limits<double>::infinity(), zmax = -zmin;
      for (std::size_t i = 0; i < z.rows(); ++i) zmin = std::min(zmin, z(i, j)), zmax = std::max(zmax, z(i, j));
      const double a = (hi - lo) / (zmax - zmin), c = lo - a * zmin;
      for (std::size_t k = 0; k < w.rows(); ++k) w(k, j) *= a;
      bias(0, j) = bias(0, j) * a + c;
    }
    z = add_row_vector(matmul(h, w), bias.values());
    const auto coeffs = bernstein_coefficients(pn.net, pn.params, l);
    Matrix next(z.rows(), width);
    for (std::size_t i = 0; i < z.rows(); ++i) {
      for (std::size_t j = 0; j < width; ++j) next(i, j) = poly_eval(coeffs[j], s, std::clamp(z(i, j), s.lower, s.upper));
    }
    h = std::move(next);
  }
  pn.params.touch();
  return pn;
}

// The residual of the best degree-(n^L − 1) fit is proportional to the
// leading coefficient, which is small for monotone compositions; it is
// compared with the output range and with the exact-degree residual.
void degree_checks(Battery& b, Rng& rng) {
  for (const auto& [n, exact] : {std::pair{2, 4}, std::pair{3, 9}}) {
    const ProbeNet pn = probe_net(n, 2, 3, rng);
    Matrix grid(1001, 1);
    for (std::size_t i = 0; i < grid.rows(); ++i) grid(i, 0) = -1.0 + 2.0 * static_cast<double>(i) / 1000.0;
    const Matrix y = predict(pn.net, pn.params, grid);
    const auto [lo, hi] = std::minmax_element(y.values().begin(), y.values().end());
    const double range = *hi - *lo;
    const double fit = effective_degree_probe(pn.net, pn.params, exact, 200, -1, 1);
    const double miss = effective_degree_probe(pn.net, pn.params, exact - 1, 200, -1, 1);
    const std::string tag = "degree_probe_n" + std::to_string(n) + "_L2";
    b.at_most("network", tag + "/fits_degree_" + std::to_string(exact), fit / range, 1e-8,
              "residual / output range");
    b.at_least("network", tag + "/misses_degree_" + std::to_string(exact - 1), miss / range, 1e-10,
               "residual / output range; absolute " + format_double(miss));
    b.at_least("network", tag + "/degree_gap", miss / std::max(fit, 1e-300), 1e4,
               "degree-" + std::to_string(exact - 1) + " over degree-" + std::to_string(exact) + " residual");
  }
}

}  // namespace

std::vector<CheckResult> cmd_verify(const VerifyOptions& options, std::ostream& out) {
  Battery b{{}, out};
  Rng rng(options.seed);
  if (options.inject_fault) out << "fault injection on: one backward formula is perturbed by 1%\n";
  gradient_checks(b, rng, options.inject_fault);
  basis_checks(b, rng);
  floor_checks(b, rng);
  bound_checks(b, rng);
  degree_checks(b, rng);
  const auto failed = std::count_if(b.results.begin(), b.results.end(), [](const auto& r) { return !r.pass; });
  out << b.results.size() - failed << "/" << b.results.size() << " checks passed\n";
  return b.results;
}

}  // namespace bernnet
