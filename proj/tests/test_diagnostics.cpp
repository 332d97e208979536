#include <cmath>
#include <filesystem>

#include "bernnet/diagnostics.hpp"
#include "bernnet/error.hpp"
#include "bernnet/loss.hpp"
#include "doctest.h"

using namespace bernnet;

namespace {

// O(P·N) pair counting; ties count one half.
double auc_by_pairs(const std::vector<double>& s, const std::vector<std::size_t>& y) {
  double wins = 0, pairs = 0;
  for (std::size_t i = 0; i < s.size(); ++i)
    for (std::size_t j = 0; j < s.size(); ++j)
      if (y[i] == 1 && y[j] == 0) {
        pairs += 1;
        wins += s[i] > s[j] ? 1.0 : (s[i] == s[j] ? 0.5 : 0.0);
      }
  return wins / pairs;
}

Network bern_net(std::size_t width, const BernsteinSpec& spec) {
  return Network(2, {linear_layer(2, width), batch_norm_layer(width), clamp_layer(spec.lower, spec.upper),
                     bernstein_layer(width, spec)});
}

}  // namespace

TEST_CASE("AUC") {
  CHECK(compute_auc(std::vector<double>{0.1, 0.4, 0.35, 0.8}, std::vector<std::size_t>{0, 0, 1, 1}) == 0.75);
  CHECK(compute_auc(std::vector<double>{0.1, 0.2, 0.3}, std::vector<std::size_t>{0, 1, 1}) == 1.0);
  CHECK_THROWS_AS(compute_auc(std::vector<double>{0.1, 0.2}, std::vector<std::size_t>{1, 1}), DomainError);
  Rng rng(1);
  std::vector<double> s;
  std::vector<std::size_t> y;
  for (int i = 0; i < 300; ++i) {
    s.push_back(std::round(rng.uniform() * 20) / 20);  // forces ties
    y.push_back(rng.below(2));
  }
  const double auc = compute_auc(s, y);
  CHECK(auc == doctest::Approx(auc_by_pairs(s, y)).epsilon(1e-14));
  std::vector<double> t;
  for (double v : s) t.push_back(std::exp(3 * v) - 7);
  CHECK(compute_auc(t, y) == auc);

  std::vector<double> big;
  std::vector<std::size_t> lab;
  for (int i = 0; i < 20000; ++i) {
    big.push_back(rng.uniform());
    lab.push_back(rng.below(2));
  }
  CHECK(std::abs(compute_auc(big, lab) - 0.5) < 0.02);
}

TEST_CASE("accuracy") {
  const Matrix logits = Matrix::from_rows({{0.1, 2, -1}, {3, 0, 0}, {0, 0, 1}});
  CHECK(compute_accuracy(logits, std::vector<std::size_t>{1, 0, 0}) == doctest::Approx(2.0 / 3));
  CHECK(compute_accuracy(Matrix::from_rows({{0.5}, {-0.1}, {0.0}}), std::vector<std::size_t>{1, 0, 1}) ==
        doctest::Approx(2.0 / 3));
}

TEST_CASE("Bernstein paper init has constant derivative 1/6") {
  const BernsteinSpec spec{9, -3, 3, 0.01};
  const Network net = bern_net(4, spec);
  Rng rng(2);
  Parameters p = net.init_parameters(rng);
  const auto fr = forward(net, p, rng_normal(rng, 16, 2, 0, 1), Mode::train);
  const Matrix d = activation_derivatives(net, fr.cache, 0);
  for (double v : d.values()) CHECK(v == doctest::Approx(1.0 / 6.0).epsilon(1e-12));
  CHECK(min_abs_derivative(net, fr.cache)[0] == doctest::Approx(1.0 / 6.0).epsilon(1e-12));
  CHECK(dead_neuron_ratio(net, fr.cache)[0] == 0.0);
}

TEST_CASE("ReLU statistics") {
  const Network net(1, {linear_layer(1, 2), activation_layer(ActivationKind::relu, 2)});
  Parameters p = net.zero_parameters();
  p.tensors[0].value(0, 0) = 1.0;
  p.tensors[0].value(0, 1) = -1.0;
  p.tensors[1].value(0, 1) = -10.0;  // second unit never fires
  const auto fr = forward(net, p, Matrix::from_rows({{-1}, {2}, {3}}), Mode::train);
  CHECK(min_abs_derivative(net, fr.cache)[0] == 0.0);
  CHECK(dead_neuron_ratio(net, fr.cache)[0] == 0.5);
  CHECK(clamp_saturation(net, fr.cache)[0] == 0.0);
}

TEST_CASE("flat Bernstein neuron counts as dead and the ratio is monotone in the threshold") {
  const BernsteinSpec spec{9, -3, 3, 0.01};
  const Network net = bern_net(10, spec);
  Rng rng(3);
  Parameters p = net.init_parameters(rng);
  for (double& v : p.tensors.back().value.values()) v = rng.normal(0, 2);
  p.touch();
  auto fr = forward(net, p, rng_normal(rng, 32, 2, 0, 1), Mode::train);
  // Flatten neuron 3's cached coefficients to mimic an unconstrained constant activation.
  Matrix& c = fr.cache.ops[3].coefficients;
  for (std::size_t k = 0; k < c.cols(); ++k) c(3, k) = 0.25;
  CHECK(dead_neuron_ratio(net, fr.cache)[0] == doctest::Approx(0.1));
  double prev = 0.0;
  for (double th : {1e-9, 1e-7, 1e-3, 0.05, 0.2, 1.0, 10.0}) {
    const double r = dead_neuron_ratio(net, fr.cache, {th})[0];
    CHECK(r >= prev);
    CHECK(r <= 1.0);
    prev = r;
  }
}

TEST_CASE("constrained Bernstein layers never report dead neurons") {
  Rng rng(4);
  for (int trial = 0; trial < 40; ++trial) {
    BernsteinSpec spec;
    spec.degree = 2 + static_cast<int>(rng.below(14));
    spec.lower = -rng.uniform(1, 6);
    spec.upper = rng.uniform(1, 6);
    spec.delta = rng.uniform(0.001, 0.9) / spec.degree;
    const Network net = bern_net(8, spec);
    Parameters p = net.init_parameters(rng);
    for (auto& t : p.tensors)
      for (double& v : t.value.values()) v += rng.normal(0, 3);
    p.touch();
    const auto fr = forward(net, p, rng_normal(rng, 64, 2, 0, 4), Mode::train);
    const auto stats = layer_batch_stats(net, fr.cache);
    CHECK(stats[0].dead_ratio == 0.0);
    CHECK(stats[0].min_abs_derivative >= theoretical_lower_bound(spec) - 1e-12);
    CHECK(stats[0].clamp_saturation >= 0.0);
  }
}

TEST_CASE("min derivative over a subset is no smaller") {
  const Network net(1, {linear_layer(1, 3), activation_layer(ActivationKind::gelu, 3)});
  Rng rng(5);
  Parameters p = net.init_parameters(rng);
  const Matrix x = rng_normal(rng, 20, 1, 0, 2);
  const double full = min_abs_derivative(net, forward(net, p, x, Mode::train).cache)[0];
  std::vector<std::size_t> rows{1, 4, 7};
  const double part = min_abs_derivative(net, forward(net, p, gather_rows(x, rows), Mode::train).cache)[0];
  CHECK(part >= full);
}

TEST_CASE("MAG by hand") {
  // Two hidden units behind a slope-1 leaky ReLU (an identity), MSE with known residuals.
  const Network net(1, {linear_layer(1, 2), activation_layer(ActivationKind::leaky_relu, 2, 1.0), linear_layer(2, 1)});
  Parameters p = net.zero_parameters();
  p.tensors[0].value(0, 0) = 1.0;
  p.tensors[0].value(0, 1) = 2.0;
  p.tensors[2].value(0, 0) = 3.0;
  p.tensors[2].value(1, 0) = -1.0;
  p.touch();
  const Matrix x = Matrix::from_rows({{1}, {2}});
  auto fr = forward(net, p, x, Mode::train);  // y = 3x - 2x = x
  const auto loss = loss_mse(fr.output, Matrix::from_rows({{0}, {4}}));  // residuals 1, -2
  BackwardOptions opts;
  opts.capture_output_of_op = net.activation_op(0);
  const Gradients g = backward(net, p, fr.cache, loss.grad, opts);
  // dL/dy_i = residual_i (2/N = 1); dL/da = dL/dy · [3, -1]
  MagAccumulator mag;
  mag.add(*g.captured);
  CHECK(mag.value() == doctest::Approx((3 + 1 + 6 + 2) / 4.0).epsilon(1e-15));
  MagAccumulator twice;
  twice.add(*g.captured);
  twice.add(*g.captured);
  CHECK(twice.value() == mag.value());
  MagAccumulator zero;
  zero.add(Matrix(3, 2));
  CHECK(zero.value() == 0.0);
}

TEST_CASE("CSV exports") {
  std::vector<DiagnosticsRecord> records(2);
  for (int e = 0; e < 2; ++e) {
    records[e].epoch = e;
    records[e].dead_ratio = {0.1 * e, 1.0 / 3.0, 0.0};
    records[e].min_abs_derivative = {0.015000000000000001, 1e-300, 0.1 + 0.2};
    records[e].clamp_saturation = {0, 0, 0};
    records[e].lr = 2e-3;
  }
  const auto path = (std::filesystem::temp_directory_path() / "bernnet_heatmap.csv").string();
  export_heatmap_csv(records, path, "00ff");
  const CsvTable t = read_csv(path);
  CHECK(t.comments.size() == 1);
  CHECK(t.comments[0] == " config-fingerprint: 00ff");
  CHECK(t.header == std::vector<std::string>{"epoch", "layer_index", "dead_ratio", "min_abs_derivative"});
  REQUIRE(t.rows.size() == 6);
  CHECK(t.number(1, "dead_ratio") == 1.0 / 3.0);
  CHECK(t.number(2, "min_abs_derivative") == 0.1 + 0.2);
  CHECK(t.number(4, "min_abs_derivative") == 1e-300);
  CHECK(t.number(3, "dead_ratio") == 0.1);

  export_metrics_csv(records, path, "00ff");
  CHECK(read_csv(path).rows.size() == 2);
  export_depth_profile_csv(records[1], {0.015, 0, 0}, path, "00ff");
  CHECK(read_csv(path).number(0, "theoretical_floor") == 0.015);
  CHECK_THROWS(export_heatmap_csv({}, path, "00ff"));
  std::filesystem::remove(path);
}

TEST_CASE("SVG plot is written") {
  const auto path = (std::filesystem::temp_directory_path() / "bernnet_plot.svg").string();
  write_svg_plot(path, "min |d|", "epoch", "value", {{"a", {0, 1, 2}, {1, 0.1, 0.01}}, {"b", {0, 1}, {0, 0}}}, true);
  CHECK(std::filesystem::file_size(path) > 200);
  std::filesystem::remove(path);
}
