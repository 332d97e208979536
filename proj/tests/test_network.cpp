#include <cmath>
#include <cstdio>
#include <filesystem>

#include "bernnet/error.hpp"
#include "bernnet/loss.hpp"
#include "bernnet/network.hpp"
#include "doctest.h"
#include "support.hpp"

using namespace bernnet;

namespace {

const BernsteinSpec kSpec{5, -3, 3, 0.01};

std::vector<LayerSpec> bern_block(std::size_t in, std::size_t width, const BernsteinSpec& spec,
                                  CoefficientSharing sharing = CoefficientSharing::per_neuron) {
  return {linear_layer(in, width), batch_norm_layer(width), clamp_layer(spec.lower, spec.upper),
          bernstein_layer(width, spec, sharing)};
}

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

void check_gradients(const Network& net, std::uint64_t seed, std::size_t batch = 6) {
  Rng rng(seed);
  for (int attempt = 0; attempt < 50; ++attempt) {
    const Parameters p = randomized(net, rng);
    const Matrix x = rng_normal(rng, batch, net.input_width(), 0, 1);
    const Matrix target = rng_normal(rng, batch, net.output_width(), 0, 1);
    if (testsupport::kink_distance(net, p, x) < 1e-3) continue;
    const auto rep = testsupport::finite_difference_check(net, p, x, target);
    INFO(rep.worst);
    CHECK(rep.pass);
    CHECK(rep.checked > 0);
    return;
  }
  FAIL("no kink-free sample found");
}

}  // namespace

TEST_CASE("compile validates widths and Bernstein guards") {
  CHECK_THROWS_AS(Network(3, {linear_layer(4, 2)}), DimensionError);
  CHECK_THROWS_AS(Network(3, {linear_layer(3, 2), bernstein_layer(2, kSpec)}), ConfigError);
  CHECK_THROWS_AS(Network(3, {linear_layer(3, 2), batch_norm_layer(2), bernstein_layer(2, kSpec)}), ConfigError);
  CHECK_THROWS_AS(Network(3, {linear_layer(3, 2), batch_norm_layer(2), clamp_layer(-4, 3), bernstein_layer(2, kSpec)}),
                  ConfigError);
  CHECK_NOTHROW(Network(3, bern_block(3, 2, kSpec)));
  CHECK_NOTHROW(Network(3, {linear_layer(3, 2), bernstein_layer(2, kSpec)}, {.allow_unguarded_bernstein = true}));
  CHECK_THROWS_AS(Network(3, {residual_block({linear_layer(3, 4)})}), DimensionError);
  CHECK_THROWS_AS(Network(2, {activation_layer(ActivationKind::relu, 3)}), DimensionError);
}

TEST_CASE("parameter layout") {
  const Network net(3, bern_block(3, 4, kSpec));
  const Parameters p = net.zero_parameters();
  REQUIRE(p.tensors.size() == 8);
  CHECK(p.tensors[0].role == ParamRole::weight);
  CHECK(p.tensors[0].value.rows() == 3);
  CHECK(p.tensors[0].value.cols() == 4);
  CHECK(p.tensors[7].role == ParamRole::bern_rho);
  CHECK(p.tensors[7].value.rows() == 4);
  CHECK(p.tensors[7].value.cols() == 5);
  CHECK(p.trainable_count() == 12 + 4 + 4 + 4 + 4 + 20);
  const Network shared(3, bern_block(3, 4, kSpec, CoefficientSharing::per_layer));
  CHECK(shared.zero_parameters().tensors[7].value.rows() == 1);
}

TEST_CASE("init scales") {
  Rng rng(1);
  const Network net(400, {linear_layer(400, 300, WeightInit::kaiming), linear_layer(300, 200, WeightInit::lecun)});
  const Parameters p = net.init_parameters(rng);
  auto variance = [](const Matrix& m) {
    double s = 0.0;
    for (double v : m.values()) s += v * v;
    return s / static_cast<double>(m.size());
  };
  CHECK(variance(p.tensors[0].value) == doctest::Approx(2.0 / 400).epsilon(0.02));
  CHECK(variance(p.tensors[2].value) == doctest::Approx(1.0 / 300).epsilon(0.02));
  for (double b : p.tensors[1].value.values()) CHECK(b == 0.0);
}

TEST_CASE("zero-depth net is the identity") {
  const Network net(3, {});
  Parameters p = net.zero_parameters();
  const Matrix x = Matrix::from_rows({{1, 2, 3}, {-1, 0, 5}});
  CHECK(forward(net, p, x, Mode::train).output == x);
  CHECK(predict(net, p, x) == x);
}

TEST_CASE("raw identity Bernstein layer leaves the linear map unchanged") {
  const Network net(2, {linear_layer(2, 3), bernstein_layer(3, kSpec, CoefficientSharing::per_neuron, InitMode::raw_identity)},
                    {.allow_unguarded_bernstein = true});
  Rng rng(3);
  Parameters p = net.init_parameters(rng);
  const Matrix x = rng_uniform(rng, 10, 2, -1, 1);
  const Matrix y = forward(net, p, x, Mode::train).output;
  const Matrix lin = add_row_vector(matmul(x, p.tensors[0].value), p.tensors[1].value.row(0));
  for (std::size_t i = 0; i < y.size(); ++i) CHECK(std::abs(y.values()[i] - lin.values()[i]) < 1e-10);
}

TEST_CASE("unguarded Bernstein input outside the interval is reported") {
  const Network net(1, {bernstein_layer(1, kSpec)}, {.allow_unguarded_bernstein = true});
  Rng rng(1);
  Parameters p = net.init_parameters(rng);
  CHECK_THROWS_AS(predict(net, p, Matrix::from_rows({{3.5}})), DomainError);
}

TEST_CASE("identical rows give identical outputs") {
  std::vector<LayerSpec> layers = bern_block(4, 5, kSpec);
  layers.push_back(linear_layer(5, 3, WeightInit::kaiming));
  layers.push_back(activation_layer(ActivationKind::gelu, 3));
  layers.push_back(linear_layer(3, 2));
  const Network net(4, layers);
  Rng rng(4);
  Parameters p = randomized(net, rng);
  Matrix x(6, 4);
  for (std::size_t i = 0; i < 6; ++i)
    for (std::size_t j = 0; j < 4; ++j) x(i, j) = 0.3 * static_cast<double>(j) - 0.2;
  const Matrix y = forward(net, p, x, Mode::train).output;
  for (std::size_t i = 1; i < 6; ++i)
    for (std::size_t j = 0; j < 2; ++j) CHECK(y(i, j) == y(0, j));
}

TEST_CASE("forward is deterministic") {
  const Network net(3, bern_block(3, 4, kSpec));
  Rng rng(5);
  Parameters p = randomized(net, rng);
  const Matrix x = rng_normal(rng, 8, 3, 0, 1);
  Parameters a = p, b = p;
  CHECK(forward(net, a, x, Mode::train).output == forward(net, b, x, Mode::train).output);
  for (std::size_t i = 0; i < a.tensors.size(); ++i) CHECK(a.tensors[i].value == b.tensors[i].value);
  CHECK(predict(net, p, x) == predict(net, p, x));
}

TEST_CASE("batch norm train-mode statistics") {
  BatchNormSpec bn;
  bn.features = 3;
  bn.affine = false;
  const Network net(3, {LayerSpec{bn}});
  Parameters p = net.zero_parameters();
  Rng rng(6);
  Matrix x = rng_normal(rng, 16, 3, 5, 1000);
  const Matrix y = forward(net, p, x, Mode::train).output;
  for (std::size_t j = 0; j < 3; ++j) {
    double m = 0, v = 0;
    for (std::size_t i = 0; i < 16; ++i) m += y(i, j);
    m /= 16;
    for (std::size_t i = 0; i < 16; ++i) v += (y(i, j) - m) * (y(i, j) - m);
    v /= 16;
    CHECK(std::abs(m) < 1e-10);
    CHECK(std::abs(v - 1.0) < 1e-8);
  }
}

TEST_CASE("batch norm running statistics and eval mode") {
  const Network net(1, {batch_norm_layer(1, false)});
  Parameters p = net.zero_parameters();
  p.tensors[1].value(0, 0) = 1.0;
  const Matrix x = Matrix::from_rows({{1}, {3}});
  forward(net, p, x, Mode::train);
  CHECK(p.tensors[0].value(0, 0) == doctest::Approx(0.1 * 2.0));
  CHECK(p.tensors[1].value(0, 0) == doctest::Approx(0.9 + 0.1 * 2.0));  // unbiased batch variance 2
  const double expected = (3.0 - 0.2) / std::sqrt(1.1 + 1e-5);
  CHECK(predict(net, p, Matrix::from_rows({{3}}))(0, 0) == doctest::Approx(expected).epsilon(1e-14));
  const Parameters before = p;
  forward(net, p, x, Mode::eval);
  CHECK(p.tensors[0].value == before.tensors[0].value);
}

TEST_CASE("gradient check per layer kind") {
  SUBCASE("linear") { check_gradients(Network(3, {linear_layer(3, 4), linear_layer(4, 2)}), 10); }
  SUBCASE("batch norm affine") {
    check_gradients(Network(3, {linear_layer(3, 4), batch_norm_layer(4), linear_layer(4, 2)}), 11);
  }
  SUBCASE("batch norm plain") {
    check_gradients(Network(3, {linear_layer(3, 4), batch_norm_layer(4, false), linear_layer(4, 2)}), 12);
  }
  SUBCASE("clamp") {
    check_gradients(Network(3, {linear_layer(3, 4), clamp_layer(-0.5, 0.5), linear_layer(4, 2)}), 13);
  }
  SUBCASE("clamp straight-through") {
    check_gradients(Network(3, {linear_layer(3, 4), clamp_layer(-5, 5, true), linear_layer(4, 2)}), 14);
  }
  for (auto kind : {ActivationKind::relu, ActivationKind::leaky_relu, ActivationKind::selu, ActivationKind::gelu}) {
    SUBCASE(std::string(to_string(kind)).c_str()) {
      check_gradients(Network(3, {linear_layer(3, 4), activation_layer(kind, 4, 0.05), linear_layer(4, 2)}), 15);
    }
  }
  SUBCASE("bernstein per neuron") {
    auto layers = bern_block(3, 4, kSpec);
    layers.push_back(linear_layer(4, 2));
    check_gradients(Network(3, layers), 16);
  }
  SUBCASE("bernstein shared") {
    auto layers = bern_block(3, 4, BernsteinSpec{7, -2, 2, 0.05}, CoefficientSharing::per_layer);
    layers.push_back(linear_layer(4, 2));
    check_gradients(Network(3, layers), 17);
  }
  SUBCASE("residual") {
    check_gradients(Network(3, {linear_layer(3, 4),
                                residual_block({linear_layer(4, 4, WeightInit::kaiming), batch_norm_layer(4),
                                                activation_layer(ActivationKind::relu, 4)}),
                                linear_layer(4, 2)}),
                    18);
  }
}

TEST_CASE("gradient check on deeper mixed stacks") {
  std::vector<LayerSpec> layers = bern_block(3, 5, kSpec);
  auto more = bern_block(5, 4, BernsteinSpec{9, -3, 3, 0.01}, CoefficientSharing::per_layer);
  layers.insert(layers.end(), more.begin(), more.end());
  layers.push_back(linear_layer(4, 4, WeightInit::kaiming));
  layers.push_back(activation_layer(ActivationKind::gelu, 4));
  layers.push_back(linear_layer(4, 1));
  check_gradients(Network(3, layers), 19, 8);
}

TEST_CASE("zero loss gradient gives zero gradients") {
  auto layers = bern_block(3, 4, kSpec);
  layers.push_back(linear_layer(4, 2));
  const Network net(3, layers);
  Rng rng(20);
  Parameters p = randomized(net, rng);
  auto fr = forward(net, p, rng_normal(rng, 5, 3, 0, 1), Mode::train);
  const Gradients g = backward(net, p, fr.cache, Matrix(5, 2));
  for (const auto& t : g.tensors)
    for (double v : t.values()) CHECK(v == 0.0);
  for (double v : g.input.values()) CHECK(v == 0.0);
}

TEST_CASE("saturated clamp blocks the gradient") {
  const Network net(1, {clamp_layer(-1, 1), linear_layer(1, 1)});
  Parameters p = net.zero_parameters();
  p.tensors[0].value(0, 0) = 2.0;
  p.touch();
  auto fr = forward(net, p, Matrix::from_rows({{5}, {0.5}}), Mode::train);
  const Gradients g = backward(net, p, fr.cache, Matrix::from_rows({{1}, {1}}));
  CHECK(g.input(0, 0) == 0.0);
  CHECK(g.input(1, 0) == 2.0);
  const Network st(1, {clamp_layer(-1, 1, true), linear_layer(1, 1)});
  auto fr2 = forward(st, p, Matrix::from_rows({{5}, {0.5}}), Mode::train);
  CHECK(backward(st, p, fr2.cache, Matrix::from_rows({{1}, {1}})).input(0, 0) == 2.0);
}

TEST_CASE("stale or eval caches are rejected") {
  const Network net(2, {linear_layer(2, 1)});
  Rng rng(21);
  Parameters p = net.init_parameters(rng);
  auto fr = forward(net, p, Matrix(3, 2), Mode::train);
  p.touch();
  CHECK_THROWS_AS(backward(net, p, fr.cache, Matrix(3, 1)), StaleCacheError);
  auto ev = forward(net, p, Matrix(3, 2), Mode::eval);
  CHECK_THROWS_AS(backward(net, p, ev.cache, Matrix(3, 1)), StaleCacheError);
  auto ok = forward(net, p, Matrix(3, 2), Mode::train);
  CHECK_THROWS_AS(backward(net, p, ok.cache, Matrix(2, 1)), DimensionError);
}

TEST_CASE("capture and fault options") {
  auto layers = bern_block(3, 4, kSpec);
  layers.push_back(linear_layer(4, 2));
  const Network net(3, layers);
  Rng rng(22);
  Parameters p = randomized(net, rng);
  const Matrix x = rng_normal(rng, 6, 3, 0, 1);
  const Matrix target = rng_normal(rng, 6, 2, 0, 1);
  auto fr = forward(net, p, x, Mode::train);
  const auto loss = loss_mse(fr.output, target);
  BackwardOptions opts;
  opts.capture_output_of_op = net.activation_op(0);
  const Gradients g = backward(net, p, fr.cache, loss.grad, opts);
  REQUIRE(g.captured.has_value());
  CHECK(*g.captured == matmul_nt(loss.grad, p.tensors[8].value));

  BackwardOptions fault;
  fault.fault_op = net.activation_op(0);
  const auto rep = testsupport::finite_difference_check(net, p, x, target, 1e-5, 1e-7, 1e-5, fault);
  CHECK_FALSE(rep.pass);
}

TEST_CASE("network bound check holds for any latent parameters") {
  auto layers = bern_block(3, 6, kSpec);
  const Network net(3, layers);
  Rng rng(23);
  Parameters p = net.init_parameters(rng);
  for (double& v : p.tensors.back().value.values()) v = rng.normal(0, 20);
  const auto reports = check_network_bounds(net, p);
  REQUIRE(reports.size() == 1);
  CHECK(reports[0].holds);
  CHECK(bernstein_coefficients(net, p, 0).size() == 6);
}

TEST_CASE("degree probe") {
  const BernsteinSpec s{2, -3, 3, 0.01};
  const Network net(1, {linear_layer(1, 1), bernstein_layer(1, s), linear_layer(1, 1)}, {.allow_unguarded_bernstein = true});
  Parameters p = net.zero_parameters();
  p.tensors[0].value(0, 0) = 2.5;
  p.tensors[2].value(0, 0) = 0.3;
  p.tensors[3].value(0, 0) = 0.2;
  p.tensors[3].value(0, 1) = 1.5;
  p.tensors[4].value(0, 0) = 1.0;
  p.touch();
  CHECK(effective_degree_probe(net, p, 2, 40, -1, 1) < 1e-10);
  CHECK(effective_degree_probe(net, p, 1, 40, -1, 1) > 1e-3);

  const Network id(1, {linear_layer(1, 1), bernstein_layer(1, s, CoefficientSharing::per_neuron, InitMode::raw_identity),
                       linear_layer(1, 1)},
                   {.allow_unguarded_bernstein = true});
  Rng rng(24);
  Parameters q = id.init_parameters(rng);
  q.tensors[0].value(0, 0) = 1.7;
  q.touch();
  CHECK(effective_degree_probe(id, q, 1, 40, -1, 1) < 1e-10);

  const Network guarded(1, bern_block(1, 1, s));
  CHECK_THROWS_AS(effective_degree_probe(guarded, guarded.zero_parameters(), 2, 10, -1, 1), ConfigError);
}

TEST_CASE("checkpoint round trip is bitwise") {
  std::vector<LayerSpec> layers = bern_block(3, 4, kSpec, CoefficientSharing::per_layer);
  layers.push_back(residual_block({linear_layer(4, 4, WeightInit::kaiming), batch_norm_layer(4),
                                   activation_layer(ActivationKind::leaky_relu, 4, 0.05)}));
  layers.push_back(clamp_layer(-2, 2, true));
  layers.push_back(linear_layer(4, 2));
  const Network net(3, layers);
  Rng rng(25);
  Parameters p = randomized(net, rng);
  for (auto& t : p.tensors)
    for (double& v : t.value.values()) v = v * (1 + 1e-13) + 1e-300;
  const auto path = (std::filesystem::temp_directory_path() / "bernnet_ckpt_test.txt").string();
  write_checkpoint(path, net, p);
  const Checkpoint ck = read_checkpoint(path);
  REQUIRE(ck.parameters.tensors.size() == p.tensors.size());
  for (std::size_t i = 0; i < p.tensors.size(); ++i) {
    CHECK(ck.parameters.tensors[i].name == p.tensors[i].name);
    CHECK(ck.parameters.tensors[i].value == p.tensors[i].value);
  }
  const Matrix x = rng_normal(rng, 4, 3, 0, 1);
  CHECK(predict(ck.network, ck.parameters, x) == predict(net, p, x));
  {
    std::FILE* f = std::fopen(path.c_str(), "w");
    std::fputs("bernnet-checkpoint 99\n", f);
    std::fclose(f);
  }
  CHECK_THROWS_AS(read_checkpoint(path), ParseError);
  std::filesystem::remove(path);
}
