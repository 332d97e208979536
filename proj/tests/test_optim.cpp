#include <cmath>

#include "bernnet/error.hpp"
#include "bernnet/optim.hpp"
#include "doctest.h"

using namespace bernnet;

namespace {

Network scalar_net() { return Network(1, {linear_layer(1, 1)}); }

Parameters scalar_params(double w, double b = 0.0) {
  Parameters p = scalar_net().zero_parameters();
  p.tensors[0].value(0, 0) = w;
  p.tensors[1].value(0, 0) = b;
  return p;
}

std::vector<Matrix> scalar_grads(double gw, double gb = 0.0) {
  return {Matrix(1, 1, gw), Matrix(1, 1, gb)};
}

// Textbook Adam on one scalar.
struct RefAdam {
  double lr, b1 = 0.9, b2 = 0.999, eps = 1e-8, m = 0, v = 0;
  int t = 0;
  double step(double p, double g) {
    ++t;
    m = b1 * m + (1 - b1) * g;
    v = b2 * v + (1 - b2) * g * g;
    const double mh = m / (1 - std::pow(b1, t));
    const double vh = v / (1 - std::pow(b2, t));
    return p - lr * mh / (std::sqrt(vh) + eps);
  }
};

}  // namespace

TEST_CASE("zero gradients without decay leave parameters unchanged") {
  Parameters p = scalar_params(0.7, -0.2);
  AdamW opt(p, {.lr = 0.01});
  for (int i = 0; i < 5; ++i) opt.step(p, scalar_grads(0, 0), 1);
  CHECK(p.tensors[0].value(0, 0) == 0.7);
  CHECK(p.tensors[1].value(0, 0) == -0.2);
  CHECK(opt.step_count() == 5);
}

TEST_CASE("first step moves by lr times sign of the gradient") {
  Parameters p = scalar_params(1.0);
  AdamW opt(p, {.lr = 0.01});
  opt.step(p, scalar_grads(0.3), 1);
  CHECK(p.tensors[0].value(0, 0) == doctest::Approx(1.0 - 0.01 * 0.3 / (0.3 + 1e-8)).epsilon(1e-15));
  Parameters q = scalar_params(1.0);
  AdamW opt2(q, {.lr = 0.01});
  opt2.step(q, scalar_grads(-2.0), 1);
  CHECK(q.tensors[0].value(0, 0) == doctest::Approx(1.01).epsilon(1e-9));
}

TEST_CASE("AdamW without decay equals reference Adam") {
  Parameters p = scalar_params(0.5);
  AdamW opt(p, {.lr = 0.003, .weight_decay = 0.0});
  RefAdam ref{0.003};
  double r = 0.5;
  for (int i = 0; i < 200; ++i) {
    const double g = std::sin(0.37 * i) + 0.1 * p.tensors[0].value(0, 0);
    r = ref.step(r, std::sin(0.37 * i) + 0.1 * r);
    opt.step(p, scalar_grads(g), 1);
    CHECK(std::abs(p.tensors[0].value(0, 0) - r) <= 1e-12);
  }
}

TEST_CASE("decoupled decay is gated by the start epoch and the role") {
  const double lr = 0.01, wd = 0.1;
  Parameters p = scalar_params(2.0, 3.0);
  AdamW opt(p, {.lr = lr, .weight_decay = wd, .decay_start_epoch = 5});
  opt.step(p, scalar_grads(0, 0), 4);
  CHECK(p.tensors[0].value(0, 0) == 2.0);
  opt.step(p, scalar_grads(0, 0), 5);
  CHECK(p.tensors[0].value(0, 0) == doctest::Approx(2.0 - lr * wd * 2.0).epsilon(1e-15));
  CHECK(p.tensors[1].value(0, 0) == 3.0);

  AdamW plain(p, {.lr = lr, .weight_decay = wd});
  CHECK(plain.decays(ParamRole::weight));
  CHECK_FALSE(plain.decays(ParamRole::bias));
  CHECK_FALSE(plain.decays(ParamRole::bern_rho));
  CHECK_FALSE(plain.decays(ParamRole::bern_c0));
  CHECK_FALSE(plain.decays(ParamRole::bn_gamma));
  CHECK_FALSE(plain.decays(ParamRole::bn_running_var));
  AdamW opt_in(p, {.lr = lr, .weight_decay = wd, .decay_bernstein = true, .decay_bn_affine = true});
  CHECK(opt_in.decays(ParamRole::bern_rho));
  CHECK(opt_in.decays(ParamRole::bn_beta));
}

TEST_CASE("optimizer steps invalidate forward caches and skip running statistics") {
  const Network net(1, {batch_norm_layer(1)});
  Parameters p = net.zero_parameters();
  p.tensors[3].value(0, 0) = 1.0;
  const auto v0 = p.version();
  AdamW opt(p, {.lr = 0.1, .weight_decay = 0.5});
  std::vector<Matrix> g{Matrix(1, 1, 1.0), Matrix(1, 1, 1.0), Matrix(1, 1, 1.0), Matrix(1, 1, 1.0)};
  opt.step(p, g, 1);
  CHECK(p.version() != v0);
  CHECK(p.tensors[2].value(0, 0) == 0.0);
  CHECK(p.tensors[3].value(0, 0) == 1.0);
  CHECK_THROWS_AS(opt.step(p, {Matrix(1, 1)}, 1), DimensionError);
}

TEST_CASE("exponential schedule") {
  Scheduler s(1.0, ExponentialDecay{0.95, 5});
  std::vector<double> lr_for_epoch{0.0, s.lr()};
  for (int e = 1; e <= 8; ++e) lr_for_epoch.push_back(s.step(e, 0.0));
  CHECK(lr_for_epoch[1] == 1.0);
  CHECK(lr_for_epoch[5] == 1.0);
  CHECK(lr_for_epoch[6] == doctest::Approx(0.95).epsilon(1e-15));
  CHECK(lr_for_epoch[7] == doctest::Approx(0.95 * 0.95).epsilon(1e-15));
  for (std::size_t e = 2; e < lr_for_epoch.size(); ++e) CHECK(lr_for_epoch[e] <= lr_for_epoch[e - 1]);
  Scheduler floor(1e-5, ExponentialDecay{0.1, 1}, 1e-6);
  for (int e = 1; e < 10; ++e) CHECK(floor.step(e, 0.0) >= 1e-6);
}

TEST_CASE("plateau schedule") {
  Scheduler up(0.1, ReduceOnPlateau{.patience = 3});
  for (int e = 1; e <= 20; ++e) CHECK(up.step(e, 0.5 + 0.01 * e) == 0.1);

  Scheduler flat(0.1, ReduceOnPlateau{.patience = 3});
  CHECK(flat.step(1, 0.7) == 0.1);
  CHECK(flat.step(2, 0.7) == 0.1);
  CHECK(flat.step(3, 0.7) == 0.1);
  CHECK(flat.step(4, 0.7) == 0.1);
  CHECK(flat.step(5, 0.7) == 0.05);  // fourth flat epoch
  CHECK(flat.step(6, 0.7) == 0.05);

  Scheduler low(2e-6, ReduceOnPlateau{.patience = 0}, 1e-6);
  for (int e = 1; e < 6; ++e) CHECK(low.step(e, 1.0) >= 1e-6);

  Scheduler minimize(0.1, ReduceOnPlateau{.direction = MetricDirection::minimize, .patience = 1});
  minimize.step(1, 1.0);
  minimize.step(2, 0.5);
  CHECK(minimize.step(3, 0.5) == 0.1);
  CHECK(minimize.step(4, 0.9) == 0.05);
  CHECK_THROWS_AS(minimize.step(5, std::nan("")), NumericError);
}

TEST_CASE("early stopping") {
  EarlyStopping up(3, 0.0, MetricDirection::maximize);
  for (int e = 0; e < 50; ++e) CHECK_FALSE(up.update(e));

  EarlyStopping flat(20, 1e-4, MetricDirection::maximize);
  int stopped_at = -1;
  for (int e = 1; e <= 40 && stopped_at < 0; ++e)
    if (flat.update(0.8)) stopped_at = e;
  CHECK(stopped_at == 21);  // best at epoch 1, then 20 non-improving epochs

  EarlyStopping edge(2, 0.125, MetricDirection::maximize);
  edge.update(0.5);
  CHECK_FALSE(edge.update(0.5625));
  CHECK(edge.epochs_since_improvement() == 1);
  CHECK_FALSE(edge.update(0.625));  // exactly min_delta above the best
  CHECK(edge.epochs_since_improvement() == 0);
  CHECK(edge.best() == 0.625);

  EarlyStopping loss(1, 0.0, MetricDirection::minimize);
  loss.update(1.0);
  CHECK(loss.update(1.5));
}

TEST_CASE("replaying a metric history reproduces the schedule") {
  const std::vector<double> history{0.5, 0.6, 0.6, 0.59, 0.61, 0.61, 0.6, 0.6, 0.6, 0.6, 0.6, 0.7};
  auto run = [&] {
    Scheduler s(0.01, ReduceOnPlateau{.patience = 2, .min_delta = 0.005});
    EarlyStopping es(4, 0.005, MetricDirection::maximize);
    std::vector<double> trace;
    for (std::size_t e = 0; e < history.size(); ++e) {
      trace.push_back(s.step(static_cast<int>(e + 1), history[e]));
      trace.push_back(es.update(history[e]) ? 1.0 : 0.0);
    }
    return trace;
  };
  CHECK(run() == run());
}
