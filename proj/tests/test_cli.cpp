#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>

#include "bernnet/error.hpp"
#include "bernnet/experiments.hpp"
#include "doctest.h"

using namespace bernnet;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("bernnet_cli_" + name);
  fs::remove_all(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

ExperimentConfig sin1_config(const fs::path& out) {
  ExperimentConfig c = default_config("synthetic");
  c.name = "sin1";
  c.output_dir = out.string();
  c.dataset.target.functions = {"sin_1"};
  c.model.depth = 1;
  c.model.width = 16;
  c.model.bernstein.degree = 5;
  c.training.epochs = 200;
  return c;
}

std::vector<std::string> op_kinds(const Network& net) {
  std::vector<std::string> k;
  for (const auto& op : net.ops()) k.emplace_back(to_string(op.kind));
  return k;
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(BERNNET_CLI) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST_CASE("architecture from the model config") {
  ModelConfig m;
  m.depth = 2;
  m.width = 4;
  const Network bern = build_network(m, 3, 1);
  CHECK(op_kinds(bern) == std::vector<std::string>{"linear", "batch_norm", "clamp", "activation", "linear",
                                                    "batch_norm", "clamp", "activation", "linear"});
  const auto& clamp = std::get<ClampSpec>(bern.ops()[2].spec);
  CHECK(clamp.lower == -3.0);
  CHECK(clamp.upper == 3.0);

  m.activation = "selu";
  m.batch_norm = false;
  CHECK(op_kinds(build_network(m, 3, 1)) ==
        std::vector<std::string>{"linear", "activation", "linear", "activation", "linear"});

  m.activation = "relu";
  m.batch_norm = true;
  m.hidden = {300, 100};
  const Network shallow = build_network(m, 784, 10);
  CHECK(shallow.activation_count() == 2);
  CHECK(shallow.ops()[4].width_out == 100);

  m.hidden.clear();
  m.residual = true;
  const Network res = build_network(m, 3, 1);
  CHECK(res.activation_count() == 2);
  CHECK(op_kinds(res).front() == "linear");
  CHECK(op_kinds(res)[1] == "residual_begin");

  const auto floors = derivative_floors(bern);
  CHECK(floors == std::vector<double>{0.015, 0.015});
  CHECK(derivative_floors(res) == std::vector<double>{0.0, 0.0});
}

TEST_CASE("synthetic sin_1 smoke run") {
  const auto c = sin1_config(scratch("smoke"));
  const PreparedData data = prepare_data(c);
  const TrainResult r = train_model(c, data);
  REQUIRE(r.records.size() == 201);
  CHECK(r.records.back().train_loss < 1e-3);
  CHECK(r.epochs_run == 200);
  const double floor = theoretical_lower_bound(c.model.bernstein);
  for (const auto& rec : r.records) {
    CHECK(rec.min_abs_derivative[0] >= floor - 1e-12);
    CHECK(rec.dead_ratio[0] == 0.0);
    CHECK(rec.bounds_hold);
  }
}

TEST_CASE("reruns are byte-identical") {
  const fs::path a = scratch("det_a"), b = scratch("det_b");
  std::ostringstream sink;
  auto c = sin1_config(a);
  c.training.epochs = 20;
  c.diagnostics.plots = true;
  cmd_train(c, sink);
  c.output_dir = b.string();
  cmd_train(c, sink);
  for (const char* f : {"metrics.csv", "heatmap.csv", "depth_profile.csv", "checkpoint.txt", "min_derivative.svg"}) {
    INFO(f);
    CHECK(slurp(a / f) == slurp(b / f));
    CHECK(!slurp(a / f).empty());
  }
  const CsvTable t = read_csv((a / "metrics.csv").string());
  CHECK(t.comments.at(0) == " config-fingerprint: " + config_fingerprint(c));
  CHECK(t.rows.size() == 21);
}

TEST_CASE("zero epochs records the initial state only") {
  const fs::path out = scratch("zero");
  auto c = sin1_config(out);
  c.training.epochs = 0;
  std::ostringstream sink;
  const TrainResult r = cmd_train(c, sink);
  REQUIRE(r.records.size() == 1);
  CHECK(r.records[0].epoch == 0);
  CHECK(r.records[0].min_abs_derivative[0] == doctest::Approx(1.0 / 6.0).epsilon(1e-12));
  CHECK(read_csv((out / "metrics.csv").string()).rows.size() == 1);
  CHECK(r.epochs_run == 0);
}

TEST_CASE("non-finite loss names the epoch and batch") {
  auto c = sin1_config(scratch("nan"));
  c.training.batch_size = 64;
  PreparedData data = prepare_data(c);
  data.train.targets(100, 0) = std::numeric_limits<double>::quiet_NaN();
  try {
    train_model(c, data);
    FAIL("expected a NumericError");
  } catch (const NumericError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("epoch") != std::string::npos);
    CHECK(msg.find("batch") != std::string::npos);
  }
}

TEST_CASE("sweep commands") {
  const fs::path out = scratch("sweep");
  auto c = sin1_config(out);
  c.training.epochs = 5;
  std::ostringstream msg;
  CHECK(cmd_exp2(c, msg).empty());
  CHECK(msg.str().find("nothing to do") != std::string::npos);
  CHECK(!fs::exists(out / "exp2_dead_ratio.csv"));

  c.sweep.variants = {{"bern", nlohmann::json::object()}};
  const auto rows = cmd_exp3(c, msg);
  REQUIRE(rows.size() == 1);
  const CsvTable t = read_csv((out / "exp3_scaling.csv").string());
  CHECK(t.rows.size() == 1);
  CHECK(t.header.at(0) == "variant");
  CHECK(t.number(0, "depth") == 1);
  CHECK(t.number(0, "degree") == 5);
  CHECK(t.number(0, "best_train_loss") == rows[0].best_train_loss);

  c.sweep.variants.push_back({"relu", {{"model", {{"activation", "relu"}}}}});
  cmd_exp1(c, msg);
  const CsvTable e1 = read_csv((out / "exp1_min_derivative.csv").string());
  for (std::size_t i = 0; i < e1.rows.size(); ++i) {
    const bool bern = e1.rows[i][e1.column("variant")] == "bern";
    CHECK(e1.number(i, "theoretical_floor") == (bern ? 5 * 0.01 / 6.0 : 0.0));
  }
  CHECK(e1.rows.size() == 2 * 3 * 6);  // variants × tracked layers × (epoch 0..5)

  c.sweep.variants.push_back({"../escape", nlohmann::json::object()});
  CHECK_THROWS_AS(cmd_exp2(c, msg), ConfigError);
}

TEST_CASE("approximation sweep") {
  const fs::path out = scratch("approx");
  ExperimentConfig c = default_config("synthetic");
  c.output_dir = out.string();
  c.approx.targets = {{"linear"}};
  c.approx.depths = {1};
  c.approx.seeds = {1};
  c.approx.steps = 1500;
  std::ostringstream sink;
  const auto rows = cmd_approx(c, sink);
  REQUIRE(rows.size() == 2);
  CHECK(rows[0].model == "bernstein");
  CHECK(rows[0].best_mse < 1e-6);
  CHECK(rows[1].model == "relu");
  // Matched parameter budgets.
  CHECK(std::abs(static_cast<double>(rows[1].parameters) - static_cast<double>(rows[0].parameters)) <=
        0.1 * static_cast<double>(rows[0].parameters));

  // Theory column against an independent brute-force modulus on the same grid.
  const std::size_t n = c.approx.theory_samples;
  const double delta = 1.0 / 5.0;
  double brute = 0.0;
  const double x0 = c.dataset.target.lower, x1 = c.dataset.target.upper;
  for (std::size_t i = 0; i < n; ++i) {
    const double xi = x0 + (x1 - x0) * static_cast<double>(i) / static_cast<double>(n - 1);
    for (std::size_t j = i + 1; j < n; ++j) {
      const double xj = x0 + (x1 - x0) * static_cast<double>(j) / static_cast<double>(n - 1);
      if (xj - xi > delta) break;
      brute = std::max(brute, std::abs(xj - xi));
    }
  }
  CHECK(rows[0].theory_modulus == doctest::Approx(brute).epsilon(1e-12));
  const CsvTable t = read_csv((out / "approx_summary.csv").string());
  CHECK(t.number(0, "theory_modulus") == rows[0].theory_modulus);
}

TEST_CASE("verify battery and its negative control") {
  std::ostringstream clean, faulty;
  for (const auto& r : cmd_verify({1, false}, clean)) {
    INFO(r.module << "/" << r.name << " " << r.detail);
    CHECK(r.pass);
  }
  std::size_t failures = 0;
  for (const auto& r : cmd_verify({1, true}, faulty)) {
    if (r.pass) continue;
    ++failures;
    CHECK(r.name == "gradient/mixed_stack");
    CHECK(r.detail.find("error introduced in: op4:linear") != std::string::npos);
  }
  CHECK(failures == 1);
}

TEST_CASE("exit codes") {
  const fs::path dir = scratch("exit");
  fs::create_directories(dir);
  CHECK(run_cli("verify") == 0);
  CHECK(run_cli("verify --inject-fault") == 2);
  CHECK(run_cli("") == 1);
  CHECK(run_cli("train --config " + (dir / "missing.json").string()) == 1);

  std::ofstream(dir / "typo.json") << R"({"modle": {}})";
  CHECK(run_cli("train --config " + (dir / "typo.json").string()) == 1);

  std::ofstream(dir / "ok.json") << R"({"dataset": {"kind": "synthetic"}, "training": {"epochs": 3},
                                        "output_dir": ")" << (dir / "run").string() << R"("})";
  CHECK(run_cli("train --quiet --config " + (dir / "ok.json").string()) == 0);
  CHECK(fs::exists(dir / "run" / "metrics.csv"));
  CHECK(run_cli("train --quiet --subset-rows 32 --out " + (dir / "run2").string() + " --config " +
                (dir / "ok.json").string()) == 0);
  CHECK(read_csv((dir / "run2" / "metrics.csv").string()).rows.size() == 4);

  std::ofstream(dir / "blowup.json") << R"({"dataset": {"kind": "synthetic"}, "training": {"epochs": 50},
     "model": {"activation": "relu", "batch_norm": false}, "optimizer": {"lr": 1e300},
     "output_dir": ")" << (dir / "blowup").string() << R"("})";
  CHECK(run_cli("train --quiet --config " + (dir / "blowup.json").string()) == 3);
}
