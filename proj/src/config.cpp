#include "bernnet/config.hpp"

#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "bernnet/activations.hpp"
#include "bernnet/error.hpp"

namespace bernnet {

using nlohmann::json;

ExperimentConfig default_config(const std::string& dataset_kind) {
  ExperimentConfig c;
  c.dataset.kind = dataset_kind;
  if (dataset_kind == "mnist") {
    c.dataset.path = "mnist";
    c.optimizer.lr = 2e-3;
    c.optimizer.weight_decay = 1e-4;
    c.optimizer.decay_start_epoch = 1;
    c.scheduler.kind = "exponential";
    c.scheduler.gamma = 0.95;
    c.scheduler.start_epoch = 5;
    c.early_stop = {true, 15, 1e-3};
    c.training = {100, 64};
  } else if (dataset_kind == "higgs_csv") {
    c.dataset.path = "higgs/HIGGS.csv.gz";
    c.dataset.max_rows = 100000;
    c.dataset.train_fraction = 0.8;
    c.optimizer.lr = 1e-4;
    c.optimizer.weight_decay = 1e-4;
    c.optimizer.decay_start_epoch = 5;
    c.scheduler.kind = "plateau";
    c.scheduler.factor = 0.5;
    c.scheduler.patience = 5;
    c.early_stop = {true, 20, 1e-4};
    c.training = {100, 2048};
  } else if (dataset_kind == "synthetic") {
    c.model.depth = 1;
    c.model.width = 16;
    c.model.bernstein.degree = 5;
    c.optimizer.lr = 0.1;
    c.scheduler.kind = "none";
    c.early_stop.enabled = false;
    c.training = {2000, 0};
    c.diagnostics.init_batches = 1;
  } else {
    throw ConfigError("unknown dataset kind '" + dataset_kind + "' (expected mnist, higgs_csv or synthetic)");
  }
  return c;
}

json to_json(const ExperimentConfig& c) {
  json variants = json::array();
  for (const auto& v : c.sweep.variants) variants.push_back({{"name", v.name}, {"patch", v.patch}});
  const auto& t = c.dataset.target;
  return json{
      {"name", c.name},
      {"seed", c.seed},
      {"output_dir", c.output_dir},
      {"dataset",
       {{"kind", c.dataset.kind},
        {"path", c.dataset.path},
        {"max_rows", c.dataset.max_rows},
        {"train_rows", c.dataset.train_rows},
        {"val_rows", c.dataset.val_rows},
        {"train_fraction", c.dataset.train_fraction},
        {"split_seed", c.dataset.split_seed},
        {"target",
         {{"functions", t.functions},
          {"lower", t.lower},
          {"upper", t.upper},
          {"samples", t.samples},
          {"noise", t.noise},
          {"random_x", t.random_x}}}}},
      {"model",
       {{"activation", c.model.activation},
        {"depth", c.model.depth},
        {"width", c.model.width},
        {"hidden", c.model.hidden},
        {"batch_norm", c.model.batch_norm},
        {"residual", c.model.residual},
        {"leaky_slope", c.model.leaky_slope},
        {"bernstein",
         {{"degree", c.model.bernstein.degree},
          {"lower", c.model.bernstein.lower},
          {"upper", c.model.bernstein.upper},
          {"delta", c.model.bernstein.delta}}},
        {"sharing", c.model.sharing},
        {"init", c.model.init},
        {"clamp_straight_through", c.model.clamp_straight_through}}},
      {"optimizer",
       {{"lr", c.optimizer.lr},
        {"beta1", c.optimizer.beta1},
        {"beta2", c.optimizer.beta2},
        {"eps", c.optimizer.eps},
        {"weight_decay", c.optimizer.weight_decay},
        {"decay_start_epoch", c.optimizer.decay_start_epoch},
        {"decay_bernstein", c.optimizer.decay_bernstein},
        {"decay_bn_affine", c.optimizer.decay_bn_affine}}},
      {"scheduler",
       {{"kind", c.scheduler.kind},
        {"gamma", c.scheduler.gamma},
        {"start_epoch", c.scheduler.start_epoch},
        {"factor", c.scheduler.factor},
        {"patience", c.scheduler.patience},
        {"min_delta", c.scheduler.min_delta},
        {"min_lr", c.scheduler.min_lr}}},
      {"early_stop",
       {{"enabled", c.early_stop.enabled}, {"patience", c.early_stop.patience}, {"min_delta", c.early_stop.min_delta}}},
      {"training", {{"epochs", c.training.epochs}, {"batch_size", c.training.batch_size}}},
      {"diagnostics",
       {{"stride", c.diagnostics.stride},
        {"dead_threshold", c.diagnostics.dead_threshold},
        {"check_bounds", c.diagnostics.check_bounds},
        {"init_batches", c.diagnostics.init_batches},
        {"plots", c.diagnostics.plots},
        {"checkpoint", c.diagnostics.checkpoint}}},
      {"sweep", {{"variants", variants}, {"depths", c.sweep.depths}}},
      {"approx",
       {{"targets", c.approx.targets},
        {"depths", c.approx.depths},
        {"degrees", c.approx.degrees},
        {"width", c.approx.width},
        {"seeds", c.approx.seeds},
        {"steps", c.approx.steps},
        {"lr", c.approx.lr},
        {"samples", c.approx.samples},
        {"theory_samples", c.approx.theory_samples},
        {"relu_baseline", c.approx.relu_baseline}}},
  };
}

namespace {

bool non_negative(const json& v) { return v.is_number_unsigned() || v.get<std::int64_t>() >= 0; }

// Reads the keys of one JSON object into typed fields and rejects leftovers.
class Reader {
 public:
  Reader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(where() + ": expected an object");
  }

  void number(const char* key, double& out) {
    if (const json* v = take(key)) {
      if (!v->is_number()) fail(key, "a number");
      out = v->get<double>();
    }
  }
  template <typename Int>
  void integer(const char* key, Int& out) {
    if (const json* v = take(key)) {
      if (!v->is_number_integer()) fail(key, "an integer");
      if constexpr (std::is_unsigned_v<Int>) {
        if (!non_negative(*v)) fail(key, "a non-negative integer");
      }
      out = v->get<Int>();
    }
  }
  void boolean(const char* key, bool& out) {
    if (const json* v = take(key)) {
      if (!v->is_boolean()) fail(key, "true or false");
      out = v->get<bool>();
    }
  }
  void string(const char* key, std::string& out) {
    if (const json* v = take(key)) {
      if (!v->is_string()) fail(key, "a string");
      out = v->get<std::string>();
    }
  }
  template <typename T>
  void list(const char* key, std::vector<T>& out) {
    if (const json* v = take(key)) {
      if (!v->is_array()) fail(key, "an array");
      try {
        out = v->get<std::vector<T>>();
      } catch (const json::exception&) {
        fail(key, "an array of the right element type");
      }
      if constexpr (std::is_unsigned_v<T>) {
        for (const auto& e : *v)
          if (!e.is_number_integer() || !non_negative(e)) fail(key, "an array of non-negative integers");
      }
    }
  }
  const json* object(const char* key) {
    const json* v = take(key);
    if (v && !v->is_object()) fail(key, "an object");
    return v;
  }
  const json* raw(const char* key) { return take(key); }
  std::string child(const char* key) const { return where() + "." + key; }

  void finish() const {
    for (const auto& [key, value] : j_.items()) {
      if (!seen_.count(key)) throw ConfigError("unknown config key '" + where() + "." + key + "'");
    }
  }

 private:
  const json* take(const char* key) {
    seen_.insert(key);
    const auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }
  [[noreturn]] void fail(const char* key, const char* expected) const {
    throw ConfigError("config key '" + where() + "." + key + "' must be " + expected);
  }
  std::string where() const { return path_.empty() ? "$" : path_; }

  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

void read_into(ExperimentConfig& c, const json& j) {
  Reader r(j, "");
  r.string("name", c.name);
  r.integer("seed", c.seed);
  r.string("output_dir", c.output_dir);
  if (const json* d = r.object("dataset")) {
    Reader rd(*d, r.child("dataset"));
    rd.string("kind", c.dataset.kind);
    rd.string("path", c.dataset.path);
    rd.integer("max_rows", c.dataset.max_rows);
    rd.integer("train_rows", c.dataset.train_rows);
    rd.integer("val_rows", c.dataset.val_rows);
    rd.number("train_fraction", c.dataset.train_fraction);
    rd.integer("split_seed", c.dataset.split_seed);
    if (const json* t = rd.object("target")) {
      Reader rt(*t, rd.child("target"));
      rt.list("functions", c.dataset.target.functions);
      rt.number("lower", c.dataset.target.lower);
      rt.number("upper", c.dataset.target.upper);
      rt.integer("samples", c.dataset.target.samples);
      rt.number("noise", c.dataset.target.noise);
      rt.boolean("random_x", c.dataset.target.random_x);
      rt.finish();
    }
    rd.finish();
  }
  if (const json* m = r.object("model")) {
    Reader rm(*m, r.child("model"));
    rm.string("activation", c.model.activation);
    rm.integer("depth", c.model.depth);
    rm.integer("width", c.model.width);
    rm.list("hidden", c.model.hidden);
    rm.boolean("batch_norm", c.model.batch_norm);
    rm.boolean("residual", c.model.residual);
    rm.number("leaky_slope", c.model.leaky_slope);
    if (const json* b = rm.object("bernstein")) {
      Reader rb(*b, rm.child("bernstein"));
      rb.integer("degree", c.model.bernstein.degree);
      rb.number("lower", c.model.bernstein.lower);
      rb.number("upper", c.model.bernstein.upper);
      rb.number("delta", c.model.bernstein.delta);
      rb.finish();
    }
    rm.string("sharing", c.model.sharing);
    rm.string("init", c.model.init);
    rm.boolean("clamp_straight_through", c.model.clamp_straight_through);
    rm.finish();
  }
  if (const json* o = r.object("optimizer")) {
    Reader ro(*o, r.child("optimizer"));
    ro.number("lr", c.optimizer.lr);
    ro.number("beta1", c.optimizer.beta1);
    ro.number("beta2", c.optimizer.beta2);
    ro.number("eps", c.optimizer.eps);
    ro.number("weight_decay", c.optimizer.weight_decay);
    ro.integer("decay_start_epoch", c.optimizer.decay_start_epoch);
    ro.boolean("decay_bernstein", c.optimizer.decay_bernstein);
    ro.boolean("decay_bn_affine", c.optimizer.decay_bn_affine);
    ro.finish();
  }
  if (const json* s = r.object("scheduler")) {
    Reader rs(*s, r.child("scheduler"));
    rs.string("kind", c.scheduler.kind);
    rs.number("gamma", c.scheduler.gamma);
    rs.integer("start_epoch", c.scheduler.start_epoch);
    rs.number("factor", c.scheduler.factor);
    rs.integer("patience", c.scheduler.patience);
    rs.number("min_delta", c.scheduler.min_delta);
    rs.number("min_lr", c.scheduler.min_lr);
    rs.finish();
  }
  if (const json* e = r.object("early_stop")) {
    Reader re(*e, r.child("early_stop"));
    re.boolean("enabled", c.early_stop.enabled);
    re.integer("patience", c.early_stop.patience);
    re.number("min_delta", c.early_stop.min_delta);
    re.finish();
  }
  if (const json* t = r.object("training")) {
    Reader rt(*t, r.child("training"));
    rt.integer("epochs", c.training.epochs);
    rt.integer("batch_size", c.training.batch_size);
    rt.finish();
  }
  if (const json* d = r.object("diagnostics")) {
    Reader rd(*d, r.child("diagnostics"));
    rd.integer("stride", c.diagnostics.stride);
    rd.number("dead_threshold", c.diagnostics.dead_threshold);
    rd.boolean("check_bounds", c.diagnostics.check_bounds);
    rd.integer("init_batches", c.diagnostics.init_batches);
    rd.boolean("plots", c.diagnostics.plots);
    rd.boolean("checkpoint", c.diagnostics.checkpoint);
    rd.finish();
  }
  if (const json* s = r.object("sweep")) {
    Reader rs(*s, r.child("sweep"));
    if (const json* vs = rs.raw("variants")) {
      if (!vs->is_array()) throw ConfigError("config key '$.sweep.variants' must be an array");
      c.sweep.variants.clear();
      for (std::size_t i = 0; i < vs->size(); ++i) {
        Reader rv((*vs)[i], rs.child("variants") + "[" + std::to_string(i) + "]");
        SweepVariant v;
        rv.string("name", v.name);
        if (const json* p = rv.object("patch")) v.patch = *p;
        rv.finish();
        c.sweep.variants.push_back(std::move(v));
      }
    }
    rs.list("depths", c.sweep.depths);
    rs.finish();
  }
  if (const json* a = r.object("approx")) {
    Reader ra(*a, r.child("approx"));
    ra.list("targets", c.approx.targets);
    ra.list("depths", c.approx.depths);
    ra.list("degrees", c.approx.degrees);
    ra.integer("width", c.approx.width);
    ra.list("seeds", c.approx.seeds);
    ra.integer("steps", c.approx.steps);
    ra.number("lr", c.approx.lr);
    ra.integer("samples", c.approx.samples);
    ra.integer("theory_samples", c.approx.theory_samples);
    ra.boolean("relu_baseline", c.approx.relu_baseline);
    ra.finish();
  }
  r.finish();
}

}  // namespace

void validate(const ExperimentConfig& c) {
  auto bad = [](const std::string& msg) { throw ConfigError(msg); };
  if (c.dataset.kind != "mnist" && c.dataset.kind != "higgs_csv" && c.dataset.kind != "synthetic") {
    bad("dataset.kind must be mnist, higgs_csv or synthetic");
  }
  if (!(c.dataset.train_fraction > 0.0 && c.dataset.train_fraction < 1.0)) bad("dataset.train_fraction must lie in (0, 1)");
  if (c.dataset.kind == "synthetic") {
    const auto& t = c.dataset.target;
    if (t.functions.empty()) bad("dataset.target.functions must not be empty");
    for (const auto& f : t.functions) target_function(f, 0.0);
    if (!(t.upper > t.lower)) bad("dataset.target needs upper > lower");
    if (t.samples < 2) bad("dataset.target.samples must be >= 2");
    if (!(t.noise >= 0.0)) bad("dataset.target.noise must be >= 0");
  }
  try {
    activation_kind_from_string(c.model.activation);
    init_mode_from_string(c.model.init);
  } catch (const ParseError& e) {
    bad(std::string("model: ") + e.what());
  }
  if (c.model.sharing != "per_neuron" && c.model.sharing != "per_layer") bad("model.sharing must be per_neuron or per_layer");
  if (c.model.hidden.empty() && (c.model.depth == 0 || c.model.width == 0)) bad("model.depth and model.width must be >= 1");
  for (auto w : c.model.hidden)
    if (w == 0) bad("model.hidden widths must be >= 1");
  if (c.model.activation == "bernstein") {
    try {
      c.model.bernstein.validate();
    } catch (const DomainError& e) {
      bad(std::string("model.") + e.what());
    }
    if (c.model.residual) bad("model.residual applies to non-Bernstein activations only");
  }
  if (!(c.model.leaky_slope >= 0.0)) bad("model.leaky_slope must be >= 0");
  if (!(c.optimizer.lr > 0.0)) bad("optimizer.lr must be > 0");
  if (!(c.optimizer.weight_decay >= 0.0)) bad("optimizer.weight_decay must be >= 0");
  if (!(c.optimizer.beta1 >= 0.0 && c.optimizer.beta1 < 1.0 && c.optimizer.beta2 >= 0.0 && c.optimizer.beta2 < 1.0)) {
    bad("optimizer betas must lie in [0, 1)");
  }
  if (!(c.optimizer.eps > 0.0)) bad("optimizer.eps must be > 0");
  if (c.scheduler.kind != "none" && c.scheduler.kind != "exponential" && c.scheduler.kind != "plateau") {
    bad("scheduler.kind must be none, exponential or plateau");
  }
  if (!(c.scheduler.gamma > 0.0 && c.scheduler.gamma <= 1.0)) bad("scheduler.gamma must lie in (0, 1]");
  if (!(c.scheduler.factor > 0.0 && c.scheduler.factor < 1.0)) bad("scheduler.factor must lie in (0, 1)");
  if (c.scheduler.patience < 0) bad("scheduler.patience must be >= 0");
  if (!(c.scheduler.min_lr >= 0.0)) bad("scheduler.min_lr must be >= 0");
  if (c.early_stop.patience < 1) bad("early_stop.patience must be >= 1");
  if (!(c.early_stop.min_delta >= 0.0)) bad("early_stop.min_delta must be >= 0");
  if (c.training.epochs < 0) bad("training.epochs must be >= 0");
  if (c.diagnostics.stride == 0) bad("diagnostics.stride must be >= 1");
  if (!(c.diagnostics.dead_threshold > 0.0)) bad("diagnostics.dead_threshold must be > 0");
  for (const auto& v : c.sweep.variants)
    if (v.name.empty()) bad("sweep variants need a name");
  if (c.approx.width == 0 || c.approx.steps == 0 || c.approx.samples < 2) bad("approx: width, steps and samples must be positive");
  if (!(c.approx.lr > 0.0)) bad("approx.lr must be > 0");
  for (int n : c.approx.degrees)
    if (n < 1) bad("approx.degrees must be >= 1");
  for (const auto& t : c.approx.targets) {
    if (t.empty()) bad("approx.targets entries must list at least one function");
    for (const auto& f : t) target_function(f, 0.0);
  }
}

ExperimentConfig config_from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  std::string kind = "mnist";
  if (const auto d = j.find("dataset"); d != j.end() && d->is_object()) {
    if (const auto k = d->find("kind"); k != d->end()) {
      if (!k->is_string()) throw ConfigError("config key '$.dataset.kind' must be a string");
      kind = k->get<std::string>();
    }
  }
  ExperimentConfig c = default_config(kind);
  read_into(c, j);
  validate(c);
  return c;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path);
  json j;
  try {
    j = json::parse(in, nullptr, true, true);
  } catch (const json::parse_error& e) {
    throw ConfigError(path + ": " + e.what());
  }
  return config_from_json(j);
}

void save_config(const ExperimentConfig& config, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  out << to_json(config).dump(2) << "\n";
}

ExperimentConfig apply_patch(const ExperimentConfig& base, const json& patch) {
  json j = to_json(base);
  j.merge_patch(patch);
  ExperimentConfig c = base;
  read_into(c, j);
  validate(c);
  return c;
}

std::string config_fingerprint(const ExperimentConfig& config) {
  json j = to_json(config);
  j.erase("output_dir");
  const std::string text = j.dump();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace bernnet
