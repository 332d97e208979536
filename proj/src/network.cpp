#include "bernnet/network.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <sstream>

#include "bernnet/error.hpp"

namespace bernnet {

namespace {

std::atomic<std::uint64_t> g_param_version{1};

template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

std::string op_label(std::size_t index, OpKind kind) {
  return "op" + std::to_string(index) + ":" + std::string(to_string(kind));
}

}  // namespace

LayerSpec linear_layer(std::size_t in, std::size_t out, WeightInit init) {
  return {LinearSpec{in, out, init}};
}

LayerSpec batch_norm_layer(std::size_t features, bool affine) {
  BatchNormSpec s;
  s.features = features;
  s.affine = affine;
  return {s};
}

LayerSpec clamp_layer(double lower, double upper, bool straight_through) {
  return {ClampSpec{lower, upper, straight_through}};
}

LayerSpec activation_layer(ActivationKind kind, std::size_t width, double leaky_slope) {
  ActivationSpec s;
  s.kind = kind;
  s.width = width;
  s.leaky_slope = leaky_slope;
  return {s};
}

LayerSpec bernstein_layer(std::size_t width, const BernsteinSpec& spec, CoefficientSharing sharing,
                          InitMode init) {
  ActivationSpec s;
  s.kind = ActivationKind::bernstein;
  s.width = width;
  s.bernstein = spec;
  s.sharing = sharing;
  s.init = init;
  return {s};
}

LayerSpec residual_block(std::vector<LayerSpec> inner) { return {ResidualSpec{std::move(inner)}}; }

std::string_view to_string(OpKind kind) noexcept {
  switch (kind) {
    case OpKind::linear: return "linear";
    case OpKind::batch_norm: return "batch_norm";
    case OpKind::clamp: return "clamp";
    case OpKind::activation: return "activation";
    case OpKind::residual_begin: return "residual_begin";
    case OpKind::residual_end: return "residual_end";
  }
  return "unknown";
}

std::string_view to_string(ParamRole role) noexcept {
  switch (role) {
    case ParamRole::weight: return "weight";
    case ParamRole::bias: return "bias";
    case ParamRole::bn_gamma: return "bn_gamma";
    case ParamRole::bn_beta: return "bn_beta";
    case ParamRole::bn_running_mean: return "bn_running_mean";
    case ParamRole::bn_running_var: return "bn_running_var";
    case ParamRole::bern_c0: return "bern_c0";
    case ParamRole::bern_rho: return "bern_rho";
  }
  return "unknown";
}

ParamRole param_role_from_string(std::string_view name) {
  for (ParamRole r : {ParamRole::weight, ParamRole::bias, ParamRole::bn_gamma, ParamRole::bn_beta,
                      ParamRole::bn_running_mean, ParamRole::bn_running_var, ParamRole::bern_c0,
                      ParamRole::bern_rho}) {
    if (to_string(r) == name) return r;
  }
  throw ParseError("unknown parameter role '" + std::string(name) + "'");
}

bool is_trainable(ParamRole role) noexcept {
  return role != ParamRole::bn_running_mean && role != ParamRole::bn_running_var;
}

void Parameters::touch() noexcept { version_ = g_param_version.fetch_add(1); }

std::size_t Parameters::trainable_count() const noexcept {
  std::size_t n = 0;
  for (const auto& t : tensors) {
    if (is_trainable(t.role)) n += t.value.size();
  }
  return n;
}

// ---------------------------------------------------------------------------
// Construction

Network::Network(std::size_t input_width, std::vector<LayerSpec> layers, NetworkOptions options)
    : input_width_(input_width), layers_(std::move(layers)), options_(options) {
  std::size_t width = input_width;
  std::size_t next_param = 0;
  compile(layers_, width, next_param);
  output_width_ = width;
}

void Network::compile(const std::vector<LayerSpec>& layers, std::size_t& width,
                      std::size_t& next_param) {
  auto add_tensor = [&](const std::string& prefix, const char* suffix, ParamRole role,
                        std::size_t rows, std::size_t cols) {
    param_layout_.push_back({prefix + "." + suffix, role, Matrix(rows, cols)});
    ++next_param;
  };

  for (const auto& layer : layers) {
    const std::size_t index = ops_.size();
    std::visit(
        overloaded{
            [&](const LinearSpec& s) {
              if (s.in != width) {
                throw DimensionError("linear layer expects width " + std::to_string(s.in) +
                                     " but receives " + std::to_string(width));
              }
              if (s.out == 0) throw DimensionError("linear layer with zero outputs");
              Op op{OpKind::linear, s, width, s.out, next_param, 0, op_label(index, OpKind::linear)};
              ops_.push_back(op);
              const std::string prefix = "op" + std::to_string(index);
              add_tensor(prefix, "weight", ParamRole::weight, s.in, s.out);
              add_tensor(prefix, "bias", ParamRole::bias, 1, s.out);
              width = s.out;
            },
            [&](const BatchNormSpec& s) {
              if (s.features != width) {
                throw DimensionError("batch norm over " + std::to_string(s.features) +
                                     " features receives width " + std::to_string(width));
              }
              if (!(s.eps > 0.0)) throw DomainError("batch norm eps must be > 0");
              Op op{OpKind::batch_norm, s, width, width, next_param, 0,
                    op_label(index, OpKind::batch_norm)};
              ops_.push_back(op);
              const std::string prefix = "op" + std::to_string(index);
              if (s.affine) {
                add_tensor(prefix, "gamma", ParamRole::bn_gamma, 1, width);
                add_tensor(prefix, "beta", ParamRole::bn_beta, 1, width);
              }
              add_tensor(prefix, "running_mean", ParamRole::bn_running_mean, 1, width);
              add_tensor(prefix, "running_var", ParamRole::bn_running_var, 1, width);
            },
            [&](const ClampSpec& s) {
              if (!(s.upper > s.lower)) throw DomainError("clamp needs upper > lower");
              ops_.push_back({OpKind::clamp, s, width, width, next_param, 0,
                              op_label(index, OpKind::clamp)});
            },
            [&](const ActivationSpec& s) {
              if (s.width != width) {
                throw DimensionError("activation of width " + std::to_string(s.width) +
                                     " receives width " + std::to_string(width));
              }
              Op op{OpKind::activation, s, width, width, next_param, activation_ops_.size(),
                    "act" + std::to_string(activation_ops_.size()) + ":" +
                        std::string(to_string(s.kind))};
              if (s.kind == ActivationKind::bernstein) {
                s.bernstein.validate();
                if (!options_.allow_unguarded_bernstein) {
                  const bool guarded = index >= 2 && ops_[index - 1].kind == OpKind::clamp &&
                                       ops_[index - 2].kind == OpKind::batch_norm;
                  if (!guarded) {
                    throw ConfigError(
                        "Bernstein activation must be preceded by BatchNorm -> Clamp "
                        "(set allow_unguarded_bernstein for analysis nets)");
                  }
                  const auto& clamp = std::get<ClampSpec>(ops_[index - 1].spec);
                  if (clamp.lower < s.bernstein.lower || clamp.upper > s.bernstein.upper) {
                    throw ConfigError("clamp interval must lie inside the Bernstein interval");
                  }
                }
                ops_.push_back(op);
                const std::size_t units = s.sharing == CoefficientSharing::per_neuron ? width : 1;
                const std::string prefix = "op" + std::to_string(index);
                add_tensor(prefix, "c0", ParamRole::bern_c0, 1, units);
                add_tensor(prefix, "rho", ParamRole::bern_rho, units,
                           static_cast<std::size_t>(s.bernstein.degree));
              } else {
                ops_.push_back(op);
              }
              activation_ops_.push_back(index);
            },
            [&](const ResidualSpec& s) {
              ops_.push_back({OpKind::residual_begin, std::monostate{}, width, width, next_param, 0,
                              op_label(index, OpKind::residual_begin)});
              const std::size_t before = width;
              compile(s.inner, width, next_param);
              if (width != before) {
                throw DimensionError("residual block changes width from " + std::to_string(before) +
                                     " to " + std::to_string(width));
              }
              ops_.push_back({OpKind::residual_end, std::monostate{}, width, width, next_param, 0,
                              op_label(ops_.size(), OpKind::residual_end)});
            },
        },
        layer.layer);
  }
}

const ActivationSpec& Network::activation_spec(std::size_t i) const {
  return std::get<ActivationSpec>(ops_.at(activation_ops_.at(i)).spec);
}

std::optional<std::size_t> Network::clamp_before_activation(std::size_t i) const {
  const std::size_t op = activation_op(i);
  if (op > 0 && ops_[op - 1].kind == OpKind::clamp) return op - 1;
  return std::nullopt;
}

Parameters Network::zero_parameters() const {
  Parameters p;
  p.tensors = param_layout_;
  p.touch();
  return p;
}

Parameters Network::init_parameters(Rng& rng) const {
  Parameters p = zero_parameters();
  for (const Op& op : ops_) {
    if (op.kind == OpKind::linear) {
      const auto& s = std::get<LinearSpec>(op.spec);
      const double gain = s.init == WeightInit::kaiming ? 2.0 : 1.0;
      p.tensors[op.first_param].value =
          rng_normal(rng, s.in, s.out, 0.0, std::sqrt(gain / static_cast<double>(s.in)));
    } else if (op.kind == OpKind::batch_norm) {
      const auto& s = std::get<BatchNormSpec>(op.spec);
      std::size_t t = op.first_param;
      if (s.affine) {
        p.tensors[t++].value.fill(1.0);
        ++t;  // beta stays 0
      }
      ++t;  // running mean stays 0
      p.tensors[t].value.fill(1.0);
    } else if (op.kind == OpKind::activation) {
      const auto& s = std::get<ActivationSpec>(op.spec);
      if (s.kind != ActivationKind::bernstein) continue;
      const auto cc = init_rho(s.bernstein, s.init);
      Matrix& c0 = p.tensors[op.first_param].value;
      Matrix& rho = p.tensors[op.first_param + 1].value;
      c0.fill(cc.c0);
      for (std::size_t u = 0; u < rho.rows(); ++u) {
        std::copy(cc.rho.begin(), cc.rho.end(), rho.row(u).begin());
      }
    }
  }
  return p;
}

// ---------------------------------------------------------------------------
// Forward

namespace {

void require_layout(const Network& net, const Parameters& params) {
  const auto expected = net.zero_parameters();
  if (params.tensors.size() != expected.tensors.size()) {
    throw DimensionError("parameters do not match network: " + std::to_string(params.tensors.size()) +
                         " tensors vs " + std::to_string(expected.tensors.size()));
  }
  for (std::size_t i = 0; i < params.tensors.size(); ++i) {
    const auto& a = params.tensors[i].value;
    const auto& b = expected.tensors[i].value;
    if (a.rows() != b.rows() || a.cols() != b.cols() || params.tensors[i].role != expected.tensors[i].role) {
      throw DimensionError("parameter tensor " + expected.tensors[i].name + " has the wrong shape");
    }
  }
}

Matrix bernstein_coefficient_matrix(const ActivationSpec& s, const Matrix& c0, const Matrix& rho) {
  const std::size_t n = static_cast<std::size_t>(s.bernstein.degree);
  Matrix coeffs(rho.rows(), n + 1);
  for (std::size_t u = 0; u < rho.rows(); ++u) {
    reconstruct_coefficients_into(c0(0, u), rho.row(u), s.bernstein.delta, coeffs.row(u));
  }
  return coeffs;
}

[[noreturn]] void range_violation(const Op& op, double x, const BernsteinSpec& b) {
  std::ostringstream msg;
  msg << op.label << ": pre-activation " << x << " outside [" << b.lower << ", " << b.upper << "]";
  throw DomainError(msg.str());
}

Matrix bernstein_forward(const Op& op, const ActivationSpec& s, const Matrix& coeffs, const Matrix& x) {
  const auto& b = s.bernstein;
  const int n = b.degree;
  const bool shared = coeffs.rows() == 1;
  std::vector<double> basis(static_cast<std::size_t>(n) + 1);
  Matrix y(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    auto xr = x.row(i);
    auto yr = y.row(i);
    for (std::size_t j = 0; j < xr.size(); ++j) {
      const double v = xr[j];
      if (!(v >= b.lower && v <= b.upper)) range_violation(op, v, b);
      const double t = v == b.upper ? 1.0 : (v - b.lower) / b.width();
      basis_row(n, t, basis);
      auto c = coeffs.row(shared ? 0 : j);
      double acc = 0.0;
      for (int k = 0; k <= n; ++k) acc += c[k] * basis[k];
      yr[j] = acc;
    }
  }
  return y;
}

struct ForwardState {
  const Network& net;
  const Parameters& params;
  Parameters* mutable_params;  // non-null in train mode
  Mode mode;
  ForwardCache* cache;
};

Matrix run_forward(ForwardState& st, const Matrix& batch) {
  const auto& ops = st.net.ops();
  const bool train = st.mode == Mode::train;
  Matrix x = batch;
  std::vector<Matrix> skip;
  for (std::size_t oi = 0; oi < ops.size(); ++oi) {
    const Op& op = ops[oi];
    OpCache* oc = st.cache ? &st.cache->ops[oi] : nullptr;
    switch (op.kind) {
      case OpKind::linear: {
        const Matrix& w = st.params.tensors[op.first_param].value;
        const Matrix& bias = st.params.tensors[op.first_param + 1].value;
        Matrix y = add_row_vector(matmul(x, w), bias.row(0));
        if (oc) oc->input = std::move(x);
        x = std::move(y);
        break;
      }
      case OpKind::batch_norm: {
        const auto& s = std::get<BatchNormSpec>(op.spec);
        std::size_t t = op.first_param;
        const Matrix* gamma = nullptr;
        const Matrix* beta = nullptr;
        if (s.affine) {
          gamma = &st.params.tensors[t++].value;
          beta = &st.params.tensors[t++].value;
        }
        const std::size_t rm_index = t, rv_index = t + 1;
        const std::size_t n = x.rows(), w = x.cols();
        std::vector<double> mean(w, 0.0), var(w, 0.0), inv(w);
        if (train) {
          for (std::size_t i = 0; i < n; ++i) {
            auto r = x.row(i);
            for (std::size_t j = 0; j < w; ++j) mean[j] += r[j];
          }
          for (double& m : mean) m /= static_cast<double>(n);
          for (std::size_t i = 0; i < n; ++i) {
            auto r = x.row(i);
            for (std::size_t j = 0; j < w; ++j) {
              const double d = r[j] - mean[j];
              var[j] += d * d;
            }
          }
          for (double& v : var) v /= static_cast<double>(n);
          Matrix& rm = st.mutable_params->tensors[rm_index].value;
          Matrix& rv = st.mutable_params->tensors[rv_index].value;
          const double unbias = n > 1 ? static_cast<double>(n) / static_cast<double>(n - 1) : 1.0;
          for (std::size_t j = 0; j < w; ++j) {
            rm(0, j) = (1.0 - s.momentum) * rm(0, j) + s.momentum * mean[j];
            rv(0, j) = (1.0 - s.momentum) * rv(0, j) + s.momentum * var[j] * unbias;
          }
        } else {
          const Matrix& rm = st.params.tensors[rm_index].value;
          const Matrix& rv = st.params.tensors[rv_index].value;
          for (std::size_t j = 0; j < w; ++j) {
            mean[j] = rm(0, j);
            var[j] = rv(0, j);
          }
        }
        for (std::size_t j = 0; j < w; ++j) inv[j] = 1.0 / std::sqrt(var[j] + s.eps);
        Matrix xhat(n, w), y(n, w);
        for (std::size_t i = 0; i < n; ++i) {
          auto r = x.row(i);
          auto h = xhat.row(i);
          auto o = y.row(i);
          for (std::size_t j = 0; j < w; ++j) {
            h[j] = (r[j] - mean[j]) * inv[j];
            o[j] = gamma ? (*gamma)(0, j) * h[j] + (*beta)(0, j) : h[j];
          }
        }
        if (oc) {
          oc->normalized = std::move(xhat);
          oc->inv_std = std::move(inv);
        }
        x = std::move(y);
        break;
      }
      case OpKind::clamp: {
        const auto& s = std::get<ClampSpec>(op.spec);
        Matrix y = x;
        for (double& v : y.values()) v = std::clamp(v, s.lower, s.upper);
        if (oc) oc->input = std::move(x);
        x = std::move(y);
        break;
      }
      case OpKind::activation: {
        const auto& s = std::get<ActivationSpec>(op.spec);
        Matrix y;
        if (s.kind == ActivationKind::bernstein) {
          Matrix coeffs = bernstein_coefficient_matrix(s, st.params.tensors[op.first_param].value,
                                                       st.params.tensors[op.first_param + 1].value);
          y = bernstein_forward(op, s, coeffs, x);
          if (oc) oc->coefficients = std::move(coeffs);
        } else {
          y = Matrix(x.rows(), x.cols());
          auto in = x.values();
          auto out = y.values();
          for (std::size_t k = 0; k < in.size(); ++k) out[k] = activation_value(s.kind, s.leaky_slope, in[k]);
        }
        if (oc) oc->input = std::move(x);
        x = std::move(y);
        break;
      }
      case OpKind::residual_begin:
        skip.push_back(x);
        break;
      case OpKind::residual_end: {
        Matrix y = add(x, skip.back());
        skip.pop_back();
        x = std::move(y);
        break;
      }
    }
  }
  return x;
}

}  // namespace

ForwardResult forward(const Network& net, Parameters& params, const Matrix& batch, Mode mode) {
  if (batch.cols() != net.input_width()) {
    throw DimensionError("forward: batch has " + std::to_string(batch.cols()) +
                         " columns, network expects " + std::to_string(net.input_width()));
  }
  require_layout(net, params);
  ForwardResult result;
  result.cache.mode = mode;
  result.cache.params_version = params.version();
  result.cache.batch_rows = batch.rows();
  if (mode == Mode::train) result.cache.ops.resize(net.ops().size());
  ForwardState st{net, params, mode == Mode::train ? &params : nullptr, mode,
                  mode == Mode::train ? &result.cache : nullptr};
  result.output = run_forward(st, batch);
  require_finite(result.output, "forward output");
  return result;
}

Matrix predict(const Network& net, const Parameters& params, const Matrix& batch) {
  if (batch.cols() != net.input_width()) {
    throw DimensionError("predict: batch has " + std::to_string(batch.cols()) +
                         " columns, network expects " + std::to_string(net.input_width()));
  }
  require_layout(net, params);
  ForwardState st{net, params, nullptr, Mode::eval, nullptr};
  Matrix out = run_forward(st, batch);
  require_finite(out, "forward output");
  return out;
}

// ---------------------------------------------------------------------------
// Backward

Gradients backward(const Network& net, const Parameters& params, const ForwardCache& cache,
                   const Matrix& loss_grad, const BackwardOptions& options) {
  if (cache.mode != Mode::train || cache.ops.size() != net.ops().size()) {
    throw StaleCacheError("backward: cache was not produced by a train-mode forward of this network");
  }
  if (cache.params_version != params.version()) {
    throw StaleCacheError("backward: parameters changed since the forward pass that built the cache");
  }
  if (loss_grad.rows() != cache.batch_rows || loss_grad.cols() != net.output_width()) {
    throw DimensionError("backward: loss gradient shape does not match the network output");
  }

  Gradients grads;
  grads.tensors.reserve(params.tensors.size());
  for (const auto& t : params.tensors) grads.tensors.emplace_back(t.value.rows(), t.value.cols());

  const auto& ops = net.ops();
  Matrix g = loss_grad;
  std::vector<Matrix> skip;
  for (std::size_t oi = ops.size(); oi-- > 0;) {
    const Op& op = ops[oi];
    const OpCache& oc = cache.ops[oi];
    if (options.capture_output_of_op && *options.capture_output_of_op == oi) grads.captured = g;
    switch (op.kind) {
      case OpKind::linear: {
        const Matrix& w = params.tensors[op.first_param].value;
        grads.tensors[op.first_param] = matmul_tn(oc.input, g);
        const auto db = column_sums(g);
        std::copy(db.begin(), db.end(), grads.tensors[op.first_param + 1].row(0).begin());
        g = matmul_nt(g, w);
        break;
      }
      case OpKind::batch_norm: {
        const auto& s = std::get<BatchNormSpec>(op.spec);
        const std::size_t n = g.rows(), w = g.cols();
        const Matrix& xhat = oc.normalized;
        Matrix dxhat = g;
        if (s.affine) {
          const Matrix& gamma = params.tensors[op.first_param].value;
          Matrix& dgamma = grads.tensors[op.first_param];
          Matrix& dbeta = grads.tensors[op.first_param + 1];
          for (std::size_t i = 0; i < n; ++i) {
            auto gr = g.row(i);
            auto hr = xhat.row(i);
            auto dr = dxhat.row(i);
            for (std::size_t j = 0; j < w; ++j) {
              dgamma(0, j) += gr[j] * hr[j];
              dbeta(0, j) += gr[j];
              dr[j] = gr[j] * gamma(0, j);
            }
          }
        }
        std::vector<double> sum_d(w, 0.0), sum_dh(w, 0.0);
        for (std::size_t i = 0; i < n; ++i) {
          auto dr = dxhat.row(i);
          auto hr = xhat.row(i);
          for (std::size_t j = 0; j < w; ++j) {
            sum_d[j] += dr[j];
            sum_dh[j] += dr[j] * hr[j];
          }
        }
        const double nn = static_cast<double>(n);
        Matrix dx(n, w);
        for (std::size_t i = 0; i < n; ++i) {
          auto dr = dxhat.row(i);
          auto hr = xhat.row(i);
          auto out = dx.row(i);
          for (std::size_t j = 0; j < w; ++j) {
            out[j] = oc.inv_std[j] / nn * (nn * dr[j] - sum_d[j] - hr[j] * sum_dh[j]);
          }
        }
        g = std::move(dx);
        break;
      }
      case OpKind::clamp: {
        const auto& s = std::get<ClampSpec>(op.spec);
        if (!s.straight_through) {
          auto in = oc.input.values();
          auto gv = g.values();
          for (std::size_t k = 0; k < gv.size(); ++k) {
            if (in[k] < s.lower || in[k] > s.upper) gv[k] = 0.0;
          }
        }
        break;
      }
      case OpKind::activation: {
        const auto& s = std::get<ActivationSpec>(op.spec);
        if (s.kind != ActivationKind::bernstein) {
          auto in = oc.input.values();
          auto gv = g.values();
          for (std::size_t k = 0; k < gv.size(); ++k) gv[k] *= activation_derivative(s.kind, s.leaky_slope, in[k]);
          break;
        }
        const auto& b = s.bernstein;
        const int n = b.degree;
        const Matrix& coeffs = oc.coefficients;
        const Matrix& rho = params.tensors[op.first_param + 1].value;
        Matrix& dc0 = grads.tensors[op.first_param];
        Matrix& drho = grads.tensors[op.first_param + 1];
        const bool shared = coeffs.rows() == 1;
        Matrix steps(coeffs.rows(), static_cast<std::size_t>(n));
        Matrix sig(rho.rows(), rho.cols());
        for (std::size_t u = 0; u < coeffs.rows(); ++u) {
          for (int k = 0; k < n; ++k) {
            steps(u, k) = coeffs(u, k + 1) - coeffs(u, k);
            sig(u, k) = sigmoid(rho(u, k));
          }
        }
        const double scale = static_cast<double>(n) / b.width();
        std::vector<double> lower(static_cast<std::size_t>(n)), row(static_cast<std::size_t>(n) + 1);
        for (std::size_t i = 0; i < g.rows(); ++i) {
          auto xr = oc.input.row(i);
          auto gr = g.row(i);
          for (std::size_t j = 0; j < gr.size(); ++j) {
            const double up = gr[j];
            const double v = xr[j];
            const double t = v == b.upper ? 1.0 : (v - b.lower) / b.width();
            basis_rows(n, t, lower, row);
            const std::size_t u = shared ? 0 : j;
            double slope = 0.0;
            double total = 0.0;
            for (int k = 0; k < n; ++k) slope += steps(u, k) * lower[k];
            for (double bk : row) total += bk;
            dc0(0, u) += up * total;
            double suffix = 0.0;
            for (int k = n - 1; k >= 0; --k) {
              suffix += row[k + 1];
              drho(u, k) += up * sig(u, k) * suffix;
            }
            gr[j] = up * scale * slope;
          }
        }
        break;
      }
      case OpKind::residual_end:
        skip.push_back(g);
        break;
      case OpKind::residual_begin: {
        g = add(g, skip.back());
        skip.pop_back();
        break;
      }
    }
    if (options.fault_op && *options.fault_op == oi) g = scale(g, 1.01);
  }
  grads.input = std::move(g);
  return grads;
}

// ---------------------------------------------------------------------------
// Bound checks and analysis

std::vector<std::vector<double>> bernstein_coefficients(const Network& net, const Parameters& params,
                                                        std::size_t activation_index) {
  const Op& op = net.ops().at(net.activation_op(activation_index));
  const auto& s = std::get<ActivationSpec>(op.spec);
  if (s.kind != ActivationKind::bernstein) {
    throw Error("bernstein_coefficients: activation " + std::to_string(activation_index) +
                " is not a Bernstein activation");
  }
  const Matrix coeffs = bernstein_coefficient_matrix(s, params.tensors[op.first_param].value,
                                                     params.tensors[op.first_param + 1].value);
  std::vector<std::vector<double>> out;
  for (std::size_t u = 0; u < coeffs.rows(); ++u) {
    out.emplace_back(coeffs.row(u).begin(), coeffs.row(u).end());
  }
  return out;
}

std::vector<DiagonalBoundReport> check_network_bounds(const Network& net, const Parameters& params) {
  std::vector<DiagonalBoundReport> reports(net.activation_count());
  for (std::size_t a = 0; a < net.activation_count(); ++a) {
    const auto& s = net.activation_spec(a);
    if (s.kind != ActivationKind::bernstein) continue;
    const auto coeffs = bernstein_coefficients(net, params, a);
    reports[a] = check_diagonal_bound(coeffs, s.bernstein);
  }
  return reports;
}

double effective_degree_probe(const Network& net, const Parameters& params, int probe_degree,
                              std::size_t sample_count, double lo, double hi) {
  if (net.input_width() != 1) throw DimensionError("effective_degree_probe: network input must be scalar");
  for (const Op& op : net.ops()) {
    const bool ok = op.kind == OpKind::linear ||
                    (op.kind == OpKind::activation &&
                     std::get<ActivationSpec>(op.spec).kind == ActivationKind::bernstein);
    if (!ok) {
      throw ConfigError("effective_degree_probe: only Linear and Bernstein layers allowed, found " +
                        op.label);
    }
  }
  if (probe_degree < 0) throw DomainError("effective_degree_probe: negative degree");
  const std::size_t terms = static_cast<std::size_t>(probe_degree) + 1;
  if (sample_count < terms) throw DomainError("effective_degree_probe: fewer samples than coefficients");
  if (!(hi > lo)) throw DomainError("effective_degree_probe: empty domain");

  const double mid = 0.5 * (lo + hi), half = 0.5 * (hi - lo);
  Matrix xs(sample_count, 1);
  std::vector<double> nodes(sample_count);
  for (std::size_t i = 0; i < sample_count; ++i) {
    nodes[i] = std::cos(std::numbers::pi * (2.0 * static_cast<double>(i) + 1.0) /
                        (2.0 * static_cast<double>(sample_count)));
    xs(i, 0) = mid + half * nodes[i];
  }
  const Matrix ys = predict(net, params, xs);

  // Chebyshev basis on the mapped variable keeps the fit well conditioned.
  Matrix design(sample_count, terms);
  for (std::size_t i = 0; i < sample_count; ++i) {
    const double s = nodes[i];
    double t_prev = 1.0, t_cur = s;
    design(i, 0) = 1.0;
    if (terms > 1) design(i, 1) = s;
    for (std::size_t k = 2; k < terms; ++k) {
      const double t_next = 2.0 * s * t_cur - t_prev;
      design(i, k) = t_next;
      t_prev = t_cur;
      t_cur = t_next;
    }
  }
  std::vector<double> target(sample_count);
  for (std::size_t i = 0; i < sample_count; ++i) target[i] = ys(i, 0);
  const auto coef = least_squares(design, target);
  double worst = 0.0;
  for (std::size_t i = 0; i < sample_count; ++i) {
    double fit = 0.0;
    for (std::size_t k = 0; k < terms; ++k) fit += design(i, k) * coef[k];
    worst = std::max(worst, std::abs(fit - target[i]));
  }
  return worst;
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

constexpr const char* kCheckpointMagic = "bernnet-checkpoint";
constexpr int kCheckpointVersion = 1;

std::string hex(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%a", v);
  return buf;
}

void write_layers(std::ostream& out, const std::vector<LayerSpec>& layers) {
  out << "layers " << layers.size() << "\n";
  for (const auto& layer : layers) {
    std::visit(overloaded{
                   [&](const LinearSpec& s) {
                     out << "linear " << s.in << " " << s.out << " "
                         << (s.init == WeightInit::kaiming ? "kaiming" : "lecun") << "\n";
                   },
                   [&](const BatchNormSpec& s) {
                     out << "batch_norm " << s.features << " " << hex(s.eps) << " " << hex(s.momentum)
                         << " " << (s.affine ? 1 : 0) << "\n";
                   },
                   [&](const ClampSpec& s) {
                     out << "clamp " << hex(s.lower) << " " << hex(s.upper) << " "
                         << (s.straight_through ? 1 : 0) << "\n";
                   },
                   [&](const ActivationSpec& s) {
                     out << "activation " << to_string(s.kind) << " " << s.width << " "
                         << hex(s.leaky_slope) << " " << s.bernstein.degree << " "
                         << hex(s.bernstein.lower) << " " << hex(s.bernstein.upper) << " "
                         << hex(s.bernstein.delta) << " "
                         << (s.sharing == CoefficientSharing::per_neuron ? "per_neuron" : "per_layer")
                         << " " << to_string(s.init) << "\n";
                   },
                   [&](const ResidualSpec& s) {
                     out << "residual\n";
                     write_layers(out, s.inner);
                   },
               },
               layer.layer);
  }
}

class TokenReader {
 public:
  explicit TokenReader(std::istream& in) : in_(in) {}

  std::string word(const char* what) {
    std::string s;
    if (!(in_ >> s)) throw ParseError(std::string("checkpoint truncated while reading ") + what);
    return s;
  }
  void expect(const char* literal) {
    const auto s = word(literal);
    if (s != literal) throw ParseError("checkpoint: expected '" + std::string(literal) + "', got '" + s + "'");
  }
  std::size_t count(const char* what) {
    const auto s = word(what);
    char* end = nullptr;
    const unsigned long long v = std::strtoull(s.c_str(), &end, 10);
    if (end == s.c_str() || *end != '\0') throw ParseError(std::string("checkpoint: bad ") + what + " '" + s + "'");
    return static_cast<std::size_t>(v);
  }
  double real(const char* what) {
    const auto s = word(what);
    char* end = nullptr;
    const double v = std::strtod(s.c_str(), &end);
    if (end == s.c_str() || *end != '\0') throw ParseError(std::string("checkpoint: bad ") + what + " '" + s + "'");
    return v;
  }

 private:
  std::istream& in_;
};

std::vector<LayerSpec> read_layers(TokenReader& r) {
  r.expect("layers");
  const std::size_t n = r.count("layer count");
  std::vector<LayerSpec> layers;
  for (std::size_t i = 0; i < n; ++i) {
    const std::string kind = r.word("layer kind");
    if (kind == "linear") {
      LinearSpec s;
      s.in = r.count("linear in");
      s.out = r.count("linear out");
      const auto init = r.word("linear init");
      if (init != "kaiming" && init != "lecun") throw ParseError("checkpoint: bad init '" + init + "'");
      s.init = init == "kaiming" ? WeightInit::kaiming : WeightInit::lecun;
      layers.push_back({s});
    } else if (kind == "batch_norm") {
      BatchNormSpec s;
      s.features = r.count("features");
      s.eps = r.real("eps");
      s.momentum = r.real("momentum");
      s.affine = r.count("affine") != 0;
      layers.push_back({s});
    } else if (kind == "clamp") {
      ClampSpec s;
      s.lower = r.real("clamp lower");
      s.upper = r.real("clamp upper");
      s.straight_through = r.count("straight_through") != 0;
      layers.push_back({s});
    } else if (kind == "activation") {
      ActivationSpec s;
      s.kind = activation_kind_from_string(r.word("activation kind"));
      s.width = r.count("width");
      s.leaky_slope = r.real("leaky slope");
      s.bernstein.degree = static_cast<int>(r.count("degree"));
      s.bernstein.lower = r.real("lower");
      s.bernstein.upper = r.real("upper");
      s.bernstein.delta = r.real("delta");
      const auto sharing = r.word("sharing");
      if (sharing != "per_neuron" && sharing != "per_layer") throw ParseError("checkpoint: bad sharing '" + sharing + "'");
      s.sharing = sharing == "per_neuron" ? CoefficientSharing::per_neuron : CoefficientSharing::per_layer;
      s.init = init_mode_from_string(r.word("init mode"));
      layers.push_back({s});
    } else if (kind == "residual") {
      layers.push_back({ResidualSpec{read_layers(r)}});
    } else {
      throw ParseError("checkpoint: unknown layer kind '" + kind + "'");
    }
  }
  return layers;
}

}  // namespace

void write_checkpoint(const std::string& path, const Network& net, const Parameters& params) {
  require_layout(net, params);
  std::ofstream out(path);
  if (!out) throw IoError("cannot write checkpoint " + path);
  out << kCheckpointMagic << " " << kCheckpointVersion << "\n";
  out << "input_width " << net.input_width() << "\n";
  out << "allow_unguarded_bernstein " << (net.options().allow_unguarded_bernstein ? 1 : 0) << "\n";
  write_layers(out, net.layers());
  out << "tensors " << params.tensors.size() << "\n";
  for (const auto& t : params.tensors) {
    out << "tensor " << t.name << " " << to_string(t.role) << " " << t.value.rows() << " "
        << t.value.cols() << "\n";
    bool first = true;
    for (double v : t.value.values()) {
      if (!first) out << ' ';
      out << hex(v);
      first = false;
    }
    out << "\n";
  }
  out << "end\n";
  if (!out) throw IoError("failed writing checkpoint " + path);
}

Checkpoint read_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open checkpoint " + path);
  TokenReader r(in);
  if (r.word("magic") != kCheckpointMagic) throw ParseError("not a bernnet checkpoint: " + path);
  const std::size_t version = r.count("version");
  if (version != kCheckpointVersion) {
    throw ParseError("unsupported checkpoint version " + std::to_string(version));
  }
  r.expect("input_width");
  const std::size_t input_width = r.count("input width");
  r.expect("allow_unguarded_bernstein");
  NetworkOptions options;
  options.allow_unguarded_bernstein = r.count("flag") != 0;
  auto layers = read_layers(r);
  Checkpoint ck{Network(input_width, std::move(layers), options), {}};
  ck.parameters = ck.network.zero_parameters();
  r.expect("tensors");
  const std::size_t count = r.count("tensor count");
  if (count != ck.parameters.tensors.size()) {
    throw ParseError("checkpoint: tensor count does not match the stored architecture");
  }
  for (auto& t : ck.parameters.tensors) {
    r.expect("tensor");
    const auto name = r.word("tensor name");
    const auto role = param_role_from_string(r.word("tensor role"));
    const std::size_t rows = r.count("rows"), cols = r.count("cols");
    if (name != t.name || role != t.role || rows != t.value.rows() || cols != t.value.cols()) {
      throw ParseError("checkpoint: tensor " + name + " does not match the stored architecture");
    }
    for (double& v : t.value.values()) v = r.real("tensor value");
  }
  r.expect("end");
  ck.parameters.touch();
  return ck;
}

}  // namespace bernnet
