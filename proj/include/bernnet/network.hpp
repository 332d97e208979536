#pragma once

// Layer stacks with a hand-written reverse pass.
//
// A Network is an immutable architecture: the LayerSpec tree is flattened into
// a list of ops (residual blocks become begin/end markers). Parameters live
// outside the network as a flat list of named tensors, so optimizers,
// checkpoints and gradient checks can walk them uniformly, and two parameter
// copies can be driven through the same network independently.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "bernnet/activations.hpp"
#include "bernnet/bernstein.hpp"
#include "bernnet/numcore.hpp"
#include "bernnet/rng.hpp"

namespace bernnet {

enum class WeightInit { kaiming, lecun };

struct LinearSpec {
  std::size_t in = 0;
  std::size_t out = 0;
  WeightInit init = WeightInit::lecun;  // N(0, 2/fan_in) for kaiming, N(0, 1/fan_in) for lecun
};

struct BatchNormSpec {
  std::size_t features = 0;
  double eps = 1e-5;
  double momentum = 0.1;
  bool affine = true;
};

struct ClampSpec {
  double lower = -3.0;
  double upper = 3.0;
  bool straight_through = false;  // gradient 1 everywhere instead of the hard-clamp mask
};

enum class CoefficientSharing { per_neuron, per_layer };

struct ActivationSpec {
  ActivationKind kind = ActivationKind::relu;
  std::size_t width = 0;
  double leaky_slope = 0.01;
  BernsteinSpec bernstein{};
  CoefficientSharing sharing = CoefficientSharing::per_neuron;
  InitMode init = InitMode::paper;
};

struct LayerSpec;

/// out = x + inner(x); the inner stack must preserve width.
struct ResidualSpec {
  std::vector<LayerSpec> inner;
};

struct LayerSpec {
  std::variant<LinearSpec, BatchNormSpec, ClampSpec, ActivationSpec, ResidualSpec> layer;
};

LayerSpec linear_layer(std::size_t in, std::size_t out, WeightInit init = WeightInit::lecun);
LayerSpec batch_norm_layer(std::size_t features, bool affine = true);
LayerSpec clamp_layer(double lower, double upper, bool straight_through = false);
LayerSpec activation_layer(ActivationKind kind, std::size_t width, double leaky_slope = 0.01);
LayerSpec bernstein_layer(std::size_t width, const BernsteinSpec& spec,
                          CoefficientSharing sharing = CoefficientSharing::per_neuron,
                          InitMode init = InitMode::paper);
LayerSpec residual_block(std::vector<LayerSpec> inner);

struct NetworkOptions {
  /// Permits Bernstein activations that are not preceded by BatchNorm → Clamp.
  /// Only for analysis nets such as the degree probe.
  bool allow_unguarded_bernstein = false;
};

enum class OpKind { linear, batch_norm, clamp, activation, residual_begin, residual_end };
std::string_view to_string(OpKind kind) noexcept;

struct Op {
  OpKind kind;
  std::variant<std::monostate, LinearSpec, BatchNormSpec, ClampSpec, ActivationSpec> spec;
  std::size_t width_in = 0;
  std::size_t width_out = 0;
  std::size_t first_param = 0;  // index of this op's first tensor in Parameters
  std::size_t activation_index = 0;  // valid for activation ops
  std::string label;
};

enum class ParamRole {
  weight,
  bias,
  bn_gamma,
  bn_beta,
  bn_running_mean,
  bn_running_var,
  bern_c0,
  bern_rho,
};

std::string_view to_string(ParamRole role) noexcept;
ParamRole param_role_from_string(std::string_view name);
bool is_trainable(ParamRole role) noexcept;

struct ParamTensor {
  std::string name;
  ParamRole role;
  Matrix value;
};

class Parameters {
 public:
  std::vector<ParamTensor> tensors;

  /// Identifies the parameter state a forward cache was built from. Optimizer
  /// steps call touch(); running-statistic updates do not.
  std::uint64_t version() const noexcept { return version_; }
  void touch() noexcept;

  std::size_t trainable_count() const noexcept;

 private:
  std::uint64_t version_ = 0;
};

class Network {
 public:
  Network() = default;
  Network(std::size_t input_width, std::vector<LayerSpec> layers, NetworkOptions options = {});

  std::size_t input_width() const noexcept { return input_width_; }
  std::size_t output_width() const noexcept { return output_width_; }
  const std::vector<LayerSpec>& layers() const noexcept { return layers_; }
  const NetworkOptions& options() const noexcept { return options_; }
  const std::vector<Op>& ops() const noexcept { return ops_; }

  std::size_t activation_count() const noexcept { return activation_ops_.size(); }
  /// Op index of the i-th activation in forward order.
  std::size_t activation_op(std::size_t i) const { return activation_ops_.at(i); }
  const ActivationSpec& activation_spec(std::size_t i) const;
  /// Op index of the clamp feeding activation i, if any.
  std::optional<std::size_t> clamp_before_activation(std::size_t i) const;

  Parameters init_parameters(Rng& rng) const;
  /// Empty tensors of the right names/roles/shapes (all zeros).
  Parameters zero_parameters() const;

 private:
  void compile(const std::vector<LayerSpec>& layers, std::size_t& width, std::size_t& next_param);

  std::size_t input_width_ = 0;
  std::size_t output_width_ = 0;
  std::vector<LayerSpec> layers_;
  NetworkOptions options_;
  std::vector<Op> ops_;
  std::vector<std::size_t> activation_ops_;
  std::vector<ParamTensor> param_layout_;
};

enum class Mode { train, eval };

struct OpCache {
  Matrix input;  // op input (pre-clamp values for clamp, post-clamp for activation)
  Matrix normalized;  // BatchNorm x̂
  std::vector<double> inv_std;  // BatchNorm 1/sqrt(var + eps)
  Matrix coefficients;  // Bernstein: one row of n+1 coefficients per coefficient set
};

struct ForwardCache {
  Mode mode = Mode::eval;
  std::uint64_t params_version = 0;
  std::size_t batch_rows = 0;
  std::vector<OpCache> ops;
};

struct ForwardResult {
  Matrix output;
  ForwardCache cache;
};

/// Train mode uses batch statistics and updates BatchNorm running statistics;
/// eval mode uses the running statistics and builds no cache.
ForwardResult forward(const Network& net, Parameters& params, const Matrix& batch, Mode mode);
/// Eval-mode forward without touching params.
Matrix predict(const Network& net, const Parameters& params, const Matrix& batch);

struct BackwardOptions {
  /// Also return ∂loss/∂(output of this op).
  std::optional<std::size_t> capture_output_of_op;
  /// Debug negative control: scales the input-gradient produced by this op by 1.01.
  std::optional<std::size_t> fault_op;
};

struct Gradients {
  std::vector<Matrix> tensors;  // parallel to Parameters::tensors; zero for running statistics
  Matrix input;
  std::optional<Matrix> captured;
};

/// Exact reverse-mode gradients of the scalar loss whose gradient with
/// respect to the network output is loss_grad.
Gradients backward(const Network& net, const Parameters& params, const ForwardCache& cache,
                   const Matrix& loss_grad, const BackwardOptions& options = {});

/// Reconstructed coefficient sets of activation i (one per neuron, or one when shared).
std::vector<std::vector<double>> bernstein_coefficients(const Network& net, const Parameters& params,
                                                        std::size_t activation_index);

/// check_diagonal_bound over every Bernstein activation; the returned vector
/// has one entry per activation (non-Bernstein activations report holds=true).
std::vector<DiagonalBoundReport> check_network_bounds(const Network& net, const Parameters& params);

/// Least-squares fits a degree-`probe_degree` polynomial to the scalar map
/// x ↦ net(x) on `sample_count` Chebyshev nodes of [lo, hi] and returns the
/// max absolute residual. The net may contain only Linear and Bernstein
/// layers; pre-activations leaving an interval raise DomainError.
double effective_degree_probe(const Network& net, const Parameters& params, int probe_degree,
                              std::size_t sample_count, double lo, double hi);

/// Versioned text checkpoint; parameter values are written as hex floats so a
/// read gives back bitwise-identical tensors.
void write_checkpoint(const std::string& path, const Network& net, const Parameters& params);
struct Checkpoint {
  Network network;
  Parameters parameters;
};
Checkpoint read_checkpoint(const std::string& path);

}  // namespace bernnet
