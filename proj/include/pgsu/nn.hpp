#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "pgsu/rng.hpp"
#include "pgsu/tensor.hpp"

namespace pgsu {

struct Parameter {
  std::string name;
  Tensor tensor;
  bool trainable = true;
};

/// Ordered registry of named parameters. Names encode the module path
/// ("interleave.0.self.wq").
class ParameterStore {
 public:
  /// Glorot-uniform init in +-sqrt(6 / (fan_in + fan_out)).
  Tensor add_glorot(const std::string& name, std::size_t fan_in, std::size_t fan_out, Rng& rng);
  Tensor add_constant(const std::string& name, Shape shape, double value);

  const std::vector<Parameter>& params() const { return params_; }
  std::vector<Parameter>& params() { return params_; }
  const Parameter* find(const std::string& name) const;
  Parameter* find(const std::string& name);
  std::size_t total_count() const;
  void zero_grad();
  void set_trainable_prefix(const std::string& prefix, bool trainable);

 private:
  Tensor add(const std::string& name, Shape shape, std::vector<double> values);

  std::vector<Parameter> params_;
};

/// Forward-pass mode. Dropout is active only when `training` is set.
struct ForwardContext {
  bool training = false;
  double dropout = 0.0;
  Rng* rng = nullptr;
};

struct Linear {
  Tensor weight;  // [in, out]
  Tensor bias;    // [out], undefined when bias-free

  static Linear create(ParameterStore& store, const std::string& prefix, std::size_t in,
                       std::size_t out, Rng& rng, bool with_bias = true);
  Tensor operator()(const Tensor& x) const { return linear(x, weight, bias); }
  std::size_t in() const { return weight.dim(0); }
  std::size_t out() const { return weight.dim(1); }
};

/// Stack of linear layers with ReLU (and dropout) between them; the last
/// layer is linear.
struct Mlp {
  std::vector<Linear> layers;

  /// widths = {in, hidden..., out}; layers are named prefix + "0", "1", ...
  static Mlp create(ParameterStore& store, const std::string& prefix,
                    const std::vector<std::size_t>& widths, Rng& rng);
  Tensor operator()(const Tensor& x, const ForwardContext& ctx) const;
};

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct OptimizerState {
  AdamConfig config;
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
  std::uint64_t step = 0;
};

OptimizerState make_optimizer(const ParameterStore& store, AdamConfig config = {});

/// Bias-corrected Adam update of every trainable parameter with a gradient.
void adam_step(ParameterStore& store, OptimizerState& state, double lr);

/// base * 0.5 * (1 + cos(pi * step / total)), clamped to [0, total].
double cosine_lr(std::uint64_t step, std::uint64_t total_steps, double base_lr);

}  // namespace pgsu
