#include "pgsu/nn.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "pgsu/error.hpp"

namespace pgsu {

Tensor ParameterStore::add(const std::string& name, Shape shape, std::vector<double> values) {
  if (find(name)) fail(ErrorKind::internal, "duplicate parameter name '" + name + "'");
  Tensor t = Tensor::from(std::move(shape), std::move(values), true);
  params_.push_back({name, t, true});
  return t;
}

Tensor ParameterStore::add_glorot(const std::string& name, std::size_t fan_in,
                                  std::size_t fan_out, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::vector<double> v(fan_in * fan_out);
  for (double& x : v) x = rng.uniform(-limit, limit);
  return add(name, {fan_in, fan_out}, std::move(v));
}

Tensor ParameterStore::add_constant(const std::string& name, Shape shape, double value) {
  std::vector<double> v(shape_size(shape), value);
  return add(name, std::move(shape), std::move(v));
}

const Parameter* ParameterStore::find(const std::string& name) const {
  for (const auto& p : params_)
    if (p.name == name) return &p;
  return nullptr;
}

Parameter* ParameterStore::find(const std::string& name) {
  for (auto& p : params_)
    if (p.name == name) return &p;
  return nullptr;
}

std::size_t ParameterStore::total_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.tensor.size();
  return n;
}

void ParameterStore::zero_grad() {
  for (auto& p : params_) p.tensor.zero_grad();
}

void ParameterStore::set_trainable_prefix(const std::string& prefix, bool trainable) {
  for (auto& p : params_)
    if (p.name.starts_with(prefix)) p.trainable = trainable;
}

Linear Linear::create(ParameterStore& store, const std::string& prefix, std::size_t in,
                      std::size_t out, Rng& rng, bool with_bias) {
  Linear l;
  l.weight = store.add_glorot(prefix + ".weight", in, out, rng);
  if (with_bias) l.bias = store.add_constant(prefix + ".bias", {out}, 0.0);
  return l;
}

Mlp Mlp::create(ParameterStore& store, const std::string& prefix,
                const std::vector<std::size_t>& widths, Rng& rng) {
  if (widths.size() < 2) fail(ErrorKind::internal, "Mlp needs at least in and out widths");
  Mlp m;
  for (std::size_t i = 0; i + 1 < widths.size(); ++i)
    m.layers.push_back(
        Linear::create(store, prefix + std::to_string(i), widths[i], widths[i + 1], rng));
  return m;
}

Tensor Mlp::operator()(const Tensor& x, const ForwardContext& ctx) const {
  Tensor h = x;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    h = layers[i](h);
    if (i + 1 < layers.size()) h = dropout(relu(h), ctx.dropout, ctx.training, ctx.rng);
  }
  return h;
}

OptimizerState make_optimizer(const ParameterStore& store, AdamConfig config) {
  OptimizerState s;
  s.config = config;
  for (const auto& p : store.params()) {
    s.m.emplace_back(p.tensor.size(), 0.0);
    s.v.emplace_back(p.tensor.size(), 0.0);
  }
  return s;
}

void adam_step(ParameterStore& store, OptimizerState& state, double lr) {
  auto& params = store.params();
  if (state.m.size() != params.size())
    fail(ErrorKind::internal, "optimizer state does not match parameter set");
  ++state.step;
  const auto& c = state.config;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(c.beta1, t);
  const double bc2 = 1.0 - std::pow(c.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i];
    if (!p.trainable || !p.tensor.has_grad()) continue;
    const auto g = p.tensor.grad_view();
    auto w = p.tensor.mutable_values();
    auto& m = state.m[i];
    auto& v = state.v[i];
    for (std::size_t j = 0; j < w.size(); ++j) {
      m[j] = c.beta1 * m[j] + (1.0 - c.beta1) * g[j];
      v[j] = c.beta2 * v[j] + (1.0 - c.beta2) * g[j] * g[j];
      const double mhat = m[j] / bc1;
      const double vhat = v[j] / bc2;
      w[j] -= lr * mhat / (std::sqrt(vhat) + c.eps);
    }
  }
}

double cosine_lr(std::uint64_t step, std::uint64_t total_steps, double base_lr) {
  if (total_steps == 0) return base_lr;
  const double s = static_cast<double>(std::min(step, total_steps));
  return base_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * s / static_cast<double>(total_steps)));
}

}  // namespace pgsu
