#include "pgsu/sample.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <numeric>
#include <thread>

#include "pgsu/error.hpp"

namespace pgsu {

Sample prepare_sample(const Scene& scene, const FeatureDims& dims, const FieldParams* field) {
  validate(scene);
  Sample s;
  const FrameResult fr = make_frame(scene);
  s.frame = fr.frame;
  s.degenerate_heading = fr.degenerate_heading;
  s.agents = build_agent_features(scene, s.frame, dims);
  s.map = build_map_features(scene, s.frame, dims);
  if (field != nullptr) s.vif = vif_vector(scene, s.agents.source, dims.max_agents, *field);
  return s;
}

Sample prepare_sample(const LabeledScene& scene, const ModelConfig& model,
                      const FieldParams* field) {
  if (scene.future.size() != model.future_steps) {
    fail(ErrorKind::data, "scene future has " + std::to_string(scene.future.size()) +
                              " points, model expects " + std::to_string(model.future_steps));
  }
  Sample s = prepare_sample(scene.scene, model.dims, field);
  s.future_local.reserve(scene.future.size());
  for (Vec2 p : scene.future) s.future_local.push_back(s.frame.to_local(p));
  s.intention = scene.intention;
  return s;
}

std::vector<Sample> prepare_samples(std::span<const LabeledScene> scenes, const ModelConfig& model,
                                    const FieldParams* field, std::size_t workers) {
  std::vector<Sample> out(scenes.size());
  parallel_for(scenes.size(), workers, [&](std::size_t i) {
    try {
      out[i] = prepare_sample(scenes[i], model, field);
    } catch (const Error& e) {
      fail(e.kind(), "scene " + std::to_string(i) + ": " + e.what());
    }
  });
  return out;
}

void parallel_for(std::size_t n, std::size_t workers, const std::function<void(std::size_t)>& fn) {
  workers = std::max<std::size_t>(1, std::min(workers, n));
  if (workers == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::exception_ptr> errors(workers);
  std::vector<std::thread> threads;
  for (std::size_t w = 0; w < workers; ++w) {
    threads.emplace_back([&, w] {
      try {
        for (std::size_t i = w; i < n; i += workers) fn(i);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (std::thread& t : threads) t.join();
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

std::vector<std::size_t> permutation(std::size_t n, Rng& rng) {
  std::vector<std::size_t> p(n);
  std::iota(p.begin(), p.end(), std::size_t{0});
  for (std::size_t i = n; i > 1; --i) std::swap(p[i - 1], p[rng.index(i)]);
  return p;
}

Split split_indices(std::size_t n, double held_out_fraction, std::uint64_t seed) {
  if (!(held_out_fraction >= 0.0 && held_out_fraction < 1.0)) {
    fail(ErrorKind::usage, "held-out fraction must be in [0, 1)");
  }
  Rng rng(derive_seed(seed, "split"));
  std::vector<std::size_t> p = permutation(n, rng);
  const auto held = static_cast<std::size_t>(std::lround(held_out_fraction * static_cast<double>(n)));
  Split s;
  s.train.assign(p.begin(), p.end() - static_cast<std::ptrdiff_t>(held));
  s.held_out.assign(p.end() - static_cast<std::ptrdiff_t>(held), p.end());
  return s;
}

}  // namespace pgsu
