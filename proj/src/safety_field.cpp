#include "pgsu/safety_field.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>
#include <string>

#include "pgsu/error.hpp"

namespace pgsu {

void FieldParams::validate(double min_bbox_dim) const {
  const double coeffs[] = {G, vehicle_mass, a_coef, b_coef, c_coef, k1, k2,
                           r_min, grid_res, pedestrian_mass_scale, cyclist_mass_scale};
  for (double c : coeffs)
    if (!(c > 0.0) || !std::isfinite(c))
      fail(ErrorKind::usage, "field parameters must be finite and strictly positive");
  if (grid_res > min_bbox_dim / 2.0)
    fail(ErrorKind::usage, "field grid_res " + std::to_string(grid_res) +
                               " exceeds half the smallest bbox dimension");
}

FieldSource make_source(const AgentTrack& track, const FieldParams& params) {
  double mass = params.vehicle_mass;
  if (track.type == AgentType::pedestrian) mass *= params.pedestrian_mass_scale;
  if (track.type == AgentType::cyclist) mass *= params.cyclist_mass_scale;
  return {track.positions.back(), track.velocities.back(), mass};
}

OrientedBox ego_box(const AgentTrack& track, double heading) {
  return {track.positions.back(), heading, track.length, track.width,
          track.velocities.back()};
}

double static_energy(const FieldSource& source, Vec2 query, const FieldParams& params) {
  const double r = std::max(distance(query, source.position), params.r_min);
  const double speed = norm(source.velocity);
  const double equivalent_mass =
      source.mass * (params.a_coef * std::pow(speed, params.c_coef) + params.b_coef);
  return params.G * equivalent_mass / (r * r);
}

double dynamic_energy(const FieldSource& source, Vec2 query, Vec2 query_velocity,
                      const FieldParams& params) {
  const Vec2 dv = query_velocity - source.velocity;
  const Vec2 dr = query - source.position;
  const double r = std::max(norm(dr), params.r_min);
  const double sign = params.negate_exponent ? -1.0 : 1.0;
  return params.k1 * dot(dv, dv) * std::exp(sign * params.k2 * dot(dv, dr)) / r;
}

double total_energy(const FieldSource& source, Vec2 query, Vec2 query_velocity,
                    const FieldParams& params) {
  return static_energy(source, query, params) +
         dynamic_energy(source, query, query_velocity, params);
}

double box_mean(const OrientedBox& box, double res,
                const std::function<double(Vec2)>& field) {
  if (!(res > 0.0)) fail(ErrorKind::usage, "quadrature spacing must be positive");
  if (!(box.length > 0.0) || !(box.width > 0.0))
    fail(ErrorKind::data, "ego bbox area must be positive");
  if (res > std::min(box.length, box.width) / 2.0)
    fail(ErrorKind::usage, "quadrature spacing too coarse for the ego bbox");

  const auto cells = [res](double extent) {
    return static_cast<std::size_t>(std::ceil(extent / res - 1e-9));
  };
  const std::size_t nu = cells(box.length);
  const std::size_t nv = cells(box.width);
  const double du = box.length / static_cast<double>(nu);
  const double dv = box.width / static_cast<double>(nv);
  const Vec2 axis_u{std::cos(box.heading), std::sin(box.heading)};
  const Vec2 axis_v{-axis_u.y, axis_u.x};

  double sum = 0.0;
  for (std::size_t i = 0; i < nu; ++i) {
    const double u = -0.5 * box.length + (static_cast<double>(i) + 0.5) * du;
    for (std::size_t j = 0; j < nv; ++j) {
      const double v = -0.5 * box.width + (static_cast<double>(j) + 0.5) * dv;
      sum += field(box.center + u * axis_u + v * axis_v);
    }
  }
  return sum / static_cast<double>(nu * nv);
}

double virtual_force(const FieldSource& source, const OrientedBox& ego,
                     const FieldParams& params) {
  return box_mean(ego, params.grid_res, [&](Vec2 q) {
    return total_energy(source, q, ego.velocity, params);
  });
}

std::vector<double> normalize_forces(std::span<const double> raw,
                                     std::span<const std::uint8_t> valid) {
  std::vector<double> out(raw.size(), 0.0);
  double lo = std::numeric_limits<double>::infinity();
  double hi = -lo;
  for (std::size_t i = 0; i < raw.size(); ++i) {
    if (!valid[i]) continue;
    lo = std::min(lo, raw[i]);
    hi = std::max(hi, raw[i]);
  }
  if (!(hi >= lo)) return out;  // no valid entries
  const double span = hi - lo;
  for (std::size_t i = 0; i < raw.size(); ++i) {
    if (!valid[i]) continue;
    if (span > 0.0) {
      out[i] = (raw[i] - lo) / span;
    } else {
      out[i] = hi > kVifDegenerateEps ? 1.0 : 0.0;
    }
  }
  return out;
}

VifTarget vif_vector(const Scene& scene, std::span<const std::size_t> slots,
                     std::size_t slot_count, const FieldParams& params) {
  if (slots.empty() || slots.front() >= scene.agents.size())
    fail(ErrorKind::data, "vif_vector: ego not present");
  if (slots.size() > slot_count)
    fail(ErrorKind::usage, "vif_vector: more occupied slots than slot_count");

  const AgentTrack& ego_track = scene.agents[slots.front()];
  params.validate(std::min(ego_track.length, ego_track.width));
  const FrameResult frame = make_frame(scene);
  const OrientedBox ego = ego_box(ego_track, frame.frame.heading);

  VifTarget out;
  out.raw.assign(slot_count, 0.0);
  out.valid.assign(slot_count, 0);
  for (std::size_t k = 1; k < slots.size(); ++k) {
    const FieldSource src = make_source(scene.agents.at(slots[k]), params);
    out.raw[k] = virtual_force(src, ego, params);
    out.valid[k] = 1;
  }
  out.forces = normalize_forces(out.raw, out.valid);
  return out;
}

FieldGrid render_field(const Scene& scene, const Region& region, double resolution,
                       const FieldParams& params) {
  if (!(resolution > 0.0)) fail(ErrorKind::usage, "render resolution must be positive");
  const double w = region.max.x - region.min.x;
  const double h = region.max.y - region.min.y;
  if (!(w > 0.0) || !(h > 0.0)) fail(ErrorKind::usage, "render region has no area");

  FieldGrid grid;
  grid.width = static_cast<std::size_t>(std::ceil(w / resolution - 1e-9));
  grid.height = static_cast<std::size_t>(std::ceil(h / resolution - 1e-9));
  grid.resolution = resolution;
  grid.origin = region.min;
  grid.values.assign(grid.width * grid.height, 0.0);

  std::vector<FieldSource> sources;
  for (std::size_t i = 0; i < scene.agents.size(); ++i)
    if (i != scene.target) sources.push_back(make_source(scene.agents[i], params));
  const Vec2 ego_velocity = scene.target < scene.agents.size()
                                ? scene.agents[scene.target].velocities.back()
                                : Vec2{};

  for (std::size_t r = 0; r < grid.height; ++r) {
    for (std::size_t c = 0; c < grid.width; ++c) {
      const Vec2 q{region.min.x + (static_cast<double>(c) + 0.5) * resolution,
                   region.min.y + (static_cast<double>(r) + 0.5) * resolution};
      double e = 0.0;
      for (const auto& s : sources) e += total_energy(s, q, ego_velocity, params);
      grid.values[r * grid.width + c] = e;
    }
  }
  return grid;
}

void write_field_text(std::ostream& os, const FieldGrid& grid) {
  const auto old_precision = os.precision(17);
  os << grid.width << ' ' << grid.height << ' ' << grid.resolution << ' '
     << grid.origin.x << ' ' << grid.origin.y << '\n';
  for (std::size_t r = 0; r < grid.height; ++r) {
    for (std::size_t c = 0; c < grid.width; ++c) {
      if (c) os << ' ';
      os << grid.values[r * grid.width + c];
    }
    os << '\n';
  }
  os.precision(old_precision);
}

void write_field_pgm(std::ostream& os, const FieldGrid& grid) {
  double lo = 0.0;
  double hi = 0.0;
  if (!grid.values.empty()) {
    const auto [mn, mx] = std::minmax_element(grid.values.begin(), grid.values.end());
    lo = *mn;
    hi = *mx;
  }
  os << "P5\n" << grid.width << ' ' << grid.height << "\n255\n";
  const double span = hi - lo;
  for (std::size_t r = grid.height; r-- > 0;) {
    for (std::size_t c = 0; c < grid.width; ++c) {
      const double v = grid.values[r * grid.width + c];
      const double u = span > 0.0 ? (v - lo) / span : 0.0;
      os.put(static_cast<char>(static_cast<unsigned char>(std::lround(u * 255.0))));
    }
  }
}

}  // namespace pgsu
