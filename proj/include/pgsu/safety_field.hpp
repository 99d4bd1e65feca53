#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <span>
#include <vector>

#include "pgsu/scene.hpp"

namespace pgsu {

/// Driving-safety-field coefficients. Defaults are desk-scale choices; VIF
/// targets are min-max normalized so only ratios matter for training.
struct FieldParams {
  double G = 1.0;
  double vehicle_mass = 1500.0;
  double a_coef = 1.0;
  double b_coef = 1.0;
  double c_coef = 1.0;
  double k1 = 1.0;
  double k2 = 0.05;
  double r_min = 0.5;
  double grid_res = 0.2;
  /// Flips the sign of the dynamic-energy exponent (closing geometry then
  /// carries more energy than opening geometry).
  bool negate_exponent = false;
  double pedestrian_mass_scale = 0.05;
  double cyclist_mass_scale = 0.1;

  /// Throws Error(usage) unless every coefficient is strictly positive and
  /// grid_res fits at least twice into `min_bbox_dim`.
  void validate(double min_bbox_dim) const;
};

/// An agent radiating field energy, sampled at one instant.
struct FieldSource {
  Vec2 position;
  Vec2 velocity;
  double mass = 1500.0;
};

FieldSource make_source(const AgentTrack& track, const FieldParams& params);

/// Footprint of the ego vehicle the field is integrated over.
struct OrientedBox {
  Vec2 center;
  double heading = 0.0;
  double length = 4.8;
  double width = 1.8;
  Vec2 velocity;
};

OrientedBox ego_box(const AgentTrack& track, double heading);

// G * M_eq / max(r, r_min)^2 with M_eq = mass * (a * |v|^c + b).
double static_energy(const FieldSource& source, Vec2 query, const FieldParams& params);

// k1 |dv|^2 exp(k2 dv.dr) / max(r, r_min), dv = v_query - v_source,
// dr = query - source.
double dynamic_energy(const FieldSource& source, Vec2 query, Vec2 query_velocity,
                      const FieldParams& params);

double total_energy(const FieldSource& source, Vec2 query, Vec2 query_velocity,
                    const FieldParams& params);

/// Midpoint-rule mean of `field` over the box: ceil(extent / res) cells per
/// axis, cells shrunk so the grid covers the box exactly.
double box_mean(const OrientedBox& box, double res,
                const std::function<double(Vec2)>& field);

/// Mean total energy of `source` over the ego box (raw virtual force).
double virtual_force(const FieldSource& source, const OrientedBox& ego,
                     const FieldParams& params);

struct VifTarget {
  std::vector<double> forces;       // N_a normalized values, padded slots 0
  std::vector<std::uint8_t> valid;  // slot 0 (ego) and padding are false
  std::vector<double> raw;          // unnormalized forces, 0 where invalid
};

inline constexpr double kVifDegenerateEps = 1e-12;

/// Min-max normalization over valid entries. When all valid forces are equal
/// the result is 1 if the common value exceeds kVifDegenerateEps, else 0.
std::vector<double> normalize_forces(std::span<const double> raw,
                                     std::span<const std::uint8_t> valid);

/// `slots[k]` is the scene agent index occupying feature slot k (slot 0 is
/// the ego), as recorded by build_agent_features; `slot_count` is N_a.
VifTarget vif_vector(const Scene& scene, std::span<const std::size_t> slots,
                     std::size_t slot_count, const FieldParams& params);

struct Region {
  Vec2 min;
  Vec2 max;
};

struct FieldGrid {
  std::size_t width = 0;
  std::size_t height = 0;
  double resolution = 0.0;
  Vec2 origin;                 // region min corner
  std::vector<double> values;  // row-major, row 0 at origin.y
};

/// Total energy from every non-target agent, sampled at cell centers. The
/// query velocity is the target's current velocity.
FieldGrid render_field(const Scene& scene, const Region& region, double resolution,
                       const FieldParams& params);

/// Text export: header line "width height resolution origin_x origin_y", then
/// one line of values per row.
void write_field_text(std::ostream& os, const FieldGrid& grid);

/// Binary PGM (P5), 8-bit, linear map of [min, max] to [0, 255]; row 0 of the
/// image is the top (max y) row of the grid.
void write_field_pgm(std::ostream& os, const FieldGrid& grid);

}  // namespace pgsu
