#include "pgsu/scenario.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numbers>
#include <optional>
#include <string>

#include "pgsu/error.hpp"

namespace pgsu {

namespace {

constexpr double kPi = std::numbers::pi;
constexpr double kMaxVehicleWidth = 2.0;
constexpr double kClearance = 0.25;  // m between vehicle discs
constexpr double kUrbanArmLength = 60.0;
constexpr double kUrbanLateralAccel = 3.5;  // m/s^2 cap when choosing turn speeds

struct State {
  Vec2 position;
  Vec2 velocity;
  double heading = 0.0;
};

using Motion = std::function<State(double)>;

struct Actor {
  Motion motion;
  AgentType type = AgentType::vehicle;
  double length = 4.8;
  double width = 1.8;
};

Vec2 unit(double angle) { return {std::cos(angle), std::sin(angle)}; }

Vec2 rotate(Vec2 v, double angle) {
  const double c = std::cos(angle);
  const double s = std::sin(angle);
  return {c * v.x - s * v.y, s * v.x + c * v.y};
}

struct Rigid {
  double angle = 0.0;
  Vec2 offset;

  Vec2 point(Vec2 p) const { return rotate(p, angle) + offset; }
  Vec2 vec(Vec2 v) const { return rotate(v, angle); }
};

/// Sample times: history t = -H/hz .. 0, future t = 1/hz .. F/hz.
std::vector<double> history_times(const GenConfig& c) {
  std::vector<double> t(c.history_steps + 1);
  for (std::size_t i = 0; i <= c.history_steps; ++i) {
    t[i] = -static_cast<double>(c.history_steps - i) / c.hz;
  }
  return t;
}

std::vector<double> window_times(const GenConfig& c) {
  std::vector<double> t = history_times(c);
  for (std::size_t k = 1; k <= c.future_steps; ++k) t.push_back(static_cast<double>(k) / c.hz);
  return t;
}

/// Vehicles are approximated by three discs along the heading.
bool collide(const Actor& a, const Actor& b, std::span<const double> times) {
  auto discs = [](const Actor& x, const State& s) {
    const double r = 0.5 * x.width;
    const double reach = std::max(0.0, 0.5 * x.length - r);
    const Vec2 d = unit(s.heading);
    return std::array<Vec2, 3>{s.position - reach * d, s.position, s.position + reach * d};
  };
  const double min_gap = 0.5 * a.width + 0.5 * b.width + kClearance;
  for (double t : times) {
    const auto da = discs(a, a.motion(t));
    const auto db = discs(b, b.motion(t));
    for (Vec2 p : da) {
      for (Vec2 q : db) {
        if (distance(p, q) < min_gap) return true;
      }
    }
  }
  return false;
}

bool collides_any(const Actor& a, std::span<const Actor> placed, std::span<const double> times) {
  return std::any_of(placed.begin(), placed.end(),
                     [&](const Actor& b) { return collide(a, b, times); });
}

std::size_t uniform_count(Rng& rng, std::size_t lo, std::size_t hi) {
  return lo + static_cast<std::size_t>(rng.index(hi - lo + 1));
}

Intention choose_intention(Rng& rng, const GenConfig& c) {
  const double u = rng.uniform();
  if (u < c.p_left) return Intention::left;
  if (u < c.p_left + c.p_right) return Intention::right;
  return Intention::straight;
}

void vehicle_size(Rng& rng, Actor& a) {
  a.length = rng.uniform(4.2, 5.2);
  a.width = rng.uniform(1.7, kMaxVehicleWidth);
}

/// Samples tracks, applies the global transform and observation noise.
LabeledScene assemble(const GenConfig& c, const std::vector<Actor>& actors,
                      std::vector<LanePolyline> lanes, Intention intention, Rng& rng) {
  const Rigid rigid{rng.uniform(-kPi, kPi), {rng.uniform(-200.0, 200.0), rng.uniform(-200.0, 200.0)}};
  const std::vector<double> hist = history_times(c);

  LabeledScene out;
  out.scene.hz = c.hz;
  out.scene.target = 0;
  out.intention = intention;
  for (const Actor& a : actors) {
    AgentTrack track;
    track.type = a.type;
    track.length = a.length;
    track.width = a.width;
    for (double t : hist) {
      const State s = a.motion(t);
      track.positions.push_back(rigid.point(s.position));
      track.velocities.push_back(rigid.vec(s.velocity));
    }
    out.scene.agents.push_back(std::move(track));
  }
  for (std::size_t k = 1; k <= c.future_steps; ++k) {
    out.future.push_back(rigid.point(actors[0].motion(static_cast<double>(k) / c.hz).position));
  }
  if (c.noise_std > 0.0) {
    for (AgentTrack& track : out.scene.agents) {
      for (Vec2& p : track.positions) {
        p.x += c.noise_std * rng.normal();
        p.y += c.noise_std * rng.normal();
      }
    }
  }
  for (LanePolyline& lane : lanes) {
    for (Vec2& p : lane.points) p = rigid.point(p);
  }
  out.scene.lanes = std::move(lanes);
  return out;
}

LanePolyline straight_lane(Vec2 from, Vec2 to, double spacing, bool turn, bool controlled) {
  LanePolyline lane;
  lane.has_turn = turn;
  lane.traffic_controlled = controlled;
  const double len = distance(from, to);
  const auto n = std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(len / spacing - 1e-9)));
  for (std::size_t i = 0; i <= n; ++i) {
    const double f = static_cast<double>(i) / static_cast<double>(n);
    lane.points.push_back(from + f * (to - from));
  }
  return lane;
}

// ---- highway ---------------------------------------------------------------

/// Cosine lateral profile: 0 before t0, full shift after t0 + duration.
struct LaneChange {
  double t0 = 0.0;
  double duration = 1.0;
  double shift = 0.0;

  double offset(double t) const {
    const double u = std::clamp((t - t0) / duration, 0.0, 1.0);
    return shift * 0.5 * (1.0 - std::cos(kPi * u));
  }
  double rate(double t) const {
    const double u = (t - t0) / duration;
    if (u <= 0.0 || u >= 1.0) return 0.0;
    return shift * 0.5 * kPi / duration * std::sin(kPi * u);
  }
};

Motion lane_keep(double x0, double y, double speed) {
  return [=](double t) { return State{{x0 + speed * t, y}, {speed, 0.0}, 0.0}; };
}

Motion lane_change(double x0, double y, double speed, LaneChange lc) {
  return [=](double t) {
    const double vy = lc.rate(t);
    return State{{x0 + speed * t, y + lc.offset(t)}, {speed, vy}, std::atan2(vy, speed)};
  };
}

std::optional<LabeledScene> highway_scene(const GenConfig& c, Rng& rng) {
  const double w = c.lane_width;
  const std::vector<double> times = window_times(c);
  Intention intention = choose_intention(rng, c);
  if (c.lane_count < 2) intention = Intention::straight;

  std::size_t lane = 0;
  if (intention == Intention::left) {
    lane = rng.index(c.lane_count - 1);
  } else if (intention == Intention::right) {
    lane = 1 + rng.index(c.lane_count - 1);
  } else {
    lane = rng.index(c.lane_count);
  }
  const double y = static_cast<double>(lane) * w;

  std::vector<Actor> actors;
  Actor target;
  vehicle_size(rng, target);
  if (intention == Intention::straight) {
    const double speed = rng.uniform(c.speed_min, c.speed_max);
    target.motion = lane_keep(0.0, y, speed);
    actors.push_back(target);
    if (rng.bernoulli(0.5)) {
      Actor lead;
      vehicle_size(rng, lead);
      lead.motion = lane_keep(rng.uniform(20.0, 45.0), y, rng.uniform(speed, std::max(speed, c.speed_max)));
      if (!collide(target, lead, times)) actors.push_back(lead);
    }
  } else {
    const double speed = rng.uniform(std::min(c.speed_min + 2.0, c.speed_max), c.speed_max);
    LaneChange lc;
    lc.t0 = rng.uniform(-2.0, -0.3);
    lc.duration = rng.uniform(3.0, std::min(5.0, 3.0 - lc.t0));
    lc.shift = intention == Intention::left ? w : -w;
    target.motion = lane_change(0.0, y, speed, lc);
    actors.push_back(target);

    Actor lead;
    vehicle_size(rng, lead);
    bool placed = false;
    for (std::size_t attempt = 0; attempt < c.max_retries && !placed; ++attempt) {
      lead.motion = lane_keep(rng.uniform(15.0, 40.0), y, speed - rng.uniform(2.0, 5.0));
      placed = !collide(target, lead, times);
    }
    if (!placed) return std::nullopt;
    actors.push_back(lead);
  }

  const std::size_t others = uniform_count(rng, c.agents_min, c.agents_max);
  while (actors.size() < others + 1) {
    Actor a;
    vehicle_size(rng, a);
    bool placed = false;
    for (std::size_t attempt = 0; attempt < c.max_retries && !placed; ++attempt) {
      const double ay = static_cast<double>(rng.index(c.lane_count)) * w;
      a.motion = lane_keep(rng.uniform(-60.0, 80.0), ay, rng.uniform(c.speed_min, c.speed_max));
      placed = !collides_any(a, actors, times);
    }
    if (!placed) return std::nullopt;
    actors.push_back(a);
  }

  // Lane pieces cover everything the target can reach in the window.
  const double piece = c.lane_piece_length;
  const double shift = rng.uniform(0.0, piece);
  const double x_lo = std::floor((-3.0 * c.speed_max) / piece) * piece - shift;
  const double x_hi = 4.0 * c.speed_max;
  std::vector<LanePolyline> lanes;
  for (std::size_t l = 0; l < c.lane_count; ++l) {
    const double ly = static_cast<double>(l) * w;
    for (double x = x_lo; x < x_hi; x += piece) {
      lanes.push_back(straight_lane({x, ly}, {x + piece, ly}, 5.0, false, false));
    }
  }
  return assemble(c, actors, std::move(lanes), intention, rng);
}

// ---- urban -----------------------------------------------------------------

/// Piecewise path of straight lines and circular arcs, evaluated by arc length.
class Path {
 public:
  void add_line(Vec2 from, Vec2 to) {
    Piece p;
    p.arc = false;
    p.start = from;
    p.end = to;
    p.length = distance(from, to);
    pieces_.push_back(p);
  }
  /// Arc around `center` from angle a0 sweeping `sweep` radians (sign = turn).
  void add_arc(Vec2 center, double radius, double a0, double sweep) {
    Piece p;
    p.arc = true;
    p.center = center;
    p.radius = radius;
    p.a0 = a0;
    p.sweep = sweep;
    p.length = radius * std::abs(sweep);
    pieces_.push_back(p);
  }

  /// Position and unit tangent at arc length s; clamps before 0 / extends the
  /// last piece past the end.
  std::pair<Vec2, Vec2> at(double s) const {
    for (std::size_t i = 0; i < pieces_.size(); ++i) {
      const Piece& p = pieces_[i];
      if (s <= p.length || i + 1 == pieces_.size()) return eval(p, s);
      s -= p.length;
    }
    return {};
  }

  double piece_length(std::size_t i) const { return pieces_[i].length; }

 private:
  struct Piece {
    bool arc = false;
    Vec2 start, end, center;
    double radius = 0.0, a0 = 0.0, sweep = 0.0, length = 0.0;
  };

  static std::pair<Vec2, Vec2> eval(const Piece& p, double s) {
    if (!p.arc) {
      const Vec2 d = (1.0 / p.length) * (p.end - p.start);
      return {p.start + s * d, d};
    }
    const double dir = p.sweep > 0.0 ? 1.0 : -1.0;
    const double a = p.a0 + dir * s / p.radius;
    const Vec2 r = unit(a);
    return {p.center + p.radius * r, dir * Vec2{-r.y, r.x}};
  }

  std::vector<Piece> pieces_;
};

/// Intersection template in the frame of arm 0 (south arm, inbound heading +y).
struct Intersection {
  double w = 3.5;
  double h = 7.0;  // half-size of the conflict box

  Vec2 in_start() const { return {0.5 * w, -h - kUrbanArmLength}; }
  Vec2 stop_line() const { return {0.5 * w, -h}; }
  double right_radius() const { return h - 0.5 * w; }
  double left_radius() const { return h + 0.5 * w; }

  Path path(Intention intention) const {
    Path p;
    p.add_line(in_start(), stop_line());
    switch (intention) {
      case Intention::straight:
        p.add_line(stop_line(), {0.5 * w, h});
        p.add_line({0.5 * w, h}, {0.5 * w, h + kUrbanArmLength});
        break;
      case Intention::right:
        p.add_arc({h, -h}, right_radius(), kPi, -0.5 * kPi);
        p.add_line({h, -0.5 * w}, {h + kUrbanArmLength, -0.5 * w});
        break;
      case Intention::left:
        p.add_arc({-h, -h}, left_radius(), 0.0, 0.5 * kPi);
        p.add_line({-h, 0.5 * w}, {-h - kUrbanArmLength, 0.5 * w});
        break;
    }
    return p;
  }

  static std::vector<Vec2> arc_points(Vec2 center, double radius, double a0, double sweep,
                                      std::size_t n) {
    std::vector<Vec2> pts;
    for (std::size_t i = 0; i <= n; ++i) {
      const double a = a0 + sweep * static_cast<double>(i) / static_cast<double>(n);
      pts.push_back(center + radius * unit(a));
    }
    return pts;
  }

  std::vector<LanePolyline> lanes(double piece) const {
    std::vector<LanePolyline> arm;
    const auto pieces = static_cast<std::size_t>(std::ceil(kUrbanArmLength / piece - 1e-9));
    for (std::size_t i = 0; i < pieces; ++i) {
      const double y0 = -h - kUrbanArmLength + static_cast<double>(i) * piece;
      const double y1 = std::min(-h, y0 + piece);
      arm.push_back(straight_lane({0.5 * w, y0}, {0.5 * w, y1}, 5.0, false, i + 1 == pieces));
      arm.push_back(straight_lane({-0.5 * w, y1}, {-0.5 * w, y0}, 5.0, false, false));
    }
    arm.push_back(straight_lane(stop_line(), {0.5 * w, h}, 5.0, false, true));
    LanePolyline right;
    right.points = arc_points({h, -h}, right_radius(), kPi, -0.5 * kPi, 8);
    right.has_turn = true;
    right.traffic_controlled = true;
    arm.push_back(right);
    LanePolyline left;
    left.points = arc_points({-h, -h}, left_radius(), 0.0, 0.5 * kPi, 8);
    left.has_turn = true;
    left.traffic_controlled = true;
    arm.push_back(left);

    std::vector<LanePolyline> all;
    for (int a = 0; a < 4; ++a) {
      const double angle = 0.5 * kPi * a;
      for (LanePolyline lane : arm) {
        for (Vec2& p : lane.points) p = rotate(p, angle);
        all.push_back(std::move(lane));
      }
    }
    return all;
  }
};

/// Arc-length schedule: constant deceleration until t_entry, constant speed
/// after it.
struct SpeedProfile {
  double s_entry = 0.0;
  double t_entry = 0.0;
  double v_after = 0.0;
  double decel = 0.0;

  double s(double t) const {
    if (t >= t_entry) return s_entry + v_after * (t - t_entry);
    const double d = t_entry - t;
    return s_entry - v_after * d - 0.5 * decel * d * d;
  }
  double v(double t) const { return v_after + decel * std::max(0.0, t_entry - t); }
};

Motion follow(Path path, SpeedProfile profile) {
  return [path = std::move(path), profile](double t) {
    const auto [p, d] = path.at(profile.s(t));
    return State{p, profile.v(t) * d, std::atan2(d.y, d.x)};
  };
}

Motion constant_velocity(Vec2 p0, Vec2 dir, double speed) {
  const double heading = std::atan2(dir.y, dir.x);
  return [=](double t) { return State{p0 + (speed * t) * dir, speed * dir, heading}; };
}

std::optional<LabeledScene> urban_scene(const GenConfig& c, Rng& rng) {
  const std::vector<double> times = window_times(c);
  Intersection ix;
  ix.w = c.lane_width;
  ix.h = 2.0 * c.lane_width;
  const Intention intention = choose_intention(rng, c);

  SpeedProfile profile;
  profile.s_entry = kUrbanArmLength;
  if (intention == Intention::straight) {
    profile.v_after = rng.uniform(c.speed_min, c.speed_max);
    profile.t_entry = rng.uniform(-1.0, 1.0);
  } else {
    const double radius = intention == Intention::left ? ix.left_radius() : ix.right_radius();
    profile.v_after = std::clamp(std::sqrt(kUrbanLateralAccel * radius) * rng.uniform(0.85, 1.0),
                                 0.85 * c.speed_min, c.speed_max);
    profile.t_entry = rng.uniform(-0.5, 0.5);
    const double span = profile.t_entry + static_cast<double>(c.history_steps) / c.hz;
    const double cap = span > 0.0 ? (c.speed_max - profile.v_after) / span : 0.0;
    profile.decel = std::min(rng.uniform(1.0, 2.5), std::max(0.0, cap));
  }

  std::vector<Actor> actors;
  Actor target;
  vehicle_size(rng, target);
  target.motion = follow(ix.path(intention), profile);
  actors.push_back(target);

  const std::size_t others = uniform_count(rng, c.agents_min, c.agents_max);
  const double t_back = static_cast<double>(c.history_steps) / c.hz;
  const double t_fwd = static_cast<double>(c.future_steps) / c.hz;
  while (actors.size() < others + 1) {
    Actor a;
    bool placed = false;
    const double kind = rng.uniform();
    for (std::size_t attempt = 0; attempt < c.max_retries && !placed; ++attempt) {
      const double arm = 0.5 * kPi * static_cast<double>(rng.index(4));
      if (kind < 0.15) {
        // Pedestrian on a sidewalk corner, standing or walking along the road.
        a.type = AgentType::pedestrian;
        a.length = 0.6;
        a.width = 0.6;
        const double side = ix.w + 1.5;
        const Vec2 p0 = rotate({rng.bernoulli(0.5) ? side : -side, -ix.h - rng.uniform(2.0, 30.0)}, arm);
        const double speed = rng.bernoulli(0.5) ? 0.0 : rng.uniform(0.8, 1.6);
        a.motion = constant_velocity(p0, rotate({0.0, rng.bernoulli(0.5) ? 1.0 : -1.0}, arm), speed);
      } else {
        const bool cyclist = kind < 0.25;
        a.type = cyclist ? AgentType::cyclist : AgentType::vehicle;
        if (cyclist) {
          a.length = 1.8;
          a.width = 0.7;
        } else {
          vehicle_size(rng, a);
        }
        const double speed = cyclist ? rng.uniform(3.0, 6.0) : rng.uniform(0.0, c.speed_max);
        const double margin = 0.5 * a.length + 1.0;
        if (rng.bernoulli(0.5)) {
          // Inbound, stays short of the stop line over the whole window.
          const double d0 = speed * t_fwd + margin + rng.uniform(0.0, 30.0);
          const Vec2 p0 = rotate({0.5 * ix.w, -ix.h - d0}, arm);
          a.motion = constant_velocity(p0, rotate({0.0, 1.0}, arm), speed);
          if (d0 + speed * t_back > kUrbanArmLength) continue;
        } else {
          const double d0 = speed * t_back + margin + rng.uniform(0.0, 30.0);
          const Vec2 p0 = rotate({-0.5 * ix.w, -ix.h - d0}, arm);
          a.motion = constant_velocity(p0, rotate({0.0, -1.0}, arm), speed);
          if (d0 + speed * t_fwd > kUrbanArmLength) continue;
        }
      }
      placed = !collides_any(a, actors, times);
    }
    if (!placed) return std::nullopt;
    actors.push_back(a);
  }
  return assemble(c, actors, ix.lanes(c.lane_piece_length), intention, rng);
}

using SceneFn = std::optional<LabeledScene> (*)(const GenConfig&, Rng&);

GenResult run_generator(const GenConfig& c, SceneFn fn, std::string_view stream) {
  c.validate();
  GenResult result;
  for (std::size_t i = 0; i < c.scene_count; ++i) {
    Rng rng(derive_seed(c.seed, stream, i));
    if (auto s = fn(c, rng)) {
      result.scenes.push_back(std::move(*s));
    } else {
      ++result.skipped;
    }
  }
  return result;
}

}  // namespace

std::string_view to_string(ScenarioFamily family) {
  return family == ScenarioFamily::highway ? "highway" : "urban";
}

ScenarioFamily family_from_string(std::string_view name) {
  if (name == "highway") return ScenarioFamily::highway;
  if (name == "urban") return ScenarioFamily::urban;
  fail(ErrorKind::usage, "unknown scenario family '" + std::string(name) + "'");
}

GenConfig GenConfig::highway_defaults() { return GenConfig{}; }

GenConfig GenConfig::urban_defaults() {
  GenConfig c;
  c.family = ScenarioFamily::urban;
  c.speed_min = 5.0;
  c.speed_max = 12.0;
  c.lane_count = 1;
  c.p_left = 1.0 / 3.0;
  c.p_right = 1.0 / 3.0;
  return c;
}

void GenConfig::validate() const {
  if (agents_min > agents_max) fail(ErrorKind::usage, "gen: agents_min > agents_max");
  if (!(speed_min > 0.0) || !(speed_min <= speed_max)) {
    fail(ErrorKind::usage, "gen: speed range must satisfy 0 < speed_min <= speed_max");
  }
  if (!(lane_width > kMaxVehicleWidth)) {
    fail(ErrorKind::usage, "gen: lane width must exceed the vehicle width (2 m)");
  }
  if (lane_count == 0) fail(ErrorKind::usage, "gen: lane_count must be positive");
  if (!(noise_std >= 0.0)) fail(ErrorKind::usage, "gen: noise_std must be non-negative");
  if (!(p_left >= 0.0) || !(p_right >= 0.0) || p_left + p_right > 1.0) {
    fail(ErrorKind::usage, "gen: class proportions must be non-negative and sum to at most 1");
  }
  if (history_steps == 0 || future_steps == 0 || !(hz > 0.0)) {
    fail(ErrorKind::usage, "gen: history/future steps and hz must be positive");
  }
  if (!(lane_piece_length > 0.0)) fail(ErrorKind::usage, "gen: lane_piece_length must be positive");
  if (max_retries == 0) fail(ErrorKind::usage, "gen: max_retries must be positive");
}

GenResult gen_highway(const GenConfig& config) {
  return run_generator(config, highway_scene, "highway");
}

GenResult gen_urban(const GenConfig& config) { return run_generator(config, urban_scene, "urban"); }

GenResult generate(const GenConfig& config) {
  return config.family == ScenarioFamily::highway ? gen_highway(config) : gen_urban(config);
}

Intention derive_intention(const LabeledScene& s, double lane_width) {
  const AgentTrack& track = s.scene.agents.at(s.scene.target);
  if (s.future.empty()) fail(ErrorKind::data, "derive_intention: empty future");
  Vec2 v0 = track.velocities.front();
  if (norm(v0) < 1e-9) v0 = track.positions.back() - track.positions.front();
  const double h0 = std::atan2(v0.y, v0.x);
  const Vec2 last = s.future.size() >= 2 ? s.future[s.future.size() - 2] : track.positions.back();
  const Vec2 d1 = s.future.back() - last;
  const double turn = wrap_angle(std::atan2(d1.y, d1.x) - h0);
  if (turn > 0.25 * kPi) return Intention::left;
  if (turn < -0.25 * kPi) return Intention::right;
  const Vec2 dir = unit(h0);
  const Vec2 disp = s.future.back() - track.positions.front();
  const double lateral = dir.x * disp.y - dir.y * disp.x;
  if (lateral > 0.5 * lane_width) return Intention::left;
  if (lateral < -0.5 * lane_width) return Intention::right;
  return Intention::straight;
}

std::array<std::size_t, kIntentionCount> class_histogram(std::span<const LabeledScene> scenes) {
  std::array<std::size_t, kIntentionCount> h{};
  for (const LabeledScene& s : scenes) ++h[static_cast<std::size_t>(s.intention)];
  return h;
}

std::vector<LabeledScene> balance(std::span<const LabeledScene> scenes, std::size_t cap, Rng& rng) {
  const auto hist = class_histogram(scenes);
  const auto majority = static_cast<std::size_t>(
      std::max_element(hist.begin(), hist.end()) - hist.begin());

  std::vector<std::size_t> major_idx;
  std::vector<std::size_t> keep;
  for (std::size_t i = 0; i < scenes.size(); ++i) {
    if (static_cast<std::size_t>(scenes[i].intention) == majority) {
      major_idx.push_back(i);
    } else {
      keep.push_back(i);
    }
  }
  // Partial Fisher-Yates picks the retained majority subset.
  const std::size_t take = std::min(cap, major_idx.size());
  for (std::size_t i = 0; i < take; ++i) {
    const std::size_t j = i + rng.index(major_idx.size() - i);
    std::swap(major_idx[i], major_idx[j]);
  }
  keep.insert(keep.end(), major_idx.begin(), major_idx.begin() + static_cast<std::ptrdiff_t>(take));
  for (std::size_t i = keep.size(); i > 1; --i) {
    std::swap(keep[i - 1], keep[rng.index(i)]);
  }
  std::vector<LabeledScene> out;
  out.reserve(keep.size());
  for (std::size_t i : keep) out.push_back(scenes[i]);
  return out;
}

}  // namespace pgsu
