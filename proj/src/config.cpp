#include "pgsu/config.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <sstream>

#include "pgsu/error.hpp"

namespace pgsu {

namespace {

enum class Kind { real, integer, boolean, choice };

struct KeySpec {
  const char* key;
  Kind kind;
  const char* value;
  std::vector<std::string> choices = {};
  bool allow_auto = false;
};

const std::vector<KeySpec>& key_specs() {
  static const std::vector<KeySpec> specs = {
      {"backbone.D", Kind::integer, "64"},
      {"backbone.M", Kind::integer, "3"},
      {"backbone.N", Kind::integer, "2"},
      {"backbone.compact_tokens", Kind::boolean, "true"},
      {"backbone.coord_scale", Kind::real, "10"},
      {"backbone.dropout", Kind::real, "0.1"},
      {"backbone.layer_norm", Kind::boolean, "false"},
      {"backbone.subgraph_layers", Kind::integer, "3"},
      {"field.G", Kind::real, "1"},
      {"field.a_coef", Kind::real, "1"},
      {"field.b_coef", Kind::real, "1"},
      {"field.c_coef", Kind::real, "1"},
      {"field.cyclist_mass_scale", Kind::real, "0.1"},
      {"field.grid_res", Kind::real, "0.2"},
      {"field.k1", Kind::real, "1"},
      {"field.k2", Kind::real, "0.05"},
      {"field.negate_exponent", Kind::boolean, "false"},
      {"field.pedestrian_mass_scale", Kind::real, "0.05"},
      {"field.r_min", Kind::real, "0.5"},
      {"field.vehicle_mass", Kind::real, "1500"},
      {"finetune.base_lr", Kind::real, "0.001"},
      {"finetune.batch_size", Kind::integer, "0"},
      {"finetune.epochs", Kind::integer, "60"},
      {"finetune.freeze_backbone", Kind::boolean, "false"},
      {"finetune.pretrain_mode", Kind::choice, "none", {"none", "vif", "mrm", "both"}},
      {"finetune.task", Kind::choice, "trajectory", {"trajectory", "intention"}},
      {"finetune.val_fraction", Kind::real, "0.2"},
      {"gen.agents_max", Kind::integer, "8"},
      {"gen.agents_min", Kind::integer, "3"},
      {"gen.balance_cap", Kind::integer, "0"},
      {"gen.count", Kind::integer, "100"},
      {"gen.family", Kind::choice, "highway", {"highway", "urban"}},
      {"gen.lane_count", Kind::integer, "auto", {}, true},
      {"gen.lane_width", Kind::real, "3.5"},
      {"gen.noise_std", Kind::real, "0.1"},
      {"gen.p_left", Kind::real, "auto", {}, true},
      {"gen.p_right", Kind::real, "auto", {}, true},
      {"gen.speed_max", Kind::real, "auto", {}, true},
      {"gen.speed_min", Kind::real, "auto", {}, true},
      {"heads.K", Kind::integer, "6"},
      {"heads.T_fut", Kind::integer, "30"},
      {"pretrain.base_lr", Kind::real, "0.001"},
      {"pretrain.batch_size", Kind::integer, "64"},
      {"pretrain.epochs", Kind::integer, "60"},
      {"pretrain.held_out_fraction", Kind::real, "0.1"},
      {"pretrain.mask_ratio", Kind::real, "0.5"},
      {"pretrain.w_mrm", Kind::real, "1"},
      {"pretrain.w_vif", Kind::real, "10"},
      {"run.seed", Kind::integer, "0"},
      {"run.workers", Kind::integer, "1"},
      {"scene.history_steps", Kind::integer, "20"},
      {"scene.lane_segments", Kind::integer, "10"},
      {"scene.max_agents", Kind::integer, "20"},
      {"scene.max_lanes", Kind::integer, "32"},
  };
  return specs;
}

const KeySpec* find_spec(const std::string& key) {
  for (const KeySpec& s : key_specs()) {
    if (key == s.key) return &s;
  }
  return nullptr;
}

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

bool parse_real(const std::string& s, double& out) {
  const char* end = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(s.data(), end, out);
  return ec == std::errc() && ptr == end && std::isfinite(out);
}

bool parse_integer(const std::string& s, std::uint64_t& out) {
  const char* end = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(s.data(), end, out);
  return ec == std::errc() && ptr == end;
}

bool parse_boolean(const std::string& s, bool& out) {
  if (s == "true" || s == "1") {
    out = true;
    return true;
  }
  if (s == "false" || s == "0") {
    out = false;
    return true;
  }
  return false;
}

void check_value(const KeySpec& spec, const std::string& value) {
  if (spec.allow_auto && value == "auto") return;
  bool ok = false;
  switch (spec.kind) {
    case Kind::real: {
      double d = 0.0;
      ok = parse_real(value, d);
      break;
    }
    case Kind::integer: {
      std::uint64_t u = 0;
      ok = parse_integer(value, u);
      break;
    }
    case Kind::boolean: {
      bool b = false;
      ok = parse_boolean(value, b);
      break;
    }
    case Kind::choice:
      ok = std::find(spec.choices.begin(), spec.choices.end(), value) != spec.choices.end();
      break;
  }
  if (!ok) fail(ErrorKind::usage, "config: invalid value '" + value + "' for key " + spec.key);
}

}  // namespace

RunConfig::RunConfig() {
  for (const KeySpec& s : key_specs()) values_[s.key] = s.value;
}

std::vector<std::string> RunConfig::keys() {
  std::vector<std::string> out;
  for (const KeySpec& s : key_specs()) out.emplace_back(s.key);
  std::sort(out.begin(), out.end());
  return out;
}

RunConfig RunConfig::parse(std::istream& in) {
  RunConfig cfg;
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    const auto hash = line.find('#');
    const std::string body = trim(std::string_view(line).substr(0, hash));
    if (body.empty()) continue;
    const auto eq = body.find('=');
    if (eq == std::string::npos) {
      fail(ErrorKind::usage, "config line " + std::to_string(number) + ": expected 'key = value'");
    }
    try {
      cfg.set(trim(std::string_view(body).substr(0, eq)), trim(std::string_view(body).substr(eq + 1)));
    } catch (const Error& e) {
      fail(e.kind(), "config line " + std::to_string(number) + ": " + e.what());
    }
  }
  return cfg;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::data, "cannot open config '" + path.string() + "'");
  return parse(in);
}

void RunConfig::set(const std::string& key, const std::string& value) {
  const KeySpec* spec = find_spec(key);
  if (spec == nullptr) fail(ErrorKind::usage, "config: unknown key '" + key + "'");
  check_value(*spec, value);
  values_[key] = value;
}

const std::string& RunConfig::get(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) fail(ErrorKind::usage, "config: unknown key '" + key + "'");
  return it->second;
}

bool RunConfig::has(const std::string& key) const { return find_spec(key) != nullptr; }

double RunConfig::real(const std::string& key) const {
  double d = 0.0;
  if (!parse_real(get(key), d)) fail(ErrorKind::usage, "config: " + key + " is not a number");
  return d;
}

std::uint64_t RunConfig::integer(const std::string& key) const {
  std::uint64_t u = 0;
  if (!parse_integer(get(key), u)) fail(ErrorKind::usage, "config: " + key + " is not an integer");
  return u;
}

bool RunConfig::boolean(const std::string& key) const {
  bool b = false;
  if (!parse_boolean(get(key), b)) fail(ErrorKind::usage, "config: " + key + " is not a boolean");
  return b;
}

std::string RunConfig::serialize() const {
  std::ostringstream out;
  for (const auto& [k, v] : values_) out << k << " = " << v << '\n';
  return out.str();
}

void RunConfig::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::trunc);
  if (!out) fail(ErrorKind::data, "cannot write config '" + path.string() + "'");
  out << serialize();
  if (!out) fail(ErrorKind::data, "write to '" + path.string() + "' failed");
}

std::uint64_t RunConfig::hash() const { return fnv1a(serialize()); }

ModelConfig RunConfig::model_config() const {
  ModelConfig m;
  m.dims.max_agents = integer("scene.max_agents");
  m.dims.max_lanes = integer("scene.max_lanes");
  m.dims.lane_segments = integer("scene.lane_segments");
  m.dims.history_steps = integer("scene.history_steps");
  m.backbone.d_model = integer("backbone.D");
  m.backbone.n_interleave = integer("backbone.N");
  m.backbone.m_alltoken = integer("backbone.M");
  m.backbone.subgraph_layers = integer("backbone.subgraph_layers");
  m.backbone.dropout = real("backbone.dropout");
  m.backbone.layer_norm = boolean("backbone.layer_norm");
  m.backbone.compact_tokens = boolean("backbone.compact_tokens");
  m.backbone.coord_scale = real("backbone.coord_scale");
  m.modes = integer("heads.K");
  m.future_steps = integer("heads.T_fut");
  if (m.dims.max_agents == 0 || m.dims.max_lanes == 0 || m.dims.lane_segments == 0 ||
      m.dims.history_steps == 0 || m.modes == 0 || m.future_steps == 0) {
    fail(ErrorKind::usage, "config: scene/heads dimensions must be positive");
  }
  m.backbone.validate();
  return m;
}

FieldParams RunConfig::field_params() const {
  FieldParams f;
  f.G = real("field.G");
  f.vehicle_mass = real("field.vehicle_mass");
  f.a_coef = real("field.a_coef");
  f.b_coef = real("field.b_coef");
  f.c_coef = real("field.c_coef");
  f.k1 = real("field.k1");
  f.k2 = real("field.k2");
  f.r_min = real("field.r_min");
  f.grid_res = real("field.grid_res");
  f.negate_exponent = boolean("field.negate_exponent");
  f.pedestrian_mass_scale = real("field.pedestrian_mass_scale");
  f.cyclist_mass_scale = real("field.cyclist_mass_scale");
  return f;
}

PretrainConfig RunConfig::pretrain_config() const {
  PretrainConfig p;
  p.w_vif = real("pretrain.w_vif");
  p.w_mrm = real("pretrain.w_mrm");
  p.mask_ratio = real("pretrain.mask_ratio");
  p.epochs = integer("pretrain.epochs");
  p.batch_size = integer("pretrain.batch_size");
  p.base_lr = real("pretrain.base_lr");
  p.held_out_fraction = real("pretrain.held_out_fraction");
  p.seed = seed();
  p.validate();
  return p;
}

FinetuneConfig RunConfig::finetune_config() const {
  FinetuneConfig f;
  f.task = task_from_string(get("finetune.task"));
  f.epochs = integer("finetune.epochs");
  f.batch_size = integer("finetune.batch_size");
  f.base_lr = real("finetune.base_lr");
  f.freeze_backbone = boolean("finetune.freeze_backbone");
  f.val_fraction = real("finetune.val_fraction");
  f.seed = seed();
  f.validate();
  return f;
}

GenConfig RunConfig::gen_config() const {
  const ScenarioFamily family = family_from_string(get("gen.family"));
  GenConfig g = family == ScenarioFamily::highway ? GenConfig::highway_defaults()
                                                  : GenConfig::urban_defaults();
  g.scene_count = integer("gen.count");
  g.agents_min = integer("gen.agents_min");
  g.agents_max = integer("gen.agents_max");
  g.lane_width = real("gen.lane_width");
  g.noise_std = real("gen.noise_std");
  if (get("gen.lane_count") != "auto") g.lane_count = integer("gen.lane_count");
  if (get("gen.speed_min") != "auto") g.speed_min = real("gen.speed_min");
  if (get("gen.speed_max") != "auto") g.speed_max = real("gen.speed_max");
  if (get("gen.p_left") != "auto") g.p_left = real("gen.p_left");
  if (get("gen.p_right") != "auto") g.p_right = real("gen.p_right");
  g.history_steps = integer("scene.history_steps");
  g.future_steps = integer("heads.T_fut");
  g.seed = seed();
  g.validate();
  return g;
}

std::uint64_t RunConfig::seed() const { return integer("run.seed"); }

std::size_t RunConfig::workers() const {
  return std::max<std::size_t>(1, integer("run.workers"));
}

}  // namespace pgsu
