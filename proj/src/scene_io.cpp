#include "pgsu/scene_io.hpp"

#include <fstream>
#include <istream>
#include <ostream>

#include "json.hpp"
#include "pgsu/error.hpp"

namespace pgsu {

namespace {

using nlohmann::json;

json points_json(std::span<const Vec2> pts) {
  json arr = json::array();
  for (Vec2 p : pts) arr.push_back({p.x, p.y});
  return arr;
}

std::vector<Vec2> points_from(const json& j, const char* what) {
  if (!j.is_array()) fail(ErrorKind::data, std::string(what) + " must be an array of [x, y]");
  std::vector<Vec2> out;
  out.reserve(j.size());
  for (const json& p : j) {
    if (!p.is_array() || p.size() != 2 || !p[0].is_number() || !p[1].is_number()) {
      fail(ErrorKind::data, std::string(what) + " entries must be [x, y] numbers");
    }
    out.push_back({p[0].get<double>(), p[1].get<double>()});
  }
  return out;
}

const json& require(const json& j, const char* key) {
  auto it = j.find(key);
  if (it == j.end()) fail(ErrorKind::data, std::string("missing key '") + key + "'");
  return *it;
}

json scene_json(const Scene& scene) {
  json agents = json::array();
  for (const AgentTrack& a : scene.agents) {
    agents.push_back({{"positions", points_json(a.positions)},
                      {"velocities", points_json(a.velocities)},
                      {"type", std::string(to_string(a.type))},
                      {"bbox", {a.length, a.width}}});
  }
  json lanes = json::array();
  for (const LanePolyline& l : scene.lanes) {
    lanes.push_back({{"points", points_json(l.points)},
                     {"attributes", {l.has_turn ? 1 : 0, l.traffic_controlled ? 1 : 0}}});
  }
  return {{"agents", std::move(agents)}, {"lanes", std::move(lanes)},
          {"target", scene.target}, {"hz", scene.hz}};
}

bool flag_from(const json& j) {
  if (!j.is_number_integer() || (j.get<int>() != 0 && j.get<int>() != 1)) {
    fail(ErrorKind::data, "lane attributes must be 0 or 1");
  }
  return j.get<int>() == 1;
}

Scene scene_from(const json& j) {
  if (!j.is_object()) fail(ErrorKind::data, "scene must be a JSON object");
  Scene scene;
  for (const json& a : require(j, "agents")) {
    AgentTrack t;
    t.positions = points_from(require(a, "positions"), "positions");
    t.velocities = points_from(require(a, "velocities"), "velocities");
    const json& type = require(a, "type");
    if (!type.is_string()) fail(ErrorKind::data, "agent type must be a string");
    t.type = agent_type_from_string(type.get<std::string>());
    const json& bbox = require(a, "bbox");
    if (!bbox.is_array() || bbox.size() != 2 || !bbox[0].is_number() || !bbox[1].is_number()) {
      fail(ErrorKind::data, "bbox must be [length, width]");
    }
    t.length = bbox[0].get<double>();
    t.width = bbox[1].get<double>();
    scene.agents.push_back(std::move(t));
  }
  for (const json& l : require(j, "lanes")) {
    LanePolyline lane;
    lane.points = points_from(require(l, "points"), "lane points");
    const json& attr = require(l, "attributes");
    if (!attr.is_array() || attr.size() != 2) fail(ErrorKind::data, "attributes must have 2 entries");
    lane.has_turn = flag_from(attr[0]);
    lane.traffic_controlled = flag_from(attr[1]);
    scene.lanes.push_back(std::move(lane));
  }
  const json& target = require(j, "target");
  if (!target.is_number_unsigned()) fail(ErrorKind::data, "target must be a non-negative integer");
  scene.target = target.get<std::size_t>();
  const json& hz = require(j, "hz");
  if (!hz.is_number()) fail(ErrorKind::data, "hz must be a number");
  scene.hz = hz.get<double>();
  validate(scene);
  return scene;
}

json parse_line(std::string_view line) {
  try {
    return json::parse(line);
  } catch (const json::exception& e) {
    fail(ErrorKind::data, std::string("malformed JSON: ") + e.what());
  }
}

bool skip_line(const std::string& line) {
  const auto first = line.find_first_not_of(" \t\r");
  return first == std::string::npos || line[first] == '#';
}

template <typename T, typename Parse>
std::vector<T> read_lines(std::istream& in, Parse parse) {
  std::vector<T> out;
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (skip_line(line)) continue;
    try {
      out.push_back(parse(line));
    } catch (const Error& e) {
      fail(ErrorKind::data, "line " + std::to_string(number) + ": " + e.what());
    }
  }
  if (in.bad()) fail(ErrorKind::data, "read error after line " + std::to_string(number));
  return out;
}

std::ifstream open_in(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::data, "cannot open '" + path.string() + "' for reading");
  return in;
}

template <typename Write>
void write_file(const std::filesystem::path& path, Write write) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) fail(ErrorKind::data, "cannot open '" + path.string() + "' for writing");
  write(out);
  out.flush();
  if (!out) fail(ErrorKind::data, "write to '" + path.string() + "' failed");
}

}  // namespace

std::string scene_to_json(const Scene& scene) { return scene_json(scene).dump(); }

Scene scene_from_json(std::string_view line) { return scene_from(parse_line(line)); }

std::string labeled_to_json(const LabeledScene& s) {
  json j = scene_json(s.scene);
  j["future"] = points_json(s.future);
  j["intention"] = std::string(to_string(s.intention));
  return j.dump();
}

LabeledScene labeled_from_json(std::string_view line) {
  const json j = parse_line(line);
  LabeledScene s;
  s.scene = scene_from(j);
  s.future = points_from(require(j, "future"), "future");
  if (s.future.empty()) fail(ErrorKind::data, "future must not be empty");
  const json& intention = require(j, "intention");
  if (!intention.is_string()) fail(ErrorKind::data, "intention must be a string");
  s.intention = intention_from_string(intention.get<std::string>());
  return s;
}

void write_scenes(std::ostream& out, std::span<const Scene> scenes) {
  out << kSceneHeader << '\n';
  for (const Scene& s : scenes) out << scene_to_json(s) << '\n';
}

void write_scenes(const std::filesystem::path& path, std::span<const Scene> scenes) {
  write_file(path, [&](std::ostream& out) { write_scenes(out, scenes); });
}

std::vector<Scene> read_scenes(std::istream& in) {
  return read_lines<Scene>(in, [](const std::string& line) { return scene_from_json(line); });
}

std::vector<Scene> read_scenes(const std::filesystem::path& path) {
  auto in = open_in(path);
  return read_scenes(in);
}

void write_dataset(std::ostream& out, std::span<const LabeledScene> scenes) {
  out << kDatasetHeader << '\n';
  for (const LabeledScene& s : scenes) out << labeled_to_json(s) << '\n';
}

void write_dataset(const std::filesystem::path& path, std::span<const LabeledScene> scenes) {
  write_file(path, [&](std::ostream& out) { write_dataset(out, scenes); });
}

std::vector<LabeledScene> read_dataset(std::istream& in) {
  return read_lines<LabeledScene>(in,
                                  [](const std::string& line) { return labeled_from_json(line); });
}

std::vector<LabeledScene> read_dataset(const std::filesystem::path& path) {
  auto in = open_in(path);
  return read_dataset(in);
}

}  // namespace pgsu
