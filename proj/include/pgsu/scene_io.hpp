#pragma once

#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "pgsu/scenario.hpp"
#include "pgsu/scene.hpp"

namespace pgsu {

/// One scene per line as a JSON object with keys agents, lanes, target, hz.
/// Dataset lines add `future` and `intention`. Lines starting with '#' and
/// blank lines are ignored on read.
inline constexpr std::string_view kDatasetHeader = "# pgsu dataset v1";
inline constexpr std::string_view kSceneHeader = "# pgsu scenes v1";

std::string scene_to_json(const Scene& scene);
Scene scene_from_json(std::string_view line);

std::string labeled_to_json(const LabeledScene& scene);
LabeledScene labeled_from_json(std::string_view line);

void write_scenes(std::ostream& out, std::span<const Scene> scenes);
void write_scenes(const std::filesystem::path& path, std::span<const Scene> scenes);
/// Accepts dataset files too; the extra keys are ignored.
std::vector<Scene> read_scenes(std::istream& in);
std::vector<Scene> read_scenes(const std::filesystem::path& path);

void write_dataset(std::ostream& out, std::span<const LabeledScene> scenes);
void write_dataset(const std::filesystem::path& path, std::span<const LabeledScene> scenes);
/// Malformed lines raise Error(data) naming the 1-based line number.
std::vector<LabeledScene> read_dataset(std::istream& in);
std::vector<LabeledScene> read_dataset(const std::filesystem::path& path);

}  // namespace pgsu
