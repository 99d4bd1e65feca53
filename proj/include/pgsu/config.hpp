#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "pgsu/finetune.hpp"
#include "pgsu/pretrain.hpp"
#include "pgsu/safety_field.hpp"
#include "pgsu/sample.hpp"
#include "pgsu/scenario.hpp"

namespace pgsu {

/// Flat dotted-key configuration covering every module. Values are stored
/// as text and validated on assignment; unknown keys are rejected.
class RunConfig {
 public:
  RunConfig();

  /// Parses `key = value` lines; '#' starts a comment. Errors name the line.
  static RunConfig parse(std::istream& in);
  static RunConfig load(const std::filesystem::path& path);

  void set(const std::string& key, const std::string& value);
  const std::string& get(const std::string& key) const;
  bool has(const std::string& key) const;

  double real(const std::string& key) const;
  std::uint64_t integer(const std::string& key) const;
  bool boolean(const std::string& key) const;

  /// Every key in sorted order, one `key = value` line each.
  std::string serialize() const;
  void save(const std::filesystem::path& path) const;
  /// FNV-1a of serialize().
  std::uint64_t hash() const;

  static std::vector<std::string> keys();

  ModelConfig model_config() const;
  FieldParams field_params() const;
  PretrainConfig pretrain_config() const;
  FinetuneConfig finetune_config() const;
  GenConfig gen_config() const;
  std::uint64_t seed() const;
  std::size_t workers() const;

 private:
  std::map<std::string, std::string> values_;
};

inline constexpr std::string_view kConfigFileName = "config.txt";

}  // namespace pgsu
