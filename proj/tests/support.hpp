#pragma once

#include <filesystem>
#include <random>
#include <string>

#include <json.hpp>

#include "geoecon/geo.hpp"

namespace testsupport {

// Fresh empty directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag);
  ~TempDir();
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

std::string read_file(const std::filesystem::path& path);

// Validates `value` against a JSON schema, supporting the subset used by
// docs/*.schema.json: type, properties, required, additionalProperties
// (boolean or schema), items, minItems, maxItems, enum, pattern, minimum,
// maximum, exclusiveMinimum, exclusiveMaximum, $ref to "#/definitions/...",
// oneOf and nullable type lists. Returns an empty string when valid,
// otherwise the first violation.
std::string schema_violation(const nlohmann::json& schema, const nlohmann::json& value,
                             const nlohmann::json& root, const std::string& where = "$");

nlohmann::json load_schema(const std::string& name);  // from docs/

// Winding-number containment with an explicit on-edge check.
bool winding_inside(const geoecon::GeoPoint& p, const std::vector<geoecon::GeoPoint>& ring);

std::filesystem::path source_dir();
std::filesystem::path cli_path();

}  // namespace testsupport
