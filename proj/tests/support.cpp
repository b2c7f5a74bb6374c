#include "support.hpp"

#include <unistd.h>

#include <atomic>
#include <fstream>
#include <iterator>
#include <regex>
#include <cmath>
#include <algorithm>

namespace testsupport {

namespace fs = std::filesystem;

TempDir::TempDir(const std::string& tag) {
  static std::atomic<int> counter{0};
  path_ = fs::temp_directory_path() /
          ("geoecon-" + tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
  fs::remove_all(path_);
  fs::create_directories(path_);
}

TempDir::~TempDir() {
  std::error_code ec;
  fs::remove_all(path_, ec);
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// Independent winding-number containment with an explicit boundary check.
bool winding_inside(const geoecon::GeoPoint& p, const std::vector<geoecon::GeoPoint>& ring) {
  const std::size_t n = ring.size();
  for (std::size_t i = 0; i < n; ++i) {
    const geoecon::GeoPoint& a = ring[i];
    const geoecon::GeoPoint& b = ring[(i + 1) % n];
    const double cross = (b.lon - a.lon) * (p.lat - a.lat) - (b.lat - a.lat) * (p.lon - a.lon);
    if (std::abs(cross) < 1e-12 && p.lon >= std::min(a.lon, b.lon) - 1e-12 &&
        p.lon <= std::max(a.lon, b.lon) + 1e-12 && p.lat >= std::min(a.lat, b.lat) - 1e-12 &&
        p.lat <= std::max(a.lat, b.lat) + 1e-12)
      return true;
  }
  int wn = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const geoecon::GeoPoint& a = ring[i];
    const geoecon::GeoPoint& b = ring[(i + 1) % n];
    const double is_left = (b.lon - a.lon) * (p.lat - a.lat) - (p.lon - a.lon) * (b.lat - a.lat);
    if (a.lat <= p.lat) {
      if (b.lat > p.lat && is_left > 0) ++wn;
    } else if (b.lat <= p.lat && is_left < 0) {
      --wn;
    }
  }
  return wn != 0;
}

namespace {

bool type_matches(const std::string& type, const nlohmann::json& v) {
  if (type == "object") return v.is_object();
  if (type == "array") return v.is_array();
  if (type == "string") return v.is_string();
  if (type == "integer") return v.is_number_integer();
  if (type == "number") return v.is_number();
  if (type == "boolean") return v.is_boolean();
  if (type == "null") return v.is_null();
  return false;
}

}  // namespace

std::string schema_violation(const nlohmann::json& schema, const nlohmann::json& value, const nlohmann::json& root,
                             const std::string& where) {
  if (schema.contains("$ref")) {
    const std::string ref = schema["$ref"];
    const std::string prefix = "#/definitions/";
    if (ref.rfind(prefix, 0) != 0) return where + ": unsupported $ref " + ref;
    const auto name = ref.substr(prefix.size());
    if (!root["definitions"].contains(name)) return where + ": unknown $ref " + ref;
    return schema_violation(root["definitions"][name], value, root, where);
  }
  if (schema.contains("oneOf")) {
    int matches = 0;
    for (const auto& alt : schema["oneOf"])
      if (schema_violation(alt, value, root, where).empty()) ++matches;
    if (matches != 1) return where + ": matches " + std::to_string(matches) + " oneOf alternatives";
  }
  if (schema.contains("type")) {
    bool ok = false;
    if (schema["type"].is_array()) {
      for (const auto& t : schema["type"]) ok = ok || type_matches(t, value);
    } else {
      ok = type_matches(schema["type"], value);
    }
    if (!ok) return where + ": expected type " + schema["type"].dump() + ", got " + value.dump();
  }
  if (schema.contains("enum")) {
    bool ok = false;
    for (const auto& e : schema["enum"]) ok = ok || e == value;
    if (!ok) return where + ": " + value.dump() + " not in enum " + schema["enum"].dump();
  }
  if (value.is_number()) {
    if (schema.contains("minimum") && value.get<double>() < schema["minimum"].get<double>())
      return where + ": below minimum";
    if (schema.contains("maximum") && value.get<double>() > schema["maximum"].get<double>())
      return where + ": above maximum";
    if (schema.contains("exclusiveMinimum") && value.get<double>() <= schema["exclusiveMinimum"].get<double>())
      return where + ": not above exclusiveMinimum";
    if (schema.contains("exclusiveMaximum") && value.get<double>() >= schema["exclusiveMaximum"].get<double>())
      return where + ": not below exclusiveMaximum";
  }
  if (value.is_object()) {
    if (schema.contains("required"))
      for (const auto& r : schema["required"])
        if (!value.contains(r.get<std::string>())) return where + ": missing required " + r.dump();
    const auto props = schema.value("properties", nlohmann::json::object());
    for (const auto& [k, v] : value.items()) {
      if (props.contains(k)) {
        auto err = schema_violation(props[k], v, root, where + "." + k);
        if (!err.empty()) return err;
      } else if (schema.contains("additionalProperties")) {
        const auto& ap = schema["additionalProperties"];
        if (ap.is_boolean() && !ap.get<bool>()) return where + ": unexpected property " + k;
        if (ap.is_object()) {
          auto err = schema_violation(ap, v, root, where + "." + k);
          if (!err.empty()) return err;
        }
      }
    }
  }
  if (value.is_string() && schema.contains("pattern") &&
      !std::regex_search(value.get<std::string>(), std::regex(schema["pattern"].get<std::string>())))
    return where + ": " + value.dump() + " does not match " + schema["pattern"].dump();
  if (value.is_array()) {
    if (schema.contains("minItems") && value.size() < schema["minItems"].get<std::size_t>())
      return where + ": fewer than minItems";
    if (schema.contains("maxItems") && value.size() > schema["maxItems"].get<std::size_t>())
      return where + ": more than maxItems";
  }
  if (value.is_array() && schema.contains("items")) {
    for (std::size_t i = 0; i < value.size(); ++i) {
      auto err = schema_violation(schema["items"], value[i], root, where + "[" + std::to_string(i) + "]");
      if (!err.empty()) return err;
    }
  }
  return "";
}

fs::path source_dir() { return GEOECON_SOURCE_DIR; }

fs::path cli_path() { return GEOECON_CLI_PATH; }

nlohmann::json load_schema(const std::string& name) {
  std::ifstream in(source_dir() / "docs" / name);
  return nlohmann::json::parse(in);
}

}  // namespace testsupport
