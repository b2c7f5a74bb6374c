#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "geoecon/geo.hpp"

namespace geoecon {

enum class ImageKind { kSatellite, kStreetView };

struct ImageRecord {
  std::string id;
  ImageKind kind = ImageKind::kSatellite;
  GeoPoint location;
  std::optional<int> heading;  // street view only: 0, 90, 180 or 270
  std::filesystem::path path;  // absolute after loading
  int width = 0;
  int height = 0;
  std::string period;  // empty when the record is not tied to a period

  void validate() const;  // throws ContractError
};

nlohmann::json to_json(const ImageRecord& r, const std::filesystem::path& base_dir);
ImageRecord image_record_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir);

// JSON lines, one record per line; relative paths resolve against the
// manifest's directory.
std::vector<ImageRecord> read_manifest(const std::filesystem::path& path);
void write_manifest(const std::filesystem::path& path, const std::vector<ImageRecord>& records);

// JSON array of {county_id, name, ring: [[lat, lon], ...]}.
std::vector<CountyPolygon> read_counties(const std::filesystem::path& path);
void write_counties(const std::filesystem::path& path, const std::vector<CountyPolygon>& counties);
nlohmann::json counties_to_json(const std::vector<CountyPolygon>& counties);
std::vector<CountyPolygon> counties_from_json(const nlohmann::json& j);

}  // namespace geoecon
