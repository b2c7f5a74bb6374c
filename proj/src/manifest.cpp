#include "geoecon/manifest.hpp"

#include <fstream>

#include "geoecon/error.hpp"

namespace geoecon {

namespace fs = std::filesystem;

void ImageRecord::validate() const {
  if (id.empty()) throw ContractError("image record without id");
  if (!location.valid()) throw ContractError("image record '" + id + "' has invalid location");
  if (kind == ImageKind::kSatellite && heading)
    throw ContractError("satellite record '" + id + "' carries a heading");
  if (kind == ImageKind::kStreetView) {
    if (!heading) throw ContractError("street-view record '" + id + "' lacks a heading");
    if (*heading != 0 && *heading != 90 && *heading != 180 && *heading != 270)
      throw ContractError("street-view record '" + id + "' heading must be 0/90/180/270");
  }
}

nlohmann::json to_json(const ImageRecord& r, const fs::path& base_dir) {
  nlohmann::json j;
  j["id"] = r.id;
  j["kind"] = r.kind == ImageKind::kSatellite ? "satellite" : "streetview";
  j["lat"] = r.location.lat;
  j["lon"] = r.location.lon;
  if (r.heading) j["heading"] = *r.heading;
  j["path"] = base_dir.empty() ? r.path.generic_string()
                               : r.path.lexically_relative(base_dir).generic_string();
  j["width"] = r.width;
  j["height"] = r.height;
  if (!r.period.empty()) j["period"] = r.period;
  return j;
}

ImageRecord image_record_from_json(const nlohmann::json& j, const fs::path& base_dir) {
  ImageRecord r;
  try {
    r.id = j.at("id").get<std::string>();
    const auto kind = j.at("kind").get<std::string>();
    if (kind == "satellite") r.kind = ImageKind::kSatellite;
    else if (kind == "streetview") r.kind = ImageKind::kStreetView;
    else throw FormatError("unknown record kind '" + kind + "'");
    r.location = {j.at("lat").get<double>(), j.at("lon").get<double>()};
    if (j.contains("heading")) r.heading = j.at("heading").get<int>();
    fs::path p = j.at("path").get<std::string>();
    r.path = p.is_absolute() || base_dir.empty() ? p : base_dir / p;
    r.width = j.value("width", 0);
    r.height = j.value("height", 0);
    r.period = j.value("period", "");
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("image record: ") + e.what());
  }
  r.validate();
  return r;
}

std::vector<ImageRecord> read_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest " + path.string());
  const fs::path base = fs::absolute(path).parent_path();
  std::vector<ImageRecord> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(image_record_from_json(nlohmann::json::parse(line), base));
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    } catch (const Error& e) {
      throw FormatError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

void write_manifest(const fs::path& path, const std::vector<ImageRecord>& records) {
  const fs::path base = fs::absolute(path).parent_path();
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write manifest " + path.string());
  for (const auto& r : records) out << to_json(r, base).dump() << "\n";
}

nlohmann::json counties_to_json(const std::vector<CountyPolygon>& counties) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& c : counties) {
    nlohmann::json ring = nlohmann::json::array();
    for (const auto& p : c.ring) ring.push_back({p.lat, p.lon});
    arr.push_back({{"county_id", c.county_id}, {"name", c.name}, {"ring", ring}});
  }
  return arr;
}

std::vector<CountyPolygon> counties_from_json(const nlohmann::json& j) {
  if (!j.is_array()) throw FormatError("county file must hold a JSON array");
  std::vector<CountyPolygon> out;
  try {
    for (const auto& c : j) {
      CountyPolygon poly;
      poly.county_id = c.at("county_id").get<std::string>();
      poly.name = c.value("name", poly.county_id);
      for (const auto& v : c.at("ring")) poly.ring.push_back({v.at(0).get<double>(), v.at(1).get<double>()});
      out.push_back(std::move(poly));
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("county polygon: ") + e.what());
  }
  return out;
}

std::vector<CountyPolygon> read_counties(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open county file " + path.string());
  try {
    return counties_from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

void write_counties(const fs::path& path, const std::vector<CountyPolygon>& counties) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write county file " + path.string());
  out << counties_to_json(counties).dump(1) << "\n";
}

}  // namespace geoecon
