#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "geoecon/geo.hpp"
#include "geoecon/manifest.hpp"

namespace geoecon {

struct AlignedPair {
  std::string sat_id;
  std::string sv_id;
  double distance_km = 0.0;
  double label = 0.0;
  std::string cell;  // zoom-12 tile key of the satellite

  nlohmann::json to_json() const;
  static AlignedPair from_json(const nlohmann::json& j);
  friend bool operator==(const AlignedPair&, const AlignedPair&) = default;
};

struct Neighbor {
  std::string sv_id;
  double distance_km = 0.0;
  friend bool operator==(const Neighbor&, const Neighbor&) = default;
};

// Buckets street views by floor(lat / cell), floor(lon / cell). Nearest
// queries search rings of buckets outward and stop once no unvisited bucket
// can hold a closer point, so results equal an exhaustive scan.
class SpatialGridIndex {
 public:
  static constexpr double kDefaultCellDeg = 0.05;

  explicit SpatialGridIndex(double cell_deg = kDefaultCellDeg) : cell_deg_(cell_deg) {}

  // Throws ContractError if any record is not a street view.
  static SpatialGridIndex build(std::span<const ImageRecord> streetviews,
                                double cell_deg = kDefaultCellDeg);

  // Globally nearest by haversine; ties go to the lexicographically smallest id.
  std::optional<Neighbor> nearest(const GeoPoint& p) const;

  std::size_t size() const noexcept { return points_.size(); }
  bool empty() const noexcept { return points_.empty(); }
  double cell_deg() const noexcept { return cell_deg_; }
  std::size_t bucket_count() const noexcept { return buckets_.size(); }
  // Bucket keys per record, for the exactly-one-bucket invariant.
  const std::map<std::pair<std::int64_t, std::int64_t>, std::vector<std::size_t>>& buckets() const {
    return buckets_;
  }

 private:
  struct Entry {
    std::string id;
    GeoPoint location;
  };

  std::pair<std::int64_t, std::int64_t> key(const GeoPoint& p) const;
  // Lower bound on the distance from p to any point of bucket k.
  double bucket_lower_bound_km(const GeoPoint& p, std::pair<std::int64_t, std::int64_t> k) const;

  double cell_deg_;
  std::vector<Entry> points_;
  std::map<std::pair<std::int64_t, std::int64_t>, std::vector<std::size_t>> buckets_;
  std::int64_t min_row_ = 0, max_row_ = -1, min_col_ = 0, max_col_ = -1;
};

std::optional<Neighbor> nearest_streetview(const SpatialGridIndex& index, const ImageRecord& sat);

struct PairingStats {
  std::size_t candidates = 0;
  std::size_t dropped_no_streetview = 0;
  std::size_t dropped_distance = 0;
  std::size_t dropped_empty_window = 0;
};

struct PairingOptions {
  double max_distance_km = 5.0;
  double label_window_km = 5.0;
  // Only street views with this heading take part; nullopt accepts all.
  std::optional<int> heading = 0;
};

// One candidate per satellite (its nearest street view); pairs beyond
// max_distance_km or with an empty label window are dropped and counted.
// Output is sorted by sat_id.
std::vector<AlignedPair> build_pairs(std::span<const ImageRecord> satellites,
                                     std::span<const ImageRecord> streetviews,
                                     const NightlightRaster& raster,
                                     const PairingOptions& options = {},
                                     PairingStats* stats = nullptr);

std::vector<AlignedPair> read_pairs(const std::filesystem::path& path);
void write_pairs(const std::filesystem::path& path, std::span<const AlignedPair> pairs);

}  // namespace geoecon
