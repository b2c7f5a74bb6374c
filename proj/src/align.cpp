#include "geoecon/align.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>

#include "geoecon/error.hpp"

namespace geoecon {

nlohmann::json AlignedPair::to_json() const {
  return {{"sat_id", sat_id}, {"sv_id", sv_id}, {"distance_km", distance_km}, {"label", label},
          {"cell", cell}};
}

AlignedPair AlignedPair::from_json(const nlohmann::json& j) {
  AlignedPair p;
  try {
    p.sat_id = j.at("sat_id").get<std::string>();
    p.sv_id = j.at("sv_id").get<std::string>();
    p.distance_km = j.at("distance_km").get<double>();
    p.label = j.value("label", 0.0);
    p.cell = j.at("cell").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("pair record: ") + e.what());
  }
  return p;
}

SpatialGridIndex SpatialGridIndex::build(std::span<const ImageRecord> streetviews, double cell_deg) {
  if (!(cell_deg > 0.0)) throw ParameterError("grid cell size must be positive");
  SpatialGridIndex index(cell_deg);
  for (const auto& r : streetviews) {
    if (r.kind != ImageKind::kStreetView)
      throw ContractError("build_index: record '" + r.id + "' is not a street view");
    const std::size_t i = index.points_.size();
    index.points_.push_back({r.id, r.location});
    const auto k = index.key(r.location);
    index.buckets_[k].push_back(i);
    if (i == 0) {
      index.min_row_ = index.max_row_ = k.first;
      index.min_col_ = index.max_col_ = k.second;
    } else {
      index.min_row_ = std::min(index.min_row_, k.first);
      index.max_row_ = std::max(index.max_row_, k.first);
      index.min_col_ = std::min(index.min_col_, k.second);
      index.max_col_ = std::max(index.max_col_, k.second);
    }
  }
  return index;
}

std::pair<std::int64_t, std::int64_t> SpatialGridIndex::key(const GeoPoint& p) const {
  return {static_cast<std::int64_t>(std::floor(p.lat / cell_deg_)),
          static_cast<std::int64_t>(std::floor(p.lon / cell_deg_))};
}

namespace {

constexpr double kRad = std::numbers::pi / 180.0;

// Haversine lower bound from per-axis minimum separations (degrees) and the
// smallest cosine of latitude the far point can have.
double haversine_lower_bound_km(double min_dlat, double min_dlon, double cos_p, double cos_far_min) {
  const double s1 = std::sin(min_dlat * kRad / 2.0);
  const double s2 = std::sin(std::min(min_dlon, 180.0) * kRad / 2.0);
  const double h = s1 * s1 + cos_p * std::max(0.0, cos_far_min) * s2 * s2;
  return 2.0 * kEarthRadiusKm * std::asin(std::min(1.0, std::sqrt(h)));
}

double min_cos_lat(double lat0, double lat1) {
  return std::min(std::cos(std::clamp(lat0, -90.0, 90.0) * kRad),
                  std::cos(std::clamp(lat1, -90.0, 90.0) * kRad));
}

}  // namespace

double SpatialGridIndex::bucket_lower_bound_km(const GeoPoint& p,
                                               std::pair<std::int64_t, std::int64_t> k) const {
  const double lat0 = static_cast<double>(k.first) * cell_deg_;
  const double lat1 = lat0 + cell_deg_;
  const double lon0 = static_cast<double>(k.second) * cell_deg_;
  const double lon1 = lon0 + cell_deg_;
  const double dlat = p.lat < lat0 ? lat0 - p.lat : (p.lat > lat1 ? p.lat - lat1 : 0.0);
  const double dlon = p.lon < lon0 ? lon0 - p.lon : (p.lon > lon1 ? p.lon - lon1 : 0.0);
  return haversine_lower_bound_km(dlat, dlon, std::cos(p.lat * kRad), min_cos_lat(lat0, lat1));
}

std::optional<Neighbor> SpatialGridIndex::nearest(const GeoPoint& p) const {
  if (points_.empty()) return std::nullopt;
  const auto [qr, qc] = key(p);
  std::optional<Neighbor> best;
  auto consider = [&](std::size_t i) {
    const double d = haversine_km(p, points_[i].location);
    if (!best || d < best->distance_km || (d == best->distance_km && points_[i].id < best->sv_id))
      best = Neighbor{points_[i].id, d};
  };
  auto visit = [&](std::int64_t r, std::int64_t c) {
    if (r < min_row_ || r > max_row_ || c < min_col_ || c > max_col_) return;
    const std::pair<std::int64_t, std::int64_t> k{r, c};
    auto it = buckets_.find(k);
    if (it == buckets_.end()) return;
    if (best && bucket_lower_bound_km(p, k) > best->distance_km) return;
    for (std::size_t i : it->second) consider(i);
  };

  const double cos_p = std::cos(p.lat * kRad);
  const double cos_extent = min_cos_lat(static_cast<double>(min_row_) * cell_deg_,
                                        static_cast<double>(max_row_ + 1) * cell_deg_);
  // No bucket lies beyond this ring.
  const std::int64_t max_ring =
      std::max({std::abs(qr - min_row_), std::abs(qr - max_row_), std::abs(qc - min_col_),
                std::abs(qc - max_col_)});
  for (std::int64_t ring = 0; ring <= max_ring; ++ring) {
    if (ring == 0) {
      visit(qr, qc);
    } else {
      for (std::int64_t c = qc - ring; c <= qc + ring; ++c) {
        visit(qr - ring, c);
        visit(qr + ring, c);
      }
      for (std::int64_t r = qr - ring + 1; r <= qr + ring - 1; ++r) {
        visit(r, qc - ring);
        visit(r, qc + ring);
      }
    }
    if (!best) continue;
    // Any point outside the searched square differs from p by at least this
    // much in latitude or in longitude.
    const double lat_gap = std::min(p.lat - static_cast<double>(qr - ring) * cell_deg_,
                                    static_cast<double>(qr + ring + 1) * cell_deg_ - p.lat);
    const double lon_gap = std::min(p.lon - static_cast<double>(qc - ring) * cell_deg_,
                                    static_cast<double>(qc + ring + 1) * cell_deg_ - p.lon);
    const double outside = std::min(haversine_lower_bound_km(lat_gap, 0.0, cos_p, 1.0),
                                    haversine_lower_bound_km(0.0, lon_gap, cos_p, cos_extent));
    if (best->distance_km < outside) break;
  }
  return best;
}

std::optional<Neighbor> nearest_streetview(const SpatialGridIndex& index, const ImageRecord& sat) {
  return index.nearest(sat.location);
}

std::vector<AlignedPair> build_pairs(std::span<const ImageRecord> satellites,
                                     std::span<const ImageRecord> streetviews,
                                     const NightlightRaster& raster, const PairingOptions& options,
                                     PairingStats* stats) {
  std::vector<ImageRecord> eligible;
  for (const auto& r : streetviews)
    if (!options.heading || (r.heading && *r.heading == *options.heading)) eligible.push_back(r);
  const SpatialGridIndex index = SpatialGridIndex::build(eligible);

  PairingStats local;
  std::vector<AlignedPair> pairs;
  for (const auto& sat : satellites) {
    if (sat.kind != ImageKind::kSatellite)
      throw ContractError("build_pairs: record '" + sat.id + "' is not a satellite image");
    ++local.candidates;
    const auto nn = index.nearest(sat.location);
    if (!nn) {
      ++local.dropped_no_streetview;
      continue;
    }
    if (nn->distance_km > options.max_distance_km) {
      ++local.dropped_distance;
      continue;
    }
    AlignedPair pair;
    pair.sat_id = sat.id;
    pair.sv_id = nn->sv_id;
    pair.distance_km = nn->distance_km;
    const TileId tile = latlon_to_tile(sat.location, kPairingZoom);
    pair.cell = tile.key();
    try {
      pair.label = nightlight_window_mean(raster, tile_center(tile), options.label_window_km);
    } catch (const EmptyWindowError&) {
      ++local.dropped_empty_window;
      continue;
    }
    pairs.push_back(std::move(pair));
  }
  std::sort(pairs.begin(), pairs.end(),
            [](const AlignedPair& a, const AlignedPair& b) { return a.sat_id < b.sat_id; });
  if (stats) *stats = local;
  return pairs;
}

std::vector<AlignedPair> read_pairs(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open pair file " + path.string());
  std::vector<AlignedPair> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(AlignedPair::from_json(nlohmann::json::parse(line)));
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(path.string() + ": " + e.what());
    }
  }
  return out;
}

void write_pairs(const std::filesystem::path& path, std::span<const AlignedPair> pairs) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write pair file " + path.string());
  for (const auto& p : pairs) out << p.to_json().dump() << "\n";
}

}  // namespace geoecon
