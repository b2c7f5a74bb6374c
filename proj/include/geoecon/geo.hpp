#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace geoecon {

struct GeoPoint {
  double lat = 0.0;
  double lon = 0.0;

  bool valid() const;
  friend bool operator==(const GeoPoint&, const GeoPoint&) = default;
};

// Web-Mercator slippy-map tile address.
struct TileId {
  int zoom = 12;
  std::int64_t x = 0;
  std::int64_t y = 0;

  // "z/x/y", the cell key used throughout the pipeline and the store.
  std::string key() const;
  static TileId parse(const std::string& key);

  friend bool operator==(const TileId&, const TileId&) = default;
  friend auto operator<=>(const TileId&, const TileId&) = default;
};

struct BBox {
  GeoPoint min;
  GeoPoint max;

  bool valid() const;
  bool contains(const GeoPoint& p) const;  // closed on all sides
  bool intersects(const BBox& other) const;
  GeoPoint center() const;
};

constexpr int kPairingZoom = 12;
constexpr double kMercatorMaxLat = 85.05112878;
constexpr double kEarthRadiusKm = 6371.0088;
// Kilometres per degree of latitude under the locally flat approximation.
constexpr double kKmPerDegree = 111.195;
// VIIRS monthly composite grid spacing.
constexpr double kNightlightStepDeg = 0.0041666667;

TileId latlon_to_tile(const GeoPoint& p, int zoom = kPairingZoom);
BBox tile_to_bbox(const TileId& t);
GeoPoint tile_center(const TileId& t);

double haversine_km(const GeoPoint& a, const GeoPoint& b);

struct CountyPolygon {
  std::string county_id;
  std::string name;
  // Implicitly closed: a repeated first vertex at the end is accepted and
  // ignored.
  std::vector<GeoPoint> ring;

  BBox bounds() const;
};

// Even-odd containment in lon/lat space; points on an edge or vertex count as
// inside. Throws InvalidPolygonError for fewer than 3 distinct vertices.
bool point_in_polygon(const GeoPoint& p, const CountyPolygon& poly);

struct RasterMeta {
  double origin_lat = 0.0;  // north edge
  double origin_lon = 0.0;  // west edge
  double step = kNightlightStepDeg;
  std::int64_t rows = 0;
  std::int64_t cols = 0;

  bool valid() const;
  BBox extent() const;
  // Centre of cell (row, col). Row 0 is the northernmost row.
  GeoPoint cell_center(std::int64_t row, std::int64_t col) const;
};

struct RasterIndex {
  std::int64_t row = 0;
  std::int64_t col = 0;
  friend bool operator==(const RasterIndex&, const RasterIndex&) = default;
};

RasterIndex raster_cell_index(const RasterMeta& meta, const GeoPoint& p);

// Row-major grid of values; NaN marks a missing cell.
struct NightlightRaster {
  RasterMeta meta;
  std::vector<float> values;

  float at(std::int64_t row, std::int64_t col) const {
    return values[static_cast<std::size_t>(row * meta.cols + col)];
  }
};

// Mean over cells whose centres lie in the axis-aligned square of side
// side_km centred on `center`. Throws EmptyWindowError when no valid cell
// falls inside.
double nightlight_window_mean(const NightlightRaster& raster, const GeoPoint& center,
                              double side_km);

// Half-extent of a side_km window in degrees: {dlat, dlon}.
std::pair<double, double> window_half_extent_deg(const GeoPoint& center, double side_km);

}  // namespace geoecon
