#include "geoecon/geo.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

#include "geoecon/error.hpp"

namespace geoecon {

namespace {

constexpr double kDeg = std::numbers::pi / 180.0;

std::string describe(const GeoPoint& p) {
  std::ostringstream os;
  os.precision(12);
  os << "(" << p.lat << ", " << p.lon << ")";
  return os.str();
}

}  // namespace

bool GeoPoint::valid() const {
  return std::isfinite(lat) && std::isfinite(lon) && lat >= -90.0 && lat <= 90.0 &&
         lon >= -180.0 && lon <= 180.0;
}

std::string TileId::key() const {
  return std::to_string(zoom) + "/" + std::to_string(x) + "/" + std::to_string(y);
}

TileId TileId::parse(const std::string& key) {
  TileId t;
  char s1 = 0, s2 = 0;
  std::istringstream is(key);
  if (!(is >> t.zoom >> s1 >> t.x >> s2 >> t.y) || s1 != '/' || s2 != '/' || !is.eof())
    throw FormatError("malformed tile key '" + key + "'");
  const std::int64_t n = std::int64_t{1} << t.zoom;
  if (t.zoom < 0 || t.zoom > 19 || t.x < 0 || t.y < 0 || t.x >= n || t.y >= n)
    throw RangeError("tile key out of range '" + key + "'");
  return t;
}

bool BBox::valid() const {
  return min.valid() && max.valid() && min.lat <= max.lat && min.lon <= max.lon;
}

bool BBox::contains(const GeoPoint& p) const {
  return p.lat >= min.lat && p.lat <= max.lat && p.lon >= min.lon && p.lon <= max.lon;
}

bool BBox::intersects(const BBox& o) const {
  return !(o.max.lat < min.lat || o.min.lat > max.lat || o.max.lon < min.lon ||
           o.min.lon > max.lon);
}

GeoPoint BBox::center() const {
  return {(min.lat + max.lat) / 2.0, (min.lon + max.lon) / 2.0};
}

TileId latlon_to_tile(const GeoPoint& p, int zoom) {
  if (!p.valid()) throw RangeError("invalid coordinate " + describe(p));
  if (zoom < 0 || zoom > 19) throw RangeError("zoom must be in [0, 19]");
  if (std::abs(p.lat) > kMercatorMaxLat)
    throw RangeError("latitude beyond Web-Mercator limit " + describe(p));

  const double n = std::ldexp(1.0, zoom);
  const double phi = p.lat * kDeg;
  const double fx = (p.lon + 180.0) / 360.0 * n;
  const double fy = (1.0 - std::log(std::tan(phi) + 1.0 / std::cos(phi)) / std::numbers::pi) /
                    2.0 * n;
  const auto last = static_cast<std::int64_t>(n) - 1;
  TileId t;
  t.zoom = zoom;
  // lon = 180 and the clamp latitude land exactly on the far edge.
  t.x = std::clamp<std::int64_t>(static_cast<std::int64_t>(std::floor(fx)), 0, last);
  t.y = std::clamp<std::int64_t>(static_cast<std::int64_t>(std::floor(fy)), 0, last);
  return t;
}

namespace {

double tile_lat(double y, double n) {
  const double m = std::numbers::pi * (1.0 - 2.0 * y / n);
  return std::atan(std::sinh(m)) / kDeg;
}

}  // namespace

BBox tile_to_bbox(const TileId& t) {
  const std::int64_t ni = std::int64_t{1} << t.zoom;
  if (t.zoom < 0 || t.zoom > 19 || t.x < 0 || t.y < 0 || t.x >= ni || t.y >= ni)
    throw RangeError("invalid tile " + t.key());
  const double n = static_cast<double>(ni);
  BBox b;
  b.min.lon = static_cast<double>(t.x) / n * 360.0 - 180.0;
  b.max.lon = static_cast<double>(t.x + 1) / n * 360.0 - 180.0;
  b.max.lat = tile_lat(static_cast<double>(t.y), n);
  b.min.lat = tile_lat(static_cast<double>(t.y + 1), n);
  return b;
}

GeoPoint tile_center(const TileId& t) { return tile_to_bbox(t).center(); }

double haversine_km(const GeoPoint& a, const GeoPoint& b) {
  const double dlat = (b.lat - a.lat) * kDeg;
  const double dlon = (b.lon - a.lon) * kDeg;
  const double s1 = std::sin(dlat / 2.0);
  const double s2 = std::sin(dlon / 2.0);
  const double h = s1 * s1 + std::cos(a.lat * kDeg) * std::cos(b.lat * kDeg) * s2 * s2;
  return 2.0 * kEarthRadiusKm * std::asin(std::min(1.0, std::sqrt(h)));
}

BBox CountyPolygon::bounds() const {
  BBox b{{90.0, 180.0}, {-90.0, -180.0}};
  for (const auto& v : ring) {
    b.min.lat = std::min(b.min.lat, v.lat);
    b.min.lon = std::min(b.min.lon, v.lon);
    b.max.lat = std::max(b.max.lat, v.lat);
    b.max.lon = std::max(b.max.lon, v.lon);
  }
  return b;
}

namespace {

bool on_segment(const GeoPoint& p, const GeoPoint& a, const GeoPoint& b) {
  const double cross = (b.lon - a.lon) * (p.lat - a.lat) - (b.lat - a.lat) * (p.lon - a.lon);
  const double scale = std::max({std::abs(b.lon - a.lon), std::abs(b.lat - a.lat), 1.0});
  if (std::abs(cross) > 1e-12 * scale) return false;
  return p.lon >= std::min(a.lon, b.lon) - 1e-12 && p.lon <= std::max(a.lon, b.lon) + 1e-12 &&
         p.lat >= std::min(a.lat, b.lat) - 1e-12 && p.lat <= std::max(a.lat, b.lat) + 1e-12;
}

}  // namespace

bool point_in_polygon(const GeoPoint& p, const CountyPolygon& poly) {
  std::vector<GeoPoint> ring = poly.ring;
  if (ring.size() > 1 && ring.front() == ring.back()) ring.pop_back();

  std::vector<GeoPoint> distinct = ring;
  std::sort(distinct.begin(), distinct.end(), [](const GeoPoint& a, const GeoPoint& b) {
    return a.lat != b.lat ? a.lat < b.lat : a.lon < b.lon;
  });
  distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
  if (distinct.size() < 3)
    throw InvalidPolygonError("county '" + poly.county_id +
                              "' has fewer than 3 distinct vertices");

  bool inside = false;
  const std::size_t n = ring.size();
  for (std::size_t i = 0, j = n - 1; i < n; j = i++) {
    const GeoPoint& a = ring[i];
    const GeoPoint& b = ring[j];
    if (on_segment(p, a, b)) return true;
    if ((a.lat > p.lat) != (b.lat > p.lat)) {
      const double x = (b.lon - a.lon) * (p.lat - a.lat) / (b.lat - a.lat) + a.lon;
      if (p.lon < x) inside = !inside;
    }
  }
  return inside;
}

bool RasterMeta::valid() const {
  return step > 0.0 && rows > 0 && cols > 0 && std::isfinite(origin_lat) &&
         std::isfinite(origin_lon);
}

BBox RasterMeta::extent() const {
  return {{origin_lat - static_cast<double>(rows) * step, origin_lon},
          {origin_lat, origin_lon + static_cast<double>(cols) * step}};
}

GeoPoint RasterMeta::cell_center(std::int64_t row, std::int64_t col) const {
  return {origin_lat - (static_cast<double>(row) + 0.5) * step,
          origin_lon + (static_cast<double>(col) + 0.5) * step};
}

RasterIndex raster_cell_index(const RasterMeta& meta, const GeoPoint& p) {
  const double fc = std::floor((p.lon - meta.origin_lon) / meta.step);
  const double fr = std::floor((meta.origin_lat - p.lat) / meta.step);
  if (!(fc >= 0.0 && fr >= 0.0 && fc < static_cast<double>(meta.cols) &&
        fr < static_cast<double>(meta.rows)))
    throw OutOfBoundsError("point " + describe(p) + " outside raster extent");
  return {static_cast<std::int64_t>(fr), static_cast<std::int64_t>(fc)};
}

std::pair<double, double> window_half_extent_deg(const GeoPoint& center, double side_km) {
  const double dlat = side_km / kKmPerDegree / 2.0;
  const double dlon = side_km / (kKmPerDegree * std::cos(center.lat * kDeg)) / 2.0;
  return {dlat, dlon};
}

double nightlight_window_mean(const NightlightRaster& raster, const GeoPoint& center,
                              double side_km) {
  if (!(side_km > 0.0)) throw ParameterError("window side must be positive");
  const RasterMeta& m = raster.meta;
  const auto [dlat, dlon] = window_half_extent_deg(center, side_km);

  // Candidate index range, widened by one; the exact predicate below decides.
  const auto lo_row = static_cast<std::int64_t>(
      std::floor((m.origin_lat - (center.lat + dlat)) / m.step - 0.5)) - 1;
  const auto hi_row = static_cast<std::int64_t>(
      std::ceil((m.origin_lat - (center.lat - dlat)) / m.step - 0.5)) + 1;
  const auto lo_col = static_cast<std::int64_t>(
      std::floor((center.lon - dlon - m.origin_lon) / m.step - 0.5)) - 1;
  const auto hi_col = static_cast<std::int64_t>(
      std::ceil((center.lon + dlon - m.origin_lon) / m.step - 0.5)) + 1;

  double sum = 0.0;
  std::int64_t count = 0;
  for (std::int64_t r = std::max<std::int64_t>(lo_row, 0); r <= std::min(hi_row, m.rows - 1); ++r) {
    for (std::int64_t c = std::max<std::int64_t>(lo_col, 0); c <= std::min(hi_col, m.cols - 1);
         ++c) {
      const GeoPoint cc = m.cell_center(r, c);
      if (std::abs(cc.lat - center.lat) > dlat || std::abs(cc.lon - center.lon) > dlon) continue;
      const float v = raster.at(r, c);
      if (std::isnan(v)) continue;
      sum += static_cast<double>(v);
      ++count;
    }
  }
  if (count == 0) throw EmptyWindowError("no valid raster cells in window at " + describe(center));
  return sum / static_cast<double>(count);
}

}  // namespace geoecon
