#include "geoecon/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>

#include "geoecon/error.hpp"
#include "geoecon/image.hpp"
#include "geoecon/raster.hpp"
#include "geoecon/tensor.hpp"

namespace geoecon {

namespace fs = std::filesystem;

nlohmann::json SynthOptions::to_json() const {
  nlohmann::json j = {{"seed", seed},
                      {"n_pairs", n_pairs},
                      {"streetviews_per_satellite", streetviews_per_satellite},
                      {"headings", headings},
                      {"periods", periods},
                      {"complementary", complementary},
                      {"county_rows", county_rows},
                      {"county_cols", county_cols},
                      {"satellite_side", satellite_side},
                      {"streetview_width", streetview_width},
                      {"streetview_height", streetview_height}};
  if (region)
    j["region"] = {region->min.lat, region->min.lon, region->max.lat, region->max.lon};
  return j;
}

SynthOptions SynthOptions::from_json(const nlohmann::json& j) {
  SynthOptions o;
  o.seed = j.value("seed", o.seed);
  o.n_pairs = j.value("n_pairs", o.n_pairs);
  o.streetviews_per_satellite = j.value("streetviews_per_satellite", o.streetviews_per_satellite);
  o.headings = j.value("headings", o.headings);
  o.periods = j.value("periods", o.periods);
  o.complementary = j.value("complementary", o.complementary);
  o.county_rows = j.value("county_rows", o.county_rows);
  o.county_cols = j.value("county_cols", o.county_cols);
  o.satellite_side = j.value("satellite_side", o.satellite_side);
  o.streetview_width = j.value("streetview_width", o.streetview_width);
  o.streetview_height = j.value("streetview_height", o.streetview_height);
  if (j.contains("region")) {
    const auto r = j.at("region").get<std::vector<double>>();
    if (r.size() != 4) throw ParameterError("synth region must be [min_lat, min_lon, max_lat, max_lon]");
    o.region = BBox{{r[0], r[1]}, {r[2], r[3]}};
  }
  return o;
}

namespace {

constexpr GeoPoint kDefaultAnchor{30.6, 114.3};
// Western/northern edges of the global monthly nightlight grid.
constexpr double kGridWest = -180.00208333335;
constexpr double kGridNorth = 75.00208333335;
constexpr double kStreetViewSpacingKm = 0.110;

struct Bump {
  GeoPoint center;
  double sigma_km;
  double amplitude;
};

// Smooth field in [0, 1): 1 - exp(-sum of Gaussian bumps).
class LatentField {
 public:
  LatentField(const BBox& region, int bumps, Rng& rng) {
    const double extent_km = std::max((region.max.lat - region.min.lat) * kKmPerDegree,
                                      (region.max.lon - region.min.lon) * kKmPerDegree *
                                          std::cos(region.center().lat * std::numbers::pi / 180.0));
    for (int i = 0; i < bumps; ++i) {
      Bump b;
      b.center = {region.min.lat + rng.uniform() * (region.max.lat - region.min.lat),
                  region.min.lon + rng.uniform() * (region.max.lon - region.min.lon)};
      b.sigma_km = extent_km * (0.12 + 0.18 * rng.uniform());
      b.amplitude = 0.6 + rng.uniform();
      bumps_.push_back(b);
    }
  }

  double operator()(const GeoPoint& p) const {
    double s = 0.0;
    for (const auto& b : bumps_) {
      const double dy = (p.lat - b.center.lat) * kKmPerDegree;
      const double dx = (p.lon - b.center.lon) * kKmPerDegree * std::cos(b.center.lat * std::numbers::pi / 180.0);
      s += b.amplitude * std::exp(-(dx * dx + dy * dy) / (2.0 * b.sigma_km * b.sigma_km));
    }
    return 1.0 - std::exp(-(s + 0.02));
  }

  nlohmann::json to_json() const {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& b : bumps_)
      arr.push_back({{"lat", b.center.lat}, {"lon", b.center.lon}, {"sigma_km", b.sigma_km},
                     {"amplitude", b.amplitude}});
    return arr;
  }

 private:
  std::vector<Bump> bumps_;
};

std::uint8_t clamp_byte(double v) {
  return static_cast<std::uint8_t>(std::clamp(v, 0.0, 255.0) + 0.5);
}

void fill_rect(Image8& img, int y0, int x0, int y1, int x1, const double rgb[3], double noise,
               Rng& rng) {
  for (int y = std::max(0, y0); y < std::min(img.height, y1); ++y)
    for (int x = std::max(0, x0); x < std::min(img.width, x1); ++x)
      for (int c = 0; c < 3; ++c)
        img.at(c, y, x) = clamp_byte(rgb[c] + (noise > 0.0 ? noise * rng.normal() : 0.0));
}

// Vegetation background, two roads, and building footprints on a lot grid
// whose occupancy grows linearly with development.
Image8 render_satellite(int side, double development, Rng& rng) {
  Image8 img(side, side);
  const double veg[3] = {70.0, 120.0, 60.0};
  const double road[3] = {125.0, 125.0, 125.0};
  const double roof[3] = {205.0, 200.0, 195.0};
  fill_rect(img, 0, 0, side, side, veg, 12.0, rng);
  const int lot = std::max(4, side / 16);
  const double occupancy = 0.04 + 0.6 * std::clamp(development, 0.0, 1.0);
  for (int ly = 0; ly + lot <= side; ly += lot)
    for (int lx = 0; lx + lot <= side; lx += lot) {
      if (rng.uniform() >= occupancy) continue;
      const int m1 = 1 + static_cast<int>(rng.below(3));
      const int m2 = 1 + static_cast<int>(rng.below(3));
      fill_rect(img, ly + m1, lx + m2, ly + lot - m2, lx + lot - m1, roof, 6.0, rng);
    }
  const int ry = static_cast<int>(rng.below(static_cast<std::uint64_t>(side - 4)));
  const int rx = static_cast<int>(rng.below(static_cast<std::uint64_t>(side - 4)));
  fill_rect(img, ry, 0, ry + 4, side, road, 0.0, rng);
  fill_rect(img, 0, rx, side, rx + 4, road, 0.0, rng);
  return img;
}

// Sky, street and a facade band of vertical stripes; the share of lit
// shopfront stripes grows with the signal.
Image8 render_streetview(int width, int height, double signal, Rng& rng) {
  Image8 img(height, width);
  const int sky_end = height * 3 / 10;
  const int ground_start = height * 13 / 16;
  for (int y = 0; y < sky_end; ++y) {
    const double t = static_cast<double>(y) / std::max(1, sky_end);
    const double sky[3] = {135.0 + 40.0 * t, 180.0 + 30.0 * t, 230.0};
    fill_rect(img, y, 0, y + 1, width, sky, 0.0, rng);
  }
  const double ground[3] = {90.0, 90.0, 92.0};
  fill_rect(img, ground_start, 0, height, width, ground, 0.0, rng);
  const double lit[3] = {230.0, 170.0, 90.0};
  const double concrete[3] = {150.0, 150.0, 155.0};
  const double share = 0.1 + 0.7 * std::clamp(signal, 0.0, 1.0);
  int x = 0;
  while (x < width) {
    const int w = 8 + static_cast<int>(rng.below(17));
    const bool is_lit = rng.uniform() < share;
    fill_rect(img, sky_end, x, ground_start, x + w, is_lit ? lit : concrete, 0.0, rng);
    // Dark edge between facades.
    const double edge[3] = {40.0, 40.0, 45.0};
    fill_rect(img, sky_end, x + w - 1, ground_start, x + w, edge, 0.0, rng);
    x += w;
  }
  return img;
}

std::vector<CountyPolygon> make_counties(const BBox& region, int rows, int cols, Rng& rng) {
  // Shared jittered vertex lattice so counties tile the region exactly.
  std::vector<std::vector<GeoPoint>> v(static_cast<std::size_t>(rows + 1),
                                       std::vector<GeoPoint>(static_cast<std::size_t>(cols + 1)));
  const double dlat = (region.max.lat - region.min.lat) / rows;
  const double dlon = (region.max.lon - region.min.lon) / cols;
  for (int r = 0; r <= rows; ++r)
    for (int c = 0; c <= cols; ++c) {
      GeoPoint p{region.max.lat - r * dlat, region.min.lon + c * dlon};
      if (r > 0 && r < rows) p.lat += (rng.uniform() - 0.5) * 0.4 * dlat;
      if (c > 0 && c < cols) p.lon += (rng.uniform() - 0.5) * 0.4 * dlon;
      v[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)] = p;
    }
  std::vector<CountyPolygon> out;
  int k = 1;
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c, ++k) {
      char id[16];
      std::snprintf(id, sizeof id, "C%02d", k);
      CountyPolygon poly;
      poly.county_id = id;
      poly.name = "County " + std::string(id + 1);
      const auto R = static_cast<std::size_t>(r), C = static_cast<std::size_t>(c);
      poly.ring = {v[R][C], v[R][C + 1], v[R + 1][C + 1], v[R + 1][C], v[R][C]};
      out.push_back(std::move(poly));
    }
  return out;
}

std::string padded(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%06zu", i);
  return buf;
}

}  // namespace

SynthCorpus synth_corpus(const SynthOptions& o, const fs::path& out_dir) {
  if (o.n_pairs < 1) throw ParameterError("synth: n_pairs must be >= 1");
  if (o.streetviews_per_satellite < 1) throw ParameterError("synth: need >= 1 street view per satellite");
  if (o.headings.empty()) throw ParameterError("synth: at least one heading required");
  for (int h : o.headings)
    if (h != 0 && h != 90 && h != 180 && h != 270) throw ParameterError("synth: heading must be 0/90/180/270");
  if (o.county_rows < 1 || o.county_cols < 1) throw ParameterError("synth: county grid must be >= 1x1");
  if (o.satellite_side < 16 || o.streetview_width < 16 || o.streetview_height < 16)
    throw ParameterError("synth: image sizes must be >= 16 px");

  Rng root(o.seed);
  Rng layout_rng = root.fork(1);
  Rng field_rng = root.fork(2);
  Rng raster_rng = root.fork(3);
  Rng county_rng = root.fork(4);
  Rng image_rng = root.fork(5);

  // Satellite tiles.
  std::vector<TileId> tiles;
  if (o.region) {
    if (!o.region->valid()) throw ParameterError("synth: degenerate region");
    const TileId a = latlon_to_tile(o.region->max, kPairingZoom);
    const TileId b = latlon_to_tile(o.region->min, kPairingZoom);
    std::vector<TileId> candidates;
    for (std::int64_t y = a.y; y <= b.y; ++y)
      for (std::int64_t x = b.x; x <= a.x; ++x) {
        TileId t{kPairingZoom, x, y};
        if (o.region->contains(tile_center(t))) candidates.push_back(t);
      }
    if (candidates.size() < static_cast<std::size_t>(o.n_pairs))
      throw ParameterError("synth: degenerate region holds " + std::to_string(candidates.size()) +
                           " tiles, need " + std::to_string(o.n_pairs));
    for (std::size_t i = candidates.size(); i > 1; --i)
      std::swap(candidates[i - 1], candidates[layout_rng.below(i)]);
    candidates.resize(static_cast<std::size_t>(o.n_pairs));
    std::sort(candidates.begin(), candidates.end(),
              [](const TileId& l, const TileId& r) { return l.y != r.y ? l.y < r.y : l.x < r.x; });
    tiles = std::move(candidates);
  } else {
    const TileId anchor = latlon_to_tile(kDefaultAnchor, kPairingZoom);
    const auto k = static_cast<std::int64_t>(std::ceil(std::sqrt(static_cast<double>(o.n_pairs))));
    for (std::int64_t dy = 0; dy < k && tiles.size() < static_cast<std::size_t>(o.n_pairs); ++dy)
      for (std::int64_t dx = 0; dx < k && tiles.size() < static_cast<std::size_t>(o.n_pairs); ++dx)
        tiles.push_back({kPairingZoom, anchor.x + dx, anchor.y + dy});
  }

  BBox region{{90.0, 180.0}, {-90.0, -180.0}};
  for (const auto& t : tiles) {
    const BBox b = tile_to_bbox(t);
    region.min.lat = std::min(region.min.lat, b.min.lat);
    region.min.lon = std::min(region.min.lon, b.min.lon);
    region.max.lat = std::max(region.max.lat, b.max.lat);
    region.max.lon = std::max(region.max.lon, b.max.lon);
  }
  if (o.region) region = *o.region;

  const LatentField development(region, 5, field_rng);
  const LatentField complement(region, 4, field_rng);

  // Street-view points: short road segment through each tile centre.
  struct SvPoint {
    std::size_t sat_index;
    GeoPoint location;
  };
  std::vector<SvPoint> sv_points;
  for (std::size_t i = 0; i < tiles.size(); ++i) {
    const GeoPoint c = tile_center(tiles[i]);
    const double theta = layout_rng.uniform() * std::numbers::pi;
    const double coslat = std::cos(c.lat * std::numbers::pi / 180.0);
    const double off0 = (layout_rng.uniform() - 0.5) * 2.0;  // km
    const int n = o.streetviews_per_satellite;
    for (int k = 0; k < n; ++k) {
      const double along = off0 + (k - (n - 1) / 2.0) * kStreetViewSpacingKm +
                           (layout_rng.uniform() - 0.5) * 0.02;
      const double across = (layout_rng.uniform() - 0.5) * 0.02;
      const double east = along * std::cos(theta) - across * std::sin(theta);
      const double north = along * std::sin(theta) + across * std::cos(theta);
      sv_points.push_back({i, {c.lat + north / kKmPerDegree, c.lon + east / (kKmPerDegree * coslat)}});
    }
  }

  fs::create_directories(out_dir / "images" / "satellite");
  fs::create_directories(out_dir / "images" / "streetview");
  const CorpusPaths paths{out_dir};

  // Raster grid aligned to the global nightlight grid, with a margin.
  RasterMeta meta;
  meta.step = kNightlightStepDeg;
  const double margin = 0.1;
  const double col0 = std::floor((region.min.lon - margin - kGridWest) / meta.step);
  const double row0 = std::floor((kGridNorth - (region.max.lat + margin)) / meta.step);
  meta.origin_lon = kGridWest + col0 * meta.step;
  meta.origin_lat = kGridNorth - row0 * meta.step;
  meta.cols = static_cast<std::int64_t>(std::ceil((region.max.lon + margin - meta.origin_lon) / meta.step));
  meta.rows = static_cast<std::int64_t>(std::ceil((meta.origin_lat - (region.min.lat - margin)) / meta.step));

  const std::vector<std::string> periods = o.periods.empty() ? std::vector<std::string>{""} : o.periods;

  SynthCorpus corpus;
  corpus.region = region;
  corpus.counties = make_counties(region, o.county_rows, o.county_cols, county_rng);
  nlohmann::json truth;
  truth["options"] = o.to_json();
  truth["region"] = {region.min.lat, region.min.lon, region.max.lat, region.max.lon};
  truth["development_field"] = development.to_json();
  truth["complement_field"] = complement.to_json();
  truth["periods"] = nlohmann::json::array();

  for (std::size_t pi = 0; pi < periods.size(); ++pi) {
    const std::string& period = periods[pi];
    const double growth = 1.0 + 0.06 * static_cast<double>(pi);
    auto dev_at = [&](const GeoPoint& p) { return std::min(1.0, development(p) * growth); };

    NightlightRaster raster;
    raster.meta = meta;
    raster.values.resize(static_cast<std::size_t>(meta.rows * meta.cols));
    for (std::int64_t r = 0; r < meta.rows; ++r)
      for (std::int64_t c = 0; c < meta.cols; ++c) {
        const GeoPoint p = meta.cell_center(r, c);
        double v = 10.0 * dev_at(p) + 0.3 * raster_rng.normal();
        if (o.complementary) v += 6.0 * complement(p);
        float stored = static_cast<float>(std::max(0.0, v));
        if (raster_rng.uniform() < 0.005) stored = std::nanf("");
        raster.values[static_cast<std::size_t>(r * meta.cols + c)] = stored;
      }
    save_nightlight_raster(raster, paths.raster(period));

    const std::string suffix = period.empty() ? "" : "-" + period;
    nlohmann::json per_sat = nlohmann::json::array();
    for (std::size_t i = 0; i < tiles.size(); ++i) {
      const GeoPoint c = tile_center(tiles[i]);
      ImageRecord rec;
      rec.id = "sat-" + padded(i) + suffix;
      rec.kind = ImageKind::kSatellite;
      rec.location = c;
      rec.path = out_dir / "images" / "satellite" / (rec.id + ".png");
      rec.width = rec.height = o.satellite_side;
      rec.period = period;
      const double d = dev_at(c);
      Rng img_rng = image_rng.fork(pi * 1'000'003ULL + i);
      const Image8 img = render_satellite(o.satellite_side, d, img_rng);
      encode_png(img, rec.path);
      double brightness = 0.0;
      for (auto px : img.data) brightness += px;
      brightness /= static_cast<double>(img.data.size());
      double label = std::nan("");
      try {
        label = nightlight_window_mean(raster, c, 5.0);
      } catch (const EmptyWindowError&) {
      }
      per_sat.push_back({{"id", rec.id},
                         {"tile", tiles[i].key()},
                         {"lat", c.lat},
                         {"lon", c.lon},
                         {"development", d},
                         {"complement", complement(c)},
                         {"mean_brightness", brightness},
                         {"label", label}});
      corpus.satellites.push_back(std::move(rec));
    }

    for (std::size_t j = 0; j < sv_points.size(); ++j) {
      const auto& pt = sv_points[j];
      for (int heading : o.headings) {
        ImageRecord rec;
        rec.id = "sv-" + padded(j) + "-h" + std::to_string(heading) + suffix;
        rec.kind = ImageKind::kStreetView;
        rec.location = pt.location;
        rec.heading = heading;
        rec.path = out_dir / "images" / "streetview" / (rec.id + ".png");
        rec.width = o.streetview_width;
        rec.height = o.streetview_height;
        rec.period = period;
        Rng img_rng = image_rng.fork(0x5f5f'0000'0000ULL + pi * 1'000'003ULL * 8 + j * 8 +
                                     static_cast<std::uint64_t>(heading / 90));
        double signal = o.complementary ? complement(pt.location) + 0.03 * img_rng.normal()
                                        : dev_at(pt.location) + 0.08 * img_rng.normal();
        encode_png(render_streetview(o.streetview_width, o.streetview_height, signal, img_rng), rec.path);
        corpus.streetviews.push_back(std::move(rec));
      }
    }
    truth["periods"].push_back({{"period", period}, {"satellites", per_sat}});
  }

  write_manifest(paths.satellites(), corpus.satellites);
  write_manifest(paths.streetviews(), corpus.streetviews);
  write_counties(paths.counties(), corpus.counties);
  corpus.truth = truth;
  std::ofstream(paths.truth(), std::ios::trunc) << truth.dump(1) << "\n";
  return corpus;
}

}  // namespace geoecon
