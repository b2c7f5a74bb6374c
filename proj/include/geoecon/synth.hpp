#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "geoecon/geo.hpp"
#include "geoecon/manifest.hpp"

namespace geoecon {

struct SynthOptions {
  std::uint64_t seed = 0;
  int n_pairs = 512;
  // Tiles whose centres lie inside are candidates. When absent, a square
  // block of zoom-12 tiles anchored in central China is used.
  std::optional<BBox> region;
  int streetviews_per_satellite = 4;
  std::vector<int> headings{0};
  std::vector<std::string> periods;  // empty: a single untagged period
  // Street views see an independent second field that also drives the
  // nightlight, instead of a noisy copy of the satellite-visible one.
  bool complementary = false;
  int county_rows = 3;
  int county_cols = 3;
  int satellite_side = 256;
  int streetview_width = 480;
  int streetview_height = 320;

  nlohmann::json to_json() const;
  static SynthOptions from_json(const nlohmann::json& j);
};

struct SynthCorpus {
  std::vector<ImageRecord> satellites;
  std::vector<ImageRecord> streetviews;
  std::vector<CountyPolygon> counties;
  BBox region;
  nlohmann::json truth;
};

// Corpus directory layout.
struct CorpusPaths {
  std::filesystem::path root;

  std::filesystem::path satellites() const { return root / "satellite.jsonl"; }
  std::filesystem::path streetviews() const { return root / "streetview.jsonl"; }
  std::filesystem::path counties() const { return root / "counties.json"; }
  std::filesystem::path truth() const { return root / "truth.json"; }
  std::filesystem::path raster(const std::string& period = "") const {
    return root / (period.empty() ? "nightlight.nlr1" : "nightlight_" + period + ".nlr1");
  }
};

// Writes manifests, PNGs, per-period NLR1 rasters, county polygons and a
// ground-truth JSON under out_dir. Same options -> byte-identical tree.
// Throws ParameterError for n_pairs < 1 or a region holding too few tiles.
SynthCorpus synth_corpus(const SynthOptions& options, const std::filesystem::path& out_dir);

}  // namespace geoecon
