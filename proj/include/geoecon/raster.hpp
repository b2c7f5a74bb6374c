#pragma once

#include <filesystem>

#include "geoecon/geo.hpp"

namespace geoecon {

// NLR1: one ASCII header line
//   NLR1 <rows> <cols> <origin_lat> <origin_lon> <step>\n
// followed by rows*cols little-endian float32 values, row-major, row 0 north.
NightlightRaster load_nightlight_raster(const std::filesystem::path& path);
void save_nightlight_raster(const NightlightRaster& raster, const std::filesystem::path& path);

NightlightRaster parse_nlr1(const std::string& bytes, const std::string& context);
std::string serialize_nlr1(const NightlightRaster& raster);

}  // namespace geoecon
