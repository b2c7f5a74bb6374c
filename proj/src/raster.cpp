#include "geoecon/raster.hpp"

#include <bit>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

#include "geoecon/error.hpp"

namespace geoecon {

static_assert(std::endian::native == std::endian::little, "NLR1 payload is little-endian");

NightlightRaster parse_nlr1(const std::string& bytes, const std::string& context) {
  const auto eol = bytes.find('\n');
  if (eol == std::string::npos || eol > 256) throw FormatError(context + ": missing NLR1 header");
  std::istringstream header(bytes.substr(0, eol));
  std::string magic;
  NightlightRaster r;
  header >> magic >> r.meta.rows >> r.meta.cols >> r.meta.origin_lat >> r.meta.origin_lon >>
      r.meta.step;
  if (magic != "NLR1") throw FormatError(context + ": bad magic '" + magic + "'");
  if (!header || !(header >> std::ws).eof())
    throw FormatError(context + ": malformed NLR1 header");
  if (!r.meta.valid()) throw FormatError(context + ": invalid raster dimensions or step");
  const auto count = static_cast<std::size_t>(r.meta.rows) * static_cast<std::size_t>(r.meta.cols);
  const std::size_t payload = bytes.size() - eol - 1;
  if (payload != count * sizeof(float))
    throw FormatError(context + ": payload has " + std::to_string(payload) + " bytes, header declares " +
                      std::to_string(count * sizeof(float)));
  r.values.resize(count);
  std::memcpy(r.values.data(), bytes.data() + eol + 1, payload);
  return r;
}

std::string serialize_nlr1(const NightlightRaster& raster) {
  const auto& m = raster.meta;
  if (!m.valid() || raster.values.size() != static_cast<std::size_t>(m.rows * m.cols))
    throw ShapeError("raster values do not match metadata");
  char header[256];
  const int n = std::snprintf(header, sizeof header, "NLR1 %lld %lld %.17g %.17g %.17g\n",
                              static_cast<long long>(m.rows), static_cast<long long>(m.cols),
                              m.origin_lat, m.origin_lon, m.step);
  std::string out(header, static_cast<std::size_t>(n));
  out.append(reinterpret_cast<const char*>(raster.values.data()), raster.values.size() * sizeof(float));
  return out;
}

NightlightRaster load_nightlight_raster(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open raster " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return parse_nlr1(bytes, path.string());
}

void save_nightlight_raster(const NightlightRaster& raster, const std::filesystem::path& path) {
  const std::string bytes = serialize_nlr1(raster);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("cannot write raster " + path.string());
}

}  // namespace geoecon
