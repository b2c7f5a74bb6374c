#include <png.h>

#include <fstream>
#include <iterator>

#include "geoecon/error.hpp"
#include "geoecon/image.hpp"

namespace geoecon {

namespace {

Image8 from_rgba(const std::vector<std::uint8_t>& rgba, int h, int w) {
  Image8 img(h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c)
        img.at(c, y, x) = rgba[(static_cast<std::size_t>(y) * w + x) * 4 + c];
  return img;
}

std::vector<std::uint8_t> interleave(const Image8& img) {
  std::vector<std::uint8_t> rgb(static_cast<std::size_t>(img.height) * img.width * 3);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x)
      for (int c = 0; c < 3; ++c)
        rgb[(static_cast<std::size_t>(y) * img.width + x) * 3 + c] = img.at(c, y, x);
  return rgb;
}

}  // namespace

Image8 decode_png_bytes(const std::vector<std::uint8_t>& bytes, const std::string& context) {
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&image, bytes.data(), bytes.size()))
    throw DecodeError(context + ": " + image.message);
  image.format = PNG_FORMAT_RGBA;
  std::vector<std::uint8_t> rgba(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, rgba.data(), 0, nullptr)) {
    const std::string msg = image.message;
    png_image_free(&image);
    throw DecodeError(context + ": " + msg);
  }
  return from_rgba(rgba, static_cast<int>(image.height), static_cast<int>(image.width));
}

Image8 decode_image(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DecodeError(path.string() + ": cannot open");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  return decode_png_bytes(bytes, path.string());
}

std::vector<std::uint8_t> encode_png_bytes(const Image8& img) {
  if (img.height <= 0 || img.width <= 0) throw ShapeError("cannot encode an empty image");
  const auto rgb = interleave(img);
  std::vector<std::uint8_t> out;
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw IoError("png encode: out of memory");
  png_infop info = png_create_info_struct(png);
  if (!info || setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IoError("png encode failed");
  }
  png_set_write_fn(
      png, &out,
      [](png_structp p, png_bytep data, png_size_t n) {
        auto* v = static_cast<std::vector<std::uint8_t>*>(png_get_io_ptr(p));
        v->insert(v->end(), data, data + n);
      },
      nullptr);
  png_set_compression_level(png, 3);
  png_set_filter(png, 0, PNG_FILTER_SUB);
  png_set_IHDR(png, info, static_cast<png_uint_32>(img.width), static_cast<png_uint_32>(img.height), 8,
               PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  const std::size_t stride = static_cast<std::size_t>(img.width) * 3;
  for (int y = 0; y < img.height; ++y)
    png_write_row(png, const_cast<png_bytep>(rgb.data() + static_cast<std::size_t>(y) * stride));
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  return out;
}

void encode_png(const Image8& img, const std::filesystem::path& path) {
  const auto bytes = encode_png_bytes(img);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("cannot write " + path.string());
}

}  // namespace geoecon
