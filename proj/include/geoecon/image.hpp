#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <vector>

#include <json.hpp>

#include "geoecon/tensor.hpp"

namespace geoecon {

// 8-bit RGB image, channel-first.
struct Image8 {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> data;  // [3 x height x width]

  Image8() = default;
  Image8(int h, int w, std::uint8_t fill = 0)
      : height(h), width(w), data(static_cast<std::size_t>(3 * h * w), fill) {}

  std::uint8_t& at(int c, int y, int x) {
    return data[(static_cast<std::size_t>(c) * height + y) * width + x];
  }
  std::uint8_t at(int c, int y, int x) const {
    return data[(static_cast<std::size_t>(c) * height + y) * width + x];
  }
  friend bool operator==(const Image8&, const Image8&) = default;
};

// PNG codec. RGBA input loses its alpha channel; grey is replicated to RGB.
Image8 decode_image(const std::filesystem::path& path);
Image8 decode_png_bytes(const std::vector<std::uint8_t>& bytes, const std::string& context);
void encode_png(const Image8& img, const std::filesystem::path& path);
std::vector<std::uint8_t> encode_png_bytes(const Image8& img);

Tensor to_tensor(const Image8& img);  // values in [0, 255]

// Bilinear resampling with half-pixel centres and edge clamping.
Tensor resize_bilinear(const Tensor& img, int out_h, int out_w);

struct PreprocessPolicy {
  int target_side = 224;
  std::array<double, 3> mean{0.5, 0.5, 0.5};
  std::array<double, 3> std{0.5, 0.5, 0.5};
  // Training-time augmentation.
  bool hflip = false;
  bool vflip = false;
  bool rotate90 = false;
  double crop_fraction = 1.0;  // side fraction kept by a random crop; 1 disables

  void validate() const;
  nlohmann::json to_json() const;
  static PreprocessPolicy from_json(const nlohmann::json& j);
};

// (pixel / 255 - mean_c) / std_c.
Tensor z_normalize(const Tensor& img, const PreprocessPolicy& policy);

// Coin-flip flips, uniform quarter-turn rotation and optional random crop
// resized back to the input side. Square input only.
Tensor augment(const Tensor& img, const PreprocessPolicy& policy, Rng& rng);

// decode -> resize to target_side -> z_normalize.
Tensor preprocess(const Image8& img, const PreprocessPolicy& policy);

// Per-channel mean/std of resized images scaled to [0, 1].
std::pair<std::array<double, 3>, std::array<double, 3>> channel_stats(
    const std::vector<Tensor>& resized_images);

}  // namespace geoecon
