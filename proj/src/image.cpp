#include <algorithm>
#include <cmath>

#include "geoecon/error.hpp"
#include "geoecon/image.hpp"

namespace geoecon {

Tensor to_tensor(const Image8& img) {
  if (img.height <= 0 || img.width <= 0) throw ShapeError("empty image");
  Tensor t({3, static_cast<std::size_t>(img.height), static_cast<std::size_t>(img.width)});
  for (std::size_t i = 0; i < img.data.size(); ++i) t[i] = img.data[i];
  return t;
}

Tensor resize_bilinear(const Tensor& img, int out_h, int out_w) {
  if (img.rank() != 3) throw ShapeError("resize expects [C x H x W], got " + shape_str(img.shape()));
  if (out_h < 1 || out_w < 1) throw ShapeError("resize target must be at least 1x1");
  const std::size_t C = img.dim(0), H = img.dim(1), W = img.dim(2);
  Tensor out({C, static_cast<std::size_t>(out_h), static_cast<std::size_t>(out_w)});

  struct Tap {
    std::size_t i0, i1;
    double w1;
  };
  auto taps = [](std::size_t in, int out_n) {
    std::vector<Tap> t(static_cast<std::size_t>(out_n));
    const double ratio = static_cast<double>(in) / out_n;
    for (int o = 0; o < out_n; ++o) {
      double src = (o + 0.5) * ratio - 0.5;
      src = std::clamp(src, 0.0, static_cast<double>(in - 1));
      const auto i0 = static_cast<std::size_t>(std::floor(src));
      const std::size_t i1 = std::min(i0 + 1, in - 1);
      t[static_cast<std::size_t>(o)] = {i0, i1, src - static_cast<double>(i0)};
    }
    return t;
  };
  const auto ty = taps(H, out_h);
  const auto tx = taps(W, out_w);

  for (std::size_t c = 0; c < C; ++c) {
    const double* src = img.data().data() + c * H * W;
    double* dst = out.data().data() + c * static_cast<std::size_t>(out_h * out_w);
    for (int y = 0; y < out_h; ++y) {
      const Tap& a = ty[static_cast<std::size_t>(y)];
      for (int x = 0; x < out_w; ++x) {
        const Tap& b = tx[static_cast<std::size_t>(x)];
        const double top = src[a.i0 * W + b.i0] * (1.0 - b.w1) + src[a.i0 * W + b.i1] * b.w1;
        const double bot = src[a.i1 * W + b.i0] * (1.0 - b.w1) + src[a.i1 * W + b.i1] * b.w1;
        dst[static_cast<std::size_t>(y * out_w + x)] = top * (1.0 - a.w1) + bot * a.w1;
      }
    }
  }
  return out;
}

void PreprocessPolicy::validate() const {
  if (target_side < 1) throw ParameterError("target_side must be >= 1");
  for (double s : std)
    if (!(s > 0.0)) throw ParameterError("normalisation std must be positive");
  if (!(crop_fraction > 0.0 && crop_fraction <= 1.0))
    throw ParameterError("crop_fraction must be in (0, 1]");
}

nlohmann::json PreprocessPolicy::to_json() const {
  return {{"target_side", target_side}, {"mean", mean},       {"std", std},
          {"hflip", hflip},             {"vflip", vflip},     {"rotate90", rotate90},
          {"crop_fraction", crop_fraction}};
}

PreprocessPolicy PreprocessPolicy::from_json(const nlohmann::json& j) {
  PreprocessPolicy p;
  p.target_side = j.value("target_side", p.target_side);
  p.mean = j.value("mean", p.mean);
  p.std = j.value("std", p.std);
  p.hflip = j.value("hflip", p.hflip);
  p.vflip = j.value("vflip", p.vflip);
  p.rotate90 = j.value("rotate90", p.rotate90);
  p.crop_fraction = j.value("crop_fraction", p.crop_fraction);
  p.validate();
  return p;
}

Tensor z_normalize(const Tensor& img, const PreprocessPolicy& policy) {
  policy.validate();
  if (img.rank() != 3 || img.dim(0) != 3)
    throw ShapeError("z_normalize expects [3 x H x W], got " + shape_str(img.shape()));
  Tensor out = img;
  const std::size_t plane = img.dim(1) * img.dim(2);
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t i = 0; i < plane; ++i)
      out[c * plane + i] = (img[c * plane + i] / 255.0 - policy.mean[c]) / policy.std[c];
  return out;
}

namespace {

// out(y, x) = in(map(y, x)) for a square image.
template <class F>
Tensor remap(const Tensor& img, F map) {
  const std::size_t C = img.dim(0), S = img.dim(1);
  Tensor out(img.shape());
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t y = 0; y < S; ++y)
      for (std::size_t x = 0; x < S; ++x) {
        const auto [sy, sx] = map(y, x, S);
        out[(c * S + y) * S + x] = img[(c * S + sy) * S + sx];
      }
  return out;
}

}  // namespace

Tensor augment(const Tensor& img, const PreprocessPolicy& policy, Rng& rng) {
  if (img.rank() != 3 || img.dim(1) != img.dim(2))
    throw ShapeError("augment expects a square [C x S x S] image, got " + shape_str(img.shape()));
  Tensor out = img;
  if (policy.hflip && rng.coin())
    out = remap(out, [](std::size_t y, std::size_t x, std::size_t S) {
      return std::pair{y, S - 1 - x};
    });
  if (policy.vflip && rng.coin())
    out = remap(out, [](std::size_t y, std::size_t x, std::size_t S) {
      return std::pair{S - 1 - y, x};
    });
  if (policy.rotate90) {
    const auto quarter_turns = rng.below(4);
    for (std::uint64_t k = 0; k < quarter_turns; ++k)
      out = remap(out, [](std::size_t y, std::size_t x, std::size_t S) {
        return std::pair{x, S - 1 - y};
      });
  }
  if (policy.crop_fraction < 1.0) {
    const std::size_t C = out.dim(0), S = out.dim(1);
    const auto side = std::max<std::size_t>(
        1, static_cast<std::size_t>(std::lround(policy.crop_fraction * static_cast<double>(S))));
    const std::size_t oy = rng.below(S - side + 1);
    const std::size_t ox = rng.below(S - side + 1);
    Tensor crop({C, side, side});
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t y = 0; y < side; ++y)
        for (std::size_t x = 0; x < side; ++x)
          crop[(c * side + y) * side + x] = out[(c * S + oy + y) * S + ox + x];
    out = resize_bilinear(crop, static_cast<int>(S), static_cast<int>(S));
  }
  return out;
}

Tensor preprocess(const Image8& img, const PreprocessPolicy& policy) {
  return z_normalize(resize_bilinear(to_tensor(img), policy.target_side, policy.target_side), policy);
}

std::pair<std::array<double, 3>, std::array<double, 3>> channel_stats(
    const std::vector<Tensor>& resized_images) {
  std::array<double, 3> sum{}, sq{};
  double n = 0.0;
  for (const auto& t : resized_images) {
    if (t.rank() != 3 || t.dim(0) != 3) throw ShapeError("channel_stats expects [3 x H x W]");
    const std::size_t plane = t.dim(1) * t.dim(2);
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t i = 0; i < plane; ++i) {
        const double v = t[c * plane + i] / 255.0;
        sum[c] += v;
        sq[c] += v * v;
      }
    n += static_cast<double>(plane);
  }
  std::array<double, 3> mean{0.5, 0.5, 0.5}, std{0.5, 0.5, 0.5};
  if (n == 0.0) return {mean, std};
  for (std::size_t c = 0; c < 3; ++c) {
    mean[c] = sum[c] / n;
    const double var = std::max(0.0, sq[c] / n - mean[c] * mean[c]);
    std[c] = var > 1e-12 ? std::sqrt(var) : 1.0;
  }
  return {mean, std};
}

}  // namespace geoecon
