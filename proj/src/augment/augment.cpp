#include "hsa/augment.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>
#include <string>

#include "hsa/random.hpp"

namespace hsa::aug {

namespace {

void check_prob(double p, const char* name) {
  if (!(p >= 0 && p <= 1)) throw std::invalid_argument(std::string("view params: ") + name + " must lie in [0, 1]");
}

struct Crop {
  double y0, x0, h, w;
};

Crop sample_crop(std::size_t height, std::size_t width, const ViewParams& p, Rng& rng) {
  const double H = double(height), W = double(width), area = H * W;
  const double log_lo = std::log(p.min_aspect), log_hi = std::log(p.max_aspect);
  for (int attempt = 0; attempt < 10; ++attempt) {
    const double target = area * (p.min_scale + (p.max_scale - p.min_scale) * uniform01(rng));
    const double aspect = std::exp(log_lo + (log_hi - log_lo) * uniform01(rng));
    const double w = std::round(std::sqrt(target * aspect)), h = std::round(std::sqrt(target / aspect));
    if (w >= 1 && h >= 1 && w <= W && h <= H) {
      const double y0 = std::floor(uniform01(rng) * (H - h + 1));
      const double x0 = std::floor(uniform01(rng) * (W - w + 1));
      return {y0, x0, h, w};
    }
  }
  return {0, 0, H, W};
}

// Bilinear resample of the crop back to the full image size.
Image resize_crop(const Image& src, const Crop& c) {
  const std::size_t C = src.dim(0), H = src.dim(1), W = src.dim(2);
  Image out({C, H, W});
  const double sy = c.h / double(H), sx = c.w / double(W);
  for (std::size_t y = 0; y < H; ++y) {
    const double fy = std::clamp(c.y0 + (double(y) + 0.5) * sy - 0.5, 0.0, double(H - 1));
    const std::size_t y0 = std::size_t(fy), y1 = std::min(y0 + 1, H - 1);
    const double ty = fy - double(y0);
    for (std::size_t x = 0; x < W; ++x) {
      const double fx = std::clamp(c.x0 + (double(x) + 0.5) * sx - 0.5, 0.0, double(W - 1));
      const std::size_t x0 = std::size_t(fx), x1 = std::min(x0 + 1, W - 1);
      const double tx = fx - double(x0);
      for (std::size_t ch = 0; ch < C; ++ch) {
        const float* p = src.raw() + ch * H * W;
        const double top = p[y0 * W + x0] * (1 - tx) + p[y0 * W + x1] * tx;
        const double bot = p[y1 * W + x0] * (1 - tx) + p[y1 * W + x1] * tx;
        out[ch * H * W + y * W + x] = float(top * (1 - ty) + bot * ty);
      }
    }
  }
  return out;
}

float gray_at(const Image& img, std::size_t i, std::size_t plane) {
  return 0.299f * img[i] + 0.587f * img[plane + i] + 0.114f * img[2 * plane + i];
}

void clamp01(Image& img) {
  for (auto& v : img.data()) v = std::clamp(v, 0.0f, 1.0f);
}

double jitter_factor(double strength, Rng& rng) { return 1 - strength + 2 * strength * uniform01(rng); }

void color_jitter(Image& img, const ViewParams& p, Rng& rng) {
  const std::size_t plane = img.dim(1) * img.dim(2);
  const bool rgb = img.dim(0) == 3;
  const float b = float(jitter_factor(p.brightness, rng));
  for (auto& v : img.data()) v *= b;
  clamp01(img);

  const float c = float(jitter_factor(p.contrast, rng));
  double mean = 0;
  for (std::size_t i = 0; i < plane; ++i) mean += rgb ? gray_at(img, i, plane) : img[i];
  const float m = float(mean / double(plane));
  for (auto& v : img.data()) v = (v - m) * c + m;
  clamp01(img);

  const float s = float(jitter_factor(p.saturation, rng));
  if (rgb) {
    for (std::size_t i = 0; i < plane; ++i) {
      const float g = gray_at(img, i, plane);
      for (std::size_t ch = 0; ch < 3; ++ch) img[ch * plane + i] = (img[ch * plane + i] - g) * s + g;
    }
    clamp01(img);
  }
}

void to_grayscale(Image& img) {
  if (img.dim(0) != 3) return;
  const std::size_t plane = img.dim(1) * img.dim(2);
  for (std::size_t i = 0; i < plane; ++i) {
    const float g = gray_at(img, i, plane);
    img[i] = img[plane + i] = img[2 * plane + i] = g;
  }
}

void check_pair(const Image& a, const Image& b) {
  if (a.rank() != 3 || a.shape() != b.shape())
    throw std::invalid_argument("mixing needs two [C, H, W] images of equal shape, got " + to_string(a.shape()) +
                                " and " + to_string(b.shape()));
}

void check_lambda(double lambda) {
  if (!(lambda >= 0 && lambda <= 1)) throw std::invalid_argument("lambda must lie in [0, 1], got " + std::to_string(lambda));
}

}  // namespace

void ViewParams::validate() const {
  if (!(min_scale > 0 && min_scale <= max_scale && max_scale <= 1))
    throw std::invalid_argument("view params: crop scale range must satisfy 0 < min <= max <= 1");
  if (!(min_aspect > 0 && min_aspect <= max_aspect)) throw std::invalid_argument("view params: bad aspect range");
  check_prob(flip_prob, "flip_prob");
  check_prob(jitter_prob, "jitter_prob");
  check_prob(grayscale_prob, "grayscale_prob");
  for (double s : {brightness, contrast, saturation})
    if (!(s >= 0 && s <= 1)) throw std::invalid_argument("view params: jitter strengths must lie in [0, 1]");
}

ViewParams identity_view() {
  ViewParams p;
  p.min_scale = p.max_scale = 1.0;
  p.min_aspect = p.max_aspect = 1.0;
  p.flip_prob = p.jitter_prob = p.grayscale_prob = 0.0;
  return p;
}

Image hflip(const Image& image) {
  Image out(image.shape());
  const std::size_t rows = image.dim(0) * image.dim(1), W = image.dim(2);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t x = 0; x < W; ++x) out[r * W + x] = image[r * W + (W - 1 - x)];
  return out;
}

Image augment_view(const Image& image, const ViewParams& params, std::uint64_t seed) {
  params.validate();
  if (image.rank() != 3) throw std::invalid_argument("augment_view expects [C, H, W], got " + to_string(image.shape()));
  Rng rng(seed);
  const Crop crop = sample_crop(image.dim(1), image.dim(2), params, rng);
  Image out = crop.h == double(image.dim(1)) && crop.w == double(image.dim(2)) ? image : resize_crop(image, crop);
  if (uniform01(rng) < params.flip_prob) out = hflip(out);
  if (uniform01(rng) < params.jitter_prob) color_jitter(out, params, rng);
  if (uniform01(rng) < params.grayscale_prob) to_grayscale(out);
  clamp01(out);
  return out;
}

Tensor<float> augment_batch(const data::Dataset& ds, std::span<const std::size_t> ids, const ViewParams& params,
                            std::uint64_t stream, std::uint64_t epoch, std::uint64_t step, std::uint64_t slot,
                            std::span<const std::size_t> tags) {
  params.validate();
  if (!tags.empty() && tags.size() != ids.size()) throw std::invalid_argument("augment_batch: one tag per id is required");
  const Shape one{ds.channels(), ds.height(), ds.width()};
  Tensor<float> out({ids.size(), one[0], one[1], one[2]});
#pragma omp parallel for schedule(static)
  for (std::size_t i = 0; i < ids.size(); ++i) {
    auto src = ds.image(ids[i]);
    Image img(one, std::vector<float>(src.begin(), src.end()));
    const Image v = augment_view(img, params, derive_seed(stream, {epoch, step, tags.empty() ? ids[i] : tags[i], slot}));
    std::copy(v.data().begin(), v.data().end(), out.row(i).begin());
  }
  return out;
}

double sample_lambda(double alpha, std::uint64_t seed) {
  if (!(alpha > 0)) throw std::invalid_argument("sample_lambda: alpha must be > 0");
  Rng rng(seed);
  std::gamma_distribution<double> gamma(alpha, 1.0);
  const double x = gamma(rng), y = gamma(rng);
  return x + y > 0 ? x / (x + y) : 0.5;
}

CutMixMask cutmix_box(std::size_t height, std::size_t width, double lambda, std::size_t cy, std::size_t cx) {
  check_lambda(lambda);
  const double side = std::sqrt(1 - lambda);
  auto span = [side](std::size_t extent, std::size_t center) -> std::pair<std::size_t, std::size_t> {
    const auto cut = std::size_t(std::llround(double(extent) * side));
    if (cut >= extent) return {0, extent};
    const auto lo = std::ptrdiff_t(center) - std::ptrdiff_t(cut / 2);
    const auto hi = lo + std::ptrdiff_t(cut);
    return {std::size_t(std::max<std::ptrdiff_t>(lo, 0)), std::size_t(std::min<std::ptrdiff_t>(hi, std::ptrdiff_t(extent)))};
  };
  const auto [y0, y1] = span(height, cy);
  const auto [x0, x1] = span(width, cx);
  CutMixMask m{height, width, std::vector<std::uint8_t>(height * width, 1), 1.0};
  for (std::size_t y = y0; y < y1; ++y)
    for (std::size_t x = x0; x < x1; ++x) m.keep[y * width + x] = 0;
  const auto ones = std::count(m.keep.begin(), m.keep.end(), std::uint8_t(1));
  m.lambda_adjusted = double(ones) / double(height * width);
  return m;
}

CutMixMask make_cutmix_mask(std::size_t height, std::size_t width, double lambda, std::uint64_t seed) {
  check_lambda(lambda);
  if (height == 0 || width == 0) throw std::invalid_argument("make_cutmix_mask: empty image");
  Rng rng(seed);
  const auto cy = std::size_t(uniform01(rng) * double(height));
  const auto cx = std::size_t(uniform01(rng) * double(width));
  return cutmix_box(height, width, lambda, cy, cx);
}

MixResult cutmix(const Image& x_a, const Image& x_p, const CutMixMask& mask) {
  check_pair(x_a, x_p);
  const std::size_t C = x_a.dim(0), plane = x_a.dim(1) * x_a.dim(2);
  if (mask.height != x_a.dim(1) || mask.width != x_a.dim(2) || mask.keep.size() != plane)
    throw std::invalid_argument("cutmix: mask " + std::to_string(mask.height) + "x" + std::to_string(mask.width) +
                                " does not match image " + to_string(x_a.shape()));
  MixResult r{Image(x_a.shape()), mask, mask.lambda_adjusted};
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t i = 0; i < plane; ++i) r.mixed[c * plane + i] = mask.keep[i] ? x_a[c * plane + i] : x_p[c * plane + i];
  return r;
}

MixResult mixup(const Image& x_a, const Image& x_p, double lambda) {
  check_pair(x_a, x_p);
  check_lambda(lambda);
  MixResult r{Image(x_a.shape()), {}, lambda};
  const float l = float(lambda);
  for (std::size_t i = 0; i < x_a.size(); ++i) r.mixed[i] = l * x_a[i] + (1 - l) * x_p[i];
  return r;
}

}  // namespace hsa::aug
