#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

#include "hsa/dataio.hpp"
#include "hsa/random.hpp"

namespace hsa::data {

namespace {

constexpr int kMotifs = 10;
constexpr double kTwoPi = 2 * std::numbers::pi;

std::array<double, 3> hsv(double h, double s, double v) {
  h = h - std::floor(h);
  const double k[3] = {5, 3, 1};
  std::array<double, 3> rgb{};
  for (int i = 0; i < 3; ++i) {
    const double t = std::fmod(k[i] + h * 6, 6.0);
    rgb[std::size_t(i)] = v - v * s * std::clamp(std::min(t, 4 - t), 0.0, 1.0);
  }
  return rgb;
}

double luminance(const std::array<double, 3>& c) { return 0.299 * c[0] + 0.587 * c[1] + 0.114 * c[2]; }

double band(double t) { return std::sin(kTwoPi * t) > 0 ? 1.0 : 0.0; }

// Foreground coverage of motif `kind` at motif coordinates (du, dv), centered at 0.
double motif(int kind, double du, double dv, double phase, double freq) {
  const bool in_box = std::abs(du) < 0.5 && std::abs(dv) < 0.5;
  const double r = std::hypot(du, dv);
  const double f = 3 * freq;
  switch (kind) {
    case 0: return in_box ? band(dv * f + phase) : 0;
    case 1: return in_box ? band(du * f + phase) : 0;
    case 2: return in_box ? double(band(du * f + phase) != band(dv * f + phase)) : 0;
    case 3: return r < 0.5 ? band(r * 2 * f + phase) : 0;
    case 4: return r < 0.35 ? 1 : 0;
    case 5: return std::max(std::abs(du), std::abs(dv)) < 0.3 ? 1 : 0;
    case 6: return (std::abs(du) < 0.1 && std::abs(dv) < 0.42) || (std::abs(dv) < 0.1 && std::abs(du) < 0.42) ? 1 : 0;
    case 7: {
      if (!in_box) return 0;
      const double gu = du * f + phase, gv = dv * f + phase;
      const double fu = gu - std::round(gu), fv = gv - std::round(gv);
      return std::hypot(fu, fv) < 0.25 ? 1 : 0;
    }
    case 8: return in_box ? band((du + dv) * f * 0.7071 + phase) : 0;
    default: return r > 0.25 && r < 0.42 ? 1 : 0;
  }
}

void check_spec(const SyntheticSpec& s) {
  if (s.num_classes < 2 || s.samples_per_class < 1 || s.height < 4 || s.width < 4)
    throw std::invalid_argument("synthetic spec: need >= 2 classes, >= 1 sample per class and images of at least 4x4");
  if (!(s.min_scale > 0 && s.min_scale <= s.max_scale && s.max_scale <= 1))
    throw std::invalid_argument("synthetic spec: scale range must satisfy 0 < min_scale <= max_scale <= 1");
  if (s.noise < 0 || s.clutter < 0 || s.color_variation < 0 || s.color_variation > 1)
    throw std::invalid_argument("synthetic spec: noise and clutter must be >= 0, color_variation in [0, 1]");
}

}  // namespace

SampleGeometry synthetic_geometry(const SyntheticSpec& spec, std::uint64_t seed, std::size_t index) {
  check_spec(spec);
  const int label = int(index % std::size_t(spec.num_classes));
  Rng rng = make_rng(seed, {0x47454f4dULL, index});
  SampleGeometry g;
  g.scale = spec.min_scale + (spec.max_scale - spec.min_scale) * uniform01(rng);
  const double slack = (1 - g.scale) / 2;
  g.cx = 0.5 + slack * (2 * uniform01(rng) - 1);
  g.cy = 0.5 + slack * (2 * uniform01(rng) - 1);
  g.phase = uniform01(rng);
  g.frequency = (0.8 + 0.45 * uniform01(rng)) * (1 + 0.6 * (label / kMotifs));

  const double hue = double(label) / spec.num_classes;
  const auto base_fg = hsv(hue, 0.8, 0.9);
  const auto base_bg = hsv(hue + 0.5, 0.5, 0.3);
  const double cv = spec.color_variation;
  for (std::size_t i = 0; i < 3; ++i) {
    g.fg[i] = (1 - cv) * base_fg[i] + cv * uniform01(rng);
    g.bg[i] = (1 - cv) * base_bg[i] + cv * uniform01(rng);
  }
  if (std::abs(luminance(g.fg) - luminance(g.bg)) < 0.25) {
    const bool bright = luminance(g.fg) > 0.5;
    for (auto& b : g.bg) b = bright ? 0.4 * b : 0.4 * b + 0.6;
    if (std::abs(luminance(g.fg) - luminance(g.bg)) < 0.25)
      for (auto& f : g.fg) f = bright ? 0.4 * f + 0.6 : 0.4 * f;
  }
  std::normal_distribution<double> gauss(0.0, 1.0);
  g.clutter[0] = spec.clutter * gauss(rng);
  g.clutter[1] = spec.clutter * gauss(rng);
  g.clutter[2] = uniform01(rng);
  g.clutter[3] = uniform01(rng);
  return g;
}

void render_synthetic(const SyntheticSpec& spec, int label, const SampleGeometry& g, std::span<float> out) {
  const std::size_t h = std::size_t(spec.height), w = std::size_t(spec.width), plane = h * w;
  if (out.size() != 3 * plane) throw std::invalid_argument("render_synthetic: output buffer has wrong size");
  const int kind = label % kMotifs;
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      double cover = 0;
      for (int sy = 0; sy < 2; ++sy)
        for (int sx = 0; sx < 2; ++sx) {
          const double u = (double(x) + 0.25 + 0.5 * sx) / double(w);
          const double v = (double(y) + 0.25 + 0.5 * sy) / double(h);
          cover += motif(kind, (u - g.cx) / g.scale, (v - g.cy) / g.scale, g.phase, g.frequency);
        }
      cover /= 4;
      const double u = (double(x) + 0.5) / double(w), v = (double(y) + 0.5) / double(h);
      const double field = g.clutter[0] * std::sin(kTwoPi * (u + g.clutter[2])) +
                           g.clutter[1] * std::sin(kTwoPi * (v + g.clutter[3]));
      for (std::size_t c = 0; c < 3; ++c)
        out[c * plane + y * w + x] = float(std::clamp(g.bg[c] * (1 - cover) + g.fg[c] * cover + field, 0.0, 1.0));
    }
}

Dataset generate_synthetic(const SyntheticSpec& spec, std::uint64_t seed, Split split) {
  check_spec(spec);
  const std::size_t n = std::size_t(spec.num_classes) * std::size_t(spec.samples_per_class);
  const std::size_t h = std::size_t(spec.height), w = std::size_t(spec.width);
  Dataset ds;
  ds.images = Tensor<float>({n, 3, h, w});
  ds.labels.resize(n);
  ds.source_ids.resize(n);
  ds.num_classes = spec.num_classes;
  ds.split = split;
  const std::uint64_t stream = derive_seed(seed, {split == Split::train ? 0ULL : 1ULL});
#pragma omp parallel for schedule(static)
  for (std::size_t i = 0; i < n; ++i) {
    const int label = int(i % std::size_t(spec.num_classes));
    auto img = ds.images.row(i);
    render_synthetic(spec, label, synthetic_geometry(spec, stream, i), img);
    if (spec.noise > 0) {
      Rng rng = make_rng(stream, {0x4e4f495345ULL, i});
      std::normal_distribution<double> gauss(0.0, spec.noise);
      for (auto& p : img) p = float(std::clamp(double(p) + gauss(rng), 0.0, 1.0));
    }
    ds.labels[i] = label;
    ds.source_ids[i] = i;
  }
  compute_channel_stats(ds);
  return ds;
}

}  // namespace hsa::data
