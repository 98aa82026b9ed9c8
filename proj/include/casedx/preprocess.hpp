#pragma once

// Canonical geometry, stochastic augmentation and key-slice substitution.

#include <array>
#include <cmath>
#include <numbers>
#include <vector>

#include "casedx/corpus.hpp"
#include "casedx/rng.hpp"

namespace casedx {

struct Geometry {
  int height = 256;
  int width = 256;
  int depth = 32;
};

// Canonical scan: [D, H, W] with D = geometry.depth for 3D inputs and 1 for
// 2D inputs, intensities in [0, 1].
struct CanonicalScan {
  Volume values;
  Modality modality = Modality::ct;
  Dims dims = Dims::three_d;
  std::string scan_id;
};

namespace detail {

// Bilinear resize with aligned corners: output corner pixels equal input corners.
inline void resize_bilinear(const float* src, int h, int w, float* dst, int H, int W) {
  const double sy = H > 1 ? static_cast<double>(h - 1) / (H - 1) : 0.0;
  const double sx = W > 1 ? static_cast<double>(w - 1) / (W - 1) : 0.0;
  for (int y = 0; y < H; ++y) {
    const double fy = y * sy;
    const int y0 = std::min(static_cast<int>(std::floor(fy)), h - 1);
    const int y1 = std::min(y0 + 1, h - 1);
    const double ty = fy - y0;
    for (int x = 0; x < W; ++x) {
      const double fx = x * sx;
      const int x0 = std::min(static_cast<int>(std::floor(fx)), w - 1);
      const int x1 = std::min(x0 + 1, w - 1);
      const double tx = fx - x0;
      const double top = src[y0 * w + x0] * (1 - tx) + src[y0 * w + x1] * tx;
      const double bot = src[y1 * w + x0] * (1 - tx) + src[y1 * w + x1] * tx;
      dst[y * W + x] = static_cast<float>(top * (1 - ty) + bot * ty);
    }
  }
}

// Bilinear sample of one slice at fractional (y, x); zero outside the image.
inline float sample_bilinear(const float* img, int h, int w, double y, double x) {
  const int y0 = static_cast<int>(std::floor(y));
  const int x0 = static_cast<int>(std::floor(x));
  const double ty = y - y0, tx = x - x0;
  auto px = [&](int yy, int xx) -> double { return (yy < 0 || yy >= h || xx < 0 || xx >= w) ? 0.0 : img[yy * w + xx]; };
  const double top = px(y0, x0) * (1 - tx) + px(y0, x0 + 1) * tx;
  const double bot = px(y0 + 1, x0) * (1 - tx) + px(y0 + 1, x0 + 1) * tx;
  return static_cast<float>(top * (1 - ty) + bot * ty);
}

inline void clip_unit(Volume& v) {
  for (float& x : v.voxels) x = std::clamp(x, 0.f, 1.f);
}

}  // namespace detail

// Source depth indices for uniform depth resampling: floor(k * D_in / D_out).
inline std::vector<int> depth_indices(int depth_in, int depth_out) {
  std::vector<int> idx(depth_out);
  for (int k = 0; k < depth_out; ++k)
    idx[k] = static_cast<int>((static_cast<long long>(k) * depth_in) / depth_out);
  return idx;
}

inline CanonicalScan normalize_volume(const Volume& in, Dims dims, const Geometry& geo) {
  if (in.voxels.empty() || in.height <= 0 || in.width <= 0 || in.depth <= 0) throw DataError("empty voxel array");
  for (float v : in.voxels)
    if (!std::isfinite(v)) throw DataError("non-finite voxel value");
  const int out_depth = dims == Dims::three_d ? geo.depth : 1;
  const std::vector<int> idx =
      dims == Dims::three_d ? depth_indices(in.depth, out_depth) : std::vector<int>{0};
  CanonicalScan out;
  out.dims = dims;
  out.values = Volume(out_depth, geo.height, geo.width);
  for (int k = 0; k < out_depth; ++k)
    detail::resize_bilinear(in.voxels.data() + idx[k] * in.slice_size(), in.height, in.width,
                            out.values.voxels.data() + k * out.values.slice_size(), geo.height, geo.width);
  auto [lo, hi] = std::minmax_element(out.values.voxels.begin(), out.values.voxels.end());
  const float mn = *lo, mx = *hi;
  if (mx - mn <= 0.f) {
    std::fill(out.values.voxels.begin(), out.values.voxels.end(), 0.f);
  } else {
    const float inv = 1.f / (mx - mn);
    for (float& v : out.values.voxels) v = (v - mn) * inv;
    detail::clip_unit(out.values);
  }
  return out;
}

inline CanonicalScan normalize_scan(const Scan& scan, const Geometry& geo) {
  if (!scan.volume) throw DataError("scan " + scan.id + " has no voxel data loaded");
  CanonicalScan c = normalize_volume(*scan.volume, scan.dims, geo);
  c.modality = scan.modality;
  c.scan_id = scan.id;
  return c;
}

struct AugmentConfig {
  bool enabled = false;
  double probability = 0.15;
  double noise_sigma_min = 0.01;
  double noise_sigma_max = 0.05;
  double gamma_min = 0.7;
  double gamma_max = 1.3;
  double max_rotation_deg = 10.0;
  double max_translation = 0.05;  // fraction of image size
  double elastic_alpha = 2.0;     // displacement standard deviation in pixels
  int elastic_grid = 4;           // control points per side
};

enum class AugmentKind { gaussian_noise = 0, contrast = 1, affine = 2, elastic = 3 };
using AugmentDraw = std::array<bool, 4>;

namespace detail {

inline void apply_affine(Volume& v, Rng& rng, const AugmentConfig& cfg) {
  const double theta = rng.uniform(-cfg.max_rotation_deg, cfg.max_rotation_deg) * std::numbers::pi / 180.0;
  const double ty = rng.uniform(-cfg.max_translation, cfg.max_translation) * v.height;
  const double tx = rng.uniform(-cfg.max_translation, cfg.max_translation) * v.width;
  const double cy = (v.height - 1) / 2.0, cx = (v.width - 1) / 2.0;
  const double c = std::cos(theta), s = std::sin(theta);
  std::vector<float> buf(v.slice_size());
  for (int z = 0; z < v.depth; ++z) {
    float* sl = v.voxels.data() + z * v.slice_size();
    std::copy_n(sl, v.slice_size(), buf.begin());
    for (int y = 0; y < v.height; ++y)
      for (int x = 0; x < v.width; ++x) {
        // Inverse map: output pixel -> source location.
        const double dy = y - cy - ty, dx = x - cx - tx;
        const double sy = c * dy - s * dx + cy;
        const double sx = s * dy + c * dx + cx;
        sl[y * v.width + x] = sample_bilinear(buf.data(), v.height, v.width, sy, sx);
      }
  }
}

// One smooth 2D displacement field (coarse random grid, bilinearly upsampled)
// shared by every slice.
inline void apply_elastic(Volume& v, Rng& rng, const AugmentConfig& cfg) {
  const int g = std::max(2, cfg.elastic_grid);
  std::vector<float> gy(g * g), gx(g * g);
  for (auto& d : gy) d = static_cast<float>(rng.normal(0.0, cfg.elastic_alpha));
  for (auto& d : gx) d = static_cast<float>(rng.normal(0.0, cfg.elastic_alpha));
  std::vector<float> fy(v.slice_size()), fx(v.slice_size());
  resize_bilinear(gy.data(), g, g, fy.data(), v.height, v.width);
  resize_bilinear(gx.data(), g, g, fx.data(), v.height, v.width);
  std::vector<float> buf(v.slice_size());
  for (int z = 0; z < v.depth; ++z) {
    float* sl = v.voxels.data() + z * v.slice_size();
    std::copy_n(sl, v.slice_size(), buf.begin());
    for (int y = 0; y < v.height; ++y)
      for (int x = 0; x < v.width; ++x) {
        const std::size_t k = static_cast<std::size_t>(y) * v.width + x;
        sl[k] = sample_bilinear(buf.data(), v.height, v.width, y + fy[k], x + fx[k]);
      }
  }
}

}  // namespace detail

// Each of the four transforms fires independently with cfg.probability.
// Geometric transforms run before intensity transforms; the result is
// clipped to [0, 1]. Identity when nothing fires.
inline CanonicalScan augment(const CanonicalScan& in, std::uint64_t seed, const AugmentConfig& cfg = {},
                             AugmentDraw* drawn = nullptr) {
  Rng rng(derive_seed(seed, "augment"));
  AugmentDraw fire{};
  for (bool& f : fire) f = rng.bernoulli(cfg.probability);
  if (drawn) *drawn = fire;
  CanonicalScan out = in;
  if (!std::any_of(fire.begin(), fire.end(), [](bool b) { return b; })) return out;
  Volume& v = out.values;
  if (fire[static_cast<int>(AugmentKind::affine)]) detail::apply_affine(v, rng, cfg);
  if (fire[static_cast<int>(AugmentKind::elastic)]) detail::apply_elastic(v, rng, cfg);
  if (fire[static_cast<int>(AugmentKind::contrast)]) {
    const double gamma = rng.uniform(cfg.gamma_min, cfg.gamma_max);
    for (float& x : v.voxels) x = static_cast<float>(std::pow(std::clamp(static_cast<double>(x), 0.0, 1.0), gamma));
  }
  if (fire[static_cast<int>(AugmentKind::gaussian_noise)]) {
    const double sigma = rng.uniform(cfg.noise_sigma_min, cfg.noise_sigma_max);
    for (float& x : v.voxels) x += static_cast<float>(rng.normal(0.0, sigma));
  }
  detail::clip_unit(v);
  return out;
}

// Replaces each 3D scan that has a key slice, with probability prob, by the
// 2D image of that slice.
inline Case key_slice_substitute(const Case& c, double prob, std::uint64_t seed) {
  Case out = c;
  if (prob <= 0.0) return out;
  Rng rng(derive_seed(seed, c.id, 0x6b6579));
  for (auto& s : out.scans) {
    if (s.dims != Dims::three_d || !s.key_slice || !s.volume) continue;
    if (!rng.bernoulli(prob)) continue;
    s.volume = std::make_shared<const Volume>(s.volume->slice(*s.key_slice));
    s.dims = Dims::two_d;
    s.key_slice.reset();
  }
  return out;
}

}  // namespace casedx
