#pragma once

// Score-CAM saliency on the last convolutional activation of the encoder.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "casedx/trainer.hpp"

namespace casedx {

struct SaliencyMap {
  int height = 0, width = 0;
  std::vector<float> heat;  // row-major, values in [0, 1]
  std::string scan_id;
  std::string class_id;
  int slice = 0;  // canonical depth index

  float at(int y, int x) const { return heat[static_cast<std::size_t>(y) * width + x]; }
};

struct SliceSelector {
  int scan = 0;
  std::optional<int> slice;  // canonical depth index; defaults to the key slice, else the middle slice
};

// Canonical depth index whose source slice is nearest to the original index.
inline int canonical_slice(int original, int depth_in, int depth_out) {
  const std::vector<int> src = depth_indices(depth_in, depth_out);
  int best = 0;
  for (int k = 0; k < depth_out; ++k)
    if (std::abs(src[k] - original) < std::abs(src[best] - original)) best = k;
  return best;
}

namespace detail {

inline void normalize_unit(std::vector<float>& v) {
  auto [lo, hi] = std::minmax_element(v.begin(), v.end());
  const float mn = *lo, mx = *hi;
  if (mx - mn <= 0.f) {
    std::fill(v.begin(), v.end(), 0.f);
    return;
  }
  for (float& x : v) x = (x - mn) / (mx - mn);
}

}  // namespace detail

// Each channel of the hook activation, upsampled and min-max normalized,
// masks the selected slice; its weight is the target-class score gained
// over the same input with that slice zeroed. The score is the class logit,
// or the pooled probability for parameter-free fusion. For resnet encoders
// the hook sits after depth pooling, so the mask covers every slice.
template <class T>
SaliencyMap score_cam(const Model<T>& model, const std::vector<CanonicalScan>& scans, int target, SliceSelector sel) {
  const Encoder<T>& enc = model.encoder();
  if (!enc.has_feature_map())
    throw InvalidArgument("Score-CAM is unsupported for the " + std::string(to_string(enc.config().variant)) +
                          " encoder variant (no convolutional hook)");
  if (target < 0 || target >= static_cast<int>(model.labels.size()))
    throw InvalidArgument("target class index " + std::to_string(target) + " is outside the label space");
  if (sel.scan < 0 || sel.scan >= static_cast<int>(scans.size()))
    throw InvalidArgument("scan index " + std::to_string(sel.scan) + " does not exist");
  const CanonicalScan& scan = scans[sel.scan];
  const Volume& vol = scan.values;
  const int z = sel.slice.value_or(vol.depth / 2);
  if (z < 0 || z >= vol.depth) throw InvalidArgument("slice " + std::to_string(z) + " does not exist");
  const bool whole_volume = enc.config().variant == EncoderVariant::resnet;
  const int H = vol.height, W = vol.width;
  const std::size_t plane = vol.slice_size();

  const Var<T> fm = enc.trace(scan_input<T>(scan), scan.dims, Mode::eval).feature_map;
  const Shape& fs = fm.shape();  // [N, C, 1, h, w]
  const int C = fs[1], h = fs[3], w = fs[4];
  const int n = whole_volume ? 0 : z;

  auto masked_score = [&](const std::vector<float>* mask) {
    std::vector<CanonicalScan> in = scans;
    Volume& v = in[sel.scan].values;
    for (int s = 0; s < v.depth; ++s) {
      float* p = v.voxels.data() + s * plane;
      for (std::size_t i = 0; i < plane; ++i) p[i] = mask ? p[i] * (*mask)[i] : 0.f;
    }
    const auto out = model.forward(in, Mode::eval);
    return static_cast<double>((out.logits ? out.logits : out.probs).value()[target]);
  };

  const double baseline = masked_score(nullptr);
  std::vector<double> acc(plane, 0.0);
  std::vector<float> act(static_cast<std::size_t>(h) * w), up(plane);
  for (int c = 0; c < C; ++c) {
    const T* src = fm.value().data() + (static_cast<std::size_t>(n) * C + c) * h * w;
    for (std::size_t i = 0; i < act.size(); ++i) act[i] = static_cast<float>(src[i]);
    detail::resize_bilinear(act.data(), h, w, up.data(), H, W);
    detail::normalize_unit(up);
    if (std::all_of(up.begin(), up.end(), [](float x) { return x == 0.f; })) continue;
    const double weight = masked_score(&up) - baseline;
    for (std::size_t i = 0; i < plane; ++i) acc[i] += weight * up[i];
  }

  SaliencyMap out;
  out.height = H;
  out.width = W;
  out.scan_id = scan.scan_id;
  out.class_id = model.labels.classes[target];
  out.slice = z;
  out.heat.resize(plane);
  // Rectify, then min-max normalize; an all-equal map becomes all zeros.
  for (double& v : acc) v = std::max(v, 0.0);
  const auto [lo, hi] = std::minmax_element(acc.begin(), acc.end());
  const double mn = *lo, span = *hi - *lo;
  for (std::size_t i = 0; i < plane; ++i) out.heat[i] = span > 0.0 ? static_cast<float>((acc[i] - mn) / span) : 0.f;
  return out;
}

// Case-level entry point: default slice is the scan's key slice mapped to
// canonical depth.
template <class T>
SaliencyMap score_cam(const Model<T>& model, const Case& c, const std::string& class_id, SliceSelector sel,
                      Preprocessor& prep) {
  const int target = model.labels.index_of(class_id);
  if (target < 0) throw InvalidArgument("class " + class_id + " is not in the model's label space");
  if (sel.scan < 0 || sel.scan >= static_cast<int>(c.scans.size()))
    throw InvalidArgument("case " + c.id + " has no scan " + std::to_string(sel.scan));
  const Scan& s = c.scans[sel.scan];
  if (!sel.slice && s.dims == Dims::three_d && s.key_slice && s.volume)
    sel.slice = canonical_slice(*s.key_slice, s.volume->depth, prep.geometry().depth);
  if (!sel.slice && s.dims == Dims::two_d) sel.slice = 0;
  return score_cam(model, prep.eval_view(c), target, sel);
}

// Fraction of the total saliency inside a half-open box.
inline double saliency_mass_in_box(const SaliencyMap& m, int y0, int y1, int x0, int x1) {
  double inside = 0.0, total = 0.0;
  for (int y = 0; y < m.height; ++y)
    for (int x = 0; x < m.width; ++x) {
      const double v = m.at(y, x);
      total += v;
      if (y >= y0 && y < y1 && x >= x0 && x < x1) inside += v;
    }
  return total > 0.0 ? inside / total : 0.0;
}

inline void write_pgm(const std::filesystem::path& path, int height, int width, const std::vector<float>& values) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << "P5\n" << width << ' ' << height << "\n255\n";
  for (float v : values) out.put(static_cast<char>(std::lround(std::clamp(v, 0.f, 1.f) * 255.f)));
}

// Grayscale slice blended with a black-red-yellow rendering of the heat.
inline void write_overlay_ppm(const std::filesystem::path& path, const SaliencyMap& m, const std::vector<float>& slice,
                              double alpha = 0.5) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << "P6\n" << m.width << ' ' << m.height << "\n255\n";
  for (std::size_t i = 0; i < m.heat.size(); ++i) {
    const double g = std::clamp(static_cast<double>(slice[i]), 0.0, 1.0);
    const double hval = m.heat[i];
    const double rgb[3] = {std::min(1.0, 2.0 * hval), std::max(0.0, 2.0 * hval - 1.0), 0.0};
    for (double c : rgb) out.put(static_cast<char>(std::lround(255.0 * ((1.0 - alpha) * g + alpha * c))));
  }
}

}  // namespace casedx
