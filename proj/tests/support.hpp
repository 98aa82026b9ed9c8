#pragma once

// Shared helpers for the unit tests and the acceptance binary.

#include <cmath>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "casedx/commands.hpp"

namespace casedx::testing {

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag = "casedx") {
    static std::uint64_t counter = 0;
    Rng rng(derive_seed(static_cast<std::uint64_t>(::getpid()), tag, counter++));
    path_ = std::filesystem::temp_directory_path() / (tag + "_" + std::to_string(rng.next() % 1000000000ULL));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& s) const { return path_ / s; }

 private:
  std::filesystem::path path_;
};

struct GradientReport {
  double worst = 0.0;  // largest norm-wise relative error over the checked tensors
  std::string where;
  std::size_t tensors = 0, coordinates = 0;
};

// Central finite differences (step h) against reverse-mode gradients. Each
// tensor contributes ||g_fd - g_an|| / max(||g_fd||, ||g_an||, floor) over up
// to max_coords sampled coordinates. The floor keeps identically-zero
// gradients (e.g. attention key biases) from dividing rounding noise by ~0.
inline GradientReport check_gradients(const std::vector<std::pair<std::string, Var<double>>>& vars,
                                      const std::function<Var<double>()>& loss, std::size_t max_coords = 24,
                                      std::uint64_t seed = 0, double h = 1e-6, double floor = 1e-4) {
  for (auto [name, v] : vars) v.zero_grad();
  loss().backward();
  GradientReport rep;
  Rng rng(seed);
  for (auto [name, v] : vars) {
    if (!v.requires_grad()) continue;
    const Tensor<double> analytic = v.has_grad() ? v.grad() : Tensor<double>(v.shape());
    std::vector<std::size_t> idx(v.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    rng.shuffle(idx);
    if (idx.size() > max_coords) idx.resize(max_coords);
    double diff = 0.0, nfd = 0.0, nan = 0.0;
    Tensor<double>& w = v.mutable_value();
    for (std::size_t i : idx) {
      const double keep = w[i];
      w[i] = keep + h;
      const double up = loss().item();
      w[i] = keep - h;
      const double down = loss().item();
      w[i] = keep;
      const double fd = (up - down) / (2 * h);
      diff += (fd - analytic[i]) * (fd - analytic[i]);
      nfd += fd * fd;
      nan += analytic[i] * analytic[i];
    }
    const double rel = std::sqrt(diff) / std::max({std::sqrt(nfd), std::sqrt(nan), floor});
    if (rel >= rep.worst) {
      rep.worst = rel;
      rep.where = name;
    }
    ++rep.tensors;
    rep.coordinates += idx.size();
  }
  return rep;
}

inline std::vector<std::pair<std::string, Var<double>>> trainable(const ParamStore<double>& ps) {
  std::vector<std::pair<std::string, Var<double>>> out;
  for (const auto& [name, v] : ps.entries())
    if (v.requires_grad()) out.emplace_back(name, v);
  return out;
}

// Random canonical scan with values in [0, 1].
inline CanonicalScan random_scan(const Geometry& geo, Dims dims, Rng& rng, Modality m = Modality::ct,
                                 const std::string& id = "scan") {
  CanonicalScan s;
  s.dims = dims;
  s.modality = m;
  s.scan_id = id;
  s.values = Volume(dims == Dims::three_d ? geo.depth : 1, geo.height, geo.width);
  for (float& v : s.values.voxels) v = static_cast<float>(rng.uniform());
  return s;
}

// Random binary-label instance with both labels present. Scores are drawn
// from a coarse grid with probability 1/2 so that ties occur.
inline ClassScores random_instance(Rng& rng, std::size_t min_n = 2, std::size_t max_n = 50) {
  ClassScores cs;
  cs.class_id = "c";
  const std::size_t n = min_n + rng.index(max_n - min_n + 1);
  const bool coarse = rng.bernoulli(0.5);
  const double prevalence = rng.uniform(0.1, 0.9);
  for (std::size_t i = 0; i < n; ++i) {
    const int y = rng.bernoulli(prevalence) ? 1 : 0;
    double s = rng.uniform() + 0.3 * y;
    if (coarse) s = std::round(s * 5.0) / 5.0;
    cs.scores.push_back(s);
    cs.labels.push_back(y);
  }
  cs.labels[0] = 1;
  cs.labels[1] = 0;
  return cs;
}

}  // namespace casedx::testing
