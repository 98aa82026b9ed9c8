#pragma once

#include <string>
#include <vector>

#include "casedx/encoders.hpp"

namespace casedx {

enum class FusionMode { learnable, max, mean, random };

inline std::string_view to_string(FusionMode m) {
  switch (m) {
    case FusionMode::learnable:
      return "learnable";
    case FusionMode::max:
      return "max";
    case FusionMode::mean:
      return "mean";
    default:
      return "random";
  }
}
inline FusionMode parse_fusion_mode(std::string_view s) {
  if (s == "learnable") return FusionMode::learnable;
  if (s == "max") return FusionMode::max;
  if (s == "mean") return FusionMode::mean;
  if (s == "random") return FusionMode::random;
  throw InvalidArgument("unknown fusion mode \"" + std::string(s) + "\"");
}

struct FusionConfig {
  FusionMode mode = FusionMode::learnable;
  int layers = 2;
  int heads = 4;
  int ffn_mult = 4;
  int max_scans = 30;
};

// Transformer fusion over per-scan embeddings plus learnable modality
// embeddings. There is no positional term across scans, so the output does
// not depend on scan order.
template <class T>
class Fusion {
 public:
  static Fusion build(ParamStore<T>& ps, const FusionConfig& cfg, int dim, Rng& rng) {
    Fusion f;
    f.cfg_ = cfg;
    f.dim_ = dim;
    f.modalities_ = ps.get_or_create("fusion.modality_table", {kModalityCount, dim}, Init::normal(0.02), rng);
    f.trunk_ = nn::ClsTransformer<T>::make(ps, "fusion.transformer", dim, cfg.layers, cfg.heads, cfg.ffn_mult, false, rng);
    return f;
  }

  const Var<T>& modality_table() const noexcept { return modalities_; }

  Var<T> operator()(const std::vector<VisualEmbedding<T>>& scans) const {
    if (scans.empty()) throw InvalidArgument("fuse: a case needs at least one scan embedding");
    if (static_cast<int>(scans.size()) > cfg_.max_scans)
      throw InvalidArgument("fuse: " + std::to_string(scans.size()) + " scans exceed the cap of " + std::to_string(cfg_.max_scans));
    std::vector<Var<T>> rows;
    std::vector<int> mods;
    for (const auto& s : scans) {
      if (s.vector.size() != static_cast<std::size_t>(dim_))
        throw ShapeError("fuse: embedding of scan " + s.scan_id + " has " + std::to_string(s.vector.size()) +
                         " entries, expected " + std::to_string(dim_));
      rows.push_back(ag::reshape(s.vector, {1, dim_}));
      mods.push_back(static_cast<int>(s.modality));
    }
    const Var<T> tokens = ag::add(ag::concat_rows(rows), ag::index_rows(modalities_, mods));
    Var<T> v = trunk_(tokens);
    require_finite(v, "fusion");
    return v;
  }

 private:
  FusionConfig cfg_;
  int dim_ = 0;
  Var<T> modalities_;
  nn::ClsTransformer<T> trunk_;
};

// Indices of the scans kept for a case under the scan cap: a seeded random
// subset (in original order) during training, the leading scans otherwise.
inline std::vector<int> select_scans(int count, int cap, Mode mode, Rng* rng) {
  std::vector<int> idx(count);
  for (int i = 0; i < count; ++i) idx[i] = i;
  if (count <= cap) return idx;
  if (mode == Mode::train && rng) {
    rng->shuffle(idx);
    idx.resize(cap);
    std::sort(idx.begin(), idx.end());
  } else {
    idx.resize(cap);
  }
  return idx;
}

// Parameter-free pooling of per-scan class scores [S, c] -> [1, c].
template <class T>
Var<T> pool_scan_scores(const Var<T>& scores, FusionMode mode, Rng& rng) {
  const int S = scores.shape()[0];
  switch (mode) {
    case FusionMode::max:
      return ag::max_rows(scores);
    case FusionMode::mean:
      return ag::reshape(ag::mean_axis(scores, 0), {1, scores.shape()[1]});
    case FusionMode::random:
      return ag::slice_rows(scores, static_cast<int>(rng.index(static_cast<std::size_t>(S))), 1);
    default:
      throw InvalidArgument("pool_scan_scores: learnable fusion is not a pooling baseline");
  }
}

inline std::vector<double> baseline_fuse(const std::vector<std::vector<double>>& per_scan, FusionMode mode,
                                         std::uint64_t seed) {
  if (per_scan.empty()) throw InvalidArgument("baseline_fuse: empty score list");
  const std::size_t c = per_scan[0].size();
  for (const auto& s : per_scan)
    if (s.size() != c) throw ShapeError("baseline_fuse: score vectors differ in length");
  std::vector<double> flat;
  for (const auto& s : per_scan) flat.insert(flat.end(), s.begin(), s.end());
  Rng rng(derive_seed(seed, "baseline_fuse"));
  const Var<double> pooled = pool_scan_scores(
      Var<double>::constant(Tensor<double>({static_cast<int>(per_scan.size()), static_cast<int>(c)}, flat)), mode, rng);
  return pooled.value().storage();
}

}  // namespace casedx
