#pragma once

// Visual encoders mapping one canonical scan to an embedding in R^d.
//
// Every variant has separate normalization paths for 2D and 3D inputs that
// end in a representation of identical shape, followed by a shared trunk:
//   resnet - 3D residual stack + mean over depth / 2D residual stack, then a
//            shared 2D residual stack, global average pooling and a projection.
//   vit    - 3D cubes / 2D patches through separate MLP projections with
//            separate learnable position tables, then a shared transformer.
//   mix    - every depth slice through the 2D residual path of the resnet
//            layout (normalization stack, then shared stack), pooled to one
//            token per slice, then a transformer over the slice tokens.

#include <optional>
#include <string>
#include <vector>

#include "casedx/nn.hpp"
#include "casedx/preprocess.hpp"

namespace casedx {

enum class EncoderVariant { resnet, vit, mix };

inline std::string_view to_string(EncoderVariant v) {
  return v == EncoderVariant::resnet ? "resnet" : v == EncoderVariant::vit ? "vit" : "mix";
}
inline EncoderVariant parse_variant(std::string_view s) {
  if (s == "resnet") return EncoderVariant::resnet;
  if (s == "vit") return EncoderVariant::vit;
  if (s == "mix" || s == "resnet_vit_mix") return EncoderVariant::mix;
  throw InvalidArgument("unknown encoder variant \"" + std::string(s) + "\"");
}

enum class Mode { train, eval };

struct EncoderConfig {
  EncoderVariant variant = EncoderVariant::mix;
  int embed_dim = 256;
  Geometry geometry;

  // Residual parts. norm_blocks lists blocks per stage of the normalization
  // stacks (and of the per-slice stack in the mix variant); shared_blocks
  // lists the shared 2D stack of the resnet variant.
  int width = 16;
  std::vector<int> norm_blocks = {2, 2};
  std::vector<int> shared_blocks = {2, 2};
  int norm_groups = 4;

  // Transformer parts (vit trunk and mix slice aggregator).
  int layers = 2;
  int heads = 4;
  int ffn_mult = 4;
  int patch_size = 32;
  int cube_depth = 8;
  int patch_hidden = 256;
  bool slice_positions = false;

  void validate() const {
    if (embed_dim <= 0 || embed_dim % 2 != 0) throw InvalidArgument("encoder.embed_dim must be positive and even");
    if (embed_dim % heads != 0) throw InvalidArgument("encoder.embed_dim must be divisible by encoder.heads");
    if (geometry.height <= 0 || geometry.width <= 0 || geometry.depth <= 0) throw InvalidArgument("geometry must be positive");
    if (variant == EncoderVariant::vit) {
      if (geometry.height % patch_size || geometry.width % patch_size)
        throw InvalidArgument("encoder.patch_size must divide the canonical height and width");
      if (geometry.depth % cube_depth) throw InvalidArgument("encoder.cube_depth must divide the canonical depth");
    }
    if (variant != EncoderVariant::vit && norm_blocks.empty()) throw InvalidArgument("encoder.norm_blocks must not be empty");
    if (variant != EncoderVariant::vit && shared_blocks.empty())
      throw InvalidArgument("encoder.shared_blocks must not be empty for convolutional variants");
  }
};

template <class T>
struct VisualEmbedding {
  Var<T> vector;  // [1, d]
  std::string scan_id;
  Modality modality = Modality::ct;
};

template <class T>
Var<T> scan_input(const CanonicalScan& s, bool requires_grad = false) {
  const Volume& v = s.values;
  Tensor<T> t({v.depth, v.height, v.width}, std::vector<T>(v.voxels.begin(), v.voxels.end()));
  return requires_grad ? Var<T>::parameter(std::move(t)) : Var<T>::constant(std::move(t));
}

template <class T>
class Encoder {
 public:
  struct Trace {
    Var<T> embedding;    // [1, d]
    Var<T> feature_map;  // last convolutional activation [N, C, 1, h, w]; empty for vit
  };

  static Encoder build(ParamStore<T>& ps, const EncoderConfig& cfg, Rng& rng) {
    cfg.validate();
    Encoder e;
    e.cfg_ = cfg;
    const int d = cfg.embed_dim;
    const int g = cfg.norm_groups;
    switch (cfg.variant) {
      case EncoderVariant::resnet: {
        e.stem2d_ = nn::ConvNorm<T>::make(ps, "encoder.resnet.stem2d", 1, cfg.width, 3, false, 2, g, rng);
        e.norm2d_ = nn::ResidualStack<T>::make(ps, "encoder.resnet.norm2d", cfg.width, cfg.width, cfg.norm_blocks, false, false, g, rng);
        e.stem3d_ = nn::ConvNorm<T>::make(ps, "encoder.resnet.stem3d", 1, cfg.width, 3, true, 2, g, rng);
        e.norm3d_ = nn::ResidualStack<T>::make(ps, "encoder.resnet.norm3d", cfg.width, cfg.width, cfg.norm_blocks, true, false, g, rng);
        const int c = e.norm2d_.out_channels;
        e.shared_ = nn::ResidualStack<T>::make(ps, "encoder.resnet.shared", c, c * 2, cfg.shared_blocks, false, true, g, rng);
        e.project_ = nn::Linear<T>::make(ps, "encoder.resnet.project", e.shared_.out_channels, d, rng);
        break;
      }
      case EncoderVariant::vit: {
        const Geometry& geo = cfg.geometry;
        const int p = cfg.patch_size;
        const int n2 = (geo.height / p) * (geo.width / p);
        const int n3 = n2 * (geo.depth / cfg.cube_depth);
        e.patch_in_ = nn::Linear<T>::make(ps, "encoder.vit.patch2d.in", p * p, cfg.patch_hidden, rng);
        e.patch_out_ = nn::Linear<T>::make(ps, "encoder.vit.patch2d.out", cfg.patch_hidden, d, rng);
        e.cube_in_ = nn::Linear<T>::make(ps, "encoder.vit.cube3d.in", p * p * cfg.cube_depth, cfg.patch_hidden, rng);
        e.cube_out_ = nn::Linear<T>::make(ps, "encoder.vit.cube3d.out", cfg.patch_hidden, d, rng);
        e.pos2d_ = ps.get_or_create("encoder.vit.pos2d", {n2, d}, Init::normal(0.02), rng);
        e.pos3d_ = ps.get_or_create("encoder.vit.pos3d", {n3, d}, Init::normal(0.02), rng);
        e.trunk_ = nn::ClsTransformer<T>::make(ps, "encoder.vit.transformer", d, cfg.layers, cfg.heads, cfg.ffn_mult, false, rng);
        break;
      }
      case EncoderVariant::mix: {
        e.stem2d_ = nn::ConvNorm<T>::make(ps, "encoder.mix.stem", 1, cfg.width, 3, false, 2, g, rng);
        e.norm2d_ = nn::ResidualStack<T>::make(ps, "encoder.mix.slice", cfg.width, cfg.width, cfg.norm_blocks, false, false, g, rng);
        const int c = e.norm2d_.out_channels;
        e.shared_ = nn::ResidualStack<T>::make(ps, "encoder.mix.shared", c, c * 2, cfg.shared_blocks, false, true, g, rng);
        e.project_ = nn::Linear<T>::make(ps, "encoder.mix.token", e.shared_.out_channels, d, rng);
        if (cfg.slice_positions)
          e.slice_pos_ = ps.get_or_create("encoder.mix.slice_pos", {cfg.geometry.depth, d}, Init::normal(0.02), rng);
        e.trunk_ = nn::ClsTransformer<T>::make(ps, "encoder.mix.transformer", d, cfg.layers, cfg.heads, cfg.ffn_mult, true, rng);
        break;
      }
    }
    return e;
  }

  const EncoderConfig& config() const noexcept { return cfg_; }
  bool has_feature_map() const noexcept { return cfg_.variant != EncoderVariant::vit; }

  // input holds D*H*W values of a canonical scan (D = 1 for 2D inputs).
  Trace trace(const Var<T>& input, Dims dims, Mode = Mode::eval) const {
    const Geometry& geo = cfg_.geometry;
    const int D = dims == Dims::three_d ? geo.depth : 1;
    if (input.size() != static_cast<std::size_t>(D) * geo.height * geo.width)
      throw ShapeError("encoder input " + shape_str(input.shape()) + " does not match the canonical " +
                       std::string(to_string(dims)) + " geometry");
    switch (cfg_.variant) {
      case EncoderVariant::resnet:
        return trace_resnet(input, dims, D);
      case EncoderVariant::vit:
        return {trace_vit(input, dims, D), Var<T>()};
      default:
        return trace_mix(input, D);
    }
  }

  Var<T> encode(const Var<T>& input, Dims dims, Mode mode = Mode::eval) const { return trace(input, dims, mode).embedding; }

  VisualEmbedding<T> encode(const CanonicalScan& s, Mode mode = Mode::eval) const {
    return {encode(scan_input<T>(s), s.dims, mode), s.scan_id, s.modality};
  }

  std::vector<VisualEmbedding<T>> encode_batch(const std::vector<CanonicalScan>& batch, Mode mode = Mode::eval) const {
    std::vector<VisualEmbedding<T>> out;
    out.reserve(batch.size());
    for (const auto& s : batch) out.push_back(encode(s, mode));
    return out;
  }

 private:
  // [N, C, 1, h, w] -> [N, C] by averaging over the spatial positions.
  static Var<T> spatial_mean(const Var<T>& x) {
    const Shape& s = x.shape();
    return ag::mean_axis(ag::reshape(x, {s[0], s[1], s[2] * s[3] * s[4]}), 2);
  }

  Trace trace_resnet(const Var<T>& input, Dims dims, int D) const {
    const Geometry& geo = cfg_.geometry;
    const Var<T> x = ag::reshape(input, {1, 1, D, geo.height, geo.width});
    Var<T> f;
    if (dims == Dims::three_d) {
      f = norm3d_(ag::relu(stem3d_(x)));
      require_finite(f, "encoder.resnet.norm3d");
      const Shape s = f.shape();
      f = ag::reshape(ag::mean_axis(f, 2), {s[0], s[1], 1, s[3], s[4]});
    } else {
      f = norm2d_(ag::relu(stem2d_(x)));
      require_finite(f, "encoder.resnet.norm2d");
    }
    const Var<T> h = shared_(f);
    require_finite(h, "encoder.resnet.shared");
    const Var<T> v = project_(spatial_mean(h));
    require_finite(v, "encoder.resnet.project");
    return {v, h};
  }

  Var<T> trace_vit(const Var<T>& input, Dims dims, int D) const {
    const Geometry& geo = cfg_.geometry;
    const int p = cfg_.patch_size;
    Var<T> tokens;
    if (dims == Dims::three_d) {
      const Var<T> cubes = ag::patchify(input, D, geo.height, geo.width, cfg_.cube_depth, p, p);
      tokens = ag::add(cube_out_(ag::gelu(cube_in_(cubes))), pos3d_);
    } else {
      const Var<T> patches = ag::patchify(input, 1, geo.height, geo.width, 1, p, p);
      tokens = ag::add(patch_out_(ag::gelu(patch_in_(patches))), pos2d_);
    }
    require_finite(tokens, "encoder.vit.tokens");
    return trunk_(tokens);
  }

  Trace trace_mix(const Var<T>& input, int D) const {
    const Geometry& geo = cfg_.geometry;
    const Var<T> x = ag::reshape(input, {D, 1, 1, geo.height, geo.width});
    const Var<T> f = shared_(norm2d_(ag::relu(stem2d_(x))));
    require_finite(f, "encoder.mix.slice");
    Var<T> tokens = project_(spatial_mean(f));
    if (slice_pos_) tokens = ag::add(tokens, ag::slice_rows(slice_pos_, 0, D));
    const Var<T> v = trunk_(tokens);
    return {v, f};
  }

  EncoderConfig cfg_;
  nn::ConvNorm<T> stem2d_, stem3d_;
  nn::ResidualStack<T> norm2d_, norm3d_, shared_;
  nn::Linear<T> project_;
  nn::Linear<T> patch_in_, patch_out_, cube_in_, cube_out_;
  Var<T> pos2d_, pos3d_, slice_pos_;
  nn::ClsTransformer<T> trunk_;
};

}  // namespace casedx
