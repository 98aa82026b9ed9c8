#pragma once

// Parameter storage and the building blocks shared by the encoders, the
// fusion module and the knowledge encoder.

#include <cmath>
#include <map>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "casedx/autograd.hpp"
#include "casedx/rng.hpp"

namespace casedx {

struct Init {
  enum class Kind { zeros, constant, normal } kind = Kind::zeros;
  double param = 0.0;  // fill value or standard deviation

  static Init zeros() { return {Kind::zeros, 0.0}; }
  static Init ones() { return {Kind::constant, 1.0}; }
  static Init normal(double s) { return {Kind::normal, s}; }
  static Init kaiming(int fan_in) { return normal(std::sqrt(2.0 / fan_in)); }
  static Init xavier(int fan_in, int fan_out) { return normal(std::sqrt(2.0 / (fan_in + fan_out))); }
  static Init constant(double v) { return {Kind::constant, v}; }
};

// Named, insertion-ordered parameter collection. Modules are always built
// through get_or_create: a fresh store is initialized, a store filled from a
// checkpoint is reused as-is (with shape validation).
template <class T>
class ParamStore {
 public:
  Var<T> get_or_create(const std::string& name, const Shape& shape, Init init, Rng& rng, bool trainable = true) {
    if (auto it = index_.find(name); it != index_.end()) {
      Var<T>& v = entries_[it->second].second;
      if (v.shape() != shape)
        throw ShapeError("parameter " + name + " has shape " + shape_str(v.shape()) + ", expected " + shape_str(shape));
      return v;
    }
    Tensor<T> t(shape);
    switch (init.kind) {
      case Init::Kind::zeros:
        break;
      case Init::Kind::constant:
        t.fill(static_cast<T>(init.param));
        break;
      case Init::Kind::normal:
        for (auto& v : t.storage()) v = static_cast<T>(rng.normal(0.0, init.param));
        break;
    }
    return insert(name, std::move(t), trainable);
  }

  Var<T> insert(const std::string& name, Tensor<T> value, bool trainable) {
    Var<T> v = trainable ? Var<T>::parameter(std::move(value)) : Var<T>::constant(std::move(value));
    if (auto it = index_.find(name); it != index_.end()) {
      entries_[it->second].second = v;
    } else {
      index_.emplace(name, entries_.size());
      entries_.emplace_back(name, v);
    }
    return v;
  }

  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  const Var<T>& at(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw InvalidArgument("unknown parameter " + name);
    return entries_[it->second].second;
  }
  Var<T>& at(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw InvalidArgument("unknown parameter " + name);
    return entries_[it->second].second;
  }

  const std::vector<std::pair<std::string, Var<T>>>& entries() const noexcept { return entries_; }
  std::size_t size() const noexcept { return entries_.size(); }

  bool has_prefix(const std::string& prefix) const {
    for (const auto& [n, v] : entries_)
      if (n.rfind(prefix, 0) == 0) return true;
    return false;
  }

  void erase_prefix(const std::string& prefix) {
    std::vector<std::pair<std::string, Var<T>>> kept;
    for (auto& e : entries_)
      if (e.first.rfind(prefix, 0) != 0) kept.push_back(std::move(e));
    entries_ = std::move(kept);
    index_.clear();
    for (std::size_t i = 0; i < entries_.size(); ++i) index_.emplace(entries_[i].first, i);
  }

  void zero_grad() {
    for (auto& [n, v] : entries_) v.zero_grad();
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& [name, v] : entries_) n += v.size();
    return n;
  }

 private:
  std::vector<std::pair<std::string, Var<T>>> entries_;
  std::map<std::string, std::size_t> index_;
};

namespace nn {

template <class T>
struct Linear {
  Var<T> weight;  // [in, out]
  Var<T> bias;    // [out]

  static Linear make(ParamStore<T>& ps, const std::string& name, int in, int out, Rng& rng) {
    return {ps.get_or_create(name + ".weight", {in, out}, Init::xavier(in, out), rng),
            ps.get_or_create(name + ".bias", {out}, Init::zeros(), rng)};
  }
  Var<T> operator()(const Var<T>& x) const { return ag::add_row(ag::matmul(x, weight), bias); }
};

template <class T>
struct LayerNorm {
  Var<T> gamma, beta;

  static LayerNorm make(ParamStore<T>& ps, const std::string& name, int dim, Rng& rng) {
    return {ps.get_or_create(name + ".gamma", {dim}, Init::ones(), rng),
            ps.get_or_create(name + ".beta", {dim}, Init::zeros(), rng)};
  }
  Var<T> operator()(const Var<T>& x) const { return ag::layer_norm(x, gamma, beta); }
};

inline int norm_groups(int channels, int preferred) { return std::gcd(channels, preferred); }

// Convolution followed by group normalization. 2D layers are 3D layers with
// a depth-1 kernel applied to depth-1 inputs.
template <class T>
struct ConvNorm {
  Var<T> weight, gamma, beta;
  ag::Conv3dGeometry geo;
  int groups = 1;

  static ConvNorm make(ParamStore<T>& ps, const std::string& name, int in, int out, int kernel, bool volumetric,
                       int stride_hw, int preferred_groups, Rng& rng) {
    ConvNorm c;
    const int kd = volumetric ? kernel : 1;
    c.geo.kernel = {kd, kernel, kernel};
    c.geo.stride = {1, stride_hw, stride_hw};
    c.geo.padding = {kd / 2, kernel / 2, kernel / 2};
    c.groups = norm_groups(out, preferred_groups);
    c.weight = ps.get_or_create(name + ".weight", {out, in, kd, kernel, kernel}, Init::kaiming(in * kd * kernel * kernel), rng);
    c.gamma = ps.get_or_create(name + ".gamma", {out}, Init::ones(), rng);
    c.beta = ps.get_or_create(name + ".beta", {out}, Init::zeros(), rng);
    return c;
  }
  Var<T> operator()(const Var<T>& x) const { return ag::group_norm(ag::conv3d(x, weight, geo), gamma, beta, groups); }
};

template <class T>
struct ResidualBlock {
  ConvNorm<T> first, second;
  bool projected = false;
  ConvNorm<T> shortcut;

  Var<T> operator()(const Var<T>& x) const {
    Var<T> h = ag::relu(first(x));
    h = second(h);
    return ag::relu(ag::add(h, projected ? shortcut(x) : x));
  }
};

// Stages of basic residual blocks; every stage after the first halves
// height and width and doubles the channel count.
template <class T>
struct ResidualStack {
  std::vector<ResidualBlock<T>> blocks;
  int out_channels = 0;

  static ResidualStack make(ParamStore<T>& ps, const std::string& name, int in, int width,
                            const std::vector<int>& stage_blocks, bool volumetric, bool downsample_first,
                            int groups, Rng& rng) {
    ResidualStack s;
    int ch = in;
    for (std::size_t st = 0; st < stage_blocks.size(); ++st) {
      const int out = width << st;
      for (int b = 0; b < stage_blocks[st]; ++b) {
        const std::string bn = name + ".stage" + std::to_string(st) + ".block" + std::to_string(b);
        const int stride = (b == 0 && (st > 0 || downsample_first)) ? 2 : 1;
        ResidualBlock<T> blk;
        blk.first = ConvNorm<T>::make(ps, bn + ".conv1", ch, out, 3, volumetric, stride, groups, rng);
        blk.second = ConvNorm<T>::make(ps, bn + ".conv2", out, out, 3, volumetric, 1, groups, rng);
        if (stride != 1 || ch != out) {
          blk.projected = true;
          blk.shortcut = ConvNorm<T>::make(ps, bn + ".proj", ch, out, 1, volumetric, stride, groups, rng);
        }
        s.blocks.push_back(std::move(blk));
        ch = out;
      }
    }
    s.out_channels = ch;
    return s;
  }

  Var<T> operator()(Var<T> x) const {
    for (const auto& b : blocks) x = b(x);
    return x;
  }
};

// Pre-norm transformer layer with multi-head self-attention and a GELU
// feed-forward block.
template <class T>
struct TransformerLayer {
  LayerNorm<T> attn_norm, ffn_norm;
  Linear<T> query, key, value, out, ffn_in, ffn_out;
  int heads = 1;

  static TransformerLayer make(ParamStore<T>& ps, const std::string& name, int dim, int heads, int ffn_mult, Rng& rng) {
    if (dim % heads != 0) throw InvalidArgument(name + ": embedding dim " + std::to_string(dim) + " not divisible by heads");
    TransformerLayer l;
    l.heads = heads;
    l.attn_norm = LayerNorm<T>::make(ps, name + ".attn_norm", dim, rng);
    l.query = Linear<T>::make(ps, name + ".attn.query", dim, dim, rng);
    l.key = Linear<T>::make(ps, name + ".attn.key", dim, dim, rng);
    l.value = Linear<T>::make(ps, name + ".attn.value", dim, dim, rng);
    l.out = Linear<T>::make(ps, name + ".attn.out", dim, dim, rng);
    l.ffn_norm = LayerNorm<T>::make(ps, name + ".ffn_norm", dim, rng);
    l.ffn_in = Linear<T>::make(ps, name + ".ffn.in", dim, dim * ffn_mult, rng);
    l.ffn_out = Linear<T>::make(ps, name + ".ffn.out", dim * ffn_mult, dim, rng);
    return l;
  }

  // When readout_first is set, row 0 queries the other rows but is never
  // used as a key or value, so the remaining rows cannot see it.
  Var<T> operator()(const Var<T>& x, bool readout_first) const {
    const int n = x.shape()[0];
    const int dim = x.shape()[1];
    const int dh = dim / heads;
    const Var<T> h = attn_norm(x);
    const Var<T> q = query(h);
    Var<T> k = key(h);
    Var<T> v = value(h);
    if (readout_first) {
      k = ag::slice_rows(k, 1, n - 1);
      v = ag::slice_rows(v, 1, n - 1);
    }
    const T inv_sqrt = T(1) / std::sqrt(static_cast<T>(dh));
    std::vector<Var<T>> per_head;
    per_head.reserve(heads);
    for (int hd = 0; hd < heads; ++hd) {
      const Var<T> qh = ag::slice_cols(q, hd * dh, dh);
      const Var<T> kh = ag::slice_cols(k, hd * dh, dh);
      const Var<T> vh = ag::slice_cols(v, hd * dh, dh);
      const Var<T> attn = ag::softmax_rows(ag::scale(ag::matmul_nt(qh, kh), inv_sqrt));
      per_head.push_back(ag::matmul(attn, vh));
    }
    const Var<T> mixed = heads == 1 ? per_head[0] : ag::concat_cols(per_head);
    const Var<T> y = ag::add(x, out(mixed));
    return ag::add(y, ffn_out(ag::gelu(ffn_in(ffn_norm(y)))));
  }
};

// Transformer encoder with a learnable [CLS] token prepended to its input;
// returns the normalized CLS row [1, dim].
template <class T>
struct ClsTransformer {
  std::vector<TransformerLayer<T>> layers;
  LayerNorm<T> final_norm;
  Var<T> cls;
  bool readout_cls = false;
  std::string name;

  static ClsTransformer make(ParamStore<T>& ps, const std::string& name, int dim, int depth, int heads, int ffn_mult,
                             bool readout_cls, Rng& rng) {
    ClsTransformer t;
    t.name = name;
    t.readout_cls = readout_cls;
    t.cls = ps.get_or_create(name + ".cls", {1, dim}, Init::normal(0.02), rng);
    for (int i = 0; i < depth; ++i)
      t.layers.push_back(TransformerLayer<T>::make(ps, name + ".layer" + std::to_string(i), dim, heads, ffn_mult, rng));
    t.final_norm = LayerNorm<T>::make(ps, name + ".final_norm", dim, rng);
    return t;
  }

  Var<T> operator()(const Var<T>& tokens) const {
    if (tokens.shape()[0] < 1) throw ShapeError(name + ": empty token sequence");
    Var<T> x = ag::concat_rows(std::vector<Var<T>>{cls, tokens});
    for (std::size_t i = 0; i < layers.size(); ++i) {
      x = layers[i](x, readout_cls);
      require_finite(x, name + ".layer" + std::to_string(i));
    }
    return final_norm(ag::slice_rows(x, 0, 1));
  }
};

}  // namespace nn
}  // namespace casedx
