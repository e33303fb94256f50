#pragma once

// Parameterized layers shared by the VAE, the U-Net and the mask branch.

#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "seas/ops.hpp"

namespace seas {

using Rng = std::mt19937_64;

namespace nn {

using ad::Var;

template <typename S>
struct NamedParam {
  std::string name;
  Var<S> var;
};

template <typename S>
using ParamList = std::vector<NamedParam<S>>;

template <typename S>
Var<S> init_normal(Shape shape, Rng& rng, double stddev) {
  return Var<S>::parameter(Tensor<S>::randn(std::move(shape), rng, static_cast<S>(stddev)));
}

template <typename S>
Var<S> init_const(Shape shape, S value) {
  return Var<S>::parameter(Tensor<S>::full(std::move(shape), value));
}

template <typename S>
class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(int in_channels, int out_channels, int kernel, Rng& rng, int stride = 1, bool zero_init = false)
      : stride_(stride), padding_(kernel / 2) {
    const double std = zero_init ? 0.0 : std::sqrt(1.0 / (in_channels * kernel * kernel));
    weight = init_normal<S>({out_channels, in_channels, kernel, kernel}, rng, std);
    bias = init_const<S>({out_channels}, S(0));
  }

  Var<S> operator()(const Var<S>& x) const { return ad::conv2d(x, weight, bias, stride_, padding_); }

  void collect(ParamList<S>& out, const std::string& prefix) const {
    out.push_back({prefix + ".weight", weight});
    out.push_back({prefix + ".bias", bias});
  }

  int out_channels() const { return weight.dim(0); }

  Var<S> weight;
  Var<S> bias;

 private:
  int stride_ = 1;
  int padding_ = 0;
};

template <typename S>
class GroupNorm {
 public:
  GroupNorm() = default;
  GroupNorm(int channels, int groups)
      : groups_(groups), gamma(init_const<S>({channels}, S(1))), beta(init_const<S>({channels}, S(0))) {}

  Var<S> operator()(const Var<S>& x) const { return ad::group_norm(x, groups_, gamma, beta); }

  void collect(ParamList<S>& out, const std::string& prefix) const {
    out.push_back({prefix + ".gamma", gamma});
    out.push_back({prefix + ".beta", beta});
  }

 private:
  int groups_ = 1;

 public:
  Var<S> gamma;
  Var<S> beta;
};

template <typename S>
class Linear {
 public:
  Linear() = default;
  Linear(int in_features, int out_features, Rng& rng, bool with_bias = true, bool zero_init = false) {
    weight = init_normal<S>({in_features, out_features}, rng, zero_init ? 0.0 : std::sqrt(1.0 / in_features));
    if (with_bias) bias = init_const<S>({out_features}, S(0));
  }

  Var<S> operator()(const Var<S>& x) const { return ad::linear(x, weight, bias); }

  void collect(ParamList<S>& out, const std::string& prefix) const {
    out.push_back({prefix + ".weight", weight});
    if (bias.defined()) out.push_back({prefix + ".bias", bias});
  }

  Var<S> weight;
  Var<S> bias;
};

template <typename S>
class LayerNorm {
 public:
  LayerNorm() = default;
  explicit LayerNorm(int width) : gamma(init_const<S>({width}, S(1))), beta(init_const<S>({width}, S(0))) {}

  Var<S> operator()(const Var<S>& x) const { return ad::layer_norm(x, gamma, beta); }

  void collect(ParamList<S>& out, const std::string& prefix) const {
    out.push_back({prefix + ".gamma", gamma});
    out.push_back({prefix + ".beta", beta});
  }

  Var<S> gamma;
  Var<S> beta;
};

/// Largest group count <= preferred that divides channels.
inline int group_count(int channels, int preferred) {
  int g = std::min(channels, preferred);
  while (channels % g != 0) --g;
  return g;
}

/// GroupNorm-SiLU-Conv twice, with an optional per-channel embedding
/// injection between the convolutions and a 1x1 skip when widths differ.
template <typename S>
class ResBlock {
 public:
  ResBlock() = default;
  ResBlock(int in_channels, int out_channels, int embed_dim, int groups, Rng& rng)
      : norm1_(in_channels, group_count(in_channels, groups)),
        conv1_(in_channels, out_channels, 3, rng),
        norm2_(out_channels, group_count(out_channels, groups)),
        conv2_(out_channels, out_channels, 3, rng) {
    if (embed_dim > 0) embed_proj_ = Linear<S>(embed_dim, out_channels, rng);
    if (in_channels != out_channels) skip_ = Conv2d<S>(in_channels, out_channels, 1, rng);
  }

  Var<S> operator()(const Var<S>& x, const Var<S>& embedding = Var<S>()) const {
    Var<S> h = conv1_(ad::silu(norm1_(x)));
    if (embedding.defined() && embed_proj_.weight.defined()) h = ad::add_channel_bias(h, embed_proj_(ad::silu(embedding)));
    h = conv2_(ad::silu(norm2_(h)));
    return ad::add(skip_.weight.defined() ? skip_(x) : x, h);
  }

  void collect(ParamList<S>& out, const std::string& prefix) const {
    norm1_.collect(out, prefix + ".norm1");
    conv1_.collect(out, prefix + ".conv1");
    norm2_.collect(out, prefix + ".norm2");
    conv2_.collect(out, prefix + ".conv2");
    if (embed_proj_.weight.defined()) embed_proj_.collect(out, prefix + ".embed");
    if (skip_.weight.defined()) skip_.collect(out, prefix + ".skip");
  }

 private:
  GroupNorm<S> norm1_;
  Conv2d<S> conv1_;
  GroupNorm<S> norm2_;
  Conv2d<S> conv2_;
  Linear<S> embed_proj_;
  Conv2d<S> skip_;
};

/// Pre-norm transformer layer over a (B, L, D) sequence.
template <typename S>
class TransformerLayer {
 public:
  TransformerLayer() = default;
  TransformerLayer(int width, int heads, Rng& rng)
      : heads_(heads),
        norm1_(width),
        q_(width, width, rng, false),
        k_(width, width, rng, false),
        v_(width, width, rng, false),
        out_(width, width, rng),
        norm2_(width),
        fc1_(width, 2 * width, rng),
        fc2_(2 * width, width, rng) {}

  Var<S> operator()(const Var<S>& x) const {
    const int width = x.dim(2);
    const S scale = S(1) / std::sqrt(static_cast<S>(width / heads_));
    Var<S> h = norm1_(x);
    Var<S> q = ad::split_heads(q_(h), heads_);
    Var<S> k = ad::split_heads(k_(h), heads_);
    Var<S> v = ad::split_heads(v_(h), heads_);
    Var<S> attn = ad::softmax_lastdim(ad::scale(ad::bmm(q, k, true), scale));
    Var<S> y = ad::add(x, out_(ad::merge_heads(ad::bmm(attn, v, false), heads_)));
    return ad::add(y, fc2_(ad::gelu(fc1_(norm2_(y)))));
  }

  void collect(ParamList<S>& out, const std::string& prefix) const {
    norm1_.collect(out, prefix + ".norm1");
    q_.collect(out, prefix + ".q");
    k_.collect(out, prefix + ".k");
    v_.collect(out, prefix + ".v");
    out_.collect(out, prefix + ".out");
    norm2_.collect(out, prefix + ".norm2");
    fc1_.collect(out, prefix + ".fc1");
    fc2_.collect(out, prefix + ".fc2");
  }

 private:
  int heads_ = 1;
  LayerNorm<S> norm1_;
  Linear<S> q_, k_, v_;
  Linear<S> out_;
  LayerNorm<S> norm2_;
  Linear<S> fc1_;
  Linear<S> fc2_;
};

}  // namespace nn
}  // namespace seas
