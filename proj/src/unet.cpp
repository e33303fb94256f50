#include "seas/unet.hpp"

#include <cmath>

namespace seas {

using ad::Var;

template <typename S>
CrossAttentionBlock<S>::CrossAttentionBlock(int channels, int context_dim, int heads, int groups, Rng& rng)
    : heads_(heads),
      norm_(channels, nn::group_count(channels, groups)),
      q_(channels, channels, rng, false),
      k_(context_dim, channels, rng, false),
      v_(context_dim, channels, rng, false),
      out_(channels, channels, rng),
      ff_norm_(channels, nn::group_count(channels, groups)),
      ff1_(channels, 2 * channels, 1, rng),
      ff2_(2 * channels, channels, 1, rng) {
  if (channels % heads != 0) throw ConfigError("attention width must be divisible by the head count");
}

template <typename S>
Var<S> CrossAttentionBlock<S>::head_probabilities(const Var<S>& x, const Var<S>& context) const {
  const int channels = x.dim(1);
  if (context.dim(0) != x.dim(0)) throw DimensionError("cross attention: context batch differs from features");
  Var<S> tokens = ad::to_tokens(norm_(x));
  Var<S> q = ad::split_heads(q_(tokens), heads_);
  Var<S> k = ad::split_heads(k_(context), heads_);
  const S scale = S(1) / std::sqrt(static_cast<S>(channels / heads_));
  return ad::softmax_lastdim(ad::scale(ad::bmm(q, k, true), scale));
}

template <typename S>
std::pair<Var<S>, Var<S>> CrossAttentionBlock<S>::operator()(const Var<S>& x, const Var<S>& context) const {
  const int h = x.dim(2), w = x.dim(3);
  Var<S> probs = head_probabilities(x, context);
  Var<S> v = ad::split_heads(v_(context), heads_);
  Var<S> attended = out_(ad::merge_heads(ad::bmm(probs, v, false), heads_));
  Var<S> y = ad::add(x, ad::from_tokens(attended, h, w));
  y = ad::add(y, ff2_(ad::silu(ff1_(ff_norm_(y)))));
  return {y, ad::mean_head_groups(probs, heads_)};
}

template <typename S>
void CrossAttentionBlock<S>::collect(nn::ParamList<S>& out, const std::string& prefix) const {
  norm_.collect(out, prefix + ".norm");
  q_.collect(out, prefix + ".q");
  k_.collect(out, prefix + ".k");
  v_.collect(out, prefix + ".v");
  out_.collect(out, prefix + ".out");
  ff_norm_.collect(out, prefix + ".ff_norm");
  ff1_.collect(out, prefix + ".ff1");
  ff2_.collect(out, prefix + ".ff2");
}

template <typename S>
UNet<S>::UNet(const UNetConfig& config, Rng& rng) : config_(config) {
  const int levels = config.levels();
  if (levels < 1) throw ConfigError("U-Net needs at least one level");
  if (config.latent_size % (1 << (levels - 1)) != 0) throw ConfigError("latent size not divisible across levels");
  const int base = config.widths.front();
  const int embed = 4 * base;
  time1_ = nn::Linear<S>(base, embed, rng);
  time2_ = nn::Linear<S>(embed, embed, rng);
  conv_in_ = nn::Conv2d<S>(config.latent_channels, base, 3, rng);
  int prev = base;
  for (int i = 0; i < levels; ++i) {
    const int w = config.widths[static_cast<std::size_t>(i)];
    enc_res_.emplace_back(prev, w, embed, config.groups, rng);
    enc_attn_.emplace_back(w, config.context_dim, config.heads, config.groups, rng);
    if (i + 1 < levels) down_.emplace_back(w, w, 3, rng, 2);
    prev = w;
  }
  mid_ = nn::ResBlock<S>(prev, prev, embed, config.groups, rng);
  for (int j = 0; j < levels; ++j) {
    const int i = levels - 1 - j;
    const int w = config.widths[static_cast<std::size_t>(i)];
    dec_res_.emplace_back(prev + w, w, embed, config.groups, rng);
    if (config.decoder_attention) dec_attn_.emplace_back(w, config.context_dim, config.heads, config.groups, rng);
    if (i > 0) up_.emplace_back(w, w, 3, rng);
    prev = w;
  }
  norm_out_ = nn::GroupNorm<S>(base, nn::group_count(base, config.groups));
  conv_out_ = nn::Conv2d<S>(base, config.latent_channels, 3, rng);
}

template <typename S>
Var<S> UNet<S>::time_embedding(const std::vector<int>& timesteps) const {
  const int dim = config_.widths.front();
  const int half = dim / 2;
  Tensor<S> emb({static_cast<int>(timesteps.size()), dim});
  for (std::size_t b = 0; b < timesteps.size(); ++b) {
    for (int i = 0; i < half; ++i) {
      const double freq = std::exp(-std::log(10000.0) * i / half);
      const double arg = timesteps[b] * freq;
      emb[static_cast<Eigen::Index>(b) * dim + i] = static_cast<S>(std::sin(arg));
      emb[static_cast<Eigen::Index>(b) * dim + half + i] = static_cast<S>(std::cos(arg));
    }
  }
  return time2_(ad::silu(time1_(Var<S>::constant(std::move(emb)))));
}

template <typename S>
UNetOutputs<S> UNet<S>::forward(const Var<S>& noisy_latent, const std::vector<int>& timesteps,
                                const Var<S>& context) const {
  const auto& x = noisy_latent.value();
  if (x.rank() != 4 || x.dim(1) != config_.latent_channels || x.dim(2) != config_.latent_size ||
      x.dim(3) != config_.latent_size)
    throw DimensionError("U-Net input " + shape_string(x.shape()) + " does not match the configured latent");
  if (static_cast<int>(timesteps.size()) != x.dim(0)) throw DimensionError("U-Net: one timestep per sample required");
  if (context.value().rank() != 3 || context.dim(0) != x.dim(0) || context.dim(2) != config_.context_dim)
    throw DimensionError("U-Net conditioning " + shape_string(context.shape()) + " must be (B, Z, " +
                         std::to_string(config_.context_dim) + ")");

  UNetOutputs<S> out;
  const int levels = config_.levels();
  Var<S> temb = time_embedding(timesteps);
  Var<S> h = conv_in_(noisy_latent);
  std::vector<Var<S>> skips;
  for (int i = 0; i < levels; ++i) {
    h = enc_res_[static_cast<std::size_t>(i)](h, temb);
    auto [y, probs] = enc_attn_[static_cast<std::size_t>(i)](h, context);
    h = y;
    out.attention.maps[i + 1] = probs;
    out.attention.resolutions[i + 1] = h.dim(2);
    skips.push_back(h);
    if (i + 1 < levels) h = down_[static_cast<std::size_t>(i)](h);
  }
  h = mid_(h, temb);
  std::size_t up_index = 0;
  for (int j = 0; j < levels; ++j) {
    const int i = levels - 1 - j;
    h = dec_res_[static_cast<std::size_t>(j)](ad::concat_channels<S>({h, skips[static_cast<std::size_t>(i)]}), temb);
    if (config_.decoder_attention) h = dec_attn_[static_cast<std::size_t>(j)](h, context).first;
    out.decoder_features[j + 1] = h;
    if (i > 0) h = up_[up_index++](ad::upsample_nearest(h, 2));
  }
  out.predicted_noise = conv_out_(ad::silu(norm_out_(h)));
  return out;
}

template <typename S>
nn::ParamList<S> UNet<S>::parameters() const {
  nn::ParamList<S> out;
  time1_.collect(out, "time1");
  time2_.collect(out, "time2");
  conv_in_.collect(out, "conv_in");
  for (std::size_t i = 0; i < enc_res_.size(); ++i) {
    enc_res_[i].collect(out, "enc" + std::to_string(i) + ".res");
    enc_attn_[i].collect(out, "enc" + std::to_string(i) + ".attn");
  }
  for (std::size_t i = 0; i < down_.size(); ++i) down_[i].collect(out, "down" + std::to_string(i));
  mid_.collect(out, "mid");
  for (std::size_t j = 0; j < dec_res_.size(); ++j) {
    dec_res_[j].collect(out, "dec" + std::to_string(j) + ".res");
    if (j < dec_attn_.size()) dec_attn_[j].collect(out, "dec" + std::to_string(j) + ".attn");
  }
  for (std::size_t j = 0; j < up_.size(); ++j) up_[j].collect(out, "up" + std::to_string(j));
  norm_out_.collect(out, "norm_out");
  conv_out_.collect(out, "conv_out");
  return out;
}

template class CrossAttentionBlock<float>;
template class CrossAttentionBlock<double>;
template class UNet<float>;
template class UNet<double>;

}  // namespace seas
