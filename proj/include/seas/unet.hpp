#pragma once

#include <map>
#include <vector>

#include "seas/nn.hpp"

namespace seas {

struct UNetConfig {
  int latent_channels = 4;
  int latent_size = 16;
  /// Channel width per resolution level; level i runs at latent_size / 2^i.
  std::vector<int> widths{64, 128, 128, 128};
  int heads = 2;
  int context_dim = 64;
  int groups = 8;
  bool decoder_attention = true;

  int levels() const { return static_cast<int>(widths.size()); }
  /// Spatial size of attention layer l (1-based, encoder side).
  int attention_resolution(int layer) const { return latent_size >> (layer - 1); }
  /// Spatial size of decoder stage s (1-based, up-1 is the coarsest).
  int decoder_resolution(int stage) const { return latent_size >> (levels() - stage); }
  int decoder_channels(int stage) const { return widths[static_cast<std::size_t>(levels() - stage)]; }
};

/// Head-averaged cross-attention probabilities keyed by encoder layer (1-based),
/// each (B, r*r, Z) with the softmax taken over the token axis Z.
template <typename S>
struct AttentionStack {
  std::map<int, ad::Var<S>> maps;
  std::map<int, int> resolutions;
};

template <typename S>
struct UNetOutputs {
  ad::Var<S> predicted_noise;
  AttentionStack<S> attention;
  /// Decoder stage s (1..levels, up-1 coarsest) -> (B, C_s, r_s, r_s) at the stage's working resolution.
  std::map<int, ad::Var<S>> decoder_features;
};

/// Spatial cross-attention: image tokens query the prompt conditioning.
template <typename S>
class CrossAttentionBlock {
 public:
  CrossAttentionBlock() = default;
  CrossAttentionBlock(int channels, int context_dim, int heads, int groups, Rng& rng);

  /// Returns the updated feature map and the head-averaged attention (B, HW, Z).
  std::pair<ad::Var<S>, ad::Var<S>> operator()(const ad::Var<S>& x, const ad::Var<S>& context) const;

  /// Per-head softmax probabilities (B*heads, HW, Z) for inspection.
  ad::Var<S> head_probabilities(const ad::Var<S>& x, const ad::Var<S>& context) const;

  void collect(nn::ParamList<S>& out, const std::string& prefix) const;

  int heads() const { return heads_; }
  nn::Linear<S>& query() { return q_; }
  nn::Linear<S>& key() { return k_; }
  nn::Linear<S>& value() { return v_; }
  nn::Linear<S>& output() { return out_; }

 private:
  int heads_ = 1;
  nn::GroupNorm<S> norm_;
  nn::Linear<S> q_, k_, v_, out_;
  nn::GroupNorm<S> ff_norm_;
  nn::Conv2d<S> ff1_, ff2_;
};

/// Conditional noise predictor with cross-attention at every encoder level.
template <typename S>
class UNet {
 public:
  UNet() = default;
  UNet(const UNetConfig& config, Rng& rng);

  UNetOutputs<S> forward(const ad::Var<S>& noisy_latent, const std::vector<int>& timesteps,
                         const ad::Var<S>& context) const;

  nn::ParamList<S> parameters() const;
  const UNetConfig& config() const { return config_; }
  CrossAttentionBlock<S>& encoder_attention(int layer) { return enc_attn_.at(static_cast<std::size_t>(layer - 1)); }

 private:
  ad::Var<S> time_embedding(const std::vector<int>& timesteps) const;

  UNetConfig config_;
  nn::Linear<S> time1_, time2_;
  nn::Conv2d<S> conv_in_;
  std::vector<nn::ResBlock<S>> enc_res_;
  std::vector<CrossAttentionBlock<S>> enc_attn_;
  std::vector<nn::Conv2d<S>> down_;
  nn::ResBlock<S> mid_;
  std::vector<nn::ResBlock<S>> dec_res_;
  std::vector<CrossAttentionBlock<S>> dec_attn_;
  std::vector<nn::Conv2d<S>> up_;
  nn::GroupNorm<S> norm_out_;
  nn::Conv2d<S> conv_out_;
};

}  // namespace seas
