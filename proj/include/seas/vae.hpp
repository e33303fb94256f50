#pragma once

#include <optional>
#include <vector>

#include "seas/nn.hpp"

namespace seas {

struct VAEConfig {
  int image_channels = 3;
  int image_size = 64;
  int latent_channels = 4;
  /// Widths at image_size, image_size/2, ... ; latent_size = image_size / 2^(levels-1).
  std::vector<int> widths{16, 32, 64};
  int groups = 8;

  int levels() const { return static_cast<int>(widths.size()); }
  int latent_size() const { return image_size >> (levels() - 1); }
};

/// Up-block features captured while decoding, coarsest first; resolutions double along the list.
template <typename S>
struct VAEDecoderFeatures {
  std::vector<ad::Var<S>> features;
};

template <typename S>
struct VAEPosterior {
  ad::Var<S> mean;
  ad::Var<S> log_variance;
};

/// Small KL-regularized convolutional autoencoder. Images live in [0, 1];
/// latents are multiplied by latent_scale so they are roughly unit-variance.
template <typename S>
class VAE {
 public:
  VAE() = default;
  VAE(const VAEConfig& config, Rng& rng);

  /// Unscaled posterior of an image batch (B, 3, H, W) in [0, 1].
  VAEPosterior<S> posterior(const ad::Var<S>& image) const;
  /// Scaled posterior-mean latent.
  ad::Var<S> encode(const ad::Var<S>& image) const;
  /// Encoder block outputs coarsest first, for the encoder-feature ablation.
  VAEDecoderFeatures<S> encoder_features(const ad::Var<S>& image) const;

  /// Decodes a scaled latent; output is clamped to [0, 1] (the clamp is not differentiated).
  std::pair<ad::Var<S>, std::optional<VAEDecoderFeatures<S>>> decode(const ad::Var<S>& latent,
                                                                     bool capture_features) const;
  /// Decoder output before clamping, for training on unscaled latents.
  ad::Var<S> decode_raw(const ad::Var<S>& unscaled_latent, VAEDecoderFeatures<S>* features = nullptr) const;

  nn::ParamList<S> parameters() const;
  const VAEConfig& config() const { return config_; }
  S latent_scale() const { return latent_scale_; }
  void set_latent_scale(S scale) { latent_scale_ = scale; }

 private:
  ad::Var<S> encode_trunk(const ad::Var<S>& image, VAEDecoderFeatures<S>* features) const;

  VAEConfig config_;
  S latent_scale_ = S(1);
  nn::Conv2d<S> enc_in_;
  std::vector<nn::ResBlock<S>> enc_blocks_;
  std::vector<nn::Conv2d<S>> enc_down_;
  nn::ResBlock<S> enc_mid_;
  nn::GroupNorm<S> enc_norm_;
  nn::Conv2d<S> enc_out_;
  nn::Conv2d<S> dec_in_;
  nn::ResBlock<S> dec_mid_;
  std::vector<nn::ResBlock<S>> dec_blocks_;
  std::vector<nn::Conv2d<S>> dec_up_;
  nn::GroupNorm<S> dec_norm_;
  nn::Conv2d<S> dec_out_;
};

}  // namespace seas
