#include "seas/vae.hpp"

namespace seas {

using ad::Var;

template <typename S>
VAE<S>::VAE(const VAEConfig& config, Rng& rng) : config_(config) {
  const int levels = config.levels();
  if (levels < 1 || config.image_size % (1 << (levels - 1)) != 0) throw ConfigError("VAE image size/levels mismatch");
  const auto& w = config.widths;
  enc_in_ = nn::Conv2d<S>(config.image_channels, w[0], 3, rng);
  int prev = w[0];
  for (int i = 0; i < levels; ++i) {
    enc_blocks_.emplace_back(prev, w[static_cast<std::size_t>(i)], 0, config.groups, rng);
    prev = w[static_cast<std::size_t>(i)];
    if (i + 1 < levels) enc_down_.emplace_back(prev, prev, 3, rng, 2);
  }
  enc_mid_ = nn::ResBlock<S>(prev, prev, 0, config.groups, rng);
  enc_norm_ = nn::GroupNorm<S>(prev, nn::group_count(prev, config.groups));
  enc_out_ = nn::Conv2d<S>(prev, 2 * config.latent_channels, 3, rng);

  dec_in_ = nn::Conv2d<S>(config.latent_channels, prev, 3, rng);
  dec_mid_ = nn::ResBlock<S>(prev, prev, 0, config.groups, rng);
  for (int j = 0; j < levels; ++j) {
    const int i = levels - 1 - j;
    const int width = w[static_cast<std::size_t>(i)];
    dec_blocks_.emplace_back(prev, width, 0, config.groups, rng);
    prev = width;
    if (i > 0) dec_up_.emplace_back(prev, prev, 3, rng);
  }
  dec_norm_ = nn::GroupNorm<S>(prev, nn::group_count(prev, config.groups));
  dec_out_ = nn::Conv2d<S>(prev, config.image_channels, 3, rng);
}

template <typename S>
Var<S> VAE<S>::encode_trunk(const Var<S>& image, VAEDecoderFeatures<S>* features) const {
  const auto& v = image.value();
  if (v.rank() != 4 || v.dim(1) != config_.image_channels || v.dim(2) != config_.image_size ||
      v.dim(3) != config_.image_size)
    throw DimensionError("VAE input " + shape_string(v.shape()) + " does not match the configured image");
  if (!v.all_finite()) throw NumericError("VAE encode: non-finite input");
  Var<S> h = enc_in_(ad::add_scalar(ad::scale(image, S(2)), S(-1)));
  std::vector<Var<S>> captured;
  for (std::size_t i = 0; i < enc_blocks_.size(); ++i) {
    h = enc_blocks_[i](h);
    captured.push_back(h);
    if (i < enc_down_.size()) h = enc_down_[i](h);
  }
  if (features) features->features.assign(captured.rbegin(), captured.rend());
  return h;
}

template <typename S>
VAEPosterior<S> VAE<S>::posterior(const Var<S>& image) const {
  Var<S> h = encode_trunk(image, nullptr);
  h = enc_out_(ad::silu(enc_norm_(enc_mid_(h))));
  const int c = config_.latent_channels;
  return {ad::slice_channels(h, 0, c), ad::slice_channels(h, c, c)};
}

template <typename S>
Var<S> VAE<S>::encode(const Var<S>& image) const {
  return ad::scale(posterior(image).mean, latent_scale_);
}

template <typename S>
VAEDecoderFeatures<S> VAE<S>::encoder_features(const Var<S>& image) const {
  VAEDecoderFeatures<S> out;
  encode_trunk(image, &out);
  return out;
}

template <typename S>
Var<S> VAE<S>::decode_raw(const Var<S>& unscaled_latent, VAEDecoderFeatures<S>* features) const {
  const auto& v = unscaled_latent.value();
  if (v.rank() != 4 || v.dim(1) != config_.latent_channels || v.dim(2) != config_.latent_size() ||
      v.dim(3) != config_.latent_size())
    throw DimensionError("VAE latent " + shape_string(v.shape()) + " does not match the configured latent");
  if (!v.all_finite()) throw NumericError("VAE decode: non-finite latent");
  Var<S> h = dec_mid_(dec_in_(unscaled_latent));
  for (std::size_t j = 0; j < dec_blocks_.size(); ++j) {
    h = dec_blocks_[j](h);
    if (features) features->features.push_back(h);
    if (j < dec_up_.size()) h = dec_up_[j](ad::upsample_nearest(h, 2));
  }
  // Output lives in [-1, 1] space; map to [0, 1].
  return ad::add_scalar(ad::scale(dec_out_(ad::silu(dec_norm_(h))), S(0.5)), S(0.5));
}

template <typename S>
std::pair<Var<S>, std::optional<VAEDecoderFeatures<S>>> VAE<S>::decode(const Var<S>& latent,
                                                                       bool capture_features) const {
  std::optional<VAEDecoderFeatures<S>> features;
  if (capture_features) features.emplace();
  Var<S> raw = decode_raw(ad::scale(latent, S(1) / latent_scale_), capture_features ? &*features : nullptr);
  Tensor<S> clamped = raw.value();
  clamped.array() = clamped.array().max(S(0)).min(S(1));
  return {Var<S>::constant(std::move(clamped)), std::move(features)};
}

template <typename S>
nn::ParamList<S> VAE<S>::parameters() const {
  nn::ParamList<S> out;
  enc_in_.collect(out, "enc_in");
  for (std::size_t i = 0; i < enc_blocks_.size(); ++i) enc_blocks_[i].collect(out, "enc" + std::to_string(i));
  for (std::size_t i = 0; i < enc_down_.size(); ++i) enc_down_[i].collect(out, "enc_down" + std::to_string(i));
  enc_mid_.collect(out, "enc_mid");
  enc_norm_.collect(out, "enc_norm");
  enc_out_.collect(out, "enc_out");
  dec_in_.collect(out, "dec_in");
  dec_mid_.collect(out, "dec_mid");
  for (std::size_t j = 0; j < dec_blocks_.size(); ++j) dec_blocks_[j].collect(out, "dec" + std::to_string(j));
  for (std::size_t j = 0; j < dec_up_.size(); ++j) dec_up_[j].collect(out, "dec_up" + std::to_string(j));
  dec_norm_.collect(out, "dec_norm");
  dec_out_.collect(out, "dec_out");
  return out;
}

template class VAE<float>;
template class VAE<double>;

}  // namespace seas
