#include "seas/rmp.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "seas/checkpoint.hpp"

namespace seas {

using ad::Var;

std::string to_string(MRMVariant variant) {
  switch (variant) {
    case MRMVariant::A: return "a";
    case MRMVariant::B: return "b";
    case MRMVariant::C: return "c";
  }
  return "unknown";
}

MRMVariant mrm_variant_from_string(const std::string& name) {
  if (name == "a") return MRMVariant::A;
  if (name == "b") return MRMVariant::B;
  if (name == "c") return MRMVariant::C;
  throw ConfigError("unknown MRM variant '" + name + "'");
}

std::string to_string(FeatureSource source) {
  return source == FeatureSource::VAEDecoder ? "vae_decoder" : "vae_encoder";
}

FeatureSource feature_source_from_string(const std::string& name) {
  if (name == "vae_decoder") return FeatureSource::VAEDecoder;
  if (name == "vae_encoder") return FeatureSource::VAEEncoder;
  throw ConfigError("unknown VAE feature source '" + name + "'");
}

std::vector<int> RMPConfig::stream_channels() const {
  const int n = static_cast<int>(unet_stages.size());
  if (n == 2) return {2 * compressed_channels / 3, compressed_channels - 2 * compressed_channels / 3};
  std::vector<int> out(static_cast<std::size_t>(n), compressed_channels / std::max(n, 1));
  if (n > 0) out.back() += compressed_channels - (compressed_channels / n) * n;
  return out;
}

void RMPConfig::bind(const UNetConfig& unet, const VAEConfig& vae) {
  unet_channels.clear();
  for (int s = 1; s <= unet.levels(); ++s) unet_channels.push_back(unet.decoder_channels(s));
  vae_channels.assign(vae.widths.rbegin(), vae.widths.rend());
  image_size = vae.image_size;
  coarse_resolution = vae.image_size / 8;
}

void RMPConfig::validate() const {
  if (unet_stages.size() < 2) throw ConfigError("coarse extraction needs at least two U-Net decoder stages");
  for (int s : unet_stages)
    if (s < 1 || s > static_cast<int>(unet_channels.size()))
      throw ConfigError("U-Net decoder stage " + std::to_string(s) + " does not exist");
  if (vae_channels.size() != 3) throw ConfigError("the refinement chain needs exactly three VAE features");
  if (coarse_resolution * 8 != image_size)
    throw ConfigError("three resolution doublings from " + std::to_string(coarse_resolution) + " do not reach " +
                      std::to_string(image_size));
  if (compressed_channels % heads != 0) throw ConfigError("compressed width must be divisible by the head count");
  for (int c : stream_channels())
    if (c < 1) throw ConfigError("compressed width too small for the number of streams");
}

template <typename S>
Var<S> RMP<S>::ConvBlock::operator()(const Var<S>& x) const {
  return c(ad::silu(b(ad::silu(a(x)))));
}

template <typename S>
void RMP<S>::ConvBlock::collect(nn::ParamList<S>& out, const std::string& prefix) const {
  a.collect(out, prefix + ".a");
  b.collect(out, prefix + ".b");
  c.collect(out, prefix + ".c");
}

template <typename S>
RMP<S>::RMP(const RMPConfig& config, Rng& rng) : config_(config) {
  config.validate();
  const auto streams = config.stream_channels();
  for (std::size_t i = 0; i < config.unet_stages.size(); ++i) {
    compress_.emplace_back(config.unet_channels[static_cast<std::size_t>(config.unet_stages[i] - 1)], streams[i], 1, rng);
    compress_norm_.emplace_back(streams[i], nn::group_count(streams[i], 8));
  }
  const int width = config.compressed_channels;
  const int cells = config.coarse_resolution * config.coarse_resolution;
  position_ = nn::init_normal<S>({cells, width}, rng, 0.02);
  for (int l = 0; l < config.transformer_layers; ++l) transformer_.emplace_back(width, config.heads, rng);
  final_norm_ = nn::LayerNorm<S>(width);
  coarse_head_ = nn::Conv2d<S>(width, 2, 1, rng);

  int in = width;
  const int chained = config.variant == MRMVariant::C ? 2 : config.variant == MRMVariant::B ? 1 : 0;
  for (int v : config.vae_channels) {
    MRM m;
    int block_in = in;
    for (int k = 0; k < chained; ++k) {
      m.blocks.push_back({nn::Conv2d<S>(block_in, v, 1, rng), nn::Conv2d<S>(v, v, 1, rng), nn::Conv2d<S>(v, v, 3, rng)});
      block_in = v;
    }
    m.parallel = nn::Conv2d<S>(in, v, 1, rng);
    m.gate_norm = nn::GroupNorm<S>(v, nn::group_count(v, 8));
    m.fuse = nn::Conv2d<S>(v, v, 3, rng);
    mrms_.push_back(std::move(m));
    in = v;
  }
  head_norm_ = nn::GroupNorm<S>(in, nn::group_count(in, 8));
  refined_head_ = nn::Conv2d<S>(in, 2, 3, rng);
}

namespace {

template <typename S>
Var<S> resample(const Var<S>& x, int target) {
  const int r = x.dim(2);
  if (r == target) return x;
  if (r < target) {
    if (target % r != 0) throw DimensionError("cannot upsample " + std::to_string(r) + " to " + std::to_string(target));
    return ad::upsample_nearest(x, target / r);
  }
  if (r % target != 0) throw DimensionError("cannot pool " + std::to_string(r) + " to " + std::to_string(target));
  return ad::avg_pool(x, r / target);
}

}  // namespace

template <typename S>
typename RMP<S>::Coarse RMP<S>::coarse_extract(const std::map<int, Var<S>>& unet_features) const {
  std::vector<Var<S>> streams;
  for (std::size_t i = 0; i < config_.unet_stages.size(); ++i) {
    const int stage = config_.unet_stages[i];
    auto it = unet_features.find(stage);
    if (it == unet_features.end()) throw ConfigError("missing U-Net decoder feature for stage up-" + std::to_string(stage));
    streams.push_back(resample(compress_norm_[i](compress_[i](it->second)), config_.coarse_resolution));
  }
  const int r = config_.coarse_resolution;
  Var<S> tokens = ad::add_broadcast_batch(ad::to_tokens(ad::concat_channels(streams)), position_);
  for (const auto& layer : transformer_) tokens = layer(tokens);
  tokens = final_norm_(tokens);
  Var<S> feature = ad::from_tokens(tokens, r, r);
  return {feature, coarse_head_(feature)};
}

template <typename S>
Var<S> RMP<S>::mrm_forward(int index, const Var<S>& discriminative, const Var<S>& vae_feature) const {
  if (index < 0 || index >= static_cast<int>(mrms_.size())) throw RangeError("MRM index out of range");
  const auto& m = mrms_[static_cast<std::size_t>(index)];
  if (vae_feature.dim(2) != 2 * discriminative.dim(2) || vae_feature.dim(3) != 2 * discriminative.dim(3))
    throw DimensionError("MRM " + std::to_string(index + 1) + ": VAE feature " + shape_string(vae_feature.shape()) +
                         " is not twice the resolution of " + shape_string(discriminative.shape()));
  if (vae_feature.dim(1) != config_.vae_channels[static_cast<std::size_t>(index)])
    throw DimensionError("MRM " + std::to_string(index + 1) + ": unexpected VAE feature width");
  Var<S> up = ad::upsample_nearest(discriminative, 2);
  Var<S> path = up;
  for (const auto& block : m.blocks) path = block(path);
  path = m.blocks.empty() ? m.parallel(up) : ad::add(path, m.parallel(up));
  // The gate is normalized so the three chained products keep a stable scale.
  return m.fuse(ad::mul(path, m.gate_norm(vae_feature)));
}

template <typename S>
typename RMP<S>::Outputs RMP<S>::forward(const std::map<int, Var<S>>& unet_features,
                                         const std::vector<Var<S>>& vae_features, bool refine) const {
  Coarse coarse = coarse_extract(unet_features);
  Outputs out;
  out.coarse_logits = coarse.logits;
  if (!refine) {
    out.refined_logits = ad::upsample_nearest(coarse.logits, config_.image_size / config_.coarse_resolution);
    return out;
  }
  if (vae_features.size() != 3)
    throw ConfigError("refinement needs 3 VAE features, got " + std::to_string(vae_features.size()));
  Var<S> h = coarse.feature;
  for (int i = 0; i < 3; ++i) {
    h = mrm_forward(i, h, vae_features[static_cast<std::size_t>(i)]);
    out.stages.push_back(h);
  }
  out.refined_logits = refined_head_(ad::silu(head_norm_(h)));
  return out;
}

template <typename S>
nn::ParamList<S> RMP<S>::mrm_parameters(int index) const {
  nn::ParamList<S> out;
  const auto& m = mrms_.at(static_cast<std::size_t>(index));
  const std::string prefix = "mrm" + std::to_string(index);
  for (std::size_t k = 0; k < m.blocks.size(); ++k) m.blocks[k].collect(out, prefix + ".block" + std::to_string(k));
  m.parallel.collect(out, prefix + ".parallel");
  m.gate_norm.collect(out, prefix + ".gate_norm");
  m.fuse.collect(out, prefix + ".fuse");
  return out;
}

template <typename S>
nn::ParamList<S> RMP<S>::parameters() const {
  nn::ParamList<S> out;
  for (std::size_t i = 0; i < compress_.size(); ++i) {
    compress_[i].collect(out, "compress" + std::to_string(i));
    compress_norm_[i].collect(out, "compress_norm" + std::to_string(i));
  }
  out.push_back({"position", position_});
  for (std::size_t l = 0; l < transformer_.size(); ++l) transformer_[l].collect(out, "transformer" + std::to_string(l));
  final_norm_.collect(out, "final_norm");
  coarse_head_.collect(out, "coarse_head");
  for (int i = 0; i < static_cast<int>(mrms_.size()); ++i) {
    auto p = mrm_parameters(i);
    out.insert(out.end(), p.begin(), p.end());
  }
  head_norm_.collect(out, "head_norm");
  refined_head_.collect(out, "refined_head");
  return out;
}

template <typename S>
RMPLossTerms<S> rmp_loss(const Var<S>& coarse_df, const Var<S>& refined_df, const Var<S>& coarse_ob,
                         const Var<S>& refined_ob, const Tensor<S>& gt_mask, S gamma, S alpha) {
  RMPLossTerms<S> out;
  auto add = [&](const Var<S>& term, double& slot) {
    slot = static_cast<double>(term.item());
    out.total = out.total.defined() ? ad::add(out.total, term) : term;
  };
  if (coarse_df.defined() || refined_df.defined()) {
    if (gt_mask.size() == 0) throw ValidationError("abnormal mask predictions need a ground-truth mask");
    if (gt_mask.rank() != 3) throw DimensionError("ground-truth masks must be (B, H, W)");
    for (Eigen::Index i = 0; i < gt_mask.size(); ++i)
      if (gt_mask[i] != S(0) && gt_mask[i] != S(1)) throw ValidationError("ground-truth mask is not binary");
    const int b = gt_mask.dim(0), h = gt_mask.dim(1), w = gt_mask.dim(2);
    if (refined_df.defined()) add(ad::focal_loss(refined_df, gt_mask, gamma, alpha), out.refined_df);
    if (coarse_df.defined()) {
      const int r = coarse_df.dim(2);
      Tensor<S> coarse_target({b, r, r});
      for (int n = 0; n < b; ++n) {
        Tensor<S> one({h, w}, gt_mask.array().segment(static_cast<Eigen::Index>(n) * h * w, h * w));
        const auto pooled = downsample_mask(one, {{0, r}}).masks.at(0);
        coarse_target.array().segment(static_cast<Eigen::Index>(n) * r * r, r * r) = pooled.array();
      }
      add(ad::focal_loss(coarse_df, coarse_target, gamma, alpha), out.coarse_df);
    }
  }
  if (coarse_ob.defined())
    add(ad::focal_loss(coarse_ob, Tensor<S>({coarse_ob.dim(0), coarse_ob.dim(2), coarse_ob.dim(3)}), gamma, alpha),
        out.coarse_ob);
  if (refined_ob.defined())
    add(ad::focal_loss(refined_ob, Tensor<S>({refined_ob.dim(0), refined_ob.dim(2), refined_ob.dim(3)}), gamma, alpha),
        out.refined_ob);
  if (!out.total.defined()) throw ValidationError("rmp_loss called without predictions");
  return out;
}

template <typename S>
Tensor<S> anomaly_scores(const Var<S>& logits) {
  if (logits.value().rank() != 4 || logits.dim(1) != 2) throw DimensionError("mask logits must be (B, 2, H, W)");
  const Tensor<S> probs = ad::softmax_channels(logits).value();
  const int b = logits.dim(0), hw = logits.dim(2) * logits.dim(3);
  Tensor<S> out({b, logits.dim(2), logits.dim(3)});
  for (int n = 0; n < b; ++n)
    out.array().segment(static_cast<Eigen::Index>(n) * hw, hw) =
        probs.array().segment(static_cast<Eigen::Index>(2 * n + 1) * hw, hw);
  return out;
}

template <typename S>
Tensor<S> binarize(const Tensor<S>& scores, double tau) {
  Tensor<S> out(scores.shape());
  out.array() = (scores.array() > static_cast<S>(tau)).template cast<S>();
  return out;
}

std::vector<int> RMPTrainConfig::resolved_noise_steps(const NoiseSchedule& schedule) const {
  if (!noise_steps.empty()) {
    for (int t : noise_steps)
      if (t < 0 || t >= schedule.num_train_steps()) throw ConfigError("RMP noise step " + std::to_string(t) + " out of range");
    return noise_steps;
  }
  const auto steps = sampling_steps(schedule.step_for_strength(1.0), 25);
  return {steps.end() - 3, steps.end()};
}

std::vector<Var<float>> rmp_vae_features(const VAE<float>& vae, const Var<float>& latents, const Var<float>& images,
                                         FeatureSource source) {
  if (source == FeatureSource::VAEEncoder) return vae.encoder_features(images).features;
  auto [decoded, features] = vae.decode(latents, true);
  return features->features;
}

void freeze(Generator& generator) {
  for (auto& p : generator.unet.parameters()) p.var.set_requires_grad(false);
  if (generator.bank.table().added().defined()) generator.bank.table().added().set_requires_grad(false);
}

bool is_frozen(const Generator& generator) {
  for (const auto& p : generator.unet.parameters())
    if (p.var.requires_grad()) return false;
  const auto& added = generator.bank.table().added();
  return !(added.defined() && added.requires_grad());
}

RMPTrainResult train_rmp(RMP<float>& rmp, const Generator& generator, const VAE<float>& vae, const TrainingSet& data,
                         const RMPTrainConfig& config, const LogSink& log) {
  if (!is_frozen(generator)) throw ConfigError("train_rmp requires a frozen generator; call freeze() first");
  const std::string before = generator_fingerprint(generator);
  const std::vector<int> levels = config.resolved_noise_steps(generator.schedule);

  std::vector<Var<float>> params;
  for (auto& p : rmp.parameters()) params.push_back(p.var);
  AdamW<float> opt({ParamGroup<float>{params, config.lr, config.weight_decay}});

  TrainConfig batch_config;
  batch_config.abnormal_count = config.abnormal_count;
  batch_config.normal_count = config.normal_count;
  const long total = static_cast<long>(config.steps_per_anomaly_type) * data.num_types;
  Rng rng(config.seed);
  RMPTrainResult result;
  const float gamma = static_cast<float>(config.focal_gamma), alpha = static_cast<float>(config.focal_alpha);

  for (long step = 0; step < total; ++step) {
    auto batch = sample_batch(data, batch_config, generator.bank, rng, step, total);
    std::vector<Var<float>> noisy, clean, images;
    std::vector<int> timesteps;
    std::vector<UAPrompt> prompts;
    for (const auto& item : batch) {
      const int t = levels[std::uniform_int_distribution<std::size_t>(0, levels.size() - 1)(rng)];
      Tensor<float> eps = Tensor<float>::randn(item.sample.latent.shape(), rng);
      noisy.push_back(Var<float>::constant(forward_diffuse(item.sample.latent, t, eps, generator.schedule)));
      clean.push_back(Var<float>::constant(item.sample.latent));
      images.push_back(Var<float>::constant(item.sample.image));
      timesteps.push_back(t);
      prompts.push_back(item.prompt);
    }

    std::map<int, Var<float>> unet_features;
    std::vector<Var<float>> vae_features;
    {
      ad::NoGradGuard no_grad;
      unet_features = generator.unet.forward(ad::stack(noisy), timesteps, generator.bank.embed_batch(prompts)).decoder_features;
      vae_features = rmp_vae_features(vae, ad::stack(clean), ad::stack(images), rmp.config().vae_source);
    }

    // Abnormal items lead the batch; split teacher inputs accordingly.
    int n_df = 0;
    while (n_df < static_cast<int>(batch.size()) && batch[static_cast<std::size_t>(n_df)].sample.abnormal()) ++n_df;
    const int n_ob = static_cast<int>(batch.size()) - n_df;
    auto slice = [](const std::map<int, Var<float>>& f, int begin, int count) {
      std::map<int, Var<float>> out;
      for (const auto& [k, v] : f) out[k] = ad::slice_batch(v, begin, count);
      return out;
    };
    Var<float> coarse_df, refined_df, coarse_ob, refined_ob;
    Tensor<float> gt;
    if (n_df > 0) {
      std::vector<Var<float>> vae_df;
      for (const auto& v : vae_features) vae_df.push_back(ad::slice_batch(v, 0, n_df));
      auto out = rmp.forward(slice(unet_features, 0, n_df), vae_df, true);
      coarse_df = out.coarse_logits;
      refined_df = out.refined_logits;
      std::vector<Var<float>> masks;
      for (int i = 0; i < n_df; ++i) masks.push_back(Var<float>::constant(batch[static_cast<std::size_t>(i)].sample.mask));
      gt = ad::stack(masks).value();
    }
    if (n_ob > 0 && config.normal_supervision) {
      auto out = rmp.forward(slice(unet_features, n_df, n_ob), {}, false);
      coarse_ob = out.coarse_logits;
      refined_ob = out.refined_logits;
    }
    if (!coarse_df.defined() && !coarse_ob.defined()) continue;
    auto loss = rmp_loss(coarse_df, refined_df, coarse_ob, refined_ob, gt, gamma, alpha);
    const double value = loss.total.item();
    if (!std::isfinite(value)) throw DivergenceError("non-finite RMP loss at step " + std::to_string(step));
    opt.zero_grad();
    loss.total.backward();
    opt.step();
    result.losses.push_back(value);
    if (log) {
      char buf[200];
      std::snprintf(buf, sizeof buf, "rmp step=%ld coarse_df=%.6g refined_df=%.6g coarse_ob=%.6g refined_ob=%.6g total=%.6g",
                    step, loss.coarse_df, loss.refined_df, loss.coarse_ob, loss.refined_ob, value);
      log(buf);
    }
  }
  if (generator_fingerprint(generator) != before) throw ConfigError("generator parameters changed during RMP training");
  return result;
}

#define SEAS_INSTANTIATE_RMP(S)                                                                                      \
  template class RMP<S>;                                                                                             \
  template RMPLossTerms<S> rmp_loss(const Var<S>&, const Var<S>&, const Var<S>&, const Var<S>&, const Tensor<S>&, S, \
                                    S);                                                                              \
  template Tensor<S> anomaly_scores(const Var<S>&);                                                                  \
  template Tensor<S> binarize(const Tensor<S>&, double);

SEAS_INSTANTIATE_RMP(float)
SEAS_INSTANTIATE_RMP(double)

}  // namespace seas
