#include "seas/losses.hpp"

#include <cstdio>
#include <random>

namespace seas {

using ad::Var;

void LossConfig::validate() const {
  if (at_variant && use_da && use_st)
    throw ConfigError("the AT variant replaces the second DA term; disable it (use_st=false) first");
  if (alignment_layers.empty() && use_da) throw ConfigError("DA loss needs at least one alignment layer");
  if (da_weight < 0 || df_weight < 0 || ob_weight < 0) throw ConfigError("loss weights must be nonnegative");
}

template <typename S>
LayerMask<S> downsample_mask(const Tensor<S>& full_mask, const std::map<int, int>& layer_resolutions) {
  if (full_mask.rank() != 2) throw DimensionError("mask must be (H, W), got " + shape_string(full_mask.shape()));
  for (Eigen::Index i = 0; i < full_mask.size(); ++i)
    if (full_mask[i] != S(0) && full_mask[i] != S(1)) throw ValidationError("mask is not binary");
  const int h = full_mask.dim(0), w = full_mask.dim(1);
  LayerMask<S> out;
  for (const auto& [layer, r] : layer_resolutions) {
    if (r <= 0 || h % r != 0 || w % r != 0)
      throw DimensionError("mask " + shape_string(full_mask.shape()) + " cannot pool to " + std::to_string(r));
    const int fy = h / r, fx = w / r;
    Tensor<S> m({r, r});
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        if (full_mask[y * w + x] != S(0)) m[(y / fy) * r + x / fx] = S(1);
    out.masks[layer] = std::move(m);
  }
  return out;
}

namespace {

template <typename S>
const Var<S>& layer_map(const AttentionStack<S>& attention, int layer) {
  auto it = attention.maps.find(layer);
  if (it == attention.maps.end()) throw ConfigError("alignment layer " + std::to_string(layer) + " not recorded");
  return it->second;
}

template <typename S>
Var<S> layer_mask_var(const LayerMask<S>& masks, int layer, int cells) {
  auto it = masks.masks.find(layer);
  if (it == masks.masks.end()) throw ConfigError("no mask for alignment layer " + std::to_string(layer));
  if (it->second.size() != cells) throw DimensionError("mask for layer " + std::to_string(layer) + " has wrong size");
  return Var<S>::constant(it->second.reshaped({cells}));
}

}  // namespace

template <typename S>
DATerms<S> da_loss(const AttentionStack<S>& attention, int b, const UAPrompt& prompt, const LayerMask<S>& masks,
                   const std::vector<int>& layers) {
  if (layers.empty()) throw ConfigError("DA loss needs at least one alignment layer");
  if (prompt.anomaly_columns.empty()) throw ConfigError("DA loss needs a prompt with anomaly tokens");
  Var<S> term1, term2;
  for (int layer : layers) {
    const Var<S>& a = layer_map(attention, layer);
    const Var<S> m = layer_mask_var(masks, layer, a.dim(1));
    Var<S> mean_df = ad::mean_rows(ad::token_columns(a, b, prompt.anomaly_columns));
    Var<S> a_ob = ad::mean_rows(ad::token_columns(a, b, prompt.normal_columns));
    Var<S> t1 = ad::sum_squares(ad::sub(mean_df, m));
    Var<S> t2 = ad::sum_squares(ad::mul(a_ob, m));
    term1 = term1.defined() ? ad::add(term1, t1) : t1;
    term2 = term2.defined() ? ad::add(term2, t2) : t2;
  }
  return {term1, term2};
}

template <typename S>
Var<S> at_alignment_term(const AttentionStack<S>& attention, int b, const UAPrompt& prompt, const LayerMask<S>& masks,
                         const std::vector<int>& layers) {
  if (layers.empty()) throw ConfigError("AT term needs at least one alignment layer");
  Var<S> total;
  for (int layer : layers) {
    const Var<S>& a = layer_map(attention, layer);
    const Var<S> m = layer_mask_var(masks, layer, a.dim(1));
    Var<S> a_ob = ad::mean_rows(ad::token_columns(a, b, prompt.normal_columns));
    // A_ob - (1 - M) = A_ob + M - 1
    Var<S> term = ad::sum_squares(ad::add_scalar(ad::add(a_ob, m), S(-1)));
    total = total.defined() ? ad::add(total, term) : term;
  }
  return total;
}

std::string LossBreakdown::log_line(long step) const {
  char buf[256];
  std::snprintf(buf, sizeof buf,
                "step=%ld da_term1=%.6g da_term2=%.6g diffusion_df=%.6g diffusion_ob=%.6g at_term=%.6g total=%.6g", step,
                da_term1, da_term2, diffusion_df, diffusion_ob, at_term, total);
  return buf;
}

template <typename S>
LossResult<S> seas_loss(const UNet<S>& unet, const PromptBank<S>& bank, const std::vector<BatchItem<S>>& batch,
                        const NoiseSchedule& schedule, Rng& rng, const LossConfig& config) {
  config.validate();
  if (batch.empty()) throw DataError("empty training batch");
  std::uniform_int_distribution<int> pick_t(0, schedule.num_train_steps() - 1);
  std::vector<Var<S>> noisy, noise;
  std::vector<int> timesteps;
  std::vector<UAPrompt> prompts;
  for (const auto& item : batch) {
    if (item.sample.abnormal()) {
      if (item.sample.mask.size() == 0 || item.sample.mask.array().maxCoeff() <= S(0))
        throw ValidationError("abnormal sample without a mask");
      if (item.prompt.anomaly_columns.empty()) throw ValidationError("abnormal sample paired with a normal prompt");
    }
    const int t = pick_t(rng);
    Tensor<S> eps = Tensor<S>::randn(item.sample.latent.shape(), rng);
    noisy.push_back(Var<S>::constant(forward_diffuse(item.sample.latent, t, eps, schedule)));
    noise.push_back(Var<S>::constant(std::move(eps)));
    timesteps.push_back(t);
    prompts.push_back(item.prompt);
  }

  LossResult<S> result;
  result.outputs = unet.forward(ad::stack(noisy), timesteps, bank.embed_batch(prompts));
  const auto& out = result.outputs;

  std::map<int, int> resolutions;
  for (int layer : config.alignment_layers) {
    auto it = out.attention.resolutions.find(layer);
    if (it == out.attention.resolutions.end())
      throw ConfigError("alignment layer " + std::to_string(layer) + " does not exist in the U-Net");
    resolutions[layer] = it->second;
  }

  std::vector<Var<S>> df_terms, ob_terms, da1_terms, da2_terms, at_terms;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const int b = static_cast<int>(i);
    Var<S> pred = ad::reshape(ad::slice_batch(out.predicted_noise, b, 1), noise[i].shape());
    Var<S> diffusion = ad::mse(pred, noise[i]);
    const auto& item = batch[i];
    if (!item.sample.abnormal()) {
      ob_terms.push_back(diffusion);
      continue;
    }
    df_terms.push_back(diffusion);
    if (!config.use_da && !config.at_variant) continue;
    const LayerMask<S> masks = downsample_mask(item.sample.mask, resolutions);
    if (config.use_da) {
      DATerms<S> da = da_loss(out.attention, b, item.prompt, masks, config.alignment_layers);
      da1_terms.push_back(da.term1);
      if (config.use_st) da2_terms.push_back(da.term2);
    }
    if (config.at_variant) at_terms.push_back(at_alignment_term(out.attention, b, item.prompt, masks, config.alignment_layers));
  }

  auto average = [](const std::vector<Var<S>>& terms) {
    Var<S> acc = terms.front();
    for (std::size_t i = 1; i < terms.size(); ++i) acc = ad::add(acc, terms[i]);
    return ad::scale(acc, S(1) / static_cast<S>(terms.size()));
  };
  Var<S> total;
  auto accumulate = [&](const std::vector<Var<S>>& terms, double weight, double& slot) {
    if (terms.empty()) return;
    Var<S> avg = average(terms);
    slot = static_cast<double>(avg.item());
    Var<S> weighted = ad::scale(avg, static_cast<S>(weight));
    total = total.defined() ? ad::add(total, weighted) : weighted;
  };
  auto& br = result.breakdown;
  accumulate(da1_terms, config.da_weight, br.da_term1);
  accumulate(da2_terms, config.da_weight, br.da_term2);
  accumulate(df_terms, config.df_weight, br.diffusion_df);
  if (config.use_na) accumulate(ob_terms, config.ob_weight, br.diffusion_ob);
  accumulate(at_terms, config.ob_weight, br.at_term);
  if (!total.defined()) total = Var<S>::constant(Tensor<S>({1}));
  br.total = static_cast<double>(total.item());
  result.total = total;
  return result;
}

template <typename S>
LossResult<S> abnormal_loss(const TrainingSample<S>& sample, const UNet<S>& unet, const PromptBank<S>& bank,
                            const UAPrompt& prompt, const NoiseSchedule& schedule, Rng& rng, const LossConfig& config) {
  if (!sample.abnormal()) throw ValidationError("abnormal_loss called on a normal sample");
  return seas_loss(unet, bank, {BatchItem<S>{sample, prompt}}, schedule, rng, config);
}

template <typename S>
LossResult<S> normal_loss(const TrainingSample<S>& sample, const UNet<S>& unet, const PromptBank<S>& bank,
                          const NoiseSchedule& schedule, Rng& rng, const LossConfig& config) {
  if (sample.abnormal()) throw ValidationError("normal_loss called on an abnormal sample");
  return seas_loss(unet, bank, {BatchItem<S>{sample, bank.build_normal_prompt()}}, schedule, rng, config);
}

#define SEAS_INSTANTIATE_LOSSES(S)                                                                                    \
  template LayerMask<S> downsample_mask(const Tensor<S>&, const std::map<int, int>&);                                 \
  template DATerms<S> da_loss(const AttentionStack<S>&, int, const UAPrompt&, const LayerMask<S>&,                    \
                              const std::vector<int>&);                                                               \
  template Var<S> at_alignment_term(const AttentionStack<S>&, int, const UAPrompt&, const LayerMask<S>&,              \
                                    const std::vector<int>&);                                                         \
  template LossResult<S> seas_loss(const UNet<S>&, const PromptBank<S>&, const std::vector<BatchItem<S>>&,            \
                                   const NoiseSchedule&, Rng&, const LossConfig&);                                    \
  template LossResult<S> abnormal_loss(const TrainingSample<S>&, const UNet<S>&, const PromptBank<S>&,                \
                                       const UAPrompt&, const NoiseSchedule&, Rng&, const LossConfig&);               \
  template LossResult<S> normal_loss(const TrainingSample<S>&, const UNet<S>&, const PromptBank<S>&,                  \
                                     const NoiseSchedule&, Rng&, const LossConfig&);

SEAS_INSTANTIATE_LOSSES(float)
SEAS_INSTANTIATE_LOSSES(double)

}  // namespace seas
