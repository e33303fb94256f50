#pragma once

#include <map>
#include <string>
#include <vector>

#include "seas/prompt.hpp"
#include "seas/schedule.hpp"
#include "seas/unet.hpp"

namespace seas {

struct LossConfig {
  std::vector<int> alignment_layers{2, 3};
  bool use_da = true;      ///< both DA terms
  bool use_st = true;      ///< second DA term (normal token suppressed inside the mask)
  bool use_na = true;      ///< diffusion loss on normal images
  bool at_variant = false; ///< background alignment of <ob> added to the normal term
  double da_weight = 1.0;
  double df_weight = 1.0;
  double ob_weight = 1.0;

  void validate() const;
};

/// A cached training example: the frozen-VAE latent plus its full-resolution mask.
template <typename S>
struct TrainingSample {
  Tensor<S> latent;  ///< (C, h, w)
  Tensor<S> mask;    ///< (H, W) in {0, 1}; all zeros for normal samples
  int anomaly_type = 0;
  Tensor<S> image;   ///< (3, H, W) source image; optional
  bool abnormal() const { return anomaly_type > 0; }
};

template <typename S>
struct BatchItem {
  TrainingSample<S> sample;
  UAPrompt prompt;
};

/// Binary masks keyed by attention layer, each (r, r).
template <typename S>
struct LayerMask {
  std::map<int, Tensor<S>> masks;
};

/// Max-pools a binary (H, W) mask to each layer's resolution.
template <typename S>
LayerMask<S> downsample_mask(const Tensor<S>& full_mask, const std::map<int, int>& layer_resolutions);

template <typename S>
struct DATerms {
  ad::Var<S> term1;
  ad::Var<S> term2;
};

/// Alignment terms for sample `b` of the attention stack over the given layers.
template <typename S>
DATerms<S> da_loss(const AttentionStack<S>& attention, int b, const UAPrompt& prompt, const LayerMask<S>& masks,
                   const std::vector<int>& layers);

/// Sum over layers of ||A_ob - (1 - M)||^2 for sample `b`.
template <typename S>
ad::Var<S> at_alignment_term(const AttentionStack<S>& attention, int b, const UAPrompt& prompt,
                             const LayerMask<S>& masks, const std::vector<int>& layers);

struct LossBreakdown {
  double da_term1 = 0;
  double da_term2 = 0;
  double diffusion_df = 0;
  double diffusion_ob = 0;
  double at_term = 0;
  double total = 0;

  std::string log_line(long step) const;
};

template <typename S>
struct LossResult {
  ad::Var<S> total;
  LossBreakdown breakdown;
  UNetOutputs<S> outputs;
};

/// One shared U-Net pass over a mixed batch. Abnormal items contribute the
/// alignment terms and the anomaly diffusion term, normal items the normal one;
/// each group is averaged over its members. Draws t then noise per item from rng.
template <typename S>
LossResult<S> seas_loss(const UNet<S>& unet, const PromptBank<S>& bank, const std::vector<BatchItem<S>>& batch,
                        const NoiseSchedule& schedule, Rng& rng, const LossConfig& config);

template <typename S>
LossResult<S> abnormal_loss(const TrainingSample<S>& sample, const UNet<S>& unet, const PromptBank<S>& bank,
                            const UAPrompt& prompt, const NoiseSchedule& schedule, Rng& rng, const LossConfig& config);

template <typename S>
LossResult<S> normal_loss(const TrainingSample<S>& sample, const UNet<S>& unet, const PromptBank<S>& bank,
                          const NoiseSchedule& schedule, Rng& rng, const LossConfig& config);

}  // namespace seas
