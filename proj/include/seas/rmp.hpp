#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "seas/trainer.hpp"

namespace seas {

enum class MRMVariant { A, B, C };
enum class FeatureSource { VAEDecoder, VAEEncoder };

std::string to_string(MRMVariant variant);
MRMVariant mrm_variant_from_string(const std::string& name);
std::string to_string(FeatureSource source);
FeatureSource feature_source_from_string(const std::string& name);

struct RMPConfig {
  /// U-Net decoder stages feeding the coarse branch (up-1 is the coarsest).
  std::vector<int> unet_stages{2, 3};
  /// Total channels after compression; two streams split 2:1, three streams evenly.
  int compressed_channels = 48;
  int transformer_layers = 4;
  int heads = 2;
  MRMVariant variant = MRMVariant::C;
  FeatureSource vae_source = FeatureSource::VAEDecoder;
  /// Coarse grid size; three doublings must reach the image size.
  int coarse_resolution = 8;
  int image_size = 64;
  std::vector<int> vae_channels{64, 32, 16};
  std::vector<int> unet_channels{128, 128, 128, 64};  ///< per decoder stage 1..L

  std::vector<int> stream_channels() const;
  /// Fills channel counts and resolutions from the backbone configs.
  void bind(const UNetConfig& unet, const VAEConfig& vae);
  void validate() const;
};

/// Coarse extraction, three mask refinement modules and the two mask heads.
template <typename S>
class RMP {
 public:
  RMP() = default;
  RMP(const RMPConfig& config, Rng& rng);

  struct Coarse {
    ad::Var<S> feature;  ///< (B, C, r_c, r_c)
    ad::Var<S> logits;   ///< (B, 2, r_c, r_c)
  };
  struct Outputs {
    ad::Var<S> coarse_logits;   ///< (B, 2, r_c, r_c)
    ad::Var<S> refined_logits;  ///< (B, 2, H, W)
    std::vector<ad::Var<S>> stages;  ///< MRM outputs, resolutions 2r_c, 4r_c, 8r_c
  };

  Coarse coarse_extract(const std::map<int, ad::Var<S>>& unet_features) const;
  /// MRM `index` (0..2) on a discriminative feature and a VAE feature at twice its resolution.
  ad::Var<S> mrm_forward(int index, const ad::Var<S>& discriminative, const ad::Var<S>& vae_feature) const;
  /// With refine=false the refined logits are the coarse logits upsampled to image size.
  Outputs forward(const std::map<int, ad::Var<S>>& unet_features, const std::vector<ad::Var<S>>& vae_features,
                  bool refine = true) const;

  nn::ParamList<S> parameters() const;
  nn::ParamList<S> mrm_parameters(int index) const;
  const RMPConfig& config() const { return config_; }

 private:
  struct ConvBlock {
    nn::Conv2d<S> a, b, c;
    ad::Var<S> operator()(const ad::Var<S>& x) const;
    void collect(nn::ParamList<S>& out, const std::string& prefix) const;
  };
  struct MRM {
    std::vector<ConvBlock> blocks;
    nn::Conv2d<S> parallel;
    nn::GroupNorm<S> gate_norm;
    nn::Conv2d<S> fuse;
  };

  RMPConfig config_;
  std::vector<nn::Conv2d<S>> compress_;
  std::vector<nn::GroupNorm<S>> compress_norm_;
  ad::Var<S> position_;
  std::vector<nn::TransformerLayer<S>> transformer_;
  nn::LayerNorm<S> final_norm_;
  nn::Conv2d<S> coarse_head_;
  std::vector<MRM> mrms_;
  nn::GroupNorm<S> head_norm_;
  nn::Conv2d<S> refined_head_;
};

/// Sum of the four focal terms; the two normal terms are skipped when their inputs are undefined.
/// Abnormal targets are the GT mask (refined) and its max-pooled version (coarse); normal targets are zero.
template <typename S>
struct RMPLossTerms {
  ad::Var<S> total;
  double coarse_df = 0, refined_df = 0, coarse_ob = 0, refined_ob = 0;
};

template <typename S>
RMPLossTerms<S> rmp_loss(const ad::Var<S>& coarse_df, const ad::Var<S>& refined_df, const ad::Var<S>& coarse_ob,
                         const ad::Var<S>& refined_ob, const Tensor<S>& gt_mask, S gamma, S alpha);

/// Per-pixel softmax over {normal, anomalous}; returns the anomalous channel (B, H, W).
template <typename S>
Tensor<S> anomaly_scores(const ad::Var<S>& logits);

/// (B, H, W) scores -> {0, 1} by scores > tau.
template <typename S>
Tensor<S> binarize(const Tensor<S>& scores, double tau);

struct RMPTrainConfig {
  int steps_per_anomaly_type = 800;
  int abnormal_count = 2;
  int normal_count = 2;
  double lr = 5e-4;
  double weight_decay = 1e-2;
  double focal_gamma = 2.0;
  double focal_alpha = 0.75;
  bool normal_supervision = true;
  /// Schedule positions for teacher features; empty means the last three of a 25-step full-strength sampler.
  std::vector<int> noise_steps;
  std::uint64_t seed = 0;

  std::vector<int> resolved_noise_steps(const NoiseSchedule& schedule) const;
};

/// VAE features from the configured source: decoder up-blocks while decoding `latents` (B, c, h, w),
/// or encoder blocks while encoding `images` (B, 3, H, W).
std::vector<ad::Var<float>> rmp_vae_features(const VAE<float>& vae, const ad::Var<float>& latents,
                                             const ad::Var<float>& images, FeatureSource source);

/// Marks every generator parameter as frozen.
void freeze(Generator& generator);
bool is_frozen(const Generator& generator);

struct RMPTrainResult {
  std::vector<double> losses;
};

/// Trains only the RMP. Requires a frozen generator; throws if its parameters change.
RMPTrainResult train_rmp(RMP<float>& rmp, const Generator& generator, const VAE<float>& vae, const TrainingSet& data,
                         const RMPTrainConfig& config, const LogSink& log = {});

}  // namespace seas
