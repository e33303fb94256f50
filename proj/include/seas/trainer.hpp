#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "seas/losses.hpp"
#include "seas/optim.hpp"
#include "seas/synthdata.hpp"
#include "seas/vae.hpp"

namespace seas {

using LogSink = std::function<void(const std::string&)>;

// ---------------------------------------------------------------------------
// VAE pre-training

struct VAETrainConfig {
  int steps = 400;
  int batch = 8;
  double lr = 1e-3;
  double kl_weight = 1e-6;
  /// Extra images rendered from the product spec to widen the training pool.
  int extra_samples = 256;
  std::uint64_t seed = 0;
};

/// Trains reconstruction + small KL, then sets latent_scale to 1/std of the latent means.
void pretrain_vae(VAE<float>& vae, const std::vector<Tensor<float>>& images, const VAETrainConfig& config,
                  const LogSink& log = {});

/// Pool used by pretrain_vae: corpus images followed by extra renders of the corpus spec.
std::vector<Tensor<float>> vae_training_pool(const Corpus& corpus, int extra_samples, std::uint64_t seed);

/// Mean absolute error of decode(encode(x)) over the images.
double reconstruction_mae(const VAE<float>& vae, const std::vector<Tensor<float>>& images);

/// Stacks (3, H, W) images into a (B, 3, H, W) constant.
ad::Var<float> stack_images(const std::vector<Tensor<float>>& images);

// ---------------------------------------------------------------------------
// Generator fine-tuning

enum class MixedStrategy { Mixed, AbnormalNormal, NormalAbnormal };

std::string to_string(MixedStrategy strategy);
MixedStrategy mixed_strategy_from_string(const std::string& name);

struct TrainConfig {
  int steps_per_anomaly_type = 800;
  int abnormal_count = 2;
  int normal_count = 2;
  double lr_unet = 1e-4;        ///< large-model setting: 4e-6
  double lr_embeddings = 1e-3;  ///< large-model setting: 4e-5
  double weight_decay = 1e-2;
  std::uint64_t seed = 0;

  bool with_tp = false;
  bool no_mixed = false;
  bool no_na = false;
  bool no_st = false;
  bool at_variant = false;
  int n_anomaly_tokens = 4;
  int n_normal_tokens = 1;
  std::vector<int> alignment_layers{2, 3};
  MixedStrategy mixed_strategy = MixedStrategy::Mixed;

  void validate() const;
  LossConfig loss_config() const;
  long total_steps(int num_types) const { return static_cast<long>(steps_per_anomaly_type) * num_types; }
};

struct GeneratorConfig {
  UNetConfig unet;
  PromptConfig prompt;
  int num_train_steps = 1000;
};

/// Prompt settings (token counts, with_tp) follow the training config.
GeneratorConfig make_generator_config(const TrainConfig& config, int num_types);

/// U-Net, token table and schedule trained together.
struct Generator {
  Generator(const GeneratorConfig& config, std::uint64_t seed);

  GeneratorConfig config;
  UNet<float> unet;
  PromptBank<float> bank;
  NoiseSchedule schedule;
};

/// Corpus latents from the frozen VAE.
struct TrainingSet {
  std::vector<TrainingSample<float>> normal;
  std::vector<TrainingSample<float>> abnormal;
  int num_types = 0;

  std::vector<const TrainingSample<float>*> abnormal_of_type(int type) const;
};

TrainingSet encode_corpus(const Corpus& corpus, const VAE<float>& vae);

/// Batch for `step` of `total_steps`, paired with prompts.
std::vector<BatchItem<float>> sample_batch(const TrainingSet& data, const TrainConfig& config,
                                           const PromptBank<float>& bank, Rng& rng, long step, long total_steps);

struct AlignmentScore {
  double iou = 0;       ///< mean anomaly attention > 0.5 vs M^l
  double mass_iou = 0;  ///< summed anomaly attention > 0.5 vs M^l
};

/// Averaged over abnormal training samples, alignment layers and a fixed set of noise levels.
AlignmentScore alignment_iou(const Generator& generator, const TrainingSet& data, const std::vector<int>& layers,
                             std::uint64_t seed = 1234);

struct TrainResult {
  std::vector<LossBreakdown> log;
  AlignmentScore alignment_before;
  AlignmentScore alignment_after;
};

/// Fine-tunes U-Net and added embeddings for steps_per_anomaly_type * G steps.
TrainResult train_generator(Generator& generator, const TrainingSet& data, const TrainConfig& config,
                            const LogSink& log = {}, bool measure_alignment = true);

}  // namespace seas
