#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "seas/rmp.hpp"

namespace seas {

enum class GenerationMode { Abnormal, Normal };

/// Bound on clean-latent estimates while sampling; VAE latents are scaled to roughly unit variance.
inline constexpr double kLatentClip = 4.0;

struct GenerationRequest {
  GenerationMode mode = GenerationMode::Abnormal;
  int anomaly_type = 1;
  int count = 1;
  std::uint64_t seed = 0;
  double noise_strength = 1.0;  ///< rho in (0, 1]
  int sampler_steps = 25;
  double mask_threshold = 0.2;
  int mask_average_steps = 3;
  int batch_size = 8;
  double latent_clip = kLatentClip;  ///< 0 disables clamping

  void validate(int num_types) const;
};

struct GeneratedSample {
  Tensor<float> image;   ///< (3, H, W) in [0, 1]
  Tensor<float> scores;  ///< (H, W) averaged anomalous-channel scores; empty in normal mode
  Tensor<float> mask;    ///< (H, W) binary; empty in normal mode
  std::vector<Tensor<float>> score_history;  ///< per averaged step, oldest first
  int anomaly_type = 0;
  std::uint64_t seed = 0;
  int source_index = 0;  ///< index of the normal image the latent started from
};

/// Trained components for generation. `rmp_generator_fingerprint` is the fingerprint stored with the RMP.
struct GenerationModels {
  const Generator* generator = nullptr;
  const VAE<float>* vae = nullptr;
  const RMP<float>* rmp = nullptr;
  std::string rmp_generator_fingerprint;
};

/// Forward-diffuses a normal latent (C, h, w) to the schedule position of strength rho.
Tensor<float> init_noisy_latent(const Tensor<float>& normal_latent, double rho, const NoiseSchedule& schedule, Rng& rng);

/// Denoises from noised normal images. Abnormal mode conditions on the full prompt of the
/// requested type and averages the refined masks of the last mask_average_steps steps.
std::vector<GeneratedSample> generate(const GenerationRequest& request, const GenerationModels& models,
                                      const std::vector<Tensor<float>>& normal_pool);

struct ExportInfo {
  std::uint64_t seed = 0;
  double tau = 0.2;
  double rho = 1.0;
  std::string generator_fingerprint;
  std::string rmp_fingerprint;
  std::string config_hash;
};

/// Writes out_dir/{images,masks}/NNNNN.png and out_dir/manifest.jsonl; returns the manifest path.
std::filesystem::path export_pairs(const std::vector<GeneratedSample>& results, const std::filesystem::path& out_dir,
                                   const ExportInfo& info, bool force);

/// Refined-mask scores (H, W) for real images: each is noised to step `t`, passed once through the
/// U-Net under the abnormal prompt of `anomaly_type`, and segmented by the RMP.
std::vector<Tensor<float>> segment_images(const GenerationModels& models, const std::vector<Tensor<float>>& images,
                                          int anomaly_type, int t, std::uint64_t seed);

}  // namespace seas
