#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "seas/inference.hpp"

namespace seas {

/// Every stage's settings in one declarative document. Stage seeds derive from `seed`.
struct PipelineConfig {
  std::uint64_t seed = 0;
  ProductSpec spec = ProductSpec::toy(2);
  CorpusCounts counts;
  VAEConfig vae;
  VAETrainConfig vae_train;
  TrainConfig train;
  RMPConfig rmp;
  RMPTrainConfig rmp_train;
  GenerationRequest generate;

  /// Full-toy preset: the defaults above.
  static PipelineConfig full_toy();
  /// 200-step smoke preset for ablation arms (generator and RMP).
  static PipelineConfig smoke();
  /// A few steps per stage, for plumbing and determinism checks.
  static PipelineConfig tiny();

  /// Copies the master seed into every stage and validates each section.
  void resolve();
  std::uint64_t stage_seed(int stage) const { return seed * 1000003ULL + static_cast<std::uint64_t>(stage); }
};

void to_json(nlohmann::json& j, const PipelineConfig& c);
/// Keys absent from `j` keep their current values, so a file may override only some fields.
void from_json(const nlohmann::json& j, PipelineConfig& c);

/// SHA-256 of the canonical JSON form.
std::string config_hash(const PipelineConfig& config);

/// Applies "section.key=json" overrides to a config document.
void apply_override(nlohmann::json& document, const std::string& assignment);

// ---------------------------------------------------------------------------
// Ablation arms

struct AblationArm {
  std::string name;
  std::string description;
  bool changes_generator = true;
};

const std::vector<AblationArm>& ablation_arms();
/// The base config with the arm's modification; unknown names raise LookupError.
PipelineConfig apply_arm(const PipelineConfig& base, const std::string& arm);

struct AblationResult {
  std::string arm;
  std::vector<double> generator_losses;
  std::vector<double> rmp_losses;
  double nonempty_mask_fraction = 0;
  bool finite = true;
  nlohmann::json to_json() const;
};

/// A frozen generator plus its per-step training losses, shared by arms that leave the generator alone.
struct SharedGenerator {
  Generator generator;
  std::vector<double> losses;
};

/// Trains the arm's generator (or reuses `shared` for arms that only touch the RMP or inference),
/// then its RMP, then generates a small abnormal batch. Reusing arms report the shared generator's losses.
AblationResult run_ablation_arm(const std::string& arm, const PipelineConfig& base, const Corpus& corpus,
                                const VAE<float>& vae, const SharedGenerator* shared = nullptr,
                                const LogSink& log = {});

/// Trains the generator for a config and freezes it.
Generator train_frozen_generator(const PipelineConfig& config, const TrainingSet& data, const LogSink& log = {},
                                 TrainResult* result = nullptr);

/// The base-config generator for arms that do not change it.
SharedGenerator train_shared_generator(const PipelineConfig& config, const TrainingSet& data, const LogSink& log = {});

/// RMP bound to the generator's backbone and trained against it.
RMP<float> train_bound_rmp(const PipelineConfig& config, const Generator& generator, const VAE<float>& vae,
                           const TrainingSet& data, const LogSink& log = {}, RMPTrainResult* result = nullptr);

}  // namespace seas
