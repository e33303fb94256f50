#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "seas/tensor.hpp"

namespace seas {

enum class DefectFamily { Scratch, Blob, Hole };

std::string to_string(DefectFamily family);
DefectFamily defect_family_from_string(const std::string& name);

using Color = std::array<float, 3>;

struct DefectSpec {
  DefectFamily family = DefectFamily::Blob;
  Color color_lo{0.1f, 0.1f, 0.1f};
  Color color_hi{0.2f, 0.2f, 0.2f};
  int size_min = 6;  ///< pixels: radius for blobs/holes, length/4 for scratches
  int size_max = 10;
};

struct ProductSpec {
  std::string texture = "striped";  ///< "striped" or "cellular"
  double frequency = 6.0;           ///< pattern periods across the image
  double angle = 0.5;               ///< radians, stripes only
  std::array<Color, 3> palette{{{0.75f, 0.7f, 0.6f}, {0.45f, 0.5f, 0.55f}, {0.3f, 0.3f, 0.35f}}};
  double local_jitter = 0.02;
  int image_size = 64;
  std::vector<DefectSpec> defect_types;

  /// Striped product with `num_types` defect types cycling scratch, blob, hole.
  static ProductSpec toy(int num_types = 2);
  int num_types() const { return static_cast<int>(defect_types.size()); }
  void validate() const;
};

void to_json(nlohmann::json& j, const ProductSpec& spec);
void from_json(const nlohmann::json& j, ProductSpec& spec);

struct AnomalySample {
  Tensor<float> image;  ///< (3, H, W) in [0, 1], multiples of 1/255
  Tensor<float> mask;   ///< (H, W) in {0, 1}
  int anomaly_type = 0; ///< 0 normal, 1..G abnormal
  std::uint64_t seed = 0;
  bool abnormal() const { return anomaly_type > 0; }
};

struct CorpusCounts {
  int normal = 16;
  int abnormal_per_type = 4;
};

struct Corpus {
  ProductSpec spec;
  std::uint64_t seed = 0;
  std::vector<AnomalySample> normal;
  std::vector<AnomalySample> abnormal;

  int num_types() const { return spec.num_types(); }
  std::vector<const AnomalySample*> abnormal_of_type(int type) const;
};

/// Renders one sample; all randomness derives from `seed`.
AnomalySample render_sample(const ProductSpec& spec, int anomaly_type, std::uint64_t seed);

/// Deterministic corpus; every image gets its own seed derived from (seed, kind, index).
Corpus make_corpus(const ProductSpec& spec, const CorpusCounts& counts, std::uint64_t seed);

/// Layout: dir/{images,masks}/NNNNN.png plus dir/manifest.jsonl (header line, then one record per sample).
void write_corpus(const Corpus& corpus, const std::filesystem::path& dir, bool force);
Corpus read_corpus(const std::filesystem::path& dir);

struct ConsistencyReport {
  double normal_correlation = 0;  ///< mean pairwise correlation of normal images
  double defect_correlation = 0;  ///< mean pairwise correlation of pixels inside defect regions
  bool consistent() const { return normal_correlation > defect_correlation; }
};

ConsistencyReport consistency_check(const Corpus& corpus);

}  // namespace seas
