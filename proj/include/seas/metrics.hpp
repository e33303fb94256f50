#pragma once

#include <functional>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "seas/tensor.hpp"

namespace seas::metrics {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// exp(mean_i KL(p(y|x_i) || p(y))) over rows of an N x K probability matrix.
double inception_score(const Matrix& probs);

struct KidOptions {
  int degree = 3;
  double coef0 = 1.0;
  /// For equal-size sets, also drop the paired cross terms k(x_i, y_i) (U-statistic over matched pairs).
  bool matched_diagonal = false;
};

/// Unbiased squared MMD with kernel (x.y / d + coef0)^degree; rows are samples.
double kid(const Matrix& x, const Matrix& y, const KidOptions& options = {});

/// Pairwise-ranking AUROC; ties count one half.
double auroc(const std::vector<double>& scores, const std::vector<int>& labels);
/// Step-wise average precision: sum over distinct thresholds of (R_k - R_{k-1}) P_k.
double average_precision(const std::vector<double>& scores, const std::vector<int>& labels);
/// Maximum F1 over thresholds placed at every distinct score (predict positive when score >= threshold).
double f1_max(const std::vector<double>& scores, const std::vector<int>& labels);
/// |A & B| / |A | B| over binary masks; 1 when both are empty.
double iou(const Tensor<float>& a, const Tensor<float>& b);

using Distance = std::function<double(const Tensor<float>&, const Tensor<float>&)>;

struct ClusterScore {
  double value = 0;
  int scored_clusters = 0;
  std::vector<std::string> warnings;
};

/// Mean over clusters (with >= 2 members) of the mean pairwise distance inside the cluster.
ClusterScore ic_lpips(const std::vector<std::vector<Tensor<float>>>& clusters, const Distance& distance);
/// Same, with each pair compared on the bounding box of the union of their masks.
ClusterScore ic_lpips_masked(const std::vector<std::vector<Tensor<float>>>& clusters,
                             const std::vector<std::vector<Tensor<float>>>& masks, const Distance& distance);

/// Assigns each image to the anchor at the smallest distance; returns one index list per anchor.
std::vector<std::vector<int>> cluster_by_nearest(const std::vector<Tensor<float>>& images,
                                                 const std::vector<Tensor<float>>& anchors, const Distance& distance);

/// Fixed random convolutional stack standing in for the perceptual and classifier networks.
class ToyFeatureNet {
 public:
  ToyFeatureNet();

  /// Per-layer feature maps of a (3, H, W) image.
  std::vector<Tensor<float>> layers(const Tensor<float>& image) const;
  /// Spatially pooled features of every layer, concatenated.
  Eigen::VectorXd embedding(const Tensor<float>& image) const;
  /// Softmax over a fixed projection of the embedding.
  Eigen::VectorXd class_probabilities(const Tensor<float>& image) const;
  /// Unit-normalized channel features, squared difference, spatial mean, averaged over layers.
  double perceptual_distance(const Tensor<float>& a, const Tensor<float>& b) const;

  const std::string& fingerprint() const { return fingerprint_; }
  static constexpr int kClasses = 10;

 private:
  std::vector<Tensor<float>> weights_;
  std::vector<Tensor<float>> biases_;
  Eigen::MatrixXd classifier_;
  std::string fingerprint_;
};

}  // namespace seas::metrics
