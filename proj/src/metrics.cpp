#include "seas/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "seas/image_io.hpp"
#include "seas/ops.hpp"

namespace seas::metrics {

double inception_score(const Matrix& probs) {
  if (probs.rows() < 1 || probs.cols() < 1) throw ValidationError("inception score needs a nonempty probability matrix");
  for (Eigen::Index i = 0; i < probs.rows(); ++i) {
    if ((probs.row(i).array() < 0).any() || std::abs(probs.row(i).sum() - 1.0) > 1e-6)
      throw ValidationError("row " + std::to_string(i) + " is not a probability distribution");
  }
  const Vector marginal = probs.colwise().mean();
  double total = 0;
  for (Eigen::Index i = 0; i < probs.rows(); ++i)
    for (Eigen::Index k = 0; k < probs.cols(); ++k) {
      const double p = probs(i, k);
      if (p > 0) total += p * (std::log(p) - std::log(marginal[k]));
    }
  return std::exp(total / static_cast<double>(probs.rows()));
}

double kid(const Matrix& x, const Matrix& y, const KidOptions& options) {
  const Eigen::Index m = x.rows(), n = y.rows();
  if (m < 2 || n < 2) throw ValidationError("KID needs at least two samples per set");
  if (x.cols() != y.cols()) throw DimensionError("KID feature widths differ");
  const double d = static_cast<double>(x.cols());
  auto kernel = [&](const Matrix& a, const Matrix& b) -> Matrix {
    return ((a * b.transpose()).array() / d + options.coef0).pow(options.degree).matrix();
  };
  const Matrix kxx = kernel(x, x), kyy = kernel(y, y), kxy = kernel(x, y);
  const double sxx = (kxx.sum() - kxx.trace()) / static_cast<double>(m * (m - 1));
  const double syy = (kyy.sum() - kyy.trace()) / static_cast<double>(n * (n - 1));
  double sxy;
  if (options.matched_diagonal) {
    if (m != n) throw ValidationError("matched-diagonal KID needs equally sized sets");
    sxy = (kxy.sum() - kxy.trace()) / static_cast<double>(m * (m - 1));
  } else {
    sxy = kxy.sum() / static_cast<double>(m * n);
  }
  return sxx + syy - 2 * sxy;
}

namespace {

void check_labels(const std::vector<double>& scores, const std::vector<int>& labels, bool need_both) {
  if (scores.size() != labels.size()) throw DimensionError("scores and labels differ in length");
  if (scores.empty()) throw UndefinedMetricError("no samples");
  long pos = 0;
  for (int l : labels) {
    if (l != 0 && l != 1) throw ValidationError("labels must be 0 or 1");
    pos += l;
  }
  const long neg = static_cast<long>(labels.size()) - pos;
  if (pos == 0) throw UndefinedMetricError("no positive labels");
  if (need_both && neg == 0) throw UndefinedMetricError("no negative labels");
}

/// Distinct-score groups in descending order as (true positives, false positives) per group.
std::vector<std::pair<long, long>> descending_groups(const std::vector<double>& scores, const std::vector<int>& labels) {
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  std::vector<std::pair<long, long>> groups;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    long tp = 0, fp = 0;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) {
      (labels[order[j]] ? tp : fp) += 1;
      ++j;
    }
    groups.emplace_back(tp, fp);
    i = j;
  }
  return groups;
}

}  // namespace

double auroc(const std::vector<double>& scores, const std::vector<int>& labels) {
  check_labels(scores, labels, true);
  const auto groups = descending_groups(scores, labels);
  long pos = 0, neg = 0;
  for (const auto& [tp, fp] : groups) {
    pos += tp;
    neg += fp;
  }
  // Each positive beats every negative in lower groups and ties half of its own group.
  double wins = 0;
  long negatives_below = neg;
  for (const auto& [tp, fp] : groups) {
    negatives_below -= fp;
    wins += static_cast<double>(tp) * (static_cast<double>(negatives_below) + 0.5 * static_cast<double>(fp));
  }
  return wins / (static_cast<double>(pos) * static_cast<double>(neg));
}

double average_precision(const std::vector<double>& scores, const std::vector<int>& labels) {
  check_labels(scores, labels, true);
  const auto groups = descending_groups(scores, labels);
  long pos = 0;
  for (const auto& g : groups) pos += g.first;
  double ap = 0, prev_recall = 0;
  long tp = 0, fp = 0;
  for (const auto& [gtp, gfp] : groups) {
    tp += gtp;
    fp += gfp;
    const double recall = static_cast<double>(tp) / pos;
    const double precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
    ap += (recall - prev_recall) * precision;
    prev_recall = recall;
  }
  return ap;
}

double f1_max(const std::vector<double>& scores, const std::vector<int>& labels) {
  check_labels(scores, labels, false);
  const auto groups = descending_groups(scores, labels);
  long pos = 0;
  for (const auto& g : groups) pos += g.first;
  double best = 0;
  long tp = 0, fp = 0;
  for (const auto& [gtp, gfp] : groups) {
    tp += gtp;
    fp += gfp;
    const double f1 = 2.0 * static_cast<double>(tp) / static_cast<double>(tp + fp + pos);
    best = std::max(best, f1);
  }
  return best;
}

double iou(const Tensor<float>& a, const Tensor<float>& b) {
  if (a.shape() != b.shape()) throw DimensionError("IoU masks differ in shape");
  long inter = 0, uni = 0;
  for (Eigen::Index i = 0; i < a.size(); ++i) {
    const bool x = a[i] > 0.5f, y = b[i] > 0.5f;
    inter += x && y;
    uni += x || y;
  }
  return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

namespace {

template <typename PairDistance>
ClusterScore cluster_mean(const std::vector<std::vector<Tensor<float>>>& clusters, const PairDistance& pair_distance) {
  ClusterScore out;
  double sum = 0;
  for (std::size_t c = 0; c < clusters.size(); ++c) {
    const auto& members = clusters[c];
    if (members.size() < 2) {
      out.warnings.push_back("cluster " + std::to_string(c) + " has fewer than two images; skipped");
      continue;
    }
    double total = 0;
    long pairs = 0;
    for (std::size_t i = 0; i < members.size(); ++i)
      for (std::size_t j = i + 1; j < members.size(); ++j) {
        total += pair_distance(c, i, j);
        ++pairs;
      }
    sum += total / static_cast<double>(pairs);
    ++out.scored_clusters;
  }
  out.value = out.scored_clusters ? sum / out.scored_clusters : 0.0;
  return out;
}

/// Crops a (C, H, W) tensor to rows [y0, y1) and columns [x0, x1).
Tensor<float> crop(const Tensor<float>& image, int y0, int y1, int x0, int x1) {
  const int c = image.dim(0), h = image.dim(1), w = image.dim(2);
  Tensor<float> out({c, y1 - y0, x1 - x0});
  for (int k = 0; k < c; ++k)
    for (int y = y0; y < y1; ++y)
      for (int x = x0; x < x1; ++x) out[(k * (y1 - y0) + (y - y0)) * (x1 - x0) + (x - x0)] = image[(k * h + y) * w + x];
  return out;
}

}  // namespace

ClusterScore ic_lpips(const std::vector<std::vector<Tensor<float>>>& clusters, const Distance& distance) {
  return cluster_mean(clusters, [&](std::size_t c, std::size_t i, std::size_t j) {
    return distance(clusters[c][i], clusters[c][j]);
  });
}

ClusterScore ic_lpips_masked(const std::vector<std::vector<Tensor<float>>>& clusters,
                             const std::vector<std::vector<Tensor<float>>>& masks, const Distance& distance) {
  if (masks.size() != clusters.size()) throw DimensionError("one mask list per cluster is required");
  long empty_pairs = 0;
  ClusterScore out = cluster_mean(clusters, [&](std::size_t c, std::size_t i, std::size_t j) {
    const auto& a = masks[c].at(i);
    const auto& b = masks[c].at(j);
    if (a.shape() != b.shape() || a.rank() != 2) throw DimensionError("masks must be (H, W) and equally shaped");
    const int h = a.dim(0), w = a.dim(1);
    int y0 = h, y1 = -1, x0 = w, x1 = -1;
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        if (a[y * w + x] > 0.5f || b[y * w + x] > 0.5f) {
          y0 = std::min(y0, y);
          y1 = std::max(y1, y);
          x0 = std::min(x0, x);
          x1 = std::max(x1, x);
        }
    if (y1 < 0) {
      ++empty_pairs;
      return 0.0;
    }
    return distance(crop(clusters[c][i], y0, y1 + 1, x0, x1 + 1), crop(clusters[c][j], y0, y1 + 1, x0, x1 + 1));
  });
  if (empty_pairs > 0)
    out.warnings.push_back(std::to_string(empty_pairs) + " pair(s) without anomaly pixels scored as 0");
  return out;
}

std::vector<std::vector<int>> cluster_by_nearest(const std::vector<Tensor<float>>& images,
                                                 const std::vector<Tensor<float>>& anchors, const Distance& distance) {
  if (anchors.empty()) throw ValidationError("clustering needs at least one anchor");
  std::vector<std::vector<int>> out(anchors.size());
  for (std::size_t i = 0; i < images.size(); ++i) {
    std::size_t best = 0;
    double best_d = distance(images[i], anchors[0]);
    for (std::size_t a = 1; a < anchors.size(); ++a) {
      const double d = distance(images[i], anchors[a]);
      if (d < best_d) {
        best_d = d;
        best = a;
      }
    }
    out[best].push_back(static_cast<int>(i));
  }
  return out;
}

ToyFeatureNet::ToyFeatureNet() {
  constexpr std::uint64_t kSeed = 20240611;
  std::mt19937_64 rng(kSeed);
  const int widths[] = {3, 16, 32, 64};
  std::string bytes;
  for (int l = 0; l < 3; ++l) {
    const int in = widths[l], out = widths[l + 1];
    weights_.push_back(Tensor<float>::randn({out, in, 3, 3}, rng, std::sqrt(2.0f / (9.0f * in))));
    biases_.push_back(Tensor<float>::full({out}, 0.01f));
    bytes.append(reinterpret_cast<const char*>(weights_.back().data()), weights_.back().size() * sizeof(float));
  }
  const int dim = 16 + 32 + 64;
  classifier_ = Eigen::MatrixXd(kClasses, dim);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (Eigen::Index i = 0; i < classifier_.size(); ++i) classifier_.data()[i] = normal(rng) * 4.0 / std::sqrt(dim);
  bytes.append(reinterpret_cast<const char*>(classifier_.data()), classifier_.size() * sizeof(double));
  fingerprint_ = sha256_hex(bytes);
}

std::vector<Tensor<float>> ToyFeatureNet::layers(const Tensor<float>& image) const {
  if (image.rank() != 3 || image.dim(0) != 3) throw DimensionError("feature net expects (3, H, W) images");
  ad::NoGradGuard no_grad;
  ad::Var<float> h = ad::Var<float>::constant(image.reshaped({1, 3, image.dim(1), image.dim(2)}));
  h = ad::add_scalar(ad::scale(h, 2.0f), -1.0f);
  std::vector<Tensor<float>> out;
  for (std::size_t l = 0; l < weights_.size(); ++l) {
    const int stride = h.dim(2) >= 4 && h.dim(3) >= 4 ? 2 : 1;
    h = ad::conv2d(h, ad::Var<float>::constant(weights_[l]), ad::Var<float>::constant(biases_[l]), stride, 1);
    Tensor<float> v = h.value();
    v.array() = v.array().max(0.0f);
    h = ad::Var<float>::constant(v);
    out.push_back(v.reshaped({v.dim(1), v.dim(2), v.dim(3)}));
  }
  return out;
}

Eigen::VectorXd ToyFeatureNet::embedding(const Tensor<float>& image) const {
  const auto maps = layers(image);
  std::vector<double> values;
  for (const auto& m : maps) {
    const int c = m.dim(0), hw = m.dim(1) * m.dim(2);
    for (int k = 0; k < c; ++k) values.push_back(m.array().segment(static_cast<Eigen::Index>(k) * hw, hw).template cast<double>().mean());
  }
  return Eigen::Map<Eigen::VectorXd>(values.data(), static_cast<Eigen::Index>(values.size()));
}

Eigen::VectorXd ToyFeatureNet::class_probabilities(const Tensor<float>& image) const {
  Eigen::VectorXd logits = classifier_ * embedding(image);
  logits.array() -= logits.maxCoeff();
  Eigen::VectorXd p = logits.array().exp();
  return p / p.sum();
}

double ToyFeatureNet::perceptual_distance(const Tensor<float>& a, const Tensor<float>& b) const {
  if (a.shape() != b.shape()) throw DimensionError("perceptual distance needs equally shaped images");
  const auto fa = layers(a), fb = layers(b);
  double total = 0;
  for (std::size_t l = 0; l < fa.size(); ++l) {
    const int c = fa[l].dim(0), hw = fa[l].dim(1) * fa[l].dim(2);
    double layer = 0;
    for (int p = 0; p < hw; ++p) {
      double na = 1e-10, nb = 1e-10;
      for (int k = 0; k < c; ++k) {
        na += static_cast<double>(fa[l][k * hw + p]) * fa[l][k * hw + p];
        nb += static_cast<double>(fb[l][k * hw + p]) * fb[l][k * hw + p];
      }
      na = std::sqrt(na);
      nb = std::sqrt(nb);
      for (int k = 0; k < c; ++k) {
        const double d = fa[l][k * hw + p] / na - fb[l][k * hw + p] / nb;
        layer += d * d;
      }
    }
    total += layer / hw;
  }
  return total / static_cast<double>(fa.size());
}

}  // namespace seas::metrics
