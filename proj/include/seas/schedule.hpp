#pragma once

#include <vector>

#include "seas/tensor.hpp"

namespace seas {

/// Sentinel target step for sample_step meaning the clean endpoint (alpha = 1, beta = 0).
inline constexpr int kCleanStep = -1;

/// Variance-preserving schedule: noisy = alpha_t * z + beta_t * eps with alpha_t^2 + beta_t^2 = 1.
class NoiseSchedule {
 public:
  /// Cosine signal decay with per-step noise clipped at 0.999, so alpha never reaches 0.
  static NoiseSchedule cosine(int num_train_steps);

  int num_train_steps() const { return static_cast<int>(alpha_.size()); }
  double alpha(int t) const;
  double beta(int t) const;
  const std::vector<double>& alphas() const { return alpha_; }
  const std::vector<double>& betas() const { return beta_; }

  /// Schedule position for a noise strength rho in (0, 1].
  int step_for_strength(double rho) const;

 private:
  NoiseSchedule(std::vector<double> alpha, std::vector<double> beta);
  std::vector<double> alpha_;
  std::vector<double> beta_;
};

template <typename S>
Tensor<S> forward_diffuse(const Tensor<S>& latent, int t, const Tensor<S>& noise, const NoiseSchedule& schedule);

/// Deterministic (eta = 0) update from t_from to t_to given a noise prediction. With clip > 0 the
/// clean estimate is clamped to [-clip, clip] and the noise re-derived from it; near the end of the
/// schedule alpha is tiny and the unclamped estimate amplifies prediction error without bound.
template <typename S>
Tensor<S> sample_step(const Tensor<S>& noisy, int t_from, int t_to, const Tensor<S>& predicted_noise,
                      const NoiseSchedule& schedule, double clip = 0);

/// Clean-latent estimate implied by a noise prediction at step t, clamped to [-clip, clip] when clip > 0.
template <typename S>
Tensor<S> predict_clean(const Tensor<S>& noisy, int t, const Tensor<S>& predicted_noise, const NoiseSchedule& schedule,
                        double clip = 0);

/// `steps` evenly spaced network evaluation steps from t_start down toward 0 (descending).
std::vector<int> sampling_steps(int t_start, int steps);

}  // namespace seas
