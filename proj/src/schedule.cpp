#include "seas/schedule.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace seas {

NoiseSchedule::NoiseSchedule(std::vector<double> alpha, std::vector<double> beta)
    : alpha_(std::move(alpha)), beta_(std::move(beta)) {}

NoiseSchedule NoiseSchedule::cosine(int num_train_steps) {
  if (num_train_steps <= 0) throw RangeError("noise schedule needs a positive step count");
  constexpr double kOffset = 0.008;
  auto f = [&](double u) {
    const double c = std::cos((u + kOffset) / (1.0 + kOffset) * std::numbers::pi / 2.0);
    return c * c;
  };
  std::vector<double> alpha(num_train_steps), beta(num_train_steps);
  double alpha_bar = 1.0;
  for (int t = 0; t < num_train_steps; ++t) {
    const double step_beta =
        std::min(1.0 - f(static_cast<double>(t + 1) / num_train_steps) / f(static_cast<double>(t) / num_train_steps), 0.999);
    alpha_bar *= 1.0 - step_beta;
    alpha[t] = std::sqrt(alpha_bar);
    beta[t] = std::sqrt(1.0 - alpha_bar);
  }
  return NoiseSchedule(std::move(alpha), std::move(beta));
}

double NoiseSchedule::alpha(int t) const {
  if (t == kCleanStep) return 1.0;
  if (t < 0 || t >= num_train_steps())
    throw RangeError("timestep " + std::to_string(t) + " outside [0, " + std::to_string(num_train_steps()) + ")");
  return alpha_[t];
}

double NoiseSchedule::beta(int t) const {
  if (t == kCleanStep) return 0.0;
  if (t < 0 || t >= num_train_steps())
    throw RangeError("timestep " + std::to_string(t) + " outside [0, " + std::to_string(num_train_steps()) + ")");
  return beta_[t];
}

int NoiseSchedule::step_for_strength(double rho) const {
  if (!(rho > 0.0 && rho <= 1.0)) throw RangeError("noise strength must lie in (0, 1], got " + std::to_string(rho));
  return std::clamp(static_cast<int>(std::lround(rho * num_train_steps())) - 1, 0, num_train_steps() - 1);
}

template <typename S>
Tensor<S> forward_diffuse(const Tensor<S>& latent, int t, const Tensor<S>& noise, const NoiseSchedule& schedule) {
  if (t < 0 || t >= schedule.num_train_steps())
    throw RangeError("forward_diffuse: timestep " + std::to_string(t) + " out of range");
  if (latent.shape() != noise.shape()) throw DimensionError("forward_diffuse: noise shape differs from latent");
  const S a = static_cast<S>(schedule.alpha(t)), b = static_cast<S>(schedule.beta(t));
  return Tensor<S>(latent.shape(), a * latent.array() + b * noise.array());
}

template <typename S>
Tensor<S> predict_clean(const Tensor<S>& noisy, int t, const Tensor<S>& predicted_noise, const NoiseSchedule& schedule,
                        double clip) {
  if (noisy.shape() != predicted_noise.shape()) throw DimensionError("predict_clean: shape mismatch");
  const S a = static_cast<S>(schedule.alpha(t)), b = static_cast<S>(schedule.beta(t));
  Tensor<S> clean(noisy.shape(), (noisy.array() - b * predicted_noise.array()) / a);
  if (clip > 0) clean.array() = clean.array().max(static_cast<S>(-clip)).min(static_cast<S>(clip));
  return clean;
}

template <typename S>
Tensor<S> sample_step(const Tensor<S>& noisy, int t_from, int t_to, const Tensor<S>& predicted_noise,
                      const NoiseSchedule& schedule, double clip) {
  if (t_to >= t_from)
    throw OrderingError("sample_step: target step " + std::to_string(t_to) + " must precede " + std::to_string(t_from));
  Tensor<S> clean = predict_clean(noisy, t_from, predicted_noise, schedule, clip);
  if (t_to == kCleanStep) return clean;
  Tensor<S> noise = predicted_noise;
  if (clip > 0) {
    const S a = static_cast<S>(schedule.alpha(t_from)), b = static_cast<S>(schedule.beta(t_from));
    noise.array() = (noisy.array() - a * clean.array()) / b;
  }
  const S a = static_cast<S>(schedule.alpha(t_to)), b = static_cast<S>(schedule.beta(t_to));
  return Tensor<S>(noisy.shape(), a * clean.array() + b * noise.array());
}

std::vector<int> sampling_steps(int t_start, int steps) {
  if (steps <= 0) throw RangeError("sampling needs at least one step");
  std::vector<int> out;
  for (int k = 0; k < steps; ++k) {
    const int t = static_cast<int>(std::lround(static_cast<double>(t_start) * (steps - k) / steps));
    if (out.empty() || t < out.back()) out.push_back(t);
  }
  return out;
}

template Tensor<float> forward_diffuse(const Tensor<float>&, int, const Tensor<float>&, const NoiseSchedule&);
template Tensor<double> forward_diffuse(const Tensor<double>&, int, const Tensor<double>&, const NoiseSchedule&);
template Tensor<float> sample_step(const Tensor<float>&, int, int, const Tensor<float>&, const NoiseSchedule&, double);
template Tensor<double> sample_step(const Tensor<double>&, int, int, const Tensor<double>&, const NoiseSchedule&, double);
template Tensor<float> predict_clean(const Tensor<float>&, int, const Tensor<float>&, const NoiseSchedule&, double);
template Tensor<double> predict_clean(const Tensor<double>&, int, const Tensor<double>&, const NoiseSchedule&, double);

}  // namespace seas
