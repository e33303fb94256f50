#pragma once

#include <functional>
#include <random>
#include <vector>

#include <gtest/gtest.h>

#include "seas/ops.hpp"

namespace seas::testing {

using VarD = ad::Var<double>;
using TensorD = Tensor<double>;

inline TensorD random_tensor(Shape shape, std::mt19937_64& rng, double stddev = 1.0) {
  return TensorD::randn(std::move(shape), rng, stddev);
}

/// Compares reverse-mode gradients of sum(f(inputs) * R) for a fixed random R
/// against central differences on every input element.
inline void expect_gradients_match(const std::function<VarD(const std::vector<VarD>&)>& f,
                                   std::vector<TensorD> inputs, double eps = 1e-6, double tol = 1e-5,
                                   std::uint64_t seed = 7) {
  std::mt19937_64 rng(seed);
  std::vector<VarD> vars;
  for (auto& t : inputs) vars.push_back(VarD::parameter(t));
  VarD out = f(vars);
  const TensorD projection = random_tensor(out.shape(), rng);
  auto objective = [&](const std::vector<VarD>& v) {
    return ad::sum(ad::mul(f(v), VarD::constant(projection)));
  };
  objective(vars).backward();

  for (std::size_t k = 0; k < inputs.size(); ++k) {
    const auto analytic = vars[k].grad();
    for (Eigen::Index i = 0; i < inputs[k].size(); ++i) {
      auto probe = [&](double delta) {
        std::vector<VarD> shifted;
        for (std::size_t j = 0; j < inputs.size(); ++j) {
          TensorD t = inputs[j];
          if (j == k) t[i] += delta;
          shifted.push_back(VarD::constant(t));
        }
        return objective(shifted).item();
      };
      const double numeric = (probe(eps) - probe(-eps)) / (2 * eps);
      const double scale = std::max(1.0, std::abs(numeric));
      ASSERT_NEAR(analytic[i], numeric, tol * scale) << "input " << k << " element " << i;
    }
  }
}

}  // namespace seas::testing
