#pragma once

#include <vector>

#include "seas/tensor.hpp"

namespace seas {

template <typename S>
struct ParamGroup {
  std::vector<ad::Var<S>> params;
  double lr = 1e-4;
  double weight_decay = 1e-2;
};

/// Adam with decoupled weight decay.
template <typename S>
class AdamW {
 public:
  AdamW(std::vector<ParamGroup<S>> groups, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

  /// Applies one update from the accumulated gradients; parameters without a gradient are skipped.
  void step();
  void zero_grad();
  long steps() const { return step_; }
  std::vector<ParamGroup<S>>& groups() { return groups_; }

 private:
  using Array = typename Tensor<S>::Array;
  std::vector<ParamGroup<S>> groups_;
  std::vector<std::vector<Array>> m_, v_;
  double beta1_, beta2_, eps_;
  long step_ = 0;
};

}  // namespace seas
