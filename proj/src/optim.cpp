#include "seas/optim.hpp"

#include <cmath>

namespace seas {

template <typename S>
AdamW<S>::AdamW(std::vector<ParamGroup<S>> groups, double beta1, double beta2, double eps)
    : groups_(std::move(groups)), beta1_(beta1), beta2_(beta2), eps_(eps) {
  for (const auto& g : groups_) {
    if (g.lr <= 0) throw ConfigError("learning rate must be positive");
    std::vector<Array> m, v;
    for (const auto& p : g.params) {
      if (!p.requires_grad()) throw ConfigError("optimizer given a frozen tensor");
      m.push_back(Array::Zero(p.value().size()));
      v.push_back(Array::Zero(p.value().size()));
    }
    m_.push_back(std::move(m));
    v_.push_back(std::move(v));
  }
}

template <typename S>
void AdamW<S>::step() {
  ++step_;
  const double c1 = 1 - std::pow(beta1_, static_cast<double>(step_));
  const double c2 = 1 - std::pow(beta2_, static_cast<double>(step_));
  for (std::size_t g = 0; g < groups_.size(); ++g) {
    const auto& group = groups_[g];
    const S lr = static_cast<S>(group.lr), decay = static_cast<S>(1 - group.lr * group.weight_decay);
    for (std::size_t i = 0; i < group.params.size(); ++i) {
      ad::Var<S> p = group.params[i];
      if (!p.has_grad()) continue;
      const Array& grad = p.node().grad;
      Array& m = m_[g][i];
      Array& v = v_[g][i];
      m = static_cast<S>(beta1_) * m + static_cast<S>(1 - beta1_) * grad;
      v = static_cast<S>(beta2_) * v + static_cast<S>(1 - beta2_) * grad.square();
      auto& w = p.mutable_value().array();
      w = decay * w - lr * (m / static_cast<S>(c1)) / ((v / static_cast<S>(c2)).sqrt() + static_cast<S>(eps_));
    }
  }
}

template <typename S>
void AdamW<S>::zero_grad() {
  for (auto& g : groups_)
    for (auto& p : g.params) p.zero_grad();
}

template class AdamW<float>;
template class AdamW<double>;

}  // namespace seas
