#pragma once

#include "imputmae/params.hpp"

namespace imputmae {

/// lr_max * 0.5 * (1 + cos(pi * step / total)), no warmup.
inline Scalar cosine_schedule(std::size_t step, std::size_t total_steps, Scalar lr_max) {
  if (total_steps == 0) throw Error("cosine_schedule: total_steps must be positive");
  if (step > total_steps) throw Error("cosine_schedule: step beyond total_steps");
  return lr_max * 0.5 * (1.0 + std::cos(M_PI * static_cast<Scalar>(step) / static_cast<Scalar>(total_steps)));
}

/// AdamW with decoupled weight decay applied before the adaptive step.
class AdamW {
 public:
  struct Moments {
    Mat m;
    Mat v;
  };

  explicit AdamW(Scalar weight_decay = 1e-2, Scalar beta1 = 0.9, Scalar beta2 = 0.999, Scalar eps = 1e-8)
      : wd_(weight_decay), b1_(beta1), b2_(beta2), eps_(eps) {}

  /// Updates every non-frozen parameter that has a gradient.
  void step(ParamStore& ps, const std::map<std::string, Mat>& grads, Scalar lr) {
    for (const auto& [name, g] : grads)
      if (!g.allFinite()) throw Error("adamw: non-finite gradient for " + name);
    ++t_;
    const Scalar c1 = 1.0 - std::pow(b1_, static_cast<Scalar>(t_));
    const Scalar c2 = 1.0 - std::pow(b2_, static_cast<Scalar>(t_));
    for (const auto& [name, g] : grads) {
      if (ps.frozen(name)) continue;
      Mat& p = ps.get_mut(name);
      if (g.rows() != p.rows() || g.cols() != p.cols()) throw Error("adamw: gradient shape mismatch for " + name);
      auto [it, fresh] = state_.try_emplace(name);
      if (fresh) {
        it->second.m = Mat::Zero(p.rows(), p.cols());
        it->second.v = Mat::Zero(p.rows(), p.cols());
      }
      Mat& m = it->second.m;
      Mat& v = it->second.v;
      p *= 1.0 - lr * wd_;
      m = b1_ * m + (1.0 - b1_) * g;
      v = b2_ * v + (1.0 - b2_) * g.cwiseProduct(g);
      p.array() -= lr * (m.array() / c1) / ((v.array() / c2).sqrt() + eps_);
    }
  }

  std::size_t steps() const { return t_; }
  const std::map<std::string, Moments>& state() const { return state_; }

 private:
  Scalar wd_, b1_, b2_, eps_;
  std::size_t t_ = 0;
  std::map<std::string, Moments> state_;
};

}  // namespace imputmae
