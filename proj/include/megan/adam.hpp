#pragma once

#include "megan/tensor.hpp"

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

namespace megan::nn {

/// Adam over a fixed parameter list. Moment buffers are exposed as named
/// tensors so training checkpoints can resume bit-exactly.
template <typename S>
class Adam {
 public:
  Adam(megan::ParamRefs<S> params, S lr, S beta1 = static_cast<S>(0.9), S beta2 = static_cast<S>(0.999),
       S eps = static_cast<S>(1e-8))
      : params_(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
    for (auto* p : params_) {
      if (!p->trainable) continue;
      slots_.push_back({p, megan::Mat<S>::Zero(p->data.rows(), p->data.cols()),
                        megan::Mat<S>::Zero(p->data.rows(), p->data.cols())});
    }
  }

  void step() {
    ++t_;
    const S bc1 = S(1) - static_cast<S>(std::pow(static_cast<double>(beta1_), t_));
    const S bc2 = S(1) - static_cast<S>(std::pow(static_cast<double>(beta2_), t_));
    for (auto& s : slots_) {
      s.m = beta1_ * s.m + (S(1) - beta1_) * s.p->grad;
      s.v = (beta2_ * s.v.array() + (S(1) - beta2_) * s.p->grad.array().square()).matrix();
      s.p->data -= (lr_ * (s.m.array() / bc1) / ((s.v.array() / bc2).sqrt() + eps_)).matrix();
    }
  }

  long step_count() const { return t_; }
  void set_step_count(long t) { t_ = t; }
  S learning_rate() const { return lr_; }

  /// Moment buffers in parameter order, for checkpointing.
  struct MomentRef {
    std::string name;
    megan::Mat<S>* m;
  };
  std::vector<MomentRef> moments() {
    std::vector<MomentRef> out;
    for (auto& s : slots_) {
      out.push_back({s.p->name + ".adam_m", &s.m});
      out.push_back({s.p->name + ".adam_v", &s.v});
    }
    return out;
  }

 private:
  struct Slot {
    megan::Param<S>* p;
    megan::Mat<S> m, v;
  };
  megan::ParamRefs<S> params_;
  std::vector<Slot> slots_;
  S lr_, beta1_, beta2_, eps_;
  long t_ = 0;
};

}  // namespace megan::nn
