#pragma once

#include "megan/rng.hpp"
#include "megan/tensor.hpp"

#include <cmath>
#include <functional>
#include <string>
#include <vector>

namespace testsupport {

struct GradCheckResult {
  int checked = 0;
  double max_rel_err = 0.0;
  std::string worst;  // "param[i]" label of the worst entry
};

/// Central-difference gradient verification on randomly chosen parameter
/// entries. fwd_bwd() must zero grads, run forward+backward and return the
/// loss; fwd() must return the loss without touching grads.
inline GradCheckResult gradcheck(const megan::ParamRefs<double>& params,
                                 const std::function<double()>& fwd_bwd, const std::function<double()>& fwd,
                                 int probes, megan::Rng& rng, double h = 1e-5) {
  fwd_bwd();

  std::vector<megan::Param<double>*> trainable;
  for (auto* p : params)
    if (p->trainable && p->data.size() > 0) trainable.push_back(p);

  GradCheckResult result;
  int attempts = 0;
  while (result.checked < probes && attempts < probes * 50) {
    ++attempts;
    auto* p = trainable[rng.below(trainable.size())];
    const auto idx = static_cast<Eigen::Index>(rng.below(static_cast<std::uint64_t>(p->data.size())));
    const double analytic = p->grad.data()[idx];
    if (std::abs(analytic) < 1e-8) continue;  // prefer informative entries

    const double saved = p->data.data()[idx];
    // Start at the nominal step; fall back to smaller steps when the probe
    // lands near an activation kink (central differences are biased there
    // even though the analytic gradient is exact).
    double rel = std::numeric_limits<double>::infinity();
    for (double step : {h, h / 10.0, h / 30.0}) {
      p->data.data()[idx] = saved + step;
      const double up = fwd();
      p->data.data()[idx] = saved - step;
      const double down = fwd();
      p->data.data()[idx] = saved;
      const double fd = (up - down) / (2.0 * step);
      rel = std::min(rel, std::abs(fd - analytic) / std::max({std::abs(fd), std::abs(analytic), 1e-8}));
      if (rel < 1e-4) break;
    }
    if (rel > result.max_rel_err) {
      result.max_rel_err = rel;
      result.worst = p->name + "[" + std::to_string(idx) + "]";
    }
    ++result.checked;
  }
  return result;
}

}  // namespace testsupport
