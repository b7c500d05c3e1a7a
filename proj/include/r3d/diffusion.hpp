#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "r3d/errors.hpp"
#include "r3d/geom.hpp"
#include "r3d/logging.hpp"

namespace r3d {

using DisplacementField = std::vector<Vec3>;

// Variance schedule tables, 1-indexed by step; index 0 holds the t = 0
// conventions (alpha_bar_0 = 1) so alpha_bars[t] is usable for t in [0, T].
struct NoiseSchedule {
  int t_max = 0;
  std::vector<double> betas;       // betas[0] = 0, unused
  std::vector<double> alphas;      // alphas[t] = 1 - betas[t]
  std::vector<double> alpha_bars;  // running product of alphas
  std::vector<double> sigmas;      // sigmas[t]^2 = betas[t]

  double beta(int t) const { return betas[static_cast<std::size_t>(t)]; }
  double alpha(int t) const { return alphas[static_cast<std::size_t>(t)]; }
  double alpha_bar(int t) const { return alpha_bars[static_cast<std::size_t>(t)]; }
  double sigma(int t) const { return sigmas[static_cast<std::size_t>(t)]; }

  void check_step(int t) const {
    if (t < 1 || t > t_max) throw Error("schedule: step out of range");
  }
};

inline constexpr int kDefaultTMax = 200;
inline constexpr double kDefaultBetaStart = 1e-4;
// With T = 200 a linear ramp must reach ~0.05 for alpha_bar_T to drop below
// the 0.01 near-total-masking bound; 0.02 leaves alpha_bar_T ~ 0.13.
inline constexpr double kDefaultBetaEnd = 0.05;

inline NoiseSchedule linear_schedule(int t_max = kDefaultTMax,
                                     double beta_start = kDefaultBetaStart,
                                     double beta_end = kDefaultBetaEnd,
                                     bool strict = false) {
  if (t_max < 1) throw InvalidSchedule("linear_schedule: t_max must be >= 1");
  if (!(beta_start > 0.0) || !(beta_start <= beta_end) || !(beta_end < 1.0))
    throw InvalidSchedule("linear_schedule: need 0 < beta_start <= beta_end < 1");

  NoiseSchedule s;
  s.t_max = t_max;
  const auto size = static_cast<std::size_t>(t_max) + 1;
  s.betas.assign(size, 0.0);
  s.alphas.assign(size, 1.0);
  s.alpha_bars.assign(size, 1.0);
  s.sigmas.assign(size, 0.0);
  for (int t = 1; t <= t_max; ++t) {
    const double frac = t_max == 1 ? 0.0
                                   : static_cast<double>(t - 1) / static_cast<double>(t_max - 1);
    const auto ti = static_cast<std::size_t>(t);
    s.betas[ti] = beta_start + (beta_end - beta_start) * frac;
    s.alphas[ti] = 1.0 - s.betas[ti];
    s.alpha_bars[ti] = s.alpha_bars[ti - 1] * s.alphas[ti];
    s.sigmas[ti] = std::sqrt(s.betas[ti]);
  }
  if (s.alpha_bars[static_cast<std::size_t>(t_max)] >= 0.01) {
    if (strict)
      throw InvalidSchedule("linear_schedule: alpha_bar at t_max is >= 0.01 (masking too weak)");
    log_warn("schedule leaves alpha_bar(T) = %.6f >= 0.01; masking is incomplete",
             s.alpha_bars[static_cast<std::size_t>(t_max)]);
  }
  return s;
}

// x_t = sqrt(alpha_bar_t) * x0 + sqrt(1 - alpha_bar_t) * eps
inline std::vector<Vec3> forward_sample(const std::vector<Vec3>& x0, int t,
                                        const std::vector<Vec3>& eps,
                                        const NoiseSchedule& sched) {
  sched.check_step(t);
  if (eps.size() != x0.size())
    throw ShapeMismatch("forward_sample: eps shape differs from x0");
  const double ab = sched.alpha_bar(t);
  const double a = std::sqrt(ab);
  const double b = std::sqrt(1.0 - ab);
  std::vector<Vec3> out(x0.size());
  for (std::size_t i = 0; i < x0.size(); ++i) out[i] = a * x0[i] + b * eps[i];
  return out;
}

// delta_{t-1} = (delta_t - ((1 - alpha_t)/sqrt(1 - alpha_bar_t)) * eps_pred)
//               / sqrt(alpha_t) + sigma_t * z,  with z pinned to 0 at t = 1
inline DisplacementField posterior_step(const DisplacementField& delta_t,
                                        const std::vector<Vec3>& eps_pred, int t,
                                        const std::vector<Vec3>& z,
                                        const NoiseSchedule& sched) {
  sched.check_step(t);
  if (eps_pred.size() != delta_t.size())
    throw ShapeMismatch("posterior_step: eps_pred shape differs from delta");
  if (z.size() != delta_t.size())
    throw ShapeMismatch("posterior_step: z shape differs from delta");
  if (t == 1)
    for (const auto& v : z)
      if (v.x != 0.0 || v.y != 0.0 || v.z != 0.0)
        throw NoiseAtFinalStep("posterior_step: z must be zero at t = 1");

  const double alpha = sched.alpha(t);
  const double coef = (1.0 - alpha) / std::sqrt(1.0 - sched.alpha_bar(t));
  const double inv_sqrt_alpha = 1.0 / std::sqrt(alpha);
  const double sigma = sched.sigma(t);
  DisplacementField out(delta_t.size());
  for (std::size_t i = 0; i < delta_t.size(); ++i)
    out[i] = inv_sqrt_alpha * (delta_t[i] - coef * eps_pred[i]) + sigma * z[i];
  return out;
}

// x0_hat = (x_t - sqrt(1 - alpha_bar_t) * eps_pred) / sqrt(alpha_bar_t)
inline std::vector<Vec3> estimate_x0(const std::vector<Vec3>& x_t,
                                     const std::vector<Vec3>& eps_pred, int t,
                                     const NoiseSchedule& sched) {
  sched.check_step(t);
  if (eps_pred.size() != x_t.size())
    throw ShapeMismatch("estimate_x0: eps_pred shape differs from x_t");
  const double ab = sched.alpha_bar(t);
  const double inv = 1.0 / std::sqrt(ab);
  const double b = std::sqrt(1.0 - ab);
  std::vector<Vec3> out(x_t.size());
  for (std::size_t i = 0; i < x_t.size(); ++i) out[i] = (x_t[i] - b * eps_pred[i]) * inv;
  return out;
}

}  // namespace r3d
