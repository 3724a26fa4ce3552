#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "flower/tensor.hpp"

namespace flower {

/// Learning-rate sequence. Two rules cover everything the trainers need:
///   step      lr stays at initial_lr and is multiplied by gamma at each
///             listed epoch index (eventually constant)
///   harmonic  lr = initial_lr / (k + 1)^power
struct LrSchedule {
  enum class Rule { step, harmonic };

  Rule rule = Rule::step;
  double initial_lr = 0.1;
  double gamma = 0.1;
  std::vector<std::size_t> gamma_epochs;  // step rule only, ascending
  double power = 1.0;                     // harmonic rule only

  void validate() const {
    FLOWER_CHECK(initial_lr > 0.0, "LrSchedule: initial_lr must be positive");
    if (rule == Rule::step)
      FLOWER_CHECK(gamma > 0.0 && gamma <= 1.0,
                   "LrSchedule: gamma must be in (0,1] so rates never increase");
    if (rule == Rule::harmonic)
      FLOWER_CHECK(power > 0.0, "LrSchedule: power must be positive");
  }

  double rate(std::size_t k) const {
    if (rule == Rule::harmonic)
      return initial_lr / std::pow(static_cast<double>(k + 1), power);
    double lr = initial_lr;
    for (std::size_t e : gamma_epochs)
      if (k >= e) lr *= gamma;
    return lr;
  }

  static LrSchedule step_at(double initial, double gamma, std::size_t epoch) {
    LrSchedule s;
    s.rule = Rule::step;
    s.initial_lr = initial;
    s.gamma = gamma;
    s.gamma_epochs = {epoch};
    s.validate();
    return s;
  }

  static LrSchedule constant(double lr) {
    LrSchedule s;
    s.rule = Rule::step;
    s.initial_lr = lr;
    s.gamma = 1.0;
    s.validate();
    return s;
  }

  static LrSchedule harmonic(double initial, double power = 1.0) {
    LrSchedule s;
    s.rule = Rule::harmonic;
    s.initial_lr = initial;
    s.power = power;
    s.validate();
    return s;
  }
};

/// Numeric report on the divergence/convergence tendencies of the partial
/// sums sum(lr_k) and sum(lr_k^2) over a finite horizon.
struct ScheduleReport {
  std::size_t horizon = 0;
  double s1 = 0.0;              // sum of rates
  double s2 = 0.0;              // sum of squared rates
  double s1_tail_fraction = 0;  // share of s1 contributed by the second half
  double s2_tail_fraction = 0;
  bool s1_diverges = false;   // required by the step-size assumption
  bool s2_converges = false;  // required by the step-size assumption
  bool assumption_ok = false;
  std::string s1_growth;  // "linear", "logarithmic" or "bounded"
};

/// Classifies a schedule against the usual Robbins-Monro conditions
/// (sum lr = inf, sum lr^2 < inf) by looking at how much of each partial
/// sum the second half of the horizon contributes. A genuinely divergent
/// series keeps contributing (harmonic: ~ln2/lnK, constant: 1/2); a
/// convergent one tails off to nearly nothing.
inline ScheduleReport check_lr_schedule(const LrSchedule& schedule,
                                        std::size_t horizon) {
  FLOWER_CHECK(horizon >= 10, "check_lr_schedule: horizon must be >= 10");
  schedule.validate();

  ScheduleReport r;
  r.horizon = horizon;
  std::size_t half = horizon / 2;
  double s1_half = 0.0, s2_half = 0.0;
  for (std::size_t k = 0; k < horizon; ++k) {
    double lr = schedule.rate(k);
    FLOWER_CHECK(lr > 0.0, "check_lr_schedule: non-positive rate");
    r.s1 += lr;
    r.s2 += lr * lr;
    if (k < half) {
      s1_half = r.s1;
      s2_half = r.s2;
    }
  }
  r.s1_tail_fraction = (r.s1 - s1_half) / r.s1;
  r.s2_tail_fraction = (r.s2 - s2_half) / r.s2;

  // Tail thresholds sit an order of magnitude below the slowest divergent
  // series we care about (harmonic at K=1e6 contributes ~0.05).
  r.s1_diverges = r.s1_tail_fraction >= 0.01;
  r.s2_converges = r.s2_tail_fraction < 0.05;
  r.assumption_ok = r.s1_diverges && r.s2_converges;

  if (r.s1_tail_fraction > 0.4)
    r.s1_growth = "linear";
  else if (r.s1_diverges)
    r.s1_growth = "logarithmic";
  else
    r.s1_growth = "bounded";
  return r;
}

}  // namespace flower
