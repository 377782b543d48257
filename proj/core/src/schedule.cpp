#include "stablekd/schedule.hpp"

#include <cmath>
#include <string>

#include "stablekd/errors.hpp"

namespace skd {

std::size_t StageSchedule::total_epochs() const noexcept {
  std::size_t n = 0;
  for (std::size_t e : epochs) n += e;
  return n;
}

void StageSchedule::validate() const {
  if (epochs.empty()) throw ConfigError("stage schedule has no stages");
  for (std::size_t c = 0; c < epochs.size(); ++c) {
    if (epochs[c] == 0) throw ConfigError("stage " + std::to_string(c) + " has zero epochs");
  }
}

StageSchedule StageSchedule::split(std::size_t total_epochs, std::size_t recompositions) {
  const std::size_t stages = recompositions + 1;
  const std::size_t share = total_epochs / stages;
  StageSchedule s;
  s.epochs.assign(recompositions, share);
  s.epochs.push_back(total_epochs - share * recompositions);
  s.validate();
  return s;
}

double stage_peak_lr(std::size_t stage, double max_lr) {
  return std::ldexp(max_lr, -static_cast<int>(stage));
}

double lr_at(std::size_t global_step, const StageSchedule& schedule, std::size_t steps_per_epoch,
             double max_lr) {
  schedule.validate();
  if (steps_per_epoch == 0) throw ContractError("lr_at: steps_per_epoch must be positive");
  std::size_t begin = 0;
  for (std::size_t c = 0; c < schedule.stages(); ++c) {
    const std::size_t steps = schedule.epochs[c] * steps_per_epoch;
    if (global_step < begin + steps) {
      const double base = max_lr / kBaseLrDivisor;
      const double peak = stage_peak_lr(c, max_lr);
      const double half = static_cast<double>(steps) / 2.0;
      const double t = static_cast<double>(global_step - begin);
      if (t < half) return base + (peak - base) * (t / half);
      return peak - (peak - base) * ((t - half) / half);
    }
    begin += steps;
  }
  throw ContractError("lr_at: step " + std::to_string(global_step) + " beyond training horizon of " +
                      std::to_string(begin) + " steps");
}

}  // namespace skd
