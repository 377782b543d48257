#pragma once

#include <cstddef>
#include <vector>

namespace skd {

/// Per-stage epoch counts e_0..e_n for a run with n recompositions.
struct StageSchedule {
  std::vector<std::size_t> epochs;

  std::size_t recompositions() const noexcept { return epochs.empty() ? 0 : epochs.size() - 1; }
  std::size_t stages() const noexcept { return epochs.size(); }
  std::size_t total_epochs() const noexcept;
  /// Throws ConfigError unless there is at least one stage and every e_c ≥ 1.
  void validate() const;

  /// First n stages get floor(e / (n + 1)) epochs, the last the remainder.
  static StageSchedule split(std::size_t total_epochs, std::size_t recompositions);

  friend bool operator==(const StageSchedule&, const StageSchedule&) = default;
};

/// Base of every cycle as a fraction of max_lr.
inline constexpr double kBaseLrDivisor = 25.0;

/// Peak learning rate of stage `stage`: max_lr / 2^stage.
double stage_peak_lr(std::size_t stage, double max_lr);

/// Per-stage triangular schedule with halving peaks. Within stage c the rate
/// rises linearly from max_lr/25 to the stage peak over the first half of
/// the stage's steps and falls back over the second half.
double lr_at(std::size_t global_step, const StageSchedule& schedule, std::size_t steps_per_epoch,
             double max_lr);

}  // namespace skd
