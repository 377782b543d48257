#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <vector>

#include "stablekd/network.hpp"

namespace skd {

/// Copies of a named subset of a network's parameters.
struct ParamSnapshot {
  std::vector<std::string> ids;
  std::vector<Tensor<float>> values;
};

/// Snapshot of the parameters whose ids are listed in `scope`, in scope order.
ParamSnapshot snapshot(const Network<float>& net, const std::vector<std::string>& scope);

/// Ids of the parameters of the final affine head.
std::vector<std::string> head_scope(const Network<float>& net);

/// ℓ2 norm of the concatenated difference between two snapshots of the same
/// scope. Throws ContractError on scope or shape mismatch.
double param_distance(const ParamSnapshot& previous, const ParamSnapshot& current);

/// Per-step parameter distances and their running sum.
class DistanceTrace {
 public:
  DistanceTrace() = default;
  explicit DistanceTrace(std::vector<std::string> scope) : scope_(std::move(scope)) {}

  void push(double distance);

  const std::vector<double>& distances() const noexcept { return distances_; }
  const std::vector<double>& cumulative() const noexcept { return cumulative_; }
  const std::vector<std::string>& scope() const noexcept { return scope_; }
  std::size_t size() const noexcept { return distances_.size(); }
  /// Cumulative distance after the first `steps` steps (0 for none).
  double cumulative_at(std::size_t steps) const;

  /// CSV with header "step,distance,cumulative".
  std::string csv() const;

 private:
  std::vector<std::string> scope_;
  std::vector<double> distances_;
  std::vector<double> cumulative_;
};

/// Total downward movement of a curve: Σ max(0, a[t-1] - a[t]).
double fluctuation_score(const std::vector<double>& accuracy);

/// One epoch of a training run.
struct MetricRecord {
  std::size_t epoch = 0;
  std::size_t stage = 0;
  std::size_t k_current = 1;
  double lr_peak = 0.0;
  double loss_ce = 0.0;
  double loss_kl = 0.0;
  std::vector<double> loss_mse;
  double train_acc = 0.0;
  double val_acc = 0.0;
  double step_param_dist_mean = 0.0;
  double wall_seconds = 0.0;
};

/// JSON object on one line, keys in a fixed order.
std::string metrics_json_line(const MetricRecord& record);
std::string metrics_jsonl(const std::vector<MetricRecord>& records);

/// Long-format plot data: header "epoch,series,value".
class PlotData {
 public:
  void add(std::size_t epoch, const std::string& series, double value);
  void add_curve(const std::string& series, const std::vector<double>& values);
  std::string csv() const;

 private:
  struct Row {
    std::size_t epoch;
    std::string series;
    double value;
  };
  std::vector<Row> rows_;
};

/// Shortest decimal form of a double that parses back to the same value.
std::string format_number(double v);

void write_text(const std::filesystem::path& path, const std::string& text);

}  // namespace skd
