#include "stablekd/instrumentation.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "stablekd/errors.hpp"

namespace skd {

ParamSnapshot snapshot(const Network<float>& net, const std::vector<std::string>& scope) {
  ParamSnapshot snap;
  snap.ids = scope;
  snap.values.reserve(scope.size());
  for (const auto& id : scope) {
    const Parameter<float>* p = net.find(id);
    if (!p) throw ContractError("snapshot: no parameter '" + id + "'");
    snap.values.push_back(p->value);
  }
  return snap;
}

std::vector<std::string> head_scope(const Network<float>& net) {
  const std::size_t last = net.layer_count() - 1;
  std::vector<std::string> ids;
  for (std::size_t i : net.parameter_indices(last, last + 1)) ids.push_back(net.parameters()[i].id);
  return ids;
}

double param_distance(const ParamSnapshot& previous, const ParamSnapshot& current) {
  if (previous.ids != current.ids) throw ContractError("param_distance: scopes differ");
  double acc = 0.0;
  for (std::size_t i = 0; i < previous.values.size(); ++i) {
    const Tensor<float>& a = previous.values[i];
    const Tensor<float>& b = current.values[i];
    if (a.shape() != b.shape()) {
      throw ContractError("param_distance: '" + previous.ids[i] + "' changed shape");
    }
    for (std::size_t j = 0; j < a.numel(); ++j) {
      const double d = static_cast<double>(b[j]) - static_cast<double>(a[j]);
      acc += d * d;
    }
  }
  return std::sqrt(acc);
}

void DistanceTrace::push(double distance) {
  if (!(distance >= 0.0)) throw ContractError("distance must be non-negative");
  distances_.push_back(distance);
  cumulative_.push_back((cumulative_.empty() ? 0.0 : cumulative_.back()) + distance);
}

double DistanceTrace::cumulative_at(std::size_t steps) const {
  if (steps == 0) return 0.0;
  if (steps > cumulative_.size()) throw ContractError("cumulative_at beyond trace length");
  return cumulative_[steps - 1];
}

std::string DistanceTrace::csv() const {
  std::ostringstream os;
  os << "step,distance,cumulative\n";
  for (std::size_t i = 0; i < distances_.size(); ++i) {
    os << i << ',' << format_number(distances_[i]) << ',' << format_number(cumulative_[i]) << '\n';
  }
  return os.str();
}

double fluctuation_score(const std::vector<double>& accuracy) {
  double score = 0.0;
  for (std::size_t t = 1; t < accuracy.size(); ++t) {
    if (accuracy[t - 1] > accuracy[t]) score += accuracy[t - 1] - accuracy[t];
  }
  return score;
}

std::string metrics_json_line(const MetricRecord& r) {
  nlohmann::ordered_json j;
  j["epoch"] = r.epoch;
  j["stage"] = r.stage;
  j["k_current"] = r.k_current;
  j["lr_peak"] = r.lr_peak;
  j["loss_ce"] = r.loss_ce;
  j["loss_kl"] = r.loss_kl;
  j["loss_mse"] = r.loss_mse;
  j["train_acc"] = r.train_acc;
  j["val_acc"] = r.val_acc;
  j["step_param_dist_mean"] = r.step_param_dist_mean;
  j["wall_seconds"] = r.wall_seconds;
  return j.dump();
}

std::string metrics_jsonl(const std::vector<MetricRecord>& records) {
  std::string out;
  for (const auto& r : records) out += metrics_json_line(r) + "\n";
  return out;
}

void PlotData::add(std::size_t epoch, const std::string& series, double value) {
  rows_.push_back({epoch, series, value});
}

void PlotData::add_curve(const std::string& series, const std::vector<double>& values) {
  for (std::size_t i = 0; i < values.size(); ++i) add(i + 1, series, values[i]);
}

std::string PlotData::csv() const {
  std::ostringstream os;
  os << "epoch,series,value\n";
  for (const auto& r : rows_) os << r.epoch << ',' << r.series << ',' << format_number(r.value) << '\n';
  return os.str();
}

std::string format_number(double v) {
  char buf[32];
  const auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  if (ec != std::errc{}) throw ContractError("format_number: buffer too small");
  return std::string(buf, end);
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out << text;
  if (!out) throw DataError("failed writing " + path.string());
}

}  // namespace skd
