#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "stablekd/datasets.hpp"
#include "stablekd/optim.hpp"

namespace skd::cli {

/// Either a SKD1 file or a synthetic generator. Generated data is split with
/// the generator seed; files with `split_seed`.
struct DatasetSource {
  std::optional<std::filesystem::path> path;
  std::string generator;  ///< "tiles" or "spirals" when path is empty
  std::size_t classes = 8;
  std::size_t per_class = 120;
  std::size_t side = 8;
  double noise = 0.4;
  std::uint64_t seed = 1;
  std::uint64_t split_seed = 1;
};

struct StabilityConfig {
  std::vector<std::string> parts{"fluctuation", "head_distance", "block_counts"};
  std::vector<double> fluctuation_lrs{0.005, 0.01, 0.02};
  std::size_t fluctuation_epochs = 30;
  std::size_t head_epochs = 5;
  double head_max_lr = 0.025;
  std::vector<std::size_t> block_counts{1, 3, 5};
  std::size_t block_epochs = 40;
  double block_max_lr = 0.0625;
};

/// Resolved experiment configuration. Relative paths are resolved against
/// the directory holding the config file.
struct RunConfig {
  std::optional<std::filesystem::path> arch_file;
  std::optional<std::filesystem::path> teacher_arch_file;
  std::optional<std::filesystem::path> teacher_checkpoint;
  std::optional<std::filesystem::path> checkpoint;
  std::optional<std::filesystem::path> backbone_checkpoint;

  std::size_t k = 5;
  std::size_t n = 2;
  std::size_t epochs = 20;
  /// Unset means the command's default (blockwise or baseline).
  std::optional<double> max_lr;
  double baseline_max_lr = 0.1;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  std::size_t batch_size = 128;
  double lambda = 1.0;
  double alpha = 0.5;
  double temperature = 1.0;
  std::uint64_t seed = 0;
  std::size_t workers = 1;
  bool record_wall_time = false;

  DatasetSource dataset;
  bool has_dataset = false;
  double val_fraction = 0.25;
  double subset_fraction = 1.0;
  std::optional<std::vector<std::size_t>> boundaries;
  std::vector<double> fractions{0.2, 0.4, 0.6, 0.8, 1.0};
  std::vector<std::string> schemes{"stablekd", "vanilla"};
  std::size_t gradcheck_seeds = 10;
  StabilityConfig stability;

  /// Optimizer settings with `lr` as the peak rate.
  OptimConfig optim(double lr) const;
  /// Echo of every setting after defaults, for provenance.
  nlohmann::ordered_json resolved() const;
};

/// Parses config JSON. Unknown keys and mistyped values throw ConfigError
/// naming the key path.
RunConfig parse_run_config(const std::string& json_text, const std::filesystem::path& base_dir);
RunConfig load_run_config(const std::filesystem::path& path);

/// Train and validation splits of the configured dataset, before any
/// subset selection.
struct LoadedData {
  Dataset train;
  Dataset val;
};

LoadedData load_dataset(const RunConfig& config);

}  // namespace skd::cli
