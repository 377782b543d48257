#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "stablekd/errors.hpp"

namespace skd::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitNumerical = 3;

const std::vector<std::string>& command_names();

struct Invocation {
  std::string command;
  std::optional<std::filesystem::path> config_path;
  std::filesystem::path out_dir;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> workers;
  bool overwrite = false;
};

/// Runs one command and returns its exit code. Library errors propagate;
/// map them with exit_code_for().
int run_command(const Invocation& invocation, std::ostream& out);

/// 3 for numerical-contract and oracle failures, 2 for everything else.
int exit_code_for(const Error& error) noexcept;

/// Requested worker count capped by SKD_THREADS when that is set.
std::size_t effective_workers(std::size_t requested, const char* cap_env);

/// Build identification recorded in provenance files.
const char* build_version() noexcept;

/// Output directory assembled in a hidden sibling and renamed into place on
/// commit. A non-empty existing target is rejected unless `overwrite`.
class OutputDir {
 public:
  OutputDir(std::filesystem::path target, bool overwrite);
  ~OutputDir();
  OutputDir(const OutputDir&) = delete;
  OutputDir& operator=(const OutputDir&) = delete;

  std::filesystem::path file(const std::string& name) const { return staging_ / name; }
  const std::filesystem::path& target() const noexcept { return target_; }
  void commit();

 private:
  std::filesystem::path target_;
  std::filesystem::path staging_;
  bool committed_ = false;
};

}  // namespace skd::cli
