#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "omniseg/config.hpp"

// The `omniseg` command-line tool: synth, train, eval, gradcheck and plot.
namespace omniseg::cli {

enum ExitCode { kOk = 0, kUserError = 1, kDataError = 2, kVerificationFailure = 3 };

/// Raised for bad flags or flag combinations.
class UserError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Runs one invocation; never throws. Messages go to stdout/stderr.
int run(int argc, const char* const* argv);
int run(const std::vector<std::string>& args);

/// Exclusive ownership of an output directory through `run.lock`. A lock left
/// by a process that no longer exists is taken over.
class RunLock {
 public:
  explicit RunLock(const std::filesystem::path& directory);
  ~RunLock();
  RunLock(const RunLock&) = delete;
  RunLock& operator=(const RunLock&) = delete;

 private:
  std::filesystem::path path_;
};

struct GradcheckBlock {
  std::string name;
  long size = 0;
  int checked = 0;
  double max_relative_error = 0.0;
  bool ok = true;
};

struct GradcheckReport {
  std::vector<GradcheckBlock> blocks;
  long parameters = 0;
  double tolerance = 1e-4;
  bool ok() const;
  std::string to_text() const;
};

/// A model small enough for finite differences (well under 5k parameters).
config::RunConfig tiny_config();

/// Central finite differences against the analytic gradient in 64-bit, on a
/// tiny volumetric scene with random weights. `corrupt` names a block whose
/// analytic gradient is perturbed (negative control). At most
/// `entries_per_block` entries of each block are probed (0 = all).
GradcheckReport gradcheck(const config::RunConfig& config, std::uint64_t seed, const std::string& corrupt = "",
                          int entries_per_block = 0);

/// Series parsed from a metrics log or a views CSV.
struct PlotData {
  std::string x_label;
  std::vector<std::string> columns;  // x first, then the series
  std::vector<std::vector<double>> rows;
};

/// Accepts a training metrics.log or an eval CSV (`label,mAP,...`; numeric
/// labels become the x axis). Throws UserError with the line number on failure.
PlotData parse_metrics(const std::string& text, const std::string& origin);
std::string plot_svg(const PlotData& data, const std::string& title);
std::string plot_csv(const PlotData& data);

}  // namespace omniseg::cli
