#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "memwrap/config.hpp"
#include "memwrap/model.hpp"

namespace memwrap::cli {

enum ExitCode : int { kOk = 0, kFailure = 1, kConfigError = 2, kFormatError = 3, kNumericError = 4 };

// Run directory layout.
inline constexpr const char* kConfigSnapshot = "config.snapshot";
inline constexpr const char* kMetricsFile = "metrics.csv";
inline constexpr const char* kModelFile = "model.bin";
inline constexpr const char* kExplanationsDir = "explanations";
inline constexpr const char* kSummaryFile = "summary.txt";
inline constexpr const char* kExplainSummaryFile = "explain_summary.txt";

struct TrainedRun {
  MemoryWrapModel model;
  std::vector<MetricsRow> metrics;
  EvalResult test;
  double seconds_per_epoch = 0.0;
};

// Library-level pipeline shared by the commands: build data, init, train, evaluate on test.
TrainedRun train_and_evaluate(const RunConfig& config, std::ostream& log);

void cmd_train(const std::string& config_path, const std::filesystem::path& out_dir, bool force,
               std::ostream& out, std::ostream& log);
void cmd_eval(const std::string& model_path, const std::string& config_path, std::ostream& out);
void cmd_explain(const std::string& model_path, const std::string& config_path,
                 const std::filesystem::path& out_dir, std::size_t n_inputs, bool force,
                 std::ostream& out);
void cmd_sweep_memory(const std::string& config_path, const std::vector<std::size_t>& sizes,
                      std::ostream& out, std::ostream& log);
void cmd_params(std::uint64_t d, std::uint64_t classes, std::uint64_t body_params, Variant variant,
                std::ostream& out);

// Entry point; maps typed errors to exit codes.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace memwrap::cli
