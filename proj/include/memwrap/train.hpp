#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "memwrap/data.hpp"
#include "memwrap/model.hpp"

namespace memwrap {

struct TrainConfig {
  std::size_t epochs = 30;
  std::size_t batch_size = 20;
  double lr_initial = 0.1;
  double momentum = 0.5;
  std::vector<double> decay_milestones{0.5, 0.75};  // fractions of the epoch budget
  double decay_factor = 10.0;
  std::uint64_t seed = 0;

  void validate() const;
};

struct EvalConfig {
  std::size_t batch_size = 500;
  std::size_t repeats = 5;

  void validate() const;
};

struct MemoryConfig {
  std::size_t size = 100;
};

struct MetricsRow {
  std::size_t epoch = 0;
  Split split = Split::Train;
  double loss = 0.0;
  double accuracy = 0.0;
  double lr = 0.0;
  double memory_collision_rate = 0.0;
};

// lr_initial / decay_factor^k, k = number of milestones with epoch >= ceil(m * epochs).
double lr_at(const TrainConfig& config, std::size_t epoch);

struct EvalResult {
  double mean_accuracy = 0.0;
  double std_accuracy = 0.0;  // population std over repeats
  std::vector<double> per_repeat;
  double mean_loss = 0.0;
  double collision_rate = 0.0;
};

// Memory sets for training are drawn from `memory_pool`. An input "collides"
// when a sample with identical features sits in its batch's memory set.
struct TrainResult {
  std::vector<MetricsRow> metrics;
};

// Seeded shuffle per epoch, one memory draw per batch, cross-entropy, SGD
// with the milestone schedule. Appends a train row and (if validation is
// non-empty) a val row per epoch. Throws NumericError on a non-finite loss.
TrainResult train(MemoryWrapModel& model, const Dataset& train_set, const Dataset& validation,
                  const Dataset& memory_pool, const MemoryConfig& memory,
                  const TrainConfig& config);

// For each repeat r, memory sets come from an rng seeded with seed + r, one
// draw per evaluation batch. Standard models ignore memory.
EvalResult evaluate(const MemoryWrapModel& model, const Dataset& data, const Dataset& memory_pool,
                    const MemoryConfig& memory, const EvalConfig& config, std::uint64_t seed);

// CSV with header epoch,split,loss,accuracy,lr,memory_collision_rate; 9 significant digits.
std::string metrics_csv(const std::vector<MetricsRow>& rows);
std::string format_g9(double v);

}  // namespace memwrap
