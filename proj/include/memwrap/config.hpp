#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "memwrap/data.hpp"
#include "memwrap/model.hpp"
#include "memwrap/train.hpp"

namespace memwrap {

struct DatasetSection {
  std::string source = "synthetic";  // synthetic | idx
  std::string path;                  // idx: directory with the four MNIST-style files
  std::uint64_t seed = 1234;         // synthetic prototypes and noise
  std::size_t classes = 10;
  std::size_t dim = 64;
  std::size_t pool_per_class = 200;
  std::size_t test_per_class = 100;
  std::size_t train_size = 1000;
  double noise = 0.25;
  double validation_fraction = 0.1;
};

struct ModelSection {
  Variant variant = Variant::MemoryWrap;
  std::vector<std::size_t> encoder_widths{32};
  std::size_t encoding_dim = 16;
  std::size_t hidden_factor = 2;
};

struct MemorySection {
  std::size_t size = 100;
  std::size_t eval_batch = 500;
  std::size_t eval_repeats = 5;
  std::string draw_from = "subset";  // subset | full
};

struct ExplainSection {
  std::size_t ig_steps = 64;
  std::string baseline = "white";  // white | black
};

struct RunConfig {
  std::uint64_t seed = 0;
  DatasetSection dataset;
  ModelSection model;
  MemorySection memory;
  TrainConfig train;
  ExplainSection explain;

  EncoderSpec encoder_spec() const;
  HeadSpec head_spec() const;
  EvalConfig eval_config() const;
  MemoryConfig memory_config() const;
};

// Parses and schema-checks a JSON config. Unknown keys, wrong types and
// missing required keys raise ConfigError naming the dotted key path.
// Required: seed, dataset.source, dataset.train_size, model.variant,
// train.epochs, train.batch_size. Everything else has a default.
RunConfig parse_config(const std::string& text);
RunConfig load_config(const std::string& path);

// Canonical JSON of the effective config (defaults filled in).
std::string config_snapshot(const RunConfig& config);

// Independent seed streams derived from the run seed (splitmix64).
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);

struct RunData {
  Dataset pool;        // full training pool
  Dataset train;       // reduced subset minus validation
  Dataset validation;
  Dataset test;
  const Dataset& memory_pool(const RunConfig& config) const;
};

RunData build_data(const RunConfig& config);

}  // namespace memwrap
