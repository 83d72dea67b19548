#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "memwrap/tensor.hpp"

namespace memwrap {

enum class Split { Train, Validation, Test };
std::string_view split_name(Split s);

// N samples of `dim` features in [0, 1], row-major, with class labels.
struct Dataset {
  std::vector<double> samples;
  std::vector<std::size_t> labels;
  std::size_t dim = 0;
  std::size_t num_classes = 0;
  Split split = Split::Train;
  // Image geometry for rendering; rows * cols == dim.
  std::size_t image_rows = 0;
  std::size_t image_cols = 0;

  std::size_t size() const { return labels.size(); }
  std::span<const double> sample(std::size_t i) const {
    return std::span<const double>(samples).subspan(i * dim, dim);
  }
  void validate() const;
};

// Rows `indices` of the dataset as an [n×dim] tensor.
Tensor gather_rows(const Dataset& data, std::span<const std::size_t> indices);
Tensor all_rows(const Dataset& data);
std::vector<std::size_t> gather_labels(const Dataset& data, std::span<const std::size_t> indices);
Dataset select(const Dataset& data, std::span<const std::size_t> indices);

// Class prototypes in [0,1]^dim drawn from `seed`; sample i has label i % classes
// and equals clamp(prototype + N(0, noise^2), 0, 1).
Dataset gen_synthetic(std::uint64_t seed, std::size_t classes, std::size_t dim,
                      std::size_t per_class, double noise);

// Uniform sample of `size` rows without replacement, order shuffled.
Dataset reduced_subset(const Dataset& train, std::size_t size, std::uint64_t seed);

// Holds out round(fraction * N) rows (seeded) as a validation split.
struct TrainValidation {
  Dataset train;
  Dataset validation;
};
TrainValidation split_validation(const Dataset& data, double fraction, std::uint64_t seed);

// First `n` rows and the remainder; used to carve a test split from a generated pool.
std::pair<Dataset, Dataset> split_front(const Dataset& data, std::size_t n);

struct MemorySet {
  std::vector<std::size_t> indices;  // into the source dataset
};

// m distinct indices, uniform without replacement. The input currently being
// classified is not excluded.
MemorySet sample_memory_set(const Dataset& pool, std::size_t m, std::mt19937_64& rng);

// Indices 0..n-1 shuffled (Fisher-Yates) from rng.
std::vector<std::size_t> permutation(std::size_t n, std::mt19937_64& rng);

// --- IDX container -----------------------------------------------------------

// Images: 00 00 08 03, u32 BE count/rows/cols, count*rows*cols bytes.
// Labels: 00 00 08 01, u32 BE count, count bytes. Pixels scaled by 1/255.
Dataset parse_idx(const std::string& images_path, const std::string& labels_path,
                  std::size_t num_classes = 0);
Dataset parse_idx_bytes(std::span<const std::uint8_t> images, std::span<const std::uint8_t> labels,
                        std::size_t num_classes = 0);

// Pixels quantized as round(255 * v). Requires image_rows * image_cols == dim
// (or both zero, in which case rows = 1, cols = dim).
std::pair<std::vector<std::uint8_t>, std::vector<std::uint8_t>> encode_idx(const Dataset& data);
void write_idx(const Dataset& data, const std::string& images_path,
               const std::string& labels_path);

std::vector<std::uint8_t> read_file_bytes(const std::string& path);

}  // namespace memwrap
