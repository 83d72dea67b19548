#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "memwrap/explain.hpp"

namespace memwrap {

struct PgmImage {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::uint8_t> pixels;  // row-major, maxval 255
};

// Binary P5, maxval 255.
std::vector<std::uint8_t> encode_pgm(const PgmImage& image);
PgmImage decode_pgm(std::span<const std::uint8_t> bytes);
void write_pgm(const std::filesystem::path& path, const PgmImage& image);
PgmImage read_pgm(const std::filesystem::path& path);

// Features in [0,1] -> round(255 v).
PgmImage intensity_image(std::span<const double> values, std::size_t rows, std::size_t cols);
// Signed map scaled by max |v|: positives to 128..255, negatives to 0..127, 128 = zero.
PgmImage signed_image(std::span<const double> values, std::size_t rows, std::size_t cols);

// One object per input with fields input_index, predicted_class, true_class,
// entries, best_example, best_counterfactual (omitted when absent),
// uncertainty_flag.
std::string record_to_json(const ExplanationRecord& record);

struct ReportItem {
  ExplanationRecord record;
  std::optional<AttributionMap> attribution;
  std::vector<double> input;
  std::vector<double> best_example;         // empty when absent
  std::vector<double> best_counterfactual;  // empty when absent
  std::size_t image_rows = 0;
  std::size_t image_cols = 0;
};

// Writes input_<i>.json plus PGM dumps for each item. Returns the record paths.
std::vector<std::filesystem::path> render_report(const std::vector<ReportItem>& items,
                                                 const std::filesystem::path& out_dir);

}  // namespace memwrap
