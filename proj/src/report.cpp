#include "memwrap/report.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>

#include <json.hpp>

#include "memwrap/data.hpp"
#include "memwrap/errors.hpp"

namespace memwrap {

std::vector<std::uint8_t> encode_pgm(const PgmImage& image) {
  if (image.pixels.size() != image.width * image.height) {
    throw DimensionError("PGM pixel count does not match width*height");
  }
  const std::string header =
      "P5\n" + std::to_string(image.width) + " " + std::to_string(image.height) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.insert(out.end(), image.pixels.begin(), image.pixels.end());
  return out;
}

PgmImage decode_pgm(std::span<const std::uint8_t> bytes) {
  std::size_t pos = 0;
  auto skip_space = [&] {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(bytes[pos])) {
        ++pos;
      } else {
        break;
      }
    }
  };
  auto number = [&](const char* what) {
    skip_space();
    std::size_t v = 0, digits = 0;
    while (pos < bytes.size() && std::isdigit(bytes[pos])) {
      v = v * 10 + (bytes[pos++] - '0');
      ++digits;
    }
    if (!digits) throw FormatError(std::string("PGM: missing ") + what + " at offset " + std::to_string(pos));
    return v;
  };
  if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '5') throw FormatError("PGM: expected P5 magic");
  pos = 2;
  PgmImage img;
  img.width = number("width");
  img.height = number("height");
  const auto maxval = number("maxval");
  if (maxval != 255) throw FormatError("PGM: only maxval 255 is supported");
  if (pos >= bytes.size() || !std::isspace(bytes[pos])) throw FormatError("PGM: malformed header");
  ++pos;
  const std::size_t n = img.width * img.height;
  if (bytes.size() - pos < n) {
    throw FormatError("PGM: truncated raster, expected " + std::to_string(n) + " bytes, got " +
                      std::to_string(bytes.size() - pos));
  }
  img.pixels.assign(bytes.begin() + static_cast<std::ptrdiff_t>(pos),
                    bytes.begin() + static_cast<std::ptrdiff_t>(pos + n));
  return img;
}

void write_pgm(const std::filesystem::path& path, const PgmImage& image) {
  const auto bytes = encode_pgm(image);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write to '" + path.string() + "' failed");
}

PgmImage read_pgm(const std::filesystem::path& path) { return decode_pgm(read_file_bytes(path.string())); }

PgmImage intensity_image(std::span<const double> values, std::size_t rows, std::size_t cols) {
  if (values.size() != rows * cols) throw DimensionError("image geometry does not match values");
  PgmImage img{cols, rows, {}};
  img.pixels.reserve(values.size());
  for (double v : values) {
    img.pixels.push_back(static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)));
  }
  return img;
}

PgmImage signed_image(std::span<const double> values, std::size_t rows, std::size_t cols) {
  if (values.size() != rows * cols) throw DimensionError("image geometry does not match values");
  double scale = 0.0;
  for (double v : values) scale = std::max(scale, std::abs(v));
  PgmImage img{cols, rows, {}};
  img.pixels.reserve(values.size());
  for (double v : values) {
    long p = 128;
    if (scale > 0.0 && v > 0.0) p = 128 + std::lround(127.0 * v / scale);
    if (scale > 0.0 && v < 0.0) p = 127 - std::lround(127.0 * -v / scale);
    img.pixels.push_back(static_cast<std::uint8_t>(std::clamp(p, 0L, 255L)));
  }
  return img;
}

namespace {

nlohmann::ordered_json entry_json(const WeightedEntry& e) {
  return {{"memory_index", e.memory_index},
          {"weight", e.weight},
          {"memory_pred", e.memory_pred},
          {"memory_label", e.memory_label}};
}

}  // namespace

std::string record_to_json(const ExplanationRecord& record) {
  nlohmann::ordered_json j;
  j["input_index"] = record.input_index;
  j["predicted_class"] = record.predicted_class;
  j["true_class"] = record.true_class;
  j["entries"] = nlohmann::ordered_json::array();
  for (const auto& e : record.entries) j["entries"].push_back(entry_json(e));
  if (record.best_example) j["best_example"] = entry_json(*record.best_example);
  if (record.best_counterfactual) {
    j["best_counterfactual"] = entry_json(*record.best_counterfactual);
    if (record.counterfactual_class_rank) {
      j["best_counterfactual"]["class_rank"] = *record.counterfactual_class_rank;
    }
  }
  j["uncertainty_flag"] = record.uncertainty_flag;
  return j.dump(2) + "\n";
}

std::vector<std::filesystem::path> render_report(const std::vector<ReportItem>& items,
                                                 const std::filesystem::path& out_dir) {
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create '" + out_dir.string() + "': " + ec.message());
  std::vector<std::filesystem::path> written;
  for (const auto& item : items) {
    char stem[32];
    std::snprintf(stem, sizeof stem, "input_%06zu", item.record.input_index);
    const auto base = out_dir / stem;
    const auto json_path = base.string() + ".json";
    {
      std::ofstream out(json_path, std::ios::binary);
      if (!out) throw IoError("cannot open '" + json_path + "' for writing");
      out << record_to_json(item.record);
      if (!out) throw IoError("write to '" + json_path + "' failed");
    }
    written.emplace_back(json_path);

    const std::size_t r = item.image_rows, c = item.image_cols;
    write_pgm(base.string() + ".pgm", intensity_image(item.input, r, c));
    if (!item.best_example.empty()) {
      write_pgm(base.string() + "_example.pgm", intensity_image(item.best_example, r, c));
    }
    if (!item.best_counterfactual.empty()) {
      write_pgm(base.string() + "_counterfactual.pgm", intensity_image(item.best_counterfactual, r, c));
    }
    if (item.attribution) {
      const auto& a = *item.attribution;
      write_pgm(base.string() + "_attr.pgm", signed_image(a.input, r, c));
      auto memory_row = [&](std::size_t pos) {
        return std::span<const double>(a.memory).subspan(pos * a.dim, a.dim);
      };
      if (item.record.best_example && item.record.best_example->position < a.memory_rows) {
        write_pgm(base.string() + "_example_attr.pgm",
                  signed_image(memory_row(item.record.best_example->position), r, c));
      }
      if (item.record.best_counterfactual &&
          item.record.best_counterfactual->position < a.memory_rows) {
        write_pgm(base.string() + "_counterfactual_attr.pgm",
                  signed_image(memory_row(item.record.best_counterfactual->position), r, c));
      }
    }
  }
  return written;
}

}  // namespace memwrap
