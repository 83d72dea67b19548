#include "memwrap/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <numeric>

#include "memwrap/errors.hpp"

namespace memwrap {

std::string_view split_name(Split s) {
  switch (s) {
    case Split::Train:
      return "train";
    case Split::Validation:
      return "val";
    case Split::Test:
      return "test";
  }
  return "unknown";
}

void Dataset::validate() const {
  if (dim == 0) throw ContractError("dataset has zero feature dimension");
  if (samples.size() != labels.size() * dim) {
    throw ContractError("dataset holds " + std::to_string(samples.size()) + " values for " +
                        std::to_string(labels.size()) + " labels at dim " + std::to_string(dim));
  }
  for (auto l : labels) {
    if (l >= num_classes) {
      throw ContractError("label " + std::to_string(l) + " outside " +
                          std::to_string(num_classes) + " classes");
    }
  }
  for (double v : samples) {
    if (!(v >= 0.0 && v <= 1.0)) throw ContractError("dataset value outside [0, 1]");
  }
}

Tensor gather_rows(const Dataset& data, std::span<const std::size_t> indices) {
  std::vector<double> v;
  v.reserve(indices.size() * data.dim);
  for (auto i : indices) {
    if (i >= data.size()) throw IndexError("row " + std::to_string(i) + " outside dataset");
    auto s = data.sample(i);
    v.insert(v.end(), s.begin(), s.end());
  }
  return Tensor::matrix(indices.size(), data.dim, std::move(v));
}

Tensor all_rows(const Dataset& data) {
  return Tensor::matrix(data.size(), data.dim, data.samples);
}

std::vector<std::size_t> gather_labels(const Dataset& data, std::span<const std::size_t> indices) {
  std::vector<std::size_t> out;
  out.reserve(indices.size());
  for (auto i : indices) out.push_back(data.labels.at(i));
  return out;
}

Dataset select(const Dataset& data, std::span<const std::size_t> indices) {
  Dataset out;
  out.dim = data.dim;
  out.num_classes = data.num_classes;
  out.split = data.split;
  out.image_rows = data.image_rows;
  out.image_cols = data.image_cols;
  out.samples.reserve(indices.size() * data.dim);
  for (auto i : indices) {
    if (i >= data.size()) throw IndexError("row " + std::to_string(i) + " outside dataset");
    auto s = data.sample(i);
    out.samples.insert(out.samples.end(), s.begin(), s.end());
    out.labels.push_back(data.labels[i]);
  }
  return out;
}

Dataset gen_synthetic(std::uint64_t seed, std::size_t classes, std::size_t dim,
                      std::size_t per_class, double noise) {
  if (classes < 2) throw ConfigError("synthetic data needs at least 2 classes");
  if (dim < 2) throw ConfigError("synthetic data needs dim >= 2");
  if (!(noise >= 0.0)) throw ConfigError("synthetic noise must be >= 0");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<double> prototypes(classes * dim);
  for (double& p : prototypes) p = unit(rng);

  std::normal_distribution<double> gauss(0.0, 1.0);
  Dataset out;
  out.dim = dim;
  out.num_classes = classes;
  const auto side = static_cast<std::size_t>(std::lround(std::sqrt(static_cast<double>(dim))));
  if (side * side == dim) {
    out.image_rows = out.image_cols = side;
  } else {
    out.image_rows = 1;
    out.image_cols = dim;
  }
  const std::size_t n = classes * per_class;
  out.samples.resize(n * dim);
  out.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t c = i % classes;
    out.labels[i] = c;
    for (std::size_t k = 0; k < dim; ++k) {
      const double v = prototypes[c * dim + k] + noise * gauss(rng);
      out.samples[i * dim + k] = std::clamp(v, 0.0, 1.0);
    }
  }
  return out;
}

std::vector<std::size_t> permutation(std::size_t n, std::mt19937_64& rng) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  for (std::size_t i = n; i > 1; --i) {
    std::uniform_int_distribution<std::size_t> pick(0, i - 1);
    std::swap(idx[i - 1], idx[pick(rng)]);
  }
  return idx;
}

namespace {

// First m entries of a partial Fisher-Yates shuffle.
std::vector<std::size_t> draw_without_replacement(std::size_t n, std::size_t m,
                                                  std::mt19937_64& rng) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  for (std::size_t i = 0; i < m; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, n - 1);
    std::swap(idx[i], idx[pick(rng)]);
  }
  idx.resize(m);
  return idx;
}

}  // namespace

Dataset reduced_subset(const Dataset& train, std::size_t size, std::uint64_t seed) {
  if (size > train.size()) {
    throw ConfigError("reduced subset of " + std::to_string(size) + " from only " +
                      std::to_string(train.size()) + " samples");
  }
  std::mt19937_64 rng(seed);
  return select(train, draw_without_replacement(train.size(), size, rng));
}

TrainValidation split_validation(const Dataset& data, double fraction, std::uint64_t seed) {
  if (!(fraction >= 0.0 && fraction < 1.0)) {
    throw ConfigError("validation fraction must lie in [0, 1)");
  }
  const auto n_val = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(data.size())));
  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
  auto order = permutation(data.size(), rng);
  std::vector<std::size_t> val(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_val));
  std::vector<std::size_t> tr(order.begin() + static_cast<std::ptrdiff_t>(n_val), order.end());
  std::sort(val.begin(), val.end());
  std::sort(tr.begin(), tr.end());
  TrainValidation out{select(data, tr), select(data, val)};
  out.train.split = Split::Train;
  out.validation.split = Split::Validation;
  return out;
}

std::pair<Dataset, Dataset> split_front(const Dataset& data, std::size_t n) {
  if (n > data.size()) throw ConfigError("split_front beyond dataset size");
  std::vector<std::size_t> front(n), back(data.size() - n);
  std::iota(front.begin(), front.end(), std::size_t{0});
  std::iota(back.begin(), back.end(), n);
  return {select(data, front), select(data, back)};
}

MemorySet sample_memory_set(const Dataset& pool, std::size_t m, std::mt19937_64& rng) {
  if (m > pool.size()) {
    throw ConfigError("memory size " + std::to_string(m) + " exceeds pool of " +
                      std::to_string(pool.size()));
  }
  if (m == 0) throw ConfigError("memory size must be >= 1");
  return MemorySet{draw_without_replacement(pool.size(), m, rng)};
}

// --- IDX --------------------------------------------------------------------

namespace {

std::uint32_t be32(std::span<const std::uint8_t> b, std::size_t at) {
  return (std::uint32_t{b[at]} << 24) | (std::uint32_t{b[at + 1]} << 16) |
         (std::uint32_t{b[at + 2]} << 8) | std::uint32_t{b[at + 3]};
}

void put_be32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  out.push_back(static_cast<std::uint8_t>(v >> 24));
  out.push_back(static_cast<std::uint8_t>(v >> 16));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
  out.push_back(static_cast<std::uint8_t>(v));
}

std::string hex_bytes(std::span<const std::uint8_t> b, std::size_t n) {
  static const char* digits = "0123456789abcdef";
  std::string s;
  for (std::size_t i = 0; i < n && i < b.size(); ++i) {
    if (i) s += ' ';
    s += "0x";
    s += digits[b[i] >> 4];
    s += digits[b[i] & 15];
  }
  return s;
}

void check_magic(std::span<const std::uint8_t> b, std::uint8_t dims, const char* what) {
  if (b.size() < 4) {
    throw FormatError(std::string(what) + ": file too short for IDX magic (" +
                      std::to_string(b.size()) + " bytes)");
  }
  if (b[0] != 0 || b[1] != 0 || b[2] != 0x08 || b[3] != dims) {
    throw FormatError(std::string(what) + ": bad IDX magic [" + hex_bytes(b, 4) +
                      "], expected [0x00 0x00 0x08 0x0" + std::to_string(dims) + "]");
  }
}

void check_length(std::span<const std::uint8_t> b, std::uint64_t expected, const char* what) {
  if (b.size() < expected) {
    throw FormatError(std::string(what) + ": truncated payload, expected " +
                      std::to_string(expected) + " bytes, got " + std::to_string(b.size()));
  }
}

}  // namespace

Dataset parse_idx_bytes(std::span<const std::uint8_t> images, std::span<const std::uint8_t> labels,
                        std::size_t num_classes) {
  check_magic(images, 0x03, "images");
  check_length(images, 16, "images header");
  check_magic(labels, 0x01, "labels");
  check_length(labels, 8, "labels header");
  const std::uint64_t count = be32(images, 4), rows = be32(images, 8), cols = be32(images, 12);
  const std::uint64_t label_count = be32(labels, 4);
  if (count != label_count) {
    throw FormatError("IDX count mismatch: " + std::to_string(count) + " images vs " +
                      std::to_string(label_count) + " labels");
  }
  if (rows == 0 || cols == 0) throw FormatError("IDX images have a zero dimension");
  check_length(images, 16 + count * rows * cols, "images");
  check_length(labels, 8 + count, "labels");

  Dataset out;
  out.dim = static_cast<std::size_t>(rows * cols);
  out.image_rows = static_cast<std::size_t>(rows);
  out.image_cols = static_cast<std::size_t>(cols);
  out.samples.resize(static_cast<std::size_t>(count) * out.dim);
  for (std::size_t i = 0; i < out.samples.size(); ++i) out.samples[i] = images[16 + i] / 255.0;
  std::size_t max_label = 0;
  out.labels.resize(static_cast<std::size_t>(count));
  for (std::size_t i = 0; i < out.labels.size(); ++i) {
    out.labels[i] = labels[8 + i];
    max_label = std::max(max_label, out.labels[i]);
  }
  out.num_classes = num_classes ? num_classes : (count ? max_label + 1 : 0);
  if (count && max_label >= out.num_classes) {
    throw FormatError("IDX label " + std::to_string(max_label) + " outside " +
                      std::to_string(out.num_classes) + " classes");
  }
  return out;
}

std::vector<std::uint8_t> read_file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "'");
  return std::vector<std::uint8_t>((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());
}

Dataset parse_idx(const std::string& images_path, const std::string& labels_path,
                  std::size_t num_classes) {
  return parse_idx_bytes(read_file_bytes(images_path), read_file_bytes(labels_path), num_classes);
}

std::pair<std::vector<std::uint8_t>, std::vector<std::uint8_t>> encode_idx(const Dataset& data) {
  std::size_t rows = data.image_rows, cols = data.image_cols;
  if (rows == 0 && cols == 0) {
    rows = 1;
    cols = data.dim;
  }
  if (rows * cols != data.dim) throw ContractError("image geometry does not match dim");
  std::vector<std::uint8_t> images{0, 0, 0x08, 0x03};
  put_be32(images, static_cast<std::uint32_t>(data.size()));
  put_be32(images, static_cast<std::uint32_t>(rows));
  put_be32(images, static_cast<std::uint32_t>(cols));
  for (double v : data.samples) {
    images.push_back(static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)));
  }
  std::vector<std::uint8_t> labels{0, 0, 0x08, 0x01};
  put_be32(labels, static_cast<std::uint32_t>(data.size()));
  for (auto l : data.labels) {
    if (l > 255) throw ContractError("IDX labels are single bytes");
    labels.push_back(static_cast<std::uint8_t>(l));
  }
  return {std::move(images), std::move(labels)};
}

void write_idx(const Dataset& data, const std::string& images_path,
               const std::string& labels_path) {
  auto [images, labels] = encode_idx(data);
  auto dump = [](const std::string& path, const std::vector<std::uint8_t>& bytes) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open '" + path + "' for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write to '" + path + "' failed");
  };
  dump(images_path, images);
  dump(labels_path, labels);
}

}  // namespace memwrap
