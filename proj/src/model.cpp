#include "memwrap/model.hpp"

#include <bit>
#include <cmath>
#include <fstream>
#include <iterator>
#include <random>

#include "memwrap/attention.hpp"
#include "memwrap/errors.hpp"

namespace memwrap {

std::string_view variant_name(Variant v) {
  switch (v) {
    case Variant::Standard:
      return "standard";
    case Variant::MemoryWrap:
      return "memory_wrap";
    case Variant::OnlyMemory:
      return "only_memory";
  }
  return "unknown";
}

Variant parse_variant(std::string_view name) {
  if (name == "standard") return Variant::Standard;
  if (name == "memory_wrap") return Variant::MemoryWrap;
  if (name == "only_memory") return Variant::OnlyMemory;
  throw ConfigError("unknown model variant '" + std::string(name) +
                    "' (expected standard, memory_wrap or only_memory)");
}

void EncoderSpec::validate() const {
  if (input_dim == 0 || encoding_dim == 0) throw ConfigError("encoder widths must be >= 1");
  for (auto w : hidden) {
    if (w == 0) throw ConfigError("encoder widths must be >= 1");
  }
}

std::size_t EncoderSpec::parameter_count() const {
  std::size_t total = 0, in = input_dim;
  for (auto w : hidden) {
    total += in * w + w;
    in = w;
  }
  return total + in * encoding_dim + encoding_dim;
}

std::size_t HeadSpec::input_width() const {
  return variant == Variant::MemoryWrap ? 2 * encoding_dim : encoding_dim;
}

std::size_t HeadSpec::hidden_width() const {
  return variant == Variant::Standard ? 0 : hidden_factor * input_width();
}

void HeadSpec::validate() const {
  if (encoding_dim == 0 || num_classes == 0 || hidden_factor == 0) {
    throw ConfigError("head dimensions must be >= 1");
  }
}

std::uint64_t count_parameters(std::uint64_t body_params, std::uint64_t d, std::uint64_t c,
                               Variant variant) {
  if (variant == Variant::Standard) return body_params + d * c + c;
  const std::uint64_t a = variant == Variant::MemoryWrap ? 2 * d : d;
  return body_params + a * 2 * a + 2 * a + 2 * a * c + c;
}

std::uint64_t body_from_standard_total(std::uint64_t standard_total, std::uint64_t d,
                                       std::uint64_t c) {
  const std::uint64_t classifier = d * c + c;
  if (standard_total < classifier) {
    throw ConfigError("standard total " + std::to_string(standard_total) +
                      " is smaller than its own d*c+c classifier");
  }
  return standard_total - classifier;
}

// --- MemoryWrapModel --------------------------------------------------------

namespace {

Tensor init_uniform(std::mt19937_64& rng, std::size_t rows, std::size_t cols,
                    std::size_t fan_in) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  std::vector<double> v(rows * cols);
  for (double& x : v) x = dist(rng);
  return Tensor::matrix(rows, cols, std::move(v), true);
}

}  // namespace

MemoryWrapModel::MemoryWrapModel(EncoderSpec encoder, HeadSpec head, std::uint64_t seed)
    : encoder_(std::move(encoder)), head_(head) {
  encoder_.validate();
  head_.validate();
  if (head_.encoding_dim != encoder_.encoding_dim) {
    throw ConfigError("head encoding_dim " + std::to_string(head_.encoding_dim) +
                      " differs from encoder output " + std::to_string(encoder_.encoding_dim));
  }
  std::mt19937_64 rng(seed);
  auto add_layer = [&](const std::string& prefix, std::size_t in, std::size_t out) {
    params_.add(prefix + ".weight", init_uniform(rng, in, out, in));
    params_.add(prefix + ".bias", init_uniform(rng, 1, out, in));
  };
  std::size_t in = encoder_.input_dim;
  std::size_t layer = 0;
  for (auto w : encoder_.hidden) {
    add_layer("encoder." + std::to_string(layer++), in, w);
    in = w;
  }
  add_layer("encoder." + std::to_string(layer), in, encoder_.encoding_dim);

  if (head_.variant == Variant::Standard) {
    add_layer("head.0", head_.encoding_dim, head_.num_classes);
  } else {
    add_layer("head.0", head_.input_width(), head_.hidden_width());
    add_layer("head.1", head_.hidden_width(), head_.num_classes);
  }
}

std::size_t MemoryWrapModel::encoder_parameter_count() const {
  std::size_t n = 0;
  for (const auto& [name, t] : params_) {
    if (name.rfind("encoder.", 0) == 0) n += t.size();
  }
  return n;
}

MemoryWrapModel MemoryWrapModel::clone() const {
  MemoryWrapModel copy;
  copy.encoder_ = encoder_;
  copy.head_ = head_;
  for (const auto& [name, t] : params_) copy.params_.add(name, t.clone());
  return copy;
}

void MemoryWrapModel::set_trainable(bool on) {
  for (auto& [name, t] : params_) t.set_requires_grad(on);
}

Tensor MemoryWrapModel::linear(Tape& tape, const Tensor& x, const std::string& prefix) const {
  return add_row_bias(tape, matmul(tape, x, params_.get(prefix + ".weight")),
                      params_.get(prefix + ".bias"));
}

Tensor MemoryWrapModel::encode(Tape& tape, const Tensor& batch) const {
  if (batch.rank() != 2 || batch.cols() != encoder_.input_dim) {
    throw DimensionError("encode: batch " + shape_to_string(batch.shape()) + " does not have " +
                         std::to_string(encoder_.input_dim) + " columns");
  }
  Tensor h = batch;
  const std::size_t layers = encoder_.hidden.size() + 1;
  for (std::size_t i = 0; i < layers; ++i) {
    h = relu(tape, linear(tape, h, "encoder." + std::to_string(i)));
  }
  return h;
}

ForwardResult MemoryWrapModel::forward(Tape& tape, const Tensor& batch,
                                       const Tensor* memory) const {
  ForwardResult out;
  out.encodings = encode(tape, batch);
  if (head_.variant == Variant::Standard) {
    out.logits = linear(tape, out.encodings, "head.0");
    return out;
  }
  if (memory == nullptr || memory->rank() != 2 || memory->rows() == 0) {
    throw ConfigError(std::string(variant_name(head_.variant)) +
                      " forward needs a nonempty memory set");
  }
  Tensor memory_enc = encode(tape, *memory);
  Tensor scores = cosine_rows(tape, out.encodings, memory_enc);
  Tensor weights = sparsemax_rows(tape, scores);
  Tensor v = memory_vector(tape, weights, memory_enc);
  Tensor head_in =
      head_.variant == Variant::MemoryWrap ? row_concat(tape, out.encodings, v) : v;
  Tensor hidden = relu(tape, linear(tape, head_in, "head.0"));
  out.logits = linear(tape, hidden, "head.1");
  out.attention = weights;
  out.memory_vectors = v;
  return out;
}

std::vector<std::size_t> argmax_rows(const Tensor& logits) {
  const std::size_t n = logits.rows(), c = logits.cols();
  std::vector<std::size_t> out(n, 0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 1; j < c; ++j) {
      if (logits.at(i, j) > logits.at(i, out[i])) out[i] = j;
    }
  }
  return out;
}

std::vector<std::size_t> predict(const MemoryWrapModel& model, const Tensor& batch,
                                 const Tensor* memory) {
  Tape tape(Tape::Mode::NoGrad);
  return argmax_rows(model.forward(tape, batch, memory).logits);
}

// --- serialization ----------------------------------------------------------

namespace {

class Writer {
 public:
  void u8(std::uint8_t v) { bytes_.push_back(v); }
  void u16(std::uint16_t v) { put(v, 2); }
  void u32(std::uint64_t v) {
    if (v > 0xffffffffULL) throw FormatError("value too large for u32 field");
    put(v, 4);
  }
  void u64(std::uint64_t v) { put(v, 8); }
  void f64(double v) { put(std::bit_cast<std::uint64_t>(v), 8); }
  void raw(std::string_view s) { bytes_.insert(bytes_.end(), s.begin(), s.end()); }
  std::vector<std::uint8_t> take() { return std::move(bytes_); }

 private:
  void put(std::uint64_t v, int n) {
    for (int i = 0; i < n; ++i) bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  std::vector<std::uint8_t> bytes_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> b) : bytes_(b) {}
  std::uint8_t u8() { return static_cast<std::uint8_t>(get(1, "u8")); }
  std::uint16_t u16() { return static_cast<std::uint16_t>(get(2, "u16")); }
  std::uint32_t u32() { return static_cast<std::uint32_t>(get(4, "u32")); }
  std::uint64_t u64() { return get(8, "u64"); }
  double f64() { return std::bit_cast<double>(get(8, "f64")); }
  std::size_t offset() const { return pos_; }
  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  std::uint64_t get(std::size_t n, const char* what) {
    if (remaining() < n) {
      throw FormatError("model stream truncated at offset " + std::to_string(pos_) +
                        ": need " + std::to_string(n) + " bytes for " + what + ", have " +
                        std::to_string(remaining()));
    }
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < n; ++i) v |= std::uint64_t{bytes_[pos_ + i]} << (8 * i);
    pos_ += n;
    return v;
  }
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::vector<std::uint8_t> serialize_model(const MemoryWrapModel& model) {
  Writer w;
  w.raw("MWRP");
  w.u16(kModelFormatVersion);
  const auto& enc = model.encoder_spec();
  w.u32(enc.input_dim);
  w.u32(enc.hidden.size());
  for (auto h : enc.hidden) w.u32(h);
  w.u32(enc.encoding_dim);
  const auto& head = model.head_spec();
  w.u8(static_cast<std::uint8_t>(head.variant));
  w.u32(head.num_classes);
  w.u32(head.hidden_factor);
  w.u64(model.parameters().count());
  for (const auto& [name, t] : model.parameters()) {
    for (double v : t.values()) w.f64(v);
  }
  return w.take();
}

MemoryWrapModel deserialize_model(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  if (bytes.size() < 4 || bytes[0] != 'M' || bytes[1] != 'W' || bytes[2] != 'R' ||
      bytes[3] != 'P') {
    throw FormatError("model stream: bad magic at offset 0 (expected \"MWRP\")");
  }
  for (int i = 0; i < 4; ++i) r.u8();
  const std::size_t version_at = r.offset();
  const auto version = r.u16();
  if (version != kModelFormatVersion) {
    throw FormatError("model stream: unsupported version " + std::to_string(version) +
                      " at offset " + std::to_string(version_at));
  }
  EncoderSpec enc;
  enc.input_dim = r.u32();
  const auto n_hidden = r.u32();
  if (n_hidden > r.remaining() / 4) {
    throw FormatError("model stream: hidden layer count " + std::to_string(n_hidden) +
                      " exceeds payload at offset " + std::to_string(r.offset()));
  }
  for (std::uint32_t i = 0; i < n_hidden; ++i) enc.hidden.push_back(r.u32());
  enc.encoding_dim = r.u32();
  HeadSpec head;
  const std::size_t variant_at = r.offset();
  const auto variant = r.u8();
  if (variant > 2) {
    throw FormatError("model stream: unknown variant tag " + std::to_string(variant) +
                      " at offset " + std::to_string(variant_at));
  }
  head.variant = static_cast<Variant>(variant);
  head.encoding_dim = enc.encoding_dim;
  head.num_classes = r.u32();
  head.hidden_factor = r.u32();

  MemoryWrapModel model;
  try {
    model = MemoryWrapModel(enc, head, 0);
  } catch (const ConfigError& e) {
    throw FormatError(std::string("model stream: invalid specs: ") + e.what());
  }
  const std::size_t count_at = r.offset();
  const auto count = r.u64();
  if (count != model.parameters().count()) {
    throw FormatError("model stream: parameter count " + std::to_string(count) + " at offset " +
                      std::to_string(count_at) + " does not match specs (" +
                      std::to_string(model.parameters().count()) + ")");
  }
  for (auto& [name, t] : model.parameters()) {
    for (double& v : t.mutable_values()) v = r.f64();
  }
  if (r.remaining() != 0) {
    throw FormatError("model stream: " + std::to_string(r.remaining()) +
                      " trailing bytes at offset " + std::to_string(r.offset()));
  }
  return model;
}

void save_model(const MemoryWrapModel& model, const std::string& path) {
  const auto bytes = serialize_model(model);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write to '" + path + "' failed");
}

MemoryWrapModel load_model(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open model file '" + path + "'");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  return deserialize_model(bytes);
}

}  // namespace memwrap
