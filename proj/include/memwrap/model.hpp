#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "memwrap/tensor.hpp"

namespace memwrap {

enum class Variant : std::uint8_t { Standard = 0, MemoryWrap = 1, OnlyMemory = 2 };

std::string_view variant_name(Variant v);
Variant parse_variant(std::string_view name);  // "standard" | "memory_wrap" | "only_memory"
inline bool uses_memory(Variant v) { return v != Variant::Standard; }

// MLP encoder: input_dim -> hidden... -> encoding_dim, relu after every layer.
struct EncoderSpec {
  std::size_t input_dim = 64;
  std::vector<std::size_t> hidden;
  std::size_t encoding_dim = 16;

  void validate() const;
  std::size_t parameter_count() const;
  bool operator==(const EncoderSpec&) const = default;
};

struct HeadSpec {
  Variant variant = Variant::MemoryWrap;
  std::size_t encoding_dim = 16;
  std::size_t num_classes = 10;
  std::size_t hidden_factor = 2;

  // 2d for MemoryWrap, d otherwise.
  std::size_t input_width() const;
  // hidden_factor * input_width for the MLP heads; 0 for the linear Standard head.
  std::size_t hidden_width() const;
  void validate() const;
  bool operator==(const HeadSpec&) const = default;
};

// Total parameters when a network whose encoder body has `body_params`
// parameters (classifier excluded) is topped with the head of `variant`.
// Standard adds a d->c linear layer; the memory variants add a one-hidden-layer
// MLP a -> 2a -> c, biases included, with a = 2d (MemoryWrap) or d (OnlyMemory).
std::uint64_t count_parameters(std::uint64_t body_params, std::uint64_t d, std::uint64_t c,
                               Variant variant);
// Recovers the encoder body from a total that already includes a d->c linear
// classifier (how published parameter tables usually report baselines).
std::uint64_t body_from_standard_total(std::uint64_t standard_total, std::uint64_t d,
                                       std::uint64_t c);

struct ForwardResult {
  Tensor logits;                        // [n×c], raw scores
  Tensor encodings;                     // [n×d]
  std::optional<Tensor> attention;      // [n×m], absent for Standard
  std::optional<Tensor> memory_vectors; // [n×d], absent for Standard
};

class MemoryWrapModel {
 public:
  // Weights and biases drawn uniformly in ±1/sqrt(fan_in) from `seed`.
  MemoryWrapModel(EncoderSpec encoder, HeadSpec head, std::uint64_t seed);

  const EncoderSpec& encoder_spec() const { return encoder_; }
  const HeadSpec& head_spec() const { return head_; }
  Variant variant() const { return head_.variant; }
  std::size_t num_classes() const { return head_.num_classes; }

  ParameterSet& parameters() { return params_; }
  const ParameterSet& parameters() const { return params_; }
  std::size_t encoder_parameter_count() const;

  // Deep copy; parameters do not share storage with this model.
  MemoryWrapModel clone() const;
  void set_trainable(bool on);

  Tensor encode(Tape& tape, const Tensor& batch) const;

  // `memory` holds raw memory samples [m×d_in]; required for memory variants,
  // ignored by Standard.
  ForwardResult forward(Tape& tape, const Tensor& batch, const Tensor* memory) const;

 private:
  MemoryWrapModel() = default;
  Tensor linear(Tape& tape, const Tensor& x, const std::string& prefix) const;

  EncoderSpec encoder_;
  HeadSpec head_;
  ParameterSet params_;

  friend MemoryWrapModel deserialize_model(std::span<const std::uint8_t> bytes);
};

// argmax per row, ties to the lowest class index.
std::vector<std::size_t> argmax_rows(const Tensor& logits);

// Convenience: no-grad forward and argmax.
std::vector<std::size_t> predict(const MemoryWrapModel& model, const Tensor& batch,
                                 const Tensor* memory);

// Binary model file: "MWRP", u16 version, specs, then float64 parameters in
// ParameterSet order, all little-endian.
inline constexpr std::uint16_t kModelFormatVersion = 1;
std::vector<std::uint8_t> serialize_model(const MemoryWrapModel& model);
MemoryWrapModel deserialize_model(std::span<const std::uint8_t> bytes);

void save_model(const MemoryWrapModel& model, const std::string& path);
MemoryWrapModel load_model(const std::string& path);

}  // namespace memwrap
