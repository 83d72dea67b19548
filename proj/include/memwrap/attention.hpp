#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "memwrap/tensor.hpp"

namespace memwrap {

inline constexpr double kCosineEpsilon = 1e-12;

// Cosine scores of one query against each memory row, each in [-1, 1].
struct SimilarityRow {
  std::vector<double> scores;
};

// Sparse attention weights on the probability simplex.
struct AttentionRow {
  std::vector<double> weights;
  std::vector<std::size_t> support;  // ascending indices with weight > 0
  double threshold = 0.0;            // tau of the projection

  double sum() const;
};

SimilarityRow cosine_similarity(std::span<const double> query, std::span<const double> memory,
                                std::size_t dim);

// Euclidean projection of z onto the probability simplex (sort-based).
AttentionRow sparsemax(std::span<const double> z);

// Vector-Jacobian product of sparsemax at z: mean-centred upstream on the
// support, zero off it.
std::vector<double> sparsemax_backward(const AttentionRow& w, std::span<const double> upstream);

// v = M^T w for a single attention row.
std::vector<double> memory_vector(std::span<const double> memory, std::size_t dim,
                                  const AttentionRow& w);

// --- tape ops (batched: one row per input against a shared memory) ----------

// scores[i, j] = <q_i, m_j> / (|q_i| |m_j| + eps). queries [n×d], memory [m×d] -> [n×m].
Tensor cosine_rows(Tape& tape, const Tensor& queries, const Tensor& memory);

// Row-wise sparsemax of [n×m] scores.
Tensor sparsemax_rows(Tape& tape, const Tensor& scores);

// Row i of the result is M^T w_i. weights [n×m], memory [m×d] -> [n×d].
Tensor memory_vector(Tape& tape, const Tensor& weights, const Tensor& memory);

// Weights of one row of a [n×m] attention tensor as an AttentionRow.
AttentionRow attention_row(const Tensor& weights, std::size_t row);

}  // namespace memwrap
