#include "memwrap/attention.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>

#include "memwrap/errors.hpp"

namespace memwrap {

double AttentionRow::sum() const { return std::accumulate(weights.begin(), weights.end(), 0.0); }

SimilarityRow cosine_similarity(std::span<const double> query, std::span<const double> memory,
                                std::size_t dim) {
  if (dim == 0 || query.size() != dim || memory.size() % dim != 0) {
    throw DimensionError("cosine_similarity: query of " + std::to_string(query.size()) +
                         " values vs memory of " + std::to_string(memory.size()) +
                         " values at dim " + std::to_string(dim));
  }
  double qq = 0.0;
  for (double v : query) qq += v * v;
  const double qn = std::sqrt(qq);
  SimilarityRow out;
  const std::size_t n = memory.size() / dim;
  out.scores.resize(n);
  for (std::size_t j = 0; j < n; ++j) {
    double dot = 0.0, mm = 0.0;
    for (std::size_t k = 0; k < dim; ++k) {
      dot += query[k] * memory[j * dim + k];
      mm += memory[j * dim + k] * memory[j * dim + k];
    }
    out.scores[j] = dot / (qn * std::sqrt(mm) + kCosineEpsilon);
  }
  return out;
}

AttentionRow sparsemax(std::span<const double> z) {
  if (z.empty()) throw ContractError("sparsemax of an empty vector");
  for (double v : z) {
    if (!std::isfinite(v)) throw NumericError("sparsemax input is not finite");
  }
  std::vector<double> sorted(z.begin(), z.end());
  std::stable_sort(sorted.begin(), sorted.end(), std::greater<>());
  double cumulative = 0.0, support_sum = 0.0;
  std::size_t k = 0;
  for (std::size_t i = 0; i < sorted.size(); ++i) {
    cumulative += sorted[i];
    if (1.0 + static_cast<double>(i + 1) * sorted[i] > cumulative) {
      k = i + 1;
      support_sum = cumulative;
    }
  }
  AttentionRow row;
  row.threshold = (support_sum - 1.0) / static_cast<double>(k);
  row.weights.resize(z.size());
  for (std::size_t i = 0; i < z.size(); ++i) {
    row.weights[i] = std::max(z[i] - row.threshold, 0.0);
    if (row.weights[i] > 0.0) row.support.push_back(i);
  }
  return row;
}

std::vector<double> sparsemax_backward(const AttentionRow& w, std::span<const double> upstream) {
  if (upstream.size() != w.weights.size()) {
    throw DimensionError("sparsemax_backward: upstream has " + std::to_string(upstream.size()) +
                         " entries, weights have " + std::to_string(w.weights.size()));
  }
  std::vector<double> dz(upstream.size(), 0.0);
  if (w.support.empty()) return dz;
  double mean = 0.0;
  for (auto j : w.support) mean += upstream[j];
  mean /= static_cast<double>(w.support.size());
  for (auto j : w.support) dz[j] = upstream[j] - mean;
  return dz;
}

std::vector<double> memory_vector(std::span<const double> memory, std::size_t dim,
                                  const AttentionRow& w) {
  if (dim == 0 || memory.size() != w.weights.size() * dim) {
    throw DimensionError("memory_vector: " + std::to_string(w.weights.size()) +
                         " weights against memory of " + std::to_string(memory.size()) +
                         " values at dim " + std::to_string(dim));
  }
  std::vector<double> v(dim, 0.0);
  for (std::size_t j = 0; j < w.weights.size(); ++j) {
    const double wj = w.weights[j];
    if (wj == 0.0) continue;
    for (std::size_t k = 0; k < dim; ++k) v[k] += wj * memory[j * dim + k];
  }
  return v;
}

// --- tape ops ---------------------------------------------------------------

Tensor cosine_rows(Tape& tape, const Tensor& queries, const Tensor& memory) {
  const std::size_t n = queries.rows(), d = queries.cols(), m = memory.rows();
  if (memory.cols() != d) {
    throw DimensionError("cosine_rows: queries " + shape_to_string(queries.shape()) +
                         " vs memory " + shape_to_string(memory.shape()));
  }
  auto qv = queries.values();
  auto mv = memory.values();
  std::vector<double> qnorm(n), mnorm(m), dots(n * m), out(n * m);
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (std::size_t k = 0; k < d; ++k) s += qv[i * d + k] * qv[i * d + k];
    qnorm[i] = std::sqrt(s);
  }
  for (std::size_t j = 0; j < m; ++j) {
    double s = 0.0;
    for (std::size_t k = 0; k < d; ++k) s += mv[j * d + k] * mv[j * d + k];
    mnorm[j] = std::sqrt(s);
  }
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < m; ++j) {
      double dot = 0.0;
      for (std::size_t k = 0; k < d; ++k) dot += qv[i * d + k] * mv[j * d + k];
      dots[i * m + j] = dot;
      out[i * m + j] = dot / (qnorm[i] * mnorm[j] + kCosineEpsilon);
    }
  }
  Tensor y = tape.make_output({n, m}, std::move(out), {&queries, &memory});
  tape.record(y, {queries, memory},
              [queries, memory, y, qnorm = std::move(qnorm), mnorm = std::move(mnorm),
               dots = std::move(dots), n, m, d]() mutable {
                auto gy = y.grad();
                auto qv = queries.values();
                auto mv = memory.values();
                const bool gq = queries.requires_grad();
                const bool gm = memory.requires_grad();
                std::span<double> dq, dm;
                if (gq) dq = queries.mutable_grad();
                if (gm) dm = memory.mutable_grad();
                for (std::size_t i = 0; i < n; ++i) {
                  for (std::size_t j = 0; j < m; ++j) {
                    const double g = gy[i * m + j];
                    if (g == 0.0) continue;
                    const double denom = qnorm[i] * mnorm[j] + kCosineEpsilon;
                    const double inv = 1.0 / denom;
                    const double dot_over_d2 = dots[i * m + j] * inv * inv;
                    // d(dot/D)/dq = m/D - dot/D^2 * |m| * q/|q|, and symmetrically for m.
                    const double q_coef = qnorm[i] > 0.0 ? dot_over_d2 * mnorm[j] / qnorm[i] : 0.0;
                    const double m_coef = mnorm[j] > 0.0 ? dot_over_d2 * qnorm[i] / mnorm[j] : 0.0;
                    for (std::size_t k = 0; k < d; ++k) {
                      const double q = qv[i * d + k], mk = mv[j * d + k];
                      if (gq) dq[i * d + k] += g * (mk * inv - q_coef * q);
                      if (gm) dm[j * d + k] += g * (q * inv - m_coef * mk);
                    }
                  }
                }
              });
  return y;
}

Tensor sparsemax_rows(Tape& tape, const Tensor& scores) {
  const std::size_t n = scores.rows(), m = scores.cols();
  if (m == 0) throw ContractError("sparsemax_rows: empty rows");
  std::vector<double> out(n * m);
  std::vector<std::vector<std::size_t>> supports(n);
  auto sv = scores.values();
  for (std::size_t i = 0; i < n; ++i) {
    AttentionRow row = sparsemax(sv.subspan(i * m, m));
    double margin = 1e300;
    std::uint64_t pattern = 0;
    for (std::size_t j = 0; j < m; ++j) {
      out[i * m + j] = row.weights[j];
      margin = std::min(margin, std::abs(sv[i * m + j] - row.threshold));
      pattern = pattern * 131 + (row.weights[j] > 0.0 ? 1 : 0);
    }
    tape.note_kinks(margin, pattern);
    supports[i] = std::move(row.support);
  }
  Tensor y = tape.make_output({n, m}, std::move(out), {&scores});
  tape.record(y, {scores}, [scores, y, supports = std::move(supports), n, m]() mutable {
    auto gy = y.grad();
    auto gz = scores.mutable_grad();
    for (std::size_t i = 0; i < n; ++i) {
      const auto& s = supports[i];
      double mean = 0.0;
      for (auto j : s) mean += gy[i * m + j];
      mean /= static_cast<double>(s.size());
      for (auto j : s) gz[i * m + j] += gy[i * m + j] - mean;
    }
  });
  return y;
}

Tensor memory_vector(Tape& tape, const Tensor& weights, const Tensor& memory) {
  if (weights.rank() != 2 || memory.rank() != 2 || weights.cols() != memory.rows()) {
    throw DimensionError("memory_vector: weights " + shape_to_string(weights.shape()) +
                         " vs memory " + shape_to_string(memory.shape()));
  }
  return matmul(tape, weights, memory);
}

AttentionRow attention_row(const Tensor& weights, std::size_t row) {
  const std::size_t m = weights.cols();
  if (row >= weights.rows()) throw IndexError("attention_row: row out of range");
  AttentionRow out;
  auto v = weights.values().subspan(row * m, m);
  out.weights.assign(v.begin(), v.end());
  for (std::size_t j = 0; j < m; ++j) {
    if (out.weights[j] > 0.0) out.support.push_back(j);
  }
  return out;
}

}  // namespace memwrap
