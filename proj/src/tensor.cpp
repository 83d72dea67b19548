#include "memwrap/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "memwrap/errors.hpp"

namespace memwrap {

std::string shape_to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

std::size_t shape_size(const Shape& shape) {
  std::size_t n = 1;
  for (auto e : shape) n *= e;
  return n;
}

Tensor::Tensor() : node_(std::make_shared<detail::Node>()) { node_->shape = {0}; }

Tensor::Tensor(Shape shape, std::vector<double> values, bool requires_grad)
    : node_(std::make_shared<detail::Node>()) {
  if (shape_size(shape) != values.size()) {
    throw DimensionError("tensor shape " + shape_to_string(shape) + " holds " +
                         std::to_string(shape_size(shape)) + " values, got " +
                         std::to_string(values.size()));
  }
  node_->shape = std::move(shape);
  node_->value = std::move(values);
  node_->requires_grad = requires_grad;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  auto n = shape_size(shape);
  return Tensor(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::vector<double> values,
                      bool requires_grad) {
  return Tensor({rows, cols}, std::move(values), requires_grad);
}

Tensor Tensor::scalar(double v, bool requires_grad) { return Tensor({1}, {v}, requires_grad); }

std::size_t Tensor::rows() const {
  if (rank() != 2) throw DimensionError("expected a matrix, got shape " + shape_to_string(shape()));
  return node_->shape[0];
}

std::size_t Tensor::cols() const {
  if (rank() != 2) throw DimensionError("expected a matrix, got shape " + shape_to_string(shape()));
  return node_->shape[1];
}

double Tensor::item() const {
  if (size() != 1) throw ContractError("item() on non-scalar tensor " + shape_to_string(shape()));
  return node_->value[0];
}

void Tensor::set_requires_grad(bool on) { node_->requires_grad = on; }

std::span<const double> Tensor::grad() const {
  if (node_->grad.size() != node_->value.size()) node_->grad.assign(node_->value.size(), 0.0);
  return node_->grad;
}

std::span<double> Tensor::mutable_grad() const {
  if (node_->grad.size() != node_->value.size()) node_->grad.assign(node_->value.size(), 0.0);
  return node_->grad;
}

void Tensor::zero_grad() { std::fill(node_->grad.begin(), node_->grad.end(), 0.0); }

Tensor Tensor::clone() const {
  Tensor t(shape(), node_->value, node_->requires_grad);
  return t;
}

// --- Tape -------------------------------------------------------------------

void Tape::clear() {
  ops_.clear();
  kink_margin_ = 1e300;
  signature_ = 1469598103934665603ULL;
}

Tensor Tape::make_output(Shape shape, std::vector<double> values,
                         std::initializer_list<const Tensor*> inputs) {
  for (double v : values) {
    if (!std::isfinite(v)) {
      throw NumericError("non-finite value produced by forward op (shape " +
                         shape_to_string(shape) + ")");
    }
  }
  bool needs = false;
  if (recording()) {
    for (const Tensor* t : inputs) needs = needs || t->requires_grad();
  }
  Tensor out(std::move(shape), std::move(values), needs);
  out.node_->leaf = false;
  return out;
}

void Tape::record(const Tensor& output, std::vector<Tensor> inputs, std::function<void()> rule) {
  if (!recording() || !output.requires_grad()) return;
  ops_.push_back(Op{output, std::move(inputs), std::move(rule)});
}

void Tape::note_kinks(double margin, std::uint64_t pattern) {
  kink_margin_ = std::min(kink_margin_, margin);
  signature_ = (signature_ ^ pattern) * 1099511628211ULL;
}

void Tape::backward(const Tensor& loss) {
  if (loss.size() != 1) {
    throw ContractError("backward needs a scalar loss, got shape " +
                        shape_to_string(loss.shape()));
  }
  if (!loss.requires_grad()) return;
  if (!loss.is_leaf()) {
    bool found = false;
    for (const auto& op : ops_) found = found || op.output.same_storage(loss);
    if (!found) throw ContractError("loss was not produced on this tape");
  }
  for (auto& op : ops_) {
    auto g = op.output.mutable_grad();
    std::fill(g.begin(), g.end(), 0.0);
  }
  Tensor seed = loss;
  seed.mutable_grad()[0] += 1.0;
  for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) it->rule();
}

void backward(const Tensor& loss, Tape& tape) { tape.backward(loss); }

// --- ParameterSet -----------------------------------------------------------

void ParameterSet::add(std::string name, Tensor tensor) {
  for (const auto& [n, t] : entries_) {
    if (n == name) throw ContractError("duplicate parameter name '" + name + "'");
  }
  entries_.emplace_back(std::move(name), std::move(tensor));
}

std::size_t ParameterSet::count() const {
  std::size_t n = 0;
  for (const auto& [name, t] : entries_) n += t.size();
  return n;
}

const Tensor& ParameterSet::get(const std::string& name) const {
  for (const auto& [n, t] : entries_) {
    if (n == name) return t;
  }
  throw ContractError("no parameter named '" + name + "'");
}

Tensor& ParameterSet::get(const std::string& name) {
  for (auto& [n, t] : entries_) {
    if (n == name) return t;
  }
  throw ContractError("no parameter named '" + name + "'");
}

void ParameterSet::zero_grad() {
  for (auto& [n, t] : entries_) t.zero_grad();
}

double ParameterSet::max_abs_grad() const {
  double m = 0.0;
  for (const auto& [n, t] : entries_) {
    for (double g : t.grad()) m = std::max(m, std::abs(g));
  }
  return m;
}

// --- primitives -------------------------------------------------------------

namespace {

void require_matrix(const Tensor& t, const char* op) {
  if (t.rank() != 2) {
    throw DimensionError(std::string(op) + ": expected a matrix, got shape " +
                         shape_to_string(t.shape()));
  }
}

}  // namespace

Tensor matmul(Tape& tape, const Tensor& a, const Tensor& b) {
  require_matrix(a, "matmul");
  require_matrix(b, "matmul");
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  if (b.rows() != k) {
    throw DimensionError("matmul: inner dimensions disagree, " + shape_to_string(a.shape()) +
                         " x " + shape_to_string(b.shape()));
  }
  auto av = a.values();
  auto bv = b.values();
  std::vector<double> out(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = av[i * k + p];
      for (std::size_t j = 0; j < n; ++j) out[i * n + j] += aip * bv[p * n + j];
    }
  }
  Tensor c = tape.make_output({m, n}, std::move(out), {&a, &b});
  tape.record(c, {a, b}, [a, b, c, m, k, n]() mutable {
    auto gc = c.grad();
    if (a.requires_grad()) {
      auto ga = a.mutable_grad();
      auto bv = b.values();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          double s = 0.0;
          for (std::size_t j = 0; j < n; ++j) s += gc[i * n + j] * bv[p * n + j];
          ga[i * k + p] += s;
        }
    }
    if (b.requires_grad()) {
      auto gb = b.mutable_grad();
      auto av = a.values();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          const double aip = av[i * k + p];
          for (std::size_t j = 0; j < n; ++j) gb[p * n + j] += aip * gc[i * n + j];
        }
    }
  });
  return c;
}

Tensor add_row_bias(Tape& tape, const Tensor& x, const Tensor& bias) {
  require_matrix(x, "add_row_bias");
  const std::size_t n = x.rows(), k = x.cols();
  if (bias.size() != k) {
    throw DimensionError("add_row_bias: bias " + shape_to_string(bias.shape()) +
                         " does not match columns of " + shape_to_string(x.shape()));
  }
  auto xv = x.values();
  auto bv = bias.values();
  std::vector<double> out(xv.begin(), xv.end());
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < k; ++j) out[i * k + j] += bv[j];
  Tensor y = tape.make_output({n, k}, std::move(out), {&x, &bias});
  tape.record(y, {x, bias}, [x, bias, y, n, k]() mutable {
    auto gy = y.grad();
    if (x.requires_grad()) {
      auto gx = x.mutable_grad();
      for (std::size_t i = 0; i < n * k; ++i) gx[i] += gy[i];
    }
    if (bias.requires_grad()) {
      auto gb = bias.mutable_grad();
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < k; ++j) gb[j] += gy[i * k + j];
    }
  });
  return y;
}

Tensor add(Tape& tape, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError("add: shapes differ, " + shape_to_string(a.shape()) + " vs " +
                         shape_to_string(b.shape()));
  }
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] + b.values()[i];
  Tensor y = tape.make_output(a.shape(), std::move(out), {&a, &b});
  tape.record(y, {a, b}, [a, b, y]() mutable {
    auto gy = y.grad();
    if (a.requires_grad()) {
      auto g = a.mutable_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += gy[i];
    }
    if (b.requires_grad()) {
      auto g = b.mutable_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += gy[i];
    }
  });
  return y;
}

Tensor scale(Tape& tape, const Tensor& a, double factor) {
  std::vector<double> out(a.values().begin(), a.values().end());
  for (double& v : out) v *= factor;
  Tensor y = tape.make_output(a.shape(), std::move(out), {&a});
  tape.record(y, {a}, [a, y, factor]() mutable {
    auto gy = y.grad();
    auto g = a.mutable_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += factor * gy[i];
  });
  return y;
}

Tensor relu(Tape& tape, const Tensor& a) {
  auto av = a.values();
  std::vector<double> out(av.size());
  double margin = 1e300;
  std::uint64_t pattern = 0;
  for (std::size_t i = 0; i < av.size(); ++i) {
    out[i] = av[i] > 0.0 ? av[i] : 0.0;
    margin = std::min(margin, std::abs(av[i]));
    pattern = pattern * 31 + (av[i] > 0.0 ? 1 : 0);
  }
  tape.note_kinks(margin, pattern);
  Tensor y = tape.make_output(a.shape(), std::move(out), {&a});
  tape.record(y, {a}, [a, y]() mutable {
    auto gy = y.grad();
    auto g = a.mutable_grad();
    auto av = a.values();
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (av[i] > 0.0) g[i] += gy[i];
    }
  });
  return y;
}

Tensor row_concat(Tape& tape, const Tensor& a, const Tensor& b) {
  require_matrix(a, "row_concat");
  require_matrix(b, "row_concat");
  if (a.rows() != b.rows()) {
    throw DimensionError("row_concat: row counts differ, " + shape_to_string(a.shape()) +
                         " vs " + shape_to_string(b.shape()));
  }
  const std::size_t n = a.rows(), p = a.cols(), q = b.cols(), w = p + q;
  std::vector<double> out(n * w);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < p; ++j) out[i * w + j] = a.values()[i * p + j];
    for (std::size_t j = 0; j < q; ++j) out[i * w + p + j] = b.values()[i * q + j];
  }
  Tensor y = tape.make_output({n, w}, std::move(out), {&a, &b});
  tape.record(y, {a, b}, [a, b, y, n, p, q, w]() mutable {
    auto gy = y.grad();
    if (a.requires_grad()) {
      auto g = a.mutable_grad();
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < p; ++j) g[i * p + j] += gy[i * w + j];
    }
    if (b.requires_grad()) {
      auto g = b.mutable_grad();
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < q; ++j) g[i * q + j] += gy[i * w + p + j];
    }
  });
  return y;
}

Tensor sum(Tape& tape, const Tensor& a) {
  double s = 0.0;
  for (double v : a.values()) s += v;
  Tensor y = tape.make_output({1}, {s}, {&a});
  tape.record(y, {a}, [a, y]() mutable {
    const double gy = y.grad()[0];
    for (double& g : a.mutable_grad()) g += gy;
  });
  return y;
}

Tensor element(Tape& tape, const Tensor& a, std::size_t row, std::size_t col) {
  require_matrix(a, "element");
  if (row >= a.rows() || col >= a.cols()) {
    throw IndexError("element: (" + std::to_string(row) + ", " + std::to_string(col) +
                     ") out of range for " + shape_to_string(a.shape()));
  }
  const std::size_t idx = row * a.cols() + col;
  Tensor y = tape.make_output({1}, {a.values()[idx]}, {&a});
  tape.record(y, {a}, [a, y, idx]() mutable { a.mutable_grad()[idx] += y.grad()[0]; });
  return y;
}

Tensor cross_entropy(Tape& tape, const Tensor& logits, std::span<const std::size_t> targets) {
  require_matrix(logits, "cross_entropy");
  const std::size_t n = logits.rows(), c = logits.cols();
  if (targets.size() != n) {
    throw DimensionError("cross_entropy: " + std::to_string(targets.size()) + " targets for " +
                         std::to_string(n) + " rows");
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (targets[i] >= c) {
      throw IndexError("cross_entropy: target " + std::to_string(targets[i]) +
                       " out of range for " + std::to_string(c) + " classes");
    }
  }
  auto lv = logits.values();
  std::vector<double> probs(n * c);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double* row = &lv[i * c];
    const double mx = *std::max_element(row, row + c);
    double z = 0.0;
    for (std::size_t j = 0; j < c; ++j) z += std::exp(row[j] - mx);
    const double lse = mx + std::log(z);
    total += lse - row[targets[i]];
    for (std::size_t j = 0; j < c; ++j) probs[i * c + j] = std::exp(row[j] - lse);
  }
  Tensor y = tape.make_output({1}, {total / static_cast<double>(n)}, {&logits});
  std::vector<std::size_t> tgt(targets.begin(), targets.end());
  tape.record(y, {logits},
              [logits, y, probs = std::move(probs), tgt = std::move(tgt), n, c]() mutable {
                const double gy = y.grad()[0] / static_cast<double>(n);
                auto g = logits.mutable_grad();
                for (std::size_t i = 0; i < n; ++i) {
                  for (std::size_t j = 0; j < c; ++j) {
                    const double onehot = (j == tgt[i]) ? 1.0 : 0.0;
                    g[i * c + j] += gy * (probs[i * c + j] - onehot);
                  }
                }
              });
  return y;
}

std::vector<double> softmax_rows(const Tensor& logits) {
  const std::size_t n = logits.rows(), c = logits.cols();
  auto lv = logits.values();
  std::vector<double> out(n * c);
  for (std::size_t i = 0; i < n; ++i) {
    const double* row = &lv[i * c];
    const double mx = *std::max_element(row, row + c);
    double z = 0.0;
    for (std::size_t j = 0; j < c; ++j) z += std::exp(row[j] - mx);
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] = std::exp(row[j] - mx) / z;
  }
  return out;
}

}  // namespace memwrap
