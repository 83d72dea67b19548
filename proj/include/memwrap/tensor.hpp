#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace memwrap {

using Shape = std::vector<std::size_t>;

std::string shape_to_string(const Shape& shape);
std::size_t shape_size(const Shape& shape);

namespace detail {
struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // empty until first needed
  bool requires_grad = false;
  bool leaf = true;
};
}  // namespace detail

// Dense row-major float64 tensor. Copies share storage (handle semantics), so
// a tensor produced on a tape stays reachable from the op that produced it.
// Use clone() for an independent copy.
class Tensor {
 public:
  Tensor();
  Tensor(Shape shape, std::vector<double> values, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> values,
                       bool requires_grad = false);
  static Tensor scalar(double v, bool requires_grad = false);

  const Shape& shape() const { return node_->shape; }
  std::size_t size() const { return node_->value.size(); }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t rows() const;
  std::size_t cols() const;

  std::span<const double> values() const { return node_->value; }
  std::span<double> mutable_values() { return node_->value; }
  double at(std::size_t r, std::size_t c) const { return node_->value[r * cols() + c]; }
  double item() const;

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool on);
  bool is_leaf() const { return node_->leaf; }

  // Gradient buffer; all zeros if nothing has been accumulated yet.
  std::span<const double> grad() const;
  std::span<double> mutable_grad() const;
  void zero_grad();

  Tensor clone() const;
  Tensor detach() const { return Tensor(shape(), node_->value, false); }

  bool same_storage(const Tensor& other) const { return node_ == other.node_; }

 private:
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
  std::shared_ptr<detail::Node> node_;

  friend class Tape;
};

// Records differentiable ops in execution order. A tape in NoGrad mode runs
// forward math only and records nothing.
class Tape {
 public:
  enum class Mode { Record, NoGrad };

  explicit Tape(Mode mode = Mode::Record) : mode_(mode) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  Tape(Tape&&) = default;
  Tape& operator=(Tape&&) = default;

  bool recording() const { return mode_ == Mode::Record; }
  std::size_t size() const { return ops_.size(); }
  void clear();

  // Output tensor for an op. requires_grad iff recording and any input needs it.
  Tensor make_output(Shape shape, std::vector<double> values,
                     std::initializer_list<const Tensor*> inputs);

  // Registers the backward rule of an op whose output came from make_output.
  // The rule reads output.grad() and accumulates into input grads.
  void record(const Tensor& output, std::vector<Tensor> inputs, std::function<void()> rule);

  // Non-differentiable points seen during forward (relu at 0, sparsemax
  // threshold crossings). margin is the distance to the nearest kink; pattern
  // hashes the active set so two evaluations can be compared.
  void note_kinks(double margin, std::uint64_t pattern);
  double kink_margin() const { return kink_margin_; }
  std::uint64_t activation_signature() const { return signature_; }

  void backward(const Tensor& loss);

 private:
  struct Op {
    Tensor output;
    std::vector<Tensor> inputs;
    std::function<void()> rule;
  };
  Mode mode_;
  std::vector<Op> ops_;
  double kink_margin_ = 1e300;
  std::uint64_t signature_ = 1469598103934665603ULL;
};

// Populates grads of every requires_grad leaf reachable from loss. Repeated
// calls accumulate into leaves; intermediate grads are reset each call.
void backward(const Tensor& loss, Tape& tape);

class ParameterSet {
 public:
  void add(std::string name, Tensor tensor);
  std::size_t size() const { return entries_.size(); }
  std::size_t count() const;  // total scalar parameters

  const Tensor& get(const std::string& name) const;
  Tensor& get(const std::string& name);

  auto begin() { return entries_.begin(); }
  auto end() { return entries_.end(); }
  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }

  void zero_grad();
  double max_abs_grad() const;

 private:
  std::vector<std::pair<std::string, Tensor>> entries_;
};

// --- differentiable primitives ---------------------------------------------

Tensor matmul(Tape& tape, const Tensor& a, const Tensor& b);
// x[n×k] + bias[1×k] broadcast over rows.
Tensor add_row_bias(Tape& tape, const Tensor& x, const Tensor& bias);
Tensor add(Tape& tape, const Tensor& a, const Tensor& b);
Tensor scale(Tape& tape, const Tensor& a, double factor);
Tensor relu(Tape& tape, const Tensor& a);
Tensor row_concat(Tape& tape, const Tensor& a, const Tensor& b);
Tensor sum(Tape& tape, const Tensor& a);
Tensor element(Tape& tape, const Tensor& a, std::size_t row, std::size_t col);
Tensor cross_entropy(Tape& tape, const Tensor& logits, std::span<const std::size_t> targets);

// Row-wise softmax without tape; for probability reports only.
std::vector<double> softmax_rows(const Tensor& logits);

}  // namespace memwrap
