#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "memwrap/attention.hpp"
#include "memwrap/data.hpp"
#include "memwrap/model.hpp"

namespace memwrap {

struct IndexWeight {
  std::size_t index;  // position in the memory set
  double weight;
};

// Disjoint cover of the memory set for one input: positive weight and same
// predicted class (examples), positive weight and different predicted class
// (counterfactuals), zero weight.
struct MemoryPartition {
  std::vector<IndexWeight> examples;
  std::vector<IndexWeight> counterfactuals;
  std::vector<std::size_t> zero;
};

MemoryPartition partition_memory(const AttentionRow& attention, std::size_t input_pred,
                                 std::span<const std::size_t> memory_preds);

struct WeightedEntry {
  std::size_t memory_index;  // row of the memory pool dataset
  std::size_t position;      // position within the memory set
  double weight;
  std::size_t memory_pred;
  std::size_t memory_label;
};

struct ExplanationRecord {
  std::size_t input_index = 0;
  std::size_t predicted_class = 0;
  std::size_t true_class = 0;
  std::vector<WeightedEntry> entries;  // positive weights, descending
  std::optional<WeightedEntry> best_example;
  std::optional<WeightedEntry> best_counterfactual;
  bool uncertainty_flag = false;
  // 1-based rank of the best counterfactual's class in the input logits.
  std::optional<std::size_t> counterfactual_class_rank;

  // Highest-weight entry; ties go to the example side, then memory position.
  const WeightedEntry& top() const;
};

// Builds a record from one attention row. memory_indices maps memory
// positions to pool rows. logits (length c) are used only for the rank.
ExplanationRecord build_record(std::size_t input_index, std::size_t predicted_class,
                               std::size_t true_class, const AttentionRow& attention,
                               std::span<const std::size_t> memory_indices,
                               std::span<const std::size_t> memory_preds,
                               std::span<const std::size_t> memory_labels,
                               std::span<const double> logits);

// Explanation extraction over a dataset. Per batch of `batch_size` inputs the
// rng (seeded once with `seed`) yields the batch memory set S, then a second
// set S' against which every sample of S is classified as an input.
struct ExplanationPass {
  std::vector<ExplanationRecord> records;
  std::vector<MemorySet> batch_memory;       // S per batch
  std::vector<std::size_t> batch_of_input;   // input -> batch
  std::size_t correct = 0;                   // true-label accuracy numerator
};

ExplanationPass explain_dataset(const MemoryWrapModel& model, const Dataset& data,
                                const Dataset& memory_pool, std::size_t memory_size,
                                std::size_t batch_size, std::uint64_t seed);

// Fraction of inputs whose top-weight memory sample, classified as an input
// against a fresh memory set, gets the input's predicted class.
double explanation_accuracy(const ExplanationPass& pass);
double explanation_accuracy(const MemoryWrapModel& model, const Dataset& data,
                            const Dataset& memory_pool, std::size_t memory_size,
                            std::size_t batch_size, std::uint64_t seed);

struct CounterfactualSplit {
  std::optional<double> accuracy_flagged;  // absent when nothing is flagged
  std::optional<double> accuracy_rest;
  double fraction_flagged = 0.0;
  std::size_t flagged = 0;
  std::size_t rest = 0;
};

CounterfactualSplit counterfactual_split_accuracy(const ExplanationPass& pass);
CounterfactualSplit counterfactual_split_accuracy(const MemoryWrapModel& model,
                                                  const Dataset& data, const Dataset& memory_pool,
                                                  std::size_t memory_size, std::size_t batch_size,
                                                  std::uint64_t seed);

enum class VoteMode { Labels, Predictions };

// Most common label (or prediction) among positive-weight entries. Ties go to
// the larger total attention mass, then the lower class index.
std::size_t major_voting(std::span<const WeightedEntry> entries, VoteMode mode);

struct VotingAccuracy {
  double labels = 0.0;
  double predictions = 0.0;
  double agreement = 0.0;  // fraction of inputs where both modes pick the same class
};
VotingAccuracy major_voting_accuracy(const ExplanationPass& pass);

// --- Integrated Gradients ----------------------------------------------------

struct Baseline {
  std::string name;
  std::vector<double> values;  // one feature row, applied to input and every memory row
};
Baseline white_baseline(std::size_t dim);
Baseline black_baseline(std::size_t dim);

struct AttributionMap {
  std::vector<double> input;   // [dim]
  std::vector<double> memory;  // [memory_rows × dim]
  std::size_t memory_rows = 0;
  std::size_t dim = 0;
  std::size_t target = 0;
  std::string baseline;
  std::size_t steps = 0;       // requested budget
  std::size_t evaluations = 0; // gradient evaluations actually used
  std::size_t pieces = 1;      // smooth pieces of the path (KinkAware)
  double value_at_input = 0.0;
  double value_at_baseline = 0.0;

  double total() const;
  // F(x, S) - F(x', S')
  double delta() const { return value_at_input - value_at_baseline; }
};

// Scalar function of (input [1×d], memory [m×d]) to attribute.
using AttributionTarget = std::function<Tensor(Tape&, const Tensor&, const Tensor&)>;

// Uniform: (x - x') * mean of the gradients at the `steps` midpoints
// (t - 1/2) / steps. KinkAware: the path is first cut where the activation
// pattern (relu signs, sparsemax supports) changes, and each smooth piece is
// integrated by composite 2-point Gauss-Legendre on about steps / 2 cells
// split by length (at least one per piece). The integrand jumps at those
// cuts, which the uniform rule only resolves to O(1/steps).
enum class IgQuadrature { Uniform, KinkAware };

// Path integral from the baseline to (input, memory), jointly
// over the input and all memory rows.
AttributionMap integrated_gradients(const AttributionTarget& f, std::span<const double> input,
                                    std::span<const double> memory, const Baseline& baseline,
                                    std::size_t steps,
                                    IgQuadrature quadrature = IgQuadrature::KinkAware);

// Attributes logit `target` of the model; attention is recomputed at every
// interpolation point. The model is not modified.
AttributionMap integrated_gradients(const MemoryWrapModel& model, std::span<const double> input,
                                    std::span<const double> memory, std::size_t target,
                                    const Baseline& baseline, std::size_t steps,
                                    IgQuadrature quadrature = IgQuadrature::KinkAware);

}  // namespace memwrap
