#include "memwrap/explain.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>

#include "memwrap/errors.hpp"

namespace memwrap {

MemoryPartition partition_memory(const AttentionRow& attention, std::size_t input_pred,
                                 std::span<const std::size_t> memory_preds) {
  if (memory_preds.size() != attention.weights.size()) {
    throw DimensionError("partition_memory: " + std::to_string(memory_preds.size()) +
                         " memory predictions for " + std::to_string(attention.weights.size()) +
                         " weights");
  }
  MemoryPartition p;
  for (std::size_t j = 0; j < attention.weights.size(); ++j) {
    const double w = attention.weights[j];
    if (w > 0.0) {
      (memory_preds[j] == input_pred ? p.examples : p.counterfactuals).push_back({j, w});
    } else {
      p.zero.push_back(j);
    }
  }
  return p;
}

const WeightedEntry& ExplanationRecord::top() const {
  if (entries.empty()) throw ContractError("explanation record has no positive weights");
  return entries.front();
}

ExplanationRecord build_record(std::size_t input_index, std::size_t predicted_class,
                               std::size_t true_class, const AttentionRow& attention,
                               std::span<const std::size_t> memory_indices,
                               std::span<const std::size_t> memory_preds,
                               std::span<const std::size_t> memory_labels,
                               std::span<const double> logits) {
  const std::size_t m = attention.weights.size();
  if (memory_indices.size() != m || memory_labels.size() != m) {
    throw DimensionError("build_record: memory bookkeeping does not match attention length");
  }
  const MemoryPartition part = partition_memory(attention, predicted_class, memory_preds);
  ExplanationRecord rec;
  rec.input_index = input_index;
  rec.predicted_class = predicted_class;
  rec.true_class = true_class;
  auto entry = [&](const IndexWeight& iw) {
    return WeightedEntry{memory_indices[iw.index], iw.index, iw.weight, memory_preds[iw.index],
                         memory_labels[iw.index]};
  };
  for (const auto& iw : part.examples) rec.entries.push_back(entry(iw));
  for (const auto& iw : part.counterfactuals) rec.entries.push_back(entry(iw));
  std::sort(rec.entries.begin(), rec.entries.end(),
            [predicted_class](const WeightedEntry& a, const WeightedEntry& b) {
              if (a.weight != b.weight) return a.weight > b.weight;
              const bool ea = a.memory_pred == predicted_class;
              const bool eb = b.memory_pred == predicted_class;
              if (ea != eb) return ea;
              return a.position < b.position;
            });
  for (const auto& e : rec.entries) {
    const bool example = e.memory_pred == predicted_class;
    if (example && !rec.best_example) rec.best_example = e;
    if (!example && !rec.best_counterfactual) rec.best_counterfactual = e;
  }
  rec.uncertainty_flag =
      rec.best_counterfactual &&
      (!rec.best_example || rec.best_counterfactual->weight > rec.best_example->weight);
  if (rec.best_counterfactual && rec.best_counterfactual->memory_pred < logits.size()) {
    const std::size_t cls = rec.best_counterfactual->memory_pred;
    std::size_t rank = 1;
    for (std::size_t j = 0; j < logits.size(); ++j) {
      if (logits[j] > logits[cls] || (logits[j] == logits[cls] && j < cls)) ++rank;
    }
    rec.counterfactual_class_rank = rank;
  }
  return rec;
}

ExplanationPass explain_dataset(const MemoryWrapModel& model, const Dataset& data,
                                const Dataset& memory_pool, std::size_t memory_size,
                                std::size_t batch_size, std::uint64_t seed) {
  if (!uses_memory(model.variant())) {
    throw ConfigError("no attention weights to explain: model variant is standard");
  }
  if (batch_size == 0) throw ConfigError("explanation batch size must be >= 1");
  ExplanationPass pass;
  std::mt19937_64 rng(seed);
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < data.size(); start += batch_size) {
    const std::size_t end = std::min(data.size(), start + batch_size);
    idx.resize(end - start);
    for (std::size_t i = start; i < end; ++i) idx[i - start] = i;

    const MemorySet batch_memory = sample_memory_set(memory_pool, memory_size, rng);
    const MemorySet probe_memory = sample_memory_set(memory_pool, memory_size, rng);
    const Tensor mem = gather_rows(memory_pool, batch_memory.indices);
    const Tensor probe = gather_rows(memory_pool, probe_memory.indices);

    // Pre-pass: every memory sample classified as an input against S'.
    const auto memory_preds = predict(model, mem, &probe);
    const auto memory_labels = gather_labels(memory_pool, batch_memory.indices);

    Tape tape(Tape::Mode::NoGrad);
    const ForwardResult out = model.forward(tape, gather_rows(data, idx), &mem);
    const auto preds = argmax_rows(out.logits);
    const std::size_t c = out.logits.cols();
    for (std::size_t r = 0; r < idx.size(); ++r) {
      const AttentionRow row = attention_row(*out.attention, r);
      pass.records.push_back(build_record(idx[r], preds[r], data.labels[idx[r]], row,
                                          batch_memory.indices, memory_preds, memory_labels,
                                          out.logits.values().subspan(r * c, c)));
      pass.batch_of_input.push_back(pass.batch_memory.size());
      pass.correct += preds[r] == data.labels[idx[r]];
    }
    pass.batch_memory.push_back(batch_memory);
  }
  return pass;
}

double explanation_accuracy(const ExplanationPass& pass) {
  if (pass.records.empty()) return 0.0;
  std::size_t agree = 0;
  for (const auto& rec : pass.records) agree += rec.top().memory_pred == rec.predicted_class;
  return static_cast<double>(agree) / static_cast<double>(pass.records.size());
}

double explanation_accuracy(const MemoryWrapModel& model, const Dataset& data,
                            const Dataset& memory_pool, std::size_t memory_size,
                            std::size_t batch_size, std::uint64_t seed) {
  return explanation_accuracy(
      explain_dataset(model, data, memory_pool, memory_size, batch_size, seed));
}

CounterfactualSplit counterfactual_split_accuracy(const ExplanationPass& pass) {
  CounterfactualSplit out;
  std::size_t flagged_ok = 0, rest_ok = 0;
  for (const auto& rec : pass.records) {
    const bool ok = rec.predicted_class == rec.true_class;
    if (rec.uncertainty_flag) {
      ++out.flagged;
      flagged_ok += ok;
    } else {
      ++out.rest;
      rest_ok += ok;
    }
  }
  if (out.flagged) out.accuracy_flagged = static_cast<double>(flagged_ok) / static_cast<double>(out.flagged);
  if (out.rest) out.accuracy_rest = static_cast<double>(rest_ok) / static_cast<double>(out.rest);
  if (!pass.records.empty()) {
    out.fraction_flagged = static_cast<double>(out.flagged) / static_cast<double>(pass.records.size());
  }
  return out;
}

CounterfactualSplit counterfactual_split_accuracy(const MemoryWrapModel& model,
                                                  const Dataset& data, const Dataset& memory_pool,
                                                  std::size_t memory_size, std::size_t batch_size,
                                                  std::uint64_t seed) {
  return counterfactual_split_accuracy(
      explain_dataset(model, data, memory_pool, memory_size, batch_size, seed));
}

std::size_t major_voting(std::span<const WeightedEntry> entries, VoteMode mode) {
  struct Tally {
    std::size_t votes = 0;
    double mass = 0.0;
  };
  std::map<std::size_t, Tally> tally;
  for (const auto& e : entries) {
    if (!(e.weight > 0.0)) continue;
    auto& t = tally[mode == VoteMode::Labels ? e.memory_label : e.memory_pred];
    ++t.votes;
    t.mass += e.weight;
  }
  if (tally.empty()) throw ContractError("major_voting needs at least one positive-weight sample");
  auto best = tally.begin();
  // std::map iterates classes in ascending order, so strict comparisons keep
  // the lower class index on a full tie.
  for (auto it = std::next(tally.begin()); it != tally.end(); ++it) {
    if (it->second.votes > best->second.votes ||
        (it->second.votes == best->second.votes && it->second.mass > best->second.mass)) {
      best = it;
    }
  }
  return best->first;
}

VotingAccuracy major_voting_accuracy(const ExplanationPass& pass) {
  VotingAccuracy out;
  if (pass.records.empty()) return out;
  std::size_t by_label = 0, by_pred = 0, agree = 0;
  for (const auto& rec : pass.records) {
    const auto a = major_voting(rec.entries, VoteMode::Labels);
    const auto b = major_voting(rec.entries, VoteMode::Predictions);
    by_label += a == rec.true_class;
    by_pred += b == rec.true_class;
    agree += a == b;
  }
  const double n = static_cast<double>(pass.records.size());
  out.labels = static_cast<double>(by_label) / n;
  out.predictions = static_cast<double>(by_pred) / n;
  out.agreement = static_cast<double>(agree) / n;
  return out;
}

// --- Integrated Gradients ----------------------------------------------------

Baseline white_baseline(std::size_t dim) { return Baseline{"white", std::vector<double>(dim, 1.0)}; }
Baseline black_baseline(std::size_t dim) { return Baseline{"black", std::vector<double>(dim, 0.0)}; }

double AttributionMap::total() const {
  double s = 0.0;
  for (double v : input) s += v;
  for (double v : memory) s += v;
  return s;
}

namespace {

// Cuts of [0, 1] where the activation pattern of f changes along the path,
// located by bisection to within `resolution`.
void find_breaks(const std::function<std::uint64_t(double)>& signature, double a, std::uint64_t sa,
                 double b, std::uint64_t sb, double resolution, std::vector<double>& out) {
  if (sa == sb) return;
  if (b - a <= resolution) {
    out.push_back(0.5 * (a + b));
    return;
  }
  const double m = 0.5 * (a + b);
  const std::uint64_t sm = signature(m);
  find_breaks(signature, a, sa, m, sm, resolution, out);
  find_breaks(signature, m, sm, b, sb, resolution, out);
}

// Splits `steps` midpoint nodes over the pieces proportionally to their
// length (largest remainder), at least one node per piece.
std::vector<std::size_t> allocate_steps(const std::vector<double>& lengths, std::size_t steps) {
  const std::size_t n = lengths.size();
  std::vector<std::size_t> count(n, 1);
  if (steps <= n) return count;
  const double spare = static_cast<double>(steps - n);
  std::vector<std::pair<double, std::size_t>> remainder;
  std::size_t used = n;
  for (std::size_t i = 0; i < n; ++i) {
    const double share = spare * lengths[i];
    const auto whole = static_cast<std::size_t>(share);
    count[i] += whole;
    used += whole;
    remainder.emplace_back(share - static_cast<double>(whole), i);
  }
  std::stable_sort(remainder.begin(), remainder.end(),
                   [](const auto& x, const auto& y) { return x.first > y.first; });
  for (std::size_t k = 0; used < steps && k < remainder.size(); ++k, ++used) ++count[remainder[k].second];
  return count;
}

}  // namespace

AttributionMap integrated_gradients(const AttributionTarget& f, std::span<const double> input,
                                    std::span<const double> memory, const Baseline& baseline,
                                    std::size_t steps, IgQuadrature quadrature) {
  const std::size_t d = input.size();
  if (steps == 0) throw ContractError("integrated_gradients needs steps >= 1");
  if (baseline.values.size() != d) {
    throw DimensionError("integrated_gradients: baseline has " +
                         std::to_string(baseline.values.size()) + " features, input has " +
                         std::to_string(d));
  }
  if (d == 0 || memory.size() % d != 0) {
    throw DimensionError("integrated_gradients: memory of " + std::to_string(memory.size()) +
                         " values is not a whole number of " + std::to_string(d) +
                         "-feature rows");
  }
  const std::size_t m = memory.size() / d;

  AttributionMap map;
  map.dim = d;
  map.memory_rows = m;
  map.baseline = baseline.name;
  map.steps = steps;
  map.input.assign(d, 0.0);
  map.memory.assign(m * d, 0.0);

  auto point = [&](double alpha, bool grad) {
    std::vector<double> x(d), mem(m * d);
    for (std::size_t k = 0; k < d; ++k) x[k] = baseline.values[k] + alpha * (input[k] - baseline.values[k]);
    for (std::size_t j = 0; j < m; ++j)
      for (std::size_t k = 0; k < d; ++k)
        mem[j * d + k] = baseline.values[k] + alpha * (memory[j * d + k] - baseline.values[k]);
    return std::pair{Tensor::matrix(1, d, std::move(x), grad),
                     Tensor::matrix(m, d, std::move(mem), grad)};
  };

  // Piece boundaries along the path.
  std::vector<double> cuts{0.0};
  if (quadrature == IgQuadrature::KinkAware) {
    auto signature = [&](double alpha) {
      auto [x, mem] = point(alpha, false);
      Tape tape(Tape::Mode::NoGrad);
      (void)f(tape, x, mem);
      return tape.activation_signature();
    };
    std::vector<double> breaks;
    std::uint64_t prev = signature(0.0);
    for (std::size_t k = 1; k <= steps; ++k) {
      const double a = static_cast<double>(k - 1) / static_cast<double>(steps);
      const double b = static_cast<double>(k) / static_cast<double>(steps);
      const std::uint64_t sb = signature(b);
      find_breaks(signature, a, prev, b, sb, 1e-10, breaks);
      prev = sb;
    }
    cuts.insert(cuts.end(), breaks.begin(), breaks.end());
  }
  cuts.push_back(1.0);
  std::vector<double> lengths;
  for (std::size_t i = 1; i < cuts.size(); ++i) lengths.push_back(cuts[i] - cuts[i - 1]);
  // Uniform: `steps` midpoint nodes. KinkAware: about steps / 2 sub-intervals,
  // at least one per smooth piece, each integrated by 2-point Gauss-Legendre.
  const bool gauss = quadrature == IgQuadrature::KinkAware;
  const auto cells = gauss ? allocate_steps(lengths, std::max<std::size_t>(1, steps / 2))
                           : std::vector<std::size_t>{steps};
  map.pieces = lengths.size();
  const double g = 0.5 / std::sqrt(3.0);
  const std::vector<double> offsets = gauss ? std::vector<double>{0.5 - g, 0.5 + g} : std::vector<double>{0.5};

  // Sum of w_t * grad F at each node, w_t its quadrature weight.
  for (std::size_t piece = 0; piece < lengths.size(); ++piece) {
    const double width = lengths[piece] / static_cast<double>(cells[piece]);
    const double weight = width / static_cast<double>(offsets.size());
    for (std::size_t t = 0; t < cells[piece]; ++t) {
      for (double o : offsets) {
        const double alpha = cuts[piece] + (static_cast<double>(t) + o) * width;
        auto [x, mem] = point(alpha, true);
        Tape tape;
        Tensor out = f(tape, x, mem);
        backward(out, tape);
        auto gx = x.grad();
        auto gm = mem.grad();
        for (std::size_t k = 0; k < d; ++k) map.input[k] += weight * gx[k];
        for (std::size_t i = 0; i < m * d; ++i) map.memory[i] += weight * gm[i];
        ++map.evaluations;
      }
    }
  }
  for (std::size_t k = 0; k < d; ++k) map.input[k] *= input[k] - baseline.values[k];
  for (std::size_t j = 0; j < m; ++j)
    for (std::size_t k = 0; k < d; ++k) map.memory[j * d + k] *= memory[j * d + k] - baseline.values[k];

  for (int end = 0; end < 2; ++end) {
    auto [x, mem] = point(end ? 1.0 : 0.0, false);
    Tape tape(Tape::Mode::NoGrad);
    const double v = f(tape, x, mem).item();
    (end ? map.value_at_input : map.value_at_baseline) = v;
  }
  return map;
}

AttributionMap integrated_gradients(const MemoryWrapModel& model, std::span<const double> input,
                                    std::span<const double> memory, std::size_t target,
                                    const Baseline& baseline, std::size_t steps,
                                    IgQuadrature quadrature) {
  if (target >= model.num_classes()) {
    throw IndexError("integrated_gradients: target class " + std::to_string(target) +
                     " outside " + std::to_string(model.num_classes()) + " classes");
  }
  if (input.size() != model.encoder_spec().input_dim) {
    throw DimensionError("integrated_gradients: input has " + std::to_string(input.size()) +
                         " features, model expects " +
                         std::to_string(model.encoder_spec().input_dim));
  }
  MemoryWrapModel frozen = model.clone();
  frozen.set_trainable(false);
  const bool with_memory = uses_memory(frozen.variant());
  AttributionTarget f = [&frozen, target, with_memory](Tape& tape, const Tensor& x,
                                                       const Tensor& mem) {
    const ForwardResult out = frozen.forward(tape, x, with_memory ? &mem : nullptr);
    return element(tape, out.logits, 0, target);
  };
  AttributionMap map = integrated_gradients(f, input, with_memory ? memory : std::span<const double>{},
                                            baseline, steps, quadrature);
  map.target = target;
  return map;
}

}  // namespace memwrap
