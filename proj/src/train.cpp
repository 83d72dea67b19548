#include "memwrap/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <sstream>
#include <unordered_map>

#include "memwrap/errors.hpp"
#include "memwrap/optim.hpp"

namespace memwrap {

void TrainConfig::validate() const {
  if (epochs == 0) throw ConfigError("train.epochs must be >= 1");
  if (batch_size == 0) throw ConfigError("train.batch_size must be >= 1");
  if (!(lr_initial >= 0.0)) throw ConfigError("train.lr_initial must be >= 0");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("train.momentum must lie in [0, 1)");
  if (!(decay_factor > 1.0)) throw ConfigError("train.decay_factor must be > 1");
  double prev = 0.0;
  for (double m : decay_milestones) {
    if (!(m > prev && m < 1.0)) {
      throw ConfigError("train.decay_milestones must be strictly increasing in (0, 1)");
    }
    prev = m;
  }
}

void EvalConfig::validate() const {
  if (batch_size == 0) throw ConfigError("memory.eval_batch must be >= 1");
  if (repeats == 0) throw ConfigError("memory.eval_repeats must be >= 1");
}

double lr_at(const TrainConfig& config, std::size_t epoch) {
  std::size_t drops = 0;
  for (double m : config.decay_milestones) {
    // 1e-9 keeps products like 0.7 * 10 = 7.000000000000001 on the intended epoch.
    const auto at = static_cast<std::size_t>(std::ceil(m * static_cast<double>(config.epochs) - 1e-9));
    if (epoch >= at) ++drops;
  }
  return config.lr_initial / std::pow(config.decay_factor, static_cast<double>(drops));
}

namespace {

std::uint64_t row_hash(std::span<const double> row) {
  std::uint64_t h = 1469598103934665603ULL;
  for (double v : row) {
    std::uint64_t bits = 0;
    std::memcpy(&bits, &v, sizeof bits);
    h = (h ^ bits) * 1099511628211ULL;
  }
  return h;
}

// Number of batch rows whose features also appear in the memory set.
std::size_t count_collisions(const Dataset& batch_src, std::span<const std::size_t> batch,
                             const Dataset& pool, std::span<const std::size_t> memory) {
  std::unordered_multimap<std::uint64_t, std::size_t> seen;
  for (auto j : memory) seen.emplace(row_hash(pool.sample(j)), j);
  std::size_t hits = 0;
  for (auto i : batch) {
    auto s = batch_src.sample(i);
    auto [lo, hi] = seen.equal_range(row_hash(s));
    for (auto it = lo; it != hi; ++it) {
      auto m = pool.sample(it->second);
      if (std::equal(s.begin(), s.end(), m.begin())) {
        ++hits;
        break;
      }
    }
  }
  return hits;
}

struct BatchOutcome {
  double loss_sum = 0.0;
  std::size_t correct = 0;
  std::size_t collisions = 0;
};

}  // namespace

TrainResult train(MemoryWrapModel& model, const Dataset& train_set, const Dataset& validation,
                  const Dataset& memory_pool, const MemoryConfig& memory,
                  const TrainConfig& config) {
  config.validate();
  if (train_set.size() == 0) throw ConfigError("training set is empty");
  if (config.batch_size > train_set.size()) {
    throw ConfigError("train.batch_size " + std::to_string(config.batch_size) +
                      " exceeds training set of " + std::to_string(train_set.size()));
  }
  const bool with_memory = uses_memory(model.variant());
  if (with_memory && memory.size > memory_pool.size()) {
    throw ConfigError("memory.size " + std::to_string(memory.size) + " exceeds memory pool of " +
                      std::to_string(memory_pool.size()));
  }

  TrainResult result;
  Sgd optimizer(config.momentum);
  std::mt19937_64 rng(config.seed);
  model.set_trainable(true);
  model.parameters().zero_grad();

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    const double lr = lr_at(config, epoch);
    const auto order = permutation(train_set.size(), rng);
    BatchOutcome totals;
    std::size_t batch_no = 0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size, ++batch_no) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      std::span<const std::size_t> idx(order.data() + start, end - start);
      Tensor x = gather_rows(train_set, idx);
      const auto y = gather_labels(train_set, idx);

      Tensor mem;
      if (with_memory) {
        const MemorySet ms = sample_memory_set(memory_pool, memory.size, rng);
        mem = gather_rows(memory_pool, ms.indices);
        totals.collisions += count_collisions(train_set, idx, memory_pool, ms.indices);
      }

      Tape tape;
      try {
        ForwardResult out = model.forward(tape, x, with_memory ? &mem : nullptr);
        Tensor loss = cross_entropy(tape, out.logits, y);
        backward(loss, tape);
        const double max_grad = model.parameters().max_abs_grad();
        if (!std::isfinite(max_grad)) throw NumericError("non-finite gradient");
        totals.loss_sum += loss.item() * static_cast<double>(idx.size());
        const auto pred = argmax_rows(out.logits);
        for (std::size_t i = 0; i < pred.size(); ++i) totals.correct += pred[i] == y[i];
      } catch (const NumericError& e) {
        std::ostringstream os;
        os << "training diverged at epoch " << epoch << ", batch " << batch_no << " ("
           << e.what() << "); max |grad| = " << model.parameters().max_abs_grad();
        throw NumericError(os.str());
      }
      if (lr > 0.0) {
        optimizer.step(model.parameters(), lr);
      } else {
        model.parameters().zero_grad();
      }
    }
    const double n = static_cast<double>(train_set.size());
    result.metrics.push_back(MetricsRow{epoch, Split::Train, totals.loss_sum / n,
                                        static_cast<double>(totals.correct) / n, lr,
                                        with_memory ? static_cast<double>(totals.collisions) / n : 0.0});
    if (validation.size() > 0) {
      const EvalResult val =
          evaluate(model, validation, memory_pool, memory, EvalConfig{500, 1}, config.seed + epoch);
      result.metrics.push_back(MetricsRow{epoch, Split::Validation, val.mean_loss,
                                          val.mean_accuracy, lr, val.collision_rate});
    }
  }
  return result;
}

EvalResult evaluate(const MemoryWrapModel& model, const Dataset& data, const Dataset& memory_pool,
                    const MemoryConfig& memory, const EvalConfig& config, std::uint64_t seed) {
  config.validate();
  const bool with_memory = uses_memory(model.variant());
  if (with_memory && memory.size > memory_pool.size()) {
    throw ConfigError("memory.size " + std::to_string(memory.size) + " exceeds memory pool of " +
                      std::to_string(memory_pool.size()));
  }
  EvalResult result;
  if (data.size() == 0) {
    result.per_repeat.assign(config.repeats, 0.0);
    return result;
  }
  double loss_total = 0.0, collision_total = 0.0;
  for (std::size_t r = 0; r < config.repeats; ++r) {
    std::mt19937_64 rng(seed + r);
    std::size_t correct = 0, collisions = 0;
    double loss_sum = 0.0;
    std::vector<std::size_t> idx;
    for (std::size_t start = 0; start < data.size(); start += config.batch_size) {
      const std::size_t end = std::min(data.size(), start + config.batch_size);
      idx.resize(end - start);
      for (std::size_t i = start; i < end; ++i) idx[i - start] = i;
      Tensor x = gather_rows(data, idx);
      const auto y = gather_labels(data, idx);
      Tensor mem;
      if (with_memory) {
        const MemorySet ms = sample_memory_set(memory_pool, memory.size, rng);
        mem = gather_rows(memory_pool, ms.indices);
        collisions += count_collisions(data, idx, memory_pool, ms.indices);
      }
      Tape tape(Tape::Mode::NoGrad);
      ForwardResult out = model.forward(tape, x, with_memory ? &mem : nullptr);
      loss_sum += cross_entropy(tape, out.logits, y).item() * static_cast<double>(idx.size());
      const auto pred = argmax_rows(out.logits);
      for (std::size_t i = 0; i < pred.size(); ++i) correct += pred[i] == y[i];
    }
    const double n = static_cast<double>(data.size());
    result.per_repeat.push_back(static_cast<double>(correct) / n);
    loss_total += loss_sum / n;
    collision_total += static_cast<double>(collisions) / n;
  }
  const double k = static_cast<double>(config.repeats);
  double mean = 0.0;
  for (double a : result.per_repeat) mean += a;
  mean /= k;
  double var = 0.0;
  for (double a : result.per_repeat) var += (a - mean) * (a - mean);
  result.mean_accuracy = mean;
  result.std_accuracy = std::sqrt(var / k);
  result.mean_loss = loss_total / k;
  result.collision_rate = collision_total / k;
  return result;
}

std::string format_g9(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

std::string metrics_csv(const std::vector<MetricsRow>& rows) {
  std::string out = "epoch,split,loss,accuracy,lr,memory_collision_rate\n";
  for (const auto& r : rows) {
    out += std::to_string(r.epoch);
    out += ',';
    out += split_name(r.split);
    out += ',' + format_g9(r.loss) + ',' + format_g9(r.accuracy) + ',' + format_g9(r.lr) + ',' +
           format_g9(r.memory_collision_rate) + '\n';
  }
  return out;
}

}  // namespace memwrap
