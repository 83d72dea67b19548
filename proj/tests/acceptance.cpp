// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any
// failure. Tolerances and sizes are fixed below; do not loosen them.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "memwrap/cli.hpp"
#include "memwrap/errors.hpp"
#include "memwrap/explain.hpp"
#include "memwrap/gradcheck.hpp"
#include "memwrap/simplex_oracle.hpp"
#include "memwrap/train.hpp"
#include "support.hpp"

using namespace memwrap;
namespace fs = std::filesystem;

namespace {

// --- pinned tolerances -------------------------------------------------------
constexpr double kOracleTol = 1e-9;
constexpr double kOracleSeconds = 5.0;
constexpr double kSimplexSumTol = 1e-9;
constexpr double kTranslationTol = 1e-12;
constexpr double kGradH = 1e-5;
constexpr double kGradRelTol = 1e-4;
constexpr double kGradPassFraction = 0.99;
constexpr double kGradSeconds = 60.0;
constexpr std::size_t kIgSteps = 256;
constexpr double kIgRelTol = 1e-3;
constexpr double kIgAbsTol = 1e-6;
constexpr double kIgLinearTol = 1e-10;
constexpr double kLearnMinAccuracy = 0.95;
constexpr double kLearnMargin = 0.01;
constexpr double kLearnSeconds = 600.0;
constexpr double kIdxQuantum = 0.5 / 255.0;

struct Outcome {
  bool pass = true;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

// Desk-scale run config: synthetic 10 classes, 64 features, subset 1000, memory 100.
RunConfig desk_config(Variant variant, std::uint64_t seed, double noise) {
  RunConfig c;
  c.seed = seed;
  c.dataset.noise = noise;
  c.dataset.train_size = 1000;
  c.model.variant = variant;
  c.memory.size = 100;
  c.train.epochs = 30;
  return c;
}

// --- 1 -----------------------------------------------------------------------
Outcome oracle_equivalence() {
  testgen::Gen g(101);
  const auto t0 = Clock::now();
  double worst = 0.0;
  for (int t = 0; t < 1000; ++t) {
    const auto z = g.scores(g.index(2, 20));
    worst = std::max(worst, testgen::max_abs_diff(sparsemax(z).weights, oracle_project(z)));
  }
  const double secs = seconds_since(t0);
  return {worst <= kOracleTol && secs < kOracleSeconds,
          "max dev " + fmt("%.2e", worst) + ", " + fmt("%.2f", secs) + " s"};
}

// --- 2 -----------------------------------------------------------------------
Outcome simplex_invariants() {
  testgen::Gen g(202);
  double sum_dev = 0.0, shift_dev = 0.0;
  std::size_t negatives = 0;
  for (int t = 0; t < 10000; ++t) {
    const auto z = g.scores(g.index(1, 40));
    const auto w = sparsemax(z).weights;
    double s = 0.0;
    for (double v : w) {
      negatives += v < 0.0;
      s += v;
    }
    sum_dev = std::max(sum_dev, std::abs(s - 1.0));
    auto shifted = z;
    const double c = g.uniform(-10, 10);
    for (auto& v : shifted) v += c;
    shift_dev = std::max(shift_dev, testgen::max_abs_diff(sparsemax(shifted).weights, w));
  }
  return {sum_dev <= kSimplexSumTol && negatives == 0 && shift_dev <= kTranslationTol,
          "sum dev " + fmt("%.2e", sum_dev) + ", negatives " + std::to_string(negatives) + ", shift dev " +
              fmt("%.2e", shift_dev)};
}

// --- 3 -----------------------------------------------------------------------
Outcome gradient_check() {
  const auto t0 = Clock::now();
  MemoryWrapModel model({64, {32}, 16}, {Variant::MemoryWrap, 16, 10, 2}, 3);
  const auto data = gen_synthetic(31, 10, 64, 3, 0.25);
  std::mt19937_64 rng(5);
  const auto mem_idx = sample_memory_set(data, 20, rng).indices;
  const Tensor memory = gather_rows(data, mem_idx);
  const std::vector<std::size_t> rows{0, 7, 13, 22};
  const Tensor batch = gather_rows(data, rows);
  const auto labels = gather_labels(data, rows);
  LossFn loss = [&](Tape& tape) {
    return cross_entropy(tape, model.forward(tape, batch, &memory).logits, labels);
  };
  const auto rep = finite_diff_check(loss, model.parameters(), kGradH);
  const double frac = rep.pass_fraction(kGradRelTol);
  const double secs = seconds_since(t0);
  return {frac >= kGradPassFraction && secs < kGradSeconds,
          std::to_string(rep.rel_error.size()) + " coords, " + std::to_string(rep.excluded_count()) +
              " excluded, " + fmt("%.4f", frac) + " within tol, max rel " + fmt("%.2e", rep.max_rel_error) +
              ", " + fmt("%.2f", secs) + " s"};
}

// --- 4 -----------------------------------------------------------------------
Outcome parameter_accounting() {
  struct Row {
    const char* name;
    std::uint64_t standard_total, d;
    Variant variant;
    std::uint64_t expect;
  };
  const Row rows[] = {
      {"EfficientNetB0 OnlyMemory", 3'599'686, 320, Variant::OnlyMemory, 3'808'326},
      {"EfficientNetB0 MemoryWrap", 3'599'686, 320, Variant::MemoryWrap, 4'429'766},
      {"ResNet18 OnlyMemory", 11'173'962, 512, Variant::OnlyMemory, 11'704'394},
      {"ResNet18 MemoryWrap", 11'173'962, 512, Variant::MemoryWrap, 13'288'522},
      {"MobileNet-v2 MemoryWrap", 2'296'922, 1280, Variant::MemoryWrap, 15'447'642},
  };
  Outcome o;
  std::size_t ok = 0;
  for (const auto& r : rows) {
    const auto got = count_parameters(body_from_standard_total(r.standard_total, r.d, 10), r.d, 10, r.variant);
    if (got == r.expect) {
      ++ok;
    } else {
      o.pass = false;
      o.detail += std::string(r.name) + " got " + std::to_string(got) + "; ";
    }
  }
  o.detail += std::to_string(ok) + "/5 rows exact";
  return o;
}

// --- 5 -----------------------------------------------------------------------
Outcome ig_completeness() {
  const auto all = gen_synthetic(1234, 10, 64, 130, 0.25);
  auto [pool, test] = split_front(all, 1000);
  const auto tv = split_validation(reduced_subset(pool, 1000, 0), 0.1, 0);
  MemoryWrapModel model({64, {32}, 16}, {Variant::MemoryWrap, 16, 10, 2}, 1);
  TrainConfig tc;
  tc.epochs = 10;
  train(model, tv.train, Dataset{}, tv.train, MemoryConfig{100}, tc);

  std::mt19937_64 rng(55);
  double worst_ratio = 0.0;
  std::size_t failed = 0;
  for (int t = 0; t < 20; ++t) {
    const auto x = test.sample(rng() % test.size());
    const auto mem = gather_rows(tv.train, sample_memory_set(tv.train, 20, rng).indices);
    const std::size_t cls = rng() % 10;
    const auto a = integrated_gradients(model, x, mem.values(), cls, white_baseline(64), kIgSteps);
    const double tol = kIgRelTol * std::abs(a.delta()) + kIgAbsTol;
    const double err = std::abs(a.total() - a.delta());
    worst_ratio = std::max(worst_ratio, err / tol);
    failed += err > tol;
  }

  // Linear target: exact at every step count.
  testgen::Gen g(9);
  const std::size_t d = 6, m = 4;
  const auto wx = g.vec(d), wm = g.vec(m * d);
  AttributionTarget linear = [&](Tape& tape, const Tensor& x, const Tensor& mem) {
    Tensor acc = matmul(tape, x, Tensor::matrix(d, 1, wx));
    for (std::size_t j = 0; j < m; ++j) {
      std::vector<double> sel(m, 0.0);
      sel[j] = 1.0;
      const auto row = matmul(tape, Tensor::matrix(1, m, sel), mem);
      acc = add(tape, acc, matmul(tape, row, Tensor::matrix(d, 1, testgen::to_vec(std::span(wm).subspan(j * d, d)))));
    }
    return sum(tape, acc);
  };
  double linear_err = 0.0;
  const auto lx = g.vec(d, 0, 1), lm = g.vec(m * d, 0, 1);
  for (std::size_t steps : {1, 2, 7, 64, 256}) {
    const auto a = integrated_gradients(linear, lx, lm, black_baseline(d), steps);
    linear_err = std::max(linear_err, std::abs(a.total() - a.delta()));
  }
  return {failed == 0 && linear_err <= kIgLinearTol,
          std::to_string(20 - failed) + "/20 triples within tol (worst err/tol " + fmt("%.3f", worst_ratio) +
              "), linear err " + fmt("%.1e", linear_err)};
}

// --- 6 -----------------------------------------------------------------------
Outcome desk_learning() {
  const auto t0 = Clock::now();
  std::ostringstream log;
  double mw = 0.0, std_acc = 0.0;
  std::string per_seed;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const double a = cli::train_and_evaluate(desk_config(Variant::MemoryWrap, seed, 0.25), log).test.mean_accuracy;
    const double b = cli::train_and_evaluate(desk_config(Variant::Standard, seed, 0.25), log).test.mean_accuracy;
    mw += a / 5;
    std_acc += b / 5;
    per_seed += fmt(" %.4f", a) + "/" + fmt("%.4f", b);
  }
  const double secs = seconds_since(t0);
  return {mw >= kLearnMinAccuracy && mw >= std_acc - kLearnMargin && secs < kLearnSeconds,
          "MemoryWrap " + fmt("%.4f", mw) + " vs Standard " + fmt("%.4f", std_acc) + " (per seed mw/std" + per_seed +
              "), " + fmt("%.1f", secs) + " s"};
}

// --- 7 -----------------------------------------------------------------------

// Two-pass oracle: per batch draw S then S' from one rng; classify each input
// against S; take its top-weight memory sample (ties: same predicted class,
// then position) and classify it against S'.
double oracle_explanation_accuracy(const MemoryWrapModel& model, const Dataset& data, const Dataset& pool,
                                   std::size_t m, std::size_t batch, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::size_t agree = 0;
  for (std::size_t start = 0; start < data.size(); start += batch) {
    const auto s = sample_memory_set(pool, m, rng).indices;
    const auto s2 = sample_memory_set(pool, m, rng).indices;
    const Tensor mem = gather_rows(pool, s), probe = gather_rows(pool, s2);
    for (std::size_t i = start; i < std::min(data.size(), start + batch); ++i) {
      const std::vector<std::size_t> one{i};
      Tape tape(Tape::Mode::NoGrad);
      const auto out = model.forward(tape, gather_rows(data, one), &mem);
      const auto pred = argmax_rows(out.logits)[0];
      const auto w = out.attention->values();
      const double best = *std::max_element(w.begin(), w.end());
      std::size_t top = m, top_pred = 0;
      for (std::size_t j = 0; j < m; ++j) {
        if (w[j] != best) continue;
        const std::vector<std::size_t> row{s[j]};
        const auto p = predict(model, gather_rows(pool, row), &probe)[0];
        if (top == m || (p == pred && top_pred != pred)) {
          top = j;
          top_pred = p;
        }
      }
      agree += top_pred == pred;
    }
  }
  return static_cast<double>(agree) / static_cast<double>(data.size());
}

// Every input's memory set splits into examples / counterfactuals / zero
// weight, disjointly and totally, and the record's entries are exactly the
// positive-weight side.
bool partition_total(const MemoryWrapModel& model, const Dataset& data, const Dataset& pool,
                     const ExplanationPass& pass, std::size_t m, std::size_t batch, std::uint64_t seed,
                     std::size_t& checked) {
  std::mt19937_64 rng(seed);
  for (std::size_t b = 0, start = 0; start < data.size(); ++b, start += batch) {
    const auto s = sample_memory_set(pool, m, rng).indices;
    const auto s2 = sample_memory_set(pool, m, rng).indices;
    if (s != pass.batch_memory[b].indices) return false;
    const Tensor mem = gather_rows(pool, s), probe = gather_rows(pool, s2);
    const auto mem_preds = predict(model, mem, &probe);
    std::vector<std::size_t> rows;
    for (std::size_t i = start; i < std::min(data.size(), start + batch); ++i) rows.push_back(i);
    Tape tape(Tape::Mode::NoGrad);
    const auto out = model.forward(tape, gather_rows(data, rows), &mem);
    const auto preds = argmax_rows(out.logits);
    for (std::size_t r = 0; r < rows.size(); ++r) {
      const auto att = attention_row(*out.attention, r);
      const auto part = partition_memory(att, preds[r], mem_preds);
      std::set<std::size_t> seen;
      for (const auto& e : part.examples) seen.insert(e.index);
      for (const auto& e : part.counterfactuals) seen.insert(e.index);
      for (auto j : part.zero) seen.insert(j);
      const std::size_t total = part.examples.size() + part.counterfactuals.size() + part.zero.size();
      if (total != m || seen.size() != m) return false;
      const auto& rec = pass.records[rows[r]];
      if (rec.entries.size() != part.examples.size() + part.counterfactuals.size()) return false;
      for (const auto& e : rec.entries)
        if (e.memory_pred != mem_preds[e.position] || !(att.weights[e.position] > 0.0)) return false;
      ++checked;
    }
  }
  return checked == data.size();
}

Outcome explanation_pipeline() {
  const auto config = desk_config(Variant::MemoryWrap, 0, 0.5);
  std::ostringstream log;
  const auto run = cli::train_and_evaluate(config, log);
  const RunData data = build_data(config);
  const Dataset& pool = data.memory_pool(config);
  const std::uint64_t seed = derive_seed(config.seed, 4);
  const std::size_t m = config.memory.size, batch = config.memory.eval_batch;

  const auto pass = explain_dataset(run.model, data.test, pool, m, batch, seed);
  const double lib = explanation_accuracy(pass);
  const double oracle = oracle_explanation_accuracy(run.model, data.test, pool, m, batch, seed);
  const auto split = counterfactual_split_accuracy(pass);
  std::size_t checked = 0;
  const bool total = partition_total(run.model, data.test, pool, pass, m, batch, seed, checked);
  const bool directional = split.accuracy_flagged && split.accuracy_rest && *split.accuracy_flagged < *split.accuracy_rest;
  auto opt = [](const std::optional<double>& v) { return v ? fmt("%.4f", *v) : std::string("absent"); };
  return {lib == oracle && directional && total,
          "explanation acc " + fmt("%.4f", lib) + (lib == oracle ? " == " : " != ") + "oracle " +
              fmt("%.4f", oracle) + "; flagged " + opt(split.accuracy_flagged) + " vs rest " +
              opt(split.accuracy_rest) + " (" + fmt("%.3f", split.fraction_flagged) + " flagged); partition total on " +
              std::to_string(checked) + "/" + std::to_string(data.test.size())};
}

// --- 8 -----------------------------------------------------------------------
Outcome major_voting_agreement() {
  // Noiseless data: the trained model classifies every memory sample correctly.
  const auto config = desk_config(Variant::MemoryWrap, 0, 0.0);
  std::ostringstream log;
  const auto run = cli::train_and_evaluate(config, log);
  const RunData data = build_data(config);
  const auto pass = explain_dataset(run.model, data.test, data.memory_pool(config), config.memory.size,
                                    config.memory.eval_batch, derive_seed(config.seed, 4));
  bool perfect = true;
  for (const auto& r : pass.records)
    for (const auto& e : r.entries) perfect &= e.memory_pred == e.memory_label;
  const auto votes = major_voting_accuracy(pass);

  // Crafted ties: equal counts go to attention mass, equal mass to the lower class.
  auto e = [](std::size_t cls, double w, std::size_t pos) { return WeightedEntry{pos, pos, w, cls, cls}; };
  bool ties = true;
  const std::vector<WeightedEntry> count_tie{e(6, 0.3, 0), e(2, 0.7, 1)};
  const std::vector<WeightedEntry> mass_tie{e(6, 0.25, 0), e(2, 0.25, 1), e(6, 0.25, 2), e(2, 0.25, 3)};
  for (int rep = 0; rep < 3; ++rep) {
    for (auto mode : {VoteMode::Labels, VoteMode::Predictions}) {
      ties &= major_voting(count_tie, mode) == 2;
      ties &= major_voting(mass_tie, mode) == 2;
      auto rev = mass_tie;
      std::reverse(rev.begin(), rev.end());
      ties &= major_voting(rev, mode) == 2;
    }
  }
  return {perfect && votes.agreement == 1.0 && ties,
          std::string("memory predictions ") + (perfect ? "perfect" : "NOT perfect") + ", agreement " +
              fmt("%.4f", votes.agreement) + " (labels " + fmt("%.4f", votes.labels) + ", predictions " +
              fmt("%.4f", votes.predictions) + "), ties " + (ties ? "deterministic" : "broken")};
}

// --- 9 -----------------------------------------------------------------------
std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Outcome reproducibility() {
  const auto dir = fs::temp_directory_path() / "memwrap_acceptance_repro";
  fs::remove_all(dir);
  fs::create_directories(dir);
  const auto cfg = dir / "run.json";
  std::ofstream(cfg) << R"({"seed": 3,
 "dataset": {"source": "synthetic", "train_size": 300, "noise": 0.25},
 "model": {"variant": "memory_wrap"},
 "train": {"epochs": 3, "batch_size": 20}})";
  std::ostringstream out, err;
  int codes = 0;
  for (const char* name : {"a", "b"}) {
    const std::string out_dir = (dir / name).string(), cfg_path = cfg.string();
    const char* argv[] = {"memwrap", "train", "--config", cfg_path.c_str(), "--out", out_dir.c_str()};
    codes |= cli::run(6, argv, out, err);
  }
  const bool metrics = slurp(dir / "a" / cli::kMetricsFile) == slurp(dir / "b" / cli::kMetricsFile);
  const bool model = slurp(dir / "a" / cli::kModelFile) == slurp(dir / "b" / cli::kModelFile);
  const bool nonempty = !slurp(dir / "a" / cli::kModelFile).empty();
  fs::remove_all(dir);
  return {codes == 0 && metrics && model && nonempty,
          std::string("metrics.csv ") + (metrics ? "identical" : "DIFFERENT") + ", model.bin " +
              (model ? "identical" : "DIFFERENT") + (codes ? ", train exited nonzero" : "")};
}

// --- 10 ----------------------------------------------------------------------
using Bytes = std::vector<std::uint8_t>;

Bytes idx_header(std::uint8_t kind, std::vector<std::uint32_t> dims) {
  Bytes b{0, 0, 8, kind};
  for (auto v : dims)
    for (int s = 24; s >= 0; s -= 8) b.push_back(static_cast<std::uint8_t>(v >> s));
  return b;
}

Outcome idx_parser() {
  std::vector<std::string> problems;
  Bytes img = idx_header(3, {1, 2, 2});
  img.insert(img.end(), {0, 255, 128, 64});
  Bytes lab = idx_header(1, {1});
  lab.push_back(7);
  const auto d = parse_idx_bytes(img, lab, 10);
  const double expect[] = {0.0, 1.0, 0.5019608, 0.2509804};
  if (d.size() != 1 || d.labels[0] != 7) problems.push_back("minimal file labels");
  for (std::size_t i = 0; i < 4 && i < d.samples.size(); ++i)
    if (std::abs(d.samples[i] - expect[i]) > 1e-7) problems.push_back("minimal file pixel " + std::to_string(i));

  auto rejects = [&](Bytes images, const char* what) {
    try {
      (void)parse_idx_bytes(images, lab, 10);
      problems.push_back(std::string(what) + " accepted");
    } catch (const FormatError&) {
    }
  };
  auto bad_magic = img;
  bad_magic[3] = 2;
  rejects(bad_magic, "corrupt magic");
  auto truncated = img;
  truncated.pop_back();
  rejects(truncated, "truncated file");

  const auto data = gen_synthetic(77, 10, 64, 20, 0.3);
  const auto [ib, lb] = encode_idx(data);
  const auto back = parse_idx_bytes(ib, lb, 10);
  double worst = 0.0;
  for (std::size_t i = 0; i < data.samples.size(); ++i) worst = std::max(worst, std::abs(back.samples[i] - data.samples[i]));
  if (back.labels != data.labels || worst > kIdxQuantum + 1e-15) problems.push_back("round-trip");
  const auto [ib2, lb2] = encode_idx(back);
  if (ib2 != ib || lb2 != lb) problems.push_back("second round-trip not exact");

  std::string detail = "round-trip max dev " + fmt("%.2e", worst);
  for (const auto& p : problems) detail += "; " + p;
  return {problems.empty(), detail};
}

}  // namespace

int main() {
  struct Criterion {
    const char* name;
    std::function<Outcome()> run;
  };
  const Criterion criteria[] = {
      {"sparsemax oracle equivalence", oracle_equivalence},
      {"sparsemax simplex and translation invariants", simplex_invariants},
      {"gradient check, full MemoryWrap model", gradient_check},
      {"parameter accounting rows", parameter_accounting},
      {"integrated gradients completeness", ig_completeness},
      {"desk-scale learning", desk_learning},
      {"explanation pipeline", explanation_pipeline},
      {"major voting", major_voting_agreement},
      {"train reproducibility", reproducibility},
      {"IDX parser", idx_parser},
  };
  int failures = 0, index = 0;
  for (const auto& c : criteria) {
    ++index;
    const auto t0 = Clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    failures += !o.pass;
    std::printf("%s %2d %s: %s [%.1f s]\n", o.pass ? "PASS" : "FAIL", index, c.name, o.detail.c_str(),
                seconds_since(t0));
    std::fflush(stdout);
  }
  std::printf("%d/%d criteria passed\n", index - failures, index);
  return failures == 0 ? 0 : 1;
}
