#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "memwrap/errors.hpp"
#include "memwrap/explain.hpp"
#include "memwrap/report.hpp"
#include "memwrap/train.hpp"
#include "support.hpp"

using namespace memwrap;
using testgen::Gen;
using testgen::to_vec;

namespace {

AttentionRow row_of(std::vector<double> w) {
  AttentionRow r;
  for (std::size_t j = 0; j < w.size(); ++j)
    if (w[j] > 0) r.support.push_back(j);
  r.weights = std::move(w);
  return r;
}

std::vector<std::size_t> iota(std::size_t n, std::size_t from = 0) {
  std::vector<std::size_t> v(n);
  for (std::size_t i = 0; i < n; ++i) v[i] = from + i;
  return v;
}

struct Trained {
  Dataset train, test;
  MemoryWrapModel model;
};

Trained trained(double noise, Variant v = Variant::MemoryWrap) {
  auto all = gen_synthetic(1234, 10, 64, 130, noise);
  auto [pool, test] = split_front(all, 1000);
  auto sub = reduced_subset(pool, 1000, 0);
  auto tv = split_validation(sub, 0.1, 0);
  MemoryWrapModel m({64, {32}, 16}, {v, 16, 10, 2}, 1);
  TrainConfig c;
  c.epochs = 10;
  train(m, tv.train, Dataset{}, tv.train, MemoryConfig{100}, c);
  return {tv.train, test, std::move(m)};
}

// Independent two-pass reimplementation of the explanation-accuracy protocol:
// per batch draw S then S' from one rng; classify each input against S; take
// its top-weight memory sample (ties: same predicted class, then position);
// classify that sample alone as an input against S'.
double oracle_explanation_accuracy(const MemoryWrapModel& model, const Dataset& data,
                                   const Dataset& pool, std::size_t m, std::size_t batch,
                                   std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::size_t agree = 0;
  for (std::size_t start = 0; start < data.size(); start += batch) {
    const auto s = sample_memory_set(pool, m, rng).indices;
    const auto s2 = sample_memory_set(pool, m, rng).indices;
    const Tensor mem = gather_rows(pool, s), probe = gather_rows(pool, s2);
    const std::size_t end = std::min(data.size(), start + batch);
    for (std::size_t i = start; i < end; ++i) {
      const std::vector<std::size_t> one{i};
      Tape t(Tape::Mode::NoGrad);
      auto out = model.forward(t, gather_rows(data, one), &mem);
      const auto pred = argmax_rows(out.logits)[0];
      const auto w = out.attention->values();
      double best = -1;
      for (double v : w) best = std::max(best, v);
      std::size_t top = m;
      std::size_t top_pred = 0;
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

}  // namespace

TEST_CASE("partition: boundary cases") {
  const std::vector<std::size_t> preds{2, 2, 5, 7};
  auto p = partition_memory(row_of({0, 1, 0, 0}), 2, preds);
  CHECK(p.examples.size() == 1);
  CHECK(p.examples[0].index == 1);
  CHECK(p.counterfactuals.empty());
  CHECK(p.zero == std::vector<std::size_t>{0, 2, 3});

  const std::vector<std::size_t> others{1, 1, 4, 4};
  auto q = partition_memory(row_of({0.25, 0.25, 0.25, 0.25}), 2, others);
  CHECK(q.examples.empty());
  CHECK(q.counterfactuals.size() == 4);

  CHECK_THROWS_AS((void)partition_memory(row_of({1, 0}), 0, preds), DimensionError);
}

TEST_CASE("property: partition is disjoint and total") {
  Gen g(3);
  for (int t = 0; t < 1000; ++t) {
    const std::size_t m = g.index(1, 30);
    const auto w = sparsemax(g.scores(m));
    std::vector<std::size_t> preds(m);
    for (auto& p : preds) p = g.index(0, 3);
    const std::size_t pred = g.index(0, 3);
    const auto part = partition_memory(w, pred, preds);
    std::set<std::size_t> seen;
    for (const auto& e : part.examples) {
      CHECK(w.weights[e.index] > 0);
      CHECK(preds[e.index] == pred);
      seen.insert(e.index);
    }
    for (const auto& e : part.counterfactuals) {
      CHECK(w.weights[e.index] > 0);
      CHECK(preds[e.index] != pred);
      seen.insert(e.index);
    }
    for (auto j : part.zero) {
      CHECK(w.weights[j] == 0.0);
      seen.insert(j);
    }
    CHECK(part.examples.size() + part.counterfactuals.size() + part.zero.size() == m);
    CHECK(seen.size() == m);
  }
}

TEST_CASE("property: record invariants") {
  Gen g(4);
  for (int t = 0; t < 1000; ++t) {
    const std::size_t m = g.index(1, 20), c = 4;
    const auto w = sparsemax(g.scores(m));
    std::vector<std::size_t> preds(m), labels(m);
    for (auto& p : preds) p = g.index(0, c - 1);
    for (auto& l : labels) l = g.index(0, c - 1);
    const auto logits = g.vec(c);
    const std::size_t pred = g.index(0, c - 1);
    const auto rec = build_record(0, pred, 0, w, iota(m, 100), preds, labels, logits);
    double total = 0;
    for (std::size_t i = 0; i < rec.entries.size(); ++i) {
      total += rec.entries[i].weight;
      CHECK(rec.entries[i].weight > 0);
      CHECK(rec.entries[i].memory_index == 100 + rec.entries[i].position);
      if (i) CHECK(rec.entries[i - 1].weight >= rec.entries[i].weight);
    }
    CHECK(std::abs(total - 1.0) <= 1e-9);
    double best_e = -1, best_c = -1;
    for (const auto& e : rec.entries) (e.memory_pred == pred ? best_e : best_c) = std::max((e.memory_pred == pred ? best_e : best_c), e.weight);
    if (rec.best_example) CHECK(rec.best_example->weight == best_e);
    else CHECK(best_e < 0);
    if (rec.best_counterfactual) CHECK(rec.best_counterfactual->weight == best_c);
    else CHECK(best_c < 0);
    CHECK(rec.uncertainty_flag == (best_c > best_e));
    CHECK(rec.uncertainty_flag == (rec.top().memory_pred != pred));
  }
}

TEST_CASE("record: ties at the top prefer the example side") {
  const std::vector<std::size_t> preds{1, 0}, labels{1, 0};
  const std::vector<double> logits{2, 1};
  const auto rec = build_record(0, 0, 0, row_of({0.5, 0.5}), iota(2), preds, labels, logits);
  CHECK(rec.top().position == 1);
  CHECK_FALSE(rec.uncertainty_flag);
  CHECK(rec.counterfactual_class_rank == std::size_t{2});
}

TEST_CASE("property: memory permutation leaves record outputs unchanged") {
  Gen g(5);
  for (int t = 0; t < 300; ++t) {
    const std::size_t m = g.index(2, 15);
    auto z = g.vec(m, -1, 1);  // distinct weights
    std::vector<std::size_t> preds(m), labels(m), ids = iota(m, 50);
    for (auto& p : preds) p = g.index(0, 3);
    for (auto& l : labels) l = g.index(0, 3);
    const std::vector<double> logits{0.1, 0.4, 0.2, 0.3};
    const auto a = build_record(0, 1, 1, sparsemax(z), ids, preds, labels, logits);
    auto perm = iota(m);
    std::shuffle(perm.begin(), perm.end(), g.rng);
    std::vector<double> pz(m);
    std::vector<std::size_t> pp(m), pl(m), pi(m);
    for (std::size_t k = 0; k < m; ++k) {
      pz[k] = z[perm[k]];
      pp[k] = preds[perm[k]];
      pl[k] = labels[perm[k]];
      pi[k] = ids[perm[k]];
    }
    const auto b = build_record(0, 1, 1, sparsemax(pz), pi, pp, pl, logits);
    CHECK(a.top().memory_index == b.top().memory_index);
    CHECK(a.uncertainty_flag == b.uncertainty_flag);
    CHECK(major_voting(a.entries, VoteMode::Labels) == major_voting(b.entries, VoteMode::Labels));
    CHECK(major_voting(a.entries, VoteMode::Predictions) == major_voting(b.entries, VoteMode::Predictions));
  }
}

TEST_CASE("major voting") {
  auto e = [](std::size_t label, double w, std::size_t pred) { return WeightedEntry{0, 0, w, pred, label}; };
  const std::vector<WeightedEntry> majority{e(3, 0.2, 3), e(3, 0.2, 3), e(7, 0.6, 7)};
  CHECK(major_voting(majority, VoteMode::Labels) == 3);
  const std::vector<WeightedEntry> tie{e(3, 0.7, 3), e(7, 0.3, 7)};
  CHECK(major_voting(tie, VoteMode::Labels) == 3);
  const std::vector<WeightedEntry> tie_rev{e(7, 0.7, 7), e(3, 0.3, 3)};
  CHECK(major_voting(tie_rev, VoteMode::Labels) == 7);
  const std::vector<WeightedEntry> full_tie{e(7, 0.5, 7), e(3, 0.5, 3)};
  CHECK(major_voting(full_tie, VoteMode::Labels) == 3);
  // modes read different fields
  const std::vector<WeightedEntry> mixed{e(1, 0.6, 2), e(1, 0.4, 2)};
  CHECK(major_voting(mixed, VoteMode::Labels) == 1);
  CHECK(major_voting(mixed, VoteMode::Predictions) == 2);
  CHECK_THROWS_AS((void)major_voting(std::vector<WeightedEntry>{}, VoteMode::Labels), ContractError);
}

TEST_CASE("explanation accuracy of a constant predictor is 1") {
  auto all = gen_synthetic(7, 4, 16, 30, 0.3);
  MemoryWrapModel m({16, {8}, 4}, {Variant::MemoryWrap, 4, 4, 2}, 2);
  // zero all output weights, favour class 2 through the bias
  for (auto& v : m.parameters().get("head.1.weight").mutable_values()) v = 0.0;
  auto b = m.parameters().get("head.1.bias").mutable_values();
  std::fill(b.begin(), b.end(), 0.0);
  b[2] = 1.0;
  auto pass = explain_dataset(m, all, all, 20, 50, 3);
  CHECK(explanation_accuracy(pass) == 1.0);
  for (const auto& r : pass.records) {
    CHECK(r.predicted_class == 2);
    CHECK_FALSE(r.uncertainty_flag);
    CHECK_FALSE(r.best_counterfactual.has_value());
  }
}

TEST_CASE("explanation pass bookkeeping and the two-pass oracle") {
  auto t = trained(0.5);
  const auto pass = explain_dataset(t.model, t.test, t.train, 100, 500, 17);
  REQUIRE(pass.records.size() == t.test.size());
  CHECK(pass.batch_memory.size() == 1);
  for (std::size_t i = 0; i < pass.records.size(); ++i) CHECK(pass.records[i].input_index == i);
  CHECK(explanation_accuracy(pass) ==
        oracle_explanation_accuracy(t.model, t.test, t.train, 100, 500, 17));
  CHECK(explanation_accuracy(t.model, t.test, t.train, 100, 500, 17) == explanation_accuracy(pass));

  // split arithmetic: weighted mean of the two sides is the overall accuracy
  const auto split = counterfactual_split_accuracy(pass);
  CHECK(split.flagged + split.rest == pass.records.size());
  const double overall = static_cast<double>(pass.correct) / pass.records.size();
  const double mix = split.fraction_flagged * split.accuracy_flagged.value_or(0.0) +
                     (1 - split.fraction_flagged) * split.accuracy_rest.value_or(0.0);
  CHECK(std::abs(mix - overall) <= 1e-12);
}

TEST_CASE("noiseless data: nothing flagged, memory predictions perfect, voting modes agree") {
  auto t = trained(0.0);
  const auto pass = explain_dataset(t.model, t.test, t.train, 100, 500, 5);
  CHECK(static_cast<double>(pass.correct) / pass.records.size() == 1.0);
  CHECK(explanation_accuracy(pass) >= 0.99);
  const auto split = counterfactual_split_accuracy(pass);
  CHECK(split.fraction_flagged == 0.0);
  CHECK_FALSE(split.accuracy_flagged.has_value());
  for (const auto& r : pass.records)
    for (const auto& e : r.entries) REQUIRE(e.memory_pred == e.memory_label);
  CHECK(major_voting_accuracy(pass).agreement == 1.0);
}

TEST_CASE("Standard models have nothing to explain") {
  auto all = gen_synthetic(7, 4, 16, 5, 0.3);
  MemoryWrapModel m({16, {8}, 4}, {Variant::Standard, 4, 4, 2}, 2);
  try {
    (void)explain_dataset(m, all, all, 10, 50, 0);
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("no attention weights to explain") != std::string::npos);
  }
}

TEST_CASE("IG: zero path and untouched coordinates") {
  MemoryWrapModel m({9, {6}, 4}, {Variant::MemoryWrap, 4, 3, 2}, 8);
  const auto base = white_baseline(9);
  const std::vector<double> ones(9, 1.0), mem(27, 1.0);
  auto a = integrated_gradients(m, ones, mem, 1, base, 16);
  for (double v : a.input) CHECK(v == 0.0);
  for (double v : a.memory) CHECK(v == 0.0);

  Gen g(2);
  auto x = g.vec(9, 0, 1);
  x[4] = 1.0;
  auto mm = g.vec(27, 0, 1);
  mm[10] = 1.0;
  auto b = integrated_gradients(m, x, mm, 0, base, 16);
  CHECK(b.input[4] == 0.0);
  CHECK(b.memory[10] == 0.0);
  CHECK_THROWS_AS((void)integrated_gradients(m, x, mm, 3, base, 16), IndexError);
  CHECK_THROWS_AS((void)integrated_gradients(m, x, mm, 0, white_baseline(8), 16), DimensionError);
}

TEST_CASE("IG: linear functions are attributed exactly at any step count") {
  Gen g(3);
  const std::size_t d = 5, m = 3;
  auto w = Tensor::matrix(d, 1, g.vec(d));
  auto u = Tensor::matrix(m * d, 1, g.vec(m * d));
  AttributionTarget f = [&](Tape& t, const Tensor& x, const Tensor& mem) {
    auto flat = Tensor::matrix(1, m * d, to_vec(mem.values()));
    (void)flat;
    // sum over memory of <row_j, u_j>, built from differentiable ops
    Tensor acc = matmul(t, x, w);
    for (std::size_t j = 0; j < m; ++j) {
      auto sel = Tensor::matrix(1, m, std::vector<double>(m, 0.0));
      sel.mutable_values()[j] = 1.0;
      auto uj = Tensor::matrix(d, 1, to_vec(u.values().subspan(j * d, d)));
      acc = add(t, acc, matmul(t, matmul(t, sel, mem), uj));
    }
    return sum(t, acc);
  };
  const auto x = g.vec(d, 0, 1), mem = g.vec(m * d, 0, 1);
  const auto base = black_baseline(d);
  for (auto q : {IgQuadrature::Uniform, IgQuadrature::KinkAware})
  for (std::size_t steps : {1, 3, 64}) {
    auto a = integrated_gradients(f, x, mem, base, steps, q);
    for (std::size_t k = 0; k < d; ++k) CHECK(std::abs(a.input[k] - w.values()[k] * x[k]) <= 1e-12);
    for (std::size_t i = 0; i < m * d; ++i) CHECK(std::abs(a.memory[i] - u.values()[i] * mem[i]) <= 1e-12);
    CHECK(std::abs(a.total() - a.delta()) <= 1e-10);
  }
}

TEST_CASE("IG: completeness on a model") {
  MemoryWrapModel m({16, {12}, 6}, {Variant::MemoryWrap, 6, 4, 2}, 12);
  Gen g(6);
  for (int t = 0; t < 5; ++t) {
    const auto x = g.vec(16, 0, 1), mem = g.vec(10 * 16, 0, 1);
    const auto a = integrated_gradients(m, x, mem, t % 4, white_baseline(16), 256);
    CHECK(std::abs(a.total() - a.delta()) <= 1e-3 * std::abs(a.delta()) + 1e-6);
  }
  // the model passed in is not modified
  CHECK(m.parameters().get("head.1.weight").requires_grad());
}

TEST_CASE("report: record json") {
  const std::vector<std::size_t> preds{3, 3}, labels{3, 3};
  const std::vector<double> logits{0, 0, 0, 1};
  const auto rec = build_record(42, 3, 3, row_of({0.75, 0.25}), std::vector<std::size_t>{10, 11}, preds,
                                labels, logits);
  const auto j = nlohmann::json::parse(record_to_json(rec));
  CHECK(j["input_index"] == 42);
  CHECK(j["predicted_class"] == 3);
  CHECK(j["true_class"] == 3);
  CHECK(j["entries"].size() == 2);
  CHECK(j["entries"][0]["memory_index"] == 10);
  CHECK(j["best_example"]["memory_index"] == 10);
  CHECK_FALSE(j.contains("best_counterfactual"));
  CHECK(j["uncertainty_flag"] == false);
  double s = 0;
  for (const auto& e : j["entries"]) s += e["weight"].get<double>();
  CHECK(std::abs(s - 1.0) <= 1e-9);
}

TEST_CASE("report: pgm encoding") {
  PgmImage img{3, 2, {0, 1, 2, 128, 254, 255}};
  const auto bytes = encode_pgm(img);
  const auto back = decode_pgm(bytes);
  CHECK(back.width == 3);
  CHECK(back.height == 2);
  CHECK(back.pixels == img.pixels);
  CHECK(encode_pgm(back) == bytes);
  auto cut = bytes;
  cut.pop_back();
  CHECK_THROWS_AS((void)decode_pgm(cut), FormatError);

  const std::vector<double> signed_vals{-2, -1, 0, 1, 2, 0.5};
  const auto s = signed_image(signed_vals, 2, 3);
  CHECK(s.pixels == std::vector<std::uint8_t>{0, 63, 128, 192, 255, 160});
  const std::vector<double> zeros(4, 0.0);
  for (auto p : signed_image(zeros, 2, 2).pixels) CHECK(p == 128);
  const std::vector<double> inten{0, 1, 0.5, 2};
  CHECK(intensity_image(inten, 1, 4).pixels == std::vector<std::uint8_t>{0, 255, 128, 255});
}

TEST_CASE("report: files on disk") {
  const auto dir = std::filesystem::temp_directory_path() / "memwrap_test_report";
  std::filesystem::remove_all(dir);
  const std::vector<std::size_t> preds{3, 1}, labels{3, 1};
  const std::vector<double> logits{0, 1, 0, 2};
  ReportItem item;
  item.record = build_record(7, 3, 3, row_of({0.4, 0.6}), std::vector<std::size_t>{0, 1}, preds, labels, logits);
  item.input.assign(4, 0.5);
  item.best_example.assign(4, 0.25);
  item.best_counterfactual.assign(4, 1.0);
  item.image_rows = item.image_cols = 2;
  AttributionMap a;
  a.dim = 4;
  a.memory_rows = 2;
  a.input = {1, -1, 0, 0.5};
  a.memory = {0, 0, 0, 0, 1, 1, 1, 1};
  item.attribution = a;
  const auto written = render_report({item}, dir);
  REQUIRE(written.size() == 1);
  for (const char* f : {"input_000007.json", "input_000007.pgm", "input_000007_example.pgm",
                        "input_000007_counterfactual.pgm", "input_000007_attr.pgm",
                        "input_000007_example_attr.pgm", "input_000007_counterfactual_attr.pgm"}) {
    CHECK(std::filesystem::exists(dir / f));
  }
  const auto pgm = read_pgm(dir / "input_000007.pgm");
  const auto raw = read_file_bytes((dir / "input_000007.pgm").string());
  CHECK(encode_pgm(pgm) == raw);
  const auto j = nlohmann::json::parse(std::ifstream(dir / "input_000007.json"));
  CHECK(j["uncertainty_flag"] == true);
  CHECK(j["best_counterfactual"]["class_rank"] == 2);
  std::filesystem::remove_all(dir);
}
