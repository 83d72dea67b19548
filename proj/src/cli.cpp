#include "memwrap/cli.hpp"

#include <chrono>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "memwrap/errors.hpp"
#include "memwrap/explain.hpp"
#include "memwrap/report.hpp"
#include "memwrap/train.hpp"

namespace memwrap::cli {

namespace fs = std::filesystem;

namespace {

enum SeedStream : std::uint64_t { kInitStream = 1, kTrainStream = 2, kEvalStream = 3, kExplainStream = 4 };

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out << text;
  if (!out) throw IoError("write to '" + path.string() + "' failed");
}

bool non_empty_dir(const fs::path& p) {
  return fs::exists(p) && fs::is_directory(p) && !fs::is_empty(p);
}

void prepare_out_dir(const fs::path& dir, bool force) {
  if (fs::exists(dir) && !fs::is_directory(dir)) {
    throw IoError("'" + dir.string() + "' exists and is not a directory");
  }
  if (non_empty_dir(dir)) {
    if (!force) {
      throw IoError("run directory '" + dir.string() + "' is not empty (pass --force to overwrite)");
    }
    fs::remove_all(dir);
  }
  fs::create_directories(dir);
}

void check_compatible(const MemoryWrapModel& model, const RunConfig& config) {
  const auto& enc = model.encoder_spec();
  if (enc.input_dim != config.dataset.dim) {
    throw ConfigError("model expects " + std::to_string(enc.input_dim) +
                      " input features but dataset.dim is " + std::to_string(config.dataset.dim));
  }
  if (model.num_classes() != config.dataset.classes) {
    throw ConfigError("model has " + std::to_string(model.num_classes()) +
                      " classes but dataset.classes is " + std::to_string(config.dataset.classes));
  }
}

std::string summary_text(const RunConfig& config, const std::vector<MetricsRow>& rows) {
  std::ostringstream os;
  os << "variant " << variant_name(config.model.variant) << "\n";
  os << "epochs " << config.train.epochs << "\n";
  const MetricsRow* last_train = nullptr;
  const MetricsRow* last_val = nullptr;
  const MetricsRow* test = nullptr;
  for (const auto& r : rows) {
    if (r.split == Split::Train) last_train = &r;
    if (r.split == Split::Validation) last_val = &r;
    if (r.split == Split::Test) test = &r;
  }
  auto put = [&](const char* prefix, const MetricsRow* r) {
    if (!r) return;
    os << prefix << "_loss " << format_g9(r->loss) << "\n";
    os << prefix << "_accuracy " << format_g9(r->accuracy) << "\n";
  };
  put("final_train", last_train);
  put("final_val", last_val);
  put("test", test);
  if (test) os << "test_memory_collision_rate " << format_g9(test->memory_collision_rate) << "\n";
  return os.str();
}

Baseline make_baseline(const std::string& name, std::size_t dim) {
  return name == "black" ? black_baseline(dim) : white_baseline(dim);
}

}  // namespace

TrainedRun train_and_evaluate(const RunConfig& config, std::ostream& log) {
  if (!uses_memory(config.model.variant)) {
    log << "warning: variant=standard ignores the memory section\n";
  }
  const RunData data = build_data(config);
  MemoryWrapModel model(config.encoder_spec(), config.head_spec(), derive_seed(config.seed, kInitStream));
  TrainConfig tc = config.train;
  tc.seed = derive_seed(config.seed, kTrainStream);

  const auto t0 = std::chrono::steady_clock::now();
  TrainResult tr = train(model, data.train, data.validation, data.memory_pool(config),
                         config.memory_config(), tc);
  const auto t1 = std::chrono::steady_clock::now();

  EvalResult test = evaluate(model, data.test, data.memory_pool(config), config.memory_config(),
                             config.eval_config(), derive_seed(config.seed, kEvalStream));
  tr.metrics.push_back(MetricsRow{config.train.epochs, Split::Test, test.mean_loss,
                                  test.mean_accuracy, lr_at(tc, config.train.epochs - 1),
                                  test.collision_rate});
  const double seconds = std::chrono::duration<double>(t1 - t0).count();
  return TrainedRun{std::move(model), std::move(tr.metrics), std::move(test),
                    seconds / static_cast<double>(config.train.epochs)};
}

void cmd_train(const std::string& config_path, const fs::path& out_dir, bool force,
               std::ostream& out, std::ostream& log) {
  const RunConfig config = load_config(config_path);
  prepare_out_dir(out_dir, force);
  write_text(out_dir / kConfigSnapshot, config_snapshot(config));
  fs::create_directories(out_dir / kExplanationsDir);

  TrainedRun run = train_and_evaluate(config, log);
  write_text(out_dir / kMetricsFile, metrics_csv(run.metrics));
  save_model(run.model, (out_dir / kModelFile).string());
  write_text(out_dir / kSummaryFile, summary_text(config, run.metrics));
  out << "test accuracy " << format_g9(run.test.mean_accuracy) << " (std "
      << format_g9(run.test.std_accuracy) << ")\n";
  out << "run written to " << out_dir.string() << "\n";
}

void cmd_eval(const std::string& model_path, const std::string& config_path, std::ostream& out) {
  const RunConfig config = load_config(config_path);
  const MemoryWrapModel model = load_model(model_path);
  check_compatible(model, config);
  const RunData data = build_data(config);
  const EvalResult r = evaluate(model, data.test, data.memory_pool(config), config.memory_config(),
                                config.eval_config(), derive_seed(config.seed, kEvalStream));
  out << "variant " << variant_name(model.variant()) << "\n";
  out << "repeats " << r.per_repeat.size() << "\n";
  out << "mean_accuracy " << format_g9(r.mean_accuracy) << "\n";
  out << "std_accuracy " << format_g9(r.std_accuracy) << "\n";
  for (std::size_t i = 0; i < r.per_repeat.size(); ++i) {
    out << "repeat_" << i << " " << format_g9(r.per_repeat[i]) << "\n";
  }
}

void cmd_explain(const std::string& model_path, const std::string& config_path,
                 const fs::path& out_dir, std::size_t n_inputs, bool force, std::ostream& out) {
  const RunConfig config = load_config(config_path);
  const MemoryWrapModel model = load_model(model_path);
  check_compatible(model, config);
  if (!uses_memory(model.variant())) {
    throw ConfigError("no attention weights to explain: model variant is standard");
  }
  const RunData data = build_data(config);
  const Dataset& pool = data.memory_pool(config);
  if (n_inputs > data.test.size()) {
    throw ConfigError("--n " + std::to_string(n_inputs) + " exceeds test set of " +
                      std::to_string(data.test.size()));
  }

  const fs::path report_dir = out_dir / kExplanationsDir;
  if (non_empty_dir(report_dir)) {
    if (!force) {
      throw IoError("'" + report_dir.string() + "' is not empty (pass --force to overwrite)");
    }
    fs::remove_all(report_dir);
  }
  fs::create_directories(report_dir);

  const ExplanationPass pass = explain_dataset(model, data.test, pool, config.memory.size,
                                               config.memory.eval_batch,
                                               derive_seed(config.seed, kExplainStream));
  const Baseline baseline = make_baseline(config.explain.baseline, data.test.dim);
  std::vector<ReportItem> items;
  for (std::size_t i = 0; i < n_inputs; ++i) {
    const ExplanationRecord& rec = pass.records[i];
    const MemorySet& ms = pass.batch_memory[pass.batch_of_input[i]];
    const Tensor mem = gather_rows(pool, ms.indices);
    ReportItem item;
    item.record = rec;
    auto x = data.test.sample(rec.input_index);
    item.input.assign(x.begin(), x.end());
    if (rec.best_example) {
      auto s = pool.sample(rec.best_example->memory_index);
      item.best_example.assign(s.begin(), s.end());
    }
    if (rec.best_counterfactual) {
      auto s = pool.sample(rec.best_counterfactual->memory_index);
      item.best_counterfactual.assign(s.begin(), s.end());
    }
    item.attribution = integrated_gradients(model, x, mem.values(), rec.predicted_class, baseline,
                                            config.explain.ig_steps);
    item.image_rows = data.test.image_rows;
    item.image_cols = data.test.image_cols;
    items.push_back(std::move(item));
  }
  render_report(items, report_dir);

  const double expl = explanation_accuracy(pass);
  const CounterfactualSplit split = counterfactual_split_accuracy(pass);
  const VotingAccuracy votes = major_voting_accuracy(pass);
  auto opt = [](const std::optional<double>& v) { return v ? format_g9(*v) : std::string("absent"); };
  std::ostringstream os;
  os << "inputs " << pass.records.size() << "\n";
  os << "records_written " << items.size() << "\n";
  os << "accuracy " << format_g9(static_cast<double>(pass.correct) /
                                 static_cast<double>(std::max<std::size_t>(1, pass.records.size())))
     << "\n";
  os << "explanation_accuracy " << format_g9(expl) << "\n";
  os << "counterfactual_topped_accuracy " << opt(split.accuracy_flagged) << "\n";
  os << "non_flagged_accuracy " << opt(split.accuracy_rest) << "\n";
  os << "flagged_fraction " << format_g9(split.fraction_flagged) << "\n";
  os << "major_voting_labels_accuracy " << format_g9(votes.labels) << "\n";
  os << "major_voting_predictions_accuracy " << format_g9(votes.predictions) << "\n";
  write_text(out_dir / kExplainSummaryFile, os.str());
  out << os.str();
}

void cmd_sweep_memory(const std::string& config_path, const std::vector<std::size_t>& sizes,
                      std::ostream& out, std::ostream& log) {
  const RunConfig base = load_config(config_path);
  if (!uses_memory(base.model.variant)) {
    throw ConfigError("sweep-memory needs a memory variant (model.variant)");
  }
  if (sizes.empty()) throw ConfigError("sweep-memory needs at least one size");
  out << "memory_size,mean_accuracy,std_accuracy,seconds_per_epoch\n";
  for (auto m : sizes) {
    RunConfig cfg = base;
    cfg.memory.size = m;
    const TrainedRun run = train_and_evaluate(cfg, log);
    char secs[32];
    std::snprintf(secs, sizeof secs, "%.3f", run.seconds_per_epoch);
    out << m << "," << format_g9(run.test.mean_accuracy) << "," << format_g9(run.test.std_accuracy)
        << "," << secs << "\n";
  }
}

void cmd_params(std::uint64_t d, std::uint64_t classes, std::uint64_t body_params, Variant variant,
                std::ostream& out) {
  if (d == 0 || classes == 0) throw ConfigError("--d and --classes must be positive");
  out << count_parameters(body_params, d, classes, variant) << "\n";
}

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Memory Wrap: sparse content attention over a memory of training samples"};
  app.require_subcommand(1);

  std::string config_path, model_path, out_dir, variant = "memory_wrap";
  std::size_t n_inputs = 0;
  bool force = false;
  std::vector<std::size_t> sizes;
  std::uint64_t d = 0, classes = 0, body = 0, standard_total = 0;

  auto* train_cmd = app.add_subcommand("train", "train a model and write a run directory");
  train_cmd->add_option("--config", config_path, "run config (JSON)")->required();
  train_cmd->add_option("--out", out_dir, "run directory")->required();
  train_cmd->add_flag("--force", force, "overwrite a non-empty run directory");

  auto* eval_cmd = app.add_subcommand("eval", "evaluate a saved model on the test split");
  eval_cmd->add_option("--model", model_path)->required();
  eval_cmd->add_option("--config", config_path)->required();

  auto* explain_cmd = app.add_subcommand("explain", "extract explanations and attribution maps");
  explain_cmd->add_option("--model", model_path)->required();
  explain_cmd->add_option("--config", config_path)->required();
  explain_cmd->add_option("--out", out_dir)->required();
  explain_cmd->add_option("--n", n_inputs, "number of test inputs to report");
  explain_cmd->add_flag("--force", force);

  auto* sweep_cmd = app.add_subcommand("sweep-memory", "train/evaluate once per memory size");
  sweep_cmd->add_option("--config", config_path)->required();
  sweep_cmd->add_option("--sizes", sizes, "memory sizes")->required()->delimiter(',');

  auto* params_cmd = app.add_subcommand("params", "parameter count of encoder + head");
  params_cmd->add_option("--d", d, "encoder output width")->required();
  params_cmd->add_option("--classes", classes)->required();
  auto* body_opt = params_cmd->add_option("--body-params", body, "encoder parameters, classifier excluded");
  auto* total_opt = params_cmd->add_option("--standard-total", standard_total,
                                           "parameters of the standard model, d*c+c classifier included");
  body_opt->excludes(total_opt);
  params_cmd->add_option("--variant", variant, "standard | memory_wrap | only_memory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kConfigError;
  }

  try {
    if (*train_cmd) {
      cmd_train(config_path, out_dir, force, out, err);
    } else if (*eval_cmd) {
      cmd_eval(model_path, config_path, out);
    } else if (*explain_cmd) {
      cmd_explain(model_path, config_path, out_dir, n_inputs, force, out);
    } else if (*sweep_cmd) {
      cmd_sweep_memory(config_path, sizes, out, err);
    } else if (*params_cmd) {
      if (total_opt->count()) body = body_from_standard_total(standard_total, d, classes);
      cmd_params(d, classes, body, parse_variant(variant), out);
    }
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kConfigError;
  } catch (const FormatError& e) {
    err << "format error: " << e.what() << "\n";
    return kFormatError;
  } catch (const NumericError& e) {
    err << "numeric failure: " << e.what() << "\n";
    return kNumericError;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kFailure;
  }
  return kOk;
}

}  // namespace memwrap::cli
