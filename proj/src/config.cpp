#include "memwrap/config.hpp"

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "memwrap/errors.hpp"

namespace memwrap {

using nlohmann::json;

namespace {

class Section {
 public:
  Section(const json& node, std::string path) : node_(node), path_(std::move(path)) {
    if (!node_.is_object()) throw ConfigError("'" + display() + "' must be an object");
  }

  bool has(const std::string& key) {
    seen_.insert(key);
    return node_.contains(key);
  }

  const json& require(const std::string& key) {
    if (!has(key)) throw ConfigError("missing required key '" + full(key) + "'");
    return node_.at(key);
  }

  std::size_t size(const std::string& key, std::size_t fallback, bool required = false) {
    if (!required && !has(key)) return fallback;
    const json& v = require(key);
    if (!v.is_number_unsigned()) throw ConfigError("'" + full(key) + "' must be a non-negative integer");
    return v.get<std::size_t>();
  }

  double number(const std::string& key, double fallback) {
    if (!has(key)) return fallback;
    const json& v = node_.at(key);
    if (!v.is_number()) throw ConfigError("'" + full(key) + "' must be a number");
    return v.get<double>();
  }

  std::string text(const std::string& key, const std::string& fallback, bool required = false) {
    if (!required && !has(key)) return fallback;
    const json& v = require(key);
    if (!v.is_string()) throw ConfigError("'" + full(key) + "' must be a string");
    return v.get<std::string>();
  }

  template <class T>
  std::vector<T> list(const std::string& key, std::vector<T> fallback) {
    if (!has(key)) return fallback;
    const json& v = node_.at(key);
    if (!v.is_array()) throw ConfigError("'" + full(key) + "' must be an array");
    std::vector<T> out;
    for (const auto& e : v) {
      const bool ok = std::is_integral_v<T> ? e.is_number_unsigned() : e.is_number();
      if (!ok) throw ConfigError("'" + full(key) + "' has an element of the wrong type");
      out.push_back(e.get<T>());
    }
    return out;
  }

  Section child(const std::string& key) {
    static const json empty = json::object();
    if (!has(key)) return Section(empty, full(key));
    return Section(node_.at(key), full(key));
  }

  void reject_unknown() const {
    for (auto it = node_.begin(); it != node_.end(); ++it) {
      if (!seen_.count(it.key())) throw ConfigError("unknown key '" + full(it.key()) + "'");
    }
  }

  std::string full(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

 private:
  std::string display() const { return path_.empty() ? "<root>" : path_; }
  const json& node_;
  std::string path_;
  std::set<std::string> seen_;
};

}  // namespace

EncoderSpec RunConfig::encoder_spec() const {
  return EncoderSpec{dataset.dim, model.encoder_widths, model.encoding_dim};
}

HeadSpec RunConfig::head_spec() const {
  return HeadSpec{model.variant, model.encoding_dim, dataset.classes, model.hidden_factor};
}

EvalConfig RunConfig::eval_config() const { return EvalConfig{memory.eval_batch, memory.eval_repeats}; }

MemoryConfig RunConfig::memory_config() const { return MemoryConfig{memory.size}; }

RunConfig parse_config(const std::string& text) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  RunConfig cfg;
  Section top(root, "");
  {
    const json& s = top.require("seed");
    if (!s.is_number_unsigned()) throw ConfigError("'seed' must be a non-negative integer");
    cfg.seed = s.get<std::uint64_t>();
  }

  Section ds = top.child("dataset");
  cfg.dataset.source = ds.text("source", "", true);
  if (cfg.dataset.source != "synthetic" && cfg.dataset.source != "idx") {
    throw ConfigError("'dataset.source' must be \"synthetic\" or \"idx\"");
  }
  cfg.dataset.path = ds.text("path", cfg.dataset.path);
  cfg.dataset.seed = ds.size("seed", cfg.dataset.seed);
  cfg.dataset.classes = ds.size("classes", cfg.dataset.classes);
  cfg.dataset.dim = ds.size("dim", cfg.dataset.dim);
  cfg.dataset.pool_per_class = ds.size("pool_per_class", cfg.dataset.pool_per_class);
  cfg.dataset.test_per_class = ds.size("test_per_class", cfg.dataset.test_per_class);
  cfg.dataset.train_size = ds.size("train_size", 0, true);
  cfg.dataset.noise = ds.number("noise", cfg.dataset.noise);
  cfg.dataset.validation_fraction = ds.number("validation_fraction", cfg.dataset.validation_fraction);
  if (cfg.dataset.source == "idx" && cfg.dataset.path.empty()) {
    throw ConfigError("'dataset.path' is required when dataset.source is \"idx\"");
  }
  if (cfg.dataset.train_size == 0) throw ConfigError("'dataset.train_size' must be >= 1");
  if (cfg.dataset.noise < 0.0) throw ConfigError("'dataset.noise' must be >= 0");
  if (!(cfg.dataset.validation_fraction >= 0.0 && cfg.dataset.validation_fraction < 1.0)) {
    throw ConfigError("'dataset.validation_fraction' must lie in [0, 1)");
  }
  ds.reject_unknown();

  Section md = top.child("model");
  cfg.model.variant = parse_variant(md.text("variant", "", true));
  cfg.model.encoder_widths = md.list<std::size_t>("encoder_widths", cfg.model.encoder_widths);
  cfg.model.encoding_dim = md.size("encoding_dim", cfg.model.encoding_dim);
  cfg.model.hidden_factor = md.size("hidden_factor", cfg.model.hidden_factor);
  md.reject_unknown();

  Section mem = top.child("memory");
  cfg.memory.size = mem.size("size", cfg.memory.size);
  cfg.memory.eval_batch = mem.size("eval_batch", cfg.memory.eval_batch);
  cfg.memory.eval_repeats = mem.size("eval_repeats", cfg.memory.eval_repeats);
  cfg.memory.draw_from = mem.text("draw_from", cfg.memory.draw_from);
  if (cfg.memory.draw_from != "subset" && cfg.memory.draw_from != "full") {
    throw ConfigError("'memory.draw_from' must be \"subset\" or \"full\"");
  }
  if (cfg.memory.size == 0) throw ConfigError("'memory.size' must be >= 1");
  mem.reject_unknown();

  Section tr = top.child("train");
  cfg.train.epochs = tr.size("epochs", 0, true);
  cfg.train.batch_size = tr.size("batch_size", 0, true);
  cfg.train.lr_initial = tr.number("lr_initial", cfg.train.lr_initial);
  cfg.train.momentum = tr.number("momentum", cfg.train.momentum);
  cfg.train.decay_milestones = tr.list<double>("decay_milestones", cfg.train.decay_milestones);
  cfg.train.decay_factor = tr.number("decay_factor", cfg.train.decay_factor);
  cfg.train.seed = cfg.seed;
  tr.reject_unknown();

  Section ex = top.child("explain");
  cfg.explain.ig_steps = ex.size("ig_steps", cfg.explain.ig_steps);
  cfg.explain.baseline = ex.text("baseline", cfg.explain.baseline);
  if (cfg.explain.baseline != "white" && cfg.explain.baseline != "black") {
    throw ConfigError("'explain.baseline' must be \"white\" or \"black\"");
  }
  if (cfg.explain.ig_steps == 0) throw ConfigError("'explain.ig_steps' must be >= 1");
  ex.reject_unknown();

  top.reject_unknown();

  cfg.encoder_spec().validate();
  cfg.head_spec().validate();
  cfg.train.validate();
  cfg.eval_config().validate();
  return cfg;
}

RunConfig load_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open config '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

std::string config_snapshot(const RunConfig& c) {
  nlohmann::ordered_json j;
  j["seed"] = c.seed;
  j["dataset"] = {{"source", c.dataset.source},
                  {"path", c.dataset.path},
                  {"seed", c.dataset.seed},
                  {"classes", c.dataset.classes},
                  {"dim", c.dataset.dim},
                  {"pool_per_class", c.dataset.pool_per_class},
                  {"test_per_class", c.dataset.test_per_class},
                  {"train_size", c.dataset.train_size},
                  {"noise", c.dataset.noise},
                  {"validation_fraction", c.dataset.validation_fraction}};
  j["model"] = {{"variant", std::string(variant_name(c.model.variant))},
                {"encoder_widths", c.model.encoder_widths},
                {"encoding_dim", c.model.encoding_dim},
                {"hidden_factor", c.model.hidden_factor}};
  j["memory"] = {{"size", c.memory.size},
                 {"eval_batch", c.memory.eval_batch},
                 {"eval_repeats", c.memory.eval_repeats},
                 {"draw_from", c.memory.draw_from}};
  j["train"] = {{"epochs", c.train.epochs},
                {"batch_size", c.train.batch_size},
                {"lr_initial", c.train.lr_initial},
                {"momentum", c.train.momentum},
                {"decay_milestones", c.train.decay_milestones},
                {"decay_factor", c.train.decay_factor}};
  j["explain"] = {{"ig_steps", c.explain.ig_steps}, {"baseline", c.explain.baseline}};
  return j.dump(2) + "\n";
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

const Dataset& RunData::memory_pool(const RunConfig& config) const {
  return config.memory.draw_from == "full" ? pool : train;
}

RunData build_data(const RunConfig& config) {
  RunData data;
  const auto& ds = config.dataset;
  if (ds.source == "synthetic") {
    Dataset all = gen_synthetic(ds.seed, ds.classes, ds.dim, ds.pool_per_class + ds.test_per_class,
                                ds.noise);
    auto [pool, test] = split_front(all, ds.classes * ds.pool_per_class);
    data.pool = std::move(pool);
    data.test = std::move(test);
  } else {
    const std::filesystem::path dir(ds.path);
    data.pool = parse_idx((dir / "train-images-idx3-ubyte").string(),
                          (dir / "train-labels-idx1-ubyte").string(), ds.classes);
    data.test = parse_idx((dir / "t10k-images-idx3-ubyte").string(),
                          (dir / "t10k-labels-idx1-ubyte").string(), ds.classes);
    if (data.pool.dim != ds.dim) {
      throw ConfigError("'dataset.dim' is " + std::to_string(ds.dim) + " but the IDX images have " +
                        std::to_string(data.pool.dim) + " pixels");
    }
  }
  data.pool.split = Split::Train;
  data.test.split = Split::Test;
  Dataset subset = reduced_subset(data.pool, ds.train_size, config.seed);
  auto tv = split_validation(subset, ds.validation_fraction, config.seed);
  data.train = std::move(tv.train);
  data.validation = std::move(tv.validation);
  return data;
}

}  // namespace memwrap
