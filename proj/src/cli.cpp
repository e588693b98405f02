// Copyright the latecache authors. Apache 2.0 licensed; see LICENSE in the project root.
#include "latecache/cli.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <initializer_list>
#include <iomanip>
#include <ostream>
#include <sstream>
#include <string>
#include <utility>

#include "json.hpp"
#include "latecache/fixtures.hpp"
#include "latecache/rng.hpp"
#include "latecache/textio.hpp"
#include "latecache/version.hpp"

namespace latecache {

namespace {

using nlohmann::json;
namespace fs = std::filesystem;

// Per-stage seed tags. Every stage derives its stream from the global seed,
// so two commands never consume the same random sequence.
constexpr std::uint64_t kSeedDataset = 1;
constexpr std::uint64_t kSeedModelInit = 2;
constexpr std::uint64_t kSeedBaseTrain = 3;
constexpr std::uint64_t kSeedTapSplit = 4;
constexpr std::uint64_t kSeedExplore = 5;
constexpr std::uint64_t kSeedWorkload = 6;
constexpr std::uint64_t kSeedServe = 7;
constexpr std::uint64_t kSeedPlanner = 8;

// ---------------------------------------------------------------- schema --

[[noreturn]] void fail(const std::string& message) { throw ConfigError("config: " + message); }

void expect_object(const json& j, const std::string& path) {
  if (!j.is_object()) fail(path + " must be an object");
}

// All keys listed are required and no others are allowed; report both
// directions with the full field path.
void expect_keys(const json& obj, const std::string& path, std::initializer_list<const char*> keys) {
  for (const auto& item : obj.items()) {
    bool known = false;
    for (const char* k : keys) {
      if (item.key() == k) {
        known = true;
        break;
      }
    }
    if (!known) fail("unknown key " + path + "." + item.key());
  }
  for (const char* k : keys) {
    if (!obj.contains(k)) fail("missing key " + path + "." + k);
  }
}

const json& member(const json& obj, const std::string& path, const char* key) {
  auto it = obj.find(key);
  if (it == obj.end()) fail("missing key " + path + "." + key);
  return *it;
}

double num_at(const json& obj, const std::string& path, const char* key) {
  const json& v = member(obj, path, key);
  if (!v.is_number()) fail(path + "." + key + " must be a number");
  return v.get<double>();
}

long long int_at(const json& obj, const std::string& path, const char* key) {
  const json& v = member(obj, path, key);
  if (!v.is_number_integer()) fail(path + "." + key + " must be an integer");
  return v.get<long long>();
}

std::string str_at(const json& obj, const std::string& path, const char* key) {
  const json& v = member(obj, path, key);
  if (!v.is_string()) fail(path + "." + key + " must be a string");
  return v.get<std::string>();
}

// ------------------------------------------------------------- hash & io --

std::string hex64(std::uint64_t value) {
  std::ostringstream out;
  out << std::hex << std::setfill('0') << std::setw(16) << value;
  return out.str();
}

std::ofstream open_output(const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write '" + path.string() + "'");
  return out;
}

std::ifstream open_artifact(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ArtifactError("missing artifact '" + path.string() + "'");
  return in;
}

// Opens and parses an artifact; a file that exists but does not parse is as
// unusable as a missing one, so both report as missing-artifact failures.
template <class Loader>
auto load_artifact(const fs::path& path, Loader&& loader) {
  std::ifstream in = open_artifact(path);
  try {
    return loader(in);
  } catch (const std::exception& e) {
    throw ArtifactError("artifact '" + path.string() + "': " + e.what());
  }
}

// Comment lines stamped into every text artifact.
std::vector<std::string> stamp(const ExperimentConfig& cfg) {
  return {std::string("tool_version ") + kToolVersion, "config_hash " + config_hash_hex(cfg)};
}

void stamp_csv(std::ostream& out, const ExperimentConfig& cfg) {
  for (const std::string& line : stamp(cfg)) out << "# " << line << '\n';
}

std::uint64_t hash_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read back '" + path.string() + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  const std::string bytes = buf.str();
  return fnv1a64(bytes.data(), bytes.size());
}

// The manifest makes a command's output auditable: identical config + seed
// must reproduce identical artifact hashes.
void write_manifest(const fs::path& dir, const std::string& command, const ExperimentConfig& cfg,
                    const std::vector<std::string>& files) {
  json m;
  m["version"] = 1;
  m["tool_version"] = kToolVersion;
  m["command"] = command;
  m["config_hash"] = config_hash_hex(cfg);
  m["seed"] = cfg.seed;
  json artifacts = json::array();
  for (const std::string& file : files) {
    artifacts.push_back(json{{"file", file}, {"fnv64", hex64(hash_file(dir / file))}});
  }
  m["artifacts"] = artifacts;
  open_output(dir / (command + "_manifest.json")) << m.dump(2) << '\n';
}

std::string join(const std::vector<std::string>& parts, const std::string& sep) {
  std::string out;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (i > 0) out += sep;
    out += parts[i];
  }
  return out;
}

std::string variant_file(const VariantMetrics& m) {
  return "variants/variant_" + std::to_string(m.layer) + "_" + std::to_string(m.variant) + ".txt";
}

// ------------------------------------------------------------ csv emitters --

// Latency CDF with duplicate latencies collapsed: one row per distinct value
// carrying the cumulative fraction at and below it.
void append_cdf_rows(std::ostream& out, const std::string& series, const std::vector<RequestTrace>& traces) {
  std::vector<double> lat;
  lat.reserve(traces.size());
  for (const RequestTrace& t : traces) lat.push_back(t.latency_ms);
  std::sort(lat.begin(), lat.end());
  const double n = static_cast<double>(lat.size());
  for (std::size_t i = 0; i < lat.size(); ++i) {
    if (i + 1 < lat.size() && lat[i + 1] == lat[i]) continue;
    if (!series.empty()) out << series << ',';
    out << fmt_double(lat[i]) << ',' << fmt_double(static_cast<double>(i + 1) / n) << '\n';
  }
}

struct IntervalCount {
  long long requests = 0;
  long long hits = 0;
};

std::vector<IntervalCount> bucket_traces(const std::vector<RequestTrace>& traces, double interval_min) {
  std::vector<IntervalCount> buckets;
  for (const RequestTrace& t : traces) {
    const auto idx = static_cast<std::size_t>(t.time_min / interval_min);
    if (idx >= buckets.size()) buckets.resize(idx + 1);
    ++buckets[idx].requests;
    if (t.hit_layer > 0) ++buckets[idx].hits;
  }
  return buckets;
}

void write_timeline_row(std::ostream& out, const IntervalCount& c) {
  const double rate = c.requests > 0 ? static_cast<double>(c.hits) / static_cast<double>(c.requests) : 0.0;
  out << ',' << c.requests << ',' << c.hits << ',' << fmt_double(rate);
}

// --------------------------------------------------------------- planning --

// The sweep / audit latency oracle: the cached node serves a fraction of its
// queries early at the hit latency; everything else observes the option's
// full latency. The Bernoulli draw happens before the branch so every query
// consumes the same number of random values regardless of outcome.
LatencyOracle make_oracle(const PlannerExperimentConfig& pc) {
  return [pc](const std::string& node, const ModelOption& option, Rng& rng) {
    if (node == pc.cached_node) {
      const bool hit = rng.next_double() < pc.cache_hit_rate;
      if (hit) return std::min(pc.cache_hit_ms, option.latency_ms);
    }
    return option.latency_ms;
  };
}

}  // namespace

// ------------------------------------------------------------------ config --

std::uint64_t fnv1a64(const char* data, std::size_t size) {
  std::uint64_t h = 1469598103934665603ULL;
  for (std::size_t i = 0; i < size; ++i) {
    h ^= static_cast<unsigned char>(data[i]);
    h *= 1099511628211ULL;
  }
  return h;
}

ExperimentConfig load_config(std::istream& in) {
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config: not valid JSON: ") + e.what());
  }
  expect_object(j, "$");
  expect_keys(j, "$",
              {"version", "seed", "dataset", "base_model", "profile", "cost_model", "menu", "cache_training",
               "composer", "workload", "adaptation", "planner"});
  if (int_at(j, "$", "version") != 1) fail("$.version must be 1");

  ExperimentConfig cfg;
  const long long seed = int_at(j, "$", "seed");
  if (seed < 0) fail("$.seed must be a nonnegative integer");
  cfg.seed = static_cast<std::uint64_t>(seed);

  {
    const json& d = member(j, "$", "dataset");
    expect_object(d, "$.dataset");
    expect_keys(d, "$.dataset",
                {"num_classes", "input_dim", "samples_per_class", "separation", "noise_stddev", "train_fraction",
                 "val_fraction"});
    const std::string p = "$.dataset";
    cfg.dataset.num_classes = static_cast<int>(int_at(d, p, "num_classes"));
    cfg.dataset.input_dim = static_cast<int>(int_at(d, p, "input_dim"));
    cfg.dataset.samples_per_class = static_cast<int>(int_at(d, p, "samples_per_class"));
    cfg.dataset.separation = num_at(d, p, "separation");
    cfg.dataset.noise_stddev = num_at(d, p, "noise_stddev");
    cfg.dataset.train_fraction = num_at(d, p, "train_fraction");
    cfg.dataset.val_fraction = num_at(d, p, "val_fraction");
  }
  {
    const json& b = member(j, "$", "base_model");
    expect_object(b, "$.base_model");
    expect_keys(b, "$.base_model", {"blocks", "widths", "epochs", "learning_rate", "momentum", "batch_size"});
    const std::string p = "$.base_model";
    cfg.blocks = static_cast<int>(int_at(b, p, "blocks"));
    if (cfg.blocks < 1) fail("$.base_model.blocks must be at least 1");
    const json& w = member(b, p, "widths");
    if (!w.is_array() || w.empty()) fail("$.base_model.widths must be a nonempty array");
    cfg.widths.clear();
    for (std::size_t i = 0; i < w.size(); ++i) {
      if (!w[i].is_number_integer() || w[i].get<long long>() < 1) {
        fail("$.base_model.widths[" + std::to_string(i) + "] must be a positive integer");
      }
      cfg.widths.push_back(static_cast<int>(w[i].get<long long>()));
    }
    cfg.base_train.epochs = static_cast<int>(int_at(b, p, "epochs"));
    cfg.base_train.learning_rate = num_at(b, p, "learning_rate");
    cfg.base_train.momentum = num_at(b, p, "momentum");
    cfg.base_train.batch_size = static_cast<int>(int_at(b, p, "batch_size"));
  }
  {
    const json& pr = member(j, "$", "profile");
    expect_object(pr, "$.profile");
    expect_keys(pr, "$.profile", {"per_block_ms"});
    cfg.per_block_ms = num_at(pr, "$.profile", "per_block_ms");
  }
  {
    const json& c = member(j, "$", "cost_model");
    expect_object(c, "$.cost_model");
    expect_keys(c, "$.cost_model", {"ms_per_mac", "lookup_overhead_ms", "bytes_per_parameter"});
    const std::string p = "$.cost_model";
    cfg.cost.ms_per_mac = num_at(c, p, "ms_per_mac");
    cfg.cost.lookup_overhead_ms = num_at(c, p, "lookup_overhead_ms");
    cfg.cost.bytes_per_parameter = num_at(c, p, "bytes_per_parameter");
  }
  {
    const json& m = member(j, "$", "menu");
    if (!m.is_array() || m.empty()) fail("$.menu must be a nonempty array of architecture strings");
    cfg.menu.clear();
    for (std::size_t i = 0; i < m.size(); ++i) {
      if (!m[i].is_string()) fail("$.menu[" + std::to_string(i) + "] must be a string");
      try {
        cfg.menu.push_back(ArchSpec::parse(m[i].get<std::string>()));
      } catch (const std::exception& e) {
        fail("$.menu[" + std::to_string(i) + "]: " + e.what());
      }
    }
  }
  {
    const json& c = member(j, "$", "cache_training");
    expect_object(c, "$.cache_training");
    expect_keys(c, "$.cache_training",
                {"train_fraction", "predictor_epochs", "predictor_learning_rate", "selector_epochs",
                 "selector_learning_rate", "tau", "beta", "false_positive_weight", "false_negative_weight",
                 "delta_grid", "target_accuracy", "threads"});
    const std::string p = "$.cache_training";
    cfg.cache_split_fraction = num_at(c, p, "train_fraction");
    cfg.cache_train.predictor.epochs = static_cast<int>(int_at(c, p, "predictor_epochs"));
    cfg.cache_train.predictor.learning_rate = num_at(c, p, "predictor_learning_rate");
    cfg.cache_train.selector.epochs = static_cast<int>(int_at(c, p, "selector_epochs"));
    cfg.cache_train.selector.learning_rate = num_at(c, p, "selector_learning_rate");
    cfg.cache_train.tau = num_at(c, p, "tau");
    cfg.cache_train.beta = num_at(c, p, "beta");
    cfg.cache_train.w_fp = num_at(c, p, "false_positive_weight");
    cfg.cache_train.w_fn = num_at(c, p, "false_negative_weight");
    const json& grid = member(c, p, "delta_grid");
    if (!grid.is_array() || grid.empty()) fail("$.cache_training.delta_grid must be a nonempty array");
    cfg.cache_train.delta_grid.clear();
    for (std::size_t i = 0; i < grid.size(); ++i) {
      if (!grid[i].is_number()) fail("$.cache_training.delta_grid[" + std::to_string(i) + "] must be a number");
      cfg.cache_train.delta_grid.push_back(grid[i].get<double>());
    }
    cfg.cache_train.target_accuracy = num_at(c, p, "target_accuracy");
    cfg.explore_threads = static_cast<int>(int_at(c, p, "threads"));
  }
  {
    const json& c = member(j, "$", "composer");
    expect_object(c, "$.composer");
    expect_keys(c, "$.composer", {"accuracy_threshold", "memory_budget_mb", "alpha"});
    const std::string p = "$.composer";
    cfg.composer.accuracy_threshold = num_at(c, p, "accuracy_threshold");
    cfg.composer.memory_budget_mb = num_at(c, p, "memory_budget_mb");
    cfg.composer.alpha = num_at(c, p, "alpha");
  }
  {
    const json& w = member(j, "$", "workload");
    expect_object(w, "$.workload");
    expect_keys(w, "$.workload", {"zipf_alpha", "rotation_period_min", "requests_per_sec", "duration_min"});
    const std::string p = "$.workload";
    cfg.workload.zipf_alpha = num_at(w, p, "zipf_alpha");
    cfg.workload.rotation_period_min = num_at(w, p, "rotation_period_min");
    cfg.workload.requests_per_sec = num_at(w, p, "requests_per_sec");
    cfg.workload.duration_min = num_at(w, p, "duration_min");
  }
  {
    const json& a = member(j, "$", "adaptation");
    expect_object(a, "$.adaptation");
    expect_keys(a, "$.adaptation",
                {"sample_rate", "window_min", "retrain_interval_min", "recency_decay", "mixin_fraction", "epochs",
                 "learning_rate", "retrain_pause_ms"});
    const std::string p = "$.adaptation";
    cfg.adaptation.sample_rate = num_at(a, p, "sample_rate");
    cfg.adaptation.window_min = num_at(a, p, "window_min");
    cfg.adaptation.retrain_interval_min = num_at(a, p, "retrain_interval_min");
    cfg.adaptation.recency_decay = num_at(a, p, "recency_decay");
    cfg.adaptation.mixin_fraction = num_at(a, p, "mixin_fraction");
    cfg.adaptation.epochs = static_cast<int>(int_at(a, p, "epochs"));
    cfg.adaptation.learning_rate = num_at(a, p, "learning_rate");
    cfg.adaptation.retrain_pause_ms = num_at(a, p, "retrain_pause_ms");
  }
  {
    const json& pl = member(j, "$", "planner");
    expect_object(pl, "$.planner");
    expect_keys(pl, "$.planner",
                {"dag_file", "policy", "queries_per_slo", "slo_from_ms", "slo_to_ms", "slo_step_ms",
                 "audit_queries", "audit_slo_ms", "cached_node", "cache_hit_rate", "cache_hit_ms"});
    const std::string p = "$.planner";
    cfg.planner.dag_file = str_at(pl, p, "dag_file");
    const std::string policy = str_at(pl, p, "policy");
    if (policy == "equal") {
      cfg.planner.policy = BudgetPolicy::kEqual;
    } else if (policy == "proportional") {
      cfg.planner.policy = BudgetPolicy::kProportional;
    } else {
      fail("$.planner.policy must be \"equal\" or \"proportional\"");
    }
    cfg.planner.queries_per_slo = static_cast<int>(int_at(pl, p, "queries_per_slo"));
    if (cfg.planner.queries_per_slo < 1) fail("$.planner.queries_per_slo must be at least 1");
    cfg.planner.slo_from_ms = num_at(pl, p, "slo_from_ms");
    cfg.planner.slo_to_ms = num_at(pl, p, "slo_to_ms");
    cfg.planner.slo_step_ms = num_at(pl, p, "slo_step_ms");
    if (cfg.planner.slo_step_ms <= 0.0) fail("$.planner.slo_step_ms must be positive");
    if (cfg.planner.slo_to_ms < cfg.planner.slo_from_ms) fail("$.planner.slo_to_ms must be >= slo_from_ms");
    cfg.planner.audit_queries = static_cast<int>(int_at(pl, p, "audit_queries"));
    if (cfg.planner.audit_queries < 0) fail("$.planner.audit_queries must be nonnegative");
    cfg.planner.audit_slo_ms = num_at(pl, p, "audit_slo_ms");
    if (cfg.planner.audit_slo_ms <= 0.0) fail("$.planner.audit_slo_ms must be positive");
    cfg.planner.cached_node = str_at(pl, p, "cached_node");
    cfg.planner.cache_hit_rate = num_at(pl, p, "cache_hit_rate");
    if (cfg.planner.cache_hit_rate < 0.0 || cfg.planner.cache_hit_rate > 1.0) {
      fail("$.planner.cache_hit_rate must be in [0, 1]");
    }
    cfg.planner.cache_hit_ms = num_at(pl, p, "cache_hit_ms");
    if (cfg.planner.cache_hit_ms < 0.0) fail("$.planner.cache_hit_ms must be nonnegative");
  }
  return cfg;
}

ExperimentConfig load_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file '" + path + "'");
  return load_config(in);
}

std::string canonical_config_text(const ExperimentConfig& cfg) {
  json j;
  j["version"] = 1;
  j["seed"] = cfg.seed;
  j["dataset"] = {{"num_classes", cfg.dataset.num_classes},
                  {"input_dim", cfg.dataset.input_dim},
                  {"samples_per_class", cfg.dataset.samples_per_class},
                  {"separation", cfg.dataset.separation},
                  {"noise_stddev", cfg.dataset.noise_stddev},
                  {"train_fraction", cfg.dataset.train_fraction},
                  {"val_fraction", cfg.dataset.val_fraction}};
  j["base_model"] = {{"blocks", cfg.blocks},           {"widths", cfg.widths},
                     {"epochs", cfg.base_train.epochs}, {"learning_rate", cfg.base_train.learning_rate},
                     {"momentum", cfg.base_train.momentum}, {"batch_size", cfg.base_train.batch_size}};
  j["profile"] = {{"per_block_ms", cfg.per_block_ms}};
  j["cost_model"] = {{"ms_per_mac", cfg.cost.ms_per_mac},
                     {"lookup_overhead_ms", cfg.cost.lookup_overhead_ms},
                     {"bytes_per_parameter", cfg.cost.bytes_per_parameter}};
  json menu = json::array();
  for (const ArchSpec& arch : cfg.menu) menu.push_back(arch.to_string());
  j["menu"] = menu;
  j["cache_training"] = {{"train_fraction", cfg.cache_split_fraction},
                         {"predictor_epochs", cfg.cache_train.predictor.epochs},
                         {"predictor_learning_rate", cfg.cache_train.predictor.learning_rate},
                         {"selector_epochs", cfg.cache_train.selector.epochs},
                         {"selector_learning_rate", cfg.cache_train.selector.learning_rate},
                         {"tau", cfg.cache_train.tau},
                         {"beta", cfg.cache_train.beta},
                         {"false_positive_weight", cfg.cache_train.w_fp},
                         {"false_negative_weight", cfg.cache_train.w_fn},
                         {"delta_grid", cfg.cache_train.delta_grid},
                         {"target_accuracy", cfg.cache_train.target_accuracy},
                         {"threads", cfg.explore_threads}};
  j["composer"] = {{"accuracy_threshold", cfg.composer.accuracy_threshold},
                   {"memory_budget_mb", cfg.composer.memory_budget_mb},
                   {"alpha", cfg.composer.alpha}};
  j["workload"] = {{"zipf_alpha", cfg.workload.zipf_alpha},
                   {"rotation_period_min", cfg.workload.rotation_period_min},
                   {"requests_per_sec", cfg.workload.requests_per_sec},
                   {"duration_min", cfg.workload.duration_min}};
  j["adaptation"] = {{"sample_rate", cfg.adaptation.sample_rate},
                     {"window_min", cfg.adaptation.window_min},
                     {"retrain_interval_min", cfg.adaptation.retrain_interval_min},
                     {"recency_decay", cfg.adaptation.recency_decay},
                     {"mixin_fraction", cfg.adaptation.mixin_fraction},
                     {"epochs", cfg.adaptation.epochs},
                     {"learning_rate", cfg.adaptation.learning_rate},
                     {"retrain_pause_ms", cfg.adaptation.retrain_pause_ms}};
  j["planner"] = {{"dag_file", cfg.planner.dag_file},
                  {"policy", cfg.planner.policy == BudgetPolicy::kEqual ? "equal" : "proportional"},
                  {"queries_per_slo", cfg.planner.queries_per_slo},
                  {"slo_from_ms", cfg.planner.slo_from_ms},
                  {"slo_to_ms", cfg.planner.slo_to_ms},
                  {"slo_step_ms", cfg.planner.slo_step_ms},
                  {"audit_queries", cfg.planner.audit_queries},
                  {"audit_slo_ms", cfg.planner.audit_slo_ms},
                  {"cached_node", cfg.planner.cached_node},
                  {"cache_hit_rate", cfg.planner.cache_hit_rate},
                  {"cache_hit_ms", cfg.planner.cache_hit_ms}};
  return j.dump();
}

std::string config_hash_hex(const ExperimentConfig& cfg) {
  const std::string text = canonical_config_text(cfg);
  return hex64(fnv1a64(text.data(), text.size()));
}

// ---------------------------------------------------------------- commands --

void cmd_prepare(const ExperimentConfig& cfg, const std::string& out_dir, std::ostream& log) {
  const fs::path dir(out_dir);
  fs::create_directories(dir);

  DatasetSpec dspec = cfg.dataset;
  dspec.seed = mix_seed(cfg.seed, kSeedDataset);
  const Dataset data = gen_dataset(dspec);

  BaseModel model =
      make_base_model(dspec.input_dim, dspec.num_classes, cfg.widths, cfg.blocks, mix_seed(cfg.seed, kSeedModelInit));
  TrainConfig tcfg = cfg.base_train;
  tcfg.seed = mix_seed(cfg.seed, kSeedBaseTrain);
  const TrainLog train_log = train_base(model, data, tcfg);

  const LayerProfile profile = LayerProfile::uniform(cfg.blocks, cfg.per_block_ms);

  {
    std::ofstream out = open_output(dir / "dataset.txt");
    save_dataset(out, data, stamp(cfg));
  }
  {
    std::ofstream out = open_output(dir / "model.txt");
    save_base_model(out, model, stamp(cfg));
  }
  {
    std::ofstream out = open_output(dir / "profile.txt");
    save_profile(out, profile, stamp(cfg));
  }
  write_manifest(dir, "prepare", cfg, {"dataset.txt", "model.txt", "profile.txt"});

  const std::size_t samples = data.train.size() + data.val.size() + data.test.size();
  log << "prepare: wrote dataset.txt (" << samples << " samples), model.txt (test accuracy "
      << fmt_double(train_log.test_accuracy) << "), profile.txt (total " << fmt_double(profile.total()) << " ms)\n";
}

void cmd_explore(const ExperimentConfig& cfg, const std::string& out_dir, const std::string& fixture,
                 std::ostream& log) {
  const fs::path dir(out_dir);
  fs::create_directories(dir);

  if (fixture == "table4") {
    const std::vector<VariantMetrics> rows = fixture_metrics();
    std::vector<std::string> comments = stamp(cfg);
    comments.push_back("source: published reference measurements");
    {
      std::ofstream out = open_output(dir / "metrics.txt");
      save_metrics(out, rows, comments);
    }
    write_manifest(dir, "explore", cfg, {"metrics.txt"});
    log << "explore: wrote metrics.txt (" << rows.size() << " reference rows)\n";
    return;
  }

  const BaseModel model = load_artifact(dir / "model.txt", [](std::istream& in) { return load_base_model(in); });
  const Dataset data = load_artifact(dir / "dataset.txt", [](std::istream& in) { return load_dataset(in); });

  std::vector<TapRecord> records = collect_taps(model, data.val);
  const CacheData split =
      split_cache_data(std::move(records), cfg.cache_split_fraction, mix_seed(cfg.seed, kSeedTapSplit));
  const ExploreResult result = explore_variants(model, split, cfg.menu, cfg.cache_train, cfg.cost,
                                                mix_seed(cfg.seed, kSeedExplore), cfg.explore_threads);

  std::vector<std::string> files = {"metrics.txt"};
  {
    std::ofstream out = open_output(dir / "metrics.txt");
    save_metrics(out, result.metrics, stamp(cfg));
  }
  fs::create_directories(dir / "variants");
  for (std::size_t i = 0; i < result.variants.size(); ++i) {
    const std::string name = variant_file(result.metrics[i]);
    std::ofstream out = open_output(dir / name);
    save_variant(out, result.variants[i], stamp(cfg));
    files.push_back(name);
  }
  write_manifest(dir, "explore", cfg, files);

  log << "explore: wrote metrics.txt (" << result.metrics.size() << " rows) and " << result.variants.size()
      << " variant checkpoints\n";
}

void cmd_compose(const ExperimentConfig& cfg, const std::string& out_dir, const std::string& fixture,
                 std::ostream& log) {
  const fs::path dir(out_dir);
  fs::create_directories(dir);

  std::vector<VariantMetrics> metrics;
  LayerProfile profile;
  if (fixture == "table4") {
    metrics = fixture_metrics();
    profile = fixture_profile();
  } else {
    metrics = load_artifact(dir / "metrics.txt", [](std::istream& in) { return load_metrics(in); });
    profile = load_artifact(dir / "profile.txt", [](std::istream& in) { return load_profile(in); });
  }

  const SelectionPlan plan = compose_relaxed(metrics, profile, cfg.composer);
  const double latency = expected_latency(plan, metrics, profile);
  const double accuracy = plan_accuracy(plan, metrics);
  double memory = 0.0;
  for (std::size_t idx : plan.chosen) memory += metrics[idx].memory_mb;
  const ConstraintReport report = check_constraints(plan, metrics, profile, cfg.composer);

  {
    std::vector<std::string> comments = stamp(cfg);
    comments.push_back("expected_latency_ms " + fmt_double(latency));
    comments.push_back("plan_accuracy " + fmt_double(accuracy));
    comments.push_back("memory_mb " + fmt_double(memory));
    comments.push_back(std::string("feasible ") + (report.feasible ? "yes" : "no"));
    for (const std::string& v : report.violations) comments.push_back("violation: " + v);
    std::ofstream out = open_output(dir / "plan.txt");
    save_plan(out, plan, metrics, comments);
  }

  {
    const SweepResult sweep = sweep_alpha(metrics, profile, cfg.composer);
    std::ofstream out = open_output(dir / "alpha_sweep.csv");
    stamp_csv(out, cfg);
    out << "alpha,chosen,expected_latency_ms,plan_accuracy,best\n";
    for (const AlphaPoint& point : sweep.curve) {
      out << fmt_double(point.alpha) << ',' << point.plan.size() << ',' << fmt_double(point.latency_ms) << ','
          << fmt_double(point.accuracy) << ',' << (point.alpha == sweep.best_alpha ? 1 : 0) << '\n';
    }
  }

  {
    std::ofstream out = open_output(dir / "exact_comparison.txt");
    for (const std::string& line : stamp(cfg)) out << "# " << line << '\n';
    out << "relaxed_latency_ms " << fmt_double(latency) << '\n';
    try {
      const SelectionPlan exact = compose_exact(metrics, profile, cfg.composer);
      const double exact_latency = expected_latency(exact, metrics, profile);
      out << "exact_latency_ms " << fmt_double(exact_latency) << '\n';
      out << "gap_ms " << fmt_double(latency - exact_latency) << '\n';
      out << "exact_choices " << exact.size() << '\n';
      for (std::size_t idx : exact.chosen) {
        out << "exact_choice " << metrics[idx].layer << ' ' << metrics[idx].variant << ' '
            << metrics[idx].arch.to_string() << '\n';
      }
    } catch (const std::runtime_error& e) {
      out << "enumeration_skipped " << e.what() << '\n';
    }
  }

  write_manifest(dir, "compose", cfg, {"plan.txt", "alpha_sweep.csv", "exact_comparison.txt"});

  log << "compose: wrote plan.txt (" << plan.size() << " variants, expected latency " << fmt_double(latency)
      << " ms, accuracy " << fmt_double(accuracy) << ", memory " << fmt_double(memory) << " MB, "
      << (report.feasible ? "feasible" : "INFEASIBLE") << ")\n";
}

namespace {

// Shared tail of the simulate command for a single (non-paired) run.
void write_single_run(const fs::path& dir, const ExperimentConfig& cfg, const LayerProfile& profile,
                      const std::vector<RequestTrace>& traces, std::ostream& log) {
  const SimSummary summary = summarize(traces, profile);
  {
    std::ofstream out = open_output(dir / "trace.txt");
    save_traces(out, traces, stamp(cfg));
  }
  {
    std::ofstream out = open_output(dir / "summary.txt");
    save_summary(out, summary, stamp(cfg));
  }
  {
    std::ofstream out = open_output(dir / "latency_cdf.csv");
    stamp_csv(out, cfg);
    out << "latency_ms,cum_fraction\n";
    append_cdf_rows(out, "", traces);
  }
  {
    std::ofstream out = open_output(dir / "hit_timeline.csv");
    stamp_csv(out, cfg);
    out << "interval,start_min,requests,hits,hit_rate\n";
    const auto buckets = bucket_traces(traces, cfg.adaptation.retrain_interval_min);
    for (std::size_t i = 0; i < buckets.size(); ++i) {
      out << i << ',' << fmt_double(static_cast<double>(i) * cfg.adaptation.retrain_interval_min);
      write_timeline_row(out, buckets[i]);
      out << '\n';
    }
  }
  write_manifest(dir, "simulate", cfg, {"trace.txt", "summary.txt", "latency_cdf.csv", "hit_timeline.csv"});

  log << "simulate: " << summary.requests << " requests, avg latency " << fmt_double(summary.avg_latency_ms)
      << " ms, hit rate " << fmt_double(summary.hit_rate) << ", agreement " << fmt_double(summary.agreement)
      << "\n";
}

}  // namespace

void cmd_simulate(const ExperimentConfig& cfg, const std::string& out_dir, bool adapt, const std::string& fixture,
                  std::ostream& log) {
  const fs::path dir(out_dir);
  fs::create_directories(dir);
  const bool use_fixture = fixture == "table4";
  if (use_fixture && adapt) {
    throw ConfigError("--adapt retrains cache variants, which the table4 fixture does not carry; "
                      "run against prepared artifacts instead");
  }

  std::vector<VariantMetrics> metrics;
  LayerProfile profile;
  if (use_fixture) {
    metrics = fixture_metrics();
    profile = fixture_profile();
  } else {
    metrics = load_artifact(dir / "metrics.txt", [](std::istream& in) { return load_metrics(in); });
    profile = load_artifact(dir / "profile.txt", [](std::istream& in) { return load_profile(in); });
  }
  const SelectionPlan plan =
      load_artifact(dir / "plan.txt", [&metrics](std::istream& in) { return load_plan(in, metrics); });

  const ConstraintReport report = check_constraints(plan, metrics, profile, cfg.composer);
  if (!report.feasible) {
    throw InfeasiblePlanError("plan violates deployment constraints: " + join(report.violations, "; "));
  }

  WorkloadSpec wspec = cfg.workload;
  wspec.num_classes = cfg.dataset.num_classes;
  wspec.seed = mix_seed(cfg.seed, kSeedWorkload);

  if (use_fixture) {
    // Profile-driven run: only the request stream matters, so the dataset is
    // regenerated from the config instead of read from disk.
    DatasetSpec dspec = cfg.dataset;
    dspec.seed = mix_seed(cfg.seed, kSeedDataset);
    const Dataset data = gen_dataset(dspec);
    const std::vector<Request> stream = gen_workload(wspec, data);
    const std::vector<RequestTrace> traces = simulate_profile(plan, metrics, profile, cfg.composer,
                                                              wspec.num_classes, stream, mix_seed(cfg.seed, kSeedServe));
    write_single_run(dir, cfg, profile, traces, log);
    return;
  }

  const BaseModel model = load_artifact(dir / "model.txt", [](std::istream& in) { return load_base_model(in); });
  const Dataset data = load_artifact(dir / "dataset.txt", [](std::istream& in) { return load_dataset(in); });

  // Variant checkpoints live in a vector parallel to the metrics table; only
  // the chosen rows are needed (and loaded).
  std::vector<CacheVariant> variants(metrics.size());
  for (std::size_t idx : plan.chosen) {
    variants[idx] =
        load_artifact(dir / variant_file(metrics[idx]), [](std::istream& in) { return load_variant(in); });
  }

  Deployment dep{&model, &variants, plan, metrics, profile, cfg.cost, cfg.composer};
  const std::vector<Request> stream = gen_workload(wspec, data);

  if (!adapt) {
    const std::vector<RequestTrace> traces = simulate_model(dep, data, stream);
    write_single_run(dir, cfg, profile, traces, log);
    return;
  }

  // Paired experiment: one run with periodic retraining, one with the caches
  // frozen, on the identical request stream. The original training records
  // (for replay mixing) are reconstructed exactly as exploration built them.
  std::vector<TapRecord> records = collect_taps(model, data.val);
  const CacheData split =
      split_cache_data(std::move(records), cfg.cache_split_fraction, mix_seed(cfg.seed, kSeedTapSplit));
  const std::uint64_t serve_seed = mix_seed(cfg.seed, kSeedServe);
  const AdaptationResult adaptive =
      run_adaptation(dep, data, stream, cfg.adaptation, cfg.cache_train, split.train, serve_seed, true);
  const AdaptationResult frozen =
      run_adaptation(dep, data, stream, cfg.adaptation, cfg.cache_train, split.train, serve_seed, false);

  const SimSummary summary_adaptive = summarize(adaptive.traces, profile);
  const SimSummary summary_frozen = summarize(frozen.traces, profile);
  {
    std::ofstream out = open_output(dir / "trace_adaptive.txt");
    save_traces(out, adaptive.traces, stamp(cfg));
  }
  {
    std::ofstream out = open_output(dir / "trace_static.txt");
    save_traces(out, frozen.traces, stamp(cfg));
  }
  {
    std::ofstream out = open_output(dir / "summary_adaptive.txt");
    save_summary(out, summary_adaptive, stamp(cfg));
  }
  {
    std::ofstream out = open_output(dir / "summary_static.txt");
    save_summary(out, summary_frozen, stamp(cfg));
  }
  {
    std::ofstream out = open_output(dir / "latency_cdf.csv");
    stamp_csv(out, cfg);
    out << "series,latency_ms,cum_fraction\n";
    append_cdf_rows(out, "adaptive", adaptive.traces);
    append_cdf_rows(out, "static", frozen.traces);
  }
  {
    std::ofstream out = open_output(dir / "hit_timeline.csv");
    stamp_csv(out, cfg);
    out << "interval,start_min,adaptive_requests,adaptive_hits,adaptive_hit_rate,"
           "static_requests,static_hits,static_hit_rate\n";
    auto a = bucket_traces(adaptive.traces, cfg.adaptation.retrain_interval_min);
    auto b = bucket_traces(frozen.traces, cfg.adaptation.retrain_interval_min);
    const std::size_t n = std::max(a.size(), b.size());
    a.resize(n);
    b.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      out << i << ',' << fmt_double(static_cast<double>(i) * cfg.adaptation.retrain_interval_min);
      write_timeline_row(out, a[i]);
      write_timeline_row(out, b[i]);
      out << '\n';
    }
  }
  {
    std::ofstream out = open_output(dir / "retrain_log.txt");
    for (const std::string& line : stamp(cfg)) out << "# " << line << '\n';
    for (const RetrainEvent& e : adaptive.retrains) {
      out << "interval=" << e.interval << " time_min=" << fmt_double(e.time_min) << " window=" << e.window_size
          << " mixin=" << e.mixin_size << " applied=" << (e.applied ? 1 : 0);
      if (!e.note.empty()) out << " note=" << e.note;
      out << '\n';
    }
  }
  write_manifest(dir, "simulate", cfg,
                 {"trace_adaptive.txt", "trace_static.txt", "summary_adaptive.txt", "summary_static.txt",
                  "latency_cdf.csv", "hit_timeline.csv", "retrain_log.txt"});

  log << "simulate: paired adaptation run over " << summary_adaptive.requests << " requests; hit rate "
      << fmt_double(summary_adaptive.hit_rate) << " adaptive vs " << fmt_double(summary_frozen.hit_rate)
      << " static, " << adaptive.retrains.size() << " retrain events\n";
}

void cmd_plan(const ExperimentConfig& cfg, const std::string& out_dir, bool replan, std::ostream& log) {
  const fs::path dir(out_dir);
  fs::create_directories(dir);
  const PlannerExperimentConfig& pc = cfg.planner;

  QueryDag dag;
  if (pc.dag_file.empty()) {
    dag = fixture_traffic_dag();
  } else {
    std::ifstream in = open_artifact(pc.dag_file);
    try {
      dag = load_dag(in);
    } catch (const std::exception& e) {
      throw ConfigError("invalid DAG file '" + pc.dag_file + "': " + e.what());
    }
  }

  const LatencyOracle oracle = make_oracle(pc);
  const std::uint64_t seed = mix_seed(cfg.seed, kSeedPlanner);

  int slos = 0;
  {
    std::ofstream out = open_output(dir / "slo_sweep.csv");
    stamp_csv(out, cfg);
    out << "slo_ms,queries,accuracy_replan_off,accuracy_replan_on,latency_ms_replan_off,latency_ms_replan_on,"
           "risky_off,risky_on\n";
    for (double slo = pc.slo_from_ms; slo <= pc.slo_to_ms + 1e-9; slo += pc.slo_step_ms) {
      const ReplanComparison c = compare_replanning(dag, slo, pc.policy, oracle, pc.queries_per_slo, seed);
      out << fmt_double(slo) << ',' << c.queries << ',' << fmt_double(c.accuracy_off) << ','
          << fmt_double(c.accuracy_on) << ',' << fmt_double(c.latency_off) << ',' << fmt_double(c.latency_on)
          << ',' << c.risky_off << ',' << c.risky_on << '\n';
      ++slos;
    }
  }

  {
    std::ofstream out = open_output(dir / "audit.txt");
    for (const std::string& line : stamp(cfg)) out << "# " << line << '\n';
    out << "# per-query execution log at slo " << fmt_double(pc.audit_slo_ms) << " ms, replanning "
        << (replan ? "on" : "off") << '\n';
    for (int q = 0; q < pc.audit_queries; ++q) {
      const QueryResult r = run_query(dag, pc.audit_slo_ms, pc.policy, oracle, replan, seed, q);
      out << "query " << q << '\n';
      for (const NodeExecution& step : r.steps) {
        out << "  node=" << step.node << " option=" << step.option.name << " budget_ms="
            << fmt_double(step.budget_ms) << " observed_ms=" << fmt_double(step.observed_ms)
            << " saved_ms=" << fmt_double(step.saved_ms) << " slo_risk=" << (step.slo_risk ? 1 : 0)
            << " correct=" << (step.correct ? 1 : 0) << '\n';
      }
      out << "  total_ms=" << fmt_double(r.total_latency_ms) << " correct=" << (r.correct ? 1 : 0)
          << " slo_risk=" << (r.slo_risk ? 1 : 0) << " slo_violated=" << (r.slo_violated ? 1 : 0) << '\n';
    }
  }

  write_manifest(dir, "plan", cfg, {"slo_sweep.csv", "audit.txt"});

  log << "plan: swept " << slos << " SLOs x " << pc.queries_per_slo << " paired queries; audited "
      << pc.audit_queries << " queries at " << fmt_double(pc.audit_slo_ms) << " ms (replanning "
      << (replan ? "on" : "off") << ")\n";
}

int run_cli(const CliOptions& options, std::ostream& log) {
  try {
    const std::string& cmd = options.command;
    if (cmd != "prepare" && cmd != "explore" && cmd != "compose" && cmd != "simulate" && cmd != "plan") {
      throw ConfigError("unknown command '" + cmd + "' (expected prepare, explore, compose, simulate, or plan)");
    }
    if (!options.fixture.empty() && options.fixture != "table4") {
      throw ConfigError("unknown fixture '" + options.fixture + "' (supported: table4)");
    }
    if (options.out_dir.empty()) throw ConfigError("--out directory is required");

    ExperimentConfig cfg = load_config_file(options.config_path);
    if (options.seed_override) cfg.seed = options.seed;

    if (cmd == "prepare") {
      cmd_prepare(cfg, options.out_dir, log);
    } else if (cmd == "explore") {
      cmd_explore(cfg, options.out_dir, options.fixture, log);
    } else if (cmd == "compose") {
      cmd_compose(cfg, options.out_dir, options.fixture, log);
    } else if (cmd == "simulate") {
      cmd_simulate(cfg, options.out_dir, options.adapt, options.fixture, log);
    } else {
      cmd_plan(cfg, options.out_dir, options.replan, log);
    }
    return kExitOk;
  } catch (const InfeasiblePlanError& e) {
    log << "error: " << e.what() << '\n';
    return kExitInfeasible;
  } catch (const ArtifactError& e) {
    log << "error: " << e.what() << '\n';
    return kExitMissingArtifact;
  } catch (const ConfigError& e) {
    log << "error: " << e.what() << '\n';
    return kExitConfigError;
  } catch (const std::exception& e) {
    log << "error: " << e.what() << '\n';
    return kExitConfigError;
  }
}

}  // namespace latecache
