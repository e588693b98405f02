// Copyright the latecache authors. Apache 2.0 licensed; see LICENSE in the project root.
#pragma once

#include <cstdint>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <vector>

#include "latecache/base_model.hpp"
#include "latecache/cache.hpp"
#include "latecache/composer.hpp"
#include "latecache/dataset.hpp"
#include "latecache/planner.hpp"
#include "latecache/serving.hpp"

// Command-line driver: one experiment config file (versioned JSON, strict
// schema) drives the whole pipeline. Commands read and write a single output
// directory; every artifact embeds the tool version and config hash, and
// every command writes a manifest listing its artifacts with content hashes,
// so identical config + seed reproduce identical manifests.

namespace latecache {

// Schema or semantic problem in the experiment config (or the command line).
// Messages name the offending field as a $.section.key path where possible.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A required artifact from an earlier command is missing or unreadable.
class ArtifactError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// The plan under simulation violates its own deployment constraints.
class InfeasiblePlanError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Settings for the query-planning experiment (the `plan` command).
struct PlannerExperimentConfig {
  std::string dag_file;  // empty selects the built-in traffic-analysis DAG
  BudgetPolicy policy = BudgetPolicy::kEqual;
  int queries_per_slo = 2000;
  double slo_from_ms = 60.0;  // SLO grid for the sweep report
  double slo_to_ms = 160.0;
  double slo_step_ms = 10.0;
  int audit_queries = 5;       // per-query logs written to audit.txt
  double audit_slo_ms = 80.0;  // the SLO those audited queries run under
  // Latency oracle: the named node is backed by a learned cache that serves
  // a fraction of its queries early at the hit latency; every other node
  // observes its option's full latency.
  std::string cached_node = "objdet";
  double cache_hit_rate = 0.3;
  double cache_hit_ms = 20.0;
};

// Everything an experiment needs, in one file. All fields are required in
// the JSON form; unknown keys are rejected with their path.
struct ExperimentConfig {
  std::uint64_t seed = 1;
  DatasetSpec dataset;             // dataset.seed is derived from the global seed
  int blocks = 8;                  // base-model depth (and layer-profile length)
  std::vector<int> widths = {64};  // hidden widths, cycled across blocks
  TrainConfig base_train;          // base_train.seed is derived as well
  double per_block_ms = 4.0;       // uniform layer profile
  CostModel cost;
  std::vector<ArchSpec> menu;  // cache architectures explored per layer
  CacheTrainConfig cache_train;
  double cache_split_fraction = 0.8;  // tap-record train/holdout split
  int explore_threads = 0;            // 0 = serial exploration
  ComposerConfig composer;
  WorkloadSpec workload;  // num_classes and seed are derived
  AdaptationConfig adaptation;
  PlannerExperimentConfig planner;
};

// Strict-schema JSON loader: every key required, unknown keys rejected,
// type mismatches reported with the field path. Throws ConfigError.
ExperimentConfig load_config(std::istream& in);
ExperimentConfig load_config_file(const std::string& path);

// Canonical JSON rendering of a config (sorted keys, shortest round-trip
// numbers) and the FNV-1a 64-bit hash of that text as 16 hex digits. The
// hash is taken after any --seed override, so it identifies the experiment
// actually run.
std::string canonical_config_text(const ExperimentConfig& cfg);
std::string config_hash_hex(const ExperimentConfig& cfg);

// FNV-1a 64-bit over raw bytes; used for config and artifact hashes.
std::uint64_t fnv1a64(const char* data, std::size_t size);

// Parsed command line.
struct CliOptions {
  std::string command;      // prepare | explore | compose | simulate | plan
  std::string config_path;  // --config
  std::string out_dir;      // --out
  bool seed_override = false;
  std::uint64_t seed = 0;   // --seed (replaces the config seed when set)
  bool adapt = false;       // simulate: run the paired adaptive/static experiment
  bool replan = false;      // plan: audit queries with replanning enabled
  std::string fixture;      // "table4" swaps in the published reference metrics
};

inline constexpr int kExitOk = 0;
inline constexpr int kExitConfigError = 2;
inline constexpr int kExitInfeasible = 3;
inline constexpr int kExitMissingArtifact = 4;

// The individual commands. Each writes its artifacts plus a manifest into
// out_dir (creating it if needed) and logs one line per artifact. They throw
// ConfigError / ArtifactError / InfeasiblePlanError; run_cli maps those to
// exit codes.
void cmd_prepare(const ExperimentConfig& cfg, const std::string& out_dir, std::ostream& log);
void cmd_explore(const ExperimentConfig& cfg, const std::string& out_dir, const std::string& fixture,
                 std::ostream& log);
void cmd_compose(const ExperimentConfig& cfg, const std::string& out_dir, const std::string& fixture,
                 std::ostream& log);
void cmd_simulate(const ExperimentConfig& cfg, const std::string& out_dir, bool adapt, const std::string& fixture,
                  std::ostream& log);
void cmd_plan(const ExperimentConfig& cfg, const std::string& out_dir, bool replan, std::ostream& log);

// Loads the config, applies the seed override, dispatches the command, and
// maps failures to exit codes: 0 success, 2 config error, 3 infeasible plan,
// 4 missing artifact.
int run_cli(const CliOptions& options, std::ostream& log);

}  // namespace latecache
