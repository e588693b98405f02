// Copyright the latecache authors. Apache 2.0 licensed; see LICENSE in the project root.
#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "latecache/rng.hpp"

// Latency-budgeted planning over a DAG of per-node model options: split an
// end-to-end SLO into partial budgets, pick the most accurate option that
// fits each budget, and — when an early node finishes under budget (e.g. a
// cache hit) — redistribute the saved time so downstream nodes can afford
// more accurate options.

namespace latecache {

struct ModelOption {
  std::string name;
  double latency_ms = 0.0;  // must be positive
  double accuracy = 0.0;    // in [0, 1]
};

// One outgoing edge: the request takes this branch with probability
// proportional to `weight` (standing in for the class mix the upstream
// node's output would route on).
struct DagBranch {
  std::string to;
  std::string label;
  double weight = 1.0;
};

struct DagNode {
  std::string name;
  std::vector<ModelOption> options;  // ordered as declared
  std::vector<DagBranch> branches;   // empty = leaf
};

struct QueryDag {
  std::vector<DagNode> nodes;
  std::string root;

  const DagNode* find(const std::string& name) const;
  int index_of(const std::string& name) const;  // -1 when absent
};

// Structural checks: nonempty, unique names, exactly one root (the declared
// one), acyclic, every node reachable, every node has valid options, every
// branch resolves with positive weight. Throws std::invalid_argument.
void validate_dag(const QueryDag& dag);

// Every root-to-leaf node sequence, in declaration order.
std::vector<std::vector<std::string>> root_to_leaf_paths(const QueryDag& dag);

enum class BudgetPolicy { kEqual, kProportional };

// node name -> partial latency budget (ms)
using PartialBudgets = std::map<std::string, double>;

// Split the SLO along every root-to-leaf path — equally, or in proportion to
// each node's worst-case (maximum option) latency — and give a node shared
// by several paths the minimum of its per-path allocations.
PartialBudgets compute_budgets(const QueryDag& dag, double slo_ms, BudgetPolicy policy);

struct ModelPick {
  ModelOption option;
  bool slo_risk = false;  // nothing fit: the cheapest option was returned
};

// The maximum-accuracy option with latency within the budget; accuracy ties
// break toward lower latency. When nothing fits, the minimum-latency option
// is returned with the risk flag raised so callers can report it.
ModelPick pick_best_model(const DagNode& node, double budget_ms);

// Redistribute the latency a completed node saved (its budget minus what it
// actually took, floored at zero) over the not-yet-executed nodes downstream
// of it: per root-to-leaf path, equally or in proportion to worst-case
// latency; a node on several downstream paths receives the minimum of its
// per-path shares. Budgets of other nodes are unchanged.
PartialBudgets on_execution_complete(const PartialBudgets& budgets, const QueryDag& dag,
                                     const std::string& completed, double observed_ms, BudgetPolicy policy);

// Observed latency of executing `option` at `node`; the Rng is a stream
// derived from (seed, query, node), so oracles may randomize (e.g. a cache
// hit distribution) while staying replay-deterministic.
using LatencyOracle = std::function<double(const std::string& node, const ModelOption& option, Rng& rng)>;

// The trivial oracle: every model takes exactly its declared latency.
LatencyOracle fixed_latencies();

struct NodeExecution {
  std::string node;
  ModelOption option;
  double budget_ms = 0.0;    // the node's budget when the pick was made
  double observed_ms = 0.0;
  double saved_ms = 0.0;     // budget - observed, redistributed (replanning only)
  bool slo_risk = false;
  bool correct = false;      // Bernoulli(option accuracy)
};

struct QueryResult {
  std::vector<NodeExecution> steps;  // the executed root-to-leaf path
  double total_latency_ms = 0.0;
  bool correct = true;       // every executed node was correct
  bool slo_risk = false;     // some pick did not fit its budget
  bool slo_violated = false; // total observed latency exceeded the SLO
};

// Execute one query: walk from the root along sampled branches, picking the
// best option per (possibly replanned) budget and drawing latency and
// correctness from per-(seed, query, node) streams. Those streams do not
// depend on the picks, so runs with replanning on and off pair up: same
// path, same latency draws, same correctness thresholds.
QueryResult run_query(const QueryDag& dag, double slo_ms, BudgetPolicy policy, const LatencyOracle& oracle,
                      bool replan, std::uint64_t seed, long long query_id);

struct ReplanComparison {
  long long queries = 0;
  double accuracy_on = 0.0;   // mean query correctness, replanning on
  double accuracy_off = 0.0;
  double latency_on = 0.0;    // mean total latency
  double latency_off = 0.0;
  long long risky_on = 0;     // queries with an SLO-risk pick
  long long risky_off = 0;
};

// Paired Monte Carlo: each query id runs once with replanning and once
// without, on common random streams.
ReplanComparison compare_replanning(const QueryDag& dag, double slo_ms, BudgetPolicy policy,
                                    const LatencyOracle& oracle, long long queries, std::uint64_t seed);

// DAG description file (JSON): nodes with options and branches, plus the
// root name. Loading validates the result; unknown or missing keys are
// rejected with their path.
void save_dag(std::ostream& out, const QueryDag& dag);
QueryDag load_dag(std::istream& in);

}  // namespace latecache
