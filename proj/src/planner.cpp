// Copyright the latecache authors. Apache 2.0 licensed; see LICENSE in the project root.
#include "latecache/planner.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <limits>
#include <ostream>
#include <set>
#include <stdexcept>

#include "json.hpp"

namespace latecache {

namespace {

void require(bool ok, const std::string& msg) {
  if (!ok) throw std::invalid_argument(msg);
}

}  // namespace

const DagNode* QueryDag::find(const std::string& name) const {
  for (const DagNode& n : nodes) {
    if (n.name == name) return &n;
  }
  return nullptr;
}

int QueryDag::index_of(const std::string& name) const {
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    if (nodes[i].name == name) return static_cast<int>(i);
  }
  return -1;
}

void validate_dag(const QueryDag& dag) {
  require(!dag.nodes.empty(), "dag: no nodes");
  std::set<std::string> names;
  for (const DagNode& n : dag.nodes) {
    require(!n.name.empty(), "dag: node with empty name");
    require(names.insert(n.name).second, "dag: duplicate node '" + n.name + "'");
    require(!n.options.empty(), "dag: node '" + n.name + "' has no model options");
    for (const ModelOption& o : n.options) {
      require(!o.name.empty(), "dag: unnamed option at node '" + n.name + "'");
      require(o.latency_ms > 0.0, "dag: option '" + o.name + "' needs positive latency");
      require(o.accuracy >= 0.0 && o.accuracy <= 1.0, "dag: option '" + o.name + "' accuracy outside [0, 1]");
    }
  }
  require(dag.find(dag.root) != nullptr, "dag: root '" + dag.root + "' is not a node");

  std::map<std::string, int> in_degree;
  for (const DagNode& n : dag.nodes) in_degree[n.name];  // ensure presence
  for (const DagNode& n : dag.nodes) {
    for (const DagBranch& b : n.branches) {
      require(dag.find(b.to) != nullptr, "dag: branch from '" + n.name + "' to unknown node '" + b.to + "'");
      require(b.weight > 0.0, "dag: branch '" + n.name + "' -> '" + b.to + "' needs positive weight");
      in_degree[b.to] += 1;
    }
  }
  require(in_degree[dag.root] == 0, "dag: root '" + dag.root + "' has an incoming branch");
  for (const auto& [name, deg] : in_degree) {
    require(deg > 0 || name == dag.root, "dag: node '" + name + "' is a second root (no incoming branch)");
  }

  // Acyclicity and reachability in one DFS from the root. 0 = unseen,
  // 1 = on the current path, 2 = done.
  std::map<std::string, int> color;
  std::function<void(const std::string&)> visit = [&](const std::string& name) {
    color[name] = 1;
    for (const DagBranch& b : dag.find(name)->branches) {
      const int c = color[b.to];
      require(c != 1, "dag: cycle through '" + b.to + "'");
      if (c == 0) visit(b.to);
    }
    color[name] = 2;
  };
  visit(dag.root);
  for (const DagNode& n : dag.nodes) {
    require(color[n.name] == 2, "dag: node '" + n.name + "' unreachable from the root");
  }
}

std::vector<std::vector<std::string>> root_to_leaf_paths(const QueryDag& dag) {
  std::vector<std::vector<std::string>> paths;
  std::vector<std::string> current;
  std::function<void(const std::string&)> walk = [&](const std::string& name) {
    current.push_back(name);
    const DagNode* node = dag.find(name);
    if (node->branches.empty()) {
      paths.push_back(current);
    } else {
      for (const DagBranch& b : node->branches) walk(b.to);
    }
    current.pop_back();
  };
  walk(dag.root);
  return paths;
}

namespace {

double max_option_latency(const QueryDag& dag, const std::string& name) {
  double best = 0.0;
  for (const ModelOption& o : dag.find(name)->options) best = std::max(best, o.latency_ms);
  return best;
}

// Per-path allocation of `amount` over `nodes` under the policy; returns the
// share of each node in order.
std::vector<double> path_shares(const QueryDag& dag, const std::vector<std::string>& nodes, double amount,
                                BudgetPolicy policy) {
  std::vector<double> shares(nodes.size(), 0.0);
  if (policy == BudgetPolicy::kEqual) {
    for (double& s : shares) s = amount / static_cast<double>(nodes.size());
    return shares;
  }
  double total = 0.0;
  for (const std::string& n : nodes) total += max_option_latency(dag, n);
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    shares[i] = amount * max_option_latency(dag, nodes[i]) / total;
  }
  return shares;
}

}  // namespace

PartialBudgets compute_budgets(const QueryDag& dag, double slo_ms, BudgetPolicy policy) {
  validate_dag(dag);
  require(slo_ms > 0.0, "compute_budgets: SLO must be positive");
  PartialBudgets budgets;
  for (const std::vector<std::string>& path : root_to_leaf_paths(dag)) {
    const std::vector<double> shares = path_shares(dag, path, slo_ms, policy);
    for (std::size_t i = 0; i < path.size(); ++i) {
      const auto it = budgets.find(path[i]);
      if (it == budgets.end()) {
        budgets[path[i]] = shares[i];
      } else {
        it->second = std::min(it->second, shares[i]);  // shared node: tightest path wins
      }
    }
  }
  return budgets;
}

ModelPick pick_best_model(const DagNode& node, double budget_ms) {
  require(!node.options.empty(), "pick_best_model: node '" + node.name + "' has no options");
  const ModelOption* best = nullptr;
  for (const ModelOption& o : node.options) {
    if (o.latency_ms > budget_ms) continue;
    if (best == nullptr || o.accuracy > best->accuracy ||
        (o.accuracy == best->accuracy && o.latency_ms < best->latency_ms)) {
      best = &o;
    }
  }
  if (best != nullptr) return {*best, false};
  // Nothing fits: fall back to the cheapest option and flag the risk.
  const ModelOption* cheapest = &node.options.front();
  for (const ModelOption& o : node.options) {
    if (o.latency_ms < cheapest->latency_ms ||
        (o.latency_ms == cheapest->latency_ms && o.accuracy > cheapest->accuracy)) {
      cheapest = &o;
    }
  }
  return {*cheapest, true};
}

PartialBudgets on_execution_complete(const PartialBudgets& budgets, const QueryDag& dag,
                                     const std::string& completed, double observed_ms, BudgetPolicy policy) {
  require(dag.find(completed) != nullptr, "on_execution_complete: unknown node '" + completed + "'");
  const auto it = budgets.find(completed);
  require(it != budgets.end(), "on_execution_complete: node '" + completed + "' has no budget");
  const double saved = std::max(0.0, it->second - observed_ms);
  PartialBudgets updated = budgets;
  if (saved == 0.0) return updated;

  // A node downstream on several paths receives the minimum of its
  // per-path shares of the saved time.
  std::map<std::string, double> grant;
  for (const std::vector<std::string>& path : root_to_leaf_paths(dag)) {
    const auto pos = std::find(path.begin(), path.end(), completed);
    if (pos == path.end() || pos + 1 == path.end()) continue;
    const std::vector<std::string> suffix(pos + 1, path.end());
    const std::vector<double> shares = path_shares(dag, suffix, saved, policy);
    for (std::size_t i = 0; i < suffix.size(); ++i) {
      const auto g = grant.find(suffix[i]);
      if (g == grant.end()) {
        grant[suffix[i]] = shares[i];
      } else {
        g->second = std::min(g->second, shares[i]);
      }
    }
  }
  for (const auto& [name, extra] : grant) updated[name] += extra;
  return updated;
}

LatencyOracle fixed_latencies() {
  return [](const std::string&, const ModelOption& option, Rng&) { return option.latency_ms; };
}

namespace {

// Stable per-(seed, query, node, purpose) streams: picks cannot perturb the
// draws, so replanning on/off runs stay paired sample-for-sample.
enum : std::uint64_t { kLatencyStream = 1, kCorrectStream = 2, kBranchStream = 3 };

Rng node_stream(std::uint64_t seed, long long query_id, int node_index, std::uint64_t purpose) {
  const std::uint64_t q = mix_seed(seed, static_cast<std::uint64_t>(query_id));
  return Rng(mix_seed(mix_seed(q, static_cast<std::uint64_t>(node_index)), purpose));
}

}  // namespace

QueryResult run_query(const QueryDag& dag, double slo_ms, BudgetPolicy policy, const LatencyOracle& oracle,
                      bool replan, std::uint64_t seed, long long query_id) {
  PartialBudgets budgets = compute_budgets(dag, slo_ms, policy);
  QueryResult result;
  std::string current = dag.root;
  while (true) {
    const DagNode& node = *dag.find(current);
    const int idx = dag.index_of(current);
    const ModelPick pick = pick_best_model(node, budgets.at(current));

    NodeExecution step;
    step.node = current;
    step.option = pick.option;
    step.budget_ms = budgets.at(current);
    step.slo_risk = pick.slo_risk;

    Rng lat_rng = node_stream(seed, query_id, idx, kLatencyStream);
    step.observed_ms = oracle(current, pick.option, lat_rng);
    if (!(std::isfinite(step.observed_ms) && step.observed_ms >= 0.0)) {
      throw std::runtime_error("run_query: oracle returned an invalid latency for '" + current + "'");
    }
    step.correct = node_stream(seed, query_id, idx, kCorrectStream).next_double() < pick.option.accuracy;

    if (replan) {
      step.saved_ms = std::max(0.0, step.budget_ms - step.observed_ms);
      budgets = on_execution_complete(budgets, dag, current, step.observed_ms, policy);
    }

    result.total_latency_ms += step.observed_ms;
    result.correct = result.correct && step.correct;
    result.slo_risk = result.slo_risk || step.slo_risk;
    result.steps.push_back(std::move(step));

    if (node.branches.empty()) break;
    double total_weight = 0.0;
    for (const DagBranch& b : node.branches) total_weight += b.weight;
    const double u = node_stream(seed, query_id, idx, kBranchStream).next_double() * total_weight;
    double acc = 0.0;
    current = node.branches.back().to;
    for (const DagBranch& b : node.branches) {
      acc += b.weight;
      if (u < acc) {
        current = b.to;
        break;
      }
    }
  }
  result.slo_violated = result.total_latency_ms > slo_ms;
  return result;
}

ReplanComparison compare_replanning(const QueryDag& dag, double slo_ms, BudgetPolicy policy,
                                    const LatencyOracle& oracle, long long queries, std::uint64_t seed) {
  require(queries > 0, "compare_replanning: need at least one query");
  ReplanComparison cmp;
  cmp.queries = queries;
  for (long long q = 0; q < queries; ++q) {
    const QueryResult off = run_query(dag, slo_ms, policy, oracle, false, seed, q);
    const QueryResult on = run_query(dag, slo_ms, policy, oracle, true, seed, q);
    cmp.accuracy_off += off.correct ? 1.0 : 0.0;
    cmp.accuracy_on += on.correct ? 1.0 : 0.0;
    cmp.latency_off += off.total_latency_ms;
    cmp.latency_on += on.total_latency_ms;
    cmp.risky_off += off.slo_risk ? 1 : 0;
    cmp.risky_on += on.slo_risk ? 1 : 0;
  }
  const double n = static_cast<double>(queries);
  cmp.accuracy_off /= n;
  cmp.accuracy_on /= n;
  cmp.latency_off /= n;
  cmp.latency_on /= n;
  return cmp;
}

namespace {

using nlohmann::json;

// Strict object reader: every key must be known, every required key present.
void check_keys(const json& obj, const std::string& path, const std::vector<std::string>& required,
                const std::vector<std::string>& optional = {}) {
  if (!obj.is_object()) throw std::runtime_error("dag file: " + path + " must be an object");
  for (const auto& [key, value] : obj.items()) {
    (void)value;
    const bool known = std::find(required.begin(), required.end(), key) != required.end() ||
                       std::find(optional.begin(), optional.end(), key) != optional.end();
    if (!known) throw std::runtime_error("dag file: unknown key " + path + "." + key);
  }
  for (const std::string& key : required) {
    if (!obj.contains(key)) throw std::runtime_error("dag file: missing key " + path + "." + key);
  }
}

double get_number(const json& obj, const std::string& path, const std::string& key) {
  if (!obj.at(key).is_number()) throw std::runtime_error("dag file: " + path + "." + key + " must be a number");
  return obj.at(key).get<double>();
}

std::string get_string(const json& obj, const std::string& path, const std::string& key) {
  if (!obj.at(key).is_string()) throw std::runtime_error("dag file: " + path + "." + key + " must be a string");
  return obj.at(key).get<std::string>();
}

}  // namespace

void save_dag(std::ostream& out, const QueryDag& dag) {
  json j;
  j["version"] = 1;
  j["root"] = dag.root;
  j["nodes"] = json::array();
  for (const DagNode& n : dag.nodes) {
    json jn;
    jn["name"] = n.name;
    jn["options"] = json::array();
    for (const ModelOption& o : n.options) {
      jn["options"].push_back({{"name", o.name}, {"latency_ms", o.latency_ms}, {"accuracy", o.accuracy}});
    }
    jn["branches"] = json::array();
    for (const DagBranch& b : n.branches) {
      jn["branches"].push_back({{"to", b.to}, {"label", b.label}, {"weight", b.weight}});
    }
    j["nodes"].push_back(std::move(jn));
  }
  out << j.dump(2) << '\n';
}

QueryDag load_dag(std::istream& in) {
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw std::runtime_error(std::string("dag file: not valid JSON: ") + e.what());
  }
  check_keys(j, "$", {"version", "root", "nodes"});
  if (!j.at("version").is_number_integer() || j.at("version").get<int>() != 1) {
    throw std::runtime_error("dag file: unsupported version");
  }
  QueryDag dag;
  dag.root = get_string(j, "$", "root");
  if (!j.at("nodes").is_array()) throw std::runtime_error("dag file: $.nodes must be an array");
  std::size_t ni = 0;
  for (const json& jn : j.at("nodes")) {
    const std::string path = "$.nodes[" + std::to_string(ni++) + "]";
    check_keys(jn, path, {"name", "options"}, {"branches"});
    DagNode node;
    node.name = get_string(jn, path, "name");
    if (!jn.at("options").is_array()) throw std::runtime_error("dag file: " + path + ".options must be an array");
    std::size_t oi = 0;
    for (const json& jo : jn.at("options")) {
      const std::string opath = path + ".options[" + std::to_string(oi++) + "]";
      check_keys(jo, opath, {"name", "latency_ms", "accuracy"});
      ModelOption opt;
      opt.name = get_string(jo, opath, "name");
      opt.latency_ms = get_number(jo, opath, "latency_ms");
      opt.accuracy = get_number(jo, opath, "accuracy");
      node.options.push_back(std::move(opt));
    }
    if (jn.contains("branches")) {
      if (!jn.at("branches").is_array()) {
        throw std::runtime_error("dag file: " + path + ".branches must be an array");
      }
      std::size_t bi = 0;
      for (const json& jb : jn.at("branches")) {
        const std::string bpath = path + ".branches[" + std::to_string(bi++) + "]";
        check_keys(jb, bpath, {"to"}, {"label", "weight"});
        DagBranch branch;
        branch.to = get_string(jb, bpath, "to");
        if (jb.contains("label")) branch.label = get_string(jb, bpath, "label");
        if (jb.contains("weight")) branch.weight = get_number(jb, bpath, "weight");
        node.branches.push_back(std::move(branch));
      }
    }
    dag.nodes.push_back(std::move(node));
  }
  validate_dag(dag);
  return dag;
}

}  // namespace latecache
