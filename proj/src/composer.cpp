// Copyright the latecache authors. Apache 2.0 licensed; see LICENSE in the project root.
#include "latecache/composer.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <ostream>
#include <stdexcept>
#include <string>

#include "latecache/textio.hpp"

namespace latecache {

namespace {

void require(bool ok, const std::string& msg) {
  if (!ok) throw std::invalid_argument(msg);
}

void validate_config(const ComposerConfig& cfg) {
  require(cfg.memory_budget_mb >= 0.0, "composer: memory budget must be nonnegative");
  require(cfg.accuracy_threshold > 0.0 && cfg.accuracy_threshold <= 1.0,
          "composer: accuracy threshold must be in (0, 1]");
  require(cfg.alpha >= 0.0 && cfg.alpha <= 1.0, "composer: alpha must be in [0, 1]");
}

void validate_rows(const std::vector<VariantMetrics>& metrics, const LayerProfile& profile) {
  for (const VariantMetrics& m : metrics) {
    require(m.layer >= 1 && m.layer <= profile.blocks(),
            "composer: metrics row at layer " + std::to_string(m.layer) + " outside the profile");
  }
}

// Candidate variants grouped by layer, ascending.
struct LayerGroup {
  int layer = 0;
  std::vector<std::size_t> candidates;
};

std::vector<LayerGroup> group_by_layer(const std::vector<std::size_t>& indices,
                                       const std::vector<VariantMetrics>& metrics) {
  std::vector<std::size_t> sorted = indices;
  std::sort(sorted.begin(), sorted.end(), [&](std::size_t a, std::size_t b) {
    return metrics[a].layer != metrics[b].layer ? metrics[a].layer < metrics[b].layer : a < b;
  });
  std::vector<LayerGroup> groups;
  for (std::size_t idx : sorted) {
    if (groups.empty() || groups.back().layer != metrics[idx].layer) {
      groups.push_back({metrics[idx].layer, {}});
    }
    groups.back().candidates.push_back(idx);
  }
  return groups;
}

}  // namespace

double SelectionPlan::sum_eh() const {
  double s = 0.0;
  for (double e : eh) s += e;
  return s;
}

SelectionPlan make_plan(std::vector<std::size_t> chosen, const std::vector<VariantMetrics>& metrics) {
  for (std::size_t idx : chosen) {
    require(idx < metrics.size(), "plan: variant index out of range");
  }
  std::sort(chosen.begin(), chosen.end(), [&](std::size_t a, std::size_t b) {
    return metrics[a].layer != metrics[b].layer ? metrics[a].layer < metrics[b].layer : a < b;
  });
  for (std::size_t k = 1; k < chosen.size(); ++k) {
    require(metrics[chosen[k - 1]].layer != metrics[chosen[k]].layer,
            "plan: more than one variant at layer " + std::to_string(metrics[chosen[k]].layer));
  }
  SelectionPlan plan;
  plan.chosen = std::move(chosen);
  double absorbed = 0.0;
  for (std::size_t idx : plan.chosen) {
    const double raw = metrics[idx].hit_rate - absorbed;
    const double eh = std::max(0.0, raw);
    if (raw < 0.0) {
      plan.notes.push_back("clamped negative effective hit rate at layer " + std::to_string(metrics[idx].layer));
    }
    plan.eh.push_back(eh);
    absorbed += eh;
  }
  return plan;
}

double latency_gain(const LayerProfile& profile, int layer, double lookup_ms) {
  require(layer >= 1, "latency_gain: layers are 1-based");
  require(lookup_ms >= 0.0, "latency_gain: lookup cost must be nonnegative");
  const double denom = profile.prefix(layer) + lookup_ms;
  require(denom > 0.0, "latency_gain: zero serve latency");
  return profile.total() / denom;
}

double score(double hit_rate, double gain, double alpha) {
  require(hit_rate >= 0.0 && hit_rate <= 1.0, "score: hit rate must be in [0, 1]");
  require(gain > 0.0, "score: latency gain must be positive");
  require(alpha >= 0.0 && alpha <= 1.0, "score: alpha must be in [0, 1]");
  return alpha * hit_rate + (1.0 - alpha) * gain;
}

double expected_latency(const SelectionPlan& plan, const std::vector<VariantMetrics>& metrics,
                        const LayerProfile& profile) {
  require(plan.chosen.size() == plan.eh.size(), "expected_latency: plan missing effective hit rates");
  double served = 0.0, sum = 0.0;
  for (std::size_t k = 0; k < plan.chosen.size(); ++k) {
    const VariantMetrics& m = metrics[plan.chosen[k]];
    sum += plan.eh[k] * (profile.prefix(m.layer) + m.lookup_ms);
    served += plan.eh[k];
  }
  return sum + (1.0 - served) * profile.total();
}

double plan_accuracy(const SelectionPlan& plan, const std::vector<VariantMetrics>& metrics) {
  require(plan.chosen.size() == plan.eh.size(), "plan_accuracy: plan missing effective hit rates");
  double served = 0.0, sum = 0.0;
  for (std::size_t k = 0; k < plan.chosen.size(); ++k) {
    sum += plan.eh[k] * metrics[plan.chosen[k]].accuracy;
    served += plan.eh[k];
  }
  return sum + (1.0 - served);
}

ConstraintReport check_constraints(const SelectionPlan& plan, const std::vector<VariantMetrics>& metrics,
                                   const LayerProfile& profile, const ComposerConfig& cfg) {
  ConstraintReport report;
  auto violate = [&](std::string why) {
    report.feasible = false;
    report.violations.push_back(std::move(why));
  };

  double total_mem = 0.0;
  for (std::size_t k = 0; k < plan.chosen.size(); ++k) {
    const VariantMetrics& m = metrics[plan.chosen[k]];
    total_mem += m.memory_mb;
    if (k > 0 && metrics[plan.chosen[k - 1]].layer == m.layer) {
      violate("more than one variant at layer " + std::to_string(m.layer));
    }
    // The lookup must complete while the serve path runs toward the next
    // chosen cache (or the end of the model).
    const int next_layer = k + 1 < plan.chosen.size() ? metrics[plan.chosen[k + 1]].layer : profile.blocks();
    const double slack = profile.prefix(next_layer) - profile.prefix(m.layer);
    if (m.lookup_ms > slack) {
      violate("lookup at layer " + std::to_string(m.layer) + " (" + fmt_double(m.lookup_ms) +
              " ms) exceeds the " + fmt_double(slack) + " ms available before the next serve point");
    }
  }
  if (total_mem > cfg.memory_budget_mb) {
    violate("memory " + fmt_double(total_mem) + " MB exceeds budget " + fmt_double(cfg.memory_budget_mb) + " MB");
  }
  const double acc = plan_accuracy(plan, metrics);
  if (acc < cfg.accuracy_threshold) {
    violate("plan accuracy " + fmt_double(acc) + " below floor " + fmt_double(cfg.accuracy_threshold));
  }
  return report;
}

std::vector<std::size_t> accuracy_filter(const std::vector<VariantMetrics>& metrics, double threshold) {
  std::vector<std::size_t> keep;
  for (std::size_t i = 0; i < metrics.size(); ++i) {
    if (metrics[i].accuracy >= threshold) keep.push_back(i);
  }
  return keep;
}

SelectionPlan compose_relaxed(const std::vector<VariantMetrics>& metrics, const LayerProfile& profile,
                              const ComposerConfig& cfg) {
  validate_config(cfg);
  validate_rows(metrics, profile);

  const std::vector<LayerGroup> groups = group_by_layer(accuracy_filter(metrics, cfg.accuracy_threshold), metrics);
  std::vector<double> scores(metrics.size(), 0.0);
  for (const LayerGroup& g : groups) {
    for (std::size_t idx : g.candidates) {
      scores[idx] = score(metrics[idx].hit_rate, latency_gain(profile, g.layer, metrics[idx].lookup_ms), cfg.alpha);
    }
  }

  // Optimistic remaining score: the best candidate of every later layer.
  std::vector<double> suffix(groups.size() + 1, 0.0);
  for (std::size_t g = groups.size(); g-- > 0;) {
    double best = 0.0;
    for (std::size_t idx : groups[g].candidates) best = std::max(best, scores[idx]);
    suffix[g] = best + suffix[g + 1];
  }

  const double total = profile.total();
  std::vector<std::size_t> best_plan, current;
  double best_score = 0.0, best_mem = 0.0;  // the empty plan is always feasible
  std::size_t best_count = 0;

  auto consider_leaf = [&](double sc, double mem) {
    const bool better = sc > best_score ||
                        (sc == best_score && (current.size() < best_count ||
                                              (current.size() == best_count && mem < best_mem)));
    if (better) {
      best_plan = current;
      best_score = sc;
      best_mem = mem;
      best_count = current.size();
    }
  };

  auto dfs = [&](auto&& self, std::size_t g, double sc, double mem) -> void {
    if (sc + suffix[g] < best_score - 1e-12) return;  // cannot beat the incumbent
    if (g == groups.size()) {
      consider_leaf(sc, mem);
      return;
    }
    self(self, g + 1, sc, mem);  // skip this layer
    // Whether anything may be placed here depends only on the previous
    // choice: its lookup must fit in the serve time between the two layers.
    if (!current.empty()) {
      const VariantMetrics& prev = metrics[current.back()];
      if (prev.lookup_ms > profile.prefix(groups[g].layer) - profile.prefix(prev.layer)) return;
    }
    for (std::size_t idx : groups[g].candidates) {
      const VariantMetrics& m = metrics[idx];
      if (mem + m.memory_mb > cfg.memory_budget_mb) continue;
      if (m.lookup_ms > total - profile.prefix(m.layer)) continue;  // cannot finish before the end
      current.push_back(idx);
      self(self, g + 1, sc + scores[idx], mem + m.memory_mb);
      current.pop_back();
    }
  };
  dfs(dfs, 0, 0.0, 0.0);
  return make_plan(best_plan, metrics);
}

SelectionPlan compose_exact(const std::vector<VariantMetrics>& metrics, const LayerProfile& profile,
                            const ComposerConfig& cfg) {
  validate_config(cfg);
  validate_rows(metrics, profile);

  std::vector<std::size_t> all(metrics.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  const std::vector<LayerGroup> groups = group_by_layer(all, metrics);

  double combos = 1.0;
  for (const LayerGroup& g : groups) combos *= static_cast<double>(g.candidates.size() + 1);
  if (combos > 1e7) {
    throw std::runtime_error("compose_exact: " + fmt_double(combos) + " selections is too large to enumerate");
  }

  SelectionPlan best = make_plan({}, metrics);
  double best_latency = expected_latency(best, metrics, profile);
  double best_mem = 0.0;

  std::vector<std::size_t> current;
  auto evaluate_leaf = [&]() {
    SelectionPlan plan = make_plan(current, metrics);
    if (!check_constraints(plan, metrics, profile, cfg).feasible) return;
    const double lat = expected_latency(plan, metrics, profile);
    double mem = 0.0;
    for (std::size_t idx : plan.chosen) mem += metrics[idx].memory_mb;
    const bool better = lat < best_latency ||
                        (lat == best_latency && (plan.size() < best.size() ||
                                                 (plan.size() == best.size() && mem < best_mem)));
    if (better) {
      best = std::move(plan);
      best_latency = lat;
      best_mem = mem;
    }
  };
  auto dfs = [&](auto&& self, std::size_t g) -> void {
    if (g == groups.size()) {
      evaluate_leaf();
      return;
    }
    self(self, g + 1);
    for (std::size_t idx : groups[g].candidates) {
      current.push_back(idx);
      self(self, g + 1);
      current.pop_back();
    }
  };
  dfs(dfs, 0);
  return best;
}

SweepResult sweep_alpha(const std::vector<VariantMetrics>& metrics, const LayerProfile& profile,
                        const ComposerConfig& cfg, std::vector<double> grid) {
  if (grid.empty()) {
    for (int i = 0; i <= 10; ++i) grid.push_back(static_cast<double>(i) / 10.0);
  }
  SweepResult result;
  result.plan = make_plan({}, metrics);
  result.best_alpha = grid.front();
  double best_latency = -1.0;
  for (double alpha : grid) {
    ComposerConfig point_cfg = cfg;
    point_cfg.alpha = alpha;
    AlphaPoint point;
    point.alpha = alpha;
    point.plan = compose_relaxed(metrics, profile, point_cfg);
    point.latency_ms = expected_latency(point.plan, metrics, profile);
    point.accuracy = plan_accuracy(point.plan, metrics);
    const bool qualifies = point.accuracy >= cfg.accuracy_threshold;
    if (qualifies && (best_latency < 0.0 || point.latency_ms < best_latency)) {
      best_latency = point.latency_ms;
      result.best_alpha = alpha;
      result.plan = point.plan;
    }
    result.curve.push_back(std::move(point));
  }
  return result;
}

namespace {
constexpr const char* kPlanMagic = "latecache-plan v1";
}

void save_plan(std::ostream& out, const SelectionPlan& plan, const std::vector<VariantMetrics>& metrics,
               const std::vector<std::string>& header_comments) {
  out << kPlanMagic << '\n';
  for (const std::string& line : header_comments) out << "# " << line << '\n';
  out << "choices " << plan.size() << '\n';
  for (std::size_t i = 0; i < plan.size(); ++i) {
    const VariantMetrics& m = metrics.at(plan.chosen[i]);
    out << "choice " << m.layer << ' ' << m.variant << ' ' << m.arch.to_string() << " # effective_hit_rate "
        << fmt_double(plan.eh[i]) << '\n';
  }
  for (const std::string& note : plan.notes) out << "note " << note << '\n';
}

SelectionPlan load_plan(std::istream& in, const std::vector<VariantMetrics>& metrics) {
  std::string line;
  if (!std::getline(in, line) || line != kPlanMagic) {
    throw std::runtime_error("plan file: bad or missing header");
  }
  while (in >> std::ws && in.peek() == '#') std::getline(in, line);
  std::string word;
  std::size_t count = 0;
  in >> word >> count;
  if (!in || word != "choices") throw std::runtime_error("plan file: missing choice count");
  std::vector<std::size_t> chosen;
  for (std::size_t i = 0; i < count; ++i) {
    int layer = 0, variant = 0;
    std::string arch;
    in >> word >> layer >> variant >> arch;
    if (!in || word != "choice") throw std::runtime_error("plan file: malformed choice row");
    std::getline(in, line);  // discard the trailing comment
    bool found = false;
    for (std::size_t row = 0; row < metrics.size(); ++row) {
      if (metrics[row].layer != layer || metrics[row].variant != variant) continue;
      if (metrics[row].arch.to_string() != arch) {
        throw std::runtime_error("plan file: choice at layer " + std::to_string(layer) +
                                 " names architecture " + arch + " but the metrics table has " +
                                 metrics[row].arch.to_string());
      }
      chosen.push_back(row);
      found = true;
      break;
    }
    if (!found) {
      throw std::runtime_error("plan file: no metrics row for layer " + std::to_string(layer) + " variant " +
                               std::to_string(variant));
    }
  }
  return make_plan(std::move(chosen), metrics);
}

}  // namespace latecache
