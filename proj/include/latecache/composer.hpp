// Copyright the latecache authors. Apache 2.0 licensed; see LICENSE in the project root.
#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "latecache/base_model.hpp"
#include "latecache/cache.hpp"

// Plan composition: pick which trained variants to deploy. Two solvers share
// the same constraint checker. The relaxed solver maximizes a hit-rate /
// latency-gain score after filtering on per-variant accuracy; the exact
// solver enumerates every selection and minimizes expected latency outright.

namespace latecache {

struct ComposerConfig {
  double accuracy_threshold = 0.97;  // per-variant floor (relaxed) / plan floor (exact)
  double memory_budget_mb = 0.0;
  double alpha = 0.2;  // weight of hit rate vs latency gain in the score
};

// A deployment choice: indices into the metrics table it was composed from,
// sorted by layer (at most one per layer), with the effective hit rate each
// chosen variant contributes after shallower caches absorb their share.
struct SelectionPlan {
  std::vector<std::size_t> chosen;
  std::vector<double> eh;
  std::vector<std::string> notes;  // e.g. clamped negative effective rates

  std::size_t size() const { return chosen.size(); }
  bool empty() const { return chosen.empty(); }
  double sum_eh() const;
};

// Sorts by layer, rejects duplicate layers / bad indices, and computes the
// effective hit rates: in layer order, EH = H minus everything already
// absorbed by earlier chosen caches, clamped at zero (with a note).
SelectionPlan make_plan(std::vector<std::size_t> chosen, const std::vector<VariantMetrics>& metrics);

// How much faster a hit at layer i with lookup cost T is than a full pass:
// total latency over (prefix latency + lookup).
double latency_gain(const LayerProfile& profile, int layer, double lookup_ms);

// Composition score: alpha * H + (1 - alpha) * LG.
double score(double hit_rate, double gain, double alpha);

// Expected request latency under the plan: each chosen cache serves its
// effective share at (prefix + lookup); the rest pay the full depth.
double expected_latency(const SelectionPlan& plan, const std::vector<VariantMetrics>& metrics,
                        const LayerProfile& profile);

// Expected agreement with the base model: hits served by a cache agree with
// probability A; everything that falls through agrees by definition.
double plan_accuracy(const SelectionPlan& plan, const std::vector<VariantMetrics>& metrics);

struct ConstraintReport {
  bool feasible = true;
  std::vector<std::string> violations;
};

// Verifies memory budget, the lookup-overlap constraint (a cache's lookup
// must finish before the next chosen cache's layer — or the end of the
// model — is reached), one variant per layer, and the plan accuracy floor.
ConstraintReport check_constraints(const SelectionPlan& plan, const std::vector<VariantMetrics>& metrics,
                                   const LayerProfile& profile, const ComposerConfig& cfg);

// Indices of metrics rows whose conditional accuracy meets the threshold.
std::vector<std::size_t> accuracy_filter(const std::vector<VariantMetrics>& metrics, double threshold);

// Score maximization: filter on per-variant accuracy, score the survivors,
// then branch-and-bound over layers for the best feasible score sum.
// Ties prefer fewer variants, then lower total memory.
SelectionPlan compose_relaxed(const std::vector<VariantMetrics>& metrics, const LayerProfile& profile,
                              const ComposerConfig& cfg);

// Guarded full enumeration minimizing expected latency subject to
// check_constraints (including the plan-accuracy floor). Throws when the
// instance is too large to enumerate.
SelectionPlan compose_exact(const std::vector<VariantMetrics>& metrics, const LayerProfile& profile,
                            const ComposerConfig& cfg);

struct AlphaPoint {
  double alpha = 0.0;
  SelectionPlan plan;
  double latency_ms = 0.0;
  double accuracy = 1.0;
};

struct SweepResult {
  double best_alpha = 0.0;
  SelectionPlan plan;
  std::vector<AlphaPoint> curve;
};

// Runs the relaxed solver across an alpha grid and keeps the plan with the
// lowest expected latency among those meeting the accuracy floor (the empty
// plan is the fallback when none qualify). Default grid: 0.0 to 1.0 by 0.1.
SweepResult sweep_alpha(const std::vector<VariantMetrics>& metrics, const LayerProfile& profile,
                        const ComposerConfig& cfg, std::vector<double> grid = {});

// Plan files key each chosen row by (layer, variant, architecture) so a plan
// survives metrics-table reordering; the loader looks the rows up in the
// table it is given and re-derives the effective hit rates. Throws
// std::runtime_error when a chosen row is absent or its architecture
// disagrees with the table.
void save_plan(std::ostream& out, const SelectionPlan& plan, const std::vector<VariantMetrics>& metrics,
               const std::vector<std::string>& header_comments = {});
SelectionPlan load_plan(std::istream& in, const std::vector<VariantMetrics>& metrics);

}  // namespace latecache
