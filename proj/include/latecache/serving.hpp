// Copyright the latecache authors. Apache 2.0 licensed; see LICENSE in the project root.
#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "latecache/base_model.hpp"
#include "latecache/cache.hpp"
#include "latecache/composer.hpp"
#include "latecache/dataset.hpp"

// Serving simulation over simulated time. Latencies come from the layer
// profile and the analytic cost model, never the host clock, so every run is
// machine independent and bit-reproducible. The cache lookup runs
// asynchronously beside the base computation: a miss costs nothing extra
// (the full pass was already underway), so no request ever exceeds the full
// model latency.

namespace latecache {

struct WorkloadSpec {
  int num_classes = 10;
  double zipf_alpha = 1.5;           // higher = more skew toward the dominant class
  double rotation_period_min = 15.0; // the dominant class advances every period
  double requests_per_sec = 2.0;
  double duration_min = 60.0;
  std::uint64_t seed = 1;
};

struct Request {
  long long id = 0;
  double time_min = 0.0;
  int true_class = 0;
  std::size_t sample_idx = 0;  // into the dataset's test split
};

// Timestamped request stream: each request's class follows a Zipf law over a
// ranking that rotates cyclically every period, and its input is drawn from
// that class's test pool.
std::vector<Request> gen_workload(const WorkloadSpec& spec, const Dataset& data);

// Zipf probability of the rank-r class (1-based), for test oracles.
double zipf_probability(int rank, int num_classes, double alpha);

struct RequestTrace {
  long long id = 0;
  double time_min = 0.0;
  int true_class = 0;
  int base_pred = 0;
  int served_pred = 0;
  int hit_layer = 0;  // 0 = miss (served by the full model)
  double latency_ms = 0.0;
};

// Everything a simulation needs to serve requests under a plan. `variants`
// is parallel to `metrics` (as produced by exploration); only the plan's
// chosen entries are consulted.
struct Deployment {
  const BaseModel* model = nullptr;
  const std::vector<CacheVariant>* variants = nullptr;
  SelectionPlan plan;
  std::vector<VariantMetrics> metrics;
  LayerProfile profile;
  CostModel cost;
  ComposerConfig composer;
};

// Model-driven serving: real forward passes, real lookups, first hit in
// ascending layer order wins. Rejects plans that fail the constraint check.
std::vector<RequestTrace> simulate_model(const Deployment& dep, const Dataset& data,
                                         const std::vector<Request>& stream);

// Profile-driven serving: hits are sampled so each chosen layer's marginal
// hit share equals its effective hit rate, and a hit is correct with the
// variant's measured accuracy. The base model is never evaluated; the base
// prediction is taken to be the true class and a wrong hit serves the next
// class up, preserving the confusion accounting.
std::vector<RequestTrace> simulate_profile(const SelectionPlan& plan, const std::vector<VariantMetrics>& metrics,
                                           const LayerProfile& profile, const ComposerConfig& cfg, int num_classes,
                                           const std::vector<Request>& stream, std::uint64_t seed);

struct AdaptationConfig {
  double sample_rate = 0.2;        // probability a served request enters the window
  double window_min = 60.0;        // how much history the window keeps
  double retrain_interval_min = 15.0;
  double recency_decay = 0.7;      // window sample weight decays per interval of age
  double mixin_fraction = 0.5;     // share of the retrain set drawn from original training data
  int epochs = 5;
  double learning_rate = 0.002;
  double retrain_pause_ms = 0.0;   // simulated delay before retrained caches swap in
};

struct RetrainEvent {
  int interval = 0;        // boundary index (1 = after the first interval)
  double time_min = 0.0;
  std::size_t window_size = 0;
  std::size_t mixin_size = 0;
  bool applied = false;
  std::string note;
};

struct IntervalStat {
  int interval = 0;      // floor(time / retrain interval)
  long long requests = 0;
  long long hits = 0;

  double hit_rate() const { return requests == 0 ? 0.0 : static_cast<double>(hits) / static_cast<double>(requests); }
};

struct AdaptationResult {
  std::vector<RequestTrace> traces;
  std::vector<IntervalStat> timeline;
  std::vector<RetrainEvent> retrains;
  std::vector<CacheVariant> final_variants;  // chosen variants after the run, plan order
};

// Model-driven serving with the online adaptation loop: sampled requests
// fill a sliding window; at every interval boundary the chosen variants are
// retrained on recency-weighted window samples mixed with original training
// records, and swap in between requests. With `adapt_on` false (or no
// usable samples) the caches stay frozen and the result matches
// simulate_model exactly.
AdaptationResult run_adaptation(const Deployment& dep, const Dataset& data, const std::vector<Request>& stream,
                                const AdaptationConfig& cfg, const CacheTrainConfig& train_cfg,
                                const std::vector<TapRecord>& original_train, std::uint64_t seed, bool adapt_on);

struct SimSummary {
  long long requests = 0;
  double avg_latency_ms = 0.0;
  double p50_latency_ms = 0.0;
  double p99_latency_ms = 0.0;
  double max_latency_ms = 0.0;
  double agreement = 1.0;  // served == base prediction
  double accuracy = 1.0;   // served == true class
  double hit_rate = 0.0;
  double speedup = 1.0;    // full-depth latency over average latency
  std::map<int, long long> hits_by_layer;
};

SimSummary summarize(const std::vector<RequestTrace>& traces, const LayerProfile& profile);

// Trace file: delimited text, one row per request; bit-exact round trip.
void save_traces(std::ostream& out, const std::vector<RequestTrace>& traces,
                 const std::vector<std::string>& header_comments = {});
std::vector<RequestTrace> load_traces(std::istream& in);

// Summary report: versioned key/value text.
void save_summary(std::ostream& out, const SimSummary& summary,
                  const std::vector<std::string>& header_comments = {});

}  // namespace latecache
