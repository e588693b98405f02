// Copyright the latecache authors. Apache 2.0 licensed; see LICENSE in the project root.
#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "latecache/base_model.hpp"
#include "latecache/network.hpp"

// Learned per-layer caches. Each tap of the base model can host a variant: a
// predictor network that maps the hidden output to a class distribution, and
// a selector network that decides whether that prediction is trustworthy
// enough to serve (a "hit"). Misses fall through to the full model, so a shy
// selector only costs latency; a wrong fired prediction is the only way a
// cache can hurt accuracy.

namespace latecache {

enum class ArchFamily { kFc, kPool, kConv };

struct ArchSpec {
  ArchFamily family = ArchFamily::kFc;
  int hidden = 0;  // fc / pool width
  int kernel = 0;  // conv
  int stride = 0;  // conv

  static ArchSpec fc(int hidden);
  static ArchSpec pool(int hidden);
  static ArchSpec conv(int kernel, int stride);

  // "FC(1024)", "Pool(8192)", "Conv(3,1)" — token-safe, parseable.
  std::string to_string() const;
  static ArchSpec parse(const std::string& text);

  bool operator==(const ArchSpec& other) const = default;
};

// The published evaluation menu: two sizes per family.
std::vector<ArchSpec> default_menu();

// Analytic cost model: lookup latency is linear in multiply-accumulates and
// memory is bytes-per-parameter times the parameter count. Declared rather
// than measured so results are machine independent.
struct CostModel {
  double ms_per_mac = 2.0e-7;
  double lookup_overhead_ms = 0.05;
  double bytes_per_parameter = 4.0;

  double lookup_ms(long long macs) const { return ms_per_mac * static_cast<double>(macs) + lookup_overhead_ms; }
  double memory_mb(long long params) const {
    return bytes_per_parameter * static_cast<double>(params) / (1024.0 * 1024.0);
  }
};

struct CacheVariant {
  int layer = 0;    // 1-based tap index
  int variant = 0;  // index into the menu
  ArchSpec arch;
  Network predictor;  // tap_dim -> logits over classes
  Network selector;   // class distribution -> single logit
  double delta = 0.5; // fire when sigmoid(selector) >= delta
};

// Builds the (untrained) networks for one variant. Pool widths clamp to the
// largest divisor of the tap dimension that does not exceed the requested
// width, so a pool the size of the tap degenerates to a linear classifier.
// Seeded per (layer, variant, global seed): training jobs are independent.
CacheVariant build_variant(int layer, int variant_idx, const ArchSpec& arch, int tap_dim, int num_classes,
                           std::uint64_t global_seed);

// One training/measurement record: every tap of one sample plus the base
// model's output distribution (the cache's ground truth is the base model,
// not the dataset label — the label is kept for analysis only).
struct TapRecord {
  std::vector<Tensor> taps;
  Tensor y;
  int label = 0;
};

std::vector<TapRecord> collect_taps(const BaseModel& model, const std::vector<Sample>& samples);

// Deterministic 80/20-style split of cache data into a training part and a
// disjoint measurement part.
struct CacheData {
  std::vector<TapRecord> train;
  std::vector<TapRecord> measure;
};
CacheData split_cache_data(std::vector<TapRecord> records, double train_fraction, std::uint64_t seed);

struct CacheTrainConfig {
  TrainConfig predictor;  // defaults below are tuned for desk scale
  TrainConfig selector;
  double tau = 2.0;   // distillation temperature
  double beta = 0.5;  // hard-label weight in the predictor loss
  double w_fp = 5.0;  // firing on a wrong prediction costs more ...
  double w_fn = 1.0;  // ... than abstaining on a right one
  std::vector<double> delta_grid = {0.5, 0.6, 0.7, 0.8, 0.9, 0.95};
  double target_accuracy = 0.97;

  CacheTrainConfig() {
    predictor.learning_rate = 0.01;
    predictor.epochs = 30;
    selector.learning_rate = 0.02;
    selector.epochs = 30;
  }
};

// Minibatch SGD on the distillation loss over (tap, Y) pairs; the hard label
// is the base model's own argmax. Per-sample weights scale the gradients
// (used by online retraining to emphasize recent samples); empty means 1.0.
void train_predictor(CacheVariant& variant, const std::vector<TapRecord>& records, const TrainConfig& cfg,
                     double tau, double beta, const std::vector<double>& sample_weights = {});

// 1 when the (current) predictor agrees with the base model on the record.
std::vector<int> selector_labels(const CacheVariant& variant, const std::vector<TapRecord>& records);

// Minibatch SGD on the false-positive-weighted binary loss; the selector sees
// the predictor's class distribution as input.
void train_selector(CacheVariant& variant, const std::vector<TapRecord>& records, const TrainConfig& cfg,
                    double w_fp, double w_fn, const std::vector<double>& sample_weights = {});

// Sweeps the hit threshold over `grid` and keeps the smallest value whose
// measured conditional accuracy reaches `target_accuracy` (maximizing the hit
// rate subject to the accuracy floor). If no point qualifies, keeps the most
// accurate one. Returns the chosen threshold and stores it on the variant.
double tune_delta(CacheVariant& variant, const std::vector<TapRecord>& records, double target_accuracy,
                  const std::vector<double>& grid);

struct LookupResult {
  bool hit = false;
  double selector_prob = 0.0;
  Tensor pr;  // predictor distribution
};

LookupResult lookup(const CacheVariant& variant, const Tensor& tap);

// Measured behavior of one variant on a held-out set, plus modeled cost.
// Confusion semantics: the selector fires (positive) or not, and the
// predictor agrees with the base model (true) or not. A false positive is the
// only served error; a false negative only wastes the lookup.
struct VariantMetrics {
  int layer = 0;
  int variant = 0;
  ArchSpec arch;
  double hit_rate = 0.0;    // (tp + fp) / total
  double accuracy = 1.0;    // tp / (tp + fp); 1.0 when nothing fired
  double lookup_ms = 0.0;   // modeled lookup latency T
  double memory_mb = 0.0;   // modeled size M (independent of the data volume)
  long long tp = 0, fp = 0, tn = 0, fn = 0;

  long long total() const { return tp + fp + tn + fn; }
};

VariantMetrics measure_metrics(const CacheVariant& variant, const std::vector<TapRecord>& records,
                               const CostModel& cost);

long long predictor_macs(const CacheVariant& variant);
long long selector_macs(const CacheVariant& variant);
long long variant_parameters(const CacheVariant& variant);

// Trains and measures the full menu across every tap. Jobs are independent
// and run on `threads` workers (0 = hardware concurrency); per-job seeds make
// the result schedule-independent. Variants whose architecture cannot fit the
// tap dimension (conv kernel wider than the tap) are skipped.
struct ExploreResult {
  std::vector<CacheVariant> variants;
  std::vector<VariantMetrics> metrics;
};
ExploreResult explore_variants(const BaseModel& model, const CacheData& data, const std::vector<ArchSpec>& menu,
                               const CacheTrainConfig& cfg, const CostModel& cost, std::uint64_t global_seed,
                               int threads = 0);

// Metrics table file: delimited text, one row per variant; '#' lines are
// comments. Doubles round-trip bit-exactly.
void save_metrics(std::ostream& out, const std::vector<VariantMetrics>& rows,
                  const std::vector<std::string>& header_comments = {});
std::vector<VariantMetrics> load_metrics(std::istream& in);

// Variant checkpoint: both networks plus the tuned threshold.
void save_variant(std::ostream& out, const CacheVariant& variant,
                  const std::vector<std::string>& header_comments = {});
CacheVariant load_variant(std::istream& in);

}  // namespace latecache
