// Copyright the latecache authors. Apache 2.0 licensed; see LICENSE in the project root.
#include "latecache/serving.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <optional>
#include <ostream>
#include <sstream>
#include <stdexcept>

#include "latecache/rng.hpp"
#include "latecache/textio.hpp"

namespace latecache {

namespace {

void require(bool ok, const std::string& msg) {
  if (!ok) throw std::invalid_argument(msg);
}

void reject_infeasible(const SelectionPlan& plan, const std::vector<VariantMetrics>& metrics,
                       const LayerProfile& profile, const ComposerConfig& cfg) {
  const ConstraintReport report = check_constraints(plan, metrics, profile, cfg);
  if (!report.feasible) {
    throw std::invalid_argument("simulate: infeasible plan: " + report.violations.front());
  }
}

// Inverse-CDF sampler over ranks 1..C with mass proportional to rank^-alpha.
struct ZipfSampler {
  std::vector<double> cdf;

  ZipfSampler(int classes, double alpha) {
    cdf.reserve(static_cast<std::size_t>(classes));
    double acc = 0.0;
    for (int r = 1; r <= classes; ++r) {
      acc += std::pow(static_cast<double>(r), -alpha);
      cdf.push_back(acc);
    }
    for (double& c : cdf) c /= acc;
  }

  int rank(double u) const {  // 1-based
    const auto it = std::lower_bound(cdf.begin(), cdf.end(), u);
    return static_cast<int>(it - cdf.begin()) + 1;
  }
};

}  // namespace

double zipf_probability(int rank, int num_classes, double alpha) {
  require(num_classes >= 1 && rank >= 1 && rank <= num_classes, "zipf: rank out of range");
  require(alpha > 0.0, "zipf: skew must be positive");
  double total = 0.0;
  for (int r = 1; r <= num_classes; ++r) total += std::pow(static_cast<double>(r), -alpha);
  return std::pow(static_cast<double>(rank), -alpha) / total;
}

std::vector<Request> gen_workload(const WorkloadSpec& spec, const Dataset& data) {
  require(spec.num_classes >= 1 && spec.num_classes <= data.num_classes,
          "workload: class count must fit the dataset");
  require(spec.zipf_alpha > 0.0, "workload: zipf skew must be positive");
  require(spec.rotation_period_min > 0.0, "workload: rotation period must be positive");
  require(spec.requests_per_sec > 0.0 && spec.duration_min > 0.0, "workload: rate and duration must be positive");

  const std::vector<std::vector<int>> pools = indices_by_class(data.test, data.num_classes);
  for (int c = 0; c < spec.num_classes; ++c) {
    require(!pools[static_cast<std::size_t>(c)].empty(),
            "workload: no test samples for class " + std::to_string(c));
  }

  const long long n = std::llround(spec.requests_per_sec * spec.duration_min * 60.0);
  const ZipfSampler zipf(spec.num_classes, spec.zipf_alpha);
  Rng rng(mix_seed(spec.seed, 0x3f10));
  std::vector<Request> stream;
  stream.reserve(static_cast<std::size_t>(n));
  for (long long i = 0; i < n; ++i) {
    Request req;
    req.id = i;
    req.time_min = static_cast<double>(i) / (spec.requests_per_sec * 60.0);
    const long long period = static_cast<long long>(req.time_min / spec.rotation_period_min);
    const int rank = zipf.rank(rng.next_double());
    req.true_class = static_cast<int>((rank - 1 + period) % spec.num_classes);
    const auto& pool = pools[static_cast<std::size_t>(req.true_class)];
    req.sample_idx = static_cast<std::size_t>(pool[static_cast<std::size_t>(rng.next_int(static_cast<int>(pool.size())))]);
    stream.push_back(req);
  }
  return stream;
}

namespace {

// One model-driven serve: the base pass always completes (the lookup runs
// beside it), so the base prediction and every tap are available either way.
RequestTrace serve_one(const BaseModel& model, const std::vector<CacheVariant>& live,
                       const std::vector<const VariantMetrics*>& rows, const LayerProfile& profile,
                       const Dataset& data, const Request& req, TapForward* out_tf = nullptr) {
  require(req.sample_idx < data.test.size(), "simulate: request points outside the test pool");
  const Sample& sample = data.test[req.sample_idx];
  TapForward tf = forward_with_taps(model, sample.x);

  RequestTrace t;
  t.id = req.id;
  t.time_min = req.time_min;
  t.true_class = sample.label;
  t.base_pred = argmax(tf.y);
  t.served_pred = t.base_pred;
  t.hit_layer = 0;
  t.latency_ms = profile.total();
  for (std::size_t k = 0; k < live.size(); ++k) {
    const int layer = rows[k]->layer;
    const LookupResult res = lookup(live[k], tf.taps[static_cast<std::size_t>(layer - 1)]);
    if (res.hit) {
      t.served_pred = argmax(res.pr);
      t.hit_layer = layer;
      t.latency_ms = profile.prefix(layer) + rows[k]->lookup_ms;
      break;
    }
  }
  if (out_tf != nullptr) *out_tf = std::move(tf);
  return t;
}

std::vector<const VariantMetrics*> chosen_rows(const SelectionPlan& plan,
                                               const std::vector<VariantMetrics>& metrics) {
  std::vector<const VariantMetrics*> rows;
  rows.reserve(plan.chosen.size());
  for (std::size_t idx : plan.chosen) rows.push_back(&metrics[idx]);
  return rows;
}

std::vector<CacheVariant> chosen_variants(const Deployment& dep) {
  require(dep.variants != nullptr && dep.model != nullptr, "simulate: deployment missing model or variants");
  std::vector<CacheVariant> live;
  live.reserve(dep.plan.chosen.size());
  for (std::size_t idx : dep.plan.chosen) {
    require(idx < dep.variants->size(), "simulate: plan references a missing variant");
    live.push_back((*dep.variants)[idx]);
  }
  return live;
}

}  // namespace

std::vector<RequestTrace> simulate_model(const Deployment& dep, const Dataset& data,
                                         const std::vector<Request>& stream) {
  reject_infeasible(dep.plan, dep.metrics, dep.profile, dep.composer);
  const std::vector<CacheVariant> live = chosen_variants(dep);
  const std::vector<const VariantMetrics*> rows = chosen_rows(dep.plan, dep.metrics);
  std::vector<RequestTrace> traces;
  traces.reserve(stream.size());
  for (const Request& req : stream) {
    traces.push_back(serve_one(*dep.model, live, rows, dep.profile, data, req));
  }
  return traces;
}

std::vector<RequestTrace> simulate_profile(const SelectionPlan& plan, const std::vector<VariantMetrics>& metrics,
                                           const LayerProfile& profile, const ComposerConfig& cfg, int num_classes,
                                           const std::vector<Request>& stream, std::uint64_t seed) {
  require(num_classes >= 2, "simulate: need at least two classes");
  reject_infeasible(plan, metrics, profile, cfg);
  const std::vector<const VariantMetrics*> rows = chosen_rows(plan, metrics);

  std::vector<RequestTrace> traces;
  traces.reserve(stream.size());
  for (const Request& req : stream) {
    Rng rng(mix_seed(mix_seed(seed, static_cast<std::uint64_t>(req.id)), 0x9f0f));
    RequestTrace t;
    t.id = req.id;
    t.time_min = req.time_min;
    t.true_class = req.true_class;
    t.base_pred = req.true_class;  // profile mode never evaluates the model
    t.served_pred = t.base_pred;
    t.hit_layer = 0;
    t.latency_ms = profile.total();
    double remaining = 1.0;
    for (std::size_t k = 0; k < rows.size(); ++k) {
      // Conditional hit probability given no earlier hit keeps each layer's
      // marginal share equal to its effective hit rate.
      const double p = remaining > 0.0 ? std::min(1.0, plan.eh[k] / remaining) : 0.0;
      remaining -= plan.eh[k];
      if (rng.next_double() < p) {
        const bool correct = rng.next_double() < rows[k]->accuracy;
        t.served_pred = correct ? t.base_pred : (t.base_pred + 1) % num_classes;
        t.hit_layer = rows[k]->layer;
        t.latency_ms = profile.prefix(rows[k]->layer) + rows[k]->lookup_ms;
        break;
      }
    }
    traces.push_back(t);
  }
  return traces;
}

namespace {

void validate_adaptation(const AdaptationConfig& cfg) {
  require(cfg.sample_rate >= 0.0 && cfg.sample_rate <= 1.0, "adaptation: sample rate must be in [0, 1]");
  require(cfg.window_min > 0.0, "adaptation: window must be positive");
  require(cfg.retrain_interval_min > 0.0, "adaptation: retrain interval must be positive");
  require(cfg.recency_decay > 0.0 && cfg.recency_decay <= 1.0, "adaptation: recency decay must be in (0, 1]");
  require(cfg.mixin_fraction >= 0.0 && cfg.mixin_fraction < 1.0, "adaptation: mix-in fraction must be in [0, 1)");
  require(cfg.epochs >= 1, "adaptation: epochs must be positive");
  require(cfg.learning_rate > 0.0, "adaptation: learning rate must be positive");
  require(cfg.retrain_pause_ms >= 0.0, "adaptation: retrain pause must be nonnegative");
}

}  // namespace

AdaptationResult run_adaptation(const Deployment& dep, const Dataset& data, const std::vector<Request>& stream,
                                const AdaptationConfig& cfg, const CacheTrainConfig& train_cfg,
                                const std::vector<TapRecord>& original_train, std::uint64_t seed, bool adapt_on) {
  validate_adaptation(cfg);
  reject_infeasible(dep.plan, dep.metrics, dep.profile, dep.composer);

  AdaptationResult result;
  std::vector<CacheVariant> live = chosen_variants(dep);
  const std::vector<const VariantMetrics*> rows = chosen_rows(dep.plan, dep.metrics);

  struct WindowSample {
    double time_min;
    TapRecord record;
  };
  std::vector<WindowSample> window;
  Rng sample_rng(mix_seed(seed, 0x5a3e));

  std::optional<std::vector<CacheVariant>> pending;
  double swap_time = 0.0;
  int boundary = 1;
  double next_boundary = cfg.retrain_interval_min;

  auto retrain_at = [&](double now) {
    RetrainEvent event;
    event.interval = boundary;
    event.time_min = now;

    // Slide the window, then weight what survives by interval age.
    window.erase(std::remove_if(window.begin(), window.end(),
                                [&](const WindowSample& w) { return w.time_min < now - cfg.window_min; }),
                 window.end());
    event.window_size = window.size();
    if (cfg.sample_rate <= 0.0 || window.empty()) {
      event.note = "skipped: no window samples";
      result.retrains.push_back(event);
      return;
    }

    std::vector<TapRecord> records;
    std::vector<double> weights;
    for (const WindowSample& w : window) {
      const int age = static_cast<int>((now - w.time_min) / cfg.retrain_interval_min);
      records.push_back(w.record);
      weights.push_back(std::pow(cfg.recency_decay, age));
    }
    // Mix in original training records to guard against forgetting the
    // still-live classes; fraction f of the final set means f/(1-f) per
    // window sample.
    Rng mix_rng(mix_seed(mix_seed(seed, static_cast<std::uint64_t>(boundary)), 0xe7a1));
    std::size_t mixin = static_cast<std::size_t>(
        std::llround(static_cast<double>(window.size()) * cfg.mixin_fraction / (1.0 - cfg.mixin_fraction)));
    mixin = std::min(mixin, original_train.size());
    std::vector<std::size_t> order(original_train.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    for (std::size_t i = 0; i < mixin; ++i) {
      const std::size_t j = i + static_cast<std::size_t>(mix_rng.next_int(static_cast<int>(order.size() - i)));
      std::swap(order[i], order[j]);
      records.push_back(original_train[order[i]]);
      weights.push_back(1.0);
    }
    event.mixin_size = mixin;

    std::vector<CacheVariant> staged = live;
    for (std::size_t k = 0; k < staged.size(); ++k) {
      CacheVariant candidate = staged[k];
      TrainConfig rcfg;
      rcfg.learning_rate = cfg.learning_rate;
      rcfg.epochs = cfg.epochs;
      const std::uint64_t vseed = mix_seed(mix_seed(seed, static_cast<std::uint64_t>(boundary)),
                                           static_cast<std::uint64_t>(k));
      rcfg.seed = mix_seed(vseed, 1);
      try {
        train_predictor(candidate, records, rcfg, train_cfg.tau, train_cfg.beta, weights);
        rcfg.seed = mix_seed(vseed, 2);
        train_selector(candidate, records, rcfg, train_cfg.w_fp, train_cfg.w_fn, weights);
        staged[k] = std::move(candidate);
      } catch (const std::runtime_error&) {
        event.note += std::string(event.note.empty() ? "" : "; ") + "layer " +
                      std::to_string(rows[k]->layer) + " retrain diverged, kept previous networks";
      }
    }
    pending = std::move(staged);
    swap_time = now + cfg.retrain_pause_ms / 60000.0;
    event.applied = true;
    result.retrains.push_back(event);
  };

  for (const Request& req : stream) {
    while (req.time_min >= next_boundary) {
      // A swap that matures by this boundary lands before the new retrain
      // snapshots the live caches, as in a synchronous retrain-then-swap loop.
      if (pending && next_boundary >= swap_time) {
        live = std::move(*pending);
        pending.reset();
      }
      if (adapt_on) retrain_at(next_boundary);
      ++boundary;
      next_boundary = static_cast<double>(boundary) * cfg.retrain_interval_min;
    }
    if (pending && req.time_min >= swap_time) {
      live = std::move(*pending);
      pending.reset();
    }

    TapForward tf;
    const RequestTrace trace = serve_one(*dep.model, live, rows, dep.profile, data, req, &tf);

    const int interval = static_cast<int>(req.time_min / cfg.retrain_interval_min);
    if (result.timeline.empty() || result.timeline.back().interval < interval) {
      IntervalStat stat;
      stat.interval = interval;
      result.timeline.push_back(stat);
    }
    result.timeline.back().requests += 1;
    result.timeline.back().hits += trace.hit_layer > 0 ? 1 : 0;

    if (adapt_on && sample_rng.next_double() < cfg.sample_rate) {
      TapRecord rec;
      rec.taps = std::move(tf.taps);
      rec.y = std::move(tf.y);
      rec.label = trace.true_class;
      window.push_back({req.time_min, std::move(rec)});
    }
    result.traces.push_back(trace);
  }
  result.final_variants = std::move(live);
  return result;
}

SimSummary summarize(const std::vector<RequestTrace>& traces, const LayerProfile& profile) {
  require(!traces.empty(), "summarize: no traces");
  SimSummary s;
  s.requests = static_cast<long long>(traces.size());
  std::vector<double> latencies;
  latencies.reserve(traces.size());
  long long agree = 0, correct = 0, hits = 0;
  double sum = 0.0;
  for (const RequestTrace& t : traces) {
    latencies.push_back(t.latency_ms);
    sum += t.latency_ms;
    agree += t.served_pred == t.base_pred ? 1 : 0;
    correct += t.served_pred == t.true_class ? 1 : 0;
    if (t.hit_layer > 0) {
      ++hits;
      ++s.hits_by_layer[t.hit_layer];
    }
  }
  std::sort(latencies.begin(), latencies.end());
  const auto percentile = [&](double q) {
    const std::size_t idx = static_cast<std::size_t>(
        std::max<long long>(0, std::llround(std::ceil(q * static_cast<double>(latencies.size()))) - 1));
    return latencies[std::min(idx, latencies.size() - 1)];
  };
  const double n = static_cast<double>(traces.size());
  s.avg_latency_ms = sum / n;
  s.p50_latency_ms = percentile(0.50);
  s.p99_latency_ms = percentile(0.99);
  s.max_latency_ms = latencies.back();
  s.agreement = static_cast<double>(agree) / n;
  s.accuracy = static_cast<double>(correct) / n;
  s.hit_rate = static_cast<double>(hits) / n;
  s.speedup = profile.total() / s.avg_latency_ms;
  return s;
}

namespace {
constexpr const char* kTraceMagic = "latecache-trace v1";
constexpr const char* kSummaryMagic = "latecache-summary v1";
}  // namespace

void save_traces(std::ostream& out, const std::vector<RequestTrace>& traces,
                 const std::vector<std::string>& header_comments) {
  out << kTraceMagic << '\n';
  for (const std::string& line : header_comments) out << "# " << line << '\n';
  out << "# columns: id time_min true_class base_pred served_pred hit_layer latency_ms\n";
  for (const RequestTrace& t : traces) {
    out << t.id << ' ' << fmt_double(t.time_min) << ' ' << t.true_class << ' ' << t.base_pred << ' '
        << t.served_pred << ' ' << t.hit_layer << ' ' << fmt_double(t.latency_ms) << '\n';
  }
}

std::vector<RequestTrace> load_traces(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line != kTraceMagic) {
    throw std::runtime_error("trace file: bad or missing header");
  }
  std::vector<RequestTrace> traces;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    RequestTrace t;
    std::string word;
    ls >> t.id >> word;
    t.time_min = parse_double(word);
    ls >> t.true_class >> t.base_pred >> t.served_pred >> t.hit_layer >> word;
    if (!ls) throw std::runtime_error("trace file: malformed row '" + line + "'");
    t.latency_ms = parse_double(word);
    traces.push_back(t);
  }
  return traces;
}

void save_summary(std::ostream& out, const SimSummary& summary, const std::vector<std::string>& header_comments) {
  out << kSummaryMagic << '\n';
  for (const std::string& line : header_comments) out << "# " << line << '\n';
  out << "requests " << summary.requests << '\n';
  out << "avg_latency_ms " << fmt_double(summary.avg_latency_ms) << '\n';
  out << "p50_latency_ms " << fmt_double(summary.p50_latency_ms) << '\n';
  out << "p99_latency_ms " << fmt_double(summary.p99_latency_ms) << '\n';
  out << "max_latency_ms " << fmt_double(summary.max_latency_ms) << '\n';
  out << "agreement " << fmt_double(summary.agreement) << '\n';
  out << "accuracy " << fmt_double(summary.accuracy) << '\n';
  out << "hit_rate " << fmt_double(summary.hit_rate) << '\n';
  out << "speedup " << fmt_double(summary.speedup) << '\n';
  for (const auto& [layer, count] : summary.hits_by_layer) {
    out << "hits_at_layer " << layer << ' ' << count << '\n';
  }
}

}  // namespace latecache
