// Copyright the latecache authors. Apache 2.0 licensed; see LICENSE in the project root.
#include "latecache/cache.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <future>
#include <istream>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <thread>

#include "latecache/losses.hpp"
#include "latecache/rng.hpp"
#include "latecache/textio.hpp"

namespace latecache {

namespace {

constexpr int kSelectorHidden = 16;

void require(bool ok, const std::string& msg) {
  if (!ok) throw std::invalid_argument(msg);
}

// Largest divisor of dim not exceeding want (>= 1).
int clamp_pool_width(int want, int dim) {
  int w = std::min(want, dim);
  while (dim % w != 0) --w;
  return w;
}

std::vector<double> resolve_weights(const std::vector<double>& weights, std::size_t n, const char* who) {
  if (weights.empty()) return std::vector<double>(n, 1.0);
  if (weights.size() != n) throw std::invalid_argument(std::string(who) + ": sample weight count mismatch");
  return weights;
}

}  // namespace

ArchSpec ArchSpec::fc(int hidden) {
  require(hidden > 0, "arch: fc width must be positive");
  ArchSpec a;
  a.family = ArchFamily::kFc;
  a.hidden = hidden;
  return a;
}

ArchSpec ArchSpec::pool(int hidden) {
  require(hidden > 0, "arch: pool width must be positive");
  ArchSpec a;
  a.family = ArchFamily::kPool;
  a.hidden = hidden;
  return a;
}

ArchSpec ArchSpec::conv(int kernel, int stride) {
  require(kernel > 0 && stride > 0, "arch: conv kernel and stride must be positive");
  ArchSpec a;
  a.family = ArchFamily::kConv;
  a.kernel = kernel;
  a.stride = stride;
  return a;
}

std::string ArchSpec::to_string() const {
  switch (family) {
    case ArchFamily::kFc:
      return "FC(" + std::to_string(hidden) + ")";
    case ArchFamily::kPool:
      return "Pool(" + std::to_string(hidden) + ")";
    case ArchFamily::kConv:
      return "Conv(" + std::to_string(kernel) + "," + std::to_string(stride) + ")";
  }
  return "?";
}

ArchSpec ArchSpec::parse(const std::string& text) {
  const auto open = text.find('(');
  const auto close = text.rfind(')');
  if (open == std::string::npos || close == std::string::npos || close != text.size() - 1 || open == 0) {
    throw std::invalid_argument("arch: cannot parse '" + text + "'");
  }
  const std::string name = text.substr(0, open);
  const std::string args = text.substr(open + 1, close - open - 1);
  if (name == "FC") return fc(static_cast<int>(parse_int(args)));
  if (name == "Pool") return pool(static_cast<int>(parse_int(args)));
  if (name == "Conv") {
    const auto comma = args.find(',');
    if (comma == std::string::npos) throw std::invalid_argument("arch: conv needs kernel,stride in '" + text + "'");
    return conv(static_cast<int>(parse_int(args.substr(0, comma))),
                static_cast<int>(parse_int(args.substr(comma + 1))));
  }
  throw std::invalid_argument("arch: unknown family in '" + text + "'");
}

std::vector<ArchSpec> default_menu() {
  return {ArchSpec::fc(1024),  ArchSpec::fc(512),   ArchSpec::pool(8192),
          ArchSpec::pool(4096), ArchSpec::conv(3, 1), ArchSpec::conv(5, 2)};
}

CacheVariant build_variant(int layer, int variant_idx, const ArchSpec& arch, int tap_dim, int num_classes,
                           std::uint64_t global_seed) {
  require(layer >= 1, "build_variant: layers are 1-based");
  require(tap_dim > 0 && num_classes >= 2, "build_variant: bad dimensions");
  CacheVariant v;
  v.layer = layer;
  v.variant = variant_idx;
  v.arch = arch;
  const std::uint64_t seed =
      mix_seed(mix_seed(global_seed, static_cast<std::uint64_t>(layer)), static_cast<std::uint64_t>(variant_idx));

  std::vector<LayerSpec> pred;
  switch (arch.family) {
    case ArchFamily::kFc:
      pred = {LayerSpec::fully_connected(tap_dim, arch.hidden), LayerSpec::relu(arch.hidden),
              LayerSpec::fully_connected(arch.hidden, num_classes)};
      break;
    case ArchFamily::kPool: {
      const int width = clamp_pool_width(arch.hidden, tap_dim);
      pred = {LayerSpec::average_pool(tap_dim, tap_dim / width), LayerSpec::fully_connected(width, num_classes)};
      break;
    }
    case ArchFamily::kConv: {
      require(arch.kernel <= tap_dim, "build_variant: conv kernel " + std::to_string(arch.kernel) +
                                          " wider than tap dimension " + std::to_string(tap_dim));
      const LayerSpec conv = LayerSpec::conv1d(tap_dim, arch.kernel, arch.stride);
      pred = {conv, LayerSpec::relu(conv.out_dim), LayerSpec::fully_connected(conv.out_dim, num_classes)};
      break;
    }
  }
  v.predictor = make_network(std::move(pred), mix_seed(seed, 0x9ced));
  v.selector = make_network({LayerSpec::fully_connected(num_classes, kSelectorHidden),
                             LayerSpec::relu(kSelectorHidden), LayerSpec::fully_connected(kSelectorHidden, 1)},
                            mix_seed(seed, 0x5e1e));
  v.delta = 0.5;
  return v;
}

std::vector<TapRecord> collect_taps(const BaseModel& model, const std::vector<Sample>& samples) {
  std::vector<TapRecord> records;
  records.reserve(samples.size());
  for (const Sample& s : samples) {
    TapForward tf = forward_with_taps(model, s.x);
    TapRecord r;
    r.taps = std::move(tf.taps);
    r.y = std::move(tf.y);
    r.label = s.label;
    records.push_back(std::move(r));
  }
  return records;
}

CacheData split_cache_data(std::vector<TapRecord> records, double train_fraction, std::uint64_t seed) {
  require(train_fraction > 0.0 && train_fraction < 1.0, "split_cache_data: fraction must be in (0, 1)");
  require(records.size() >= 2, "split_cache_data: need at least two records");
  Rng rng(mix_seed(seed, 0x5711));
  rng.shuffle(records);
  const std::size_t n_train = std::max<std::size_t>(
      1, std::min(records.size() - 1, static_cast<std::size_t>(std::lround(train_fraction * records.size()))));
  CacheData data;
  data.train.assign(records.begin(), records.begin() + static_cast<std::ptrdiff_t>(n_train));
  data.measure.assign(records.begin() + static_cast<std::ptrdiff_t>(n_train), records.end());
  return data;
}

namespace {

const Tensor& tap_of(const TapRecord& r, const CacheVariant& v, const char* who) {
  const std::size_t idx = static_cast<std::size_t>(v.layer - 1);
  if (idx >= r.taps.size()) throw std::invalid_argument(std::string(who) + ": record has no tap for this layer");
  return r.taps[idx];
}

}  // namespace

void train_predictor(CacheVariant& variant, const std::vector<TapRecord>& records, const TrainConfig& cfg,
                     double tau, double beta, const std::vector<double>& sample_weights) {
  require(!records.empty(), "train_predictor: no records");
  const std::vector<double> weights = resolve_weights(sample_weights, records.size(), "train_predictor");
  SgdOptimizer opt(variant.predictor, cfg.learning_rate, cfg.momentum);
  Rng rng(mix_seed(cfg.seed, 0x90ed));
  std::vector<int> order(records.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    rng.shuffle(order);
    double loss_sum = 0.0;
    std::size_t pos = 0;
    while (pos < order.size()) {
      const std::size_t end = std::min(order.size(), pos + static_cast<std::size_t>(cfg.batch_size));
      std::vector<LayerGrads> grads = zero_grads(variant.predictor);
      const double inv = 1.0 / static_cast<double>(end - pos);
      for (std::size_t k = pos; k < end; ++k) {
        const TapRecord& r = records[static_cast<std::size_t>(order[k])];
        const ForwardTrace trace = forward(variant.predictor, tap_of(r, variant, "train_predictor"));
        const LossValue lv = distill_loss(trace.output(), r.y, argmax(r.y), tau, beta);
        loss_sum += lv.loss;
        accumulate_grads(grads, backward(variant.predictor, trace, lv.grad),
                         inv * weights[static_cast<std::size_t>(order[k])]);
      }
      if (!std::isfinite(loss_sum)) throw std::runtime_error("train_predictor: loss diverged");
      opt.step(variant.predictor, grads);
      pos = end;
    }
  }
}

std::vector<int> selector_labels(const CacheVariant& variant, const std::vector<TapRecord>& records) {
  std::vector<int> labels;
  labels.reserve(records.size());
  for (const TapRecord& r : records) {
    const ForwardTrace trace = forward(variant.predictor, tap_of(r, variant, "selector_labels"));
    labels.push_back(argmax(trace.output()) == argmax(r.y) ? 1 : 0);
  }
  return labels;
}

void train_selector(CacheVariant& variant, const std::vector<TapRecord>& records, const TrainConfig& cfg,
                    double w_fp, double w_fn, const std::vector<double>& sample_weights) {
  require(!records.empty(), "train_selector: no records");
  const std::vector<double> weights = resolve_weights(sample_weights, records.size(), "train_selector");
  // The predictor is frozen here, so its distributions and the agreement
  // labels can be computed once up front.
  std::vector<Tensor> inputs;
  inputs.reserve(records.size());
  for (const TapRecord& r : records) {
    inputs.push_back(softmax(forward(variant.predictor, tap_of(r, variant, "train_selector")).output()));
  }
  const std::vector<int> labels = selector_labels(variant, records);

  SgdOptimizer opt(variant.selector, cfg.learning_rate, cfg.momentum);
  Rng rng(mix_seed(cfg.seed, 0x5e1ec7));
  std::vector<int> order(records.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    rng.shuffle(order);
    double loss_sum = 0.0;
    std::size_t pos = 0;
    while (pos < order.size()) {
      const std::size_t end = std::min(order.size(), pos + static_cast<std::size_t>(cfg.batch_size));
      std::vector<LayerGrads> grads = zero_grads(variant.selector);
      const double inv = 1.0 / static_cast<double>(end - pos);
      for (std::size_t k = pos; k < end; ++k) {
        const std::size_t idx = static_cast<std::size_t>(order[k]);
        const ForwardTrace trace = forward(variant.selector, inputs[idx]);
        const ScalarLoss sl = weighted_selector_loss(trace.output()[0], labels[idx], w_fp, w_fn);
        loss_sum += sl.loss;
        accumulate_grads(grads, backward(variant.selector, trace, Tensor::vec({sl.grad})), inv * weights[idx]);
      }
      if (!std::isfinite(loss_sum)) throw std::runtime_error("train_selector: loss diverged");
      opt.step(variant.selector, grads);
      pos = end;
    }
  }
}

LookupResult lookup(const CacheVariant& variant, const Tensor& tap) {
  LookupResult res;
  res.pr = softmax(forward(variant.predictor, tap).output());
  res.selector_prob = sigmoid(forward(variant.selector, res.pr).output()[0]);
  res.hit = res.selector_prob >= variant.delta;
  return res;
}

double tune_delta(CacheVariant& variant, const std::vector<TapRecord>& records, double target_accuracy,
                  const std::vector<double>& grid) {
  require(!records.empty(), "tune_delta: no records");
  require(!grid.empty(), "tune_delta: empty threshold grid");
  std::vector<double> probs;
  std::vector<int> agree;
  probs.reserve(records.size());
  for (const TapRecord& r : records) {
    const LookupResult res = lookup(variant, tap_of(r, variant, "tune_delta"));
    probs.push_back(res.selector_prob);
    agree.push_back(argmax(res.pr) == argmax(r.y) ? 1 : 0);
  }
  std::vector<double> sorted_grid = grid;
  std::sort(sorted_grid.begin(), sorted_grid.end());
  double best_delta = sorted_grid.front();
  double best_accuracy = -1.0;
  bool satisfied = false;
  for (double delta : sorted_grid) {
    long long hits = 0, correct = 0;
    for (std::size_t i = 0; i < probs.size(); ++i) {
      if (probs[i] >= delta) {
        ++hits;
        correct += agree[i];
      }
    }
    const double acc = hits == 0 ? 1.0 : static_cast<double>(correct) / static_cast<double>(hits);
    if (!satisfied && acc >= target_accuracy) {
      best_delta = delta;  // smallest qualifying threshold maximizes the hit rate
      satisfied = true;
      break;
    }
    if (acc > best_accuracy) {
      best_accuracy = acc;
      best_delta = delta;
    }
  }
  variant.delta = best_delta;
  return best_delta;
}

long long predictor_macs(const CacheVariant& variant) { return mac_count(variant.predictor); }
long long selector_macs(const CacheVariant& variant) { return mac_count(variant.selector); }
long long variant_parameters(const CacheVariant& variant) {
  return parameter_count(variant.predictor) + parameter_count(variant.selector);
}

VariantMetrics measure_metrics(const CacheVariant& variant, const std::vector<TapRecord>& records,
                               const CostModel& cost) {
  require(!records.empty(), "measure_metrics: empty measurement set");
  VariantMetrics m;
  m.layer = variant.layer;
  m.variant = variant.variant;
  m.arch = variant.arch;
  for (const TapRecord& r : records) {
    const LookupResult res = lookup(variant, tap_of(r, variant, "measure_metrics"));
    const bool agrees = argmax(res.pr) == argmax(r.y);
    if (res.hit) {
      agrees ? ++m.tp : ++m.fp;
    } else {
      agrees ? ++m.fn : ++m.tn;
    }
  }
  const long long hits = m.tp + m.fp;
  m.hit_rate = static_cast<double>(hits) / static_cast<double>(m.total());
  m.accuracy = hits == 0 ? 1.0 : static_cast<double>(m.tp) / static_cast<double>(hits);
  m.lookup_ms = cost.lookup_ms(predictor_macs(variant) + selector_macs(variant));
  m.memory_mb = cost.memory_mb(variant_parameters(variant));
  return m;
}

ExploreResult explore_variants(const BaseModel& model, const CacheData& data, const std::vector<ArchSpec>& menu,
                               const CacheTrainConfig& cfg, const CostModel& cost, std::uint64_t global_seed,
                               int threads) {
  require(!menu.empty(), "explore_variants: empty menu");
  require(!data.train.empty() && !data.measure.empty(), "explore_variants: missing cache data");

  struct Job {
    int layer;
    int variant;
  };
  std::vector<Job> jobs;
  for (int layer = 1; layer <= model.num_blocks; ++layer) {
    for (std::size_t vi = 0; vi < menu.size(); ++vi) {
      const ArchSpec& arch = menu[vi];
      if (arch.family == ArchFamily::kConv && arch.kernel > model.tap_dims[static_cast<std::size_t>(layer - 1)]) {
        continue;  // cannot fit this tap; skip rather than fail the whole sweep
      }
      jobs.push_back({layer, static_cast<int>(vi)});
    }
  }

  const auto run_job = [&](const Job& job) -> std::pair<CacheVariant, VariantMetrics> {
    const ArchSpec& arch = menu[static_cast<std::size_t>(job.variant)];
    CacheVariant v = build_variant(job.layer, job.variant, arch,
                                   model.tap_dims[static_cast<std::size_t>(job.layer - 1)], model.num_classes,
                                   global_seed);
    const std::uint64_t job_seed = mix_seed(mix_seed(global_seed, static_cast<std::uint64_t>(job.layer)),
                                            static_cast<std::uint64_t>(job.variant));
    TrainConfig pcfg = cfg.predictor;
    pcfg.seed = mix_seed(job_seed, 1);
    train_predictor(v, data.train, pcfg, cfg.tau, cfg.beta);
    TrainConfig scfg = cfg.selector;
    scfg.seed = mix_seed(job_seed, 2);
    train_selector(v, data.train, scfg, cfg.w_fp, cfg.w_fn);
    tune_delta(v, data.train, cfg.target_accuracy, cfg.delta_grid);
    const VariantMetrics m = measure_metrics(v, data.measure, cost);
    return {std::move(v), m};
  };

  std::vector<std::pair<CacheVariant, VariantMetrics>> results(jobs.size());
  int workers = threads > 0 ? threads : static_cast<int>(std::thread::hardware_concurrency());
  workers = std::max(1, std::min<int>(workers, static_cast<int>(jobs.size())));
  if (workers == 1) {
    for (std::size_t i = 0; i < jobs.size(); ++i) results[i] = run_job(jobs[i]);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::future<void>> futures;
    futures.reserve(static_cast<std::size_t>(workers));
    for (int w = 0; w < workers; ++w) {
      futures.push_back(std::async(std::launch::async, [&]() {
        for (std::size_t i = next.fetch_add(1); i < jobs.size(); i = next.fetch_add(1)) {
          results[i] = run_job(jobs[i]);
        }
      }));
    }
    for (auto& f : futures) f.get();  // rethrows job failures
  }

  ExploreResult out;
  out.variants.reserve(results.size());
  out.metrics.reserve(results.size());
  for (auto& [variant, metrics] : results) {
    out.variants.push_back(std::move(variant));
    out.metrics.push_back(metrics);
  }
  return out;
}

// ---- file formats ----

namespace {
constexpr const char* kMetricsMagic = "latecache-metrics v1";
constexpr const char* kVariantMagic = "latecache-variant v1";
}  // namespace

void save_metrics(std::ostream& out, const std::vector<VariantMetrics>& rows,
                  const std::vector<std::string>& header_comments) {
  out << kMetricsMagic << '\n';
  for (const std::string& line : header_comments) out << "# " << line << '\n';
  out << "# columns: layer variant arch hit_rate accuracy lookup_ms memory_mb tp fp tn fn\n";
  for (const VariantMetrics& m : rows) {
    out << m.layer << ' ' << m.variant << ' ' << m.arch.to_string() << ' ' << fmt_double(m.hit_rate) << ' '
        << fmt_double(m.accuracy) << ' ' << fmt_double(m.lookup_ms) << ' ' << fmt_double(m.memory_mb) << ' ' << m.tp
        << ' ' << m.fp << ' ' << m.tn << ' ' << m.fn << '\n';
  }
}

std::vector<VariantMetrics> load_metrics(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line != kMetricsMagic) {
    throw std::runtime_error("metrics file: bad or missing header");
  }
  std::vector<VariantMetrics> rows;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    VariantMetrics m;
    std::string arch, word;
    ls >> m.layer >> m.variant >> arch;
    m.arch = ArchSpec::parse(arch);
    ls >> word;
    m.hit_rate = parse_double(word);
    ls >> word;
    m.accuracy = parse_double(word);
    ls >> word;
    m.lookup_ms = parse_double(word);
    ls >> word;
    m.memory_mb = parse_double(word);
    ls >> m.tp >> m.fp >> m.tn >> m.fn;
    if (!ls) throw std::runtime_error("metrics file: malformed row '" + line + "'");
    rows.push_back(m);
  }
  return rows;
}

void save_variant(std::ostream& out, const CacheVariant& variant,
                  const std::vector<std::string>& header_comments) {
  out << kVariantMagic << '\n';
  for (const std::string& line : header_comments) out << "# " << line << '\n';
  out << "layer " << variant.layer << " variant " << variant.variant << " arch " << variant.arch.to_string()
      << " delta " << fmt_double(variant.delta) << '\n';
  out << "predictor\n";
  save_network(out, variant.predictor);
  out << "selector\n";
  save_network(out, variant.selector);
}

CacheVariant load_variant(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line != kVariantMagic) {
    throw std::runtime_error("variant checkpoint: bad or missing header");
  }
  while (in >> std::ws && in.peek() == '#') std::getline(in, line);
  CacheVariant v;
  std::string word, arch;
  in >> word >> v.layer;
  if (word != "layer") throw std::runtime_error("variant checkpoint: expected 'layer'");
  in >> word >> v.variant;
  if (word != "variant") throw std::runtime_error("variant checkpoint: expected 'variant'");
  in >> word >> arch;
  if (word != "arch") throw std::runtime_error("variant checkpoint: expected 'arch'");
  v.arch = ArchSpec::parse(arch);
  in >> word >> arch;
  if (word != "delta") throw std::runtime_error("variant checkpoint: expected 'delta'");
  v.delta = parse_double(arch);
  in >> word;
  if (word != "predictor") throw std::runtime_error("variant checkpoint: expected 'predictor'");
  v.predictor = load_network(in);
  in >> word;
  if (word != "selector") throw std::runtime_error("variant checkpoint: expected 'selector'");
  v.selector = load_network(in);
  return v;
}

}  // namespace latecache
