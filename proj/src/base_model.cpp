// Copyright the latecache authors. Apache 2.0 licensed; see LICENSE in the project root.
#include "latecache/base_model.hpp"

#include <cmath>
#include <istream>
#include <ostream>
#include <stdexcept>
#include <string>

#include "latecache/losses.hpp"
#include "latecache/rng.hpp"
#include "latecache/textio.hpp"

namespace latecache {

double LayerProfile::prefix(int k) const {
  if (k < 0 || k > blocks()) throw std::invalid_argument("layer profile: prefix index out of range");
  double acc = 0.0;
  for (int i = 0; i < k; ++i) acc += latency_ms[static_cast<std::size_t>(i)];
  return acc;
}

LayerProfile LayerProfile::uniform(int blocks, double per_block_ms) {
  if (blocks <= 0 || per_block_ms <= 0.0) throw std::invalid_argument("layer profile: positive sizes required");
  LayerProfile p;
  p.latency_ms.assign(static_cast<std::size_t>(blocks), per_block_ms);
  return p;
}

BaseModel make_base_model(int input_dim, int num_classes, std::vector<int> widths, int blocks, std::uint64_t seed) {
  if (blocks <= 0) throw std::invalid_argument("base model: need at least one block");
  if (num_classes < 2) throw std::invalid_argument("base model: need at least two classes");
  if (widths.size() == 1) widths.assign(static_cast<std::size_t>(blocks), widths[0]);
  if (static_cast<int>(widths.size()) != blocks) {
    throw std::invalid_argument("base model: widths must have one entry per block (or a single entry)");
  }
  std::vector<LayerSpec> layers;
  BaseModel model;
  int dim = input_dim;
  for (int b = 0; b < blocks; ++b) {
    const int w = widths[static_cast<std::size_t>(b)];
    layers.push_back(LayerSpec::fully_connected(dim, w));
    layers.push_back(LayerSpec::relu(w));
    model.tap_layer.push_back(static_cast<int>(layers.size()) - 1);
    model.tap_dims.push_back(w);
    dim = w;
  }
  layers.push_back(LayerSpec::fully_connected(dim, num_classes));
  layers.push_back(LayerSpec::softmax(num_classes));
  model.net = make_network(std::move(layers), mix_seed(seed, 0xba5e));
  model.num_blocks = blocks;
  model.num_classes = num_classes;
  return model;
}

TapForward forward_with_taps(const BaseModel& model, const Tensor& x) {
  const ForwardTrace trace = forward(model.net, x);
  TapForward tf;
  tf.taps.reserve(model.tap_layer.size());
  for (int layer : model.tap_layer) tf.taps.push_back(trace.activations[static_cast<std::size_t>(layer) + 1]);
  tf.y = trace.output();
  return tf;
}

Tensor head_forward(const BaseModel& model, const Tensor& last_tap) {
  const int head_start = model.tap_layer.back() + 1;
  Tensor act = last_tap;
  Network head;
  head.layers.assign(model.net.layers.begin() + head_start, model.net.layers.end());
  head.weights.assign(model.net.weights.begin() + head_start, model.net.weights.end());
  return forward(head, act).output();
}

TrainLog train_base(BaseModel& model, const Dataset& data, const TrainConfig& cfg) {
  if (data.train.empty()) throw std::invalid_argument("base training: empty training split");
  if (cfg.epochs <= 0 || cfg.batch_size <= 0) throw std::invalid_argument("base training: bad config");
  TrainLog log;
  SgdOptimizer opt(model.net, cfg.learning_rate, cfg.momentum);
  Rng rng(mix_seed(cfg.seed, 0x7a11));
  std::vector<int> order(data.train.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    rng.shuffle(order);
    double loss_sum = 0.0;
    std::size_t pos = 0;
    while (pos < order.size()) {
      const std::size_t end = std::min(order.size(), pos + static_cast<std::size_t>(cfg.batch_size));
      std::vector<LayerGrads> grads = zero_grads(model.net);
      const double scale = 1.0 / static_cast<double>(end - pos);
      for (std::size_t k = pos; k < end; ++k) {
        const Sample& s = data.train[static_cast<std::size_t>(order[k])];
        const ForwardTrace trace = forward(model.net, s.x);
        const LossValue lv = cross_entropy_loss(trace.output(), s.label);
        loss_sum += lv.loss;
        const std::vector<LayerGrads> g = backward(model.net, trace, lv.grad);
        accumulate_grads(grads, g, scale);
      }
      opt.step(model.net, grads);
      pos = end;
    }
    const double mean_loss = loss_sum / static_cast<double>(order.size());
    if (!std::isfinite(mean_loss)) {
      throw std::runtime_error("base training diverged at epoch " + std::to_string(epoch));
    }
    log.epoch_loss.push_back(mean_loss);
  }
  log.test_accuracy = evaluate_accuracy(model, data.test);
  return log;
}

double evaluate_accuracy(const BaseModel& model, const std::vector<Sample>& samples) {
  if (samples.empty()) throw std::invalid_argument("evaluate_accuracy: empty sample set");
  int correct = 0;
  for (const Sample& s : samples) {
    const ForwardTrace trace = forward(model.net, s.x);
    if (argmax(trace.output()) == s.label) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(samples.size());
}

namespace {

constexpr const char* kModelMagic = "latecache-model v1";
constexpr const char* kProfileMagic = "latecache-profile v1";

void expect_magic(std::istream& in, const char* magic, const char* what) {
  std::string line;
  if (!std::getline(in, line) || line != magic) {
    throw std::runtime_error(std::string(what) + ": bad or missing header");
  }
  while (in >> std::ws && in.peek() == '#') std::getline(in, line);
}

void expect_word(std::istream& in, const char* word, const char* what) {
  std::string got;
  in >> got;
  if (got != word) throw std::runtime_error(std::string(what) + ": expected '" + word + "'");
}

}  // namespace

void save_base_model(std::ostream& out, const BaseModel& model, const std::vector<std::string>& header_comments) {
  out << kModelMagic << '\n';
  for (const std::string& line : header_comments) out << "# " << line << '\n';
  out << "blocks " << model.num_blocks << " classes " << model.num_classes << '\n';
  out << "tap_layers";
  for (int t : model.tap_layer) out << ' ' << t;
  out << '\n';
  out << "tap_dims";
  for (int d : model.tap_dims) out << ' ' << d;
  out << '\n';
  save_network(out, model.net);
}

BaseModel load_base_model(std::istream& in) {
  expect_magic(in, kModelMagic, "model checkpoint");
  BaseModel m;
  expect_word(in, "blocks", "model checkpoint");
  in >> m.num_blocks;
  expect_word(in, "classes", "model checkpoint");
  in >> m.num_classes;
  if (!in || m.num_blocks <= 0 || m.num_classes < 2) {
    throw std::runtime_error("model checkpoint: malformed shape line");
  }
  expect_word(in, "tap_layers", "model checkpoint");
  m.tap_layer.resize(static_cast<std::size_t>(m.num_blocks));
  for (int& t : m.tap_layer) in >> t;
  expect_word(in, "tap_dims", "model checkpoint");
  m.tap_dims.resize(static_cast<std::size_t>(m.num_blocks));
  for (int& d : m.tap_dims) in >> d;
  if (!in) throw std::runtime_error("model checkpoint: truncated tap lists");
  m.net = load_network(in);
  return m;
}

void save_profile(std::ostream& out, const LayerProfile& profile, const std::vector<std::string>& header_comments) {
  out << kProfileMagic << '\n';
  for (const std::string& line : header_comments) out << "# " << line << '\n';
  out << "blocks " << profile.blocks() << '\n';
  out << "latency_ms";
  for (double l : profile.latency_ms) out << ' ' << fmt_double(l);
  out << '\n';
}

LayerProfile load_profile(std::istream& in) {
  expect_magic(in, kProfileMagic, "layer profile");
  expect_word(in, "blocks", "layer profile");
  int blocks = 0;
  in >> blocks;
  if (!in || blocks <= 0) throw std::runtime_error("layer profile: malformed block count");
  expect_word(in, "latency_ms", "layer profile");
  LayerProfile p;
  p.latency_ms.resize(static_cast<std::size_t>(blocks));
  std::string word;
  for (double& l : p.latency_ms) {
    in >> word;
    if (!in) throw std::runtime_error("layer profile: truncated latency list");
    l = parse_double(word);
  }
  return p;
}

}  // namespace latecache
