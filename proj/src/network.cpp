// Copyright the latecache authors. Apache 2.0 licensed; see LICENSE in the project root.
#include "latecache/network.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>

#include "latecache/rng.hpp"
#include "latecache/textio.hpp"

namespace latecache {

namespace {

void require(bool ok, const std::string& msg) {
  if (!ok) throw std::invalid_argument(msg);
}

}  // namespace

LayerSpec LayerSpec::fully_connected(int in, int out) {
  require(in > 0 && out > 0, "fully_connected: dimensions must be positive");
  LayerSpec s;
  s.kind = LayerKind::kFullyConnected;
  s.in_dim = in;
  s.out_dim = out;
  return s;
}

LayerSpec LayerSpec::relu(int dim) {
  require(dim > 0, "relu: dimension must be positive");
  LayerSpec s;
  s.kind = LayerKind::kRelu;
  s.in_dim = dim;
  s.out_dim = dim;
  return s;
}

LayerSpec LayerSpec::average_pool(int in, int window) {
  require(in > 0 && window > 0, "average_pool: dimensions must be positive");
  require(in % window == 0, "average_pool: window must divide the input dimension");
  LayerSpec s;
  s.kind = LayerKind::kAveragePool;
  s.in_dim = in;
  s.out_dim = in / window;
  s.pool_window = window;
  return s;
}

LayerSpec LayerSpec::conv1d(int in, int kernel, int stride) {
  require(in > 0 && kernel > 0 && stride > 0, "conv1d: dimensions must be positive");
  require(kernel <= in, "conv1d: kernel larger than input");
  LayerSpec s;
  s.kind = LayerKind::kConv1d;
  s.in_dim = in;
  s.out_dim = (in - kernel) / stride + 1;
  s.kernel = kernel;
  s.stride = stride;
  return s;
}

LayerSpec LayerSpec::softmax(int dim) {
  require(dim > 0, "softmax: dimension must be positive");
  LayerSpec s;
  s.kind = LayerKind::kSoftmax;
  s.in_dim = dim;
  s.out_dim = dim;
  return s;
}

Network make_network(std::vector<LayerSpec> layers, std::uint64_t seed) {
  require(!layers.empty(), "make_network: at least one layer required");
  for (std::size_t i = 1; i < layers.size(); ++i) {
    require(layers[i].in_dim == layers[i - 1].out_dim,
            "make_network: layer " + std::to_string(i) + " input dim " + std::to_string(layers[i].in_dim) +
                " does not match previous output dim " + std::to_string(layers[i - 1].out_dim));
  }
  Network net;
  net.layers = std::move(layers);
  net.weights.resize(net.layers.size());
  Rng rng(seed);
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    const LayerSpec& spec = net.layers[i];
    LayerWeights& lw = net.weights[i];
    if (spec.kind == LayerKind::kFullyConnected) {
      const double limit = std::sqrt(6.0 / (spec.in_dim + spec.out_dim));
      lw.w = Tensor({spec.out_dim, spec.in_dim});
      for (double& v : lw.w.data) v = rng.uniform(-limit, limit);
      lw.b = Tensor({spec.out_dim});
    } else if (spec.kind == LayerKind::kConv1d) {
      const double limit = std::sqrt(6.0 / (spec.kernel + 1));
      lw.w = Tensor({spec.kernel});
      for (double& v : lw.w.data) v = rng.uniform(-limit, limit);
      lw.b = Tensor({1});
    }
  }
  return net;
}

ForwardTrace forward(const Network& net, const Tensor& input) {
  require(!net.layers.empty(), "forward: empty network");
  require(input.numel() == net.input_dim(),
          "forward: input dim " + std::to_string(input.numel()) + " != expected " + std::to_string(net.input_dim()));
  ForwardTrace trace;
  trace.activations.reserve(net.layers.size() + 1);
  trace.activations.push_back(input);
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    const LayerSpec& spec = net.layers[i];
    const Tensor& x = trace.activations.back();
    Tensor y({spec.out_dim});
    switch (spec.kind) {
      case LayerKind::kFullyConnected: {
        const Tensor& w = net.weights[i].w;
        const Tensor& b = net.weights[i].b;
        for (int o = 0; o < spec.out_dim; ++o) {
          double acc = b[o];
          const double* row = w.data.data() + static_cast<std::size_t>(o) * spec.in_dim;
          for (int j = 0; j < spec.in_dim; ++j) acc += row[j] * x[j];
          y[o] = acc;
        }
        break;
      }
      case LayerKind::kRelu:
        for (int j = 0; j < spec.in_dim; ++j) y[j] = x[j] > 0.0 ? x[j] : 0.0;
        break;
      case LayerKind::kAveragePool: {
        const double inv = 1.0 / spec.pool_window;
        for (int o = 0; o < spec.out_dim; ++o) {
          double acc = 0.0;
          for (int t = 0; t < spec.pool_window; ++t) acc += x[o * spec.pool_window + t];
          y[o] = acc * inv;
        }
        break;
      }
      case LayerKind::kConv1d: {
        const Tensor& w = net.weights[i].w;
        const double b = net.weights[i].b[0];
        for (int o = 0; o < spec.out_dim; ++o) {
          double acc = b;
          for (int t = 0; t < spec.kernel; ++t) acc += w[t] * x[o * spec.stride + t];
          y[o] = acc;
        }
        break;
      }
      case LayerKind::kSoftmax: {
        double m = x[0];
        for (int j = 1; j < spec.in_dim; ++j) m = std::max(m, x[j]);
        double sum = 0.0;
        for (int j = 0; j < spec.in_dim; ++j) {
          y[j] = std::exp(x[j] - m);
          sum += y[j];
        }
        for (int j = 0; j < spec.in_dim; ++j) y[j] /= sum;
        break;
      }
    }
    trace.activations.push_back(std::move(y));
  }
  return trace;
}

std::vector<LayerGrads> backward(const Network& net, const ForwardTrace& trace, const Tensor& output_grad,
                                 Tensor* input_grad) {
  require(trace.activations.size() == net.layers.size() + 1,
          "backward: forward trace does not match the network (no recorded forward pass?)");
  require(output_grad.numel() == net.output_dim(), "backward: output gradient has wrong dimension");
  std::vector<LayerGrads> grads(net.layers.size());
  Tensor g = output_grad;
  for (int i = static_cast<int>(net.layers.size()) - 1; i >= 0; --i) {
    const LayerSpec& spec = net.layers[static_cast<std::size_t>(i)];
    const Tensor& x = trace.activations[static_cast<std::size_t>(i)];
    const Tensor& y = trace.activations[static_cast<std::size_t>(i) + 1];
    Tensor gx({spec.in_dim});
    switch (spec.kind) {
      case LayerKind::kFullyConnected: {
        const Tensor& w = net.weights[static_cast<std::size_t>(i)].w;
        LayerGrads& lg = grads[static_cast<std::size_t>(i)];
        lg.w = Tensor({spec.out_dim, spec.in_dim});
        lg.b = Tensor({spec.out_dim});
        for (int o = 0; o < spec.out_dim; ++o) {
          const double go = g[o];
          lg.b[o] = go;
          double* wrow = lg.w.data.data() + static_cast<std::size_t>(o) * spec.in_dim;
          const double* row = w.data.data() + static_cast<std::size_t>(o) * spec.in_dim;
          for (int j = 0; j < spec.in_dim; ++j) {
            wrow[j] = go * x[j];
            gx[j] += row[j] * go;
          }
        }
        break;
      }
      case LayerKind::kRelu:
        for (int j = 0; j < spec.in_dim; ++j) gx[j] = x[j] > 0.0 ? g[j] : 0.0;
        break;
      case LayerKind::kAveragePool: {
        const double inv = 1.0 / spec.pool_window;
        for (int o = 0; o < spec.out_dim; ++o) {
          for (int t = 0; t < spec.pool_window; ++t) gx[o * spec.pool_window + t] = g[o] * inv;
        }
        break;
      }
      case LayerKind::kConv1d: {
        const Tensor& w = net.weights[static_cast<std::size_t>(i)].w;
        LayerGrads& lg = grads[static_cast<std::size_t>(i)];
        lg.w = Tensor({spec.kernel});
        lg.b = Tensor({1});
        for (int o = 0; o < spec.out_dim; ++o) {
          const double go = g[o];
          lg.b[0] += go;
          for (int t = 0; t < spec.kernel; ++t) {
            lg.w[t] += go * x[o * spec.stride + t];
            gx[o * spec.stride + t] += w[t] * go;
          }
        }
        break;
      }
      case LayerKind::kSoftmax: {
        double dot = 0.0;
        for (int j = 0; j < spec.in_dim; ++j) dot += y[j] * g[j];
        for (int j = 0; j < spec.in_dim; ++j) gx[j] = y[j] * (g[j] - dot);
        break;
      }
    }
    g = std::move(gx);
  }
  if (input_grad != nullptr) *input_grad = std::move(g);
  return grads;
}

SgdOptimizer::SgdOptimizer(const Network& net, double learning_rate, double momentum)
    : lr_(learning_rate), momentum_(momentum) {
  velocity_.resize(net.weights.size());
  for (std::size_t i = 0; i < net.weights.size(); ++i) {
    if (net.weights[i].w.numel() > 0) {
      velocity_[i].w = Tensor(net.weights[i].w.shape);
      velocity_[i].b = Tensor(net.weights[i].b.shape);
    }
  }
}

void SgdOptimizer::step(Network& net, const std::vector<LayerGrads>& grads) {
  if (grads.size() != net.weights.size()) throw std::invalid_argument("sgd: gradient count mismatch");
  for (std::size_t i = 0; i < net.weights.size(); ++i) {
    LayerWeights& lw = net.weights[i];
    if (lw.w.numel() == 0) continue;
    LayerWeights& v = velocity_[i];
    const LayerGrads& lg = grads[i];
    for (int j = 0; j < lw.w.numel(); ++j) {
      v.w[j] = momentum_ * v.w[j] + lg.w[j];
      lw.w[j] -= lr_ * v.w[j];
    }
    for (int j = 0; j < lw.b.numel(); ++j) {
      v.b[j] = momentum_ * v.b[j] + lg.b[j];
      lw.b[j] -= lr_ * v.b[j];
    }
  }
}

std::vector<LayerGrads> zero_grads(const Network& net) {
  std::vector<LayerGrads> grads(net.weights.size());
  for (std::size_t i = 0; i < net.weights.size(); ++i) {
    if (net.weights[i].w.numel() > 0) {
      grads[i].w = Tensor(net.weights[i].w.shape);
      grads[i].b = Tensor(net.weights[i].b.shape);
    }
  }
  return grads;
}

void accumulate_grads(std::vector<LayerGrads>& acc, const std::vector<LayerGrads>& src, double scale) {
  if (acc.size() != src.size()) throw std::invalid_argument("accumulate_grads: size mismatch");
  for (std::size_t i = 0; i < acc.size(); ++i) {
    if (acc[i].w.numel() == 0) continue;
    for (int j = 0; j < acc[i].w.numel(); ++j) acc[i].w[j] += scale * src[i].w[j];
    for (int j = 0; j < acc[i].b.numel(); ++j) acc[i].b[j] += scale * src[i].b[j];
  }
}

long long parameter_count(const Network& net) {
  long long n = 0;
  for (const LayerWeights& lw : net.weights) n += lw.w.numel() + lw.b.numel();
  return n;
}

long long mac_count(const Network& net) {
  long long n = 0;
  for (const LayerSpec& spec : net.layers) {
    if (spec.kind == LayerKind::kFullyConnected) {
      n += static_cast<long long>(spec.in_dim) * spec.out_dim;
    } else if (spec.kind == LayerKind::kConv1d) {
      n += static_cast<long long>(spec.out_dim) * spec.kernel;
    }
  }
  return n;
}

namespace {

constexpr const char* kNetworkMagic = "latecache-network";
constexpr int kNetworkVersion = 1;

void write_tensor(std::ostream& out, const char* tag, const Tensor& t) {
  out << tag << ' ' << t.numel();
  for (double v : t.data) out << ' ' << fmt_double(v);
  out << '\n';
}

Tensor read_tensor(std::istream& in, const char* tag, std::vector<int> shape) {
  std::string word;
  in >> word;
  if (word != tag) throw std::runtime_error("network checkpoint: expected '" + std::string(tag) + "' got '" + word + "'");
  long long n = 0;
  in >> n;
  Tensor t(std::move(shape));
  if (n != t.numel()) throw std::runtime_error("network checkpoint: tensor size mismatch");
  for (double& v : t.data) {
    in >> word;
    v = parse_double(word);
  }
  if (!in) throw std::runtime_error("network checkpoint: truncated tensor data");
  return t;
}

}  // namespace

void save_network(std::ostream& out, const Network& net) {
  out << kNetworkMagic << " v" << kNetworkVersion << '\n';
  out << "layers " << net.layers.size() << '\n';
  for (const LayerSpec& spec : net.layers) {
    switch (spec.kind) {
      case LayerKind::kFullyConnected:
        out << "fc " << spec.in_dim << ' ' << spec.out_dim << '\n';
        break;
      case LayerKind::kRelu:
        out << "relu " << spec.in_dim << '\n';
        break;
      case LayerKind::kAveragePool:
        out << "pool " << spec.in_dim << ' ' << spec.pool_window << '\n';
        break;
      case LayerKind::kConv1d:
        out << "conv1d " << spec.in_dim << ' ' << spec.kernel << ' ' << spec.stride << '\n';
        break;
      case LayerKind::kSoftmax:
        out << "softmax " << spec.in_dim << '\n';
        break;
    }
  }
  for (std::size_t i = 0; i < net.weights.size(); ++i) {
    if (net.weights[i].w.numel() == 0) continue;
    out << "param " << i << '\n';
    write_tensor(out, "w", net.weights[i].w);
    write_tensor(out, "b", net.weights[i].b);
  }
  out << "end\n";
}

Network load_network(std::istream& in) {
  std::string word;
  in >> word;
  if (word != kNetworkMagic) throw std::runtime_error("network checkpoint: bad magic '" + word + "'");
  in >> word;
  if (word != "v1") throw std::runtime_error("network checkpoint: unsupported version '" + word + "'");
  in >> word;
  if (word != "layers") throw std::runtime_error("network checkpoint: expected 'layers'");
  std::size_t count = 0;
  in >> count;
  std::vector<LayerSpec> layers;
  layers.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    in >> word;
    int a = 0, b = 0, c = 0;
    if (word == "fc") {
      in >> a >> b;
      layers.push_back(LayerSpec::fully_connected(a, b));
    } else if (word == "relu") {
      in >> a;
      layers.push_back(LayerSpec::relu(a));
    } else if (word == "pool") {
      in >> a >> b;
      layers.push_back(LayerSpec::average_pool(a, b));
    } else if (word == "conv1d") {
      in >> a >> b >> c;
      layers.push_back(LayerSpec::conv1d(a, b, c));
    } else if (word == "softmax") {
      in >> a;
      layers.push_back(LayerSpec::softmax(a));
    } else {
      throw std::runtime_error("network checkpoint: unknown layer '" + word + "'");
    }
  }
  if (!in) throw std::runtime_error("network checkpoint: truncated layer list");
  Network net = make_network(std::move(layers), /*seed=*/0);
  while (in >> word) {
    if (word == "end") return net;
    if (word != "param") throw std::runtime_error("network checkpoint: expected 'param' got '" + word + "'");
    std::size_t idx = 0;
    in >> idx;
    if (idx >= net.weights.size() || net.weights[idx].w.numel() == 0) {
      throw std::runtime_error("network checkpoint: parameters for a parameterless layer");
    }
    net.weights[idx].w = read_tensor(in, "w", net.weights[idx].w.shape);
    net.weights[idx].b = read_tensor(in, "b", net.weights[idx].b.shape);
  }
  throw std::runtime_error("network checkpoint: missing 'end'");
}

}  // namespace latecache
