// Copyright the latecache authors. Apache 2.0 licensed; see LICENSE in the project root.
#pragma once

#include <cstdint>
#include <iosfwd>
#include <vector>

#include "latecache/tensor.hpp"

// Minimal feed-forward networks with manual analytic gradients. All math is
// dense double precision over 1-d activations; batching is a loop over
// samples, which is plenty at desk scale.

namespace latecache {

enum class LayerKind { kFullyConnected, kRelu, kAveragePool, kConv1d, kSoftmax };

struct LayerSpec {
  LayerKind kind = LayerKind::kRelu;
  int in_dim = 0;
  int out_dim = 0;
  int pool_window = 0;  // average-pool only
  int kernel = 0;       // conv1d only
  int stride = 0;       // conv1d only

  static LayerSpec fully_connected(int in, int out);
  static LayerSpec relu(int dim);
  static LayerSpec average_pool(int in, int window);  // window must divide in
  static LayerSpec conv1d(int in, int kernel, int stride);
  static LayerSpec softmax(int dim);
};

// Parameters of one layer; empty tensors for layers without parameters.
// Fully-connected: w is [out, in], b is [out]. Conv1d: w is [kernel], b is [1].
struct LayerWeights {
  Tensor w;
  Tensor b;
};

using LayerGrads = LayerWeights;

struct Network {
  std::vector<LayerSpec> layers;
  std::vector<LayerWeights> weights;

  int input_dim() const { return layers.front().in_dim; }
  int output_dim() const { return layers.back().out_dim; }
};

// Validates that the layer dimensions chain and initializes weights uniformly
// in +/- sqrt(6 / (fan_in + fan_out)); biases start at zero. Fan counts:
// fully-connected uses (in, out), conv1d uses (kernel, 1).
Network make_network(std::vector<LayerSpec> layers, std::uint64_t seed);

// Activations recorded by a forward pass: [0] is the input, [i + 1] is the
// output of layer i. backward() requires one of these.
struct ForwardTrace {
  std::vector<Tensor> activations;
  const Tensor& output() const { return activations.back(); }
};

ForwardTrace forward(const Network& net, const Tensor& input);

// Analytic gradients of a scalar loss whose gradient w.r.t. the network
// output is `output_grad`. Returns one LayerGrads per layer (empty tensors
// for parameterless layers); optionally also the gradient w.r.t. the input.
std::vector<LayerGrads> backward(const Network& net, const ForwardTrace& trace, const Tensor& output_grad,
                                 Tensor* input_grad = nullptr);

struct TrainConfig {
  double learning_rate = 0.01;
  double momentum = 0.9;
  int epochs = 20;
  int batch_size = 16;
  std::uint64_t seed = 1;
};

// Plain SGD with momentum: v <- momentum * v + g; w <- w - lr * v.
class SgdOptimizer {
 public:
  SgdOptimizer(const Network& net, double learning_rate, double momentum);
  void step(Network& net, const std::vector<LayerGrads>& grads);

 private:
  double lr_;
  double momentum_;
  std::vector<LayerWeights> velocity_;
};

// Adds `scale` times every gradient in `src` into `acc` (minibatch accumulation).
void accumulate_grads(std::vector<LayerGrads>& acc, const std::vector<LayerGrads>& src, double scale);
std::vector<LayerGrads> zero_grads(const Network& net);

long long parameter_count(const Network& net);
// Multiply-accumulate count of one forward pass. Fully-connected: in * out;
// conv1d: out * kernel; pooling and activations contribute none.
long long mac_count(const Network& net);

// Versioned text checkpoint; doubles are written in shortest round-trip form
// so save/load is bit-exact.
void save_network(std::ostream& out, const Network& net);
Network load_network(std::istream& in);

}  // namespace latecache
