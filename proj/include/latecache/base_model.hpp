// Copyright the latecache authors. Apache 2.0 licensed; see LICENSE in the project root.
#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "latecache/dataset.hpp"
#include "latecache/network.hpp"

// The model being served: a stack of fully-connected + ReLU blocks with a
// softmax head. The hidden output after each block is a "tap" that the
// per-layer caches read, mirroring the per-layer structure of a deep model.

namespace latecache {

// Per-block serving latencies L_i of the deployment being modeled (these are
// declared, not measured, so experiments are reproducible on any machine).
struct LayerProfile {
  std::vector<double> latency_ms;

  int blocks() const { return static_cast<int>(latency_ms.size()); }
  // Sum of L_1..L_k (1-based, k = 0 gives 0).
  double prefix(int k) const;
  double total() const { return prefix(blocks()); }

  static LayerProfile uniform(int blocks, double per_block_ms);
};

struct BaseModel {
  Network net;
  int num_blocks = 0;
  int num_classes = 0;
  std::vector<int> tap_layer;  // index of the layer whose output is tap i (0-based block)
  std::vector<int> tap_dims;

  int input_dim() const { return net.input_dim(); }
};

// Block widths: one entry per block, or a single entry replicated. The head
// (dense to num_classes + softmax) sits after the last block.
BaseModel make_base_model(int input_dim, int num_classes, std::vector<int> widths, int blocks, std::uint64_t seed);

// Hidden output of every block plus the final class distribution.
struct TapForward {
  std::vector<Tensor> taps;
  Tensor y;
};

TapForward forward_with_taps(const BaseModel& model, const Tensor& x);

// Recomputes the class distribution from the last tap through the head only;
// bit-identical to the full forward pass by construction.
Tensor head_forward(const BaseModel& model, const Tensor& last_tap);

struct TrainLog {
  std::vector<double> epoch_loss;  // mean cross entropy per epoch
  double test_accuracy = 0.0;
};

// Minibatch SGD with cross entropy; throws on divergence (non-finite loss).
TrainLog train_base(BaseModel& model, const Dataset& data, const TrainConfig& cfg);

double evaluate_accuracy(const BaseModel& model, const std::vector<Sample>& samples);

// Versioned text checkpoints with bit-exact round trips. Lines starting
// with '#' after the magic are comments (provenance, config hash).
void save_base_model(std::ostream& out, const BaseModel& model,
                     const std::vector<std::string>& header_comments = {});
BaseModel load_base_model(std::istream& in);

void save_profile(std::ostream& out, const LayerProfile& profile,
                  const std::vector<std::string>& header_comments = {});
LayerProfile load_profile(std::istream& in);

}  // namespace latecache
