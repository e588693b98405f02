// Copyright the latecache authors. Apache 2.0 licensed; see LICENSE in the project root.
#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "latecache/tensor.hpp"

// Synthetic classification data: one Gaussian cluster per class, centers
// placed at a configurable separation, split train/validation/test. The
// validation split is what the cache layer trains and measures on.

namespace latecache {

struct DatasetSpec {
  int num_classes = 10;
  int input_dim = 32;
  int samples_per_class = 200;
  double separation = 3.0;    // distance of every class center from the origin
  double noise_stddev = 1.0;  // per-coordinate Gaussian noise
  double train_fraction = 0.6;
  double val_fraction = 0.2;  // remainder after train + val goes to test
  std::uint64_t seed = 1;
};

struct Sample {
  Tensor x;
  int label = 0;
};

struct Dataset {
  int num_classes = 0;
  int input_dim = 0;
  std::vector<Sample> train;
  std::vector<Sample> val;
  std::vector<Sample> test;
};

// Deterministic in the spec seed; identical specs produce bit-identical data.
Dataset gen_dataset(const DatasetSpec& spec);

// Delimited text, one record per sample: "<split> <label> <x0> <x1> ...".
// Lines starting with '#' are comments (the CLI embeds provenance there).
void save_dataset(std::ostream& out, const Dataset& data, const std::vector<std::string>& header_comments = {});
Dataset load_dataset(std::istream& in);

// Indices of `samples` grouped by label (used to draw per-class request pools).
std::vector<std::vector<int>> indices_by_class(const std::vector<Sample>& samples, int num_classes);

}  // namespace latecache
