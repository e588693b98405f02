// Copyright the latecache authors. Apache 2.0 licensed; see LICENSE in the project root.
#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "latecache/network.hpp"
#include "latecache/rng.hpp"
#include "latecache/tensor.hpp"

// Shared oracles for the test suites: numerical differentiation and random
// network generation. These are intentionally independent from the library's
// analytic gradients so they can act as ground truth.

namespace latecache::testutil {

// |a - b| <= tol * max(1, |a|, |b|)  (relative error with an absolute floor).
inline bool close_rel(double a, double b, double tol) {
  const double scale = std::max({1.0, std::fabs(a), std::fabs(b)});
  return std::fabs(a - b) <= tol * scale;
}

// Central finite difference d f / d x through a mutable cell.
inline double finite_diff(const std::function<double()>& f, double& cell, double h = 1e-4) {
  const double saved = cell;
  cell = saved + h;
  const double up = f();
  cell = saved - h;
  const double down = f();
  cell = saved;
  return (up - down) / (2.0 * h);
}

// Random layer stack with consistent dimensions; exercises every layer kind.
inline Network random_network(Rng& rng, int depth, bool end_with_softmax) {
  std::vector<LayerSpec> layers;
  int dim = 2 + rng.next_int(7);
  for (int i = 0; i < depth; ++i) {
    switch (rng.next_int(4)) {
      case 0: {
        const int out = 2 + rng.next_int(7);
        layers.push_back(LayerSpec::fully_connected(dim, out));
        dim = out;
        break;
      }
      case 1:
        layers.push_back(LayerSpec::relu(dim));
        break;
      case 2: {
        std::vector<int> divisors;
        for (int w = 1; w <= dim; ++w) {
          if (dim % w == 0) divisors.push_back(w);
        }
        const int window = divisors[static_cast<std::size_t>(rng.next_int(static_cast<int>(divisors.size())))];
        layers.push_back(LayerSpec::average_pool(dim, window));
        dim /= window;
        break;
      }
      default: {
        const int kernel = 1 + rng.next_int(std::min(3, dim));
        const int stride = 1 + rng.next_int(2);
        layers.push_back(LayerSpec::conv1d(dim, kernel, stride));
        dim = (dim - kernel) / stride + 1;
        break;
      }
    }
  }
  if (end_with_softmax) layers.push_back(LayerSpec::softmax(dim));
  return make_network(std::move(layers), rng.next_u64());
}

inline Tensor random_vec(Rng& rng, int n, double lo = -1.5, double hi = 1.5) {
  Tensor t({n});
  for (double& v : t.data) v = rng.uniform(lo, hi);
  return t;
}

}  // namespace latecache::testutil
