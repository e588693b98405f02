// Copyright the latecache authors. Apache 2.0 licensed; see LICENSE in the project root.
#pragma once

#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace latecache {

// Dense row-major tensor of doubles. Everything at desk scale is 64-bit and
// small enough that a flat vector plus a shape is all we need.
struct Tensor {
  std::vector<int> shape;
  std::vector<double> data;

  Tensor() = default;

  explicit Tensor(std::vector<int> s) : shape(std::move(s)) {
    data.assign(static_cast<std::size_t>(checked_numel(shape)), 0.0);
  }

  Tensor(std::vector<int> s, std::vector<double> d) : shape(std::move(s)), data(std::move(d)) {
    if (checked_numel(shape) != static_cast<long long>(data.size())) {
      throw std::invalid_argument("tensor: shape does not match data size");
    }
  }

  static Tensor vec(std::vector<double> d) {
    const int n = static_cast<int>(d.size());
    return Tensor({n}, std::move(d));
  }

  int numel() const { return static_cast<int>(data.size()); }

  double& operator[](int i) { return data[static_cast<std::size_t>(i)]; }
  double operator[](int i) const { return data[static_cast<std::size_t>(i)]; }

  // 2-d accessor (row-major).
  double& at(int r, int c) { return data[static_cast<std::size_t>(r * shape[1] + c)]; }
  double at(int r, int c) const { return data[static_cast<std::size_t>(r * shape[1] + c)]; }

 private:
  static long long checked_numel(const std::vector<int>& shape) {
    if (shape.empty()) throw std::invalid_argument("tensor: empty shape");
    long long n = 1;
    for (int d : shape) {
      if (d <= 0) throw std::invalid_argument("tensor: dimensions must be positive, got " + std::to_string(d));
      n *= d;
    }
    return n;
  }
};

// Index of the largest element; ties resolve to the smallest index so the
// result is deterministic.
inline int argmax(const Tensor& t) {
  int best = 0;
  for (int i = 1; i < t.numel(); ++i) {
    if (t[i] > t[best]) best = i;
  }
  return best;
}

}  // namespace latecache
