// Copyright the latecache authors. Apache 2.0 licensed; see LICENSE in the project root.
#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>
#include <vector>

#include "latecache/tensor.hpp"

// Brute-force k-nearest-neighbor cache over (hidden output, label) entries.
// The contrast with the learned variants is structural: this store grows
// linearly with the number of entries, while a trained variant's memory is
// fixed by its architecture no matter how much data it saw.

namespace latecache {

struct KnnResult {
  int label = 0;         // majority vote among the k nearest
  double distance = 0.0; // Euclidean distance to the single nearest neighbor
};

class KnnCache {
 public:
  explicit KnnCache(int dim, double bytes_per_value = 4.0) : dim_(dim), bytes_per_value_(bytes_per_value) {
    if (dim <= 0) throw std::invalid_argument("knn: dimension must be positive");
  }

  void insert(const Tensor& point, int label) {
    if (point.numel() != dim_) throw std::invalid_argument("knn: point dimension mismatch");
    points_.push_back(point);
    labels_.push_back(label);
  }

  std::size_t size() const { return points_.size(); }

  double memory_mb() const {
    return bytes_per_value_ * static_cast<double>(points_.size()) * static_cast<double>(dim_) / (1024.0 * 1024.0);
  }

  KnnResult lookup(const Tensor& query, int k) const {
    if (points_.empty()) throw std::invalid_argument("knn: lookup on empty store");
    if (query.numel() != dim_) throw std::invalid_argument("knn: query dimension mismatch");
    if (k < 1 || static_cast<std::size_t>(k) > points_.size()) {
      throw std::invalid_argument("knn: k must be in [1, store size]");
    }
    std::vector<std::pair<double, std::size_t>> dist(points_.size());
    for (std::size_t i = 0; i < points_.size(); ++i) dist[i] = {distance_to(query, i), i};
    // Stable order on ties (by insertion index) keeps votes deterministic.
    std::partial_sort(dist.begin(), dist.begin() + k, dist.end());
    std::map<int, int> votes;
    for (int i = 0; i < k; ++i) ++votes[labels_[dist[static_cast<std::size_t>(i)].second]];
    KnnResult res;
    res.distance = std::sqrt(dist.front().first);
    int best = -1;
    for (const auto& [label, count] : votes) {
      if (count > best) {  // map iterates labels ascending: ties go to the smallest label
        best = count;
        res.label = label;
      }
    }
    return res;
  }

 private:
  double distance_to(const Tensor& query, std::size_t i) const {
    double sum = 0.0;
    for (int d = 0; d < dim_; ++d) {
      const double diff = query[d] - points_[i][d];
      sum += diff * diff;
    }
    return sum;  // squared; compared monotonically, rooted once for the result
  }

  int dim_;
  double bytes_per_value_;
  std::vector<Tensor> points_;
  std::vector<int> labels_;
};

}  // namespace latecache
