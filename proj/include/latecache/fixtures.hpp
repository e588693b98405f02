// Copyright the latecache authors. Apache 2.0 licensed; see LICENSE in the project root.
#pragma once

#include <vector>

#include "latecache/base_model.hpp"
#include "latecache/cache.hpp"
#include "latecache/planner.hpp"

// Bundled reference measurements: a depth-8 image classifier served at
// 4 ms per block, with published hit rates, accuracies, lookup costs, and
// memory sizes for six variants at two taps. Used by composer tests and the
// CLI's fixture mode so plan selection can be exercised without training.
// Confusion counts are not part of the published numbers and stay zero.

namespace latecache {

// Eight blocks, 4 ms each (32 ms end to end).
LayerProfile fixture_profile();

// All six published rows: FC(1024), Pool(8192), Conv(3,1) at layers 3 and 6.
std::vector<VariantMetrics> fixture_metrics();

// The three-variant walkthrough instance: the FC(1024) row at layer 3
// carries its finer-grained published hit rate (38.75%), and only the
// variants discussed in the walkthrough are present.
std::vector<VariantMetrics> fixture_example_metrics();

// The traffic-analysis planning DAG with published model options: object
// detection forks into face or vehicle recognition depending on what was
// detected; both branches are equally likely by default.
QueryDag fixture_traffic_dag();

}  // namespace latecache
