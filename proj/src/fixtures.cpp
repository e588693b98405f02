// Copyright the latecache authors. Apache 2.0 licensed; see LICENSE in the project root.
#include "latecache/fixtures.hpp"

namespace latecache {

namespace {

VariantMetrics row(int layer, int variant, ArchSpec arch, double hit, double acc, double lookup_ms,
                   double memory_mb) {
  VariantMetrics m;
  m.layer = layer;
  m.variant = variant;
  m.arch = arch;
  m.hit_rate = hit;
  m.accuracy = acc;
  m.lookup_ms = lookup_ms;
  m.memory_mb = memory_mb;
  return m;
}

}  // namespace

LayerProfile fixture_profile() { return LayerProfile::uniform(8, 4.0); }

std::vector<VariantMetrics> fixture_metrics() {
  // Variant ids are the default-menu slots: 0 = FC(1024), 2 = Pool(8192),
  // 4 = Conv(3,1).
  return {
      row(3, 0, ArchSpec::fc(1024), 0.388, 0.973, 6.08, 268.0),
      row(3, 2, ArchSpec::pool(8192), 0.341, 0.967, 1.32, 33.0),
      row(3, 4, ArchSpec::conv(3, 1), 0.204, 0.962, 1.66, 2.0),
      row(6, 0, ArchSpec::fc(1024), 0.629, 0.995, 2.94, 134.0),
      row(6, 2, ArchSpec::pool(8192), 0.544, 0.962, 0.64, 33.0),
      row(6, 4, ArchSpec::conv(3, 1), 0.494, 0.993, 0.68, 0.8),
  };
}

std::vector<VariantMetrics> fixture_example_metrics() {
  return {
      row(3, 0, ArchSpec::fc(1024), 0.3875, 0.973, 6.08, 268.0),
      row(3, 2, ArchSpec::pool(8192), 0.341, 0.967, 1.32, 33.0),
      row(6, 0, ArchSpec::fc(1024), 0.629, 0.995, 2.94, 134.0),
  };
}

QueryDag fixture_traffic_dag() {
  QueryDag dag;
  dag.root = "objdet";
  dag.nodes = {
      {"objdet",
       {{"ResNet-18", 27.36, 0.911}, {"ResNet-34", 41.05, 0.929}, {"ResNet-50", 54.5, 0.941}},
       {{"face", "person", 0.5}, {"vehicle", "car", 0.5}}},
      {"face",
       {{"SE-LResNet9E-IR", 17.38, 0.955},
        {"SE-LResNet18E-IR", 36.75, 0.976},
        {"SE-LResNet50E-IR", 58.34, 0.981},
        {"SE-LResNet101E-IR", 110.32, 0.991}},
       {}},
      {"vehicle",
       {{"ResNet-9", 16.14, 0.902},
        {"ResNet-18", 23.68, 0.918},
        {"ResNet-50", 54.12, 0.926},
        {"ResNet-101", 111.42, 0.934}},
       {}},
  };
  return dag;
}

}  // namespace latecache
