// Copyright the latecache authors. Apache 2.0 licensed; see LICENSE in the project root.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <sstream>

#include "latecache/base_model.hpp"
#include "latecache/dataset.hpp"
#include "latecache/losses.hpp"
#include "test_util.hpp"

using namespace latecache;

namespace {

DatasetSpec small_spec() {
  DatasetSpec spec;
  spec.num_classes = 10;
  spec.input_dim = 16;
  spec.samples_per_class = 100;
  spec.separation = 3.0;
  spec.noise_stddev = 0.5;
  spec.seed = 7;
  return spec;
}

}  // namespace

TEST_CASE("dataset splits are balanced per class: 10 x 100 -> 600/200/200") {
  const Dataset data = gen_dataset(small_spec());
  CHECK(data.train.size() == 600);
  CHECK(data.val.size() == 200);
  CHECK(data.test.size() == 200);
  const auto train_by_class = indices_by_class(data.train, data.num_classes);
  const auto val_by_class = indices_by_class(data.val, data.num_classes);
  const auto test_by_class = indices_by_class(data.test, data.num_classes);
  for (int c = 0; c < 10; ++c) {
    CHECK(train_by_class[c].size() == 60);
    CHECK(val_by_class[c].size() == 20);
    CHECK(test_by_class[c].size() == 20);
  }
}

TEST_CASE("dataset generation is deterministic in the seed") {
  const Dataset a = gen_dataset(small_spec());
  const Dataset b = gen_dataset(small_spec());
  DatasetSpec other = small_spec();
  other.seed = 8;
  const Dataset c = gen_dataset(other);
  REQUIRE(a.train.size() == b.train.size());
  for (std::size_t i = 0; i < a.train.size(); ++i) {
    CHECK(a.train[i].label == b.train[i].label);
    for (int j = 0; j < a.train[i].x.numel(); ++j) CHECK(a.train[i].x[j] == b.train[i].x[j]);
  }
  bool differs = false;
  for (std::size_t i = 0; i < a.train.size() && !differs; ++i) {
    for (int j = 0; j < a.train[i].x.numel(); ++j) differs = differs || a.train[i].x[j] != c.train[i].x[j];
  }
  CHECK(differs);
}

TEST_CASE("zero noise collapses every class onto its center at the requested separation") {
  DatasetSpec spec = small_spec();
  spec.noise_stddev = 0.0;
  const Dataset data = gen_dataset(spec);
  const auto by_class = indices_by_class(data.train, data.num_classes);
  for (int c = 0; c < data.num_classes; ++c) {
    const Tensor& first = data.train[static_cast<std::size_t>(by_class[c][0])].x;
    double norm = 0.0;
    for (int j = 0; j < first.numel(); ++j) norm += first[j] * first[j];
    CHECK(std::fabs(std::sqrt(norm) - spec.separation) <= 1e-9);
    for (int idx : by_class[c]) {
      const Tensor& x = data.train[static_cast<std::size_t>(idx)].x;
      for (int j = 0; j < x.numel(); ++j) CHECK(x[j] == first[j]);
    }
  }
}

TEST_CASE("dataset spec validation") {
  DatasetSpec spec = small_spec();
  spec.num_classes = 1;
  CHECK_THROWS_AS(gen_dataset(spec), std::invalid_argument);
  spec = small_spec();
  spec.train_fraction = 0.9;
  spec.val_fraction = 0.2;
  CHECK_THROWS_AS(gen_dataset(spec), std::invalid_argument);
  spec = small_spec();
  spec.noise_stddev = -0.1;
  CHECK_THROWS_AS(gen_dataset(spec), std::invalid_argument);
  spec = small_spec();
  spec.separation = 0.0;
  CHECK_THROWS_AS(gen_dataset(spec), std::invalid_argument);
}

TEST_CASE("dataset file round-trip is bit-exact") {
  DatasetSpec spec = small_spec();
  spec.samples_per_class = 20;
  const Dataset data = gen_dataset(spec);
  std::stringstream ss;
  save_dataset(ss, data, {"config=deadbeef version=0.1.0"});
  const Dataset back = load_dataset(ss);
  CHECK(back.num_classes == data.num_classes);
  CHECK(back.input_dim == data.input_dim);
  REQUIRE(back.train.size() == data.train.size());
  REQUIRE(back.val.size() == data.val.size());
  REQUIRE(back.test.size() == data.test.size());
  for (std::size_t i = 0; i < data.train.size(); ++i) {
    CHECK(back.train[i].label == data.train[i].label);
    for (int j = 0; j < data.train[i].x.numel(); ++j) CHECK(back.train[i].x[j] == data.train[i].x[j]);
  }
}

TEST_CASE("dataset loader rejects malformed files") {
  std::stringstream bad1("wrong header\n");
  CHECK_THROWS(load_dataset(bad1));
  std::stringstream bad2("latecache-dataset v1\nclasses 3 dim 2\ntrain 5 0.0 0.0\n");
  CHECK_THROWS(load_dataset(bad2));  // label out of range
  std::stringstream bad3("latecache-dataset v1\nclasses 3 dim 4\ntrain 1 0.0 0.0\n");
  CHECK_THROWS(load_dataset(bad3));  // dimension mismatch
}

TEST_CASE("layer profile prefixes") {
  const LayerProfile p = LayerProfile::uniform(8, 4.0);
  CHECK(p.total() == doctest::Approx(32.0).epsilon(1e-12));
  CHECK(p.prefix(3) == doctest::Approx(12.0).epsilon(1e-12));
  CHECK(p.prefix(0) == 0.0);
  CHECK_THROWS_AS(p.prefix(9), std::invalid_argument);
}

TEST_CASE("base model records one tap per block with the right dimensions") {
  const BaseModel model = make_base_model(16, 10, {32}, 4, 3);
  CHECK(model.num_blocks == 4);
  REQUIRE(model.tap_dims.size() == 4);
  for (int d : model.tap_dims) CHECK(d == 32);
  // Tapered widths.
  const BaseModel tapered = make_base_model(16, 10, {48, 32, 16}, 3, 3);
  CHECK(tapered.tap_dims[0] == 48);
  CHECK(tapered.tap_dims[2] == 16);
  CHECK_THROWS_AS(make_base_model(16, 10, {48, 32}, 3, 3), std::invalid_argument);
}

TEST_CASE("taps are the post-activation block outputs; the head on the last tap reproduces Y bit-identically") {
  Rng rng(5);
  const BaseModel model = make_base_model(8, 5, {12}, 3, 11);
  for (int c = 0; c < 20; ++c) {
    const Tensor x = testutil::random_vec(rng, 8);
    const TapForward tf = forward_with_taps(model, x);
    REQUIRE(tf.taps.size() == 3);
    for (const Tensor& tap : tf.taps) {
      for (int j = 0; j < tap.numel(); ++j) CHECK(tap[j] >= 0.0);  // post-ReLU
    }
    const Tensor head = head_forward(model, tf.taps.back());
    REQUIRE(head.numel() == tf.y.numel());
    for (int j = 0; j < head.numel(); ++j) CHECK(head[j] == tf.y[j]);
  }
}

TEST_CASE("base training reaches 100% on a noise-free task and its loss trends down") {
  DatasetSpec spec = small_spec();
  spec.noise_stddev = 0.0;
  spec.samples_per_class = 20;
  const Dataset data = gen_dataset(spec);
  BaseModel model = make_base_model(spec.input_dim, spec.num_classes, {32}, 4, 1);
  TrainConfig cfg;
  cfg.learning_rate = 0.05;
  cfg.momentum = 0.9;
  cfg.epochs = 30;
  cfg.batch_size = 16;
  cfg.seed = 1;
  const TrainLog log = train_base(model, data, cfg);
  CHECK(log.test_accuracy == doctest::Approx(1.0));
  // Loss is non-increasing on average: compare consecutive 5-epoch window means.
  REQUIRE(log.epoch_loss.size() == 30);
  for (std::size_t w = 0; w + 10 <= log.epoch_loss.size(); w += 5) {
    double a = 0.0, b = 0.0;
    for (int i = 0; i < 5; ++i) {
      a += log.epoch_loss[w + static_cast<std::size_t>(i)];
      b += log.epoch_loss[w + 5 + static_cast<std::size_t>(i)];
    }
    CHECK(b <= a * (1.0 + 1e-9));
  }
}

TEST_CASE("base training handles a noisy task with reasonable accuracy") {
  DatasetSpec spec = small_spec();  // noise 0.5, separation 3.0
  const Dataset data = gen_dataset(spec);
  BaseModel model = make_base_model(spec.input_dim, spec.num_classes, {32}, 4, 1);
  TrainConfig cfg;
  cfg.learning_rate = 0.05;
  cfg.epochs = 25;
  cfg.seed = 2;
  const TrainLog log = train_base(model, data, cfg);
  CHECK(log.test_accuracy >= 0.9);
}

TEST_CASE("evaluate_accuracy counts argmax agreement with labels") {
  BaseModel model = make_base_model(2, 2, {2}, 1, 1);
  // Make block an identity-ish passthrough and the head prefer coordinate order.
  model.net.weights[0].w = Tensor({2, 2}, {1.0, 0.0, 0.0, 1.0});  // block dense
  model.net.weights[0].b = Tensor::vec({0.0, 0.0});
  model.net.weights[2].w = Tensor({2, 2}, {1.0, 0.0, 0.0, 1.0});  // head dense (index 1 is the ReLU)
  model.net.weights[2].b = Tensor::vec({0.0, 0.0});
  std::vector<Sample> samples;
  samples.push_back({Tensor::vec({2.0, 0.0}), 0});  // predicted 0, correct
  samples.push_back({Tensor::vec({0.0, 2.0}), 1});  // predicted 1, correct
  samples.push_back({Tensor::vec({2.0, 0.0}), 1});  // predicted 0, wrong
  CHECK(evaluate_accuracy(model, samples) == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
}

TEST_CASE("model checkpoints round trip bit-exactly, comments and all") {
  BaseModel model = make_base_model(6, 3, {8}, 4, 21);
  std::stringstream file;
  save_base_model(file, model, {"tool_version 0.1.0", "config_hash deadbeef"});
  const std::string text = file.str();
  CHECK(text.find("# tool_version 0.1.0\n") != std::string::npos);

  const BaseModel back = load_base_model(file);
  CHECK(back.num_blocks == model.num_blocks);
  CHECK(back.num_classes == model.num_classes);
  CHECK(back.tap_layer == model.tap_layer);
  CHECK(back.tap_dims == model.tap_dims);
  REQUIRE(back.net.weights.size() == model.net.weights.size());
  for (std::size_t i = 0; i < model.net.weights.size(); ++i) {
    CHECK(back.net.weights[i].w.data == model.net.weights[i].w.data);
    CHECK(back.net.weights[i].b.data == model.net.weights[i].b.data);
  }
  // The round-tripped model computes bit-identical outputs.
  const Tensor x = Tensor::vec({0.3, -1.2, 0.8, 0.05, -0.4, 2.0});
  const TapForward a = forward_with_taps(model, x);
  const TapForward b = forward_with_taps(back, x);
  for (int i = 0; i < a.y.numel(); ++i) CHECK(a.y[i] == b.y[i]);

  std::stringstream bad("latecache-model v2\n");
  CHECK_THROWS_AS(load_base_model(bad), std::runtime_error);
  std::stringstream trunc("latecache-model v1\nblocks 4 classes 3\ntap_layers 1 3\n");
  CHECK_THROWS_AS(load_base_model(trunc), std::runtime_error);
}

TEST_CASE("layer profiles round trip bit-exactly") {
  LayerProfile profile;
  profile.latency_ms = {4.0, 1.0 / 3.0, 0.1 + 0.2, 2.94e-7};
  std::stringstream file;
  save_profile(file, profile, {"config_hash cafe"});
  const LayerProfile back = load_profile(file);
  REQUIRE(back.blocks() == profile.blocks());
  for (std::size_t i = 0; i < profile.latency_ms.size(); ++i) {
    CHECK(back.latency_ms[i] == profile.latency_ms[i]);
  }
  std::stringstream bad("latecache-profile v1\nblocks 0\n");
  CHECK_THROWS_AS(load_profile(bad), std::runtime_error);
  std::stringstream trunc("latecache-profile v1\nblocks 3\nlatency_ms 1 2\n");
  CHECK_THROWS_AS(load_profile(trunc), std::runtime_error);
}
