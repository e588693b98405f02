// Copyright the latecache authors. Apache 2.0 licensed; see LICENSE in the project root.
#include "latecache/dataset.hpp"

#include <cmath>
#include <istream>
#include <ostream>
#include <sstream>
#include <stdexcept>

#include "latecache/rng.hpp"
#include "latecache/textio.hpp"

namespace latecache {

namespace {

void validate(const DatasetSpec& spec) {
  if (spec.num_classes < 2) throw std::invalid_argument("dataset: need at least two classes");
  if (spec.input_dim <= 0) throw std::invalid_argument("dataset: input dim must be positive");
  if (spec.samples_per_class <= 0) throw std::invalid_argument("dataset: samples per class must be positive");
  if (spec.separation <= 0.0) throw std::invalid_argument("dataset: separation must be positive");
  if (spec.noise_stddev < 0.0) throw std::invalid_argument("dataset: noise must be nonnegative");
  if (spec.train_fraction <= 0.0 || spec.val_fraction <= 0.0 ||
      spec.train_fraction + spec.val_fraction >= 1.0) {
    throw std::invalid_argument("dataset: split fractions must be positive and leave room for a test split");
  }
}

}  // namespace

Dataset gen_dataset(const DatasetSpec& spec) {
  validate(spec);
  Rng rng(mix_seed(spec.seed, 0xda7a));

  // Class centers: random directions scaled to exactly `separation`.
  std::vector<Tensor> centers;
  centers.reserve(static_cast<std::size_t>(spec.num_classes));
  for (int c = 0; c < spec.num_classes; ++c) {
    Tensor center({spec.input_dim});
    double norm = 0.0;
    do {
      norm = 0.0;
      for (double& v : center.data) {
        v = rng.normal();
        norm += v * v;
      }
      norm = std::sqrt(norm);
    } while (norm == 0.0);
    for (double& v : center.data) v *= spec.separation / norm;
    centers.push_back(std::move(center));
  }

  Dataset out;
  out.num_classes = spec.num_classes;
  out.input_dim = spec.input_dim;
  const int n = spec.samples_per_class;
  const int n_train = static_cast<int>(std::lround(spec.train_fraction * n));
  const int n_val = static_cast<int>(std::lround(spec.val_fraction * n));
  const int n_test = n - n_train - n_val;
  if (n_train <= 0 || n_val <= 0 || n_test <= 0) {
    throw std::invalid_argument("dataset: too few samples per class for the requested split");
  }
  for (int c = 0; c < spec.num_classes; ++c) {
    for (int i = 0; i < n; ++i) {
      Sample s;
      s.label = c;
      s.x = centers[static_cast<std::size_t>(c)];
      for (double& v : s.x.data) v += spec.noise_stddev * rng.normal();
      if (i < n_train) {
        out.train.push_back(std::move(s));
      } else if (i < n_train + n_val) {
        out.val.push_back(std::move(s));
      } else {
        out.test.push_back(std::move(s));
      }
    }
  }
  rng.shuffle(out.train);
  rng.shuffle(out.val);
  rng.shuffle(out.test);
  return out;
}

void save_dataset(std::ostream& out, const Dataset& data, const std::vector<std::string>& header_comments) {
  out << "latecache-dataset v1\n";
  for (const std::string& line : header_comments) out << "# " << line << '\n';
  out << "classes " << data.num_classes << " dim " << data.input_dim << '\n';
  const auto dump = [&](const char* split, const std::vector<Sample>& samples) {
    for (const Sample& s : samples) {
      out << split << ' ' << s.label;
      for (double v : s.x.data) out << ' ' << fmt_double(v);
      out << '\n';
    }
  };
  dump("train", data.train);
  dump("val", data.val);
  dump("test", data.test);
}

Dataset load_dataset(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line != "latecache-dataset v1") {
    throw std::runtime_error("dataset file: bad or missing header");
  }
  Dataset data;
  bool saw_meta = false;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    std::string tag;
    ls >> tag;
    if (tag == "classes") {
      std::string dim_word;
      ls >> data.num_classes >> dim_word >> data.input_dim;
      if (dim_word != "dim" || data.num_classes <= 0 || data.input_dim <= 0) {
        throw std::runtime_error("dataset file: malformed 'classes' line");
      }
      saw_meta = true;
      continue;
    }
    if (!saw_meta) throw std::runtime_error("dataset file: samples before the 'classes' line");
    Sample s;
    std::string word;
    ls >> word;
    s.label = static_cast<int>(parse_int(word));
    if (s.label < 0 || s.label >= data.num_classes) throw std::runtime_error("dataset file: label out of range");
    std::vector<double> values;
    values.reserve(static_cast<std::size_t>(data.input_dim));
    while (ls >> word) values.push_back(parse_double(word));
    if (static_cast<int>(values.size()) != data.input_dim) {
      throw std::runtime_error("dataset file: sample dimension mismatch");
    }
    s.x = Tensor::vec(std::move(values));
    if (tag == "train") {
      data.train.push_back(std::move(s));
    } else if (tag == "val") {
      data.val.push_back(std::move(s));
    } else if (tag == "test") {
      data.test.push_back(std::move(s));
    } else {
      throw std::runtime_error("dataset file: unknown split '" + tag + "'");
    }
  }
  return data;
}

std::vector<std::vector<int>> indices_by_class(const std::vector<Sample>& samples, int num_classes) {
  std::vector<std::vector<int>> out(static_cast<std::size_t>(num_classes));
  for (std::size_t i = 0; i < samples.size(); ++i) {
    out[static_cast<std::size_t>(samples[i].label)].push_back(static_cast<int>(i));
  }
  return out;
}

}  // namespace latecache
