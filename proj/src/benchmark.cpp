#include "sfda/benchmark.hpp"

#include <algorithm>
#include <memory>
#include <utility>
#include <vector>

namespace sfda {

MockTeacher make_prototype_teacher(const FeatureDataset& data, int embed_dim, double temperature,
                                   double omega, std::uint64_t seed) {
  const Eigen::Index dim = data.x.cols();
  Rng rng(seed);
  Mat projection(embed_dim, dim);
  for (Eigen::Index i = 0; i < projection.rows(); ++i) {
    for (Eigen::Index j = 0; j < projection.cols(); ++j) projection(i, j) = rng.normal();
  }

  Mat means = Mat::Zero(data.num_classes, dim);
  std::vector<int> counts(static_cast<std::size_t>(data.num_classes), 0);
  for (int i = 0; i < data.size(); ++i) {
    means.row(data.labels[static_cast<std::size_t>(i)]) += data.x.row(i);
    ++counts[static_cast<std::size_t>(data.labels[static_cast<std::size_t>(i)])];
  }
  for (int c = 0; c < data.num_classes; ++c) {
    means.row(c) /= std::max(1.0, static_cast<double>(counts[static_cast<std::size_t>(c)]));
  }
  Mat embeddings = (projection * means.transpose()).transpose();
  for (Eigen::Index c = 0; c < embeddings.rows(); ++c) {
    // A class absent from the data has a zero prototype; give it an arbitrary
    // fixed direction instead of a NaN row.
    if (embeddings.row(c).norm() == 0.0) {
      for (Eigen::Index j = 0; j < embeddings.cols(); ++j) embeddings(c, j) = rng.normal();
    }
    embeddings.row(c).normalize();
  }

  MockTeacher teacher(projection, embeddings, temperature);
  teacher.set_oracle_leak(data.labels, omega);
  return teacher;
}

SyntheticBenchmark make_synthetic_benchmark(const BenchmarkOptions& opts) {
  SyntheticShiftSpec spec;
  spec.per_class = opts.per_class;
  spec.cluster_sigma = opts.cluster_sigma;
  spec.rotation_deg = opts.rotation_deg;
  spec.seed = opts.data_seed;
  SyntheticPair pair = generate_synthetic_pair(spec);

  MockTeacher teacher = make_prototype_teacher(pair.target, opts.embed_dim, opts.temperature,
                                               opts.omega, opts.teacher_seed);

  AdaptationConfig config;
  config.epochs = opts.epochs;
  config.seed = opts.adapt_seed;
  return {std::move(pair), std::move(teacher), config};
}

TargetModel make_benchmark_model(const FeatureDataset& source, std::uint64_t seed) {
  Rng rng(seed);
  TargetModel model(std::make_unique<MlpBackbone>(static_cast<int>(source.x.cols()), 24, rng), 12,
                    source.num_classes, rng);
  PretrainOptions opts;
  opts.epochs = 12;
  pretrain_source(model, source.x, source.labels, opts, rng);
  return model;
}

TargetModel train_oracle_reference(const SyntheticPair& pair, std::uint64_t seed) {
  const Eigen::Index ns = pair.source.x.rows();
  const Eigen::Index nt = pair.target.x.rows();
  Mat x(ns + nt, pair.source.x.cols());
  x.topRows(ns) = pair.source.x;
  x.bottomRows(nt) = pair.target.x;
  std::vector<int> labels = pair.source.labels;
  labels.insert(labels.end(), pair.target.labels.begin(), pair.target.labels.end());

  Rng rng(seed);
  TargetModel model(std::make_unique<MlpBackbone>(static_cast<int>(x.cols()), 24, rng), 12,
                    pair.source.num_classes, rng);
  PretrainOptions opts;
  opts.epochs = 12;
  pretrain_source(model, x, labels, opts, rng);
  return model;
}

}  // namespace sfda
