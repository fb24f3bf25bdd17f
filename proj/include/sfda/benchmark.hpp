#pragma once
// Desk-scale synthetic benchmark: rotated-cluster data, a prototype-embedding
// mock teacher with an oracle leak, and the adaptation defaults the
// acceptance checks run against.

#include <cstdint>

#include "sfda/datasets.hpp"
#include "sfda/engine.hpp"
#include "sfda/models.hpp"

namespace sfda {

struct BenchmarkOptions {
  int per_class = 500;
  double cluster_sigma = 0.8;  // enough overlap to leave headroom over the source model
  double rotation_deg = 35.0;
  double omega = 0.6;          // teacher oracle-leak weight
  double temperature = 0.07;   // teacher softmax temperature
  int embed_dim = 16;
  int epochs = 15;
  std::uint64_t data_seed = 7;
  std::uint64_t model_seed = 11;
  std::uint64_t teacher_seed = 29;
  std::uint64_t adapt_seed = 5;
};

struct SyntheticBenchmark {
  SyntheticPair pair;
  MockTeacher teacher;
  AdaptationConfig config;
};

// Mock scorer whose class embeddings are the projected class prototypes of
// `data`, so its cosine ranking follows the cluster geometry and its
// runner-up class is the geometric neighbour; omega > 0 pins its argmax to
// the true label. Classes absent from the data get an arbitrary direction.
MockTeacher make_prototype_teacher(const FeatureDataset& data, int embed_dim, double temperature,
                                   double omega, std::uint64_t seed);

// Dataset, teacher, and adaptation defaults in one bundle; the teacher is the
// prototype scorer over the target half.
SyntheticBenchmark make_synthetic_benchmark(const BenchmarkOptions& opts = {});

// Source classifier for the benchmark: small MLP backbone pretrained on the
// labeled source half.
TargetModel make_benchmark_model(const FeatureDataset& source, std::uint64_t seed);

// Reference for trajectory analysis: the same architecture trained on the
// union of source and target with true labels.
TargetModel train_oracle_reference(const SyntheticPair& pair, std::uint64_t seed);

}  // namespace sfda
