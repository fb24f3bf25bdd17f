#pragma once

#include "sfda/rng.hpp"
#include "sfda/types.hpp"

#include <iosfwd>
#include <vector>

namespace sfda {

// Memory bank of per-sample predictions: one store for the target model (p'),
// one for the teacher (p''). Row count and class count are fixed at
// construction; rows are held in float32, matching the dump format, so
// checkpoint round-trips are exact. Single-writer: only the training loop
// mutates a bank.
class PredictionBank {
 public:
  // Both initial stores must provide n rows of C-class distributions.
  PredictionBank(const Mat& initial_target, const Mat& initial_vil);

  int size() const { return static_cast<int>(target_.rows()); }
  int classes() const { return static_cast<int>(target_.cols()); }

  // Replaces exactly the addressed rows; all others stay bit-identical.
  void update_target_rows(const std::vector<int>& indices, const Mat& new_preds);

  // Wholesale refresh of the teacher store (epoch boundary).
  void refresh_vil_all(const Mat& new_preds);

  Vec target_row(int i) const;
  Vec vil_row(int i) const;
  const Eigen::MatrixXf& target_store() const { return target_; }
  const Eigen::MatrixXf& vil_store() const { return vil_; }

  // Entropy of each target-store row, used for the epoch reference update.
  Vec target_entropies() const;

  // Binary dump: u32 n, u32 C, then two n x C float32 matrices, row-major
  // (target store first).
  void write(std::ostream& os) const;
  static PredictionBank read(std::istream& is);

 private:
  PredictionBank() = default;
  Eigen::MatrixXf target_;
  Eigen::MatrixXf vil_;
};

// min(Exp(rate), 1): exponential fusion weight clamped so Eq-style fusion
// stays a convex combination.
double sample_fusion_weight(double lambda_rate, Rng& rng);

// tau * p_prime + (1 - tau) * p_dprime.
Vec fuse(const Vec& p_prime, const Vec& p_dprime, double tau);

// Indices of the N largest entries, descending by probability, ties broken by
// lower index.
std::vector<int> top_n_categories(const Vec& p_bar, int n);

struct FusedLabel {
  Vec p_bar;
  double tau = 0.0;
  std::vector<int> top_n;
};

FusedLabel fuse_banked(const PredictionBank& bank, int i, double tau, int n);

}  // namespace sfda
