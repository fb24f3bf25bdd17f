#pragma once

#include "sfda/types.hpp"

#include <vector>

namespace sfda {

// Predictive entropy −Σ p ln p in nats, with the convention 0·ln 0 = 0.
double entropy(const Vec& p);

// Σ p ln(p/q) in nats. Returns +inf when q lacks support where p has mass.
double kl_divergence(const Vec& p, const Vec& q);

// (1/B) Σ_i p_i ⊗ q_i, symmetrized to (P + Pᵀ)/2. Rows are distributions.
Mat batch_joint(const Mat& p_rows, const Mat& q_rows);

// Σ_ij P_ij ln(P_ij / (P_i· P_·j)) of a symmetric joint; zero entries contribute 0.
double mutual_information(const Mat& joint);

struct BoundCheck {
  double lhs = 0.0;  // −MI of the batch joint
  double rhs = 0.0;  // mean per-sample KL
  bool holds = false;
};

// lhs = −MI(batch_joint(p,q)), rhs = mean_i KL(p_i ‖ q_i); holds ⇔ lhs ≤ rhs.
BoundCheck check_mi_kl_bound(const Mat& p_rows, const Mat& q_rows);

// Row-wise stable softmax of a B x C logit matrix.
Mat softmax_rows(const Mat& logits);

// dL/dlogits from dL/dprobs across softmax rows: p ⊙ (g − <g,p>).
Mat softmax_backward_rows(const Mat& probs, const Mat& d_probs);

inline const std::vector<double> kMmdBandwidthScales = {0.25, 0.5, 1.0, 2.0, 4.0};

// Median pairwise Euclidean distance over the union of the row sets.
double median_pairwise_distance(const Mat& X, const Mat& Y);

// Unbiased multi-kernel RBF MMD² between row sets, clamped at 0.
// Kernel width sigma_s = median pairwise distance × scale (fallback 1 when the
// median degenerates to 0). Requires at least two rows per side.
double mmd_distance(const Mat& X, const Mat& Y,
                    const std::vector<double>& bandwidth_scales = kMmdBandwidthScales);

}  // namespace sfda
