#pragma once

#include "sfda/types.hpp"

#include <vector>

namespace sfda {

// Two calibration-loss variants: the cross-entropy-style form used for
// training (numerator included in the denominator, bounded below by 0), and
// the raw log-ratio form kept selectable for fidelity experiments.
enum class CacForm { kStandard, kLiteral };

// Whether the consistency loss runs over the gap region only or the full batch.
enum class PcScope { kGap, kAll };

struct ObjectiveWeights {
  double alpha = 1.0;  // class-balance regularizer weight
  double beta = 0.4;   // calibration weight in the stage-2 composite
  double eta = 0.05;   // compression weight in the stage-2 composite
  double iota = 0.1;   // calibration temperature
  CacForm cac_form = CacForm::kStandard;
  PcScope pc_scope = PcScope::kGap;
  bool disable_pc = false;  // ablation: consistency term replaced by zero
};

struct LossBreakdown {
  double stage1 = 0.0;
  double pc = 0.0;       // consistency total (mutual-information part + balance)
  double cac = 0.0;
  double rc = 0.0;
  double balance = 0.0;  // balance part of pc, reported separately
  double stage2 = 0.0;   // pc + beta*cac + eta*rc
  double gap_fraction = 0.0;
  bool gap_empty = false;
};

// Stage I objective: -MI(batch_joint(target, vil)). The optional gradient is
// w.r.t. the teacher rows only; the target model stays frozen in Stage I.
double stage1_loss(const Mat& target_rows, const Mat& vil_rows, Mat* d_vil = nullptr);

// -MI(batch_joint(target, vil)) + alpha * KL(mean target row ‖ uniform).
// Gradient w.r.t. the target rows only; the teacher is frozen in Stage II.
double pc_loss(const Mat& target_rows, const Mat& vil_rows, double alpha,
               Mat* d_target = nullptr, double* balance_out = nullptr);

// Calibration loss over gap-region logits. Logits are shifted per sample so
// the minimum is 0 before forming the top-set product/sum; computed in
// log-sum-exp-stable form. One top-index set per row, N distinct indices.
double cac_loss(const Mat& logits, const std::vector<std::vector<int>>& top_sets,
                double iota, CacForm form = CacForm::kStandard, Mat* d_logits = nullptr);

// Mean referenced uncertainty over the gap region, as already-computed values.
double rc_loss(const Vec& gap_uncertainties);

// Same mean, from the underlying distributions; gradient w.r.t. gap_probs
// (the references are constants within an iteration).
double rc_loss(const Mat& gap_probs, const Vec& rho_gap, Mat* d_probs = nullptr);

// One training batch as seen by the stage-2 composite. `gap` holds row indices
// into the batch arrays; `gap_tops` has one top-index set per gap row.
struct Stage2Inputs {
  Mat batch_logits;
  Mat batch_probs;  // softmax of batch_logits
  Mat batch_vil;
  std::vector<int> gap;
  std::vector<std::vector<int>> gap_tops;
  Vec rho_batch;
};

// Composite pc + beta*cac + eta*rc with gradient w.r.t. the batch logits.
// An empty gap region zeroes the gap-scoped parts and sets gap_empty.
LossBreakdown stage2_loss(const Stage2Inputs& in, const ObjectiveWeights& w,
                          Mat* d_batch_logits = nullptr);

}  // namespace sfda
