#pragma once

#include "sfda/types.hpp"

#include <vector>

namespace sfda {

enum class ReferenceMode { kEma, kAdditive };

// Per-sample entropy references, updated once per epoch.
struct ReferenceState {
  Vec rho;                                 // one reference per target sample, nats
  int epoch = 0;                           // update count k
  double delta = 0.1;                      // per-epoch weighting
  ReferenceMode mode = ReferenceMode::kEma;
};

// Geometric threshold schedule m^k = epsilon * gamma^k.
struct CurriculumSchedule {
  CurriculumSchedule(double epsilon, double gamma);
  double epsilon;
  double gamma;
};

// rho_i = entropy(source prediction i); epoch starts at 0.
ReferenceState init_reference(const Mat& source_predictions, double delta, ReferenceMode mode);

// ema: rho <- (1-delta)*rho + delta*h; additive: rho <- rho + delta*h. Bumps epoch.
void update_reference(ReferenceState& state, const Vec& current_entropies);

// entropy(pred) - rho_i; may be negative.
double referenced_uncertainty(const Vec& pred, double rho_i);

// Batched form over stacked prediction rows.
Vec referenced_uncertainties(const Mat& preds, const Vec& rho);

double threshold(int k, const CurriculumSchedule& schedule);

// Indices with U_i strictly above m_k, ascending.
std::vector<int> detect_gap_region(const Vec& uncertainties, double m_k);

}  // namespace sfda
