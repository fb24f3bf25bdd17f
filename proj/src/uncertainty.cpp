#include "sfda/uncertainty.hpp"

#include "sfda/core_math.hpp"

#include <cmath>

namespace sfda {

CurriculumSchedule::CurriculumSchedule(double eps, double gam) : epsilon(eps), gamma(gam) {
  if (!(epsilon > 0.0)) {
    throw std::invalid_argument("CurriculumSchedule: epsilon must be positive");
  }
  if (!(gamma > 1.0)) throw std::invalid_argument("CurriculumSchedule: gamma must exceed 1");
}

ReferenceState init_reference(const Mat& source_predictions, double delta, ReferenceMode mode) {
  require_prob_rows(source_predictions, "init_reference");
  if (delta < 0.0 || delta > 1.0) {
    throw std::invalid_argument("init_reference: delta must lie in [0,1]");
  }
  ReferenceState state;
  state.delta = delta;
  state.mode = mode;
  state.epoch = 0;
  state.rho.resize(source_predictions.rows());
  for (Eigen::Index i = 0; i < source_predictions.rows(); ++i) {
    state.rho[i] = entropy(source_predictions.row(i).transpose());
  }
  return state;
}

void update_reference(ReferenceState& state, const Vec& current_entropies) {
  if (current_entropies.size() != state.rho.size()) {
    throw std::invalid_argument("update_reference: entropy vector length mismatch");
  }
  if (state.mode == ReferenceMode::kEma) {
    state.rho = (1.0 - state.delta) * state.rho + state.delta * current_entropies;
  } else {
    state.rho += state.delta * current_entropies;
  }
  state.epoch += 1;
}

double referenced_uncertainty(const Vec& pred, double rho_i) {
  return entropy(pred) - rho_i;
}

Vec referenced_uncertainties(const Mat& preds, const Vec& rho) {
  if (preds.rows() != rho.size()) {
    throw std::invalid_argument("referenced_uncertainties: row count mismatch");
  }
  Vec u(preds.rows());
  for (Eigen::Index i = 0; i < preds.rows(); ++i) {
    u[i] = entropy(preds.row(i).transpose()) - rho[i];
  }
  return u;
}

double threshold(int k, const CurriculumSchedule& schedule) {
  if (k < 0) throw std::invalid_argument("threshold: epoch index must be non-negative");
  return schedule.epsilon * std::pow(schedule.gamma, static_cast<double>(k));
}

std::vector<int> detect_gap_region(const Vec& uncertainties, double m_k) {
  std::vector<int> gap;
  for (Eigen::Index i = 0; i < uncertainties.size(); ++i) {
    if (!std::isfinite(uncertainties[i])) {
      throw std::invalid_argument("detect_gap_region: non-finite uncertainty");
    }
    if (uncertainties[i] > m_k) gap.push_back(static_cast<int>(i));
  }
  return gap;
}

}  // namespace sfda
