#include "sfda/objectives.hpp"

#include "sfda/core_math.hpp"

#include <algorithm>
#include <cmath>
#include <set>

namespace sfda {

namespace {

// d(MI)/d(joint entry): ln(J_ab / (r_a c_b)) - 1 wherever everything sits
// above the floor; symmetric because the joint is.
Mat mi_joint_grad(const Mat& joint) {
  const Vec row_marg = joint.rowwise().sum();
  const Vec col_marg = joint.colwise().sum().transpose();
  Mat g(joint.rows(), joint.cols());
  for (Eigen::Index a = 0; a < joint.rows(); ++a) {
    for (Eigen::Index b = 0; b < joint.cols(); ++b) {
      g(a, b) = floored_log(joint(a, b)) - floored_log(row_marg[a]) -
                floored_log(col_marg[b]) - 1.0;
    }
  }
  return g;
}

// -MI of the symmetrized batch joint with optional gradients w.r.t. either
// row matrix. The symmetrization chain rule collapses because the joint
// gradient is itself symmetric.
double neg_mi(const Mat& p_rows, const Mat& q_rows, Mat* d_p, Mat* d_q) {
  if (d_p != nullptr) d_p->setZero(p_rows.rows(), p_rows.cols());
  if (d_q != nullptr) d_q->setZero(q_rows.rows(), q_rows.cols());
  if (p_rows.rows() == 0) return 0.0;
  const Mat joint = batch_joint(p_rows, q_rows);
  const double mi = mutual_information(joint);
  if (d_p != nullptr || d_q != nullptr) {
    const Mat g = mi_joint_grad(joint);
    const double b = static_cast<double>(p_rows.rows());
    if (d_p != nullptr) *d_p = -(q_rows * g) / b;
    if (d_q != nullptr) *d_q = -(p_rows * g) / b;
  }
  return -mi;
}

void check_top_set(const std::vector<int>& top, Eigen::Index c) {
  if (top.empty() || static_cast<Eigen::Index>(top.size()) >= c) {
    throw std::invalid_argument("cac_loss: need 1 <= N < C so negatives exist");
  }
  std::set<int> seen;
  for (int m : top) {
    if (m < 0 || m >= static_cast<int>(c)) throw std::invalid_argument("cac_loss: index out of range");
    if (!seen.insert(m).second) throw std::invalid_argument("cac_loss: duplicate top index");
  }
}

double logsumexp(const std::vector<double>& s) {
  const double m = *std::max_element(s.begin(), s.end());
  double acc = 0.0;
  for (double v : s) acc += std::exp(v - m);
  return m + std::log(acc);
}

}  // namespace

double stage1_loss(const Mat& target_rows, const Mat& vil_rows, Mat* d_vil) {
  return neg_mi(target_rows, vil_rows, nullptr, d_vil);
}

double pc_loss(const Mat& target_rows, const Mat& vil_rows, double alpha, Mat* d_target,
               double* balance_out) {
  if (target_rows.rows() == 0) {
    if (d_target != nullptr) d_target->setZero(0, target_rows.cols());
    if (balance_out != nullptr) *balance_out = 0.0;
    return 0.0;
  }
  const double mi_part = neg_mi(target_rows, vil_rows, d_target, nullptr);

  const double b = static_cast<double>(target_rows.rows());
  const double c = static_cast<double>(target_rows.cols());
  const Vec mean_pred = target_rows.colwise().mean().transpose();
  const double log_c = std::log(c);
  double balance = 0.0;
  for (Eigen::Index j = 0; j < mean_pred.size(); ++j) {
    if (mean_pred[j] > 0.0) balance += mean_pred[j] * (floored_log(mean_pred[j]) + log_c);
  }
  if (d_target != nullptr) {
    for (Eigen::Index j = 0; j < mean_pred.size(); ++j) {
      const double lead = mean_pred[j] > kProbFloor ? 1.0 : 0.0;
      const double g = (floored_log(mean_pred[j]) + log_c + lead) * alpha / b;
      d_target->col(j).array() += g;
    }
  }
  if (balance_out != nullptr) *balance_out = balance;
  return mi_part + alpha * balance;
}

double cac_loss(const Mat& logits, const std::vector<std::vector<int>>& top_sets, double iota,
                CacForm form, Mat* d_logits) {
  if (logits.rows() != static_cast<Eigen::Index>(top_sets.size())) {
    throw std::invalid_argument("cac_loss: one top set per row required");
  }
  if (iota <= 0.0) throw std::invalid_argument("cac_loss: temperature must be positive");
  if (d_logits != nullptr) d_logits->setZero(logits.rows(), logits.cols());
  const Eigen::Index bsz = logits.rows(), c = logits.cols();
  if (bsz == 0) return 0.0;

  double total = 0.0;
  for (Eigen::Index i = 0; i < bsz; ++i) {
    const auto& top = top_sets[static_cast<std::size_t>(i)];
    check_top_set(top, c);
    std::vector<bool> in_top(static_cast<std::size_t>(c), false);
    for (int m : top) in_top[static_cast<std::size_t>(m)] = true;

    // Shift so the per-sample minimum logit sits at 0.
    Eigen::Index argmin = 0;
    const double lmin = logits.row(i).minCoeff(&argmin);
    Vec shifted = logits.row(i).transpose().array() - lmin;

    double a = 1.0, bsum = 0.0;
    for (int m : top) {
      a *= shifted[m];
      bsum += shifted[m];
    }

    std::vector<int> negatives;
    std::vector<double> s_neg;
    for (Eigen::Index j = 0; j < c; ++j) {
      if (in_top[static_cast<std::size_t>(j)]) continue;
      negatives.push_back(static_cast<int>(j));
      s_neg.push_back(bsum * shifted[j] / iota);
    }
    const double s0 = a / iota;

    Vec g_shift = Vec::Zero(c);
    if (form == CacForm::kStandard) {
      std::vector<double> all = s_neg;
      all.push_back(s0);
      const double lse = logsumexp(all);
      total += lse - s0;
      if (d_logits != nullptr) {
        const double w0 = std::exp(s0 - lse);
        // Top logits move through both the product a and the weighting sum b.
        double weighted_neg = 0.0;
        for (std::size_t k = 0; k < negatives.size(); ++k) {
          const double wj = std::exp(s_neg[k] - lse);
          const int j = negatives[k];
          g_shift[j] += wj * bsum / iota;
          weighted_neg += wj * shifted[j] / iota;
        }
        for (int m : top) {
          double prod_others = 1.0;
          for (int m2 : top) {
            if (m2 != m) prod_others *= shifted[m2];
          }
          g_shift[m] += (w0 - 1.0) * prod_others / iota + weighted_neg;
        }
      }
    } else {
      // As printed: -ln[e^{s0} / sum_neg e^{s_j}]. Unbounded below; kept only
      // for side-by-side comparison with the bounded default.
      const double lse_neg = logsumexp(s_neg);
      total += lse_neg - s0;
      if (d_logits != nullptr) {
        double weighted_neg = 0.0;
        for (std::size_t k = 0; k < negatives.size(); ++k) {
          const double wj = std::exp(s_neg[k] - lse_neg);
          const int j = negatives[k];
          g_shift[j] += wj * bsum / iota;
          weighted_neg += wj * shifted[j] / iota;
        }
        for (int m : top) {
          double prod_others = 1.0;
          for (int m2 : top) {
            if (m2 != m) prod_others *= shifted[m2];
          }
          g_shift[m] += weighted_neg - prod_others / iota;
        }
      }
    }

    if (d_logits != nullptr) {
      // Chain through the min shift: the argmin coordinate absorbs -sum.
      g_shift[argmin] -= g_shift.sum();
      d_logits->row(i) = g_shift.transpose();
    }
  }

  total /= static_cast<double>(bsz);
  if (d_logits != nullptr) *d_logits /= static_cast<double>(bsz);
  return total;
}

double rc_loss(const Vec& gap_uncertainties) {
  if (gap_uncertainties.size() == 0) return 0.0;
  return gap_uncertainties.mean();
}

double rc_loss(const Mat& gap_probs, const Vec& rho_gap, Mat* d_probs) {
  if (gap_probs.rows() != rho_gap.size()) {
    throw std::invalid_argument("rc_loss: one reference per gap row required");
  }
  if (d_probs != nullptr) d_probs->setZero(gap_probs.rows(), gap_probs.cols());
  const Eigen::Index bsz = gap_probs.rows();
  if (bsz == 0) return 0.0;
  double total = 0.0;
  for (Eigen::Index i = 0; i < bsz; ++i) {
    total += entropy(gap_probs.row(i).transpose()) - rho_gap[i];
    if (d_probs != nullptr) {
      for (Eigen::Index j = 0; j < gap_probs.cols(); ++j) {
        const double p = gap_probs(i, j);
        (*d_probs)(i, j) = -(floored_log(p) + (p > kProbFloor ? 1.0 : 0.0));
      }
    }
  }
  if (d_probs != nullptr) *d_probs /= static_cast<double>(bsz);
  return total / static_cast<double>(bsz);
}

LossBreakdown stage2_loss(const Stage2Inputs& in, const ObjectiveWeights& w, Mat* d_batch_logits) {
  const Eigen::Index bsz = in.batch_logits.rows();
  const Eigen::Index c = in.batch_logits.cols();
  if (in.batch_probs.rows() != bsz || in.batch_vil.rows() != bsz || in.rho_batch.size() != bsz) {
    throw std::invalid_argument("stage2_loss: batch array size mismatch");
  }
  if (in.gap_tops.size() != in.gap.size()) {
    throw std::invalid_argument("stage2_loss: one top set per gap row required");
  }
  for (int i : in.gap) {
    if (i < 0 || i >= static_cast<int>(bsz)) {
      throw std::invalid_argument("stage2_loss: gap index out of range");
    }
  }

  LossBreakdown out;
  const Eigen::Index g = static_cast<Eigen::Index>(in.gap.size());
  out.gap_empty = in.gap.empty();
  out.gap_fraction = bsz == 0 ? 0.0 : static_cast<double>(g) / static_cast<double>(bsz);
  if (d_batch_logits != nullptr) d_batch_logits->setZero(bsz, c);

  Mat gap_logits(g, c), gap_probs(g, c), gap_vil(g, c);
  Vec rho_gap(g);
  for (Eigen::Index k = 0; k < g; ++k) {
    const int i = in.gap[static_cast<std::size_t>(k)];
    gap_logits.row(k) = in.batch_logits.row(i);
    gap_probs.row(k) = in.batch_probs.row(i);
    gap_vil.row(k) = in.batch_vil.row(i);
    rho_gap[k] = in.rho_batch[i];
  }

  // Consistency term, over the configured scope.
  Mat d_pc_probs;
  const bool pc_on_all = w.pc_scope == PcScope::kAll;
  const Mat& pc_probs = pc_on_all ? in.batch_probs : gap_probs;
  const Mat& pc_vil = pc_on_all ? in.batch_vil : gap_vil;
  const bool pc_active = !w.disable_pc && pc_probs.rows() > 0;
  if (pc_active) {
    out.pc = pc_loss(pc_probs, pc_vil, w.alpha,
                     d_batch_logits != nullptr ? &d_pc_probs : nullptr, &out.balance);
  }

  // Gap-scoped terms.
  Mat d_cac_logits, d_rc_probs;
  if (g > 0) {
    out.cac = cac_loss(gap_logits, in.gap_tops, w.iota, w.cac_form,
                       d_batch_logits != nullptr ? &d_cac_logits : nullptr);
    out.rc = rc_loss(gap_probs, rho_gap, d_batch_logits != nullptr ? &d_rc_probs : nullptr);
  }

  out.stage2 = out.pc + w.beta * out.cac + w.eta * out.rc;

  if (d_batch_logits != nullptr) {
    Mat d_probs = Mat::Zero(bsz, c);
    if (pc_active) {
      if (pc_on_all) {
        d_probs = d_pc_probs;
      } else {
        for (Eigen::Index k = 0; k < g; ++k) {
          d_probs.row(in.gap[static_cast<std::size_t>(k)]) += d_pc_probs.row(k);
        }
      }
    }
    if (g > 0) {
      for (Eigen::Index k = 0; k < g; ++k) {
        d_probs.row(in.gap[static_cast<std::size_t>(k)]) += w.eta * d_rc_probs.row(k);
      }
    }
    *d_batch_logits = softmax_backward_rows(in.batch_probs, d_probs);
    if (g > 0) {
      for (Eigen::Index k = 0; k < g; ++k) {
        d_batch_logits->row(in.gap[static_cast<std::size_t>(k)]) +=
            w.beta * d_cac_logits.row(k);
      }
    }
  }
  return out;
}

}  // namespace sfda
