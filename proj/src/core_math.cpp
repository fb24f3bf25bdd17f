#include "sfda/core_math.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace sfda {

bool is_prob_vector(const Vec& p, double tol) {
  if (p.size() == 0) return false;
  for (Eigen::Index i = 0; i < p.size(); ++i) {
    if (!std::isfinite(p[i]) || p[i] < -tol) return false;
  }
  return std::abs(p.sum() - 1.0) <= tol;
}

void require_prob_vector(const Vec& p, const char* what) {
  if (!is_prob_vector(p)) {
    std::ostringstream os;
    os << what << ": not a probability vector (size " << p.size();
    if (p.size() > 0) os << ", sum " << p.sum();
    os << ")";
    throw std::invalid_argument(os.str());
  }
}

void require_prob_rows(const Mat& rows, const char* what) {
  if (rows.rows() == 0 || rows.cols() == 0) {
    throw std::invalid_argument(std::string(what) + ": empty batch");
  }
  for (Eigen::Index i = 0; i < rows.rows(); ++i) {
    Vec r = rows.row(i).transpose();
    if (!is_prob_vector(r)) {
      std::ostringstream os;
      os << what << ": row " << i << " is not a probability vector (sum " << r.sum() << ")";
      throw std::invalid_argument(os.str());
    }
  }
}

double entropy(const Vec& p) {
  require_prob_vector(p, "entropy");
  double h = 0.0;
  for (Eigen::Index i = 0; i < p.size(); ++i) {
    if (p[i] > 0.0) h -= p[i] * floored_log(p[i]);
  }
  return h;
}

double kl_divergence(const Vec& p, const Vec& q) {
  require_prob_vector(p, "kl_divergence: p");
  require_prob_vector(q, "kl_divergence: q");
  if (p.size() != q.size()) throw std::invalid_argument("kl_divergence: size mismatch");
  double d = 0.0;
  for (Eigen::Index i = 0; i < p.size(); ++i) {
    if (p[i] <= 0.0) continue;
    if (q[i] <= 0.0) return std::numeric_limits<double>::infinity();
    d += p[i] * (floored_log(p[i]) - floored_log(q[i]));
  }
  return d;
}

Mat batch_joint(const Mat& p_rows, const Mat& q_rows) {
  require_prob_rows(p_rows, "batch_joint: p");
  require_prob_rows(q_rows, "batch_joint: q");
  if (p_rows.rows() != q_rows.rows() || p_rows.cols() != q_rows.cols()) {
    throw std::invalid_argument("batch_joint: batch shape mismatch");
  }
  const double b = static_cast<double>(p_rows.rows());
  Mat joint = (p_rows.transpose() * q_rows) / b;
  joint = ((joint + joint.transpose()) * 0.5).eval();
  return joint;
}

double mutual_information(const Mat& joint) {
  if (joint.rows() != joint.cols() || joint.rows() == 0) {
    throw std::invalid_argument("mutual_information: joint must be square and non-empty");
  }
  const double sum = joint.sum();
  if (std::abs(sum - 1.0) > kSimplexTol) {
    throw std::invalid_argument("mutual_information: joint does not sum to 1");
  }
  for (Eigen::Index i = 0; i < joint.rows(); ++i) {
    for (Eigen::Index j = 0; j < joint.cols(); ++j) {
      if (!std::isfinite(joint(i, j)) || joint(i, j) < -kSimplexTol) {
        throw std::invalid_argument("mutual_information: negative or non-finite entry");
      }
      if (std::abs(joint(i, j) - joint(j, i)) > 1e-9) {
        throw std::invalid_argument("mutual_information: joint not symmetric");
      }
    }
  }
  const Vec row_marg = joint.rowwise().sum();
  const Vec col_marg = joint.colwise().sum().transpose();
  double mi = 0.0;
  for (Eigen::Index i = 0; i < joint.rows(); ++i) {
    for (Eigen::Index j = 0; j < joint.cols(); ++j) {
      const double pij = joint(i, j);
      if (pij <= 0.0) continue;
      mi += pij * (floored_log(pij) - floored_log(row_marg[i]) - floored_log(col_marg[j]));
    }
  }
  return mi;
}

BoundCheck check_mi_kl_bound(const Mat& p_rows, const Mat& q_rows) {
  BoundCheck out;
  out.lhs = -mutual_information(batch_joint(p_rows, q_rows));
  double acc = 0.0;
  for (Eigen::Index i = 0; i < p_rows.rows(); ++i) {
    acc += kl_divergence(p_rows.row(i).transpose(), q_rows.row(i).transpose());
  }
  out.rhs = acc / static_cast<double>(p_rows.rows());
  out.holds = out.lhs <= out.rhs;
  return out;
}

Mat softmax_rows(const Mat& logits) {
  Mat probs(logits.rows(), logits.cols());
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const double m = logits.row(i).maxCoeff();
    Eigen::RowVectorXd e = (logits.row(i).array() - m).exp();
    probs.row(i) = e / e.sum();
  }
  return probs;
}

Mat softmax_backward_rows(const Mat& probs, const Mat& d_probs) {
  if (probs.rows() != d_probs.rows() || probs.cols() != d_probs.cols()) {
    throw std::invalid_argument("softmax_backward_rows: shape mismatch");
  }
  Mat d_logits(probs.rows(), probs.cols());
  for (Eigen::Index i = 0; i < probs.rows(); ++i) {
    const double dot = probs.row(i).dot(d_probs.row(i));
    d_logits.row(i) = (probs.row(i).array() * (d_probs.row(i).array() - dot)).matrix();
  }
  return d_logits;
}

double median_pairwise_distance(const Mat& X, const Mat& Y) {
  if (X.cols() != Y.cols()) throw std::invalid_argument("median_pairwise_distance: dim mismatch");
  Mat all(X.rows() + Y.rows(), X.cols());
  all << X, Y;
  const Eigen::Index n = all.rows();
  std::vector<double> d;
  d.reserve(static_cast<std::size_t>(n) * static_cast<std::size_t>(n - 1) / 2);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = i + 1; j < n; ++j) {
      d.push_back((all.row(i) - all.row(j)).norm());
    }
  }
  if (d.empty()) return 0.0;
  const std::size_t mid = d.size() / 2;
  std::nth_element(d.begin(), d.begin() + static_cast<std::ptrdiff_t>(mid), d.end());
  return d[mid];
}

namespace {

double multi_kernel(double sq_dist, const std::vector<double>& sigmas) {
  double k = 0.0;
  for (double s : sigmas) k += std::exp(-sq_dist / (2.0 * s * s));
  return k;
}

}  // namespace

double mmd_distance(const Mat& X, const Mat& Y, const std::vector<double>& bandwidth_scales) {
  if (X.rows() < 2 || Y.rows() < 2) {
    throw std::invalid_argument("mmd_distance: need at least two rows per side");
  }
  if (X.cols() != Y.cols()) throw std::invalid_argument("mmd_distance: dimension mismatch");
  if (bandwidth_scales.empty()) throw std::invalid_argument("mmd_distance: no bandwidths");

  double median = median_pairwise_distance(X, Y);
  if (median <= 0.0) median = 1.0;
  std::vector<double> sigmas;
  sigmas.reserve(bandwidth_scales.size());
  for (double s : bandwidth_scales) {
    if (s <= 0.0) throw std::invalid_argument("mmd_distance: bandwidth scale must be positive");
    sigmas.push_back(median * s);
  }

  const Eigen::Index m = X.rows(), n = Y.rows();
  double kxx = 0.0, kyy = 0.0, kxy = 0.0;
  for (Eigen::Index i = 0; i < m; ++i) {
    for (Eigen::Index j = 0; j < m; ++j) {
      if (i == j) continue;
      kxx += multi_kernel((X.row(i) - X.row(j)).squaredNorm(), sigmas);
    }
  }
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) {
      if (i == j) continue;
      kyy += multi_kernel((Y.row(i) - Y.row(j)).squaredNorm(), sigmas);
    }
  }
  for (Eigen::Index i = 0; i < m; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) {
      kxy += multi_kernel((X.row(i) - Y.row(j)).squaredNorm(), sigmas);
    }
  }
  const double md = static_cast<double>(m), nd = static_cast<double>(n);
  const double v = kxx / (md * (md - 1.0)) + kyy / (nd * (nd - 1.0)) - 2.0 * kxy / (md * nd);
  return v > 0.0 ? v : 0.0;
}

}  // namespace sfda
