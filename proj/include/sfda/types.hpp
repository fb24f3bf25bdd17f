#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <stdexcept>
#include <string>

namespace sfda {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

// Floor applied inside logarithms so values and gradients stay finite near zero.
constexpr double kProbFloor = 1e-8;

// Tolerance for simplex validation at API boundaries.
constexpr double kSimplexTol = 1e-6;

inline double floored_log(double x) {
  return std::log(x < kProbFloor ? kProbFloor : x);
}

bool is_prob_vector(const Vec& p, double tol = kSimplexTol);

// Throws std::invalid_argument naming `what` when p is off the simplex.
void require_prob_vector(const Vec& p, const char* what);

// Validates every row of a B x C matrix of stacked distributions.
void require_prob_rows(const Mat& rows, const char* what);

}  // namespace sfda
