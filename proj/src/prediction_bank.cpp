#include "sfda/prediction_bank.hpp"

#include "sfda/core_math.hpp"

#include <algorithm>
#include <cstdint>
#include <istream>
#include <numeric>
#include <ostream>

namespace sfda {

namespace {

Eigen::MatrixXf to_f32(const Mat& rows) { return rows.cast<float>(); }

}  // namespace

PredictionBank::PredictionBank(const Mat& initial_target, const Mat& initial_vil) {
  require_prob_rows(initial_target, "PredictionBank: target init");
  require_prob_rows(initial_vil, "PredictionBank: vil init");
  if (initial_target.rows() != initial_vil.rows() ||
      initial_target.cols() != initial_vil.cols()) {
    throw std::invalid_argument("PredictionBank: store shape mismatch");
  }
  target_ = to_f32(initial_target);
  vil_ = to_f32(initial_vil);
}

void PredictionBank::update_target_rows(const std::vector<int>& indices, const Mat& new_preds) {
  if (static_cast<Eigen::Index>(indices.size()) != new_preds.rows()) {
    throw std::invalid_argument("update_target_rows: one prediction per index required");
  }
  if (indices.empty()) return;
  require_prob_rows(new_preds, "update_target_rows");
  if (new_preds.cols() != target_.cols()) {
    throw std::invalid_argument("update_target_rows: class count mismatch");
  }
  for (int idx : indices) {
    if (idx < 0 || idx >= size()) throw std::out_of_range("update_target_rows: index out of range");
  }
  for (std::size_t k = 0; k < indices.size(); ++k) {
    target_.row(indices[k]) = new_preds.row(static_cast<Eigen::Index>(k)).cast<float>();
  }
}

void PredictionBank::refresh_vil_all(const Mat& new_preds) {
  require_prob_rows(new_preds, "refresh_vil_all");
  if (new_preds.rows() != vil_.rows() || new_preds.cols() != vil_.cols()) {
    throw std::invalid_argument("refresh_vil_all: prediction count mismatch");
  }
  vil_ = to_f32(new_preds);
}

Vec PredictionBank::target_row(int i) const {
  if (i < 0 || i >= size()) throw std::out_of_range("target_row: index out of range");
  return target_.row(i).cast<double>().transpose();
}

Vec PredictionBank::vil_row(int i) const {
  if (i < 0 || i >= size()) throw std::out_of_range("vil_row: index out of range");
  return vil_.row(i).cast<double>().transpose();
}

Vec PredictionBank::target_entropies() const {
  Vec h(size());
  for (int i = 0; i < size(); ++i) h[i] = entropy(target_row(i));
  return h;
}

void PredictionBank::write(std::ostream& os) const {
  const std::uint32_t n = static_cast<std::uint32_t>(target_.rows());
  const std::uint32_t c = static_cast<std::uint32_t>(target_.cols());
  os.write(reinterpret_cast<const char*>(&n), sizeof n);
  os.write(reinterpret_cast<const char*>(&c), sizeof c);
  // Row-major on disk.
  using RowMajorF = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  RowMajorF t = target_, v = vil_;
  os.write(reinterpret_cast<const char*>(t.data()),
           static_cast<std::streamsize>(sizeof(float) * n * c));
  os.write(reinterpret_cast<const char*>(v.data()),
           static_cast<std::streamsize>(sizeof(float) * n * c));
  if (!os) throw std::runtime_error("PredictionBank::write: stream failure");
}

PredictionBank PredictionBank::read(std::istream& is) {
  std::uint32_t n = 0, c = 0;
  is.read(reinterpret_cast<char*>(&n), sizeof n);
  is.read(reinterpret_cast<char*>(&c), sizeof c);
  if (!is || n == 0 || c == 0) throw std::runtime_error("PredictionBank::read: bad header");
  using RowMajorF = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  RowMajorF t(n, c), v(n, c);
  is.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(sizeof(float) * n * c));
  is.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(sizeof(float) * n * c));
  if (!is) throw std::runtime_error("PredictionBank::read: truncated payload");
  PredictionBank bank;
  bank.target_ = t;
  bank.vil_ = v;
  return bank;
}

double sample_fusion_weight(double lambda_rate, Rng& rng) {
  if (lambda_rate <= 0.0) throw std::invalid_argument("sample_fusion_weight: rate must be positive");
  return std::min(rng.exponential(lambda_rate), 1.0);
}

Vec fuse(const Vec& p_prime, const Vec& p_dprime, double tau) {
  if (tau < 0.0 || tau > 1.0) throw std::invalid_argument("fuse: tau outside [0,1]");
  require_prob_vector(p_prime, "fuse: p_prime");
  require_prob_vector(p_dprime, "fuse: p_dprime");
  if (p_prime.size() != p_dprime.size()) throw std::invalid_argument("fuse: size mismatch");
  return tau * p_prime + (1.0 - tau) * p_dprime;
}

std::vector<int> top_n_categories(const Vec& p_bar, int n) {
  const int c = static_cast<int>(p_bar.size());
  if (n < 1 || n > c) throw std::invalid_argument("top_n_categories: N out of range");
  std::vector<int> order(static_cast<std::size_t>(c));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return p_bar[a] > p_bar[b]; });
  order.resize(static_cast<std::size_t>(n));
  return order;
}

FusedLabel fuse_banked(const PredictionBank& bank, int i, double tau, int n) {
  FusedLabel out;
  out.tau = tau;
  out.p_bar = fuse(bank.target_row(i), bank.vil_row(i), tau);
  out.top_n = top_n_categories(out.p_bar, n);
  return out;
}

}  // namespace sfda
