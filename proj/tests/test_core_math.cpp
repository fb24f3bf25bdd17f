#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "sfda/core_math.hpp"
#include "test_util.hpp"

#include <cmath>
#include <limits>

using namespace sfda;

namespace {

Vec v3(double a, double b, double c) {
  Vec p(3);
  p << a, b, c;
  return p;
}

// Independent term-by-term entropy in long double.
double entropy_oracle(const Vec& p) {
  long double h = 0.0L;
  for (Eigen::Index i = 0; i < p.size(); ++i) {
    const long double x = static_cast<long double>(p[i]);
    if (x > 0.0L) h -= x * std::log(x);
  }
  return static_cast<double>(h);
}

}  // namespace

TEST_CASE("entropy: uniform and one-hot endpoints") {
  Vec u = Vec::Constant(4, 0.25);
  CHECK(entropy(u) == doctest::Approx(std::log(4.0)).epsilon(1e-12));

  Vec onehot = Vec::Zero(6);
  onehot[2] = 1.0;
  CHECK(entropy(onehot) == 0.0);
}

TEST_CASE("entropy: term-by-term oracle on (0.7, 0.2, 0.1)") {
  Vec p = v3(0.7, 0.2, 0.1);
  CHECK(std::abs(entropy(p) - entropy_oracle(p)) < 1e-12);
}

TEST_CASE("entropy: range [0, ln C] on random simplexes") {
  Rng rng(11);
  for (int t = 0; t < 200; ++t) {
    const int c = 2 + static_cast<int>(rng.below(9));
    Vec p = testutil::random_simplex(rng, c);
    const double h = entropy(p);
    CHECK(h >= 0.0);
    CHECK(h <= std::log(static_cast<double>(c)) + 1e-12);
    // Permutation symmetry.
    Vec q = p.reverse();
    CHECK(entropy(q) == doctest::Approx(h).epsilon(1e-12));
  }
}

TEST_CASE("entropy: rejects off-simplex input") {
  Vec bad = v3(0.5, 0.4, 0.4);
  CHECK_THROWS_AS(entropy(bad), std::invalid_argument);
  Vec neg = v3(1.2, -0.1, -0.1);
  CHECK_THROWS_AS(entropy(neg), std::invalid_argument);
}

TEST_CASE("kl_divergence: identity, closed form, oracle") {
  Rng rng(12);
  Vec p = testutil::random_simplex(rng, 5);
  CHECK(kl_divergence(p, p) == doctest::Approx(0.0).epsilon(1e-12));

  Vec onehot = Vec::Zero(5);
  onehot[3] = 1.0;
  Vec u = Vec::Constant(5, 0.2);
  CHECK(kl_divergence(onehot, u) == doctest::Approx(std::log(5.0)).epsilon(1e-12));

  Vec a(2), b(2);
  a << 0.6, 0.4;
  b << 0.5, 0.5;
  const long double oracle = 0.6L * std::log(0.6L / 0.5L) + 0.4L * std::log(0.4L / 0.5L);
  CHECK(std::abs(kl_divergence(a, b) - static_cast<double>(oracle)) < 1e-12);
}

TEST_CASE("kl_divergence: support violation returns +inf, not an exception") {
  Vec p = v3(0.5, 0.5, 0.0);
  Vec q = v3(1.0, 0.0, 0.0);
  CHECK(std::isinf(kl_divergence(p, q)));
  // Zero q is fine wherever p is zero too.
  Vec q2 = v3(0.3, 0.7, 0.0);
  CHECK(std::isfinite(kl_divergence(p, q2)));
}

TEST_CASE("kl_divergence: non-negative on random pairs") {
  Rng rng(13);
  for (int t = 0; t < 300; ++t) {
    const int c = 2 + static_cast<int>(rng.below(9));
    Vec p = testutil::random_simplex(rng, c);
    Vec q = testutil::random_simplex(rng, c);
    CHECK(kl_divergence(p, q) >= -1e-12);
  }
}

TEST_CASE("batch_joint: correlated one-hot batch gives I/C") {
  const int c = 5;
  Mat rows = Mat::Zero(c, c);
  for (int i = 0; i < c; ++i) rows(i, i) = 1.0;
  Mat j = batch_joint(rows, rows);
  CHECK((j - Mat::Identity(c, c) / c).cwiseAbs().maxCoeff() < 1e-15);
}

TEST_CASE("batch_joint: uniform batches give flat joint") {
  Mat rows = Mat::Constant(7, 4, 0.25);
  Mat j = batch_joint(rows, rows);
  CHECK((j.array() - 1.0 / 16.0).abs().maxCoeff() < 1e-15);
}

TEST_CASE("batch_joint: explicit outer-product oracle on a random 3x3 batch") {
  Rng rng(14);
  Mat p = testutil::random_prob_rows(rng, 3, 3);
  Mat q = testutil::random_prob_rows(rng, 3, 3);
  // Brute-force oracle: average the outer products, then symmetrize.
  Mat raw = Mat::Zero(3, 3);
  for (int i = 0; i < 3; ++i) {
    for (int a = 0; a < 3; ++a) {
      for (int b = 0; b < 3; ++b) raw(a, b) += p(i, a) * q(i, b) / 3.0;
    }
  }
  Mat sym = (raw + raw.transpose()) / 2.0;
  CHECK((batch_joint(p, q) - sym).cwiseAbs().maxCoeff() < 1e-15);
}

TEST_CASE("batch_joint: output is symmetric and sums to 1") {
  Rng rng(15);
  for (int t = 0; t < 100; ++t) {
    const int c = 2 + static_cast<int>(rng.below(6));
    const int b = 1 + static_cast<int>(rng.below(16));
    Mat j = batch_joint(testutil::random_prob_rows(rng, b, c),
                        testutil::random_prob_rows(rng, b, c));
    CHECK(std::abs(j.sum() - 1.0) < 1e-9);
    CHECK((j - j.transpose()).cwiseAbs().maxCoeff() < 1e-12);
    CHECK(j.minCoeff() >= 0.0);
  }
}

TEST_CASE("batch_joint: shape errors") {
  Mat p = Mat::Constant(2, 3, 1.0 / 3.0);
  Mat q = Mat::Constant(3, 3, 1.0 / 3.0);
  CHECK_THROWS_AS(batch_joint(p, q), std::invalid_argument);
  Mat empty(0, 3);
  CHECK_THROWS_AS(batch_joint(empty, empty), std::invalid_argument);
}

TEST_CASE("mutual_information: diagonal joint reaches ln C") {
  Mat j = Mat::Identity(4, 4) / 4.0;
  CHECK(mutual_information(j) == doctest::Approx(std::log(4.0)).epsilon(1e-12));
}

TEST_CASE("mutual_information: product of marginals gives 0") {
  Vec m(3);
  m << 0.5, 0.3, 0.2;
  Mat j = m * m.transpose();
  CHECK(std::abs(mutual_information(j)) < 1e-12);
}

TEST_CASE("mutual_information: term-by-term oracle on an arbitrary 3x3 joint") {
  Rng rng(16);
  Mat j = batch_joint(testutil::random_prob_rows(rng, 4, 3),
                      testutil::random_prob_rows(rng, 4, 3));
  long double mi = 0.0L;
  for (int a = 0; a < 3; ++a) {
    for (int b = 0; b < 3; ++b) {
      long double row = 0.0L, col = 0.0L;
      for (int t = 0; t < 3; ++t) {
        row += static_cast<long double>(j(a, t));
        col += static_cast<long double>(j(t, b));
      }
      const long double pij = static_cast<long double>(j(a, b));
      if (pij > 0.0L) mi += pij * std::log(pij / (row * col));
    }
  }
  CHECK(std::abs(mutual_information(j) - static_cast<double>(mi)) < 1e-12);
}

TEST_CASE("mutual_information: joint of identical uniform-marginal batch hits ln C") {
  const int c = 6;
  Mat rows = Mat::Zero(c, c);
  for (int i = 0; i < c; ++i) rows(i, i) = 1.0;
  CHECK(mutual_information(batch_joint(rows, rows)) ==
        doctest::Approx(std::log(static_cast<double>(c))).epsilon(1e-6));
}

TEST_CASE("mutual_information: validation") {
  Mat bad = Mat::Constant(3, 3, 0.2);  // sums to 1.8
  CHECK_THROWS_AS(mutual_information(bad), std::invalid_argument);
  Mat asym = Mat::Identity(3, 3) / 3.0;
  asym(0, 1) = 1e-3;
  CHECK_THROWS_AS(mutual_information(asym), std::invalid_argument);
}

TEST_CASE("check_mi_kl_bound: randomized property run") {
  Rng rng(17);
  for (int t = 0; t < 100; ++t) {
    const int c = 2 + static_cast<int>(rng.below(9));
    const int b = 1 + static_cast<int>(rng.below(16));
    BoundCheck r = check_mi_kl_bound(testutil::random_prob_rows(rng, b, c),
                                     testutil::random_prob_rows(rng, b, c));
    CHECK(r.holds);
    CHECK(r.lhs <= 1e-9);
    CHECK(r.rhs >= -1e-12);
  }
}

TEST_CASE("check_mi_kl_bound: identical deterministic diverse batches") {
  const int c = 4;
  Mat rows = Mat::Zero(c, c);
  for (int i = 0; i < c; ++i) rows(i, i) = 1.0;
  BoundCheck r = check_mi_kl_bound(rows, rows);
  CHECK(r.lhs == doctest::Approx(-std::log(4.0)).epsilon(1e-12));
  CHECK(r.rhs == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(r.holds);
}

TEST_CASE("mmd_distance: identical sets are 0") {
  Rng rng(18);
  Mat x(5, 3);
  for (int i = 0; i < 5; ++i)
    for (int j = 0; j < 3; ++j) x(i, j) = rng.normal();
  CHECK(mmd_distance(x, x) <= 1e-6);
}

TEST_CASE("mmd_distance: brute-force kernel-sum oracle, single bandwidth, 3+3 points") {
  Mat x(3, 2), y(3, 2);
  x << 0.0, 0.0, 1.0, 0.0, 0.0, 1.0;
  y << 2.0, 2.0, 3.0, 2.0, 2.0, 3.0;

  const double med = median_pairwise_distance(x, y);
  const double sigma = med;  // scale 1.0
  auto kern = [&](const Vec& a, const Vec& b) {
    return std::exp(-(a - b).squaredNorm() / (2.0 * sigma * sigma));
  };
  double kxx = 0.0, kyy = 0.0, kxy = 0.0;
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) {
      Vec xi = x.row(i).transpose(), xj = x.row(j).transpose();
      Vec yi = y.row(i).transpose(), yj = y.row(j).transpose();
      if (i != j) {
        kxx += kern(xi, xj);
        kyy += kern(yi, yj);
      }
      kxy += kern(xi, yj);
    }
  }
  const double oracle = kxx / 6.0 + kyy / 6.0 - 2.0 * kxy / 9.0;
  CHECK(mmd_distance(x, y, {1.0}) == doctest::Approx(std::max(oracle, 0.0)).epsilon(1e-12));
}

TEST_CASE("mmd_distance: separated clouds exceed overlapping clouds") {
  Rng rng(19);
  const int n = 100;
  Mat x(n, 1), near(n, 1), far(n, 1);
  for (int i = 0; i < n; ++i) {
    x(i, 0) = rng.normal();
    near(i, 0) = rng.normal();
    far(i, 0) = rng.normal() + 3.0;
  }
  const double d_far = mmd_distance(x, far);
  const double d_near = mmd_distance(x, near);
  CHECK(d_far > 0.0);
  CHECK(d_far > d_near);
}

TEST_CASE("mmd_distance: symmetry and argument checks") {
  Rng rng(20);
  Mat x(4, 2), y(6, 2);
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 2; ++j) x(i, j) = rng.normal();
  for (int i = 0; i < 6; ++i)
    for (int j = 0; j < 2; ++j) y(i, j) = rng.normal() + 1.0;
  CHECK(mmd_distance(x, y) == doctest::Approx(mmd_distance(y, x)).epsilon(1e-12));

  Mat one(1, 2);
  one << 0.0, 0.0;
  CHECK_THROWS_AS(mmd_distance(one, y), std::invalid_argument);
  Mat wrong(4, 3);
  wrong.setZero();
  CHECK_THROWS_AS(mmd_distance(x, wrong), std::invalid_argument);
}

TEST_CASE("rng: determinism and state round-trip") {
  Rng a(123), b(123);
  for (int i = 0; i < 100; ++i) CHECK(a.uniform() == b.uniform());

  const std::string state = a.save_state();
  const double next = a.normal();
  Rng c(0);
  c.load_state(state);
  CHECK(c.normal() == next);
}

TEST_CASE("make_batches: full cover without replacement") {
  Rng rng(21);
  auto batches = make_batches(10, 4, rng);
  REQUIRE(batches.size() == 3);
  CHECK(batches[0].size() == 4);
  CHECK(batches[2].size() == 2);
  std::vector<bool> seen(10, false);
  for (const auto& b : batches)
    for (int i : b) {
      CHECK(!seen[static_cast<std::size_t>(i)]);
      seen[static_cast<std::size_t>(i)] = true;
    }
  for (bool s : seen) CHECK(s);
}
