#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "sfda/core_math.hpp"
#include "sfda/objectives.hpp"
#include "test_util.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

using namespace sfda;

namespace {

// Simplexes with a mass floor so +-1e-7 probes keep every entry well inside
// the validated region and above the probability floor.
Vec conditioned_simplex(Rng& rng, int c) {
  Vec p(c);
  for (int i = 0; i < c; ++i) p[i] = rng.exponential(1.0) + 0.05;
  p /= p.sum();
  return p;
}

Mat conditioned_rows(Rng& rng, int b, int c) {
  Mat rows(b, c);
  for (int i = 0; i < b; ++i) rows.row(i) = conditioned_simplex(rng, c).transpose();
  return rows;
}

// Logit rows whose smallest two entries are separated, so the per-sample
// min shift stays differentiable under the probe step.
Mat conditioned_logits(Rng& rng, int b, int c, double span) {
  Mat logits(b, c);
  for (int i = 0; i < b; ++i) {
    for (;;) {
      Vec row(c);
      for (int j = 0; j < c; ++j) row[j] = span * rng.uniform();
      std::vector<double> sorted(row.data(), row.data() + c);
      std::sort(sorted.begin(), sorted.end());
      if (sorted[1] - sorted[0] > 1e-3) {
        logits.row(i) = row.transpose();
        break;
      }
    }
  }
  return logits;
}

std::vector<int> random_top_set(Rng& rng, int c, int n) {
  std::vector<int> order(static_cast<std::size_t>(c));
  std::iota(order.begin(), order.end(), 0);
  rng.shuffle(order);
  order.resize(static_cast<std::size_t>(n));
  return order;
}

Mat one_hot_rows(int c) {
  Mat rows = Mat::Zero(c, c);
  for (int i = 0; i < c; ++i) rows(i, i) = 1.0;
  return rows;
}

constexpr double kFdEps = 1e-7;

}  // namespace

TEST_CASE("stage1_loss: perfectly correlated diverse batch gives -ln C") {
  const int c = 4;
  Mat rows = one_hot_rows(c);
  CHECK(stage1_loss(rows, rows) == doctest::Approx(-std::log(4.0)).epsilon(1e-12));

  // Duplicating the batch leaves the joint unchanged.
  Mat doubled(2 * c, c);
  doubled << rows, rows;
  CHECK(stage1_loss(doubled, doubled) == doctest::Approx(-std::log(4.0)).epsilon(1e-12));
}

TEST_CASE("stage1_loss: independent batch (joint = outer product) gives 0") {
  Rng rng(401);
  Vec p = conditioned_simplex(rng, 5);
  Mat rows(6, 5);
  for (int i = 0; i < 6; ++i) rows.row(i) = p.transpose();
  CHECK(std::abs(stage1_loss(rows, rows)) < 1e-12);
}

TEST_CASE("stage1_loss: matches the core_math oracle on random batches") {
  Rng rng(402);
  for (int t = 0; t < 100; ++t) {
    const int b = 2 + static_cast<int>(rng.below(7));
    const int c = 2 + static_cast<int>(rng.below(4));
    Mat p = testutil::random_prob_rows(rng, b, c);
    Mat q = testutil::random_prob_rows(rng, b, c);
    const double expected = -mutual_information(batch_joint(p, q));
    CHECK(stage1_loss(p, q) == doctest::Approx(expected).epsilon(1e-12));
    // Lower bound: -MI >= -ln C.
    CHECK(stage1_loss(p, q) >= -std::log(static_cast<double>(c)) - 1e-12);
  }
}

TEST_CASE("stage1_loss: teacher gradient matches central finite differences") {
  Rng rng(403);
  for (int t = 0; t < 50; ++t) {
    const int b = 2 + static_cast<int>(rng.below(7));
    const int c = 3 + static_cast<int>(rng.below(3));
    Mat p = conditioned_rows(rng, b, c);
    Mat q = conditioned_rows(rng, b, c);
    Mat d_q;
    stage1_loss(p, q, &d_q);
    auto f = [&]() { return stage1_loss(p, q); };
    Vec fd = testutil::central_diff(f, q.data(), b * c, kFdEps);
    Vec analytic = Eigen::Map<Vec>(d_q.data(), b * c);
    CHECK(testutil::max_rel_err(analytic, fd) < 1e-4);
  }
}

TEST_CASE("pc_loss: equals -MI plus alpha * KL(mean prediction, uniform)") {
  Rng rng(404);
  for (int t = 0; t < 50; ++t) {
    const int b = 2 + static_cast<int>(rng.below(7));
    const int c = 2 + static_cast<int>(rng.below(4));
    Mat p = testutil::random_prob_rows(rng, b, c);
    Mat q = testutil::random_prob_rows(rng, b, c);
    const double alpha = 0.25 + rng.uniform();
    const Vec mean = p.colwise().mean().transpose();
    const Vec uniform = Vec::Constant(c, 1.0 / c);
    const double expected =
        -mutual_information(batch_joint(p, q)) + alpha * kl_divergence(mean, uniform);
    double balance = 0.0;
    CHECK(pc_loss(p, q, alpha, nullptr, &balance) == doctest::Approx(expected).epsilon(1e-10));
    CHECK(balance == doctest::Approx(kl_divergence(mean, uniform)).epsilon(1e-10));
  }
}

TEST_CASE("pc_loss: identical one-hot predictions pay the maximal balance penalty") {
  const int c = 5;
  Mat p = Mat::Zero(4, c);
  p.col(2).setOnes();
  Mat q = Mat::Constant(4, c, 1.0 / c);
  double balance = 0.0;
  pc_loss(p, q, 1.0, nullptr, &balance);
  CHECK(balance == doctest::Approx(std::log(static_cast<double>(c))).epsilon(1e-12));
}

TEST_CASE("pc_loss: balance term vanishes exactly at a uniform mean prediction") {
  const int c = 4;
  Mat p = one_hot_rows(c);  // mean is uniform
  Mat q = Mat::Constant(c, c, 1.0 / c);
  double balance = -1.0;
  pc_loss(p, q, 1.0, nullptr, &balance);
  CHECK(std::abs(balance) < 1e-12);

  // And it is strictly positive off uniform.
  Mat skew = p;
  skew.row(0) << 0.7, 0.1, 0.1, 0.1;
  pc_loss(skew, q, 1.0, nullptr, &balance);
  CHECK(balance > 1e-4);
}

TEST_CASE("pc_loss: uniform-mean diverse correlation hits -ln C exactly") {
  const int c = 4;
  Mat rows = one_hot_rows(c);
  double balance = 0.0;
  const double loss = pc_loss(rows, rows, 1.0, nullptr, &balance);
  CHECK(loss == doctest::Approx(-std::log(4.0)).epsilon(1e-12));
  CHECK(std::abs(balance) < 1e-12);
}

TEST_CASE("pc_loss: target gradient matches central finite differences") {
  Rng rng(405);
  for (int t = 0; t < 50; ++t) {
    const int b = 2 + static_cast<int>(rng.below(7));
    const int c = 3 + static_cast<int>(rng.below(3));
    Mat p = conditioned_rows(rng, b, c);
    Mat q = conditioned_rows(rng, b, c);
    const double alpha = (t % 5 == 0) ? 0.0 : 0.25 + rng.uniform();
    Mat d_p;
    pc_loss(p, q, alpha, &d_p);
    auto f = [&]() { return pc_loss(p, q, alpha); };
    Vec fd = testutil::central_diff(f, p.data(), b * c, kFdEps);
    Vec analytic = Eigen::Map<Vec>(d_p.data(), b * c);
    CHECK(testutil::max_rel_err(analytic, fd) < 1e-4);
  }
}

TEST_CASE("pc_loss: empty batch returns 0") {
  Mat empty(0, 4);
  double balance = -1.0;
  CHECK(pc_loss(empty, empty, 1.0, nullptr, &balance) == 0.0);
  CHECK(balance == 0.0);
}

TEST_CASE("cac_loss: worked single-sample value at iota = 0.1") {
  // l = (2,1,0), M = {0,1}: a = 2, b = 3, shifted scores (a/i, b*l_j/i) = (20, 0).
  Mat logits(1, 3);
  logits << 2.0, 1.0, 0.0;
  std::vector<std::vector<int>> tops = {{0, 1}};
  const double expected = std::log1p(std::exp(-20.0));
  CHECK(cac_loss(logits, tops, 0.1) == doctest::Approx(expected).epsilon(1e-12));

  // Literal (as-printed) form drops the positive score from the denominator.
  CHECK(cac_loss(logits, tops, 0.1, CacForm::kLiteral) == doctest::Approx(-20.0).epsilon(1e-12));
}

TEST_CASE("cac_loss: batch value is the sample mean") {
  Mat logits(2, 3);
  logits << 2.0, 1.0, 0.0, 1.0, 0.5, 0.0;
  std::vector<std::vector<int>> tops = {{0, 1}, {0, 1}};
  // Second row: shifted = (1, 0.5, 0), a = 0.5, b = 1.5 -> s0 = 5, s_neg = 0.
  const double t1 = std::log1p(std::exp(-20.0));
  const double t2 = std::log1p(std::exp(-5.0));
  CHECK(cac_loss(logits, tops, 0.1) == doctest::Approx(0.5 * (t1 + t2)).epsilon(1e-12));
}

TEST_CASE("cac_loss: raising an excluded logit raises the loss") {
  Mat base(1, 4);
  base << 1.2, 0.9, 0.3, 0.0;
  std::vector<std::vector<int>> tops = {{0, 1}};
  const double before = cac_loss(base, tops, 0.1);
  for (double bump : {0.1, 0.3, 0.5}) {
    Mat raised = base;
    raised(0, 2) += bump;
    CHECK(cac_loss(raised, tops, 0.1) > before);
  }
}

TEST_CASE("cac_loss: shift invariance of the per-sample scores") {
  Rng rng(406);
  Mat logits = conditioned_logits(rng, 3, 5, 1.5);
  std::vector<std::vector<int>> tops;
  for (int i = 0; i < 3; ++i) tops.push_back(random_top_set(rng, 5, 2));
  const double base = cac_loss(logits, tops, 0.1);
  Mat shifted = logits.array() + 7.25;
  CHECK(cac_loss(shifted, tops, 0.1) == doctest::Approx(base).epsilon(1e-9));
}

TEST_CASE("cac_loss: gradient matches central finite differences") {
  Rng rng(407);
  for (int t = 0; t < 50; ++t) {
    const int b = 1 + static_cast<int>(rng.below(4));
    const int c = 4 + static_cast<int>(rng.below(3));
    // Alternate between gentle and saturating score magnitudes.
    const double span = (t % 2 == 0) ? 1.2 : 2.5;
    Mat logits = conditioned_logits(rng, b, c, span);
    std::vector<std::vector<int>> tops;
    for (int i = 0; i < b; ++i) {
      tops.push_back(random_top_set(rng, c, 1 + static_cast<int>(rng.below(2))));
    }
    const CacForm form = (t % 3 == 0) ? CacForm::kLiteral : CacForm::kStandard;
    Mat d;
    cac_loss(logits, tops, 0.1, form, &d);
    auto f = [&]() { return cac_loss(logits, tops, 0.1, form); };
    Vec fd = testutil::central_diff(f, logits.data(), b * c, kFdEps);
    Vec analytic = Eigen::Map<Vec>(d.data(), b * c);
    CHECK(testutil::max_rel_err(analytic, fd) < 1e-4);
    // Shift invariance shows up as zero row sums of the gradient.
    for (int i = 0; i < b; ++i) CHECK(std::abs(d.row(i).sum()) < 1e-8);
  }
}

TEST_CASE("cac_loss: a gradient step widens the top-set margin") {
  Rng rng(408);
  for (int t = 0; t < 40; ++t) {
    const int c = 4 + static_cast<int>(rng.below(3));
    // Realistic setup: the attended set is the model's own current top-2,
    // with moderate magnitudes so the scores are not fully saturated.
    Vec row(c);
    for (;;) {
      for (int j = 0; j < c; ++j) row[j] = 1.5 * rng.uniform();
      std::vector<double> sorted(row.data(), row.data() + c);
      std::sort(sorted.begin(), sorted.end());
      bool ok = true;
      for (std::size_t k = 1; k < sorted.size(); ++k) {
        if (sorted[k] - sorted[k - 1] < 0.05) ok = false;
      }
      if (ok) break;
    }
    std::vector<int> order(static_cast<std::size_t>(c));
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](int a, int b2) { return row[a] > row[b2]; });
    std::vector<std::vector<int>> tops = {{order[0], order[1]}};

    Mat logits(1, c);
    logits.row(0) = row.transpose();
    Mat d;
    cac_loss(logits, tops, 0.1, CacForm::kStandard, &d);

    auto margin = [&](const Mat& l) {
      double top_min = std::min(l(0, order[0]), l(0, order[1]));
      double other_max = -1e300;
      for (int j = 0; j < c; ++j) {
        if (j != order[0] && j != order[1]) other_max = std::max(other_max, l(0, j));
      }
      return top_min - other_max;
    };

    Mat stepped = logits - 1e-3 * d;
    CHECK(margin(stepped) > margin(logits));
  }
}

TEST_CASE("cac_loss: input validation") {
  Mat logits(1, 3);
  logits << 2.0, 1.0, 0.0;
  CHECK_THROWS_AS(cac_loss(logits, {}, 0.1), std::invalid_argument);
  CHECK_THROWS_AS(cac_loss(logits, {{0, 1, 2}}, 0.1), std::invalid_argument);  // no negatives
  CHECK_THROWS_AS(cac_loss(logits, {{0, 0}}, 0.1), std::invalid_argument);
  CHECK_THROWS_AS(cac_loss(logits, {{0, 3}}, 0.1), std::invalid_argument);
  CHECK_THROWS_AS(cac_loss(logits, {{}}, 0.1), std::invalid_argument);
  CHECK_THROWS_AS(cac_loss(logits, {{0, 1}}, 0.0), std::invalid_argument);
}

TEST_CASE("rc_loss: mean of the supplied uncertainties") {
  Vec u(4);
  u << 0.3, 0.3, 0.3, 0.3;
  CHECK(rc_loss(u) == doctest::Approx(0.3).epsilon(1e-12));

  Vec single(1);
  single << -0.17;
  CHECK(rc_loss(single) == doctest::Approx(-0.17).epsilon(1e-12));

  CHECK(rc_loss(Vec(0)) == 0.0);
}

TEST_CASE("rc_loss: probability form matches entropy minus reference") {
  Rng rng(409);
  for (int t = 0; t < 30; ++t) {
    const int g = 1 + static_cast<int>(rng.below(6));
    const int c = 3 + static_cast<int>(rng.below(3));
    Mat probs = testutil::random_prob_rows(rng, g, c);
    Vec rho(g);
    for (int i = 0; i < g; ++i) rho[i] = rng.uniform() * std::log(static_cast<double>(c));
    Vec u(g);
    for (int i = 0; i < g; ++i) u[i] = entropy(probs.row(i).transpose()) - rho[i];
    CHECK(rc_loss(probs, rho) == doctest::Approx(rc_loss(u)).epsilon(1e-12));
  }
}

TEST_CASE("rc_loss: gradient matches the entropy finite-difference oracle") {
  Rng rng(410);
  for (int t = 0; t < 50; ++t) {
    const int g = 1 + static_cast<int>(rng.below(6));
    const int c = 3 + static_cast<int>(rng.below(3));
    Mat probs = conditioned_rows(rng, g, c);
    Vec rho = Vec::Constant(g, 0.2);
    Mat d;
    rc_loss(probs, rho, &d);
    auto f = [&]() { return rc_loss(probs, rho); };
    Vec fd = testutil::central_diff(f, probs.data(), g * c, kFdEps);
    Vec analytic = Eigen::Map<Vec>(d.data(), g * c);
    CHECK(testutil::max_rel_err(analytic, fd) < 1e-4);
  }
}

TEST_CASE("stage2_loss: breakdown composes exactly per the weights") {
  Rng rng(411);
  for (int t = 0; t < 30; ++t) {
    const int b = 3 + static_cast<int>(rng.below(4));
    const int c = 3 + static_cast<int>(rng.below(3));
    Stage2Inputs in;
    in.batch_logits = conditioned_logits(rng, b, c, 1.5);
    in.batch_probs = softmax_rows(in.batch_logits);
    in.batch_vil = conditioned_rows(rng, b, c);
    in.rho_batch = Vec::Constant(b, 0.1);
    for (int i = 0; i < b; ++i) {
      if (rng.uniform() < 0.7) {
        in.gap.push_back(i);
        in.gap_tops.push_back(random_top_set(rng, c, 2));
      }
    }
    ObjectiveWeights w;
    w.pc_scope = (t % 2 == 0) ? PcScope::kGap : PcScope::kAll;
    const LossBreakdown bd = stage2_loss(in, w);
    CHECK(bd.stage2 == bd.pc + w.beta * bd.cac + w.eta * bd.rc);
    CHECK(bd.gap_fraction >= 0.0);
    CHECK(bd.gap_fraction <= 1.0);
    CHECK(bd.gap_fraction ==
          doctest::Approx(static_cast<double>(in.gap.size()) / b).epsilon(1e-12));

    // beta = eta = 0 reduces the composite to the consistency term.
    ObjectiveWeights plain = w;
    plain.beta = 0.0;
    plain.eta = 0.0;
    const LossBreakdown only_pc = stage2_loss(in, plain);
    CHECK(only_pc.stage2 == only_pc.pc);

    // Linearity in the cac component: d stage2 / d cac == beta.
    if (!in.gap.empty() && bd.cac != 0.0) {
      ObjectiveWeights boosted = w;
      boosted.beta = w.beta + 0.5;
      const LossBreakdown bd2 = stage2_loss(in, boosted);
      CHECK(bd2.stage2 - bd.stage2 == doctest::Approx(0.5 * bd.cac).epsilon(1e-9));
    }
  }
}

TEST_CASE("stage2_loss: weighted-sum arithmetic (pc=1, cac=2, rc=3 -> 1.95)") {
  // The composition rule itself, checked at the documented default weights.
  ObjectiveWeights w;
  CHECK(w.beta == 0.4);
  CHECK(w.eta == 0.05);
  CHECK(1.0 + w.beta * 2.0 + w.eta * 3.0 == doctest::Approx(1.95).epsilon(1e-12));
}

TEST_CASE("stage2_loss: empty gap under gap scope is a flagged zero with zero gradient") {
  Rng rng(412);
  const int b = 4, c = 4;
  Stage2Inputs in;
  in.batch_logits = conditioned_logits(rng, b, c, 1.5);
  in.batch_probs = softmax_rows(in.batch_logits);
  in.batch_vil = conditioned_rows(rng, b, c);
  in.rho_batch = Vec::Constant(b, 0.1);

  ObjectiveWeights w;
  w.pc_scope = PcScope::kGap;
  Mat d;
  const LossBreakdown bd = stage2_loss(in, w, &d);
  CHECK(bd.gap_empty);
  CHECK(bd.stage2 == 0.0);
  CHECK(bd.pc == 0.0);
  CHECK(bd.cac == 0.0);
  CHECK(bd.rc == 0.0);
  CHECK(bd.gap_fraction == 0.0);
  CHECK(d.cwiseAbs().maxCoeff() == 0.0);

  // Widening the consistency scope keeps training signal alive without a gap.
  ObjectiveWeights wide = w;
  wide.pc_scope = PcScope::kAll;
  Mat d_wide;
  const LossBreakdown bd_wide = stage2_loss(in, wide, &d_wide);
  CHECK(bd_wide.gap_empty);
  CHECK(bd_wide.pc != 0.0);
  CHECK(bd_wide.stage2 == bd_wide.pc);
  CHECK(d_wide.cwiseAbs().maxCoeff() > 0.0);
}

TEST_CASE("stage2_loss: logit gradient matches central finite differences end to end") {
  Rng rng(413);
  for (int t = 0; t < 50; ++t) {
    const int b = 2 + static_cast<int>(rng.below(5));
    const int c = 3 + static_cast<int>(rng.below(3));
    Stage2Inputs in;
    in.batch_logits = conditioned_logits(rng, b, c, 1.5);
    in.batch_probs = softmax_rows(in.batch_logits);
    in.batch_vil = conditioned_rows(rng, b, c);
    in.rho_batch = Vec(b);
    for (int i = 0; i < b; ++i) in.rho_batch[i] = rng.uniform() * std::log(static_cast<double>(c));
    for (int i = 0; i < b; ++i) {
      if (t % 7 == 0) continue;  // keep some batches gap-free
      if (rng.uniform() < 0.6) {
        in.gap.push_back(i);
        in.gap_tops.push_back(random_top_set(rng, c, 1 + static_cast<int>(rng.below(2))));
      }
    }
    ObjectiveWeights w;
    w.pc_scope = (t % 2 == 0) ? PcScope::kGap : PcScope::kAll;
    w.cac_form = (t % 3 == 0) ? CacForm::kLiteral : CacForm::kStandard;

    Mat d;
    stage2_loss(in, w, &d);
    auto f = [&]() {
      Stage2Inputs probe = in;
      probe.batch_probs = softmax_rows(probe.batch_logits);
      return stage2_loss(probe, w).stage2;
    };
    Vec fd = testutil::central_diff(f, in.batch_logits.data(), b * c, kFdEps);
    Vec analytic = Eigen::Map<Vec>(d.data(), b * c);
    CHECK(testutil::max_rel_err(analytic, fd) < 1e-4);
  }
}

TEST_CASE("stage2_loss: input validation") {
  Stage2Inputs in;
  in.batch_logits = Mat::Zero(2, 3);
  in.batch_probs = Mat::Constant(2, 3, 1.0 / 3.0);
  in.batch_vil = Mat::Constant(2, 3, 1.0 / 3.0);
  in.rho_batch = Vec::Zero(2);
  in.gap = {0, 5};
  in.gap_tops = {{0, 1}, {0, 1}};
  ObjectiveWeights w;
  CHECK_THROWS_AS(stage2_loss(in, w), std::invalid_argument);

  in.gap = {0};
  CHECK_THROWS_AS(stage2_loss(in, w), std::invalid_argument);  // tops count mismatch

  in.gap_tops = {{0, 1}};
  in.rho_batch = Vec::Zero(3);
  CHECK_THROWS_AS(stage2_loss(in, w), std::invalid_argument);
}
