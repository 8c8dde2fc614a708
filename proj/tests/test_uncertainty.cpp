#include <gtest/gtest.h>

#include <numeric>
#include <sstream>

#include "fixtures.hpp"
#include "oracles.hpp"
#include "ucr/uncertainty.hpp"

using namespace ucr;

namespace {

// smallest order whose binomial tail reaches 1-delta, scanned directly
int order_oracle(int n_total, double eps, double delta) {
  for (int n = 1; n <= n_total; ++n)
    if (oracles::binom_cdf(n_total, n - 1, 1.0L - (long double)eps) >=
        1.0L - (long double)delta)
      return n;
  return -1;
}

std::vector<Eigen::VectorXd> draw_errors(Rng& rng, int count, int dim,
                                         double spread = 1.0) {
  std::vector<Eigen::VectorXd> out;
  out.reserve(count);
  for (int i = 0; i < count; ++i) {
    Eigen::VectorXd v(dim);
    for (int j = 0; j < dim; ++j) v(j) = spread * rng.normal();
    out.push_back(std::move(v));
  }
  return out;
}

}  // namespace

TEST(Calibration, MinimalSizes) {
  EXPECT_EQ(minimal_calibration_size(0.05, 0.05), 59);
  EXPECT_EQ(minimal_calibration_size(0.5, 0.5), 1);
  EXPECT_EQ(minimal_calibration_size(0.1, 0.05), 29);
  EXPECT_THROW(minimal_calibration_size(0.0, 0.05), std::exception);
  EXPECT_THROW(minimal_calibration_size(0.05, 1.0), std::exception);
}

TEST(Calibration, MinimalSizeIsTight) {
  for (double eps : {0.03, 0.1, 0.25})
    for (double delta : {0.02, 0.1, 0.4}) {
      const int n = minimal_calibration_size(eps, delta);
      EXPECT_LE(std::pow(1.0 - eps, n), delta);
      if (n > 1) EXPECT_GT(std::pow(1.0 - eps, n - 1), delta);
    }
}

TEST(Calibration, OrderIndexMatchesBinomialOracle) {
  for (int n : {1, 5, 29, 59, 80, 124, 200})
    for (double eps : {0.05, 0.1, 0.2})
      for (double delta : {0.05, 0.1}) {
        const int expected = order_oracle(n, eps, delta);
        if (expected < 0) {
          EXPECT_THROW(quantile_order_index(n, eps, delta), std::exception)
              << "N=" << n << " eps=" << eps << " delta=" << delta;
        } else {
          EXPECT_EQ(quantile_order_index(n, eps, delta), expected)
              << "N=" << n << " eps=" << eps << " delta=" << delta;
        }
      }
}

TEST(Calibration, KnownOrderValues) {
  EXPECT_EQ(quantile_order_index(59, 0.05, 0.05), 59);
  EXPECT_EQ(quantile_order_index(1, 0.5, 0.5), 1);
  // at the minimal N the whole sample is needed even for tiny eps
  const int n = minimal_calibration_size(0.001, 0.05);
  EXPECT_EQ(quantile_order_index(n, 0.001, 0.05), n);
}

TEST(Calibration, OrderIndexMonotone) {
  const int n = 120;
  EXPECT_GE(quantile_order_index(n, 0.05, 0.05),
            quantile_order_index(n, 0.1, 0.05));
  EXPECT_GE(quantile_order_index(n, 0.1, 0.05),
            quantile_order_index(n, 0.2, 0.05));
  EXPECT_GE(quantile_order_index(n, 0.1, 0.05),
            quantile_order_index(n, 0.1, 0.2));
  EXPECT_GE(minimal_calibration_size(0.05, 0.05),
            minimal_calibration_size(0.1, 0.05));
  EXPECT_GE(minimal_calibration_size(0.1, 0.05),
            minimal_calibration_size(0.1, 0.2));
}

TEST(Moments, HandExample) {
  std::vector<Eigen::VectorXd> s;
  for (double v : {1.0, 2.0, 3.0}) {
    Eigen::VectorXd x(1);
    x(0) = v;
    s.push_back(x);
  }
  auto [mu, sigma] = sample_moments(s);
  EXPECT_NEAR(mu(0), 2.0, 1e-15);
  EXPECT_NEAR(sigma(0, 0), 1.0, 1e-15);
}

TEST(Moments, MatchTwoPassOracle) {
  Rng rng(1234);
  const int n = 40, d = 4;
  auto s = draw_errors(rng, n, d, 2.5);
  auto [mu, sigma] = sample_moments(s);

  Eigen::MatrixXd stacked(n, d);
  for (int i = 0; i < n; ++i) stacked.row(i) = s[i].transpose();
  Eigen::VectorXd mu2 = stacked.colwise().mean();
  Eigen::MatrixXd centered = stacked.rowwise() - mu2.transpose();
  Eigen::MatrixXd sigma2 = centered.transpose() * centered / (n - 1);

  EXPECT_LT((mu - mu2).cwiseAbs().maxCoeff(), 1e-10);
  EXPECT_LT((sigma - sigma2).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(Moments, IdenticalSamplesGetAbsoluteJitter) {
  Eigen::VectorXd v(2);
  v << 2.0, 3.0;
  std::vector<Eigen::VectorXd> s(5, v);
  auto [mu, sigma] = sample_moments(s);
  EXPECT_EQ(mu, v);
  EXPECT_NEAR(sigma(0, 0), 1e-6, 1e-18);
  EXPECT_NEAR(sigma(1, 1), 1e-6, 1e-18);
  SpdFactor fac(sigma);  // must be positive definite
  EXPECT_NEAR(fac.quad(Eigen::VectorXd::Zero(2)), 0.0, 1e-15);
}

TEST(Moments, DegenerateDirectionGetsRelativeRidge) {
  // all samples on a line: rank one covariance before the ridge
  std::vector<Eigen::VectorXd> s;
  for (double t : {-2.0, -1.0, 0.0, 1.0, 2.0}) {
    Eigen::VectorXd x(2);
    x << t, 2.0 * t;
    s.push_back(x);
  }
  auto [mu, sigma] = sample_moments(s);
  (void)mu;
  SpdFactor fac(sigma);
  Eigen::VectorXd ortho(2);
  ortho << 2.0, -1.0;  // perpendicular to the sample line
  EXPECT_GT(fac.quad(ortho), 0.0);
  auto eig = symmetric_eigen(sigma);
  EXPECT_GT(eig.values(1), 0.0);
}

TEST(Moments, RadiiMatchDirectSolve) {
  Rng rng(77);
  const int d = 3;
  auto s = draw_errors(rng, 30, d);
  auto [mu, sigma] = sample_moments(s);
  auto a = radius_values(mu, sigma, s);
  Eigen::LLT<Eigen::MatrixXd> llt(sigma);
  for (int i = 0; i < 30; ++i) {
    const Eigen::VectorXd r = s[i] - mu;
    const double direct = r.dot(llt.solve(r));
    EXPECT_NEAR(a[i], direct, 1e-9 * (1.0 + direct));
  }
}

TEST(Order, NthSmallest) {
  std::vector<double> v(100);
  std::iota(v.begin(), v.end(), 1.0);
  Rng rng(5);
  for (int i = 99; i > 0; --i)
    std::swap(v[i], v[rng.uniform_int(0, i)]);
  EXPECT_EQ(nth_smallest(v, 95), 95.0);
  EXPECT_EQ(nth_smallest(v, 1), 1.0);
  EXPECT_EQ(nth_smallest(v, 100), 100.0);
  EXPECT_THROW(nth_smallest(v, 0), std::exception);
  EXPECT_THROW(nth_smallest(v, 101), std::exception);
}

TEST(Order, InfinitySortsLast) {
  std::vector<double> v{3.0, kInf, 1.0, 2.0};
  EXPECT_EQ(nth_smallest(v, 3), 3.0);
  EXPECT_EQ(nth_smallest(v, 4), kInf);
}

TEST(EllipsoidSet, FullSampleOrderCoversWholeSizeSplit) {
  Rng rng(2024);
  const int dim = 2;
  const Eigen::VectorXd uhat = Eigen::VectorXd::Constant(dim, 50.0);
  auto shape = draw_errors(rng, 40, dim);
  auto size = draw_errors(rng, 59, dim);
  auto set = build_ellipsoid_set(uhat, shape, size, 0.05, 0.05,
                                 BoxSet::unbounded(dim));
  EXPECT_EQ(set.order_index, 59);
  for (const auto& e : size) EXPECT_TRUE(set.contains(uhat + e));
  // alpha is exactly the largest calibration radius
  double worst = 0.0;
  for (const auto& e : size)
    worst = std::max(worst, set.radius_value(uhat + e));
  EXPECT_NEAR(set.alpha, worst, 1e-12 * (1.0 + worst));
}

TEST(EllipsoidSet, StaircaseCountsAreExact) {
  Rng rng(31);
  const int dim = 2, n2 = 80;
  const double eps = 0.1, delta = 0.1;
  const Eigen::VectorXd uhat = Eigen::VectorXd::Zero(dim);
  auto shape = draw_errors(rng, 40, dim);
  auto size = draw_errors(rng, n2, dim);
  auto set =
      build_ellipsoid_set(uhat, shape, size, eps, delta, BoxSet::unbounded(dim));
  const int order = quantile_order_index(n2, eps, delta);
  EXPECT_EQ(set.order_index, order);
  int inside = 0;
  for (const auto& e : size)
    if (set.radius_value(uhat + e) <= set.alpha) ++inside;
  // continuous draws make ties measure-zero, so the count is exact
  EXPECT_EQ(inside, order);
}

TEST(EllipsoidSet, SizeSplitAtTheMeanGivesZeroAlpha) {
  Rng rng(8);
  const int dim = 2;
  auto shape = draw_errors(rng, 30, dim);
  auto [mu, sigma] = sample_moments(shape);
  (void)sigma;
  std::vector<Eigen::VectorXd> size(59, mu);
  const Eigen::VectorXd uhat = Eigen::VectorXd::Zero(dim);
  auto set = build_ellipsoid_set(uhat, shape, size, 0.05, 0.05,
                                 BoxSet::unbounded(dim));
  EXPECT_NEAR(set.alpha, 0.0, 1e-18);
  EXPECT_TRUE(set.contains(uhat + mu));
}

TEST(EllipsoidSet, RejectsUndersizedCalibrationSplit) {
  Rng rng(9);
  auto shape = draw_errors(rng, 30, 2);
  auto size = draw_errors(rng, 58, 2);  // one short of the minimum
  EXPECT_THROW(build_ellipsoid_set(Eigen::VectorXd::Zero(2), shape, size, 0.05,
                                   0.05, BoxSet::unbounded(2)),
               std::exception);
}

TEST(EllipsoidSet, SymmetricAroundCenter) {
  Rng rng(12);
  auto shape = draw_errors(rng, 25, 3);
  auto size = draw_errors(rng, 59, 3);
  auto set = build_ellipsoid_set(Eigen::VectorXd::Zero(3), shape, size, 0.05,
                                 0.05, BoxSet::unbounded(3));
  Eigen::VectorXd v(3);
  v << 0.3, -0.1, 0.2;
  EXPECT_NEAR(set.radius_value(set.center + v), set.radius_value(set.center - v),
              1e-10);
}

TEST(EllipsoidSet, BoxClipsTheEllipsoid) {
  Rng rng(13);
  auto shape = draw_errors(rng, 25, 2);
  auto size = draw_errors(rng, 59, 2);
  BoxSet box;
  box.lower = Eigen::VectorXd::Constant(2, 0.0);
  box.upper = Eigen::VectorXd::Constant(2, 100.0);
  const Eigen::VectorXd uhat = Eigen::VectorXd::Constant(2, 50.0);
  auto set = build_ellipsoid_set(uhat, shape, size, 0.05, 0.05, box);
  EXPECT_TRUE(set.contains(set.center));
  Eigen::VectorXd outside = set.center;
  outside(0) = -1.0;  // below the box floor
  EXPECT_FALSE(set.contains(outside));
  // same radius inside the box is fine
  Eigen::VectorXd mirrored = set.center;
  mirrored(0) = set.center(0) + (set.center(0) - (-1.0));
  if (set.radius_value(mirrored) <= set.alpha)
    EXPECT_TRUE(set.contains(mirrored));
}

TEST(EllipsoidVariants, AllDataDominatesFraction) {
  Rng rng(14);
  auto errors = draw_errors(rng, 100, 2);
  const Eigen::VectorXd uhat = Eigen::VectorXd::Zero(2);
  auto ro1 = build_ellipsoid_variant(uhat, errors, EllipsoidMode::AllData, 0.1,
                                     BoxSet::unbounded(2));
  auto ro2 = build_ellipsoid_variant(uhat, errors, EllipsoidMode::Fraction, 0.1,
                                     BoxSet::unbounded(2));
  EXPECT_EQ(ro1.order_index, 100);
  EXPECT_EQ(ro2.order_index, 90);
  EXPECT_GE(ro1.alpha, ro2.alpha);
  for (const auto& e : errors) EXPECT_TRUE(ro1.contains(uhat + e));
  int inside = 0;
  for (const auto& e : errors)
    if (ro2.contains(uhat + e)) ++inside;
  EXPECT_EQ(inside, 90);
}

TEST(CoverageGuarantee, MonteCarloSmoke) {
  // the calibration guarantee: P[coverage >= 1-eps] >= 1-delta over calibration draws
  Rng rng(99);
  const int dim = 2, n1 = 40, n2 = 80;
  const double eps = 0.1, delta = 0.1;
  const Eigen::VectorXd uhat = Eigen::VectorXd::Zero(dim);
  auto fresh = draw_errors(rng, 2000, dim);
  int good_trials = 0;
  const int trials = 60;
  for (int trial = 0; trial < trials; ++trial) {
    auto shape = draw_errors(rng, n1, dim);
    auto size = draw_errors(rng, n2, dim);
    auto set = build_ellipsoid_set(uhat, shape, size, eps, delta,
                                   BoxSet::unbounded(dim));
    int inside = 0;
    for (const auto& e : fresh)
      if (set.radius_value(uhat + e) <= set.alpha) ++inside;
    if (inside >= static_cast<int>((1.0 - eps) * fresh.size())) ++good_trials;
  }
  // expected pass rate is at least 1-delta = 0.9; allow wide MC slack
  EXPECT_GE(good_trials, static_cast<int>(0.8 * trials));
}

TEST(CostLevelSet, ZeroErrorsGiveZeroBudget) {
  auto sys = fixtures::single_gen_system(1);
  auto cf = build_compact_form(sys);
  auto x = CommitmentSchedule::zeros(1, 1);
  x.on(0, 0) = 1.0;
  x.power(0, 0) = 50.0;
  x.res_up(0, 0) = 10.0;
  x.res_dn(0, 0) = 10.0;
  const auto xv = x.to_vector(cf.xl);
  Eigen::VectorXd uhat(1);
  uhat << 50.0;
  std::vector<Eigen::VectorXd> errors(29, Eigen::VectorXd::Zero(1));
  auto set = reconstruct_set(xv, uhat, errors, 0.1, 0.05,
                             BoxSet::unbounded(1), cf);
  EXPECT_EQ(set.beta, 0.0);
  EXPECT_TRUE(set.contains(uhat));
  Eigen::VectorXd pricey(1);
  pricey << 55.0;  // needs paid upward adjustment, cost above beta = 0
  EXPECT_FALSE(set.contains(pricey));
}

TEST(CostLevelSet, BudgetIsTheOrderStatistic) {
  auto sys = fixtures::single_gen_system(1);
  auto cf = build_compact_form(sys);
  auto x = CommitmentSchedule::zeros(1, 1);
  x.on(0, 0) = 1.0;
  x.power(0, 0) = 50.0;
  x.res_up(0, 0) = 10.0;
  x.res_dn(0, 0) = 10.0;
  const auto xv = x.to_vector(cf.xl);
  Eigen::VectorXd uhat(1);
  uhat << 50.0;
  // deviations 0.0, 0.1, ..., 2.8 cost 15 per unit of upward slack
  std::vector<Eigen::VectorXd> errors;
  for (int i = 0; i < 29; ++i) {
    Eigen::VectorXd e(1);
    e << 0.1 * i;
    errors.push_back(e);
  }
  const int order = quantile_order_index(29, 0.1, 0.05);
  ASSERT_EQ(order, 29);
  auto set = reconstruct_set(xv, uhat, errors, 0.1, 0.05,
                             BoxSet::unbounded(1), cf);
  const double up_cost = sys.generators[0].adjust_up_cost;
  EXPECT_NEAR(set.beta, up_cost * 2.8, 1e-6);
  Eigen::VectorXd cheap(1), pricey(1);
  cheap << 50.0 + 2.7;
  pricey << 50.0 + 3.5;
  EXPECT_TRUE(set.contains(cheap));
  EXPECT_FALSE(set.contains(pricey));
}

TEST(CostLevelSet, InfeasibleTailDegradesToTheBox) {
  auto sys = fixtures::single_gen_system(1);
  auto cf = build_compact_form(sys);
  auto x = CommitmentSchedule::zeros(1, 1);
  x.on(0, 0) = 1.0;
  x.power(0, 0) = 50.0;
  x.res_up(0, 0) = 10.0;
  x.res_dn(0, 0) = 10.0;
  const auto xv = x.to_vector(cf.xl);
  Eigen::VectorXd uhat(1);
  uhat << 50.0;
  std::vector<Eigen::VectorXd> errors(29, Eigen::VectorXd::Zero(1));
  errors.back()(0) = 40.0;  // past the reserve band, re-dispatch infeasible
  BoxSet box;
  box.lower = Eigen::VectorXd::Constant(1, 0.0);
  box.upper = Eigen::VectorXd::Constant(1, 200.0);
  auto set = reconstruct_set(xv, uhat, errors, 0.1, 0.05, box, cf);
  EXPECT_FALSE(std::isfinite(set.beta));
  Eigen::VectorXd far_off(1);
  far_off << 199.0;  // inside the box, hopeless for re-dispatch
  EXPECT_TRUE(set.contains(far_off));
  far_off << 201.0;
  EXPECT_FALSE(set.contains(far_off));
}

TEST(CostLevelSet, ScenarioCostMatchesHandArithmetic) {
  auto sys = fixtures::single_gen_system(1);
  auto cf = build_compact_form(sys);
  auto x = CommitmentSchedule::zeros(1, 1);
  x.on(0, 0) = 1.0;
  x.power(0, 0) = 50.0;
  x.res_up(0, 0) = 10.0;
  x.res_dn(0, 0) = 10.0;
  const auto xv = x.to_vector(cf.xl);
  Eigen::VectorXd u(1);
  u << 54.0;
  EXPECT_NEAR(scenario_cost(cf, xv, u), 15.0 * 4.0, 1e-7);
  u << 47.0;
  EXPECT_NEAR(scenario_cost(cf, xv, u), 12.0 * 3.0, 1e-7);
  u << 70.0;
  EXPECT_EQ(scenario_cost(cf, xv, u), kInf);
}

TEST(ErrorCsv, RoundTripIsExact) {
  std::vector<Eigen::VectorXd> rows;
  Eigen::VectorXd a(4), b(4);
  a << 0.1, -1.0 / 3.0, 1e-17, -42.0;
  b << 1.0, 2.0, 3.0, 0.1 + 0.2;
  rows.push_back(a);
  rows.push_back(b);
  std::stringstream ss;
  write_error_csv(ss, rows, 2, 2);
  const std::string text = ss.str();
  EXPECT_NE(text.find("day,e_b0_t0,e_b0_t1,e_b1_t0,e_b1_t1"), std::string::npos);
  std::stringstream in(text);
  auto back = read_error_csv(in, "test");
  ASSERT_EQ(back.size(), 2u);
  for (int j = 0; j < 4; ++j) {
    EXPECT_EQ(back[0](j), a(j));
    EXPECT_EQ(back[1](j), b(j));
  }
}

TEST(ErrorCsv, NamesTheBrokenRow) {
  const std::string text = "day,e_b0_t0,e_b0_t1\n0,1.0,2.0\n1,3.0\n";
  std::stringstream in(text);
  try {
    read_error_csv(in, "sample.csv");
    FAIL() << "expected a parse error";
  } catch (const std::exception& ex) {
    const std::string msg = ex.what();
    EXPECT_NE(msg.find("row 3"), std::string::npos) << msg;
    EXPECT_NE(msg.find("expected 3"), std::string::npos) << msg;
  }
}

TEST(ErrorCsv, NamesTheBrokenCell) {
  const std::string text = "day,e_b0_t0,e_b0_t1\n0,1.0,banana\n";
  std::stringstream in(text);
  try {
    read_error_csv(in, "sample.csv");
    FAIL() << "expected a parse error";
  } catch (const std::exception& ex) {
    const std::string msg = ex.what();
    EXPECT_NE(msg.find("row 2"), std::string::npos) << msg;
    EXPECT_NE(msg.find("column 3"), std::string::npos) << msg;
    EXPECT_NE(msg.find("banana"), std::string::npos) << msg;
  }
}

TEST(ErrorCsv, RejectsForeignHeader) {
  std::stringstream in(std::string("time,e_b0_t0\n0,1.0\n"));
  EXPECT_THROW(read_error_csv(in, "sample.csv"), std::exception);
}
