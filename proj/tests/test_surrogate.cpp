#include <gtest/gtest.h>

#include <Eigen/Dense>
#include <cmath>
#include <json.hpp>
#include <vector>

#include "fixtures.hpp"
#include "ucr/surrogate.hpp"

namespace {

using ucr::ForecastBundle;
using ucr::MlpModel;
using ucr::MlpTrainOptions;
using ucr::MlpTrainReport;
using ucr::PcaModel;
using ucr::Rng;
using ucr::SurrogateModel;
using ucr::TrainingTable;

Eigen::VectorXd vec(std::initializer_list<double> xs) {
  Eigen::VectorXd v(static_cast<int>(xs.size()));
  int i = 0;
  for (double x : xs) v(i++) = x;
  return v;
}

ForecastBundle three_method_bundle() {
  ForecastBundle b;
  Eigen::MatrixXd m0(2, 3), m1(2, 3), m2(2, 3), truth(2, 3);
  m0 << 50, 55, 60, 40, 42, 44;
  m1 << 48, 57, 59, 41, 40, 46;
  m2 << 52, 53, 62, 39, 44, 43;
  truth << 50.5, 54.8, 60.2, 40.1, 42.3, 44.2;
  b.methods = {m0, m1, m2};
  b.truth = truth;
  return b;
}

TEST(Combine, VertexWeightReturnsThatMethod) {
  auto b = three_method_bundle();
  for (int m = 0; m < 3; ++m) {
    Eigen::VectorXd w = Eigen::VectorXd::Zero(3);
    w(m) = 1.0;
    EXPECT_TRUE(ucr::combine_forecasts(b, w).isApprox(b.methods[m]));
  }
}

TEST(Combine, MatchesHandComputedBlend) {
  auto b = three_method_bundle();
  const auto w = vec({0.28, 0.23, 0.49});
  const Eigen::MatrixXd got = ucr::combine_forecasts(b, w);
  const Eigen::MatrixXd want =
      0.28 * b.methods[0] + 0.23 * b.methods[1] + 0.49 * b.methods[2];
  EXPECT_TRUE(got.isApprox(want, 1e-12));
}

TEST(Combine, StaysInsideTheMethodEnvelope) {
  auto b = three_method_bundle();
  Rng rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    Eigen::VectorXd w(3);
    double total = 0;
    for (int m = 0; m < 3; ++m) total += (w(m) = rng.uniform());
    w /= total;
    const Eigen::MatrixXd got = ucr::combine_forecasts(b, w);
    for (int i = 0; i < got.rows(); ++i)
      for (int t = 0; t < got.cols(); ++t) {
        double lo = b.methods[0](i, t), hi = lo;
        for (int m = 1; m < 3; ++m) {
          lo = std::min(lo, b.methods[m](i, t));
          hi = std::max(hi, b.methods[m](i, t));
        }
        EXPECT_GE(got(i, t), lo - 1e-12);
        EXPECT_LE(got(i, t), hi + 1e-12);
      }
  }
}

TEST(Combine, RejectsOffSimplexWeights) {
  auto b = three_method_bundle();
  EXPECT_THROW(ucr::combine_forecasts(b, vec({0.5, 0.5, 0.5})),
               std::runtime_error);
  EXPECT_THROW(ucr::combine_forecasts(b, vec({-0.2, 0.6, 0.6})),
               std::runtime_error);
}

// ---------------------------------------------------------------------------

/* The committed single generator serves 50 MW with a 10/8 reserve band, so a
   scenario u costs 15(u-50) above or 12(50-u) below, and anything outside
   [42, 60] cannot be balanced at all. */
struct ScoredCase {
  ucr::PowerSystem sys = fixtures::single_gen_system(1);
  ucr::CompactTwoStage cf = ucr::build_compact_form(sys);
  std::vector<double> xv;
  double first_stage = 0.0;

  ScoredCase() {
    xv.assign(cf.xl.size(), 0.0);
    xv[cf.xl.at(ucr::XLayout::kOn, 0, 0)] = 1.0;
    xv[cf.xl.at(ucr::XLayout::kStart, 0, 0)] = 1.0;
    xv[cf.xl.at(ucr::XLayout::kPower, 0, 0)] = 50.0;
    xv[cf.xl.at(ucr::XLayout::kResUp, 0, 0)] = 10.0;
    xv[cf.xl.at(ucr::XLayout::kResDn, 0, 0)] = 8.0;
    for (size_t j = 0; j < xv.size(); ++j) first_stage += cf.c[j] * xv[j];
  }
};

TEST(StrategyCost, QuantileRanksMatchHandSort) {
  ScoredCase c;
  const Eigen::VectorXd uhat = Eigen::VectorXd::Constant(1, 50.0);
  std::vector<Eigen::VectorXd> errors;
  for (int k = 1; k <= 20; ++k)
    errors.push_back(Eigen::VectorXd::Constant(1, 0.5 * k - 5.0));
  // totals sort by |deviation| price, compute them directly
  std::vector<double> totals;
  for (const auto& e : errors) {
    const double u = 50.0 + e(0);
    totals.push_back(c.first_stage +
                     (u >= 50.0 ? 15.0 * (u - 50.0) : 12.0 * (50.0 - u)));
  }
  std::sort(totals.begin(), totals.end());

  // eps = 0 takes the maximum, 20 scenarios at eps 0.05 take the 19th
  EXPECT_NEAR(ucr::evaluate_strategy_cost(c.cf, c.xv, uhat, errors, 0.0),
              totals[19], 1e-8);
  EXPECT_NEAR(ucr::evaluate_strategy_cost(c.cf, c.xv, uhat, errors, 0.05),
              totals[18], 1e-8);
  EXPECT_NEAR(ucr::evaluate_strategy_cost(c.cf, c.xv, uhat, errors, 0.5),
              totals[9], 1e-8);
}

TEST(StrategyCost, IdenticalScenariosCollapseToOneTotal) {
  ScoredCase c;
  const Eigen::VectorXd uhat = Eigen::VectorXd::Constant(1, 50.0);
  std::vector<Eigen::VectorXd> errors(7, Eigen::VectorXd::Constant(1, 4.0));
  const double want = c.first_stage + 15.0 * 4.0;
  EXPECT_NEAR(ucr::evaluate_strategy_cost(c.cf, c.xv, uhat, errors, 0.0), want,
              1e-8);
  EXPECT_NEAR(ucr::evaluate_strategy_cost(c.cf, c.xv, uhat, errors, 0.4), want,
              1e-8);
}

TEST(StrategyCost, InfeasibleScenarioGetsDominatingSentinel) {
  ScoredCase c;
  const Eigen::VectorXd uhat = Eigen::VectorXd::Constant(1, 50.0);
  std::vector<Eigen::VectorXd> errors{Eigen::VectorXd::Constant(1, 5.0),
                                      Eigen::VectorXd::Constant(1, 30.0)};
  // the 80 MW scenario cannot be balanced, its sentinel tops the feasible one
  const double top = ucr::evaluate_strategy_cost(c.cf, c.xv, uhat, errors, 0.0);
  EXPECT_NEAR(top, c.first_stage + 80.0 * 15.0, 1e-8);
  EXPECT_GT(top, c.first_stage + 15.0 * 5.0);
  EXPECT_TRUE(std::isfinite(top));
}

// ---------------------------------------------------------------------------

TEST(Pca, LineDataGivesParallelFirstComponent) {
  const Eigen::VectorXd dir = vec({3.0, 4.0}) / 5.0;
  std::vector<Eigen::VectorXd> samples;
  for (int k = -5; k <= 5; ++k)
    samples.push_back(vec({1.0, 2.0}) + static_cast<double>(k) * dir);
  const auto pca = ucr::fit_pca(samples, 1);
  EXPECT_NEAR(std::abs(pca.components.row(0).dot(dir)), 1.0, 1e-6);
  EXPECT_NEAR(pca.mean(0), 1.0, 1e-9);
  EXPECT_NEAR(pca.mean(1), 2.0, 1e-9);
}

TEST(Pca, ComponentsAreOrthonormalOnRandomData) {
  Rng rng(11);
  std::vector<Eigen::VectorXd> samples;
  for (int s = 0; s < 40; ++s) {
    Eigen::VectorXd x(6);
    for (int j = 0; j < 6; ++j) x(j) = rng.normal() * (1.0 + j);
    samples.push_back(x);
  }
  const auto pca = ucr::fit_pca(samples, 4);
  for (int i = 0; i < 4; ++i) {
    EXPECT_NEAR(pca.components.row(i).norm(), 1.0, 1e-8);
    for (int j = i + 1; j < 4; ++j)
      EXPECT_LE(std::abs(pca.components.row(i).dot(pca.components.row(j))),
                1e-8);
  }
  for (int i = 0; i + 1 < 4; ++i)
    EXPECT_GE(pca.explained(i), pca.explained(i + 1) - 1e-12);
}

TEST(Pca, ReconstructionErrorEqualsTrailingVariance) {
  Rng rng(13);
  std::vector<Eigen::VectorXd> samples;
  for (int s = 0; s < 60; ++s) {
    Eigen::VectorXd x(5);
    for (int j = 0; j < 5; ++j) x(j) = rng.normal() * (5.0 - j) + j;
    samples.push_back(x);
  }
  const int keep = 2;
  const auto pca = ucr::fit_pca(samples, keep);
  const auto full = ucr::fit_pca(samples, 5);

  // mean squared residual against the span equals the dropped eigenvalues,
  // both scaled by the same (n-1)/n sample factor
  double resid = 0.0;
  for (const auto& s : samples) {
    const Eigen::VectorXd d = s - pca.mean;
    resid += (d - pca.components.transpose() * (pca.components * d)).squaredNorm();
  }
  resid /= (static_cast<double>(samples.size()) - 1.0);
  const double trailing = full.explained.tail(5 - keep).sum();
  EXPECT_NEAR(resid, trailing, 1e-8 * (1.0 + trailing));
}

TEST(Pca, RefittingProjectionsReproducesTheAxes) {
  Rng rng(17);
  std::vector<Eigen::VectorXd> samples;
  for (int s = 0; s < 50; ++s) {
    Eigen::VectorXd x(6);
    for (int j = 0; j < 6; ++j) x(j) = rng.normal() * (6.0 - j);
    samples.push_back(x);
  }
  const auto pca = ucr::fit_pca(samples, 3);
  std::vector<Eigen::VectorXd> projected;
  for (const auto& s : samples) projected.push_back(pca.project(s));
  const auto again = ucr::fit_pca(projected, 3);
  // projected coordinates already sit on the principal axes
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j)
      EXPECT_NEAR(std::abs(again.components(i, j)), (i == j) ? 1.0 : 0.0, 1e-6);
}

TEST(Pca, RejectsTooManyComponents) {
  std::vector<Eigen::VectorXd> samples{vec({1, 0}), vec({0, 1}), vec({1, 1})};
  EXPECT_THROW(ucr::fit_pca(samples, 3), std::runtime_error);
}

// ---------------------------------------------------------------------------

MlpModel random_mlp(int inputs, std::vector<int> hidden, Rng& rng) {
  MlpModel m;
  m.scale_w = Eigen::VectorXd::Constant(inputs, 1.0);
  m.scale_b = Eigen::VectorXd::Zero(inputs);
  int prev = inputs;
  for (int h : hidden) {
    Eigen::MatrixXd w(h, prev);
    Eigen::VectorXd b(h);
    for (int i = 0; i < h; ++i) {
      b(i) = rng.uniform(-0.5, 0.5);
      for (int j = 0; j < prev; ++j) w(i, j) = rng.uniform(-1.0, 1.0);
    }
    m.weights.push_back(w);
    m.biases.push_back(b);
    prev = h;
  }
  Eigen::MatrixXd head(1, prev);
  for (int j = 0; j < prev; ++j) head(0, j) = rng.uniform(-1.0, 1.0);
  m.weights.push_back(head);
  m.biases.push_back(Eigen::VectorXd::Constant(1, rng.uniform(-0.5, 0.5)));
  return m;
}

// smallest pre-activation magnitude across the table; kinks break differences
double kink_distance(const MlpModel& m, const Eigen::MatrixXd& X) {
  double nearest = ucr::kInf;
  for (int r = 0; r < X.rows(); ++r) {
    Eigen::VectorXd v =
        (m.scale_w.array() * X.row(r).transpose().array() + m.scale_b.array())
            .matrix();
    for (int l = 0; l + 1 < m.layer_count(); ++l) {
      const Eigen::VectorXd s = m.weights[l] * v + m.biases[l];
      nearest = std::min(nearest, s.cwiseAbs().minCoeff());
      v = s.cwiseMax(0.0);
    }
  }
  return nearest;
}

TEST(MlpTraining, AnalyticGradientMatchesFiniteDifferences) {
  Rng rng(23);
  MlpModel m;
  Eigen::MatrixXd X;
  Eigen::VectorXd y;
  // redraw until every unit is clearly on or off for every row
  for (int attempt = 0;; ++attempt) {
    ASSERT_LT(attempt, 50);
    m = random_mlp(3, {4, 3}, rng);
    X.resize(8, 3);
    y.resize(8);
    for (int r = 0; r < 8; ++r) {
      y(r) = rng.uniform(-1.0, 1.0);
      for (int j = 0; j < 3; ++j) X(r, j) = rng.uniform(-1.0, 1.0);
    }
    if (kink_distance(m, X) > 1e-3) break;
  }

  auto [loss, grad] = ucr::detail::mlp_loss_gradient(m, X, y, 1e-4);
  ASSERT_TRUE(std::isfinite(loss));

  const double step = 1e-5;
  int checked = 0;
  while (checked < 20) {
    const int l = rng.uniform_int(0, m.layer_count() - 1);
    const int i = rng.uniform_int(0, static_cast<int>(m.weights[l].rows()) - 1);
    const int j = rng.uniform_int(0, static_cast<int>(m.weights[l].cols()) - 1);

    MlpModel up = m, dn = m;
    up.weights[l](i, j) += step;
    dn.weights[l](i, j) -= step;
    const double fu = ucr::detail::mlp_loss_gradient(up, X, y, 1e-4).first;
    const double fd = ucr::detail::mlp_loss_gradient(dn, X, y, 1e-4).first;
    const double numeric = (fu - fd) / (2.0 * step);
    const double analytic = grad.w[l](i, j);
    EXPECT_NEAR(numeric, analytic,
                1e-4 * std::max(1.0, std::abs(analytic)))
        << "layer " << l << " entry " << i << "," << j;
    ++checked;

    // every other probe hits a bias as well
    if (checked % 2 == 0) {
      MlpModel bu = m, bd = m;
      bu.biases[l](i) += step;
      bd.biases[l](i) -= step;
      const double gu = ucr::detail::mlp_loss_gradient(bu, X, y, 1e-4).first;
      const double gd = ucr::detail::mlp_loss_gradient(bd, X, y, 1e-4).first;
      EXPECT_NEAR((gu - gd) / (2.0 * step), grad.b[l](i),
                  1e-4 * std::max(1.0, std::abs(grad.b[l](i))));
    }
  }
}

TEST(MlpTraining, ConstantTargetIsLearned) {
  Rng rng(29);
  Eigen::MatrixXd X(30, 2);
  for (int r = 0; r < 30; ++r)
    for (int j = 0; j < 2; ++j) X(r, j) = rng.uniform(0.0, 1.0);
  const Eigen::VectorXd y = Eigen::VectorXd::Constant(30, 7.5);

  MlpTrainOptions opt;
  opt.hidden = {8};
  opt.epochs = 400;
  opt.seed = 5;
  const auto m = ucr::train_mlp(X, y, opt);
  for (int r = 0; r < 30; ++r)
    EXPECT_NEAR(ucr::mlp_forward(m, X.row(r).transpose()), 7.5, 0.05);
}

TEST(MlpTraining, LossDescendsEarly) {
  Rng rng(31);
  Eigen::MatrixXd X(40, 3);
  Eigen::VectorXd y(40);
  for (int r = 0; r < 40; ++r) {
    for (int j = 0; j < 3; ++j) X(r, j) = rng.uniform(0.0, 1.0);
    y(r) = X(r, 0) + 2.0 * X(r, 1) - X(r, 2) + 0.1 * rng.normal();
  }
  MlpTrainOptions opt;
  opt.epochs = 10;
  opt.val_fraction = 0.0;
  MlpTrainReport rep;
  ucr::train_mlp(X, y, opt, &rep);
  ASSERT_EQ(rep.epochs_run, 10);
  ASSERT_EQ(static_cast<int>(rep.epoch_loss.size()), 10);
  EXPECT_LT(rep.epoch_loss.back(), rep.epoch_loss.front());
}

TEST(MlpTraining, PlateauStopRestoresBestSnapshot) {
  Rng rng(37);
  Eigen::MatrixXd X(50, 2);
  Eigen::VectorXd y(50);
  for (int r = 0; r < 50; ++r) {
    for (int j = 0; j < 2; ++j) X(r, j) = rng.uniform(0.0, 1.0);
    y(r) = 3.0 * X(r, 0) - X(r, 1);
  }
  MlpTrainOptions opt;
  opt.epochs = 1000;
  opt.patience = 10;
  MlpTrainReport rep;
  const auto m = ucr::train_mlp(X, y, opt, &rep);
  EXPECT_LE(rep.epochs_run, 1000);
  // the held-out error of the returned model matches the reported best
  EXPECT_TRUE(std::isfinite(rep.val_loss));
  (void)m;
}

// ---------------------------------------------------------------------------

/* Hand surrogate over two 1x1 method predictions -1 and 2. The single hidden
   unit reads the blended prediction straight through, so its pre-activation
   spans [-1, 2] as the weight moves, and the output must be max(0, 2 - 3a)
   when the first weight is a. */
SurrogateModel straight_through_model() {
  SurrogateModel model;
  model.methods = 2;
  model.pca.mean = Eigen::VectorXd::Zero(1);
  model.pca.components = Eigen::MatrixXd::Identity(1, 1);
  model.pca.explained = Eigen::VectorXd::Ones(1);
  model.mlp.scale_w = vec({1.0, 1.0});
  model.mlp.scale_b = vec({0.0, 0.0});
  Eigen::MatrixXd w1(1, 2);
  w1 << 1.0, 0.0;
  model.mlp.weights = {w1, Eigen::MatrixXd::Identity(1, 1)};
  model.mlp.biases = {Eigen::VectorXd::Zero(1), Eigen::VectorXd::Zero(1)};
  model.input_lo = vec({-1.0, 0.0});
  model.input_hi = vec({2.0, 1.0});
  return model;
}

ForecastBundle two_scalar_bundle() {
  ForecastBundle b;
  Eigen::MatrixXd m0(1, 1), m1(1, 1);
  m0 << -1.0;
  m1 << 2.0;
  b.methods = {m0, m1};
  return b;
}

double solve_at_fixed_weight(const SurrogateModel& model,
                             const ForecastBundle& bundle,
                             const Eigen::VectorXd& w) {
  auto enc = ucr::encode_surrogate_milp(model, bundle);
  for (int m = 0; m < enc.methods; ++m)
    enc.lp.add_row(ucr::RowSense::Equal, w(m), {{enc.w0 + m, 1.0}},
                   "pin" + std::to_string(m));
  enc.lp.objective[enc.out_col] = 1.0;
  const auto rep = ucr::solve_milp(enc.lp);
  EXPECT_EQ(rep.status, ucr::SolveStatus::Optimal);
  return rep.objective;
}

TEST(Encoding, SingleRectifierTracksItsDefinition) {
  const auto model = straight_through_model();
  const auto bundle = two_scalar_bundle();
  for (double a : {0.0, 0.2, 0.4, 2.0 / 3.0, 0.7, 0.9, 1.0}) {
    const double got = solve_at_fixed_weight(model, bundle, vec({a, 1.0 - a}));
    EXPECT_NEAR(got, std::max(0.0, 2.0 - 3.0 * a), 1e-7) << "a = " << a;
  }
}

TEST(Encoding, FixedWeightSolvesMatchForwardPass) {
  // a trained-shape model with random weights over the three-method bundle
  Rng rng(41);
  const auto bundle = three_method_bundle();
  SurrogateModel model;
  model.methods = 3;
  std::vector<Eigen::VectorXd> flats;
  for (const auto& m : bundle.methods) flats.push_back(ucr::flatten_rows(m));
  std::vector<Eigen::VectorXd> samples;
  for (int s = 0; s < 12; ++s) {
    Eigen::VectorXd x(6);
    for (int j = 0; j < 6; ++j) x(j) = flats[s % 3](j) + rng.normal();
    samples.push_back(x);
  }
  model.pca = ucr::fit_pca(samples, 2);
  model.mlp = random_mlp(4, {5, 4}, rng);
  // scale by the projection hull so the network sees roughly unit inputs
  for (int j = 0; j < 2; ++j) {
    double lo = model.pca.components.row(j).dot(flats[0]), hi = lo;
    for (int m = 1; m < 3; ++m) {
      const double p = model.pca.components.row(j).dot(flats[m]);
      lo = std::min(lo, p);
      hi = std::max(hi, p);
    }
    const double span = (hi - lo > 1e-9) ? hi - lo : 1.0;
    model.mlp.scale_w(j) = 1.0 / span;
    model.mlp.scale_b(j) = -lo / span;
  }
  model.input_lo = vec({0, 0, 0, 0});
  model.input_hi = vec({1, 1, 1, 1});

  const auto ws = ucr::weight_draws(3, 100, 43);
  for (const auto& w : ws) {
    const double milp = solve_at_fixed_weight(model, bundle, w);
    const double direct = ucr::surrogate_predict(model, bundle, w);
    ASSERT_NEAR(milp, direct, 1e-5 * (1.0 + std::abs(direct)));
  }
}

TEST(Encoding, PreactivationBoundsHoldOnRandomInputs) {
  Rng rng(47);
  const auto bundle = three_method_bundle();
  const auto model = [&] {
    SurrogateModel m;
    m.methods = 3;
    std::vector<Eigen::VectorXd> samples;
    for (int s = 0; s < 10; ++s) {
      Eigen::VectorXd x(6);
      for (int j = 0; j < 6; ++j) x(j) = rng.uniform(40.0, 60.0);
      samples.push_back(x);
    }
    m.pca = ucr::fit_pca(samples, 2);
    Rng wrng(48);
    m.mlp = random_mlp(4, {6}, wrng);
    m.input_lo = vec({0, 0, 0, 0});
    m.input_hi = vec({1, 1, 1, 1});
    return m;
  }();
  const auto enc = ucr::encode_surrogate_milp(model, bundle);

  // replay forward passes over the whole simplex, bounds must contain every s
  const int s_base = enc.s0[0];
  for (int trial = 0; trial < 10000; ++trial) {
    Eigen::VectorXd w(3);
    double total = 0;
    for (int m = 0; m < 3; ++m) total += (w(m) = -std::log1p(-rng.uniform()));
    w /= total;
    const Eigen::VectorXd in = ucr::surrogate_inputs(model, bundle, w);
    const Eigen::VectorXd scaled =
        (model.mlp.scale_w.array() * in.array() + model.mlp.scale_b.array())
            .matrix();
    const Eigen::VectorXd s = model.mlp.weights[0] * scaled + model.mlp.biases[0];
    for (int h = 0; h < s.size(); ++h) {
      ASSERT_GE(s(h), enc.lp.lower[s_base + h] - 1e-9);
      ASSERT_LE(s(h), enc.lp.upper[s_base + h] + 1e-9);
    }
  }
}

TEST(Encoding, IntervalBlowupIsRejected) {
  auto model = straight_through_model();
  model.mlp.weights[0] *= 1e7;  // inflate the hidden layer past the guard
  EXPECT_THROW(ucr::encode_surrogate_milp(model, two_scalar_bundle()),
               std::runtime_error);
}

// ---------------------------------------------------------------------------

TEST(WeightSearch, BeatsEveryVertexAndTheFineGrid) {
  Rng rng(53);
  const auto bundle = three_method_bundle();
  SurrogateModel model;
  model.methods = 3;
  std::vector<Eigen::VectorXd> samples;
  for (int s = 0; s < 10; ++s) {
    Eigen::VectorXd x(6);
    for (int j = 0; j < 6; ++j) x(j) = rng.uniform(38.0, 62.0);
    samples.push_back(x);
  }
  model.pca = ucr::fit_pca(samples, 2);
  model.mlp = random_mlp(4, {6, 4}, rng);
  std::vector<Eigen::VectorXd> flats;
  for (const auto& m : bundle.methods) flats.push_back(ucr::flatten_rows(m));
  for (int j = 0; j < 2; ++j) {
    double lo = model.pca.components.row(j).dot(flats[0]), hi = lo;
    for (int m = 1; m < 3; ++m) {
      const double p = model.pca.components.row(j).dot(flats[m]);
      lo = std::min(lo, p);
      hi = std::max(hi, p);
    }
    const double span = (hi - lo > 1e-9) ? hi - lo : 1.0;
    model.mlp.scale_w(j) = 1.0 / span;
    model.mlp.scale_b(j) = -lo / span;
  }
  model.input_lo = vec({0, 0, 0, 0});
  model.input_hi = vec({1, 1, 1, 1});

  const auto best = ucr::optimize_weights(model, bundle);
  ucr::check_weight(best.w, 1e-6);

  for (int m = 0; m < 3; ++m) {
    Eigen::VectorXd w = Eigen::VectorXd::Zero(3);
    w(m) = 1.0;
    EXPECT_LE(best.predicted,
              ucr::surrogate_predict(model, bundle, w) + 1e-6);
  }
  double grid_best = ucr::kInf;
  for (const auto& w : ucr::weight_grid(3, 0.05))
    grid_best = std::min(grid_best, ucr::surrogate_predict(model, bundle, w));
  EXPECT_LE(best.predicted, grid_best + 1e-5);
  // the reported value is the forward pass at the reported weight
  EXPECT_NEAR(best.predicted, ucr::surrogate_predict(model, bundle, best.w),
              1e-5 * (1.0 + std::abs(best.predicted)));
}

TEST(WeightSearch, MonotoneModelPicksTheKnownCorner) {
  // output equals the first weight, so the optimum sits at w = (0, 1)
  SurrogateModel model;
  model.methods = 2;
  model.pca.mean = Eigen::VectorXd::Zero(1);
  model.pca.components = Eigen::MatrixXd::Zero(1, 1);
  model.pca.explained = Eigen::VectorXd::Zero(1);
  model.mlp.scale_w = vec({1.0, 1.0});
  model.mlp.scale_b = vec({0.0, 0.0});
  Eigen::MatrixXd w1(1, 2);
  w1 << 0.0, 1.0;
  model.mlp.weights = {w1, Eigen::MatrixXd::Identity(1, 1)};
  model.mlp.biases = {Eigen::VectorXd::Zero(1), Eigen::VectorXd::Zero(1)};
  model.input_lo = vec({0.0, 0.0});
  model.input_hi = vec({0.0, 1.0});

  const auto best = ucr::optimize_weights(model, two_scalar_bundle());
  EXPECT_NEAR(best.w(0), 0.0, 1e-6);
  EXPECT_NEAR(best.w(1), 1.0, 1e-6);
  EXPECT_NEAR(best.predicted, 0.0, 1e-6);
}

// ---------------------------------------------------------------------------

TEST(Pso, FindsTheProjectedQuadraticMinimum) {
  // minimize |w - c|^2 with c inside the simplex, the answer is c itself
  const Eigen::VectorXd c = vec({0.2, 0.5, 0.3});
  auto objective = [&](const Eigen::VectorXd& w) {
    return (w - c).squaredNorm();
  };
  const auto res = ucr::optimize_weights_pso(objective, 3);
  EXPECT_LE((res.w - c).lpNorm<Eigen::Infinity>(), 1e-2);
  EXPECT_EQ(res.evaluations, 2000);
}

TEST(Pso, DeterministicUnderAFixedSeed) {
  auto objective = [](const Eigen::VectorXd& w) {
    return std::pow(w(0) - 0.1, 2) + 0.5 * std::pow(w(1) - 0.6, 2);
  };
  ucr::PsoOptions opt;
  opt.evaluations = 500;
  opt.seed = 99;
  const auto a = ucr::optimize_weights_pso(objective, 3, opt);
  const auto b = ucr::optimize_weights_pso(objective, 3, opt);
  EXPECT_EQ(a.value, b.value);
  EXPECT_EQ((a.w - b.w).norm(), 0.0);
}

TEST(Pso, NeverLeavesTheSimplex) {
  int calls = 0;
  auto objective = [&](const Eigen::VectorXd& w) {
    ++calls;
    ucr::check_weight(w, 1e-9);
    return w(0);
  };
  ucr::PsoOptions opt;
  opt.evaluations = 300;
  const auto res = ucr::optimize_weights_pso(objective, 4, opt);
  EXPECT_EQ(calls, 300);
  ucr::check_weight(res.w, 1e-9);
  EXPECT_NEAR(res.w(0), res.value, 1e-12);
}

TEST(Pso, ProjectionHandlesFarPoints) {
  const auto p = ucr::project_to_simplex(vec({5.0, -3.0, 0.5}));
  ucr::check_weight(p, 1e-9);
  EXPECT_NEAR(p(0), 1.0, 1e-12);
  // projecting a simplex point is the identity
  const auto q = ucr::project_to_simplex(vec({0.25, 0.25, 0.5}));
  EXPECT_NEAR(q(0), 0.25, 1e-12);
  EXPECT_NEAR(q(2), 0.5, 1e-12);
}

// ---------------------------------------------------------------------------

TEST(MseWeight, RecoversAnInteriorBlend) {
  ForecastBundle day;
  Eigen::MatrixXd m0(2, 2), m1(2, 2);
  m0 << 10, 20, 30, 40;
  m1 << 20, 10, 50, 20;
  day.methods = {m0, m1};
  day.truth = 0.3 * m0 + 0.7 * m1;
  const auto w = ucr::mse_optimal_weight({day});
  EXPECT_NEAR(w(0), 0.3, 1e-8);
  EXPECT_NEAR(w(1), 0.7, 1e-8);
}

TEST(MseWeight, ClampsToAVertexWhenTruthSitsOutside) {
  ForecastBundle day;
  Eigen::MatrixXd m0(1, 3), m1(1, 3);
  m0 << 10, 10, 10;
  m1 << 20, 20, 20;
  day.methods = {m0, m1};
  Eigen::MatrixXd truth(1, 3);
  truth << 25, 25, 25;  // beyond both methods, best simplex point is m1
  day.truth = truth;
  const auto w = ucr::mse_optimal_weight({day});
  EXPECT_NEAR(w(0), 0.0, 1e-8);
  EXPECT_NEAR(w(1), 1.0, 1e-8);
}

// ---------------------------------------------------------------------------

TEST(WeightSamples, GridEnumeratesAllCompositions) {
  const auto grid = ucr::weight_grid(3, 0.5);
  EXPECT_EQ(static_cast<int>(grid.size()), 6);
  for (const auto& w : grid) ucr::check_weight(w);
  const auto fine = ucr::weight_grid(2, 0.1);
  EXPECT_EQ(static_cast<int>(fine.size()), 11);

  const auto draws = ucr::weight_draws(4, 50, 7);
  EXPECT_EQ(static_cast<int>(draws.size()), 50);
  for (const auto& w : draws) ucr::check_weight(w, 1e-9);
  EXPECT_EQ((ucr::weight_draws(4, 50, 7)[13] - draws[13]).norm(), 0.0);
}

// ---------------------------------------------------------------------------

TEST(TrainingSet, RowsCoverEveryDayWeightPair) {
  auto sys = fixtures::single_gen_system(2);

  auto day_at = [](double a, double b, double ta, double tb) {
    ForecastBundle d;
    Eigen::MatrixXd m0(1, 2), m1(1, 2), truth(1, 2);
    m0 << a, b;
    m1 << a + 2.0, b - 1.0;
    truth << ta, tb;
    d.methods = {m0, m1};
    d.truth = truth;
    return d;
  };
  std::vector<ForecastBundle> rows{day_at(50, 55, 51, 54),
                                   day_at(48, 57, 47, 58)};
  std::vector<ForecastBundle> history;
  for (int k = 0; k < 8; ++k)
    history.push_back(day_at(50 + k % 3, 55 - k % 2, 49.0 + 0.8 * k,
                             56.0 - 0.5 * k));
  std::vector<ForecastBundle> eval{day_at(49, 56, 50, 55),
                                   day_at(51, 54, 49.5, 55.5),
                                   day_at(50, 55, 52, 53)};
  ucr::BoxSet box;
  box.lower = Eigen::VectorXd::Constant(2, 20.0);
  box.upper = Eigen::VectorXd::Constant(2, 80.0);

  std::vector<Eigen::VectorXd> weights{vec({1.0, 0.0}), vec({0.0, 1.0}),
                                       vec({0.5, 0.5})};
  ucr::TrainingSetOptions opt;
  opt.eps = 0.3;
  opt.delta = 0.3;
  opt.n2 = 4;
  opt.quantile_eps = 0.0;
  opt.components = 1;

  const auto set =
      ucr::generate_training_set(sys, rows, history, eval, weights, box, opt);
  ASSERT_EQ(static_cast<int>(set.table.rows.size()), 6);
  EXPECT_EQ(set.table.feature_count(), 1);
  EXPECT_EQ(set.table.method_count(), 2);
  for (const auto& row : set.table.rows) {
    EXPECT_TRUE(std::isfinite(row.cost));
    EXPECT_GT(row.cost, 0.0);
  }

  // same inputs, same table, bit for bit
  const auto again =
      ucr::generate_training_set(sys, rows, history, eval, weights, box, opt);
  for (size_t r = 0; r < set.table.rows.size(); ++r) {
    EXPECT_EQ((set.table.rows[r].features - again.table.rows[r].features).norm(),
              0.0);
    EXPECT_EQ(set.table.rows[r].cost, again.table.rows[r].cost);
  }

  // the pipeline end: fit a tiny net and keep dominance over the mse weight
  ucr::MlpTrainOptions mopt;
  mopt.hidden = {4};
  mopt.epochs = 200;
  const auto model = ucr::train_surrogate(set, mopt);
  const auto pick = ucr::optimize_weights(model, rows[0]);
  const auto mse_w = ucr::mse_optimal_weight(history);
  const double at_mse = ucr::surrogate_predict(model, rows[0], mse_w);
  EXPECT_LE(pick.predicted, at_mse + 1e-5 * (1.0 + std::abs(at_mse)));
}

// ---------------------------------------------------------------------------

TEST(Persistence, SurrogateJsonRoundTrips) {
  Rng rng(61);
  SurrogateModel model;
  model.methods = 3;
  std::vector<Eigen::VectorXd> samples;
  for (int s = 0; s < 8; ++s) {
    Eigen::VectorXd x(4);
    for (int j = 0; j < 4; ++j) x(j) = rng.normal();
    samples.push_back(x);
  }
  model.pca = ucr::fit_pca(samples, 2);
  model.mlp = random_mlp(4, {5, 3}, rng);
  model.input_lo = vec({-1, -1, 0, 0});
  model.input_hi = vec({1, 1, 1, 1});

  const auto doc = ucr::surrogate_to_json(model);
  EXPECT_EQ(doc.at("format").get<int>(), 1);
  const auto back = ucr::surrogate_from_json(doc);

  Eigen::VectorXd probe(4);
  for (int t = 0; t < 25; ++t) {
    for (int j = 0; j < 4; ++j) probe(j) = rng.uniform(-1.0, 1.0);
    EXPECT_EQ(ucr::mlp_forward(model.mlp, probe),
              ucr::mlp_forward(back.mlp, probe));
  }
  EXPECT_EQ((back.pca.components - model.pca.components).norm(), 0.0);
  EXPECT_EQ((back.input_lo - model.input_lo).norm(), 0.0);

  nlohmann::json bad = doc;
  bad.erase("format");
  EXPECT_THROW(ucr::surrogate_from_json(bad), std::runtime_error);
  bad = doc;
  bad["format"] = 2;
  EXPECT_THROW(ucr::surrogate_from_json(bad), std::runtime_error);
}

TEST(Persistence, TrainingCsvRoundTrips) {
  TrainingTable table;
  Rng rng(67);
  for (int r = 0; r < 9; ++r) {
    ucr::TrainingRow row;
    row.features = vec({rng.normal() * 100.0, rng.normal()});
    row.w = vec({0.25, 0.25, 0.5});
    row.cost = 1000.0 + rng.uniform() * 500.0;
    table.rows.push_back(row);
  }
  const std::string text = ucr::training_table_to_csv(table);
  const auto back = ucr::training_table_from_csv(text);
  ASSERT_EQ(back.rows.size(), table.rows.size());
  EXPECT_EQ(back.feature_count(), 2);
  EXPECT_EQ(back.method_count(), 3);
  for (size_t r = 0; r < table.rows.size(); ++r) {
    EXPECT_EQ((back.rows[r].features - table.rows[r].features).norm(), 0.0);
    EXPECT_EQ((back.rows[r].w - table.rows[r].w).norm(), 0.0);
    EXPECT_EQ(back.rows[r].cost, table.rows[r].cost);
  }

  EXPECT_THROW(ucr::training_table_from_csv("d1,w1\n1,1\n"), std::runtime_error);
  EXPECT_THROW(ucr::training_table_from_csv("d1,w1,cost\n1,0.5\n"),
               std::runtime_error);
  EXPECT_THROW(ucr::training_table_from_csv("d1,w1,cost\n1,0.5,abc\n"),
               std::runtime_error);
}

}  // namespace
