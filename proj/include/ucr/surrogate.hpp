#pragma once

#include <Eigen/Dense>
#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "ucr/linalg.hpp"
#include "ucr/robust.hpp"

namespace ucr {

// ---------------------------------------------------------------------------
// Forecast combination
//
// Several point forecasters produce net-load predictions for the same day.
// The commitment pipeline blends them with a simplex weight and treats the
// blend as the nominal scenario; everything downstream (set calibration,
// robust solves, the cost surrogate) is a function of that weight.

struct ForecastBundle {
  std::vector<Eigen::MatrixXd> methods;   // per-method predictions, bus x period
  std::optional<Eigen::MatrixXd> truth;   // realized net load for historical days

  int method_count() const { return static_cast<int>(methods.size()); }
  int buses() const { return methods.empty() ? 0 : static_cast<int>(methods[0].rows()); }
  int periods() const { return methods.empty() ? 0 : static_cast<int>(methods[0].cols()); }

  void validate() const {
    require(!methods.empty(), "forecast bundle: needs at least one method");
    for (const auto& m : methods)
      require(m.rows() == buses() && m.cols() == periods(),
              "forecast bundle: method dimensions disagree");
    if (truth)
      require(truth->rows() == buses() && truth->cols() == periods(),
              "forecast bundle: truth dimensions disagree");
  }
};

inline void check_weight(const Eigen::VectorXd& w, double tol = 1e-9) {
  require(w.size() >= 1, "weight: empty");
  double total = 0.0;
  for (int m = 0; m < w.size(); ++m) {
    require(w(m) >= -tol, "weight: negative entry");
    total += w(m);
  }
  require(std::abs(total - 1.0) <= tol * std::max<double>(1, w.size()),
          "weight: entries must sum to one");
}

inline Eigen::MatrixXd combine_forecasts(const ForecastBundle& bundle,
                                         const Eigen::VectorXd& w) {
  bundle.validate();
  require(w.size() == bundle.method_count(),
          "combine_forecasts: weight length must match method count");
  check_weight(w);
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(bundle.buses(), bundle.periods());
  for (int m = 0; m < w.size(); ++m) out += w(m) * bundle.methods[m];
  return out;
}

// bus-major flattening, matching the net-load index order of the compact form
inline Eigen::VectorXd flatten_rows(const Eigen::MatrixXd& m) {
  Eigen::VectorXd flat(m.rows() * m.cols());
  for (int i = 0; i < m.rows(); ++i)
    for (int t = 0; t < m.cols(); ++t) flat(i * m.cols() + t) = m(i, t);
  return flat;
}

// truth minus blended prediction, flattened; the day must be historical
inline Eigen::VectorXd combination_error(const ForecastBundle& bundle,
                                         const Eigen::VectorXd& w) {
  require(bundle.truth.has_value(), "combination_error: day has no truth");
  return flatten_rows(*bundle.truth - combine_forecasts(bundle, w));
}

// ---------------------------------------------------------------------------
// Out-of-sample cost score
//
// A fixed commitment is priced against held-out error scenarios: each one
// realizes a net load, the re-dispatch LP prices it, and the score is an
// upper quantile of the totals. Infeasible scenarios get a finite sentinel,
// the total absolute net load times the steepest adjustment price, so the
// sort stays well defined while dominating every feasible total.

inline double evaluate_strategy_cost(const CompactTwoStage& cf,
                                     const std::vector<double>& xv,
                                     const Eigen::VectorXd& uhat_flat,
                                     const std::vector<Eigen::VectorXd>& eval_errors,
                                     double eps) {
  const int n = static_cast<int>(eval_errors.size());
  require(n >= 1, "evaluate_strategy_cost: needs at least one scenario");
  require(eps >= 0.0 && eps < 1.0, "evaluate_strategy_cost: eps must be in [0,1)");
  double first_stage = 0.0;
  for (size_t j = 0; j < xv.size(); ++j) first_stage += cf.c[j] * xv[j];
  double price = 0.0;
  for (double fj : cf.f) price = std::max(price, fj);

  std::vector<double> totals;
  totals.reserve(n);
  for (const auto& err : eval_errors) {
    require(err.size() == uhat_flat.size(),
            "evaluate_strategy_cost: scenario dimension mismatch");
    const Eigen::VectorXd u = uhat_flat + err;
    const double redispatch = scenario_cost(cf, xv, u);
    if (std::isfinite(redispatch))
      totals.push_back(first_stage + redispatch);
    else
      totals.push_back(first_stage + u.cwiseAbs().sum() * price);
  }
  std::sort(totals.begin(), totals.end());
  const int rank = std::max(1, static_cast<int>(std::ceil((1.0 - eps) * n)));
  return totals[rank - 1];
}

// ---------------------------------------------------------------------------
// Principal components
//
// The prediction vectors are long (buses x periods) but move along a few
// directions, so the surrogate sees their leading projections instead. The
// decomposition reuses the deterministic Jacobi sweep, which fixes signs and
// ordering so repeated fits agree exactly.

struct PcaModel {
  Eigen::VectorXd mean;
  Eigen::MatrixXd components;  // rows are unit-length directions
  Eigen::VectorXd explained;   // variance captured by each direction

  int input_dim() const { return static_cast<int>(mean.size()); }
  int count() const { return static_cast<int>(components.rows()); }

  // centered projection, the textbook map
  Eigen::VectorXd project(const Eigen::VectorXd& x) const {
    return components * (x - mean);
  }
};

inline PcaModel fit_pca(const std::vector<Eigen::VectorXd>& samples, int count) {
  const int n = static_cast<int>(samples.size());
  require(n >= 2, "fit_pca: needs at least two samples");
  const int dim = static_cast<int>(samples[0].size());
  require(count >= 1 && count <= dim && count <= n - 1,
          "fit_pca: component count above sample support");
  Eigen::VectorXd mean = Eigen::VectorXd::Zero(dim);
  for (const auto& s : samples) {
    require(s.size() == dim, "fit_pca: sample dimensions disagree");
    mean += s;
  }
  mean /= n;
  Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(dim, dim);
  for (const auto& s : samples) {
    const Eigen::VectorXd d = s - mean;
    cov += d * d.transpose();
  }
  cov /= (n - 1);

  const auto eig = symmetric_eigen(cov);
  PcaModel out;
  out.mean = mean;
  out.components = eig.vectors.leftCols(count).transpose();
  out.explained = eig.values.head(count);
  return out;
}

// ---------------------------------------------------------------------------
// Network
//
// A small feed-forward net with rectifier hidden layers and an affine head.
// The input scaling is stored as an elementwise affine so the whole forward
// pass stays piecewise linear and can be copied into the weight search as
// mixed-integer rows.

struct MlpModel {
  Eigen::VectorXd scale_w, scale_b;       // elementwise input affine
  std::vector<Eigen::MatrixXd> weights;   // hidden layers, then the head
  std::vector<Eigen::VectorXd> biases;

  int inputs() const { return static_cast<int>(scale_w.size()); }
  int layer_count() const { return static_cast<int>(weights.size()); }
  int hidden_count() const { return layer_count() - 1; }

  void validate() const {
    require(!weights.empty() && weights.size() == biases.size(),
            "mlp: weight/bias lists disagree");
    int prev = inputs();
    for (size_t l = 0; l < weights.size(); ++l) {
      require(weights[l].cols() == prev, "mlp: chained dimensions disagree");
      require(weights[l].rows() == biases[l].size(), "mlp: bias length mismatch");
      prev = static_cast<int>(weights[l].rows());
    }
    require(prev == 1, "mlp: head must produce a single output");
  }
};

inline double mlp_forward(const MlpModel& m, const Eigen::VectorXd& raw) {
  require(raw.size() == m.inputs(), "mlp_forward: input length mismatch");
  Eigen::VectorXd v = (m.scale_w.array() * raw.array() + m.scale_b.array()).matrix();
  for (int l = 0; l < m.hidden_count(); ++l)
    v = (m.weights[l] * v + m.biases[l]).cwiseMax(0.0);
  return (m.weights.back() * v + m.biases.back())(0);
}

namespace detail {

struct MlpGradient {
  std::vector<Eigen::MatrixXd> w;
  std::vector<Eigen::VectorXd> b;
};

/* Mean squared error plus an l2 penalty on the weight matrices (biases and
   the input scaling are exempt), with reverse-mode accumulation through the
   rectifier graph. X rows are raw inputs, the scaling is applied here. */
inline std::pair<double, MlpGradient> mlp_loss_gradient(const MlpModel& m,
                                                        const Eigen::MatrixXd& X,
                                                        const Eigen::VectorXd& y,
                                                        double l2) {
  const int n = static_cast<int>(X.rows());
  const int layers = m.layer_count();
  require(n >= 1 && y.size() == n, "mlp_loss_gradient: table shape mismatch");

  MlpGradient g;
  g.w.reserve(layers);
  g.b.reserve(layers);
  for (int l = 0; l < layers; ++l) {
    g.w.push_back(Eigen::MatrixXd::Zero(m.weights[l].rows(), m.weights[l].cols()));
    g.b.push_back(Eigen::VectorXd::Zero(m.biases[l].size()));
  }

  double loss = 0.0;
  std::vector<Eigen::VectorXd> act(layers);  // post-activation per layer
  for (int r = 0; r < n; ++r) {
    Eigen::VectorXd v =
        (m.scale_w.array() * X.row(r).transpose().array() + m.scale_b.array()).matrix();
    const Eigen::VectorXd scaled = v;
    for (int l = 0; l < layers - 1; ++l) {
      act[l] = (m.weights[l] * v + m.biases[l]).cwiseMax(0.0);
      v = act[l];
    }
    const double pred = (m.weights.back() * v + m.biases.back())(0);
    const double err = pred - y(r);
    loss += err * err / n;

    // walk the layers backwards, delta starts at the squared-error slope
    Eigen::VectorXd delta = Eigen::VectorXd::Constant(1, 2.0 * err / n);
    for (int l = layers - 1; l >= 0; --l) {
      const Eigen::VectorXd& below = (l == 0) ? scaled : act[l - 1];
      g.w[l] += delta * below.transpose();
      g.b[l] += delta;
      if (l == 0) break;
      Eigen::VectorXd up = m.weights[l].transpose() * delta;
      for (int j = 0; j < up.size(); ++j)
        if (act[l - 1](j) <= 0.0) up(j) = 0.0;
      delta = up;
    }
  }

  for (int l = 0; l < layers; ++l) {
    loss += l2 * m.weights[l].squaredNorm();
    g.w[l] += 2.0 * l2 * m.weights[l];
  }
  return {loss, g};
}

}  // namespace detail

struct MlpTrainOptions {
  std::vector<int> hidden{16, 16};
  double learn_rate = 0.001;
  int epochs = 1000;
  double l2 = 1e-4;
  double val_fraction = 0.2;  // held out for the plateau stop
  int patience = 50;          // epochs without validation improvement
  std::uint64_t seed = 1;
};

struct MlpTrainReport {
  double train_loss = 0.0;  // final objective on the training split
  double val_loss = 0.0;    // best validation error, 0 when no split
  int epochs_run = 0;
  std::vector<double> epoch_loss;  // training objective per epoch
};

/* Full-batch Adam on the squared error. Targets are scaled to [0,1] during
   the fit for conditioning and the inverse is folded into the head before
   returning, so the model predicts in the original units. A validation split
   drives a plateau stop that restores the best snapshot. */
inline MlpModel train_mlp(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                          const MlpTrainOptions& opt = {},
                          MlpTrainReport* report = nullptr) {
  const int n = static_cast<int>(X.rows());
  const int d = static_cast<int>(X.cols());
  require(n >= 1 && d >= 1, "train_mlp: empty table");
  require(y.size() == n, "train_mlp: target length mismatch");

  MlpModel m;
  m.scale_w.resize(d);
  m.scale_b.resize(d);
  for (int j = 0; j < d; ++j) {
    const double lo = X.col(j).minCoeff(), hi = X.col(j).maxCoeff();
    const double span = (hi - lo > 1e-12) ? (hi - lo) : 1.0;
    m.scale_w(j) = 1.0 / span;
    m.scale_b(j) = -lo / span;
  }
  const double y_lo = y.minCoeff();
  const double y_span = (y.maxCoeff() - y_lo > 1e-12) ? (y.maxCoeff() - y_lo) : 1.0;
  const Eigen::VectorXd ys = (y.array() - y_lo) / y_span;

  Rng rng(opt.seed);
  auto glorot = [&](int rows, int cols) {
    const double limit = std::sqrt(6.0 / (rows + cols));
    Eigen::MatrixXd w(rows, cols);
    for (int i = 0; i < rows; ++i)
      for (int j = 0; j < cols; ++j) w(i, j) = rng.uniform(-limit, limit);
    return w;
  };
  int prev = d;
  for (int h : opt.hidden) {
    require(h >= 1, "train_mlp: hidden width must be positive");
    m.weights.push_back(glorot(h, prev));
    m.biases.push_back(Eigen::VectorXd::Zero(h));
    prev = h;
  }
  m.weights.push_back(glorot(1, prev));
  m.biases.push_back(Eigen::VectorXd::Zero(1));

  // split rows, validation drawn from a seeded shuffle
  std::vector<int> order(n);
  for (int i = 0; i < n; ++i) order[i] = i;
  for (int i = n - 1; i > 0; --i) std::swap(order[i], order[rng.uniform_int(0, i)]);
  const int val_n = (n >= 5) ? static_cast<int>(std::lround(opt.val_fraction * n)) : 0;
  const int train_n = n - val_n;
  require(train_n >= 1, "train_mlp: validation split leaves no training rows");
  Eigen::MatrixXd Xt(train_n, d), Xv(std::max(val_n, 1), d);
  Eigen::VectorXd yt(train_n), yv(std::max(val_n, 1));
  for (int i = 0; i < train_n; ++i) {
    Xt.row(i) = X.row(order[i]);
    yt(i) = ys(order[i]);
  }
  for (int i = 0; i < val_n; ++i) {
    Xv.row(i) = X.row(order[train_n + i]);
    yv(i) = ys(order[train_n + i]);
  }

  const int layers = m.layer_count();
  std::vector<Eigen::MatrixXd> mw(layers), vw(layers);
  std::vector<Eigen::VectorXd> mb(layers), vb(layers);
  for (int l = 0; l < layers; ++l) {
    mw[l] = Eigen::MatrixXd::Zero(m.weights[l].rows(), m.weights[l].cols());
    vw[l] = mw[l];
    mb[l] = Eigen::VectorXd::Zero(m.biases[l].size());
    vb[l] = mb[l];
  }
  const double b1 = 0.9, b2 = 0.999, tiny = 1e-8;

  auto val_error = [&]() {
    if (val_n == 0) return 0.0;
    double acc = 0.0;
    for (int i = 0; i < val_n; ++i) {
      const double e = mlp_forward(m, Xv.row(i).transpose()) - yv(i);
      acc += e * e / val_n;
    }
    return acc;
  };

  double best_val = kInf;
  std::vector<Eigen::MatrixXd> best_w = m.weights;
  std::vector<Eigen::VectorXd> best_b = m.biases;
  int stall = 0, ran = 0;
  double last_loss = 0.0;
  if (report) report->epoch_loss.clear();

  for (int epoch = 1; epoch <= opt.epochs; ++epoch) {
    auto [loss, grad] = detail::mlp_loss_gradient(m, Xt, yt, opt.l2);
    require(std::isfinite(loss),
            "train_mlp: loss diverged at epoch " + std::to_string(epoch) +
                ", lower the learning rate");
    last_loss = loss;
    ran = epoch;
    if (report) report->epoch_loss.push_back(loss);

    const double c1 = 1.0 - std::pow(b1, epoch);
    const double c2 = 1.0 - std::pow(b2, epoch);
    for (int l = 0; l < layers; ++l) {
      mw[l] = b1 * mw[l] + (1.0 - b1) * grad.w[l];
      vw[l] = b2 * vw[l] + (1.0 - b2) * grad.w[l].array().square().matrix();
      m.weights[l].array() -=
          opt.learn_rate * (mw[l].array() / c1) / ((vw[l].array() / c2).sqrt() + tiny);
      mb[l] = b1 * mb[l] + (1.0 - b1) * grad.b[l];
      vb[l] = b2 * vb[l] + (1.0 - b2) * grad.b[l].array().square().matrix();
      m.biases[l].array() -=
          opt.learn_rate * (mb[l].array() / c1) / ((vb[l].array() / c2).sqrt() + tiny);
    }

    if (val_n > 0) {
      const double ve = val_error();
      if (ve < best_val - 1e-12) {
        best_val = ve;
        best_w = m.weights;
        best_b = m.biases;
        stall = 0;
      } else if (++stall >= opt.patience) {
        break;
      }
    }
  }
  if (val_n > 0) {
    m.weights = best_w;
    m.biases = best_b;
  }

  // undo the target scaling inside the head
  m.weights.back() *= y_span;
  m.biases.back() = y_span * m.biases.back() +
                    Eigen::VectorXd::Constant(1, y_lo);
  if (report) {
    report->train_loss = last_loss;
    report->val_loss = (val_n > 0) ? best_val : 0.0;
    report->epochs_run = ran;
  }
  m.validate();
  return m;
}

// ---------------------------------------------------------------------------
// Surrogate assembly
//
// The cost surrogate maps (projected blended prediction, first weights) to
// the evaluated strategy cost. The last weight entry is dropped because the
// simplex pins it, mirroring the training table layout.

struct SurrogateModel {
  PcaModel pca;
  MlpModel mlp;
  Eigen::VectorXd input_lo, input_hi;  // raw input ranges seen in training
  int methods = 0;

  int feature_count() const { return pca.count(); }
  int input_count() const { return pca.count() + methods - 1; }
};

inline Eigen::VectorXd surrogate_inputs(const SurrogateModel& model,
                                        const ForecastBundle& bundle,
                                        const Eigen::VectorXd& w) {
  require(model.methods == bundle.method_count(),
          "surrogate_inputs: bundle method count changed");
  const Eigen::VectorXd flat = flatten_rows(combine_forecasts(bundle, w));
  require(flat.size() == model.pca.input_dim(),
          "surrogate_inputs: prediction dimension changed");
  Eigen::VectorXd in(model.input_count());
  in.head(model.feature_count()) = model.pca.components * flat;
  in.tail(model.methods - 1) = w.head(model.methods - 1);
  return in;
}

inline double surrogate_predict(const SurrogateModel& model,
                                const ForecastBundle& bundle,
                                const Eigen::VectorXd& w) {
  return mlp_forward(model.mlp, surrogate_inputs(model, bundle, w));
}

// ---------------------------------------------------------------------------
// Training table

struct TrainingRow {
  Eigen::VectorXd features;  // projections of the blended prediction
  Eigen::VectorXd w;         // full weight vector
  double cost = 0.0;         // evaluated strategy cost
};

struct TrainingTable {
  std::vector<TrainingRow> rows;

  int feature_count() const {
    return rows.empty() ? 0 : static_cast<int>(rows[0].features.size());
  }
  int method_count() const {
    return rows.empty() ? 0 : static_cast<int>(rows[0].w.size());
  }
};

struct TrainingSet {
  PcaModel pca;
  TrainingTable table;
};

// network inputs per row: features then all but the last weight entry
inline std::pair<Eigen::MatrixXd, Eigen::VectorXd> training_matrix(
    const TrainingTable& table) {
  require(!table.rows.empty(), "training_matrix: empty table");
  const int nf = table.feature_count(), nm = table.method_count();
  Eigen::MatrixXd X(static_cast<int>(table.rows.size()), nf + nm - 1);
  Eigen::VectorXd y(static_cast<int>(table.rows.size()));
  for (size_t r = 0; r < table.rows.size(); ++r) {
    const auto& row = table.rows[r];
    require(row.features.size() == nf && row.w.size() == nm,
            "training_matrix: ragged rows");
    X.row(static_cast<int>(r)).head(nf) = row.features.transpose();
    X.row(static_cast<int>(r)).tail(nm - 1) = row.w.head(nm - 1).transpose();
    y(static_cast<int>(r)) = row.cost;
  }
  return {X, y};
}

// ---------------------------------------------------------------------------
// Weight samples

// every composition of 1 at the given resolution, lexicographic
inline std::vector<Eigen::VectorXd> weight_grid(int methods, double step = 0.1) {
  require(methods >= 1, "weight_grid: needs a method");
  const int k = static_cast<int>(std::lround(1.0 / step));
  require(k >= 1 && std::abs(k * step - 1.0) <= 1e-9,
          "weight_grid: step must divide one");
  std::vector<Eigen::VectorXd> out;
  Eigen::VectorXd cur(methods);
  std::function<void(int, int)> fill = [&](int m, int left) {
    if (m == methods - 1) {
      cur(m) = static_cast<double>(left) / k;
      out.push_back(cur);
      return;
    }
    for (int take = 0; take <= left; ++take) {
      cur(m) = static_cast<double>(take) / k;
      fill(m + 1, left - take);
    }
  };
  fill(0, k);
  return out;
}

// flat Dirichlet draws via normalized exponentials, bit-stable across runs
inline std::vector<Eigen::VectorXd> weight_draws(int methods, int count,
                                                 std::uint64_t seed) {
  require(methods >= 1 && count >= 0, "weight_draws: bad sizes");
  Rng rng(seed);
  std::vector<Eigen::VectorXd> out;
  out.reserve(count);
  for (int i = 0; i < count; ++i) {
    Eigen::VectorXd w(methods);
    double total = 0.0;
    for (int m = 0; m < methods; ++m) {
      w(m) = -std::log1p(-rng.uniform());
      total += w(m);
    }
    out.push_back(total > 0 ? (w / total).eval()
                            : Eigen::VectorXd::Constant(methods, 1.0 / methods));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Training-set generation
//
// Each table row prices one (day, weight) pair end to end: blend the day's
// forecasts, calibrate the two-pass uncertainty sets from history errors
// under that weight, run the chained robust solves, then score the resulting
// commitment on a held-out scenario set. Rows are independent, so the loop
// is embarrassingly parallel if it ever needs to be.

struct TrainingSetOptions {
  double eps = 0.05, delta = 0.05;  // set-calibration knobs
  int n2 = 5;                       // history rows held out for the size pass
  double quantile_eps = 0.05;       // scoring quantile
  int components = 3;
  CcgOptions ccg;
};

inline TrainingSet generate_training_set(
    const PowerSystem& sys, const std::vector<ForecastBundle>& row_days,
    const std::vector<ForecastBundle>& history_days,
    const std::vector<ForecastBundle>& eval_days,
    const std::vector<Eigen::VectorXd>& weights, const BoxSet& error_box,
    const TrainingSetOptions& opt = {}) {
  require(!row_days.empty() && !history_days.empty() && !eval_days.empty(),
          "generate_training_set: empty day lists");
  require(!weights.empty(), "generate_training_set: no weight samples");
  const auto cf = build_compact_form(sys);

  std::vector<Eigen::VectorXd> pca_samples;
  pca_samples.reserve(row_days.size());
  for (const auto& day : row_days) {
    day.validate();
    require(day.truth.has_value(), "generate_training_set: row day has no truth");
    pca_samples.push_back(flatten_rows(*day.truth));
  }

  TrainingSet out;
  out.pca = fit_pca(pca_samples, opt.components);
  for (const auto& day : row_days) {
    for (const auto& w : weights) {
      const Eigen::MatrixXd uhat = combine_forecasts(day, w);
      std::vector<Eigen::VectorXd> calib;
      calib.reserve(history_days.size());
      for (const auto& h : history_days) calib.push_back(combination_error(h, w));
      const auto chain = run_calibrated_chain(sys, uhat, calib, opt.eps, opt.delta,
                                              opt.n2, error_box, opt.ccg);

      std::vector<Eigen::VectorXd> held;
      held.reserve(eval_days.size());
      for (const auto& e : eval_days) held.push_back(combination_error(e, w));
      const Eigen::VectorXd flat = flatten_rows(uhat);

      TrainingRow row;
      row.features = out.pca.components * flat;
      row.w = w;
      row.cost = evaluate_strategy_cost(cf, chain.x1.xv, flat, held,
                                        opt.quantile_eps);
      out.table.rows.push_back(std::move(row));
    }
  }
  return out;
}

inline SurrogateModel train_surrogate(const TrainingSet& set,
                                      const MlpTrainOptions& opt = {},
                                      MlpTrainReport* report = nullptr) {
  auto [X, y] = training_matrix(set.table);
  SurrogateModel model;
  model.pca = set.pca;
  model.methods = set.table.method_count();
  model.mlp = train_mlp(X, y, opt, report);
  model.input_lo = X.colwise().minCoeff().transpose();
  model.input_hi = X.colwise().maxCoeff().transpose();
  return model;
}

// ---------------------------------------------------------------------------
// Mixed-integer encoding
//
// The forward pass becomes rows of a mixed-integer program whose only free
// decision is the weight vector. Rectifier units use the standard on/off
// split with per-unit constants from interval propagation, so the encoding
// is exact wherever the intervals hold. Units pinned on or off by their
// interval keep their binary column fixed instead of dropping it, which
// leaves the layout uniform.

struct SurrogateMilp {
  LinearProgram lp;
  int w0 = 0, methods = 0;       // weight columns
  int pred0 = 0, pred_dim = 0;   // blended-prediction columns
  int in0 = 0, input_count = 0;  // scaled network inputs
  std::vector<int> s0, v0, z0;   // per hidden layer column offsets
  std::vector<int> widths;
  int out_col = -1;
};

inline SurrogateMilp encode_surrogate_milp(const SurrogateModel& model,
                                           const ForecastBundle& bundle) {
  bundle.validate();
  model.mlp.validate();
  const int nm = bundle.method_count();
  require(model.methods == nm, "encode_surrogate_milp: method count mismatch");
  const int nf = model.feature_count();
  const int inputs = model.input_count();
  require(model.mlp.inputs() == inputs,
          "encode_surrogate_milp: network input width mismatch");
  const int fdim = bundle.buses() * bundle.periods();
  require(model.pca.input_dim() == fdim,
          "encode_surrogate_milp: prediction dimension mismatch");

  std::vector<Eigen::VectorXd> flat;
  flat.reserve(nm);
  for (const auto& mth : bundle.methods) flat.push_back(flatten_rows(mth));

  SurrogateMilp enc;
  LinearProgram& lp = enc.lp;
  enc.methods = nm;
  enc.pred_dim = fdim;
  enc.input_count = inputs;

  enc.w0 = lp.num_cols();
  for (int m = 0; m < nm; ++m)
    lp.add_col(0.0, 1.0, 0.0, VarKind::Continuous, "w" + std::to_string(m));

  // blended prediction lives inside the per-entry envelope of the methods
  enc.pred0 = lp.num_cols();
  for (int k = 0; k < fdim; ++k) {
    double lo = flat[0](k), hi = flat[0](k);
    for (int m = 1; m < nm; ++m) {
      lo = std::min(lo, flat[m](k));
      hi = std::max(hi, flat[m](k));
    }
    lp.add_col(lo, hi, 0.0, VarKind::Continuous, "pred" + std::to_string(k));
  }
  for (int k = 0; k < fdim; ++k) {
    std::vector<std::pair<int, double>> row{{enc.pred0 + k, 1.0}};
    for (int m = 0; m < nm; ++m) row.push_back({enc.w0 + m, -flat[m](k)});
    lp.add_row(RowSense::Equal, 0.0, row, "mix" + std::to_string(k));
  }

  // scaled inputs; projection bounds come from the method hull, which is
  // exact for a convex blend and usually much tighter than entry intervals
  enc.in0 = lp.num_cols();
  for (int j = 0; j < inputs; ++j) {
    double rlo, rhi;
    if (j < nf) {
      rlo = rhi = model.pca.components.row(j).dot(flat[0]);
      for (int m = 1; m < nm; ++m) {
        const double p = model.pca.components.row(j).dot(flat[m]);
        rlo = std::min(rlo, p);
        rhi = std::max(rhi, p);
      }
    } else {
      rlo = 0.0;
      rhi = 1.0;
    }
    const double a = model.mlp.scale_w(j), b = model.mlp.scale_b(j);
    const double s0 = a * rlo + b, s1 = a * rhi + b;
    lp.add_col(std::min(s0, s1), std::max(s0, s1), 0.0, VarKind::Continuous,
               "in" + std::to_string(j));
  }
  for (int j = 0; j < inputs; ++j) {
    std::vector<std::pair<int, double>> row{{enc.in0 + j, 1.0}};
    if (j < nf) {
      for (int k = 0; k < fdim; ++k) {
        const double c = model.mlp.scale_w(j) * model.pca.components(j, k);
        if (c != 0.0) row.push_back({enc.pred0 + k, -c});
      }
      lp.add_row(RowSense::Equal, model.mlp.scale_b(j), row,
                 "feat" + std::to_string(j));
    } else {
      row.push_back({enc.w0 + (j - nf), -model.mlp.scale_w(j)});
      lp.add_row(RowSense::Equal, model.mlp.scale_b(j), row,
                 "wscale" + std::to_string(j - nf));
    }
  }

  int prev0 = enc.in0;
  const int hidden = model.mlp.hidden_count();
  for (int l = 0; l < hidden; ++l) {
    const Eigen::MatrixXd& W = model.mlp.weights[l];
    const Eigen::VectorXd& B = model.mlp.biases[l];
    const int width = static_cast<int>(W.rows());
    enc.widths.push_back(width);

    const int s_base = lp.num_cols();
    enc.s0.push_back(s_base);
    std::vector<double> mplus(width), mminus(width);
    for (int h = 0; h < width; ++h) {
      std::vector<std::pair<int, double>> expr;
      for (int p = 0; p < W.cols(); ++p)
        if (W(h, p) != 0.0) expr.push_back({prev0 + p, W(h, p)});
      auto [lo, hi] = activity_interval(lp, expr);
      lo += B(h);
      hi += B(h);
      require(std::max(std::abs(lo), std::abs(hi)) <= 1e6,
              "encode_surrogate_milp: activation interval exceeds 1e6 at layer " +
                  std::to_string(l) + " unit " + std::to_string(h) +
                  ", tighten the prediction bounds");
      mplus[h] = std::max(0.0, hi);
      mminus[h] = std::max(0.0, -lo);
      lp.add_col(lo, hi, 0.0, VarKind::Continuous,
                 "s" + std::to_string(l) + "_" + std::to_string(h));
      expr.push_back({s_base + h, -1.0});
      lp.add_row(RowSense::Equal, -B(h), expr,
                 "pre" + std::to_string(l) + "_" + std::to_string(h));
    }

    const int v_base = lp.num_cols();
    enc.v0.push_back(v_base);
    for (int h = 0; h < width; ++h)
      lp.add_col(0.0, mplus[h], 0.0, VarKind::Continuous,
                 "v" + std::to_string(l) + "_" + std::to_string(h));
    const int z_base = lp.num_cols();
    enc.z0.push_back(z_base);
    for (int h = 0; h < width; ++h) {
      // an interval with one sign settles the unit, pin its binary
      double zlo = 0.0, zhi = 1.0;
      if (lp.lower[s_base + h] >= 0.0) zlo = zhi = 1.0;
      if (lp.upper[s_base + h] <= 0.0) zlo = zhi = 0.0;
      lp.add_col(zlo, zhi, 0.0, VarKind::Binary,
                 "z" + std::to_string(l) + "_" + std::to_string(h));
    }
    for (int h = 0; h < width; ++h) {
      lp.add_row(RowSense::GreaterEqual, 0.0,
                 {{v_base + h, 1.0}, {s_base + h, -1.0}},
                 "on" + std::to_string(l) + "_" + std::to_string(h));
      lp.add_row(RowSense::LessEqual, mminus[h],
                 {{v_base + h, 1.0}, {s_base + h, -1.0}, {z_base + h, mminus[h]}},
                 "offcap" + std::to_string(l) + "_" + std::to_string(h));
      lp.add_row(RowSense::LessEqual, 0.0,
                 {{v_base + h, 1.0}, {z_base + h, -mplus[h]}},
                 "oncap" + std::to_string(l) + "_" + std::to_string(h));
    }
    prev0 = v_base;
  }

  std::vector<std::pair<int, double>> head;
  const Eigen::MatrixXd& Wh = model.mlp.weights.back();
  for (int p = 0; p < Wh.cols(); ++p)
    if (Wh(0, p) != 0.0) head.push_back({prev0 + p, Wh(0, p)});
  auto [olo, ohi] = activity_interval(lp, head);
  const double hb = model.mlp.biases.back()(0);
  enc.out_col = lp.add_col(olo + hb, ohi + hb, 0.0, VarKind::Continuous, "cost");
  head.push_back({enc.out_col, -1.0});
  lp.add_row(RowSense::Equal, -hb, head, "head");
  return enc;
}

// ---------------------------------------------------------------------------
// Weight search

struct WeightChoice {
  Eigen::VectorXd w;
  double predicted = 0.0;
  SolveReport report;
};

/* Minimizes the encoded surrogate output over the whole weight simplex. The
   branch and bound only ever touches the rectifier binaries, so the search
   space is the unit count, not the prediction dimension. */
inline WeightChoice optimize_weights(const SurrogateModel& model,
                                     const ForecastBundle& bundle,
                                     const MilpOptions& opts = {}) {
  SurrogateMilp enc = encode_surrogate_milp(model, bundle);
  std::vector<std::pair<int, double>> simplex;
  for (int m = 0; m < enc.methods; ++m) simplex.push_back({enc.w0 + m, 1.0});
  enc.lp.add_row(RowSense::Equal, 1.0, simplex, "simplex");
  enc.lp.objective[enc.out_col] = 1.0;

  const auto rep = solve_milp(enc.lp, opts);
  require(rep.status == SolveStatus::Optimal,
          "optimize_weights: weight search ended " +
              std::string(to_string(rep.status)));
  WeightChoice out;
  out.w.resize(enc.methods);
  for (int m = 0; m < enc.methods; ++m) out.w(m) = rep.primal[enc.w0 + m];
  // snap solver fuzz off the simplex before handing the weight back
  for (int m = 0; m < enc.methods; ++m) out.w(m) = std::clamp(out.w(m), 0.0, 1.0);
  out.w /= out.w.sum();
  out.predicted = rep.objective;
  out.report = rep;
  return out;
}

struct PsoOptions {
  int particles = 10;
  double inertia = 0.5;
  double cognitive = 1.0;
  double social = 1.5;
  int evaluations = 2000;  // total objective-call budget
  std::uint64_t seed = 1;
};

struct PsoResult {
  Eigen::VectorXd w;
  double value = kInf;
  int evaluations = 0;
};

/* Particle swarm over the weight simplex, the derivative-free baseline. Every
   velocity step is followed by a Euclidean projection so iterates never leave
   the simplex, and the seeded generator makes runs repeatable. */
inline PsoResult optimize_weights_pso(
    const std::function<double(const Eigen::VectorXd&)>& objective, int methods,
    const PsoOptions& opt = {}) {
  require(methods >= 1, "optimize_weights_pso: needs a method");
  require(opt.particles >= 1 && opt.evaluations >= opt.particles,
          "optimize_weights_pso: budget below one sweep");
  Rng rng(opt.seed);

  std::vector<Eigen::VectorXd> pos(opt.particles), vel(opt.particles),
      best(opt.particles);
  std::vector<double> best_val(opt.particles, kInf);
  PsoResult out;
  out.w = Eigen::VectorXd::Constant(methods, 1.0 / methods);

  for (int p = 0; p < opt.particles; ++p) {
    Eigen::VectorXd w(methods);
    double total = 0.0;
    for (int m = 0; m < methods; ++m) {
      w(m) = -std::log1p(-rng.uniform());
      total += w(m);
    }
    pos[p] = (total > 0) ? (w / total).eval()
                         : Eigen::VectorXd::Constant(methods, 1.0 / methods);
    vel[p] = Eigen::VectorXd::Zero(methods);
    best[p] = pos[p];
    best_val[p] = objective(pos[p]);
    ++out.evaluations;
    if (best_val[p] < out.value) {
      out.value = best_val[p];
      out.w = pos[p];
    }
  }

  while (out.evaluations < opt.evaluations) {
    for (int p = 0; p < opt.particles && out.evaluations < opt.evaluations; ++p) {
      for (int m = 0; m < methods; ++m) {
        const double r1 = rng.uniform();
        const double r2 = rng.uniform();
        vel[p](m) = opt.inertia * vel[p](m) +
                    opt.cognitive * r1 * (best[p](m) - pos[p](m)) +
                    opt.social * r2 * (out.w(m) - pos[p](m));
      }
      pos[p] = project_to_simplex(pos[p] + vel[p]);
      const double val = objective(pos[p]);
      ++out.evaluations;
      if (val < best_val[p]) {
        best_val[p] = val;
        best[p] = pos[p];
      }
      if (val < out.value) {
        out.value = val;
        out.w = pos[p];
      }
    }
  }
  return out;
}

/* Least-squares weight against realized loads, the accuracy-first reference
   point. Enumerates support subsets and solves each equality-constrained
   normal system; the best nonnegative candidate is the constrained optimum
   because the active support of the optimum is one of the subsets. */
inline Eigen::VectorXd mse_optimal_weight(const std::vector<ForecastBundle>& days) {
  require(!days.empty(), "mse_optimal_weight: no days");
  const int nm = days[0].method_count();
  require(nm >= 1 && nm <= 16, "mse_optimal_weight: method count out of range");
  int rows = 0;
  for (const auto& d : days) {
    d.validate();
    require(d.method_count() == nm, "mse_optimal_weight: method count changed");
    require(d.truth.has_value(), "mse_optimal_weight: day has no truth");
    rows += d.buses() * d.periods();
  }
  Eigen::MatrixXd A(rows, nm);
  Eigen::VectorXd b(rows);
  int at = 0;
  for (const auto& d : days) {
    const int n = d.buses() * d.periods();
    for (int m = 0; m < nm; ++m) A.col(m).segment(at, n) = flatten_rows(d.methods[m]);
    b.segment(at, n) = flatten_rows(*d.truth);
    at += n;
  }
  const Eigen::MatrixXd gram = A.transpose() * A;
  const Eigen::VectorXd rhs = A.transpose() * b;

  Eigen::VectorXd best = Eigen::VectorXd::Zero(nm);
  double best_obj = kInf;
  for (unsigned mask = 1; mask < (1u << nm); ++mask) {
    std::vector<int> sel;
    for (int m = 0; m < nm; ++m)
      if (mask & (1u << m)) sel.push_back(m);
    const int k = static_cast<int>(sel.size());
    Eigen::MatrixXd kkt = Eigen::MatrixXd::Zero(k + 1, k + 1);
    Eigen::VectorXd kr(k + 1);
    for (int i = 0; i < k; ++i) {
      for (int j = 0; j < k; ++j) kkt(i, j) = 2.0 * gram(sel[i], sel[j]);
      kkt(i, k) = kkt(k, i) = 1.0;
      kr(i) = 2.0 * rhs(sel[i]);
    }
    kr(k) = 1.0;
    const Eigen::VectorXd sol = kkt.colPivHouseholderQr().solve(kr);
    if (!sol.allFinite()) continue;
    double total = 0.0;
    bool ok = true;
    for (int i = 0; i < k; ++i) {
      if (sol(i) < -1e-10) ok = false;
      total += sol(i);
    }
    if (!ok || std::abs(total - 1.0) > 1e-6) continue;
    Eigen::VectorXd w = Eigen::VectorXd::Zero(nm);
    for (int i = 0; i < k; ++i) w(sel[i]) = std::max(0.0, sol(i));
    w /= w.sum();
    const double obj = (A * w - b).squaredNorm();
    if (obj < best_obj - 1e-12) {
      best_obj = obj;
      best = w;
    }
  }
  require(std::isfinite(best_obj), "mse_optimal_weight: no feasible support");
  return best;
}

// ---------------------------------------------------------------------------
// Persistence

inline nlohmann::ordered_json surrogate_to_json(const SurrogateModel& model) {
  auto vec = [](const Eigen::VectorXd& v) {
    nlohmann::ordered_json a = nlohmann::ordered_json::array();
    for (int i = 0; i < v.size(); ++i) a.push_back(v(i));
    return a;
  };
  auto mat = [&](const Eigen::MatrixXd& m) {
    nlohmann::ordered_json a = nlohmann::ordered_json::array();
    for (int i = 0; i < m.rows(); ++i) a.push_back(vec(m.row(i).transpose()));
    return a;
  };
  nlohmann::ordered_json doc;
  doc["format"] = 1;
  doc["methods"] = model.methods;
  doc["pca"] = {{"mean", vec(model.pca.mean)},
                {"components", mat(model.pca.components)},
                {"explained", vec(model.pca.explained)}};
  doc["scale"] = {{"w", vec(model.mlp.scale_w)}, {"b", vec(model.mlp.scale_b)}};
  doc["layers"] = nlohmann::ordered_json::array();
  for (size_t l = 0; l < model.mlp.weights.size(); ++l)
    doc["layers"].push_back({{"weights", mat(model.mlp.weights[l])},
                             {"bias", vec(model.mlp.biases[l])}});
  doc["input_lo"] = vec(model.input_lo);
  doc["input_hi"] = vec(model.input_hi);
  return doc;
}

inline SurrogateModel surrogate_from_json(const nlohmann::json& doc) {
  require(doc.contains("format"), "surrogate json: missing format");
  require(doc.at("format").get<int>() == 1, "surrogate json: unsupported format");
  auto vec = [](const nlohmann::json& a) {
    Eigen::VectorXd v(a.size());
    for (size_t i = 0; i < a.size(); ++i) v(static_cast<int>(i)) = a[i].get<double>();
    return v;
  };
  auto mat = [&](const nlohmann::json& a) {
    require(!a.empty(), "surrogate json: empty matrix");
    Eigen::MatrixXd m(a.size(), a[0].size());
    for (size_t i = 0; i < a.size(); ++i) {
      require(a[i].size() == a[0].size(), "surrogate json: ragged matrix");
      for (size_t j = 0; j < a[i].size(); ++j)
        m(static_cast<int>(i), static_cast<int>(j)) = a[i][j].get<double>();
    }
    return m;
  };
  SurrogateModel model;
  model.methods = doc.at("methods").get<int>();
  model.pca.mean = vec(doc.at("pca").at("mean"));
  model.pca.components = mat(doc.at("pca").at("components"));
  model.pca.explained = vec(doc.at("pca").at("explained"));
  model.mlp.scale_w = vec(doc.at("scale").at("w"));
  model.mlp.scale_b = vec(doc.at("scale").at("b"));
  for (const auto& layer : doc.at("layers")) {
    model.mlp.weights.push_back(mat(layer.at("weights")));
    model.mlp.biases.push_back(vec(layer.at("bias")));
  }
  model.input_lo = vec(doc.at("input_lo"));
  model.input_hi = vec(doc.at("input_hi"));
  model.mlp.validate();
  require(model.pca.components.cols() == model.pca.mean.size(),
          "surrogate json: component width mismatch");
  require(model.mlp.inputs() == model.input_count(),
          "surrogate json: input width mismatch");
  return model;
}

inline std::string training_table_to_csv(const TrainingTable& table) {
  require(!table.rows.empty(), "training_table_to_csv: empty table");
  const int nf = table.feature_count(), nm = table.method_count();
  std::ostringstream out;
  out.precision(17);
  for (int j = 0; j < nf; ++j) out << "d" << (j + 1) << ",";
  for (int m = 0; m < nm; ++m) out << "w" << (m + 1) << ",";
  out << "cost\n";
  for (const auto& row : table.rows) {
    require(row.features.size() == nf && row.w.size() == nm,
            "training_table_to_csv: ragged rows");
    for (int j = 0; j < nf; ++j) out << row.features(j) << ",";
    for (int m = 0; m < nm; ++m) out << row.w(m) << ",";
    out << row.cost << "\n";
  }
  return out.str();
}

inline TrainingTable training_table_from_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  require(static_cast<bool>(std::getline(in, line)), "training csv: empty input");
  auto split = [](const std::string& s) {
    std::vector<std::string> parts;
    std::string piece;
    std::istringstream ss(s);
    while (std::getline(ss, piece, ',')) parts.push_back(piece);
    return parts;
  };
  const auto header = split(line);
  int nf = 0, nm = 0;
  for (const auto& h : header) {
    if (h.rfind('d', 0) == 0) ++nf;
    else if (h.rfind('w', 0) == 0) ++nm;
  }
  require(nf >= 1 && nm >= 1 && header.size() == static_cast<size_t>(nf + nm + 1) &&
              header.back() == "cost",
          "training csv: unrecognized header");

  TrainingTable table;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto parts = split(line);
    require(parts.size() == static_cast<size_t>(nf + nm + 1),
            "training csv: row " + std::to_string(lineno) + ": expected " +
                std::to_string(nf + nm + 1) + " fields, got " +
                std::to_string(parts.size()));
    TrainingRow row;
    row.features.resize(nf);
    row.w.resize(nm);
    try {
      for (int j = 0; j < nf; ++j) row.features(j) = std::stod(parts[j]);
      for (int m = 0; m < nm; ++m) row.w(m) = std::stod(parts[nf + m]);
      row.cost = std::stod(parts[nf + nm]);
    } catch (const std::exception&) {
      fail("training csv: row " + std::to_string(lineno) + ": bad number");
    }
    table.rows.push_back(std::move(row));
  }
  require(!table.rows.empty(), "training csv: no data rows");
  return table;
}

}  // namespace ucr
