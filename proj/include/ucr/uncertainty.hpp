#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <fstream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "ucr/linalg.hpp"
#include "ucr/simplex.hpp"
#include "ucr/system_model.hpp"

namespace ucr {

struct BoxSet {
  Eigen::VectorXd lower, upper;  // flat bus-major (bus, period) order

  static BoxSet unbounded(int dim) {
    BoxSet b;
    b.lower = Eigen::VectorXd::Constant(dim, -kInf);
    b.upper = Eigen::VectorXd::Constant(dim, kInf);
    return b;
  }

  int dim() const { return static_cast<int>(lower.size()); }

  bool contains(const Eigen::VectorXd& u, double tol = 1e-9) const {
    for (int j = 0; j < dim(); ++j)
      if (u(j) < lower(j) - tol || u(j) > upper(j) + tol) return false;
    return true;
  }
};

struct EllipsoidCapSet {
  BoxSet box;
  Eigen::VectorXd center;
  Eigen::MatrixXd sigma;
  double alpha = 0.0;
  int order_index = 0;  // n* used to pick alpha, 0 for the max-variants
  std::shared_ptr<const SpdFactor> factor;  // cached Cholesky of sigma

  void finalize() { factor = std::make_shared<SpdFactor>(sigma); }

  double radius_value(const Eigen::VectorXd& u) const {
    if (factor) return factor->quad(u - center);
    return SpdFactor(sigma).quad(u - center);
  }

  bool contains(const Eigen::VectorXd& u, double tol = 1e-9) const {
    if (!box.contains(u, tol)) return false;
    return radius_value(u) <= alpha + tol;
  }
};

struct CostLevelSet {
  BoxSet box;
  std::vector<double> anchor_x;  // compact-layout solution the level is tied to
  double beta = kInf;            // +inf degrades the set to the plain box
  CompactTwoStage compact;

  // supporting halfspace in scenario coordinates: grad'u <= rhs for members
  struct Tangent {
    Eigen::VectorXd grad;
    double rhs = 0.0;
    bool coverage = false;  // from a scenario the anchor cannot serve at all
  };
  /* Geometry the solver derives on first contact and then reuses: the per
     coordinate envelope of the level set, a scenario comfortably under the
     budget, and the tangents collected while finding both. Shared so later
     subproblems against the same set start warm. */
  struct Geometry {
    BoxSet hull;
    Eigen::VectorXd inner;
    double inner_cost = kInf;
    std::vector<Tangent> cuts;
  };
  mutable std::shared_ptr<Geometry> geom;

  bool contains(const Eigen::VectorXd& u, double tol = 1e-9) const {
    if (!box.contains(u, tol)) return false;
    if (!std::isfinite(beta)) return true;
    std::vector<double> uv(u.data(), u.data() + u.size());
    auto rep = solve_lp(redispatch_lp(compact, anchor_x, uv));
    if (rep.status != SolveStatus::Optimal) return false;
    return rep.objective <= beta + tol * (1.0 + std::abs(beta));
  }
};

// ---------------------------------------------------------------------------
// Calibration arithmetic for the coverage guarantee

// smallest N with (1-eps)^N <= delta
inline int minimal_calibration_size(double eps, double delta) {
  require(eps > 0.0 && eps < 1.0 && delta > 0.0 && delta < 1.0,
          "minimal_calibration_size: eps and delta must lie in (0,1)");
  const long double le = std::log1p(-static_cast<long double>(eps));
  const long double guess = std::log(static_cast<long double>(delta)) / le;
  int n = std::max(1, static_cast<int>(std::floor(guess)) - 2);
  while (std::pow(1.0L - static_cast<long double>(eps), n) >
         static_cast<long double>(delta))
    ++n;
  return n;
}

/* Smallest n such that sum_{m=0}^{n-1} C(N,m) (1-eps)^m eps^(N-m) >= 1-delta.
   Terms are built in the log domain and accumulated with compensated
   summation so tiny tail terms are not lost. */
inline int quantile_order_index(int n_total, double eps, double delta) {
  require(n_total >= 1, "quantile_order_index: N must be positive");
  require(eps > 0.0 && eps < 1.0 && delta > 0.0 && delta < 1.0,
          "quantile_order_index: eps and delta must lie in (0,1)");
  const long double p = 1.0L - static_cast<long double>(eps);
  const long double le = std::log(static_cast<long double>(eps));
  const long double lp = std::log(p);
  const long double lgn = std::lgamma(n_total + 1.0L);
  long double sum = 0.0L, comp = 0.0L;
  const long double target = 1.0L - static_cast<long double>(delta);
  for (int m = 0; m < n_total; ++m) {
    const long double lterm = lgn - std::lgamma(m + 1.0L) -
                              std::lgamma(n_total - m + 1.0L) + m * lp +
                              (n_total - m) * le;
    const long double term = std::exp(lterm);
    const long double y = term - comp;
    const long double t = sum + y;
    comp = (t - sum) - y;
    sum = t;
    if (sum >= target) return m + 1;
  }
  fail("quantile_order_index: no order index up to N=" +
       std::to_string(n_total) + " reaches 1-delta; N is too small");
}

// unbiased mean and covariance with the spectral ridge fallback
inline std::pair<Eigen::VectorXd, Eigen::MatrixXd> sample_moments(
    const std::vector<Eigen::VectorXd>& samples) {
  const int n = static_cast<int>(samples.size());
  require(n >= 2, "sample_moments: need at least two samples");
  const int d = static_cast<int>(samples[0].size());
  Eigen::VectorXd mu = Eigen::VectorXd::Zero(d);
  for (const auto& s : samples) {
    require(s.size() == d, "sample_moments: inconsistent dimensions");
    mu += s;
  }
  mu /= n;
  Eigen::MatrixXd sigma = Eigen::MatrixXd::Zero(d, d);
  for (const auto& s : samples) {
    const Eigen::VectorXd r = s - mu;
    sigma += r * r.transpose();
  }
  sigma /= (n - 1);

  const double trace = sigma.trace();
  const auto eig = symmetric_eigen(sigma);
  const double lam_min = eig.values(d - 1);
  if (trace <= 0.0) {
    // all samples identical: no scale to borrow, use an absolute jitter
    sigma += 1e-6 * Eigen::MatrixXd::Identity(d, d);
  } else if (lam_min < 1e-8 * trace / d) {
    sigma += (1e-6 * trace / d) * Eigen::MatrixXd::Identity(d, d);
  }
  return {mu, sigma};
}

// Mahalanobis-style radii of errors around the shape-split mean
inline std::vector<double> radius_values(const Eigen::VectorXd& mu,
                                         const Eigen::MatrixXd& sigma,
                                         const std::vector<Eigen::VectorXd>& errors) {
  SpdFactor fac(sigma);
  std::vector<double> a;
  a.reserve(errors.size());
  for (const auto& e : errors) a.push_back(fac.quad(e - mu));
  return a;
}

inline double nth_smallest(std::vector<double> v, int order_index) {
  require(order_index >= 1 && order_index <= static_cast<int>(v.size()),
          "nth_smallest: order index out of range");
  std::stable_sort(v.begin(), v.end());
  return v[order_index - 1];
}

inline EllipsoidCapSet build_ellipsoid_set(
    const Eigen::VectorXd& uhat, const std::vector<Eigen::VectorXd>& shape_errors,
    const std::vector<Eigen::VectorXd>& size_errors, double eps, double delta,
    const BoxSet& box) {
  const int n2 = static_cast<int>(size_errors.size());
  require(n2 >= minimal_calibration_size(eps, delta),
          "build_ellipsoid_set: size split smaller than the calibration minimum");
  auto [mu, sigma] = sample_moments(shape_errors);
  EllipsoidCapSet set;
  set.box = box;
  set.center = uhat + mu;
  set.sigma = sigma;
  set.order_index = quantile_order_index(n2, eps, delta);
  set.alpha = nth_smallest(radius_values(mu, sigma, size_errors),
                           set.order_index);
  set.finalize();
  return set;
}

enum class EllipsoidMode { AllData, Fraction };

// single-dataset variants: cover everything, or a 1-eps share of the data
inline EllipsoidCapSet build_ellipsoid_variant(
    const Eigen::VectorXd& uhat, const std::vector<Eigen::VectorXd>& errors,
    EllipsoidMode mode, double eps, const BoxSet& box) {
  auto [mu, sigma] = sample_moments(errors);
  EllipsoidCapSet set;
  set.box = box;
  set.center = uhat + mu;
  set.sigma = sigma;
  auto a = radius_values(mu, sigma, errors);
  if (mode == EllipsoidMode::AllData) {
    set.alpha = *std::max_element(a.begin(), a.end());
    set.order_index = static_cast<int>(a.size());
  } else {
    const int n = static_cast<int>(a.size());
    const int k = static_cast<int>(std::ceil((1.0 - eps) * n));
    require(k >= 1, "build_ellipsoid_variant: eps leaves no data");
    set.order_index = k;
    set.alpha = nth_smallest(a, k);
  }
  set.finalize();
  return set;
}

// second-stage cost of one scenario; +inf when re-dispatch cannot balance
inline double scenario_cost(const CompactTwoStage& cf,
                            const std::vector<double>& x,
                            const Eigen::VectorXd& u) {
  std::vector<double> uv(u.data(), u.data() + u.size());
  auto rep = solve_lp(redispatch_lp(cf, x, uv));
  if (rep.status == SolveStatus::Optimal) return rep.objective;
  if (rep.status == SolveStatus::Infeasible) return kInf;
  fail("scenario_cost: re-dispatch LP ended " +
       std::string(to_string(rep.status)));
}

inline CostLevelSet reconstruct_set(const std::vector<double>& anchor_x,
                                    const Eigen::VectorXd& uhat,
                                    const std::vector<Eigen::VectorXd>& recon_errors,
                                    double eps, double delta, const BoxSet& box,
                                    const CompactTwoStage& compact) {
  const int n3 = static_cast<int>(recon_errors.size());
  require(n3 >= minimal_calibration_size(eps, delta),
          "reconstruct_set: reconstruction split smaller than the minimum");
  std::vector<double> b;
  b.reserve(n3);
  for (const auto& e : recon_errors)
    b.push_back(scenario_cost(compact, anchor_x, uhat + e));
  const int order = quantile_order_index(n3, eps, delta);
  CostLevelSet set;
  set.box = box;
  set.anchor_x = anchor_x;
  set.compact = compact;
  set.beta = nth_smallest(b, order);  // +inf sentinels sort last
  return set;
}

template <typename SetT>
double coverage(const SetT& set, const std::vector<Eigen::VectorXd>& samples) {
  if (samples.empty()) return 0.0;
  int inside = 0;
  for (const auto& s : samples)
    if (set.contains(s)) ++inside;
  return static_cast<double>(inside) / samples.size();
}

// ---------------------------------------------------------------------------
// Wide CSV: day label, then one column per (bus, period) in bus-major order

inline void write_error_csv(std::ostream& os,
                            const std::vector<Eigen::VectorXd>& rows, int buses,
                            int periods) {
  os << "day";
  for (int i = 0; i < buses; ++i)
    for (int t = 0; t < periods; ++t) os << ",e_b" << i << "_t" << t;
  os << "\n";
  for (std::size_t n = 0; n < rows.size(); ++n) {
    require(rows[n].size() == buses * periods,
            "write_error_csv: row " + std::to_string(n) + " has wrong width");
    os << n;
    for (int j = 0; j < buses * periods; ++j) os << ',' << fmt17(rows[n](j));
    os << "\n";
  }
}

inline void write_error_csv_file(const std::string& path,
                                 const std::vector<Eigen::VectorXd>& rows,
                                 int buses, int periods) {
  std::ofstream out(path);
  require(out.good(), "cannot write " + path);
  write_error_csv(out, rows, buses, periods);
}

inline std::vector<Eigen::VectorXd> read_error_csv(std::istream& is,
                                                   const std::string& origin) {
  std::string line;
  require(static_cast<bool>(std::getline(is, line)),
          origin + ": empty file, header expected");
  std::vector<std::string> head;
  {
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) head.push_back(cell);
  }
  require(!head.empty() && head[0] == "day",
          origin + ": header must start with a day column");
  const int width = static_cast<int>(head.size()) - 1;
  require(width >= 1, origin + ": no value columns");

  std::vector<Eigen::VectorXd> rows;
  int lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    std::vector<std::string> cells;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (!line.empty() && line.back() == ',') cells.push_back("");
    require(static_cast<int>(cells.size()) == width + 1,
            origin + ": row " + std::to_string(lineno) + " has " +
                std::to_string(cells.size()) + " fields, expected " +
                std::to_string(width + 1));
    Eigen::VectorXd v(width);
    for (int j = 0; j < width; ++j) {
      char* end = nullptr;
      const std::string& c = cells[j + 1];
      v(j) = std::strtod(c.c_str(), &end);
      require(end != c.c_str() && *end == '\0',
              origin + ": row " + std::to_string(lineno) + " column " +
                  std::to_string(j + 2) + " is not a number: '" + c + "'");
    }
    rows.push_back(std::move(v));
  }
  return rows;
}

inline std::vector<Eigen::VectorXd> read_error_csv_file(const std::string& path) {
  std::ifstream in(path);
  require(in.good(), "cannot open " + path);
  return read_error_csv(in, path);
}

}  // namespace ucr
