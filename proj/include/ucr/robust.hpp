#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <functional>
#include <json.hpp>
#include <memory>
#include <numeric>
#include <optional>
#include <ostream>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "ucr/milp.hpp"
#include "ucr/system_model.hpp"
#include "ucr/uncertainty.hpp"

namespace ucr {

/* A scenario set the adversary draws from. The box is always present; the
   ellipsoid cap and the cost-level variant carry extra membership structure. */
using UncertaintySet = std::variant<BoxSet, EllipsoidCapSet, CostLevelSet>;

inline const BoxSet& scenario_box(const UncertaintySet& set) {
  return std::visit(
      [](const auto& s) -> const BoxSet& {
        using T = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<T, BoxSet>)
          return s;
        else
          return s.box;
      },
      set);
}

inline bool scenario_member(const UncertaintySet& set, const Eigen::VectorXd& u,
                            double tol = 1e-9) {
  return std::visit([&](const auto& s) { return s.contains(u, tol); }, set);
}

namespace detail {
// defined with the worst-case machinery below
inline std::shared_ptr<CostLevelSet::Geometry> level_geometry(
    const CostLevelSet& set);
}  // namespace detail

/* Tightest per-coordinate bounds still containing the whole set. For the
   ellipsoid cap the support function gives center +- sqrt(alpha sigma_kk),
   which usually shrinks the outer box a lot and with it every interval
   constant downstream. The cost-level set gets the same service from its
   derived envelope. */
inline BoxSet effective_scenario_box(const UncertaintySet& set) {
  const BoxSet& outer = scenario_box(set);
  if (const auto* level = std::get_if<CostLevelSet>(&set);
      level && std::isfinite(level->beta))
    return detail::level_geometry(*level)->hull;
  const auto* ell = std::get_if<EllipsoidCapSet>(&set);
  if (!ell) return outer;
  BoxSet eff = outer;
  for (int k = 0; k < eff.dim(); ++k) {
    const double r = std::sqrt(std::max(0.0, ell->alpha * ell->sigma(k, k)));
    eff.lower(k) = std::max(eff.lower(k), ell->center(k) - r);
    eff.upper(k) = std::min(eff.upper(k), ell->center(k) + r);
    require(eff.lower(k) <= eff.upper(k) + 1e-9,
            "scenario set is empty: the ellipsoid cap misses the box");
    if (eff.lower(k) > eff.upper(k)) eff.lower(k) = eff.upper(k);
  }
  return eff;
}

struct CcgOptions {
  double tol = 1e-4;        // relative gap closing the master/subproblem loop
  int max_iter = 50;
  double feas_tol = 1e-6;   // slack above this spawns a coverage scenario
  double dedup_tol = 1e-6;  // infinity-norm match against known scenarios
  double dual_big_m = 1e4;  // fallback multiplier cap; audited at 0.9x
  std::ostream* log_stream = nullptr;  // optional echo of the iteration log
  MilpOptions master_milp;
  MilpOptions sub_milp;
};

struct MasterResult {
  CommitmentSchedule x;
  std::vector<double> xv;   // snapped commitment in compact layout
  std::vector<double> raw;  // unsnapped LP values, kept for warm starts
  double eta = 0.0;
  double objective = -kInf;  // commitment cost + eta, the loop's lower bound
};

struct SubproblemResult {
  Eigen::VectorXd u;
  double value = 0.0;      // worst second-stage cost; +inf marks lost coverage
  double violation = 0.0;  // total restoration slack (coverage variant)
  bool big_m_hit = false;  // a multiplier or reduced cost neared the cap
  std::int64_t nodes = 0;
};

struct CcgState {
  std::vector<Eigen::VectorXd> cost_scenarios;   // enumerated with an eta link
  std::vector<Eigen::VectorXd> cover_scenarios;  // feasibility repair only
  double lb = -kInf, ub = kInf;
  int iterations = 0;
  bool converged = false;
  bool big_m_hit = false;
  std::vector<std::string> log;  // one JSON object per iteration
};

struct RobustSolution {
  CommitmentSchedule x;
  std::vector<double> xv;
  double objective = kInf;  // commitment cost plus worst-case re-dispatch
  double first_stage_cost = 0.0;
  Eigen::VectorXd worst_u;
  CcgState state;
};

// ---------------------------------------------------------------------------
// Worst-case subproblems
//
// The adversary solves max over u of an inner minimum. The inner LP optimum
// is encoded through complementarity: primal rows, dual rows, and big-M
// switched slackness pairs. The ellipsoid cap joins through outer
// linearizations added lazily at integer candidates.

namespace detail {

// inner LP data: min f.y over { y in [0, y_ub] : a.y >= rhs_const + d.u }
struct InnerProblem {
  int ny = 0, nu = 0;
  std::vector<std::vector<std::pair<int, double>>> a_rows;
  std::vector<std::vector<std::pair<int, double>>> d_rows;
  std::vector<double> rhs_const;
  std::vector<double> f;
  std::vector<double> y_ub;
  int rows() const { return static_cast<int>(rhs_const.size()); }
};

inline double dot_sparse(const std::vector<std::pair<int, double>>& expr,
                         const Eigen::VectorXd& v) {
  double s = 0.0;
  for (const auto& [k, c] : expr) s += c * v(k);
  return s;
}

inline InnerProblem cost_inner(const CompactTwoStage& cf,
                               const std::vector<double>& xv) {
  InnerProblem ip;
  ip.ny = cf.yl.size();
  ip.nu = cf.udim;
  ip.a_rows = cf.a_rows;
  ip.d_rows = cf.d_rows;
  ip.f = cf.f;
  ip.rhs_const.resize(cf.num_rows());
  for (int i = 0; i < cf.num_rows(); ++i) {
    double s = cf.e[i];
    for (const auto& [j, c] : cf.b_rows[i]) s += c * xv[j];
    ip.rhs_const[i] = s;
  }
  /* The adjustment caps bound y by the committed reserves, so those values
     double as exact complementarity constants. */
  ip.y_ub.resize(ip.ny);
  for (int g = 0; g < cf.yl.gens; ++g)
    for (int t = 0; t < cf.yl.periods; ++t) {
      ip.y_ub[cf.yl.at(YLayout::kUp, g, t)] =
          std::max(0.0, xv[cf.xl.at(XLayout::kResUp, g, t)]);
      ip.y_ub[cf.yl.at(YLayout::kDn, g, t)] =
          std::max(0.0, xv[cf.xl.at(XLayout::kResDn, g, t)]);
    }
  return ip;
}

/* Coverage variant: one slack per row, unit objective on the slacks. Its
   optimum is the least total relaxation that re-opens the re-dispatch
   polytope, zero exactly when the scenario is already covered. */
inline InnerProblem slack_inner(const CompactTwoStage& cf,
                                const std::vector<double>& xv,
                                const BoxSet& box) {
  InnerProblem ip = cost_inner(cf, xv);
  const int m = ip.rows();
  std::fill(ip.f.begin(), ip.f.end(), 0.0);
  for (int i = 0; i < m; ++i) {
    // slack never needs more than the worst gap the row can open
    double ylo = 0.0;
    for (const auto& [j, c] : cf.a_rows[i]) ylo += std::min(0.0, c * ip.y_ub[j]);
    double uhi = 0.0;
    for (const auto& [j, c] : ip.d_rows[i]) {
      require(std::isfinite(box.lower(j)) && std::isfinite(box.upper(j)),
              "slack_inner: scenario box must be bounded");
      uhi += std::max(c * box.lower(j), c * box.upper(j));
    }
    const double gap = (ip.rhs_const[i] + uhi) - ylo;
    const int col = static_cast<int>(ip.f.size());
    ip.a_rows[i].push_back({col, 1.0});
    ip.f.push_back(1.0);
    ip.y_ub.push_back(std::max(1.0, 1.1 * std::max(0.0, gap)));
  }
  return ip;
}

inline LinearProgram inner_lp(const InnerProblem& ip, const Eigen::VectorXd& u) {
  LinearProgram lp;
  for (int j = 0; j < static_cast<int>(ip.f.size()); ++j)
    lp.add_col(0.0, ip.y_ub[j], ip.f[j], VarKind::Continuous,
               "y" + std::to_string(j));
  for (int i = 0; i < ip.rows(); ++i)
    lp.add_row(RowSense::GreaterEqual, ip.rhs_const[i] + dot_sparse(ip.d_rows[i], u),
               ip.a_rows[i], "r" + std::to_string(i));
  return lp;
}

/* Tight per-row caps on the inner multipliers: maximize each coordinate over
   the dual polytope { lam >= 0, A'lam <= f }. The polytope only depends on
   the recourse matrix and costs, so callers cache the result across
   iterations. Coordinates that run into the fallback cap stay there and are
   flagged by the post-solve audit. */
inline std::vector<double> dual_caps(const InnerProblem& ip, double cap) {
  const int m = ip.rows();
  const int n = static_cast<int>(ip.f.size());
  std::vector<std::vector<std::pair<int, double>>> by_col(n);
  for (int i = 0; i < m; ++i)
    for (const auto& [j, c] : ip.a_rows[i]) by_col[j].push_back({i, c});
  LinearProgram dual;
  for (int i = 0; i < m; ++i)
    dual.add_col(0.0, cap, 0.0, VarKind::Continuous, "lam" + std::to_string(i));
  for (int j = 0; j < n; ++j)
    dual.add_row(RowSense::LessEqual, ip.f[j], by_col[j]);
  dual.maximize = true;
  std::vector<double> md(m, cap);
  for (int i = 0; i < m; ++i) {
    std::fill(dual.objective.begin(), dual.objective.end(), 0.0);
    dual.objective[i] = 1.0;
    auto rep = solve_lp(dual);
    if (rep.status == SolveStatus::Optimal)
      md[i] = std::min(cap, rep.objective + 1e-6 * (1.0 + rep.objective));
  }
  return md;
}

struct MaxMinOutcome {
  Eigen::VectorXd u;
  double milp_value = 0.0;
  bool big_m_hit = false;
  std::int64_t nodes = 0;
  std::vector<double> lam;  // row multipliers, filled by the coverage probe
};

/* Worst box vertex for the coverage question, through the dual of the slack
   LP: the least total restoration slack at a fixed scenario equals
       max  lam'(rhs_const + D u) - mu'y_ub
       over lam in [0,1]^m, mu >= 0, A'lam - mu <= 0 on re-dispatch columns.
   The scenario appears in the objective alone, and a convex maximum over a
   box sits at a vertex, so one binary per coordinate picks the side; its
   product with the multiplier sum linearizes exactly. No complementarity
   switches, which makes "everything covered" cheap to prove. Expects the
   plain re-dispatch inner problem, not the slack variant. */
inline MaxMinOutcome box_cover_milp(const InnerProblem& ip, const BoxSet& box,
                                    const MilpOptions& sub_opts) {
  const int m = ip.rows();
  const int nu = ip.nu;
  const int ny = static_cast<int>(ip.f.size());
  std::vector<std::vector<std::pair<int, double>>> dcol(nu);
  for (int i = 0; i < m; ++i)
    for (const auto& [k, c] : ip.d_rows[i]) dcol[k].push_back({i, c});

  LinearProgram lp;
  lp.maximize = true;
  for (int i = 0; i < m; ++i) {
    // fold the lower-vertex part of the objective into the multiplier
    double base = ip.rhs_const[i];
    for (const auto& [k, c] : ip.d_rows[i]) {
      require(std::isfinite(box.lower(k)) && std::isfinite(box.upper(k)),
              "box_cover_milp: scenario box must be bounded");
      base += c * box.lower(k);
    }
    lp.add_col(0.0, 1.0, base, VarKind::Continuous, "lam" + std::to_string(i));
  }
  // bound multipliers; never need more than the positive column mass at lam=1
  const int mu0 = lp.num_cols();
  std::vector<double> mu_cap(ny, 0.0);
  for (int i = 0; i < m; ++i)
    for (const auto& [j, c] : ip.a_rows[i]) mu_cap[j] += std::max(0.0, c);
  for (int j = 0; j < ny; ++j)
    lp.add_col(0.0, std::max(1.0, mu_cap[j]), -ip.y_ub[j], VarKind::Continuous,
               "mu" + std::to_string(j));
  const int sig0 = lp.num_cols();
  for (int k = 0; k < nu; ++k) {
    const double span = box.upper(k) - box.lower(k);
    lp.add_col(0.0, 1.0, 0.0,
               span > 1e-12 ? VarKind::Binary : VarKind::Continuous,
               "side" + std::to_string(k));
  }
  const int v0 = lp.num_cols();
  std::vector<double> rng_lo(nu), rng_hi(nu);
  for (int k = 0; k < nu; ++k) {
    double l = 0.0, h = 0.0;
    for (const auto& [i, c] : dcol[k]) {
      l += std::min(0.0, c);
      h += std::max(0.0, c);
    }
    rng_lo[k] = l;
    rng_hi[k] = h;
    lp.add_col(l, h, box.upper(k) - box.lower(k), VarKind::Continuous,
               "prod" + std::to_string(k));
  }
  {
    std::vector<std::vector<std::pair<int, double>>> by_col(ny);
    for (int i = 0; i < m; ++i)
      for (const auto& [j, c] : ip.a_rows[i]) by_col[j].push_back({i, c});
    for (int j = 0; j < ny; ++j) {
      by_col[j].push_back({mu0 + j, -1.0});
      lp.add_row(RowSense::LessEqual, 0.0, by_col[j], "dual" + std::to_string(j));
    }
  }
  for (int k = 0; k < nu; ++k) {
    lp.add_row(RowSense::LessEqual, 0.0,
               {{v0 + k, 1.0}, {sig0 + k, -rng_hi[k]}}, "pu");
    lp.add_row(RowSense::GreaterEqual, 0.0,
               {{v0 + k, 1.0}, {sig0 + k, -rng_lo[k]}}, "pl");
    std::vector<std::pair<int, double>> hi_row{{v0 + k, 1.0},
                                              {sig0 + k, -rng_lo[k]}};
    std::vector<std::pair<int, double>> lo_row{{v0 + k, 1.0},
                                              {sig0 + k, -rng_hi[k]}};
    for (const auto& [i, c] : dcol[k]) {
      hi_row.push_back({i, -c});
      lo_row.push_back({i, -c});
    }
    lp.add_row(RowSense::LessEqual, -rng_lo[k], hi_row, "pc");
    lp.add_row(RowSense::GreaterEqual, -rng_hi[k], lo_row, "pd");
  }

  auto rep = solve_milp(lp, sub_opts);
  require(rep.status == SolveStatus::Optimal,
          "box_cover_milp ended " + std::string(to_string(rep.status)));
  MaxMinOutcome out;
  out.milp_value = rep.objective;
  out.nodes = rep.nodes;
  out.u.resize(nu);
  for (int k = 0; k < nu; ++k)
    out.u(k) = rep.primal[sig0 + k] > 0.5 ? box.upper(k) : box.lower(k);
  out.lam.assign(rep.primal.begin(), rep.primal.begin() + m);
  return out;
}

struct KktMilp {
  LinearProgram lp;
  int u0 = 0, y0 = 0, lam0 = 0, z0 = 0, w0 = 0;
  int nu = 0, ny = 0, m = 0;
};

inline KktMilp build_kkt_milp(const InnerProblem& ip, const BoxSet& box,
                              const std::vector<double>& md, double rc_cap) {
  KktMilp k;
  k.nu = ip.nu;
  k.ny = static_cast<int>(ip.f.size());
  k.m = ip.rows();
  LinearProgram& lp = k.lp;

  k.u0 = lp.num_cols();
  for (int j = 0; j < k.nu; ++j) {
    require(std::isfinite(box.lower(j)) && std::isfinite(box.upper(j)),
            "worst-case subproblem needs a bounded scenario box");
    lp.add_col(box.lower(j), box.upper(j), 0.0, VarKind::Continuous,
               "u" + std::to_string(j));
  }
  k.y0 = lp.num_cols();
  for (int j = 0; j < k.ny; ++j)
    lp.add_col(0.0, ip.y_ub[j], ip.f[j], VarKind::Continuous,
               "y" + std::to_string(j));
  k.lam0 = lp.num_cols();
  for (int i = 0; i < k.m; ++i)
    lp.add_col(0.0, md[i], 0.0, VarKind::Continuous, "lam" + std::to_string(i));
  k.z0 = lp.num_cols();
  for (int i = 0; i < k.m; ++i)
    lp.add_col(0.0, 1.0, 0.0, VarKind::Binary, "z" + std::to_string(i));
  k.w0 = lp.num_cols();
  for (int j = 0; j < k.ny; ++j)
    lp.add_col(0.0, 1.0, 0.0, VarKind::Binary, "w" + std::to_string(j));
  lp.maximize = true;

  // primal feasibility: a.y - d.u >= rhs_const
  std::vector<std::vector<std::pair<int, double>>> primal_rows(k.m);
  for (int i = 0; i < k.m; ++i) {
    auto& row = primal_rows[i];
    for (const auto& [j, c] : ip.a_rows[i]) row.push_back({k.y0 + j, c});
    for (const auto& [j, c] : ip.d_rows[i]) row.push_back({k.u0 + j, -c});
    lp.add_row(RowSense::GreaterEqual, ip.rhs_const[i], row,
               "primal" + std::to_string(i));
  }
  // dual feasibility: A'lam <= f column by column
  {
    std::vector<std::vector<std::pair<int, double>>> by_col(k.ny);
    for (int i = 0; i < k.m; ++i)
      for (const auto& [j, c] : ip.a_rows[i])
        by_col[j].push_back({k.lam0 + i, c});
    for (int j = 0; j < k.ny; ++j)
      lp.add_row(RowSense::LessEqual, ip.f[j], by_col[j],
                 "dual" + std::to_string(j));
  }
  // switched slackness, row side: slack <= Ms (1 - z), lam <= Md z
  for (int i = 0; i < k.m; ++i) {
    const double ms = big_m_for_row(lp, i);  // primal rows were added first
    auto row = primal_rows[i];
    row.push_back({k.z0 + i, ms});
    lp.add_row(RowSense::LessEqual, ip.rhs_const[i] + ms, row,
               "cs" + std::to_string(i));
    lp.add_row(RowSense::LessEqual, 0.0,
               {{k.lam0 + i, 1.0}, {k.z0 + i, -md[i]}},
               "cd" + std::to_string(i));
  }
  // switched slackness, column side: y <= ub w, reduced cost <= Mr (1 - w)
  for (int j = 0; j < k.ny; ++j) {
    lp.add_row(RowSense::LessEqual, 0.0,
               {{k.y0 + j, 1.0}, {k.w0 + j, -std::max(ip.y_ub[j], 1e-9)}},
               "cy" + std::to_string(j));
    double mr = ip.f[j];
    for (int i = 0; i < k.m; ++i)
      for (const auto& [jj, c] : ip.a_rows[i])
        if (jj == j && c < 0.0) mr += -c * md[i];
    mr = std::min(mr, rc_cap);
    std::vector<std::pair<int, double>> row{{k.w0 + j, mr}};
    for (int i = 0; i < k.m; ++i)
      for (const auto& [jj, c] : ip.a_rows[i])
        if (jj == j) row.push_back({k.lam0 + i, -c});
    lp.add_row(RowSense::LessEqual, mr - ip.f[j], row,
               "crc" + std::to_string(j));
  }
  return k;
}

// linearized membership cut for the ellipsoid cap, generated lazily
inline LazyCutSource ellipsoid_cut_source(const EllipsoidCapSet& set, int u0,
                                          int nu) {
  auto factor = set.factor ? set.factor
                           : std::make_shared<const SpdFactor>(set.sigma);
  const Eigen::VectorXd center = set.center;
  const double alpha = set.alpha;
  return [factor, center, alpha, u0, nu](
             const std::vector<double>& v) -> std::optional<LazyCut> {
    Eigen::VectorXd u(nu);
    for (int j = 0; j < nu; ++j) u(j) = v[u0 + j];
    const Eigen::VectorXd diff = u - center;
    const double g = factor->quad(diff);
    // absolute floor keeps degenerate near-point sets from cutting forever
    if (g <= alpha + 1e-6 * std::max(1.0, alpha)) return std::nullopt;
    const Eigen::VectorXd grad = factor->solve(diff);
    LazyCut cut;
    cut.coeffs.reserve(nu);
    for (int j = 0; j < nu; ++j) cut.coeffs.push_back({u0 + j, 2.0 * grad(j)});
    cut.sense = RowSense::LessEqual;
    cut.rhs = alpha + g + 2.0 * grad.dot(center);
    return cut;
  };
}

/* Maximize a linear function over the ellipsoid cap by supporting-cut
   refinement: tiny LPs over the box, each round trimmed by the tangent at
   the current point. The returned scenario is pulled strictly inside. */
inline Eigen::VectorXd cap_support_point(const EllipsoidCapSet& set,
                                         const BoxSet& box,
                                         const Eigen::VectorXd& g) {
  LinearProgram lp;
  lp.maximize = true;
  for (int k = 0; k < box.dim(); ++k)
    lp.add_col(box.lower(k), box.upper(k), g(k), VarKind::Continuous,
               "u" + std::to_string(k));
  auto source = ellipsoid_cut_source(set, 0, box.dim());
  Eigen::VectorXd u = set.center;
  for (int round = 0; round < 200; ++round) {
    auto rep = solve_lp(lp);
    if (rep.status != SolveStatus::Optimal) break;
    for (int k = 0; k < box.dim(); ++k) u(k) = rep.primal[k];
    auto cut = source(rep.primal);
    if (!cut) break;
    lp.add_row(cut->sense, cut->rhs, cut->coeffs, "cap");
  }
  const double q = set.radius_value(u);
  if (q > set.alpha)
    u = set.center +
        (u - set.center) * ((1.0 - 1e-10) * std::sqrt(set.alpha / q));
  return u;
}

// cost-level membership: a witness block y2 in the anchor's re-dispatch
// polytope whose cost stays under the budget
inline void add_cost_level_block(LinearProgram* lp, const CompactTwoStage& cf,
                                 const CostLevelSet& set, int u0) {
  // column order mirrors the adjustment layout so row coefficients carry over
  const int y2_0 = lp->num_cols();
  for (int g = 0; g < cf.yl.gens; ++g)
    for (int t = 0; t < cf.yl.periods; ++t)
      lp->add_col(0.0,
                  std::max(0.0, set.anchor_x[cf.xl.at(XLayout::kResUp, g, t)]),
                  0.0, VarKind::Continuous, "wit_up");
  for (int g = 0; g < cf.yl.gens; ++g)
    for (int t = 0; t < cf.yl.periods; ++t)
      lp->add_col(0.0,
                  std::max(0.0, set.anchor_x[cf.xl.at(XLayout::kResDn, g, t)]),
                  0.0, VarKind::Continuous, "wit_dn");
  for (int i = 0; i < cf.num_rows(); ++i) {
    double rhs = cf.e[i];
    for (const auto& [j, c] : cf.b_rows[i]) rhs += c * set.anchor_x[j];
    std::vector<std::pair<int, double>> row;
    for (const auto& [j, c] : cf.a_rows[i]) row.push_back({y2_0 + j, c});
    for (const auto& [j, c] : cf.d_rows[i]) row.push_back({u0 + j, -c});
    lp->add_row(RowSense::GreaterEqual, rhs, row, "wit" + std::to_string(i));
  }
  std::vector<std::pair<int, double>> budget;
  for (int j = 0; j < cf.yl.size(); ++j)
    if (cf.f[j] != 0.0) budget.push_back({y2_0 + j, cf.f[j]});
  lp->add_row(RowSense::LessEqual, set.beta, budget, "wit_budget");
}

/* Kelley machinery for the cost-level set. The anchor's re-dispatch cost is
   convex piecewise linear in the scenario, so every evaluation leaves a
   tangent (a coverage tangent where re-dispatch fails outright), and the
   accumulated cuts form an outer model of the set. The same few pieces
   deliver the envelope, support points, and an interior scenario. */
struct LevelOracle {
  const CostLevelSet* set;
  InnerProblem cost, slack;

  explicit LevelOracle(const CostLevelSet& s)
      : set(&s),
        cost(cost_inner(s.compact, s.anchor_x)),
        slack(slack_inner(s.compact, s.anchor_x, s.box)) {}
};

struct LevelProbe {
  bool served = false;   // re-dispatch feasible at the probe scenario
  double value = kInf;   // cost when served, least total slack otherwise
  Eigen::VectorXd grad;  // subgradient in the scenario coordinates
};

inline LevelProbe level_probe(const LevelOracle& o, const Eigen::VectorXd& u) {
  LevelProbe p;
  const InnerProblem* src = &o.cost;
  auto rep = solve_lp(inner_lp(o.cost, u));
  if (rep.status == SolveStatus::Optimal) {
    p.served = true;
  } else {
    src = &o.slack;
    rep = solve_lp(inner_lp(o.slack, u));
    require(rep.status == SolveStatus::Optimal,
            "level_probe: slack evaluation failed");
  }
  p.value = rep.objective;
  p.grad = Eigen::VectorXd::Zero(o.cost.nu);
  for (int i = 0; i < src->rows(); ++i) {
    const double lam = std::max(0.0, rep.row_duals[i]);
    if (lam > 1e-12)
      for (const auto& [k, c] : src->d_rows[i]) p.grad(k) += c * lam;
  }
  return p;
}

// supporting halfspace through the probe point, valid for every member
inline CostLevelSet::Tangent level_tangent(const LevelProbe& p,
                                           const Eigen::VectorXd& at,
                                           double beta) {
  CostLevelSet::Tangent t;
  t.grad = p.grad;
  t.coverage = !p.served;
  t.rhs = (p.served ? beta - p.value : -p.value) + p.grad.dot(at);
  return t;
}

inline bool under_budget(const CostLevelSet& set, double value) {
  return value <= set.beta + 1e-9 * (1.0 + std::abs(set.beta));
}

// walk back toward the interior scenario until the budget readmits the point
inline Eigen::VectorXd level_pull_inside(const CostLevelSet& set,
                                         const CostLevelSet::Geometry& geom,
                                         Eigen::VectorXd cand) {
  if (set.contains(cand, 1e-9)) return cand;
  double lo = 0.0, hi = 1.0;  // convex budget, one crossing per segment
  for (int it = 0; it < 20; ++it) {
    const double mid = 0.5 * (lo + hi);
    (set.contains(geom.inner + mid * (cand - geom.inner), 1e-9) ? lo : hi) =
        mid;
  }
  return geom.inner + lo * (cand - geom.inner);
}

/* Maximize a linear function over the level set by tangent refinement, the
   cost-level counterpart of cap_support_point. Fresh tangents flow back
   into the shared geometry so every later call starts warmer. */
inline Eigen::VectorXd level_support_point(const LevelOracle& o,
                                           CostLevelSet::Geometry& geom,
                                           const Eigen::VectorXd& g) {
  const BoxSet& hull = geom.hull;
  LinearProgram lp;
  lp.maximize = true;
  for (int k = 0; k < hull.dim(); ++k)
    lp.add_col(hull.lower(k), hull.upper(k), g(k), VarKind::Continuous,
               "u" + std::to_string(k));
  auto attach = [&](const CostLevelSet::Tangent& t) {
    std::vector<std::pair<int, double>> row;
    for (int k = 0; k < hull.dim(); ++k)
      if (t.grad(k) != 0.0) row.push_back({k, t.grad(k)});
    lp.add_row(RowSense::LessEqual, t.rhs, row, "lvl");
  };
  for (const auto& t : geom.cuts) attach(t);
  Eigen::VectorXd u = geom.inner;
  for (int round = 0; round < 60; ++round) {
    auto rep = solve_lp(lp);
    if (rep.status != SolveStatus::Optimal) break;
    Eigen::VectorXd cand(hull.dim());
    for (int k = 0; k < hull.dim(); ++k) cand(k) = rep.primal[k];
    auto probe = level_probe(o, cand);
    if (probe.served && probe.value < geom.inner_cost) {
      geom.inner = cand;
      geom.inner_cost = probe.value;
    }
    if (probe.served && under_budget(*o.set, probe.value))
      return level_pull_inside(*o.set, geom, std::move(cand));
    u = cand;
    auto t = level_tangent(probe, cand, o.set->beta);
    attach(t);
    if (geom.cuts.size() < 600) geom.cuts.push_back(std::move(t));
  }
  return level_pull_inside(*o.set, geom, std::move(u));
}

/* Derive (once per set) the working geometry: an interior scenario from a
   cutting-plane descent on the budget function, then the per-coordinate
   envelope from support solves sharing one cut model. Every envelope edge
   is an outer bound, so the round caps cost tightness, never correctness. */
inline std::shared_ptr<CostLevelSet::Geometry> level_geometry(
    const CostLevelSet& set) {
  if (set.geom) return set.geom;
  auto geom = std::make_shared<CostLevelSet::Geometry>();
  geom->hull = set.box;
  set.geom = geom;  // published early so a failed search is not repeated
  const LevelOracle o(set);
  const double bscale = 1.0 + std::abs(set.beta);

  // descend toward the cheapest scenario until one clears the budget well
  {
    LinearProgram lp;
    for (int k = 0; k < set.box.dim(); ++k)
      lp.add_col(set.box.lower(k), set.box.upper(k), 0.0, VarKind::Continuous,
                 "u" + std::to_string(k));
    double floor_cost = 0.0;
    for (std::size_t j = 0; j < o.cost.f.size(); ++j)
      floor_cost += std::min(0.0, o.cost.f[j] * o.cost.y_ub[j]);
    const int t0 =
        lp.add_col(floor_cost, kInf, 1.0, VarKind::Continuous, "lvl");
    for (int round = 0; round < 80; ++round) {
      auto rep = solve_lp(lp);
      if (rep.status != SolveStatus::Optimal) break;
      Eigen::VectorXd cand(set.box.dim());
      for (int k = 0; k < set.box.dim(); ++k) cand(k) = rep.primal[k];
      auto probe = level_probe(o, cand);
      if (probe.served && probe.value < geom->inner_cost) {
        geom->inner = cand;
        geom->inner_cost = probe.value;
      }
      if (probe.served && probe.value <= set.beta - 1e-3 * bscale) break;
      if (rep.objective >= set.beta + 1e-9 * bscale) break;  // nothing fits
      if (probe.served &&
          probe.value - rep.objective <= 1e-9 * (1.0 + std::abs(probe.value)))
        break;  // settled on the cheapest scenario
      auto t = level_tangent(probe, cand, set.beta);
      std::vector<std::pair<int, double>> row;
      if (t.coverage) {
        for (int k = 0; k < set.box.dim(); ++k)
          if (t.grad(k) != 0.0) row.push_back({k, t.grad(k)});
        lp.add_row(RowSense::LessEqual, t.rhs, row, "cov");
      } else {
        // epigraph form of the same tangent: t >= value + grad.(u - cand)
        row.push_back({t0, 1.0});
        for (int k = 0; k < set.box.dim(); ++k)
          if (t.grad(k) != 0.0) row.push_back({k, -t.grad(k)});
        lp.add_row(RowSense::GreaterEqual, set.beta - t.rhs, row, "cut");
      }
      geom->cuts.push_back(std::move(t));
    }
  }
  if (!(geom->inner_cost <= set.beta) || !set.contains(geom->inner, 1e-9))
    return geom;  // no usable member in sight, the hull stays the box

  // per-coordinate envelope: one shared model, objective swapped per side
  LinearProgram lp;
  lp.maximize = true;
  for (int k = 0; k < set.box.dim(); ++k)
    lp.add_col(set.box.lower(k), set.box.upper(k), 0.0, VarKind::Continuous,
               "u" + std::to_string(k));
  auto attach = [&](const CostLevelSet::Tangent& t) {
    std::vector<std::pair<int, double>> row;
    for (int k = 0; k < set.box.dim(); ++k)
      if (t.grad(k) != 0.0) row.push_back({k, t.grad(k)});
    lp.add_row(RowSense::LessEqual, t.rhs, row, "lvl");
  };
  for (const auto& t : geom->cuts) attach(t);
  BoxSet hull = set.box;
  bool sound = true;
  for (int k = 0; k < set.box.dim() && sound; ++k) {
    for (int side = 0; side < 2 && sound; ++side) {
      const double sgn = side == 0 ? 1.0 : -1.0;
      std::fill(lp.objective.begin(), lp.objective.end(), 0.0);
      lp.objective[k] = sgn;
      double edge = sgn > 0 ? set.box.upper(k) : -set.box.lower(k);
      for (int round = 0; round < 40; ++round) {
        auto rep = solve_lp(lp);
        if (rep.status != SolveStatus::Optimal) {
          sound = false;
          break;
        }
        edge = rep.objective;
        Eigen::VectorXd cand(set.box.dim());
        for (int j = 0; j < set.box.dim(); ++j) cand(j) = rep.primal[j];
        auto probe = level_probe(o, cand);
        if (probe.served && probe.value < geom->inner_cost) {
          geom->inner = cand;
          geom->inner_cost = probe.value;
        }
        if (probe.served && under_budget(set, probe.value)) break;
        auto t = level_tangent(probe, cand, set.beta);
        attach(t);
        if (geom->cuts.size() < 600) geom->cuts.push_back(std::move(t));
      }
      const double slop = 1e-9 * (1.0 + std::abs(edge));
      if (sgn > 0)
        hull.upper(k) = std::min(set.box.upper(k), edge + slop);
      else
        hull.lower(k) = std::max(set.box.lower(k), -edge - slop);
    }
    if (hull.lower(k) > hull.upper(k)) {  // numerically thin, pinch it
      const double mid = 0.5 * (hull.lower(k) + hull.upper(k));
      hull.lower(k) = hull.upper(k) = mid;
    }
  }
  if (sound) geom->hull = hull;
  return geom;
}

/* Shared driver for both adversary problems: assemble the complementarity
   MILP over the given inner problem, attach set structure, warm start from
   candidate scenarios, solve, and audit the multipliers. Ellipsoid cuts only
   touch the scenario columns, which sit first in every build here, so a
   caller running several solves against one set can pass a pool that carries
   the accumulated outer approximation from solve to solve. */
inline MaxMinOutcome solve_max_min(const InnerProblem& ip,
                                   const UncertaintySet& set,
                                   const CompactTwoStage& cf,
                                   const CcgOptions& opts,
                                   const std::vector<double>& md,
                                   const std::vector<Eigen::VectorXd>& warm_us,
                                   std::vector<LazyCut>* cut_pool,
                                   double obj_cap = kInf) {
  const BoxSet box = effective_scenario_box(set);
  require(box.dim() == ip.nu, "solve_max_min: box dimension mismatch");
  KktMilp k = build_kkt_milp(ip, box, md, opts.dual_big_m);
  if (std::isfinite(obj_cap)) {
    // a known outer bound on the maximum tames the relaxed objective
    std::vector<std::pair<int, double>> row;
    for (int j = 0; j < static_cast<int>(ip.f.size()); ++j)
      if (ip.f[j] != 0.0) row.push_back({k.y0 + j, ip.f[j]});
    k.lp.add_row(RowSense::LessEqual, obj_cap, row, "obj_cap");
  }

  if (const auto* level = std::get_if<CostLevelSet>(&set);
      level && std::isfinite(level->beta)) {
    add_cost_level_block(&k.lp, cf, *level, k.u0);
    // the collected budget tangents are valid scenario rows; adding them
    // up front pulls the relaxation toward the witness polytope
    for (const auto& cut : level_geometry(*level)->cuts) {
      std::vector<std::pair<int, double>> row;
      for (int j = 0; j < k.nu; ++j)
        if (cut.grad(j) != 0.0) row.push_back({k.u0 + j, cut.grad(j)});
      k.lp.add_row(RowSense::LessEqual,
                   cut.rhs + 1e-7 * (1.0 + std::abs(cut.rhs)), row, "lvl");
    }
  }

  MilpOptions milp = opts.sub_milp;
  if (const auto* ell = std::get_if<EllipsoidCapSet>(&set)) {
    if (cut_pool)
      for (const auto& cut : *cut_pool)
        k.lp.add_row(cut.sense, cut.rhs, cut.coeffs, "pool");
    auto source = ellipsoid_cut_source(*ell, k.u0, k.nu);
    if (cut_pool)
      milp.lazy = [source, cut_pool](const std::vector<double>& v) {
        auto cut = source(v);
        if (cut) cut_pool->push_back(*cut);
        return cut;
      };
    else
      milp.lazy = source;
  }

  // warm start: inner response at the best member scenario we already know
  milp.incumbent_hint.reset();
  double hint_value = -kInf;
  for (const auto& cand : warm_us) {
    if (static_cast<int>(cand.size()) != ip.nu) continue;
    if (!scenario_member(set, cand, 1e-9)) continue;
    auto rep = solve_lp(inner_lp(ip, cand));
    if (rep.status != SolveStatus::Optimal || rep.objective <= hint_value)
      continue;
    std::vector<double> v(k.lp.num_cols(), 0.0);
    for (int j = 0; j < k.nu; ++j) v[k.u0 + j] = cand(j);
    for (int j = 0; j < k.ny; ++j) v[k.y0 + j] = rep.primal[j];
    for (int i = 0; i < k.m; ++i) {
      const double lam = std::max(0.0, rep.row_duals[i]);
      v[k.lam0 + i] = lam;
      v[k.z0 + i] = lam > 1e-9 ? 1.0 : 0.0;
    }
    for (int j = 0; j < k.ny; ++j)
      v[k.w0 + j] = rep.primal[j] > 1e-9 ? 1.0 : 0.0;
    if (const auto* level = std::get_if<CostLevelSet>(&set);
        level && std::isfinite(level->beta)) {
      std::vector<double> uv(cand.data(), cand.data() + cand.size());
      auto wit = solve_lp(redispatch_lp(cf, level->anchor_x, uv));
      if (wit.status != SolveStatus::Optimal ||
          wit.objective > level->beta + 1e-9 * (1.0 + std::abs(level->beta)))
        continue;
      for (int j = 0; j < cf.yl.size(); ++j)
        v[k.w0 + k.ny + j] = wit.primal[j];
    }
    if (k.lp.max_violation(v) > 1e-7) continue;
    milp.incumbent_hint = {rep.objective, std::move(v)};
    hint_value = rep.objective;
  }

  auto rep = solve_milp(k.lp, milp);
  require(rep.status == SolveStatus::Optimal,
          "worst-case subproblem ended " + std::string(to_string(rep.status)) +
              "; the scenario set may be empty");
  MaxMinOutcome out;
  out.u.resize(k.nu);
  for (int j = 0; j < k.nu; ++j) out.u(j) = rep.primal[k.u0 + j];
  out.milp_value = rep.objective;
  out.nodes = rep.nodes;
  for (int i = 0; i < k.m; ++i)
    if (rep.primal[k.lam0 + i] >= 0.9 * opts.dual_big_m) out.big_m_hit = true;
  return out;
}

}  // namespace detail

/* Least total slack that re-opens re-dispatch, maximized over the set. Zero
   violation certifies the commitment covers every scenario in the set.

   Screens over the bounding box first: coverage there implies coverage of
   any subset, and the vertex-dual probe proves it without complementarity
   switches. When the probe already clears the tolerance the reported
   violation is that outer bound. A shaped set that fails the probe is first
   separated with cheap member witnesses, whose slack drives the coverage
   cut just as well; the exact encoding only runs when none separates. */
inline SubproblemResult feasibility_subproblem(
    const CompactTwoStage& cf, const std::vector<double>& xv,
    const UncertaintySet& set, const CcgOptions& opts = {},
    const std::vector<Eigen::VectorXd>& warm_us = {},
    std::vector<LazyCut>* cut_pool = nullptr) {
  const BoxSet box = effective_scenario_box(set);
  auto probe =
      detail::box_cover_milp(detail::cost_inner(cf, xv), box, opts.sub_milp);
  bool box_exact = std::holds_alternative<BoxSet>(set);
  if (const auto* level = std::get_if<CostLevelSet>(&set);
      level && !std::isfinite(level->beta))
    box_exact = true;

  SubproblemResult res;
  if (probe.milp_value <= opts.feas_tol || box_exact) {
    res.u = probe.u;
    res.nodes = probe.nodes;
    // trust the direct evaluation at the chosen vertex, not the encoding
    auto direct =
        solve_lp(detail::inner_lp(detail::slack_inner(cf, xv, box), probe.u));
    require(direct.status == SolveStatus::Optimal,
            "feasibility_subproblem: slack evaluation failed");
    res.violation = box_exact ? direct.objective
                              : std::max(direct.objective, probe.milp_value);
    res.value = res.violation;
    return res;
  }

  /* The box witness may sit outside a shaped set. Any member above the
     tolerance already makes a valid coverage scenario, so pull the witness
     into the set and try the set's support point along the probe's
     aggregated row direction before resorting to the full encoding. */
  const auto ip = detail::slack_inner(cf, xv, box);
  std::vector<Eigen::VectorXd> cands{probe.u};
  std::optional<detail::LevelOracle> oracle;
  std::shared_ptr<CostLevelSet::Geometry> geom;
  std::function<Eigen::VectorXd(const Eigen::VectorXd&)> support;
  std::function<Eigen::VectorXd(Eigen::VectorXd)> pulled;
  if (const auto* ell = std::get_if<EllipsoidCapSet>(&set)) {
    support = [&box, ell](const Eigen::VectorXd& g) {
      return detail::cap_support_point(*ell, box, g);
    };
    pulled = [&box, ell](Eigen::VectorXd cand) {
      for (int k = 0; k < cand.size(); ++k)
        cand(k) = std::clamp(cand(k), box.lower(k), box.upper(k));
      const double q = ell->radius_value(cand);
      if (q > ell->alpha)
        cand = ell->center + (cand - ell->center) *
                                 ((1.0 - 1e-10) * std::sqrt(ell->alpha / q));
      return cand;
    };
  } else if (const auto* level = std::get_if<CostLevelSet>(&set);
             level && std::isfinite(level->beta)) {
    geom = detail::level_geometry(*level);
    if (geom->inner_cost <= level->beta) {
      oracle.emplace(*level);
      support = [&oracle, &geom](const Eigen::VectorXd& g) {
        return detail::level_support_point(*oracle, *geom, g);
      };
      pulled = [&box, &geom, level](Eigen::VectorXd cand) {
        for (int k = 0; k < cand.size(); ++k)
          cand(k) = std::clamp(cand(k), box.lower(k), box.upper(k));
        return detail::level_pull_inside(*level, *geom, std::move(cand));
      };
    }
  }
  if (support) {
    /* Monotone tangent ascent: the slack optimum is convex in the scenario,
       so re-maximizing each tangent (from the row multipliers) over the set
       never decreases it and settles on a locally worst member. Run it from
       the pulled witness and from the extreme members of the widest
       coordinates; covered basins stall immediately and cost little. */
    auto ascend = [&](Eigen::VectorXd cur) {
      cands.push_back(cur);
      double cur_v = -kInf;
      for (int step = 0; step < 20; ++step) {
        auto rep = solve_lp(detail::inner_lp(ip, cur));
        if (rep.status != SolveStatus::Optimal) break;
        if (rep.objective <= cur_v + 1e-9) break;
        cur_v = rep.objective;
        Eigen::VectorXd g = Eigen::VectorXd::Zero(box.dim());
        for (int i = 0; i < ip.rows(); ++i) {
          const double lam = std::clamp(rep.row_duals[i], 0.0, 1.0);
          if (lam > 1e-12)
            for (const auto& [k, c] : ip.d_rows[i]) g(k) += c * lam;
        }
        if (g.lpNorm<Eigen::Infinity>() <= 1e-12) break;
        cur = support(g);
        cands.push_back(cur);
      }
    };
    ascend(pulled(probe.u));
    std::vector<int> order(box.dim());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](int a, int b) {
      return box.upper(a) - box.lower(a) > box.upper(b) - box.lower(b);
    });
    for (int pick = 0; pick < std::min<int>(3, box.dim()); ++pick) {
      Eigen::VectorXd dir = Eigen::VectorXd::Zero(box.dim());
      dir(order[pick]) = 1.0;
      ascend(support(dir));
      ascend(support(-dir));
    }
  }
  double best_v = -kInf;
  Eigen::VectorXd best_u;
  for (const auto& cand : cands) {
    if (!scenario_member(set, cand, 1e-9)) continue;
    auto rep = solve_lp(detail::inner_lp(ip, cand));
    if (rep.status != SolveStatus::Optimal) continue;
    if (rep.objective > best_v) {
      best_v = rep.objective;
      best_u = cand;
    }
  }
  if (best_v > opts.feas_tol) {
    res.u = best_u;
    res.nodes = probe.nodes;
    res.violation = best_v;
    res.value = best_v;
    return res;
  }

  // nothing cheap separated, so settle the question with the exact
  // complementarity encoding restricted to the set itself; the box bound
  // caps its objective, which is what keeps the endgame proofs affordable
  auto warm = warm_us;
  for (auto& cand : cands) warm.push_back(std::move(cand));
  std::vector<double> md(ip.rows(), 1.0);  // unit objective caps every dual
  const double cap =
      probe.milp_value + 1e-6 * (1.0 + std::abs(probe.milp_value));
  auto out = detail::solve_max_min(ip, set, cf, opts, md, warm, cut_pool, cap);
  res.u = out.u;
  res.nodes = probe.nodes + out.nodes;
  res.big_m_hit = out.big_m_hit;
  auto direct = solve_lp(detail::inner_lp(ip, out.u));
  require(direct.status == SolveStatus::Optimal,
          "feasibility_subproblem: slack evaluation failed");
  res.violation = direct.objective;
  res.value = direct.objective;
  return res;
}

/* Worst-case second-stage cost over the set for a fixed commitment. Returns
   +inf with a witness scenario when some member scenario cannot be served at
   all; otherwise the exact max-min value and its argmax. */
inline SubproblemResult worst_case_subproblem(
    const CompactTwoStage& cf, const std::vector<double>& xv,
    const UncertaintySet& set, const CcgOptions& opts = {},
    const std::vector<Eigen::VectorXd>& warm_us = {},
    const std::vector<double>* dual_cap_cache = nullptr,
    std::vector<LazyCut>* cut_pool = nullptr) {
  auto cover = feasibility_subproblem(cf, xv, set, opts, warm_us, cut_pool);
  if (cover.violation > opts.feas_tol) {
    cover.value = kInf;
    return cover;
  }
  const auto ip = detail::cost_inner(cf, xv);
  std::vector<double> md_local;
  if (!dual_cap_cache) {
    md_local = detail::dual_caps(ip, opts.dual_big_m);
    dual_cap_cache = &md_local;
  }
  auto out =
      detail::solve_max_min(ip, set, cf, opts, *dual_cap_cache, warm_us, cut_pool);

  SubproblemResult res;
  res.u = out.u;
  res.nodes = out.nodes;
  res.big_m_hit = out.big_m_hit;
  res.violation = cover.violation;
  const double direct = scenario_cost(cf, xv, out.u);
  res.value = direct;
  if (std::isfinite(direct) &&
      std::abs(direct - out.milp_value) > 1e-5 * (1.0 + std::abs(direct)))
    res.big_m_hit = true;  // encoding and evaluation disagree, M too small
  return res;
}

/* Commitment master over the scenarios enumerated so far: eta tracks the
   worst linked scenario, coverage scenarios only pin feasibility. */
inline MasterResult master_problem(
    const PowerSystem& sys, const CompactTwoStage& cf,
    const Eigen::MatrixXd& uhat,
    const std::vector<Eigen::VectorXd>& cost_scenarios,
    const std::vector<Eigen::VectorXd>& cover_scenarios,
    const MilpOptions& opts = {}, const std::vector<double>* warm_x = nullptr) {
  LinearProgram lp;
  const XLayout xl = add_predispatch_stage(&lp, sys, uhat);
  const auto cost = predispatch_cost_vector(sys, xl);
  for (int j = 0; j < xl.size(); ++j) lp.objective[j] = cost[j];
  const int eta_col =
      lp.add_col(0.0, kInf, 1.0, VarKind::Continuous, "eta");

  auto add_block = [&](const Eigen::VectorXd& u, bool linked, int index) {
    const std::string stem =
        (linked ? "sc" : "cov") + std::to_string(index) + "_";
    const int y_base = lp.num_cols();
    for (int j = 0; j < cf.yl.size(); ++j)
      lp.add_col(0.0, kInf, 0.0, VarKind::Continuous,
                 stem + "y" + std::to_string(j));
    for (int i = 0; i < cf.num_rows(); ++i) {
      std::vector<std::pair<int, double>> row;
      for (const auto& [j, c] : cf.a_rows[i]) row.push_back({y_base + j, c});
      for (const auto& [j, c] : cf.b_rows[i]) row.push_back({j, -c});
      lp.add_row(RowSense::GreaterEqual,
                 cf.e[i] + detail::dot_sparse(cf.d_rows[i], u), row,
                 stem + cf.row_names[i]);
    }
    if (linked) {
      std::vector<std::pair<int, double>> row{{eta_col, 1.0}};
      for (int j = 0; j < cf.yl.size(); ++j)
        if (cf.f[j] != 0.0) row.push_back({y_base + j, -cf.f[j]});
      lp.add_row(RowSense::GreaterEqual, 0.0, row, stem + "link");
    }
    return y_base;
  };
  std::vector<int> bases;
  for (std::size_t kk = 0; kk < cost_scenarios.size(); ++kk)
    bases.push_back(add_block(cost_scenarios[kk], true, static_cast<int>(kk)));
  for (std::size_t kk = 0; kk < cover_scenarios.size(); ++kk)
    bases.push_back(add_block(cover_scenarios[kk], false, static_cast<int>(kk)));

  MilpOptions milp = opts;
  if (warm_x && static_cast<int>(warm_x->size()) == xl.size()) {
    // re-dispatch the previous commitment against every scenario
    std::vector<double> v(lp.num_cols(), 0.0);
    std::copy(warm_x->begin(), warm_x->end(), v.begin());
    bool ok = true;
    double eta = 0.0;
    std::size_t block = 0;
    auto fill = [&](const Eigen::VectorXd& u, bool linked) {
      std::vector<double> uv(u.data(), u.data() + u.size());
      auto rep = solve_lp(redispatch_lp(cf, *warm_x, uv));
      if (rep.status != SolveStatus::Optimal) {
        ok = false;
        return;
      }
      for (int j = 0; j < cf.yl.size(); ++j)
        v[bases[block] + j] = rep.primal[j];
      if (linked) eta = std::max(eta, rep.objective);
      ++block;
    };
    for (const auto& u : cost_scenarios) {
      if (!ok) break;
      fill(u, true);
    }
    for (const auto& u : cover_scenarios) {
      if (!ok) break;
      fill(u, false);
    }
    if (ok) {
      v[eta_col] = eta;
      double obj = eta;
      for (int j = 0; j < xl.size(); ++j) obj += cost[j] * (*warm_x)[j];
      if (lp.max_violation(v) <= 1e-7) milp.incumbent_hint = {obj, std::move(v)};
    }
  }

  auto rep = solve_milp(lp, milp);
  require(rep.status == SolveStatus::Optimal,
          "master problem ended " + std::string(to_string(rep.status)) +
          "; commitment constraints and scenarios are inconsistent");
  MasterResult out;
  out.raw.assign(rep.primal.begin(), rep.primal.begin() + xl.size());
  out.x = CommitmentSchedule::from_vector(xl, rep.primal);
  out.xv = out.x.to_vector(cf.xl);
  out.eta = rep.primal[eta_col];
  out.objective = rep.objective;
  return out;
}

/* Alternate the master and the adversary until the bounds meet. Scenarios
   whose re-dispatch collapses re-enter as coverage blocks; repeated
   scenarios end the loop since nothing new would be cut off. */
inline RobustSolution solve_two_stage_robust(const PowerSystem& sys,
                                             const Eigen::MatrixXd& uhat,
                                             const UncertaintySet& set,
                                             const CcgOptions& opts = {}) {
  const CompactTwoStage cf = build_compact_form(sys);
  CcgState st;
  RobustSolution best;
  // multiplier caps only involve the recourse matrix and costs, solve once
  const std::vector<double> cost_caps = detail::dual_caps(
      detail::cost_inner(cf, std::vector<double>(cf.xl.size(), 0.0)),
      opts.dual_big_m);
  std::vector<LazyCut> cut_pool;  // ellipsoid linearizations, shared run-wide
  std::optional<MasterResult> prev;

  auto known_scenarios = [&] {
    std::vector<Eigen::VectorXd> all(st.cost_scenarios.rbegin(),
                                     st.cost_scenarios.rend());
    all.insert(all.end(), st.cover_scenarios.begin(), st.cover_scenarios.end());
    return all;
  };
  auto dup_in = [&](const std::vector<Eigen::VectorXd>& list,
                    const Eigen::VectorXd& u) {
    return std::any_of(list.begin(), list.end(), [&](const Eigen::VectorXd& v) {
      return (u - v).cwiseAbs().maxCoeff() <= opts.dedup_tol;
    });
  };

  for (int iter = 1; iter <= opts.max_iter; ++iter) {
    auto master = master_problem(sys, cf, uhat, st.cost_scenarios,
                                 st.cover_scenarios, opts.master_milp,
                                 prev ? &prev->raw : nullptr);
    st.lb = master.objective;

    std::string status;
    Eigen::VectorXd u_new;
    bool linked = false;
    auto sub = worst_case_subproblem(cf, master.xv, set, opts,
                                     known_scenarios(), &cost_caps, &cut_pool);
    st.big_m_hit |= sub.big_m_hit;
    if (!std::isfinite(sub.value)) {
      status = "feasibility_cut";
      u_new = sub.u;
    } else {
      status = "optimal";
      linked = true;
      u_new = sub.u;
      double cx = 0.0;
      for (int j = 0; j < cf.xl.size(); ++j) cx += cf.c[j] * master.xv[j];
      const double candidate = cx + sub.value;
      if (candidate < st.ub) {
        st.ub = candidate;
        best.x = master.x;
        best.xv = master.xv;
        best.objective = candidate;
        best.first_stage_cost = cx;
        best.worst_u = sub.u;
      }
    }
    ++st.iterations;
    prev = master;

    const double gap = (std::isfinite(st.ub) && std::isfinite(st.lb))
                           ? (st.ub - st.lb) / (1.0 + std::abs(st.ub))
                           : kInf;
    /* A repeated scenario would cut nothing new, so the loop has stalled.
       A cost candidate only counts as repeated against cost scenarios: the
       same point promoted from a coverage block still adds its eta link. */
    const bool repeat = linked ? dup_in(st.cost_scenarios, u_new)
                               : dup_in(st.cost_scenarios, u_new) ||
                                     dup_in(st.cover_scenarios, u_new);
    if (repeat && status == "optimal") status = "repeat_scenario";
    nlohmann::ordered_json line{{"iter", iter},
                                {"lb", st.lb},
                                {"ub", st.ub},
                                {"gap", gap},
                                {"subproblem_status", status},
                                {"scenario_count",
                                 st.cost_scenarios.size() +
                                     st.cover_scenarios.size()}};
    st.log.push_back(line.dump());
    if (opts.log_stream) (*opts.log_stream) << st.log.back() << "\n";

    if (gap <= opts.tol || repeat) {
      st.converged = true;
      break;
    }
    if (linked)
      st.cost_scenarios.push_back(u_new);
    else
      st.cover_scenarios.push_back(u_new);
  }

  if (!std::isfinite(best.objective) && prev) {
    // never evaluated a finite worst case; surface the last master anyway
    best.x = prev->x;
    best.xv = prev->xv;
    best.first_stage_cost = prev->objective - prev->eta;
  }
  best.state = std::move(st);
  return best;
}

// ---------------------------------------------------------------------------
// Two-phase reconstruction driver

struct CalibratedChainReport {
  EllipsoidCapSet first_set;
  CostLevelSet second_set;
  double alpha = 0.0;
  double beta = kInf;
  int order_index = 0;
  int shape_count = 0, size_count = 0;
  double chain_cap = kInf;  // first-phase commitment cost plus the budget
};

struct CalibratedChainResult {
  RobustSolution x0, x1;
  CalibratedChainReport report;
};

inline Eigen::VectorXd flatten_prediction(const PowerSystem& sys,
                                          const Eigen::MatrixXd& uhat) {
  require(uhat.rows() == sys.num_buses() && uhat.cols() == sys.horizon,
          "flatten_prediction: prediction must be buses x periods");
  Eigen::VectorXd flat(sys.num_buses() * sys.horizon);
  for (int i = 0; i < sys.num_buses(); ++i)
    for (int t = 0; t < sys.horizon; ++t)
      flat(load_index(sys, i, t)) = uhat(i, t);
  return flat;
}

/* Two solves: an ellipsoid sized to swallow the whole shape split, then a
   cost-level set budgeted on the held-out split around the first commitment.
   The held-out budget is what carries the out-of-sample guarantee. */
inline CalibratedChainResult run_calibrated_chain(const PowerSystem& sys,
                                       const Eigen::MatrixXd& uhat,
                                       const std::vector<Eigen::VectorXd>& errors,
                                       double eps, double delta, int n2,
                                       const BoxSet& box,
                                       const CcgOptions& opts = {}) {
  const int n = static_cast<int>(errors.size());
  require(n2 >= 1 && n - n2 >= 2,
          "run_calibrated_chain: need at least two shape samples and one size sample");
  const std::vector<Eigen::VectorXd> shape(errors.begin(), errors.begin() + (n - n2));
  const std::vector<Eigen::VectorXd> size_split(errors.begin() + (n - n2),
                                                errors.end());
  const Eigen::VectorXd flat = flatten_prediction(sys, uhat);

  CalibratedChainResult out;
  out.report.shape_count = static_cast<int>(shape.size());
  out.report.size_count = n2;
  out.report.first_set = build_ellipsoid_variant(
      flat, shape, EllipsoidMode::AllData, eps, box);
  out.report.alpha = out.report.first_set.alpha;
  out.x0 = solve_two_stage_robust(sys, uhat, out.report.first_set, opts);
  require(out.x0.state.converged, "run_calibrated_chain: first phase did not converge");

  const CompactTwoStage cf = build_compact_form(sys);
  out.report.second_set =
      reconstruct_set(out.x0.xv, flat, size_split, eps, delta, box, cf);
  out.report.beta = out.report.second_set.beta;
  out.report.order_index = quantile_order_index(n2, eps, delta);
  out.report.chain_cap = out.x0.first_stage_cost + out.report.beta;

  out.x1 = solve_two_stage_robust(sys, uhat, out.report.second_set, opts);
  require(out.x1.state.converged, "run_calibrated_chain: second phase did not converge");
  return out;
}

}  // namespace ucr
