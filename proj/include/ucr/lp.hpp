#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "ucr/common.hpp"

namespace ucr {

enum class RowSense { LessEqual, Equal, GreaterEqual };
enum class VarKind { Continuous, Binary };
enum class SolveStatus { Optimal, Infeasible, Unbounded, IterationLimit };

inline const char* to_string(SolveStatus s) {
  switch (s) {
    case SolveStatus::Optimal: return "optimal";
    case SolveStatus::Infeasible: return "infeasible";
    case SolveStatus::Unbounded: return "unbounded";
    case SolveStatus::IterationLimit: return "iteration_limit";
  }
  return "unknown";
}

struct LinearProgram {
  bool maximize = false;
  std::vector<double> objective;
  std::vector<double> lower, upper;
  std::vector<VarKind> kind;
  std::vector<std::string> col_names;

  std::vector<std::vector<std::pair<int, double>>> rows;
  std::vector<RowSense> sense;
  std::vector<double> rhs;
  std::vector<std::string> row_names;

  int num_cols() const { return static_cast<int>(objective.size()); }
  int num_rows() const { return static_cast<int>(rows.size()); }

  int add_col(double lo, double hi, double obj,
              VarKind k = VarKind::Continuous, std::string name = {}) {
    require(!(lo > hi), "add_col: lower bound above upper bound");
    objective.push_back(obj);
    lower.push_back(lo);
    upper.push_back(hi);
    kind.push_back(k);
    col_names.push_back(std::move(name));
    return num_cols() - 1;
  }

  int add_row(RowSense s, double b,
              std::vector<std::pair<int, double>> coeffs,
              std::string name = {}) {
    for (auto& [j, c] : coeffs)
      require(j >= 0 && j < num_cols(), "add_row: column index out of range");
    rows.push_back(std::move(coeffs));
    sense.push_back(s);
    rhs.push_back(b);
    row_names.push_back(std::move(name));
    return num_rows() - 1;
  }

  std::string col_name(int j) const {
    if (!col_names[j].empty()) return col_names[j];
    return "x" + std::to_string(j);
  }

  std::string row_name(int i) const {
    if (!row_names[i].empty()) return row_names[i];
    return "r" + std::to_string(i);
  }

  double row_activity(int i, const std::vector<double>& x) const {
    double a = 0.0;
    for (const auto& [j, c] : rows[i]) a += c * x[j];
    return a;
  }

  // signed violation, positive means infeasible
  double row_violation(int i, const std::vector<double>& x) const {
    const double a = row_activity(i, x);
    switch (sense[i]) {
      case RowSense::LessEqual: return a - rhs[i];
      case RowSense::GreaterEqual: return rhs[i] - a;
      case RowSense::Equal: return std::abs(a - rhs[i]);
    }
    return 0.0;
  }

  double max_violation(const std::vector<double>& x) const {
    double worst = 0.0;
    for (int i = 0; i < num_rows(); ++i)
      worst = std::max(worst, row_violation(i, x));
    for (int j = 0; j < num_cols(); ++j) {
      worst = std::max(worst, lower[j] - x[j]);
      worst = std::max(worst, x[j] - upper[j]);
    }
    return worst;
  }

  double eval_objective(const std::vector<double>& x) const {
    double v = 0.0;
    for (int j = 0; j < num_cols(); ++j) v += objective[j] * x[j];
    return v;
  }
};

struct SolveReport {
  SolveStatus status = SolveStatus::Infeasible;
  double objective = 0.0;
  std::vector<double> primal;
  std::vector<double> row_duals;      // LP solves only
  std::vector<double> reduced_costs;  // LP solves only
  double dual_objective = 0.0;        // LP solves only
  double gap = 0.0;                   // MILP relative gap at termination
  double best_bound = 0.0;
  std::int64_t nodes = 0;
  std::int64_t iterations = 0;
};

/* Big-M sizing for a row: interval arithmetic over the column bounds gives the
   largest possible |activity - rhs|, inflated by 10% with a floor of 1 so a
   degenerate interval still yields a usable constant. Unbounded columns make
   the row unusable for big-M work and are an error, the caller must pass an
   explicit constant instead. */
inline double big_m_for_row(const LinearProgram& lp, int row) {
  double lo = 0.0, hi = 0.0;
  for (const auto& [j, c] : lp.rows[row]) {
    const double a = c * lp.lower[j], b = c * lp.upper[j];
    const double t0 = std::min(a, b), t1 = std::max(a, b);
    require(std::isfinite(t0) && std::isfinite(t1),
            "big_m_for_row: unbounded column in row " + lp.row_name(row) +
                ", pass an explicit big-M");
    lo += t0;
    hi += t1;
  }
  const double dev =
      std::max(std::abs(lo - lp.rhs[row]), std::abs(hi - lp.rhs[row]));
  return std::max(1.0, 1.1 * dev);
}

// interval of a linear expression over the column bounds
inline std::pair<double, double> activity_interval(
    const LinearProgram& lp, const std::vector<std::pair<int, double>>& expr) {
  double lo = 0.0, hi = 0.0;
  for (const auto& [j, c] : expr) {
    const double a = c * lp.lower[j], b = c * lp.upper[j];
    lo += std::min(a, b);
    hi += std::max(a, b);
  }
  return {lo, hi};
}

}  // namespace ucr
