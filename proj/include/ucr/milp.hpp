#pragma once

#include <cstdlib>
#include <functional>
#include <optional>
#include <queue>
#include <string>
#include <utility>
#include <vector>

#include "ucr/simplex.hpp"

namespace ucr {

struct LazyCut {
  std::vector<std::pair<int, double>> coeffs;
  RowSense sense = RowSense::LessEqual;
  double rhs = 0.0;
};

// returns a violated cut for the point, or nothing if the point is acceptable
using LazyCutSource =
    std::function<std::optional<LazyCut>(const std::vector<double>&)>;

struct MilpOptions {
  double gap_tol = 1e-6;
  double int_tol = 1e-6;
  std::int64_t node_limit = -1;  // <0: take UCR_MAX_NODES from env, else none
  std::int64_t max_cut_rounds = 20000;
  SimplexOptions lp;
  LazyCutSource lazy;
  // known feasible solution used as the starting incumbent
  std::optional<std::pair<double, std::vector<double>>> incumbent_hint;
};

namespace detail {

inline std::int64_t effective_node_limit(std::int64_t from_opts) {
  if (from_opts >= 0) return from_opts;
  if (const char* env = std::getenv("UCR_MAX_NODES")) {
    char* end = nullptr;
    const long long v = std::strtoll(env, &end, 10);
    if (end != env && v >= 0) return v;
  }
  return std::numeric_limits<std::int64_t>::max();
}

struct Node {
  double bound;
  std::int64_t id;
  std::vector<double> lower, upper;
};

struct NodeOrder {
  bool operator()(const Node& a, const Node& b) const {
    if (a.bound != b.bound) return a.bound > b.bound;  // min-heap on bound
    return a.id > b.id;
  }
};

}  // namespace detail

/* Best-bound branch and bound over the binary columns. Branching picks the
   most fractional binary (ties to the lowest index); nodes re-solve their LP
   relaxation from scratch against the shared cut pool. Lazy cuts are only
   requested at integer-feasible points and join the pool globally. */
inline SolveReport solve_milp(const LinearProgram& lp_in,
                              const MilpOptions& opts = {}) {
  LinearProgram lp = lp_in;
  const bool maximize = lp.maximize;
  if (maximize) {
    lp.maximize = false;
    for (auto& c : lp.objective) c = -c;
  }
  std::vector<int> bins;
  for (int j = 0; j < lp.num_cols(); ++j)
    if (lp.kind[j] == VarKind::Binary) {
      bins.push_back(j);
      lp.lower[j] = std::max(lp.lower[j], 0.0);
      lp.upper[j] = std::min(lp.upper[j], 1.0);
    }

  const std::int64_t node_cap = detail::effective_node_limit(opts.node_limit);
  SolveReport out;
  std::int64_t cut_rounds = 0;

  auto solve_node = [&](const std::vector<double>& lo,
                        const std::vector<double>& up) {
    LinearProgram node = lp;
    node.lower = lo;
    node.upper = up;
    return solve_lp(node, opts.lp);
  };

  auto add_cut = [&](const LazyCut& cut) {
    lp.add_row(cut.sense, cut.rhs, cut.coeffs,
               "lazy" + std::to_string(lp.num_rows()));
  };

  const double int_tol = opts.int_tol;
  auto fractional = [&](const std::vector<double>& x) {
    int worst = -1;
    double score = int_tol;
    for (int j : bins) {
      const double f = std::abs(x[j] - std::round(x[j]));
      if (f > score + 1e-15) {
        score = f;
        worst = j;
      }
    }
    return worst;
  };

  double inc_obj = kInf;
  std::vector<double> inc_x;
  if (opts.incumbent_hint) {
    const auto& [hv, hx] = *opts.incumbent_hint;
    bool ok = static_cast<int>(hx.size()) == lp.num_cols() &&
              lp_in.max_violation(hx) <= 1e-6 && fractional(hx) < 0;
    if (ok && opts.lazy && opts.lazy(hx)) ok = false;
    if (ok) {
      inc_obj = maximize ? -hv : hv;
      inc_x = hx;
    }
  }

  std::priority_queue<detail::Node, std::vector<detail::Node>,
                      detail::NodeOrder>
      queue;
  std::int64_t next_id = 0;
  queue.push({-kInf, next_id++, lp.lower, lp.upper});

  double global_lb = -kInf;
  bool hit_limit = false;

  while (!queue.empty()) {
    if (out.nodes >= node_cap) {
      hit_limit = true;
      break;
    }
    detail::Node node = queue.top();
    queue.pop();
    global_lb = node.bound;
    if (inc_obj < kInf &&
        node.bound >= inc_obj - opts.gap_tol * std::max(1.0, std::abs(inc_obj)))
      break;  // best-bound order: nothing left can improve

    SolveReport rel = solve_node(node.lower, node.upper);
    ++out.nodes;
    out.iterations += rel.iterations;
    if (rel.status == SolveStatus::Infeasible) continue;
    if (rel.status == SolveStatus::Unbounded) {
      out.status = SolveStatus::Unbounded;
      return out;
    }
    if (rel.status == SolveStatus::IterationLimit) {
      hit_limit = true;
      break;
    }
    if (inc_obj < kInf && rel.objective >= inc_obj - 1e-9 * std::max(1.0, std::abs(inc_obj)))
      continue;

    int branch_col = fractional(rel.primal);
    if (branch_col < 0 && opts.lazy) {
      bool pruned = false;
      while (auto cut = opts.lazy(rel.primal)) {
        require(++cut_rounds <= opts.max_cut_rounds,
                "solve_milp: lazy cut rounds exceeded the cap");
        add_cut(*cut);
        rel = solve_node(node.lower, node.upper);
        out.iterations += rel.iterations;
        if (rel.status == SolveStatus::Infeasible) {
          pruned = true;
          break;
        }
        require(rel.status == SolveStatus::Optimal,
                "solve_milp: node LP failed after a lazy cut");
        if (inc_obj < kInf &&
            rel.objective >= inc_obj - 1e-9 * std::max(1.0, std::abs(inc_obj))) {
          pruned = true;
          break;
        }
        branch_col = fractional(rel.primal);
        if (branch_col >= 0) break;
      }
      if (pruned) continue;
    }

    if (branch_col < 0) {
      inc_obj = rel.objective;
      inc_x = rel.primal;
      continue;
    }

    detail::Node down{rel.objective, next_id++, node.lower, node.upper};
    down.upper[branch_col] = 0.0;
    detail::Node up{rel.objective, next_id++, node.lower, node.upper};
    up.lower[branch_col] = 1.0;
    queue.push(std::move(down));
    queue.push(std::move(up));
  }

  if (inc_obj == kInf) {
    out.status = hit_limit ? SolveStatus::IterationLimit : SolveStatus::Infeasible;
    return out;
  }

  double lb = inc_obj;
  if (hit_limit) {
    lb = global_lb;
    while (!queue.empty()) {  // tightest remaining bound
      lb = std::min(lb, queue.top().bound);
      break;
    }
  }
  out.status = hit_limit ? SolveStatus::IterationLimit : SolveStatus::Optimal;
  out.objective = maximize ? -inc_obj : inc_obj;
  out.best_bound = maximize ? -lb : lb;
  out.primal = std::move(inc_x);
  out.gap = std::abs(inc_obj - lb) / std::max(1.0, std::abs(inc_obj));
  if (!hit_limit) out.gap = 0.0;
  return out;
}

}  // namespace ucr
