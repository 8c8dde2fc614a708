#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <set>
#include <vector>

#include "ucr/lp.hpp"

namespace ucr {

struct SimplexOptions {
  double feas_tol = 1e-7;
  double pivot_tol = 1e-9;
  std::int64_t max_iterations = 200000;
  int refresh_every = 128;
};

/* Bounded-variable primal simplex on a dense tableau, two phases with
   artificials. Dantzig pricing with a Bland fallback once degenerate pivots
   pile up. All tie-breaking is lowest-index so runs are reproducible. */
class SimplexEngine {
  enum Status : unsigned char { kBasic, kAtLower, kAtUpper, kFree };

public:
  SimplexEngine(const LinearProgram& lp, const SimplexOptions& opts)
      : opts_(opts), m_(lp.num_rows()), n_(lp.num_cols()) {
    const int ntot = n_ + 2 * m_;
    a_ = Eigen::MatrixXd::Zero(m_, ntot);
    b_.resize(m_);
    lo_.assign(ntot, 0.0);
    hi_.assign(ntot, 0.0);
    cost_.assign(ntot, 0.0);

    for (int j = 0; j < n_; ++j) {
      lo_[j] = lp.lower[j];
      hi_[j] = lp.upper[j];
      cost_[j] = lp.maximize ? -lp.objective[j] : lp.objective[j];
      if (lp.kind[j] == VarKind::Binary) {
        lo_[j] = std::max(lo_[j], 0.0);
        hi_[j] = std::min(hi_[j], 1.0);
      }
    }
    for (int i = 0; i < m_; ++i) {
      for (const auto& [j, c] : lp.rows[i]) a_(i, j) += c;
      b_(i) = lp.rhs[i];
      const int s = n_ + i;
      a_(i, s) = 1.0;
      switch (lp.sense[i]) {
        case RowSense::LessEqual: lo_[s] = 0.0; hi_[s] = kInf; break;
        case RowSense::GreaterEqual: lo_[s] = -kInf; hi_[s] = 0.0; break;
        case RowSense::Equal: lo_[s] = 0.0; hi_[s] = 0.0; break;
      }
    }
    maximize_ = lp.maximize;
  }

  SolveReport solve() {
    init_start_point();
    SolveReport rep;

    run_phase(/*phase1=*/true);
    if (iterations_ >= opts_.max_iterations) {
      rep.status = SolveStatus::IterationLimit;
      rep.iterations = iterations_;
      return rep;
    }
    double infeas = 0.0;
    for (int i = 0; i < m_; ++i)
      if (basis_[i] >= n_ + m_) infeas += std::abs(xval_[basis_[i]]);
    const double scale = 1.0 + (m_ > 0 ? b_.cwiseAbs().maxCoeff() : 0.0);
    if (infeas > opts_.feas_tol * scale) {
      rep.status = SolveStatus::Infeasible;
      rep.iterations = iterations_;
      return rep;
    }
    retire_artificials();

    const bool done = run_phase(/*phase1=*/false);
    rep.iterations = iterations_;
    if (!done) {
      rep.status = unbounded_ ? SolveStatus::Unbounded
                              : SolveStatus::IterationLimit;
      return rep;
    }

    refresh();
    rep.status = SolveStatus::Optimal;
    rep.primal.assign(xval_.begin(), xval_.begin() + n_);
    rep.objective = 0.0;
    for (int j = 0; j < n_; ++j) rep.objective += cost_[j] * xval_[j];
    rep.row_duals.assign(y_.data(), y_.data() + m_);
    rep.reduced_costs.assign(d_.begin(), d_.begin() + n_);
    double dual_obj = y_.dot(b_);
    for (int j = 0; j < n_; ++j) {
      if (d_[j] > 0 && std::isfinite(lo_[j])) dual_obj += d_[j] * lo_[j];
      else if (d_[j] < 0 && std::isfinite(hi_[j])) dual_obj += d_[j] * hi_[j];
    }
    rep.dual_objective = dual_obj;
    if (maximize_) {
      rep.objective = -rep.objective;
      rep.dual_objective = -rep.dual_objective;
      for (auto& v : rep.row_duals) v = -v;
      for (auto& v : rep.reduced_costs) v = -v;
    }
    return rep;
  }

private:
  void init_start_point() {
    const int ntot = n_ + 2 * m_;
    xval_.assign(ntot, 0.0);
    stat_.assign(ntot, kAtLower);
    for (int j = 0; j < n_ + m_; ++j) {
      if (std::isfinite(lo_[j])) {
        stat_[j] = kAtLower;
        xval_[j] = lo_[j];
      } else if (std::isfinite(hi_[j])) {
        stat_[j] = kAtUpper;
        xval_[j] = hi_[j];
      } else {
        stat_[j] = kFree;
        xval_[j] = 0.0;
      }
    }
    Eigen::VectorXd r = b_;
    for (int j = 0; j < n_ + m_; ++j)
      if (xval_[j] != 0.0) r -= a_.col(j) * xval_[j];

    basis_.resize(m_);
    t_ = Eigen::MatrixXd::Zero(m_, ntot);
    for (int i = 0; i < m_; ++i) {
      const int art = n_ + m_ + i;
      const double sg = (r(i) >= 0.0) ? 1.0 : -1.0;
      a_(i, art) = sg;
      lo_[art] = 0.0;
      hi_[art] = kInf;
      xval_[art] = sg * r(i);
      stat_[art] = kBasic;
      basis_[i] = art;
      t_.row(i) = sg * a_.row(i);
    }
    iterations_ = 0;
    unbounded_ = false;
    bland_ = false;
    degen_run_ = 0;
  }

  void set_phase_costs(bool phase1) {
    pc_.assign(n_ + 2 * m_, 0.0);
    if (phase1) {
      for (int i = 0; i < m_; ++i) pc_[n_ + m_ + i] = 1.0;
    } else {
      for (int j = 0; j < n_; ++j) pc_[j] = cost_[j];
    }
    double cmax = 0.0;
    for (double c : pc_) cmax = std::max(cmax, std::abs(c));
    dtol_ = 1e-9 * (1.0 + cmax);
  }

  void refresh() {
    if (m_ == 0) {
      d_.assign(pc_.begin(), pc_.end());
      y_.resize(0);
      return;
    }
    Eigen::MatrixXd bmat(m_, m_);
    for (int i = 0; i < m_; ++i) bmat.col(i) = a_.col(basis_[i]);
    lu_.compute(bmat);

    Eigen::VectorXd rhs = b_;
    for (int j = 0; j < n_ + 2 * m_; ++j)
      if (stat_[j] != kBasic && xval_[j] != 0.0) rhs -= a_.col(j) * xval_[j];
    const Eigen::VectorXd xb = lu_.solve(rhs);
    for (int i = 0; i < m_; ++i) xval_[basis_[i]] = xb(i);

    t_ = lu_.solve(a_);

    Eigen::VectorXd cb(m_);
    for (int i = 0; i < m_; ++i) cb(i) = pc_[basis_[i]];
    y_ = lu_.transpose().solve(cb);
    const Eigen::VectorXd dv =
        Eigen::Map<const Eigen::VectorXd>(pc_.data(), n_ + 2 * m_) -
        a_.transpose() * y_;
    d_.assign(dv.data(), dv.data() + n_ + 2 * m_);
    for (int i = 0; i < m_; ++i) d_[basis_[i]] = 0.0;
  }

  bool movable(int j) const { return lo_[j] < hi_[j] || stat_[j] == kFree; }

  // returns direction or 0 if column is not attractive
  int price_dir(int j) const {
    if (stat_[j] == kBasic || !movable(j)) return 0;
    const double dj = d_[j];
    switch (stat_[j]) {
      case kAtLower: return dj < -dtol_ ? +1 : 0;
      case kAtUpper: return dj > +dtol_ ? -1 : 0;
      case kFree:
        if (dj < -dtol_) return +1;
        if (dj > +dtol_) return -1;
        return 0;
      default: return 0;
    }
  }

  // true when the phase finished at an optimum; false on unbounded/limit
  bool run_phase(bool phase1) {
    set_phase_costs(phase1);
    refresh();
    std::set<int> banned;
    int since_refresh = 0;
    int futile_rescans = 0;

    while (iterations_ < opts_.max_iterations) {
      int enter = -1, dir = 0;
      double best = 0.0;
      for (int j = 0; j < n_ + 2 * m_; ++j) {
        if (banned.count(j)) continue;
        const int dj = price_dir(j);
        if (dj == 0) continue;
        if (bland_) {
          enter = j;
          dir = dj;
          break;
        }
        const double score = std::abs(d_[j]);
        if (score > best + 1e-15) {
          best = score;
          enter = j;
          dir = dj;
        }
      }
      if (enter < 0) {
        if (!banned.empty() && futile_rescans < 3) {
          ++futile_rescans;
          banned.clear();
          refresh();
          since_refresh = 0;
          // after a clean refresh, one more pricing round decides
          int e2 = -1;
          for (int j = 0; j < n_ + 2 * m_ && e2 < 0; ++j)
            if (price_dir(j) != 0) e2 = j;
          if (e2 < 0) return true;
          continue;
        }
        return true;
      }

      // ratio test
      double step = (std::isfinite(lo_[enter]) && std::isfinite(hi_[enter]))
                        ? hi_[enter] - lo_[enter]
                        : kInf;
      int leave_row = -1;
      for (int i = 0; i < m_; ++i) {
        const double rate = dir * t_(i, enter);
        const int k = basis_[i];
        double ti = kInf;
        if (rate > opts_.pivot_tol) {
          if (std::isfinite(lo_[k])) ti = std::max(0.0, xval_[k] - lo_[k]) / rate;
        } else if (rate < -opts_.pivot_tol) {
          if (std::isfinite(hi_[k])) ti = std::max(0.0, hi_[k] - xval_[k]) / (-rate);
        }
        const double tie =
            1e-12 * (1.0 + (std::isfinite(step) ? std::abs(step) : 0.0));
        if (ti < step - tie) {
          step = ti;
          leave_row = i;
        } else if (leave_row >= 0 && ti <= step + tie) {
          // tie: prefer the stabler pivot, then the lowest variable index
          const double cur = std::abs(t_(leave_row, enter));
          const double cand = std::abs(t_(i, enter));
          if (bland_ ? basis_[i] < basis_[leave_row] : cand > cur + 1e-12)
            leave_row = i;
        }
      }

      if (!std::isfinite(step)) {
        if (phase1) {  // cannot happen with consistent data; bail safely
          refresh();
          banned.insert(enter);
          continue;
        }
        unbounded_ = true;
        return false;
      }

      ++iterations_;
      futile_rescans = 0;
      if (step <= 1e-12) {
        if (++degen_run_ > std::max<std::int64_t>(200, 4 * m_)) bland_ = true;
      } else {
        degen_run_ = 0;
      }

      if (leave_row < 0) {
        // bound flip, basis unchanged
        for (int i = 0; i < m_; ++i)
          xval_[basis_[i]] -= dir * t_(i, enter) * step;
        xval_[enter] += dir * step;
        stat_[enter] = (dir > 0) ? kAtUpper : kAtLower;
        xval_[enter] = (dir > 0) ? hi_[enter] : lo_[enter];
      } else {
        const double piv = t_(leave_row, enter);
        if (std::abs(piv) < opts_.pivot_tol) {
          refresh();
          since_refresh = 0;
          banned.insert(enter);
          continue;
        }
        for (int i = 0; i < m_; ++i)
          xval_[basis_[i]] -= dir * t_(i, enter) * step;
        xval_[enter] += dir * step;

        const int leave = basis_[leave_row];
        const double rate = dir * piv;
        if (rate > 0) {
          stat_[leave] = kAtLower;
          xval_[leave] = lo_[leave];
        } else {
          stat_[leave] = kAtUpper;
          xval_[leave] = hi_[leave];
        }
        basis_[leave_row] = enter;
        stat_[enter] = kBasic;

        const Eigen::RowVectorXd prow = t_.row(leave_row) / piv;
        const Eigen::VectorXd colv = t_.col(enter);
        t_ -= colv * prow;
        t_.row(leave_row) = prow;
        const double dj = d_[enter];
        for (int j = 0; j < n_ + 2 * m_; ++j) d_[j] -= dj * prow(j);
        d_[enter] = 0.0;
        banned.clear();
      }

      if (++since_refresh >= opts_.refresh_every) {
        refresh();
        since_refresh = 0;
      }
    }
    return false;
  }

  /* After phase 1 the artificials are pinned to zero. Basic ones are pivoted
     out where a usable pivot exists; a row with no usable pivot is redundant
     and keeps its fixed artificial. */
  void retire_artificials() {
    for (int i = 0; i < m_; ++i) {
      const int art = n_ + m_ + i;
      lo_[art] = hi_[art] = 0.0;
      if (stat_[art] != kBasic) xval_[art] = 0.0;
    }
    for (int r = 0; r < m_; ++r) {
      if (basis_[r] < n_ + m_) continue;
      int enter = -1;
      double best = 0.0;
      for (int j = 0; j < n_ + m_; ++j) {
        if (stat_[j] == kBasic) continue;
        const double v = std::abs(t_(r, j));
        if (v > 1e-7 && v > best) {
          best = v;
          enter = j;
        }
      }
      if (enter < 0) continue;  // redundant row
      const int art = basis_[r];
      const double piv = t_(r, enter);
      basis_[r] = enter;
      stat_[enter] = kBasic;
      stat_[art] = kAtLower;
      xval_[art] = 0.0;
      const Eigen::RowVectorXd prow = t_.row(r) / piv;
      const Eigen::VectorXd colv = t_.col(enter);
      t_ -= colv * prow;
      t_.row(r) = prow;
    }
  }

  SimplexOptions opts_;
  int m_, n_;
  bool maximize_ = false;
  Eigen::MatrixXd a_;  // structural | slack | artificial
  Eigen::VectorXd b_;
  std::vector<double> lo_, hi_, cost_, pc_;
  Eigen::MatrixXd t_;
  std::vector<int> basis_;
  std::vector<double> xval_;
  std::vector<unsigned char> stat_;
  std::vector<double> d_;
  Eigen::VectorXd y_;
  Eigen::PartialPivLU<Eigen::MatrixXd> lu_;
  double dtol_ = 1e-9;
  std::int64_t iterations_ = 0;
  std::int64_t degen_run_ = 0;
  bool bland_ = false;
  bool unbounded_ = false;
};

inline SolveReport solve_lp(const LinearProgram& lp,
                            const SimplexOptions& opts = {}) {
  SimplexEngine engine(lp, opts);
  return engine.solve();
}

}  // namespace ucr
