#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <vector>

#include "ucr/common.hpp"

namespace ucr {

struct SymmetricEigen {
  Eigen::VectorXd values;   // descending
  Eigen::MatrixXd vectors;  // columns match values
};

/* Cyclic Jacobi for symmetric matrices. Deterministic sweep order and a fixed
   sign convention (largest-magnitude entry of each vector is positive) so
   repeated runs and different platforms agree bit-for-bit on well separated
   spectra. */
inline SymmetricEigen symmetric_eigen(const Eigen::MatrixXd& input) {
  const int n = static_cast<int>(input.rows());
  require(input.cols() == n, "symmetric_eigen: matrix must be square");
  Eigen::MatrixXd a = 0.5 * (input + input.transpose());
  Eigen::MatrixXd v = Eigen::MatrixXd::Identity(n, n);

  const double scale = std::max(1.0, a.cwiseAbs().maxCoeff());
  const double tol = 1e-14 * scale;
  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0.0;
    for (int p = 0; p < n; ++p)
      for (int q = p + 1; q < n; ++q) off = std::max(off, std::abs(a(p, q)));
    if (off <= tol) break;
    for (int p = 0; p < n; ++p) {
      for (int q = p + 1; q < n; ++q) {
        const double apq = a(p, q);
        if (std::abs(apq) <= tol * 1e-3) continue;
        const double theta = (a(q, q) - a(p, p)) / (2.0 * apq);
        double t = (theta >= 0 ? 1.0 : -1.0) /
                   (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (int k = 0; k < n; ++k) {
          const double akp = a(k, p), akq = a(k, q);
          a(k, p) = c * akp - s * akq;
          a(k, q) = s * akp + c * akq;
        }
        for (int k = 0; k < n; ++k) {
          const double apk = a(p, k), aqk = a(q, k);
          a(p, k) = c * apk - s * aqk;
          a(q, k) = s * apk + c * aqk;
        }
        for (int k = 0; k < n; ++k) {
          const double vkp = v(k, p), vkq = v(k, q);
          v(k, p) = c * vkp - s * vkq;
          v(k, q) = s * vkp + c * vkq;
        }
      }
    }
  }

  std::vector<int> order(n);
  for (int i = 0; i < n; ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(),
                   [&](int i, int j) { return a(i, i) > a(j, j); });

  SymmetricEigen out;
  out.values.resize(n);
  out.vectors.resize(n, n);
  for (int k = 0; k < n; ++k) {
    out.values(k) = a(order[k], order[k]);
    Eigen::VectorXd col = v.col(order[k]);
    int imax = 0;
    for (int i = 1; i < n; ++i)
      if (std::abs(col(i)) > std::abs(col(imax))) imax = i;
    if (col(imax) < 0) col = -col;
    out.vectors.col(k) = col;
  }
  return out;
}

/* Cholesky factor of an SPD matrix; solves and quadratic forms go through the
   factor, the inverse is never formed. */
class SpdFactor {
public:
  explicit SpdFactor(const Eigen::MatrixXd& m) : llt_(m) {
    require(llt_.info() == Eigen::Success,
            "SpdFactor: matrix is not positive definite");
  }

  Eigen::VectorXd solve(const Eigen::VectorXd& rhs) const {
    return llt_.solve(rhs);
  }

  Eigen::MatrixXd solve(const Eigen::MatrixXd& rhs) const {
    return llt_.solve(rhs);
  }

  // v' M^{-1} v
  double quad(const Eigen::VectorXd& v) const { return v.dot(llt_.solve(v)); }

  // lower-triangular L with M = L L'
  Eigen::MatrixXd matrix_l() const { return llt_.matrixL(); }

private:
  Eigen::LLT<Eigen::MatrixXd> llt_;
};

// Euclidean projection onto the probability simplex {w >= 0, sum w = 1}
inline Eigen::VectorXd project_to_simplex(const Eigen::VectorXd& y) {
  const int n = static_cast<int>(y.size());
  std::vector<double> u(y.data(), y.data() + n);
  std::sort(u.begin(), u.end(), std::greater<double>());
  double css = 0.0, theta = 0.0;
  int rho = 0;
  for (int i = 0; i < n; ++i) {
    css += u[i];
    const double t = (css - 1.0) / (i + 1);
    if (u[i] - t > 0) {
      rho = i + 1;
      theta = t;
    }
  }
  (void)rho;
  Eigen::VectorXd out(n);
  for (int i = 0; i < n; ++i) out(i) = std::max(0.0, y(i) - theta);
  return out;
}

}  // namespace ucr
