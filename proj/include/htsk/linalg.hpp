#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <utility>

namespace htsk {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

// Neumaier-compensated running sum. Order of add() calls is the reduction
// order, so callers that need reproducibility feed values by trial index.
class CompensatedSum {
 public:
  void add(double x) {
    const double t = sum_ + x;
    if (std::abs(sum_) >= std::abs(x)) {
      comp_ += (sum_ - t) + x;
    } else {
      comp_ += (x - t) + sum_;
    }
    sum_ = t;
  }
  double value() const { return sum_ + comp_; }

 private:
  double sum_ = 0.0;
  double comp_ = 0.0;
};

inline double hs_norm(const Matrix& a) { return a.norm(); }

// Extreme eigenvalues of a symmetric matrix.
inline std::pair<double, double> symmetric_extreme_eigenvalues(const Matrix& m) {
  if (m.rows() != m.cols()) throw std::invalid_argument("matrix is not square");
  if (m.rows() == 0) return {0.0, 0.0};
  if (m.rows() == 1) return {m(0, 0), m(0, 0)};
  Eigen::SelfAdjointEigenSolver<Matrix> solver(m, Eigen::EigenvaluesOnly);
  if (solver.info() != Eigen::Success) throw std::runtime_error("symmetric eigensolve failed");
  const auto& ev = solver.eigenvalues();
  return {ev.minCoeff(), ev.maxCoeff()};
}

// Spectral norm of a symmetric matrix, max |eigenvalue|.
inline double symmetric_operator_norm(const Matrix& m) {
  const auto [lo, hi] = symmetric_extreme_eigenvalues(m);
  return std::max(std::abs(lo), std::abs(hi));
}

inline bool is_symmetric(const Matrix& m, double tol = 0.0) {
  if (m.rows() != m.cols()) return false;
  for (Eigen::Index j = 0; j < m.cols(); ++j)
    for (Eigen::Index i = 0; i < j; ++i)
      if (std::abs(m(i, j) - m(j, i)) > tol) return false;
  return true;
}

inline Matrix symmetrize(const Matrix& m) {
  if (m.rows() != m.cols()) throw std::invalid_argument("matrix is not square");
  return 0.5 * (m + m.transpose());
}

struct PowerIterationResult {
  double value = 0.0;
  std::size_t iterations = 0;
  bool converged = false;
};

// ||A||_op by power iteration on A^T A, stopping when successive estimates
// agree to `rel_tol`. The start vector is fixed (all ones plus a small
// index-dependent tilt) so the result is deterministic.
inline PowerIterationResult operator_norm_power(const Matrix& a, double rel_tol = 1e-6,
                                                std::size_t max_iter = 10000) {
  PowerIterationResult out;
  if (a.size() == 0) {
    out.converged = true;
    return out;
  }
  const Eigen::Index n = a.cols();
  Vector v(n);
  for (Eigen::Index i = 0; i < n; ++i) v(i) = 1.0 + 0.01 * static_cast<double>(i % 7);
  v.normalize();
  double prev = 0.0;
  for (std::size_t it = 1; it <= max_iter; ++it) {
    Vector w = a.transpose() * (a * v);
    const double norm_w = w.norm();
    out.iterations = it;
    if (norm_w == 0.0) {
      out.value = 0.0;
      out.converged = true;
      return out;
    }
    const double est = std::sqrt(norm_w);
    v = w / norm_w;
    if (it > 1 && std::abs(est - prev) <= rel_tol * est) {
      out.value = est;
      out.converged = true;
      return out;
    }
    prev = est;
    out.value = est;
  }
  return out;
}

}  // namespace htsk
