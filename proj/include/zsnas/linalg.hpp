#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <vector>

#include "zsnas/errors.hpp"

namespace zsnas {

// Row-major dense matrix. Correlation matrices are at most batch x batch
// (128 x 128), so everything below is plain O(n^3) with no blocking.
struct Matrix {
  int rows = 0;
  int cols = 0;
  std::vector<double> a;

  Matrix() = default;
  Matrix(int r, int c) : rows(r), cols(c), a(static_cast<std::size_t>(r) * c, 0.0) {}

  double& at(int i, int j) { return a[static_cast<std::size_t>(i) * cols + j]; }
  double at(int i, int j) const { return a[static_cast<std::size_t>(i) * cols + j]; }
  double* row(int i) { return a.data() + static_cast<std::size_t>(i) * cols; }
  const double* row(int i) const { return a.data() + static_cast<std::size_t>(i) * cols; }

  bool all_finite() const {
    for (double x : a) {
      if (!std::isfinite(x)) return false;
    }
    return true;
  }
};

inline double max_abs_asymmetry(const Matrix& m) {
  double worst = 0.0;
  for (int i = 0; i < m.rows; ++i) {
    for (int j = i + 1; j < m.cols; ++j) {
      worst = std::max(worst, std::abs(m.at(i, j) - m.at(j, i)));
    }
  }
  return worst;
}

struct LogDet {
  double log_abs = 0.0;  // log |det|
  int sign = 0;          // -1, 0, +1
};

// log-determinant via LU with partial pivoting. Works in log space so a
// 128x128 aggregate with entries in the thousands cannot overflow the
// determinant product.
inline LogDet lu_logdet(Matrix m) {
  const int n = m.rows;
  LogDet out{0.0, 1};
  for (int k = 0; k < n; ++k) {
    int piv = k;
    double best = std::abs(m.at(k, k));
    for (int i = k + 1; i < n; ++i) {
      const double x = std::abs(m.at(i, k));
      if (x > best) {
        best = x;
        piv = i;
      }
    }
    if (best == 0.0) {
      return {0.0, 0};
    }
    if (piv != k) {
      for (int j = 0; j < n; ++j) std::swap(m.at(k, j), m.at(piv, j));
      out.sign = -out.sign;
    }
    const double pivot = m.at(k, k);
    if (pivot < 0.0) out.sign = -out.sign;
    out.log_abs += std::log(std::abs(pivot));
    const double inv = 1.0 / pivot;
    for (int i = k + 1; i < n; ++i) {
      const double f = m.at(i, k) * inv;
      if (f == 0.0) continue;
      m.at(i, k) = f;
      for (int j = k + 1; j < n; ++j) m.at(i, j) -= f * m.at(k, j);
    }
  }
  return out;
}

// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations. Deterministic
// sweep order; returns values sorted descending.
inline std::vector<double> symmetric_eigenvalues(Matrix m, int max_sweeps = 64,
                                                 double tol = 1e-12) {
  const int n = m.rows;
  if (n != m.cols) throw config_error("eigenvalues need a square matrix");
  for (int sweep = 0; sweep < max_sweeps; ++sweep) {
    double off = 0.0;
    for (int i = 0; i < n; ++i) {
      for (int j = i + 1; j < n; ++j) off += m.at(i, j) * m.at(i, j);
    }
    if (off <= tol * tol) break;
    for (int p = 0; p < n - 1; ++p) {
      for (int q = p + 1; q < n; ++q) {
        const double apq = m.at(p, q);
        if (apq == 0.0) continue;
        const double app = m.at(p, p);
        const double aqq = m.at(q, q);
        const double theta = (aqq - app) / (2.0 * apq);
        const double t = (theta >= 0.0 ? 1.0 : -1.0) /
                         (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (int k = 0; k < n; ++k) {
          const double akp = m.at(k, p);
          const double akq = m.at(k, q);
          m.at(k, p) = c * akp - s * akq;
          m.at(k, q) = s * akp + c * akq;
        }
        for (int k = 0; k < n; ++k) {
          const double apk = m.at(p, k);
          const double aqk = m.at(q, k);
          m.at(p, k) = c * apk - s * aqk;
          m.at(q, k) = s * apk + c * aqk;
        }
      }
    }
  }
  std::vector<double> eig(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) eig[static_cast<std::size_t>(i)] = m.at(i, i);
  std::sort(eig.begin(), eig.end(), std::greater<double>());
  return eig;
}

}  // namespace zsnas
