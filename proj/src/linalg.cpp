#include "linalg.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "error.hpp"

namespace dafe {

SymmetricEigen symmetric_eigen(const std::vector<double>& a, std::size_t n) {
  if (a.size() != n * n) raise(ErrorCode::dimension, "symmetric_eigen: bad size");
  std::vector<double> m = a;
  std::vector<double> v(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) v[i * n + i] = 1.0;

  auto off_diag = [&]() {
    double s = 0.0;
    for (std::size_t p = 0; p < n; ++p)
      for (std::size_t q = p + 1; q < n; ++q) s += m[p * n + q] * m[p * n + q];
    return s;
  };

  const int max_sweeps = 100;
  for (int sweep = 0; sweep < max_sweeps && off_diag() > 1e-24; ++sweep) {
    for (std::size_t p = 0; p < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        double apq = m[p * n + q];
        if (std::abs(apq) < 1e-300) continue;
        double app = m[p * n + p], aqq = m[q * n + q];
        double theta = 0.5 * (aqq - app) / apq;
        double t = (theta >= 0 ? 1.0 : -1.0) /
                   (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        double c = 1.0 / std::sqrt(t * t + 1.0);
        double s = t * c;
        for (std::size_t i = 0; i < n; ++i) {
          double mip = m[i * n + p], miq = m[i * n + q];
          m[i * n + p] = c * mip - s * miq;
          m[i * n + q] = s * mip + c * miq;
        }
        for (std::size_t j = 0; j < n; ++j) {
          double mpj = m[p * n + j], mqj = m[q * n + j];
          m[p * n + j] = c * mpj - s * mqj;
          m[q * n + j] = s * mpj + c * mqj;
        }
        for (std::size_t i = 0; i < n; ++i) {
          double vip = v[i * n + p], viq = v[i * n + q];
          v[i * n + p] = c * vip - s * viq;
          v[i * n + q] = s * vip + c * viq;
        }
      }
    }
  }

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) {
    return m[i * n + i] > m[j * n + j];
  });

  SymmetricEigen out;
  out.values.resize(n);
  out.vectors.assign(n * n, 0.0);
  for (std::size_t j = 0; j < n; ++j) {
    std::size_t src = order[j];
    out.values[j] = m[src * n + src];
    for (std::size_t i = 0; i < n; ++i) out.vectors[i * n + j] = v[i * n + src];
  }
  return out;
}

std::vector<double> spd_solve(const std::vector<double>& a, std::size_t n,
                              const std::vector<double>& b) {
  if (a.size() != n * n || b.size() != n)
    raise(ErrorCode::dimension, "spd_solve: bad size");
  std::vector<double> L(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j <= i; ++j) {
      double sum = a[i * n + j];
      for (std::size_t k = 0; k < j; ++k) sum -= L[i * n + k] * L[j * n + k];
      if (i == j) {
        if (sum <= 0.0) raise(ErrorCode::parameter, "spd_solve: matrix not positive definite");
        L[i * n + i] = std::sqrt(sum);
      } else {
        L[i * n + j] = sum / L[j * n + j];
      }
    }
  }
  std::vector<double> y(n);
  for (std::size_t i = 0; i < n; ++i) {
    double sum = b[i];
    for (std::size_t k = 0; k < i; ++k) sum -= L[i * n + k] * y[k];
    y[i] = sum / L[i * n + i];
  }
  std::vector<double> x(n);
  for (std::size_t ii = n; ii-- > 0;) {
    double sum = y[ii];
    for (std::size_t k = ii + 1; k < n; ++k) sum -= L[k * n + ii] * x[k];
    x[ii] = sum / L[ii * n + ii];
  }
  return x;
}

}  // namespace dafe
