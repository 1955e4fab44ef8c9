#pragma once

#include <cstddef>
#include <vector>

namespace dafe {

// Dense helpers for the small symmetric systems this project needs (PCA
// bases, ridge normal equations). Deterministic, no external dependencies.

struct SymmetricEigen {
  std::vector<double> values;   // descending
  std::vector<double> vectors;  // column j (row-major n*n) pairs with values[j]
};

/// Cyclic Jacobi on a symmetric matrix (row-major n*n).
SymmetricEigen symmetric_eigen(const std::vector<double>& a, std::size_t n);

/// Solves A x = b for symmetric positive definite A via Cholesky.
std::vector<double> spd_solve(const std::vector<double>& a, std::size_t n,
                              const std::vector<double>& b);

}  // namespace dafe
