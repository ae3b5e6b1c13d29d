#pragma once

#include <cstdint>
#include <vector>

// Dense helpers for the theory audits (K is at most a few dozen there).

namespace osdn::linalg {

// Cyclic Jacobi eigendecomposition of a symmetric matrix.
// a is [n,n] row-major; eigvals receives the eigenvalues and eigvecs the
// eigenvectors as columns (eigvecs[i*n + j] = component i of eigenvector j).
void eig_sym(const double* a, std::int64_t n, double* eigvals, double* eigvecs);

// Moore-Penrose pseudoinverse of a symmetric PSD matrix via eig_sym with a
// relative eigenvalue cutoff (cutoff_rel * lambda_max).  The absolute cutoff
// actually applied is reported through cutoff_used when non-null.
std::vector<double> pinv_psd(const double* a, std::int64_t n, double cutoff_rel = 1e-12,
                             double* cutoff_used = nullptr);

// c[m,n] = a[m,k] * b[k,n], all row-major.
void matmul(const double* a, const double* b, double* c, std::int64_t m, std::int64_t k,
            std::int64_t n);

}  // namespace osdn::linalg
