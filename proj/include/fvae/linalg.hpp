#pragma once

#include <cstddef>
#include <vector>

namespace fvae {

// Dense row-major double matrices, sized for desk-scale metric math.
using Mat = std::vector<double>;

Mat mat_mul(const Mat& a, const Mat& b, std::size_t n, std::size_t m, std::size_t k);

// Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.
// Eigenvalues are returned in descending order; eigvecs holds the matching
// eigenvectors as columns with a deterministic sign convention (the entry
// of largest magnitude is made positive).
std::vector<double> jacobi_eigen_sym(Mat a, std::size_t n, Mat* eigvecs = nullptr);

// Symmetric PSD square root via eigendecomposition of (A + A^T)/2.
// Eigenvalues below -1e-8 are a numerical failure; small negatives are
// clamped to zero.
Mat sym_sqrt_psd(const Mat& a, std::size_t n);

double trace(const Mat& a, std::size_t n);

}  // namespace fvae
