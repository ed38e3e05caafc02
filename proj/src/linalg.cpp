#include "fvae/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "fvae/common.hpp"

namespace fvae {

Mat mat_mul(const Mat& a, const Mat& b, std::size_t n, std::size_t m, std::size_t k) {
    if (a.size() != n * m || b.size() != m * k) throw UsageError("mat_mul: size mismatch");
    Mat out(n * k, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < m; ++j) {
            const double aij = a[i * m + j];
            if (aij == 0.0) continue;
            for (std::size_t c = 0; c < k; ++c) {
                out[i * k + c] += aij * b[j * k + c];
            }
        }
    }
    return out;
}

std::vector<double> jacobi_eigen_sym(Mat a, std::size_t n, Mat* eigvecs) {
    if (a.size() != n * n) throw UsageError("jacobi_eigen_sym: matrix size mismatch");
    Mat v(n * n, 0.0);
    for (std::size_t i = 0; i < n; ++i) v[i * n + i] = 1.0;

    double frob = 0.0;
    for (const double x : a) frob += x * x;
    const double tol = 1e-14 * std::max(1.0, std::sqrt(frob));

    for (int sweep = 0; sweep < 128; ++sweep) {
        double off = 0.0;
        for (std::size_t p = 0; p + 1 < n; ++p) {
            for (std::size_t q = p + 1; q < n; ++q) {
                off += a[p * n + q] * a[p * n + q];
            }
        }
        if (std::sqrt(2.0 * off) <= tol) break;
        for (std::size_t p = 0; p + 1 < n; ++p) {
            for (std::size_t q = p + 1; q < n; ++q) {
                const double apq = a[p * n + q];
                if (std::fabs(apq) <= tol / static_cast<double>(n * n)) continue;
                const double app = a[p * n + p];
                const double aqq = a[q * n + q];
                const double theta = (aqq - app) / (2.0 * apq);
                const double t = (theta >= 0.0 ? 1.0 : -1.0) /
                                 (std::fabs(theta) + std::sqrt(theta * theta + 1.0));
                const double c = 1.0 / std::sqrt(t * t + 1.0);
                const double s = t * c;
                for (std::size_t i = 0; i < n; ++i) {
                    const double aip = a[i * n + p];
                    const double aiq = a[i * n + q];
                    a[i * n + p] = c * aip - s * aiq;
                    a[i * n + q] = s * aip + c * aiq;
                }
                for (std::size_t i = 0; i < n; ++i) {
                    const double api = a[p * n + i];
                    const double aqi = a[q * n + i];
                    a[p * n + i] = c * api - s * aqi;
                    a[q * n + i] = s * api + c * aqi;
                }
                for (std::size_t i = 0; i < n; ++i) {
                    const double vip = v[i * n + p];
                    const double viq = v[i * n + q];
                    v[i * n + p] = c * vip - s * viq;
                    v[i * n + q] = s * vip + c * viq;
                }
            }
        }
    }

    std::vector<double> eigvals(n);
    for (std::size_t i = 0; i < n; ++i) eigvals[i] = a[i * n + i];
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t x, std::size_t y) { return eigvals[x] > eigvals[y]; });

    std::vector<double> sorted_vals(n);
    Mat sorted_vecs(n * n, 0.0);
    for (std::size_t c = 0; c < n; ++c) {
        const std::size_t src = order[c];
        sorted_vals[c] = eigvals[src];
        std::size_t arg = 0;
        double best = -1.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double mag = std::fabs(v[i * n + src]);
            if (mag > best) {
                best = mag;
                arg = i;
            }
        }
        const double sign = v[arg * n + src] < 0.0 ? -1.0 : 1.0;
        for (std::size_t i = 0; i < n; ++i) {
            sorted_vecs[i * n + c] = sign * v[i * n + src];
        }
    }
    if (eigvecs != nullptr) *eigvecs = std::move(sorted_vecs);
    return sorted_vals;
}

Mat sym_sqrt_psd(const Mat& a, std::size_t n) {
    Mat sym(n * n);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            sym[i * n + j] = 0.5 * (a[i * n + j] + a[j * n + i]);
        }
    }
    Mat vecs;
    std::vector<double> vals = jacobi_eigen_sym(sym, n, &vecs);
    for (double& lambda : vals) {
        if (lambda < -1e-8) {
            throw NumericError("matrix square root: eigenvalue " + std::to_string(lambda) +
                               " below tolerance");
        }
        lambda = lambda < 0.0 ? 0.0 : std::sqrt(lambda);
    }
    // V * diag(sqrt(lambda)) * V^T
    Mat scaled(n * n);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t c = 0; c < n; ++c) {
            scaled[i * n + c] = vecs[i * n + c] * vals[c];
        }
    }
    Mat out(n * n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            double acc = 0.0;
            for (std::size_t c = 0; c < n; ++c) {
                acc += scaled[i * n + c] * vecs[j * n + c];
            }
            out[i * n + j] = acc;
        }
    }
    return out;
}

double trace(const Mat& a, std::size_t n) {
    double t = 0.0;
    for (std::size_t i = 0; i < n; ++i) t += a[i * n + i];
    return t;
}

}  // namespace fvae
