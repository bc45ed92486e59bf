#include "merits/matrix.hpp"

#include <algorithm>
#include <cmath>

namespace merits {

Matrix mm(const Matrix& a, const Matrix& b) {
    assert(a.cols() == b.rows());
    const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
    Matrix c(m, n);
    const double* A = a.data();
    const double* B = b.data();
    double* C = c.data();
    // i-k-j loop order: the inner loop walks both B and C sequentially.
    for (std::size_t i = 0; i < m; ++i) {
        const double* ai = A + i * k;
        double* ci = C + i * n;
        for (std::size_t l = 0; l < k; ++l) {
            const double s = ai[l];
            const double* bl = B + l * n;
            for (std::size_t j = 0; j < n; ++j) ci[j] += s * bl[j];
        }
    }
    return c;
}

Matrix mm_nt(const Matrix& a, const Matrix& b) {
    assert(a.cols() == b.cols());
    const std::size_t m = a.rows(), k = a.cols(), n = b.rows();
    Matrix c(m, n);
    const double* A = a.data();
    const double* B = b.data();
    double* C = c.data();
    for (std::size_t i = 0; i < m; ++i) {
        const double* ai = A + i * k;
        double* ci = C + i * n;
        for (std::size_t j = 0; j < n; ++j) {
            const double* bj = B + j * k;
            double acc = 0.0;
            for (std::size_t l = 0; l < k; ++l) acc += ai[l] * bj[l];
            ci[j] = acc;
        }
    }
    return c;
}

Matrix mm_tn(const Matrix& a, const Matrix& b) {
    assert(a.rows() == b.rows());
    const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
    Matrix c(k, n);
    const double* A = a.data();
    const double* B = b.data();
    double* C = c.data();
    for (std::size_t i = 0; i < m; ++i) {
        const double* ai = A + i * k;
        const double* bi = B + i * n;
        for (std::size_t l = 0; l < k; ++l) {
            const double s = ai[l];
            double* cl = C + l * n;
            for (std::size_t j = 0; j < n; ++j) cl[j] += s * bi[j];
        }
    }
    return c;
}

void add_inplace(Matrix& dst, const Matrix& src) {
    assert(dst.same_shape(src));
    double* d = dst.data();
    const double* s = src.data();
    for (std::size_t i = 0, e = dst.size(); i < e; ++i) d[i] += s[i];
}

void axpy_inplace(Matrix& dst, double s, const Matrix& src) {
    assert(dst.same_shape(src));
    double* d = dst.data();
    const double* x = src.data();
    for (std::size_t i = 0, e = dst.size(); i < e; ++i) d[i] += s * x[i];
}

void scale_inplace(Matrix& m, double s) {
    double* d = m.data();
    for (std::size_t i = 0, e = m.size(); i < e; ++i) d[i] *= s;
}

double dot_all(const Matrix& a, const Matrix& b) {
    assert(a.same_shape(b));
    const double* x = a.data();
    const double* y = b.data();
    double acc = 0.0;
    for (std::size_t i = 0, e = a.size(); i < e; ++i) acc += x[i] * y[i];
    return acc;
}

double max_abs_diff(const Matrix& a, const Matrix& b) {
    assert(a.same_shape(b));
    const double* x = a.data();
    const double* y = b.data();
    double worst = 0.0;
    for (std::size_t i = 0, e = a.size(); i < e; ++i)
        worst = std::max(worst, std::fabs(x[i] - y[i]));
    return worst;
}

}  // namespace merits
