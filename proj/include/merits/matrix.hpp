#pragma once

#include <cassert>
#include <cstddef>
#include <initializer_list>
#include <vector>

namespace merits {

// Dense row-major matrix of doubles. Deliberately minimal: this is the only
// numeric container used by the model stack, and keeping it dumb keeps every
// training run bit-reproducible.
class Matrix {
  public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
        : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

    static Matrix row(std::initializer_list<double> xs) {
        Matrix m(1, xs.size());
        std::size_t j = 0;
        for (double x : xs) m.data_[j++] = x;
        return m;
    }

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }

    double& operator()(std::size_t i, std::size_t j) {
        assert(i < rows_ && j < cols_);
        return data_[i * cols_ + j];
    }
    double operator()(std::size_t i, std::size_t j) const {
        assert(i < rows_ && j < cols_);
        return data_[i * cols_ + j];
    }

    bool same_shape(const Matrix& o) const {
        return rows_ == o.rows_ && cols_ == o.cols_;
    }

    void fill(double v) {
        for (double& x : data_) x = v;
    }

  private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

Matrix mm(const Matrix& a, const Matrix& b);     // a * b
Matrix mm_nt(const Matrix& a, const Matrix& b);  // a * b^T
Matrix mm_tn(const Matrix& a, const Matrix& b);  // a^T * b

void add_inplace(Matrix& dst, const Matrix& src);           // dst += src
void axpy_inplace(Matrix& dst, double s, const Matrix& src);  // dst += s * src
void scale_inplace(Matrix& m, double s);

double dot_all(const Matrix& a, const Matrix& b);  // elementwise dot over everything
double max_abs_diff(const Matrix& a, const Matrix& b);

}  // namespace merits
