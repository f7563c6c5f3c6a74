#ifndef MUFFIN_MATRIX_HPP
#define MUFFIN_MATRIX_HPP

#include <cassert>
#include <cstddef>
#include <span>
#include <vector>

namespace muffin {

// Dense row-major matrix of doubles. Just enough linear algebra for the
// fusion head and the controller; not a general-purpose library.
class Matrix {
public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
        : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }

    double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

    std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
    std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

    std::vector<double>& data() { return data_; }
    const std::vector<double>& data() const { return data_; }

    bool same_shape(const Matrix& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }

    // y += M x
    void mul_add(std::span<const double> x, std::span<double> y) const {
        assert(x.size() == cols_ && y.size() == rows_);
        for (std::size_t r = 0; r < rows_; ++r) {
            const double* w = data_.data() + r * cols_;
            double acc = 0.0;
            for (std::size_t c = 0; c < cols_; ++c) acc += w[c] * x[c];
            y[r] += acc;
        }
    }

    // y += M^T x
    void mul_transpose_add(std::span<const double> x, std::span<double> y) const {
        assert(x.size() == rows_ && y.size() == cols_);
        for (std::size_t r = 0; r < rows_; ++r) {
            const double* w = data_.data() + r * cols_;
            const double xv = x[r];
            for (std::size_t c = 0; c < cols_; ++c) y[c] += w[c] * xv;
        }
    }

    // M += scale * (a outer b)
    void add_outer(std::span<const double> a, std::span<const double> b, double scale = 1.0) {
        assert(a.size() == rows_ && b.size() == cols_);
        for (std::size_t r = 0; r < rows_; ++r) {
            double* w = data_.data() + r * cols_;
            const double av = scale * a[r];
            for (std::size_t c = 0; c < cols_; ++c) w[c] += av * b[c];
        }
    }

    void add_scaled(const Matrix& o, double scale) {
        assert(same_shape(o));
        for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += scale * o.data_[i];
    }

    void fill(double v) { std::fill(data_.begin(), data_.end(), v); }

    bool operator==(const Matrix& o) const = default;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

} // namespace muffin

#endif
