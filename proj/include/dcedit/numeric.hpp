#pragma once

#include <cstddef>
#include <vector>

namespace dcedit {

/// Dense row-major matrix of doubles. Deliberately small: the token counts in
/// this project stay in the hundreds, so everything is plain loops with no
/// BLAS behind it.
class Matrix {
public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols, double fill = 0.0);

    static Matrix identity(std::size_t n);

    std::size_t rows() const noexcept { return rows_; }
    std::size_t cols() const noexcept { return cols_; }

    double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

    double* data() noexcept { return data_.data(); }
    const double* data() const noexcept { return data_.data(); }
    std::size_t size() const noexcept { return data_.size(); }

    bool all_finite() const noexcept;

    bool operator==(const Matrix& other) const = default;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

using Vector = std::vector<double>;

Matrix matmul(const Matrix& a, const Matrix& b);
Matrix transpose(const Matrix& m);
Matrix add(const Matrix& a, const Matrix& b);
Matrix scale(const Matrix& m, double s);

/// y = m * v
Vector matvec(const Matrix& m, const Vector& v);

/// Row-wise softmax with per-row max subtraction. Rows of the result sum to 1
/// within 1e-6 for any finite input.
Matrix softmax_rows(const Matrix& m);

/// Affine rescale to [0,1]; min maps to 0, max to 1. A constant vector maps to
/// all zeros: a flat map carries no localization signal, and zeros make the
/// downstream controls a no-op instead of a whole-image edit.
Vector minmax_normalize(const Vector& v);

/// (m + epsilon*I)^{-1} via partial-pivot LU. Throws ErrorCode::Singular when
/// a pivot falls below 1e-12.
Matrix ridge_inverse(const Matrix& m, double epsilon);

/// Nearest-rank percentile: the value at ascending 1-based index
/// ceil(lambda/100 * len), clamped to [1, len]. lambda = 0 returns the
/// minimum; no interpolation.
double percentile_threshold(const Vector& v, double lambda);

}  // namespace dcedit
