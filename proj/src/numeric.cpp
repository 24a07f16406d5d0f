#include "dcedit/numeric.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "dcedit/error.hpp"

namespace dcedit {

const char* error_code_name(ErrorCode code) {
    switch (code) {
        case ErrorCode::InvalidArgument: return "invalid argument";
        case ErrorCode::NotFound: return "not found";
        case ErrorCode::TraceMismatch: return "trace mismatch";
        case ErrorCode::Numeric: return "numeric failure";
        case ErrorCode::Singular: return "singular matrix";
        case ErrorCode::Io: return "i/o failure";
        case ErrorCode::Internal: return "internal error";
    }
    return "unknown";
}

Matrix::Matrix(std::size_t rows, std::size_t cols, double fill)
    : rows_(rows), cols_(cols), data_(rows * cols, fill) {
    if (rows == 0 || cols == 0) {
        throw Error(ErrorCode::InvalidArgument, "matrix dimensions must be positive");
    }
}

Matrix Matrix::identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
}

bool Matrix::all_finite() const noexcept {
    for (double x : data_) {
        if (!std::isfinite(x)) return false;
    }
    return true;
}

Matrix matmul(const Matrix& a, const Matrix& b) {
    if (a.cols() != b.rows()) {
        throw Error(ErrorCode::InvalidArgument, "matmul dimension mismatch");
    }
    Matrix out(a.rows(), b.cols());
    for (std::size_t i = 0; i < a.rows(); ++i) {
        for (std::size_t k = 0; k < a.cols(); ++k) {
            double aik = a(i, k);
            if (aik == 0.0) continue;
            for (std::size_t j = 0; j < b.cols(); ++j) {
                out(i, j) += aik * b(k, j);
            }
        }
    }
    return out;
}

Matrix transpose(const Matrix& m) {
    Matrix out(m.cols(), m.rows());
    for (std::size_t i = 0; i < m.rows(); ++i) {
        for (std::size_t j = 0; j < m.cols(); ++j) {
            out(j, i) = m(i, j);
        }
    }
    return out;
}

Matrix add(const Matrix& a, const Matrix& b) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) {
        throw Error(ErrorCode::InvalidArgument, "matrix add dimension mismatch");
    }
    Matrix out = a;
    for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] += b.data()[i];
    return out;
}

Matrix scale(const Matrix& m, double s) {
    Matrix out = m;
    for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] *= s;
    return out;
}

Vector matvec(const Matrix& m, const Vector& v) {
    if (m.cols() != v.size()) {
        throw Error(ErrorCode::InvalidArgument, "matvec dimension mismatch");
    }
    Vector out(m.rows(), 0.0);
    for (std::size_t i = 0; i < m.rows(); ++i) {
        double acc = 0.0;
        for (std::size_t j = 0; j < m.cols(); ++j) acc += m(i, j) * v[j];
        out[i] = acc;
    }
    return out;
}

Matrix softmax_rows(const Matrix& m) {
    if (!m.all_finite()) {
        throw Error(ErrorCode::InvalidArgument, "non-finite logits");
    }
    Matrix out(m.rows(), m.cols());
    for (std::size_t i = 0; i < m.rows(); ++i) {
        double row_max = m(i, 0);
        for (std::size_t j = 1; j < m.cols(); ++j) row_max = std::max(row_max, m(i, j));
        double denom = 0.0;
        for (std::size_t j = 0; j < m.cols(); ++j) {
            double e = std::exp(m(i, j) - row_max);
            out(i, j) = e;
            denom += e;
        }
        for (std::size_t j = 0; j < m.cols(); ++j) out(i, j) /= denom;
    }
    return out;
}

Vector minmax_normalize(const Vector& v) {
    if (v.empty()) {
        throw Error(ErrorCode::InvalidArgument, "minmax_normalize of empty vector");
    }
    auto [lo_it, hi_it] = std::minmax_element(v.begin(), v.end());
    double lo = *lo_it, hi = *hi_it;
    Vector out(v.size(), 0.0);
    if (hi == lo) {
        return out;  // flat map -> all zeros
    }
    double span = hi - lo;
    for (std::size_t i = 0; i < v.size(); ++i) out[i] = (v[i] - lo) / span;
    return out;
}

namespace {
constexpr double kPivotTolerance = 1e-12;
}

Matrix ridge_inverse(const Matrix& m, double epsilon) {
    if (m.rows() != m.cols()) {
        throw Error(ErrorCode::InvalidArgument, "ridge_inverse requires a square matrix");
    }
    if (epsilon < 0.0) {
        throw Error(ErrorCode::InvalidArgument, "ridge epsilon must be non-negative");
    }
    const std::size_t n = m.rows();
    Matrix a = m;
    for (std::size_t i = 0; i < n; ++i) a(i, i) += epsilon;

    // Partial-pivot LU stored in place; perm tracks row exchanges.
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    for (std::size_t col = 0; col < n; ++col) {
        std::size_t pivot_row = col;
        double pivot_abs = std::abs(a(col, col));
        for (std::size_t r = col + 1; r < n; ++r) {
            double cand = std::abs(a(r, col));
            if (cand > pivot_abs) {
                pivot_abs = cand;
                pivot_row = r;
            }
        }
        if (!(pivot_abs >= kPivotTolerance)) {
            throw Error(ErrorCode::Singular, "singular textual attention matrix; increase epsilon");
        }
        if (pivot_row != col) {
            std::swap(perm[pivot_row], perm[col]);
            for (std::size_t j = 0; j < n; ++j) std::swap(a(pivot_row, j), a(col, j));
        }
        double pivot = a(col, col);
        for (std::size_t r = col + 1; r < n; ++r) {
            double factor = a(r, col) / pivot;
            a(r, col) = factor;
            for (std::size_t j = col + 1; j < n; ++j) a(r, j) -= factor * a(col, j);
        }
    }

    // Solve (LU) x = P e_k for each identity column.
    Matrix inv(n, n);
    Vector y(n);
    for (std::size_t k = 0; k < n; ++k) {
        for (std::size_t i = 0; i < n; ++i) {
            double acc = perm[i] == k ? 1.0 : 0.0;
            for (std::size_t j = 0; j < i; ++j) acc -= a(i, j) * y[j];
            y[i] = acc;
        }
        for (std::size_t ii = n; ii-- > 0;) {
            double acc = y[ii];
            for (std::size_t j = ii + 1; j < n; ++j) acc -= a(ii, j) * inv(j, k);
            inv(ii, k) = acc / a(ii, ii);
        }
    }
    return inv;
}

double percentile_threshold(const Vector& v, double lambda) {
    if (v.empty()) {
        throw Error(ErrorCode::InvalidArgument, "percentile of empty vector");
    }
    if (!(lambda >= 0.0 && lambda <= 100.0)) {
        throw Error(ErrorCode::InvalidArgument, "percentile lambda outside [0,100]");
    }
    Vector sorted = v;
    std::sort(sorted.begin(), sorted.end());
    const auto n = static_cast<long long>(sorted.size());
    // Nearest rank: smallest k with 100*k >= lambda*n. The ceil is adjusted by
    // exact comparisons so integer lambdas never suffer from the rounding of
    // lambda/100.
    double q = lambda * static_cast<double>(n);
    long long k = static_cast<long long>(std::ceil(q / 100.0));
    while (k > 1 && (static_cast<double>(k) - 1.0) * 100.0 >= q) --k;
    while (static_cast<double>(k) * 100.0 < q) ++k;
    k = std::clamp(k, 1LL, n);
    return sorted[static_cast<std::size_t>(k - 1)];
}

}  // namespace dcedit
