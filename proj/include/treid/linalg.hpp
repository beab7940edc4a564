#ifndef TREID_LINALG_HPP
#define TREID_LINALG_HPP

// Dense row-major matrices, vector similarities and a thin SVD for the
// small matrices this project needs (camera classifiers are m x n with m the
// camera count). Products go through Eigen maps; everything else is plain
// loops over std::vector storage.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "treid/error.hpp"

namespace treid {

template <class T>
class Matrix {
public:
    using value_type = T;

    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols, T fill = T(0))
        : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
    Matrix(std::size_t rows, std::size_t cols, std::vector<T> data)
        : rows_(rows), cols_(cols), data_(std::move(data)) {
        require(data_.size() == rows_ * cols_, "matrix data length does not match shape");
    }

    static Matrix identity(std::size_t n) {
        Matrix m(n, n);
        for (std::size_t i = 0; i < n; ++i) m(i, i) = T(1);
        return m;
    }

    std::size_t rows() const noexcept { return rows_; }
    std::size_t cols() const noexcept { return cols_; }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    T& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
    const T& operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

    std::span<T> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
    std::span<const T> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

    T* data() noexcept { return data_.data(); }
    const T* data() const noexcept { return data_.data(); }
    std::vector<T>& storage() noexcept { return data_; }
    const std::vector<T>& storage() const noexcept { return data_; }

    template <class U>
    Matrix<U> cast() const {
        return Matrix<U>(rows_, cols_, std::vector<U>(data_.begin(), data_.end()));
    }

    bool operator==(const Matrix& other) const = default;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<T> data_;
};

template <class T>
struct SvdResult {
    Matrix<T> u;           // m x r
    std::vector<T> sigma;  // r, non-increasing
    Matrix<T> vt;          // r x n
};

namespace detail {

template <class T>
using RowMajor = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <class T>
Eigen::Map<const RowMajor<T>> view(const Matrix<T>& m) {
    return {m.data(), static_cast<Eigen::Index>(m.rows()), static_cast<Eigen::Index>(m.cols())};
}

template <class T>
Eigen::Map<RowMajor<T>> view(Matrix<T>& m) {
    return {m.data(), static_cast<Eigen::Index>(m.rows()), static_cast<Eigen::Index>(m.cols())};
}

}  // namespace detail

template <class T>
bool all_finite(std::span<const T> v) {
    return std::all_of(v.begin(), v.end(), [](T x) { return std::isfinite(x); });
}

template <class T>
bool all_finite(const Matrix<T>& m) {
    return all_finite(std::span<const T>(m.storage()));
}

/// A * B
template <class T>
Matrix<T> matmul(const Matrix<T>& a, const Matrix<T>& b) {
    require(a.cols() == b.rows(), "matmul: inner dimensions differ");
    Matrix<T> out(a.rows(), b.cols());
    if (out.empty() || a.cols() == 0) return out;
    detail::view(out).noalias() = detail::view(a) * detail::view(b);
    return out;
}

/// A * B^T
template <class T>
Matrix<T> matmul_abt(const Matrix<T>& a, const Matrix<T>& b) {
    require(a.cols() == b.cols(), "matmul_abt: inner dimensions differ");
    Matrix<T> out(a.rows(), b.rows());
    if (out.empty() || a.cols() == 0) return out;
    detail::view(out).noalias() = detail::view(a) * detail::view(b).transpose();
    return out;
}

/// A^T * B
template <class T>
Matrix<T> matmul_atb(const Matrix<T>& a, const Matrix<T>& b) {
    require(a.rows() == b.rows(), "matmul_atb: inner dimensions differ");
    Matrix<T> out(a.cols(), b.cols());
    if (out.empty() || a.rows() == 0) return out;
    detail::view(out).noalias() = detail::view(a).transpose() * detail::view(b);
    return out;
}

template <class T>
Matrix<T> transpose(const Matrix<T>& a) {
    Matrix<T> out(a.cols(), a.rows());
    for (std::size_t r = 0; r < a.rows(); ++r)
        for (std::size_t c = 0; c < a.cols(); ++c) out(c, r) = a(r, c);
    return out;
}

template <class T>
Matrix<T> operator-(const Matrix<T>& a, const Matrix<T>& b) {
    require(a.rows() == b.rows() && a.cols() == b.cols(), "matrix subtraction: shape mismatch");
    Matrix<T> out = a;
    for (std::size_t i = 0; i < out.size(); ++i) out.storage()[i] -= b.storage()[i];
    return out;
}

template <class T>
T frobenius_norm(const Matrix<T>& a) {
    long double acc = 0;
    for (T x : a.storage()) acc += static_cast<long double>(x) * x;
    return static_cast<T>(std::sqrt(acc));
}

template <class T>
T dot(std::span<const T> a, std::span<const T> b) {
    require(a.size() == b.size(), "dot: length mismatch");
    T acc = 0;
    for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
    return acc;
}

template <class T>
T norm(std::span<const T> v) {
    return std::sqrt(dot(v, v));
}

template <class T>
std::vector<T> l2_normalize(std::span<const T> v) {
    const T n = norm(v);
    if (!(n > T(0))) throw DegenerateInput("l2_normalize: zero-length vector");
    std::vector<T> out(v.begin(), v.end());
    for (T& x : out) x /= n;
    return out;
}

template <class T>
std::vector<T> l2_normalize(const std::vector<T>& v) {
    return l2_normalize(std::span<const T>(v));
}

/// Normalizes every row in place; zero rows are a degenerate input.
template <class T>
void normalize_rows(Matrix<T>& m) {
    for (std::size_t r = 0; r < m.rows(); ++r) {
        auto row = m.row(r);
        const T n = norm(std::span<const T>(row));
        if (!(n > T(0))) throw DegenerateInput("normalize_rows: zero row");
        for (T& x : row) x /= n;
    }
}

template <class T>
T cosine_similarity(std::span<const T> q, std::span<const T> k) {
    require(q.size() == k.size(), "cosine_similarity: length mismatch");
    const T nq = norm(q);
    const T nk = norm(k);
    if (!(nq > T(0)) || !(nk > T(0))) throw DegenerateInput("cosine_similarity: zero vector");
    return std::clamp(dot(q, k) / (nq * nk), T(-1), T(1));
}

template <class T>
T cosine_similarity(const std::vector<T>& q, const std::vector<T>& k) {
    return cosine_similarity(std::span<const T>(q), std::span<const T>(k));
}

template <class T>
T squared_distance(std::span<const T> a, std::span<const T> b) {
    require(a.size() == b.size(), "euclidean_distance: length mismatch");
    T acc = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const T d = a[i] - b[i];
        acc += d * d;
    }
    return acc;
}

template <class T>
T euclidean_distance(std::span<const T> a, std::span<const T> b) {
    return std::sqrt(squared_distance(a, b));
}

template <class T>
T euclidean_distance(const std::vector<T>& a, const std::vector<T>& b) {
    return euclidean_distance(std::span<const T>(a), std::span<const T>(b));
}

namespace detail {

// One-sided (Hestenes) Jacobi on a p x q matrix with p >= q, column-major
// working copy. Returns U (p x q), sigma (q), V (q x q) with A = U diag(s) V^T.
inline void hestenes(std::vector<std::vector<double>>& cols, std::vector<std::vector<double>>& v,
                     double tol, int max_sweeps) {
    const std::size_t q = cols.size();
    for (int sweep = 0; sweep < max_sweeps; ++sweep) {
        double worst = 0;
        for (std::size_t i = 0; i + 1 < q; ++i) {
            for (std::size_t j = i + 1; j < q; ++j) {
                auto& ai = cols[i];
                auto& aj = cols[j];
                double alpha = 0, beta = 0, gamma = 0;
                for (std::size_t r = 0; r < ai.size(); ++r) {
                    alpha += ai[r] * ai[r];
                    beta += aj[r] * aj[r];
                    gamma += ai[r] * aj[r];
                }
                if (alpha == 0 || beta == 0) continue;
                const double off = std::abs(gamma) / std::sqrt(alpha * beta);
                worst = std::max(worst, off);
                if (off <= tol) continue;
                const double zeta = (beta - alpha) / (2 * gamma);
                const double t = std::copysign(1.0, zeta) / (std::abs(zeta) + std::sqrt(1 + zeta * zeta));
                const double c = 1 / std::sqrt(1 + t * t);
                const double s = c * t;
                for (std::size_t r = 0; r < ai.size(); ++r) {
                    const double x = ai[r], y = aj[r];
                    ai[r] = c * x - s * y;
                    aj[r] = s * x + c * y;
                }
                auto& vi = v[i];
                auto& vj = v[j];
                for (std::size_t r = 0; r < vi.size(); ++r) {
                    const double x = vi[r], y = vj[r];
                    vi[r] = c * x - s * y;
                    vj[r] = s * x + c * y;
                }
            }
        }
        if (worst <= tol) return;
    }
}

// Fills columns whose norm is zero with unit vectors orthogonal to the rest.
inline void complete_orthonormal(std::vector<std::vector<double>>& cols, const std::vector<bool>& filled) {
    const std::size_t p = cols.empty() ? 0 : cols[0].size();
    std::size_t next_basis = 0;
    for (std::size_t i = 0; i < cols.size(); ++i) {
        if (filled[i]) continue;
        while (next_basis < p) {
            std::vector<double> cand(p, 0.0);
            cand[next_basis++] = 1.0;
            for (int pass = 0; pass < 2; ++pass) {
                for (std::size_t j = 0; j < cols.size(); ++j) {
                    if (j == i || (!filled[j] && j > i)) continue;
                    double d = 0;
                    for (std::size_t r = 0; r < p; ++r) d += cand[r] * cols[j][r];
                    for (std::size_t r = 0; r < p; ++r) cand[r] -= d * cols[j][r];
                }
            }
            double n = 0;
            for (double x : cand) n += x * x;
            n = std::sqrt(n);
            if (n > 1e-6) {
                for (double& x : cand) x /= n;
                cols[i] = std::move(cand);
                break;
            }
        }
    }
}

}  // namespace detail

/// Thin SVD, w = u * diag(sigma) * vt with r = min(rows, cols). Computed in
/// double precision regardless of T; singular vectors carry no canonical sign.
template <class T>
SvdResult<T> svd_thin(const Matrix<T>& w) {
    require(std::min(w.rows(), w.cols()) >= 1, "svd_thin: empty matrix");
    require(all_finite(w), "svd_thin: non-finite input");

    const bool transposed = w.rows() < w.cols();
    const std::size_t p = transposed ? w.cols() : w.rows();
    const std::size_t q = transposed ? w.rows() : w.cols();

    // Columns of A, where A = w (p = rows) or A = w^T (p = cols).
    std::vector<std::vector<double>> cols(q, std::vector<double>(p));
    for (std::size_t i = 0; i < w.rows(); ++i)
        for (std::size_t j = 0; j < w.cols(); ++j) {
            if (transposed) cols[i][j] = w(i, j);
            else cols[j][i] = w(i, j);
        }
    std::vector<std::vector<double>> v(q, std::vector<double>(q, 0.0));
    for (std::size_t i = 0; i < q; ++i) v[i][i] = 1.0;

    detail::hestenes(cols, v, 1e-12, 80);

    std::vector<double> sigma(q);
    for (std::size_t i = 0; i < q; ++i) {
        double n = 0;
        for (double x : cols[i]) n += x * x;
        sigma[i] = std::sqrt(n);
    }
    std::vector<std::size_t> order(q);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return sigma[a] > sigma[b]; });

    const double smax = q ? sigma[order[0]] : 0.0;
    const double floor = std::max(smax * 1e-13, 1e-300);
    std::vector<std::vector<double>> ucols(q);
    std::vector<std::vector<double>> vcols(q);
    std::vector<double> s_sorted(q);
    std::vector<bool> filled(q);
    for (std::size_t k = 0; k < q; ++k) {
        const std::size_t i = order[k];
        s_sorted[k] = sigma[i];
        vcols[k] = v[i];
        filled[k] = sigma[i] > floor;
        ucols[k] = cols[i];
        if (filled[k])
            for (double& x : ucols[k]) x /= sigma[i];
        else {
            std::fill(ucols[k].begin(), ucols[k].end(), 0.0);
            s_sorted[k] = 0.0;
        }
    }
    detail::complete_orthonormal(ucols, filled);

    // A = Uc diag(s) Vc^T. For w = A: u = Uc, vt = Vc^T. For w = A^T: u = Vc, vt = Uc^T.
    const auto& left = transposed ? vcols : ucols;
    const auto& right = transposed ? ucols : vcols;
    SvdResult<T> out;
    out.u = Matrix<T>(w.rows(), q);
    out.vt = Matrix<T>(q, w.cols());
    out.sigma.resize(q);
    for (std::size_t k = 0; k < q; ++k) {
        out.sigma[k] = static_cast<T>(s_sorted[k]);
        for (std::size_t r = 0; r < w.rows(); ++r) out.u(r, k) = static_cast<T>(left[k][r]);
        for (std::size_t c = 0; c < w.cols(); ++c) out.vt(k, c) = static_cast<T>(right[k][c]);
    }
    return out;
}

}  // namespace treid

#endif  // TREID_LINALG_HPP
