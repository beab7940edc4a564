#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "treid/linalg.hpp"

using treid::Matrix;

namespace {

template <class T>
Matrix<T> random_matrix(std::mt19937_64& rng, std::size_t r, std::size_t c) {
    std::normal_distribution<double> g(0.0, 1.0);
    Matrix<T> m(r, c);
    for (auto& v : m.storage()) v = static_cast<T>(g(rng));
    return m;
}

template <class T>
Matrix<T> reconstruct(const treid::SvdResult<T>& s) {
    Matrix<T> us = s.u;
    for (std::size_t r = 0; r < us.rows(); ++r)
        for (std::size_t k = 0; k < us.cols(); ++k) us(r, k) *= s.sigma[k];
    return treid::matmul(us, s.vt);
}

template <class T>
double max_offdiag_identity_error(const Matrix<T>& gram) {
    double worst = 0;
    for (std::size_t i = 0; i < gram.rows(); ++i)
        for (std::size_t j = 0; j < gram.cols(); ++j)
            worst = std::max(worst, std::abs(static_cast<double>(gram(i, j)) - (i == j ? 1.0 : 0.0)));
    return worst;
}

template <class T>
void check_svd_invariants(const Matrix<T>& w, double recon_tol, double ortho_tol) {
    const auto s = treid::svd_thin(w);
    const std::size_t r = std::min(w.rows(), w.cols());
    ASSERT_EQ(s.sigma.size(), r);
    ASSERT_EQ(s.u.rows(), w.rows());
    ASSERT_EQ(s.u.cols(), r);
    ASSERT_EQ(s.vt.rows(), r);
    ASSERT_EQ(s.vt.cols(), w.cols());
    for (std::size_t i = 0; i + 1 < r; ++i) EXPECT_GE(s.sigma[i], s.sigma[i + 1]);
    EXPECT_GE(s.sigma.back(), T(0));
    const double rel = treid::frobenius_norm(reconstruct(s) - w) / treid::frobenius_norm(w);
    EXPECT_LT(rel, recon_tol);
    EXPECT_LT(max_offdiag_identity_error(treid::matmul_abt(s.vt, s.vt)), ortho_tol);
    EXPECT_LT(max_offdiag_identity_error(treid::matmul_atb(s.u, s.u)), ortho_tol);
}

}  // namespace

TEST(Svd, IdentityHasUnitSingularValues) {
    const auto s = treid::svd_thin(Matrix<double>::identity(2));
    ASSERT_EQ(s.sigma.size(), 2u);
    EXPECT_DOUBLE_EQ(s.sigma[0], 1.0);
    EXPECT_DOUBLE_EQ(s.sigma[1], 1.0);
}

TEST(Svd, DiagonalIsSortedDescending) {
    Matrix<float> d(2, 2);
    d(0, 0) = 3;
    d(1, 1) = 4;
    const auto s = treid::svd_thin(d);
    EXPECT_FLOAT_EQ(s.sigma[0], 4.0f);
    EXPECT_FLOAT_EQ(s.sigma[1], 3.0f);
}

TEST(Svd, Random3x5Reconstructs) {
    std::mt19937_64 rng(7);
    check_svd_invariants(random_matrix<float>(rng, 3, 5), 1e-5, 1e-5);
}

TEST(Svd, RandomMatricesFloat) {
    std::mt19937_64 rng(11);
    std::uniform_int_distribution<std::size_t> rows(1, 8), cols(1, 16);
    for (int t = 0; t < 1000; ++t) check_svd_invariants(random_matrix<float>(rng, rows(rng), cols(rng)), 1e-5, 1e-5);
}

TEST(Svd, RandomMatricesDouble) {
    std::mt19937_64 rng(12);
    std::uniform_int_distribution<std::size_t> rows(1, 8), cols(1, 16);
    for (int t = 0; t < 1000; ++t)
        check_svd_invariants(random_matrix<double>(rng, rows(rng), cols(rng)), 1e-10, 1e-10);
}

TEST(Svd, RankDeficientKeepsOrthonormalFactors) {
    // Row-centred matrices have rank <= rows - 1; the null direction must
    // still come back orthonormal.
    std::mt19937_64 rng(3);
    auto w = random_matrix<double>(rng, 4, 9);
    for (std::size_t c = 0; c < w.cols(); ++c) {
        double mean = 0;
        for (std::size_t r = 0; r < w.rows(); ++r) mean += w(r, c) / 4.0;
        for (std::size_t r = 0; r < w.rows(); ++r) w(r, c) -= mean;
    }
    check_svd_invariants(w, 1e-10, 1e-10);
    EXPECT_NEAR(treid::svd_thin(w).sigma.back(), 0.0, 1e-10);
}

TEST(Svd, TallMatrix) {
    std::mt19937_64 rng(5);
    check_svd_invariants(random_matrix<double>(rng, 12, 3), 1e-10, 1e-10);
}

TEST(Svd, NonFiniteInputIsRejected) {
    Matrix<double> w(2, 2);
    w(0, 1) = std::nan("");
    EXPECT_THROW(treid::svd_thin(w), treid::InvalidInput);
}

TEST(Svd, Deterministic) {
    std::mt19937_64 rng(9);
    const auto w = random_matrix<double>(rng, 5, 7);
    const auto a = treid::svd_thin(w);
    const auto b = treid::svd_thin(w);
    EXPECT_EQ(a.u, b.u);
    EXPECT_EQ(a.vt, b.vt);
    EXPECT_EQ(a.sigma, b.sigma);
}

TEST(Vectors, L2Normalize) {
    const auto v = treid::l2_normalize(std::vector<double>{3, 4});
    EXPECT_NEAR(v[0], 0.6, 1e-12);
    EXPECT_NEAR(v[1], 0.8, 1e-12);
    const std::vector<double> unit{0, 1, 0};
    EXPECT_EQ(treid::l2_normalize(unit), unit);
    EXPECT_THROW(treid::l2_normalize(std::vector<double>{0, 0}), treid::DegenerateInput);
}

TEST(Vectors, CosineSimilarity) {
    const std::vector<double> q{0.3, -2.0, 5.0};
    EXPECT_NEAR(treid::cosine_similarity(q, q), 1.0, 1e-12);
    EXPECT_NEAR(treid::cosine_similarity(std::vector<double>{1, 0}, std::vector<double>{0, 1}), 0.0, 1e-12);
    EXPECT_NEAR(treid::cosine_similarity(std::vector<double>{1, 0}, std::vector<double>{1, 1}), 0.70710678, 1e-8);
    EXPECT_THROW(treid::cosine_similarity(std::vector<double>{0, 0}, std::vector<double>{1, 1}), treid::DegenerateInput);
}

TEST(Vectors, CosineEqualsDotOfNormalized) {
    std::mt19937_64 rng(21);
    std::normal_distribution<float> g;
    for (int t = 0; t < 200; ++t) {
        std::vector<float> a(16), b(16);
        for (auto& x : a) x = g(rng);
        for (auto& x : b) x = g(rng);
        const auto na = treid::l2_normalize(a);
        const auto nb = treid::l2_normalize(b);
        EXPECT_NEAR(treid::cosine_similarity(a, b), treid::dot(std::span<const float>(na), std::span<const float>(nb)),
                    1e-6);
        EXPECT_NEAR(treid::norm(std::span<const float>(na)), 1.0f, 1e-6);
    }
}

TEST(Vectors, EuclideanDistance) {
    const std::vector<double> a{1.5, -2.0};
    EXPECT_EQ(treid::euclidean_distance(a, a), 0.0);
    EXPECT_DOUBLE_EQ(treid::euclidean_distance(std::vector<double>{0, 0}, std::vector<double>{3, 4}), 5.0);
    EXPECT_THROW(treid::euclidean_distance(std::vector<double>{0, 0}, std::vector<double>{1, 2, 3}),
                 treid::InvalidInput);
}

TEST(Vectors, TriangleInequalityAndSymmetry) {
    std::mt19937_64 rng(4);
    std::normal_distribution<double> g;
    for (int t = 0; t < 500; ++t) {
        std::vector<double> a(8), b(8), c(8);
        for (auto* v : {&a, &b, &c})
            for (auto& x : *v) x = g(rng);
        const double ab = treid::euclidean_distance(a, b);
        EXPECT_EQ(ab, treid::euclidean_distance(b, a));
        EXPECT_LE(treid::euclidean_distance(a, c), ab + treid::euclidean_distance(b, c) + 1e-12);
    }
}

TEST(MatrixOps, ProductsAgreeWithNaiveLoops) {
    std::mt19937_64 rng(8);
    const auto a = random_matrix<double>(rng, 5, 3);
    const auto b = random_matrix<double>(rng, 3, 4);
    const auto c = treid::matmul(a, b);
    for (std::size_t i = 0; i < 5; ++i)
        for (std::size_t j = 0; j < 4; ++j) {
            double acc = 0;
            for (std::size_t k = 0; k < 3; ++k) acc += a(i, k) * b(k, j);
            EXPECT_NEAR(c(i, j), acc, 1e-12);
        }
    const auto abt = treid::matmul_abt(a, treid::transpose(b));
    for (std::size_t i = 0; i < c.size(); ++i) EXPECT_NEAR(abt.storage()[i], c.storage()[i], 1e-12);
    const auto atb = treid::matmul_atb(treid::transpose(a), b);
    for (std::size_t i = 0; i < c.size(); ++i) EXPECT_NEAR(atb.storage()[i], c.storage()[i], 1e-12);
    EXPECT_THROW(treid::matmul(a, a), treid::InvalidInput);
}
