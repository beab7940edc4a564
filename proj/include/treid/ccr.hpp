#ifndef TREID_CCR_HPP
#define TREID_CCR_HPP

// Camera components reduction.
//
// A bias-free softmax classifier W (m cameras x n dims) is fitted on frozen
// embeddings. W is row-centred (the mean class vector removed, which leaves
// every softmax unchanged), decomposed as U S V^T, and embeddings are mapped
// through P = I - V V^T. With all non-null components removed, centred
// logits W_c P f vanish for every f, so the classifier outputs 1/m per camera.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <random>
#include <span>
#include <vector>

#include "treid/error.hpp"
#include "treid/linalg.hpp"
#include "treid/rng.hpp"

namespace treid {

template <class T>
struct CameraClassifier {
    Matrix<T> w;  // m x n, no bias
    double train_accuracy = 0;
    double holdout_accuracy = 0;

    std::size_t cameras() const noexcept { return w.rows(); }
    std::size_t dim() const noexcept { return w.cols(); }
};

struct CcrFitConfig {
    int epochs = 30;
    double lr = 1.0;
    std::size_t batch_size = 256;
    double holdout_frac = 0.2;
    std::uint64_t seed = 0;
};

namespace detail {

template <class T>
void softmax_inplace(std::span<T> logits) {
    const T mx = *std::max_element(logits.begin(), logits.end());
    T z = 0;
    for (auto& v : logits) {
        v = std::exp(v - mx);
        z += v;
    }
    for (auto& v : logits) v /= z;
}

template <class T>
double accuracy(const Matrix<T>& w, const Matrix<T>& x, std::span<const int> labels,
                std::span<const std::size_t> idx) {
    if (idx.empty()) return 0.0;
    std::size_t hit = 0;
    for (std::size_t i : idx) {
        std::size_t best = 0;
        T best_v = -std::numeric_limits<T>::infinity();
        for (std::size_t c = 0; c < w.rows(); ++c) {
            const T v = dot(std::span<const T>(w.row(c)), x.row(i));
            if (v > best_v) {
                best_v = v;
                best = c;
            }
        }
        hit += static_cast<int>(best) == labels[i] ? 1 : 0;
    }
    return static_cast<double>(hit) / static_cast<double>(idx.size());
}

}  // namespace detail

/// Multinomial logistic regression (no bias) trained by minibatch SGD on
/// cross-entropy. Labels must be 0..n_cameras-1. A shuffled `holdout_frac`
/// slice is kept out of training and used for the reported accuracy.
template <class T>
CameraClassifier<T> fit_camera_classifier(const Matrix<T>& embeddings, std::span<const int> labels,
                                          std::size_t n_cameras, const CcrFitConfig& cfg = {}) {
    if (n_cameras < 2) throw InvalidInput("fit_camera_classifier: need at least two cameras");
    require(labels.size() == embeddings.rows(), "fit_camera_classifier: one label per embedding required");
    require(n_cameras <= embeddings.cols(), "fit_camera_classifier: more cameras than embedding dimensions");
    require(cfg.holdout_frac >= 0 && cfg.holdout_frac < 1, "fit_camera_classifier: holdout_frac must lie in [0, 1)");
    require(cfg.batch_size >= 1 && cfg.epochs >= 0, "fit_camera_classifier: bad optimisation settings");
    std::vector<std::size_t> seen(n_cameras, 0);
    for (int l : labels) {
        require(l >= 0 && static_cast<std::size_t>(l) < n_cameras, "fit_camera_classifier: label out of range");
        ++seen[static_cast<std::size_t>(l)];
    }
    for (auto s : seen) require(s >= 1, "fit_camera_classifier: every camera needs at least one sample");
    for (std::size_t r = 0; r < embeddings.rows(); ++r)
        require(std::abs(norm(embeddings.row(r)) - T(1)) < T(1e-3), "fit_camera_classifier: embeddings must be unit-norm");

    Rng rng = make_rng(cfg.seed, {kCcrStream});
    std::vector<std::size_t> order(embeddings.rows());
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    const auto n_hold = static_cast<std::size_t>(std::floor(cfg.holdout_frac * static_cast<double>(order.size())));
    std::vector<std::size_t> hold(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_hold));
    std::vector<std::size_t> train(order.begin() + static_cast<std::ptrdiff_t>(n_hold), order.end());
    if (train.empty()) train = hold;

    const std::size_t m = n_cameras, n = embeddings.cols();
    CameraClassifier<T> clf;
    clf.w = Matrix<T>(m, n);
    std::vector<T> logits(m);
    Matrix<T> grad(m, n);
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::shuffle(train.begin(), train.end(), rng);
        for (std::size_t start = 0; start < train.size(); start += cfg.batch_size) {
            const std::size_t end = std::min(train.size(), start + cfg.batch_size);
            std::fill(grad.storage().begin(), grad.storage().end(), T(0));
            for (std::size_t b = start; b < end; ++b) {
                const auto x = embeddings.row(train[b]);
                for (std::size_t c = 0; c < m; ++c) logits[c] = dot(std::span<const T>(clf.w.row(c)), x);
                detail::softmax_inplace(std::span<T>(logits));
                logits[static_cast<std::size_t>(labels[train[b]])] -= T(1);
                for (std::size_t c = 0; c < m; ++c) {
                    auto g = grad.row(c);
                    for (std::size_t k = 0; k < n; ++k) g[k] += logits[c] * x[k];
                }
            }
            const T step = static_cast<T>(cfg.lr) / static_cast<T>(end - start);
            for (std::size_t i = 0; i < grad.size(); ++i) clf.w.storage()[i] -= step * grad.storage()[i];
        }
    }
    if (!all_finite(clf.w)) throw TrainingDivergence("fit_camera_classifier: weights diverged");
    clf.train_accuracy = detail::accuracy(clf.w, embeddings, labels, train);
    clf.holdout_accuracy = detail::accuracy(clf.w, embeddings, labels, hold.empty() ? train : hold);
    return clf;
}

template <class T>
struct CcrProjector {
    Matrix<T> v;               // n x k_eff, orthonormal columns
    std::size_t k = 0;         // requested component count
    std::size_t m = 0;         // cameras
    std::size_t n = 0;         // embedding dimension
    std::vector<T> centering;  // mean class vector removed before the SVD (zeros if uncentred)
    std::vector<T> sigma;      // singular values of the centred classifier

    std::size_t effective_k() const noexcept { return v.cols(); }

    /// P = I - V V^T
    Matrix<T> matrix() const {
        Matrix<T> p = Matrix<T>::identity(n);
        const auto vvt = matmul_abt(v, v);
        for (std::size_t i = 0; i < p.size(); ++i) p.storage()[i] -= vvt.storage()[i];
        return p;
    }
};

/// V = the first k right singular vectors of the (optionally row-centred)
/// classifier. Directions whose singular value is numerically zero carry no
/// classifier signal and are left out, so a centred m-camera classifier
/// contributes at most m - 1 directions even for k = m.
template <class T>
CcrProjector<T> build_projector(const CameraClassifier<T>& clf, std::size_t k, bool center = true) {
    const std::size_t m = clf.cameras(), n = clf.dim();
    if (k < 1 || k > m) throw InvalidInput("build_projector: k must lie in [1, m]");
    require(m <= n, "build_projector: classifier must have m <= n");

    CcrProjector<T> p;
    p.k = k;
    p.m = m;
    p.n = n;
    p.centering.assign(n, T(0));
    Matrix<T> wc = clf.w;
    if (center) {
        for (std::size_t r = 0; r < m; ++r)
            for (std::size_t c = 0; c < n; ++c) p.centering[c] += wc(r, c) / static_cast<T>(m);
        for (std::size_t r = 0; r < m; ++r)
            for (std::size_t c = 0; c < n; ++c) wc(r, c) -= p.centering[c];
    }
    const auto svd = svd_thin(wc);
    p.sigma = svd.sigma;
    const T smax = svd.sigma.empty() ? T(0) : svd.sigma.front();
    const T null_tol = smax * T(1e-6);
    std::size_t keep = 0;
    while (keep < k && keep < svd.sigma.size() && svd.sigma[keep] > null_tol) ++keep;
    p.v = Matrix<T>(n, keep);
    for (std::size_t j = 0; j < keep; ++j)
        for (std::size_t c = 0; c < n; ++c) p.v(c, j) = svd.vt(j, c);
    return p;
}

/// f - V (V^T f)
template <class T>
std::vector<T> apply_ccr(const CcrProjector<T>& p, std::span<const T> f) {
    if (f.size() != p.n) throw InvalidInput("apply_ccr: dimension mismatch");
    std::vector<T> out(f.begin(), f.end());
    for (std::size_t j = 0; j < p.v.cols(); ++j) {
        T c = 0;
        for (std::size_t i = 0; i < p.n; ++i) c += p.v(i, j) * f[i];
        for (std::size_t i = 0; i < p.n; ++i) out[i] -= c * p.v(i, j);
    }
    return out;
}

template <class T>
std::vector<T> apply_ccr(const CcrProjector<T>& p, const std::vector<T>& f) {
    return apply_ccr(p, std::span<const T>(f));
}

/// Row-wise apply_ccr.
template <class T>
Matrix<T> apply_ccr(const CcrProjector<T>& p, const Matrix<T>& f) {
    if (f.cols() != p.n) throw InvalidInput("apply_ccr: dimension mismatch");
    if (p.v.cols() == 0 || f.rows() == 0) return f;
    const auto coeff = matmul(f, p.v);
    return f - matmul_abt(coeff, p.v);
}

struct NullificationReport {
    double max_abs_logit = 0;
    double max_prob_deviation = 0;
};

/// Applies the projector to each sample and feeds it to the classifier,
/// centred the same way the projector was built. Reports the largest
/// absolute logit and the largest |softmax_j - 1/m|.
template <class T>
NullificationReport nullification_check(const CameraClassifier<T>& clf, const CcrProjector<T>& p,
                                        const Matrix<T>& samples) {
    require(clf.dim() == p.n && clf.cameras() == p.m, "nullification_check: classifier/projector mismatch");
    Matrix<T> wc = clf.w;
    for (std::size_t r = 0; r < wc.rows(); ++r)
        for (std::size_t c = 0; c < wc.cols(); ++c) wc(r, c) -= p.centering[c];
    const auto projected = apply_ccr(p, samples);
    const auto logits = matmul_abt(projected, wc);
    NullificationReport rep;
    const double uniform = 1.0 / static_cast<double>(p.m);
    std::vector<T> row(p.m);
    for (std::size_t r = 0; r < logits.rows(); ++r) {
        std::copy_n(logits.row(r).begin(), p.m, row.begin());
        for (T v : row) rep.max_abs_logit = std::max(rep.max_abs_logit, static_cast<double>(std::abs(v)));
        detail::softmax_inplace(std::span<T>(row));
        for (T v : row) rep.max_prob_deviation = std::max(rep.max_prob_deviation, std::abs(static_cast<double>(v) - uniform));
    }
    return rep;
}

}  // namespace treid

#endif  // TREID_CCR_HPP
