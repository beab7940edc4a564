#ifndef TREID_CONTRASTIVE_HPP
#define TREID_CONTRASTIVE_HPP

// InfoNCE over a FIFO memory bank of momentum-encoder keys, and the two
// training loops built on it: instance discrimination over augmented
// detections and tracklet segment discrimination.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <unordered_map>
#include <utility>
#include <vector>

#include "treid/encoder.hpp"
#include "treid/error.hpp"
#include "treid/linalg.hpp"
#include "treid/rng.hpp"
#include "treid/synth.hpp"
#include "treid/tracklet.hpp"

namespace treid {

template <class T>
class MemoryBank {
public:
    MemoryBank(std::size_t capacity, std::size_t dim) : keys_(capacity, dim) {
        require(capacity >= 1 && dim >= 1, "MemoryBank: capacity and dim must be positive");
    }

    std::size_t capacity() const noexcept { return keys_.rows(); }
    std::size_t dim() const noexcept { return keys_.cols(); }
    std::size_t size() const noexcept { return size_; }
    bool empty() const noexcept { return size_ == 0; }

    /// Overwrites the oldest entries. Every key must be unit-norm.
    void enqueue(const Matrix<T>& keys) {
        if (keys.rows() == 0) return;
        require(keys.cols() == dim(), "enqueue: key dimension mismatch");
        const T tol = std::is_same_v<T, float> ? T(1e-4) : T(1e-9);
        for (std::size_t r = 0; r < keys.rows(); ++r) {
            const T n = norm(keys.row(r));
            if (!(std::abs(n - T(1)) <= tol)) throw InvalidInput("enqueue: keys must be unit-norm");
        }
        for (std::size_t r = 0; r < keys.rows(); ++r) {
            std::copy_n(keys.row(r).begin(), dim(), keys_.row(cursor_).begin());
            cursor_ = (cursor_ + 1) % capacity();
            size_ = std::min(size_ + 1, capacity());
        }
    }

    void clear() noexcept {
        size_ = 0;
        cursor_ = 0;
    }

    /// Stored keys, oldest first.
    Matrix<T> entries() const {
        Matrix<T> out(size_, dim());
        const std::size_t start = size_ < capacity() ? 0 : cursor_;
        for (std::size_t i = 0; i < size_; ++i)
            std::copy_n(keys_.row((start + i) % capacity()).begin(), dim(), out.row(i).begin());
        return out;
    }

    /// Raw ring storage; the first size() rows are live (in ring order).
    const Matrix<T>& storage() const noexcept { return keys_; }

private:
    Matrix<T> keys_;
    std::size_t cursor_ = 0;
    std::size_t size_ = 0;
};

template <class T>
struct InfoNceResult {
    T loss = 0;
    std::vector<T> grad_q;
    std::vector<T> grad_kpos;
};

/// -log(exp(q.k+/tau) / (exp(q.k+/tau) + sum_j exp(q.k_j/tau))) for one query
/// against the first `n_neg` rows of `negatives`. Negatives get no gradient.
template <class T>
InfoNceResult<T> info_nce(std::span<const T> q, std::span<const T> kpos, const Matrix<T>& negatives,
                          std::size_t n_neg, T tau) {
    if (!(tau > T(0))) throw InvalidInput("info_nce: temperature must be positive");
    require(q.size() == kpos.size() && negatives.cols() == q.size(), "info_nce: dimension mismatch");
    require(n_neg >= 1 && n_neg <= negatives.rows(), "info_nce: need at least one negative");

    std::vector<T> logits(n_neg + 1);
    logits[0] = dot(q, kpos) / tau;
    for (std::size_t j = 0; j < n_neg; ++j) logits[j + 1] = dot(q, negatives.row(j)) / tau;
    const T mx = *std::max_element(logits.begin(), logits.end());
    T z = 0;
    for (auto& l : logits) z += std::exp(l - mx);
    const T lse = mx + std::log(z);

    InfoNceResult<T> out;
    out.loss = lse - logits[0];
    const T p0 = std::exp(logits[0] - lse);
    out.grad_q.assign(q.size(), T(0));
    out.grad_kpos.assign(q.size(), T(0));
    for (std::size_t c = 0; c < q.size(); ++c) {
        out.grad_q[c] = (p0 - T(1)) * kpos[c] / tau;
        out.grad_kpos[c] = (p0 - T(1)) * q[c] / tau;
    }
    for (std::size_t j = 0; j < n_neg; ++j) {
        const T p = std::exp(logits[j + 1] - lse) / tau;
        auto k = negatives.row(j);
        for (std::size_t c = 0; c < q.size(); ++c) out.grad_q[c] += p * k[c];
    }
    return out;
}

template <class T>
InfoNceResult<T> info_nce(std::span<const T> q, std::span<const T> kpos, const MemoryBank<T>& bank, T tau) {
    if (bank.empty()) throw InvalidInput("info_nce: memory bank is empty");
    return info_nce(q, kpos, bank.storage(), bank.size(), tau);
}

template <class T>
struct BatchLoss {
    T mean_loss = 0;
    Matrix<T> grad_q;  // d(mean loss)/dQ
};

/// Batched InfoNCE: row r of q pairs with row r of kpos, all rows share the
/// bank as negatives. Gradients are of the batch-mean loss w.r.t. q.
template <class T>
BatchLoss<T> info_nce_batch(const Matrix<T>& q, const Matrix<T>& kpos, const MemoryBank<T>& bank, T tau) {
    if (!(tau > T(0))) throw InvalidInput("info_nce: temperature must be positive");
    if (bank.empty()) throw InvalidInput("info_nce: memory bank is empty");
    require(q.rows() == kpos.rows() && q.cols() == kpos.cols() && q.cols() == bank.dim(),
            "info_nce_batch: shape mismatch");
    const auto b = static_cast<Eigen::Index>(q.rows());
    const auto n = static_cast<Eigen::Index>(bank.size());
    const auto d = static_cast<Eigen::Index>(q.cols());
    using RM = detail::RowMajor<T>;
    Eigen::Map<const RM> Q(q.data(), b, d), K(kpos.data(), b, d), N(bank.storage().data(), n, d);

    RM logits(b, n + 1);
    logits.col(0) = (Q.cwiseProduct(K)).rowwise().sum() / tau;
    logits.rightCols(n).noalias() = (Q * N.transpose()) / tau;
    T total = 0;
    for (Eigen::Index r = 0; r < b; ++r) {
        auto row = logits.row(r);
        const T mx = row.maxCoeff();
        row.array() = (row.array() - mx).exp();
        const T z = row.sum();
        row /= z;
        total += -std::log(row(0));
    }
    // logits now hold softmax probabilities p; dL/dq = ((p0 - 1) k+ + sum p_j k_j) / tau
    BatchLoss<T> out;
    out.mean_loss = total / static_cast<T>(b);
    out.grad_q = Matrix<T>(q.rows(), q.cols());
    Eigen::Map<RM> G(out.grad_q.data(), b, d);
    G.noalias() = logits.rightCols(n) * N;
    G += (logits.col(0).array() - T(1)).matrix().asDiagonal() * K;
    G /= tau * static_cast<T>(b);
    return out;
}

struct ContrastiveConfig {
    double tau = 0.07;
    std::size_t batch_size = 256;
    std::size_t bank_capacity = 4096;
    double momentum = 0.999;
    int epochs_cid = 10;
    int epochs_tsd = 50;
    double aug_strength = 1.0;
    OptimConfig optim;

    void validate() const {
        require(tau > 0, "tau must be positive");
        require(batch_size >= 1 && bank_capacity >= 1, "batch size and bank capacity must be positive");
        require(bank_capacity % batch_size == 0, "bank capacity must be divisible by the batch size");
        require(momentum >= 0 && momentum <= 1, "momentum must lie in [0, 1]");
        require(epochs_cid >= 0 && epochs_tsd >= 0, "epoch counts must be non-negative");
        require(aug_strength >= 0, "aug_strength must be non-negative");
    }
};

struct TrainStats {
    int epoch = 0;
    double mean_loss = 0;
    double lr = 0;
    std::size_t bank_occupancy = 0;
    std::size_t steps = 0;
    double wall_seconds = 0;
};

/// Training state carried across epochs of one stage.
template <class T>
struct TrainState {
    EncoderPair<T> pair;
    OptimState<T> optim;
    MemoryBank<T> bank;

    TrainState(EncoderPair<T> p, const ContrastiveConfig& cfg)
        : pair(std::move(p)), optim(make_optim_state(pair.query, cfg.optim)), bank(cfg.bank_capacity, pair.query.out_dim()) {
        pair.momentum = static_cast<T>(cfg.momentum);
    }
};

namespace detail {

template <class T>
void augment_into(Matrix<T>& out, std::size_t row, std::span<const double> x, Rng& rng, double strength) {
    const auto a = augment_observation(x, rng, strength);
    std::transform(a.begin(), a.end(), out.row(row).begin(), [](double v) { return static_cast<T>(v); });
}

// One optimisation step on a prepared (anchor, positive) batch. Returns the
// batch loss, or nothing when the bank was empty and the step only filled it.
template <class T>
std::optional<T> contrastive_step(TrainState<T>& st, const Matrix<T>& anchors, const Matrix<T>& positives, T tau,
                                  T lr) {
    const Matrix<T> keys = forward(st.pair.key, positives);
    if (st.bank.empty()) {
        st.bank.enqueue(keys);
        return std::nullopt;
    }
    ForwardCache<T> cache;
    const Matrix<T> q = forward(st.pair.query, anchors, &cache);
    auto loss = info_nce_batch(q, keys, st.bank, tau);
    if (!std::isfinite(loss.mean_loss)) throw TrainingDivergence("contrastive step: non-finite loss");
    const auto grads = backward(st.pair.query, cache, loss.grad_q);
    sgd_step(st.pair.query, grads, st.optim, lr);
    momentum_update(st.pair);
    st.bank.enqueue(keys);
    return loss.mean_loss;
}

}  // namespace detail

/// One epoch of instance discrimination. `observations` holds one row per
/// training detection; positives are a second, independent augmentation of
/// the same row. Only full batches are used.
template <class T>
TrainStats cid_epoch(TrainState<T>& st, const Matrix<double>& observations, const ContrastiveConfig& cfg, Rng& rng,
                     int epoch_index = 0) {
    cfg.validate();
    const std::size_t n = observations.rows();
    const std::size_t bs = cfg.batch_size;
    if (n < bs) throw InvalidInput("cid_epoch: fewer detections than the batch size");
    require(observations.cols() == st.pair.query.in_dim(), "cid_epoch: observation width mismatch");
    const auto t0 = std::chrono::steady_clock::now();

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);

    const T lr = static_cast<T>(cfg.optim.base_lr);
    Matrix<T> anchors(bs, observations.cols()), positives(bs, observations.cols());
    double loss_sum = 0;
    std::size_t counted = 0, steps = 0;
    for (std::size_t start = 0; start + bs <= n; start += bs) {
        for (std::size_t i = 0; i < bs; ++i) {
            const auto x = observations.row(order[start + i]);
            detail::augment_into(anchors, i, x, rng, cfg.aug_strength);
            detail::augment_into(positives, i, x, rng, cfg.aug_strength);
        }
        if (auto l = detail::contrastive_step(st, anchors, positives, static_cast<T>(cfg.tau), lr)) {
            loss_sum += static_cast<double>(*l);
            ++counted;
        }
        ++steps;
    }
    TrainStats stats;
    stats.epoch = epoch_index;
    stats.mean_loss = counted ? loss_sum / static_cast<double>(counted) : 0.0;
    stats.lr = cfg.optim.base_lr;
    stats.bank_occupancy = st.bank.size();
    stats.steps = steps;
    stats.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return stats;
}

/// Two distinct members of a segment, uniformly over ordered pairs.
inline std::pair<std::int64_t, std::int64_t> sample_tsd_pair(const TrackletSegment& segment, Rng& rng) {
    const std::size_t n = segment.length();
    if (n < 2) throw InvalidInput("sample_tsd_pair: segment must hold at least two detections");
    std::uniform_int_distribution<std::size_t> first(0, n - 1), second(0, n - 2);
    const std::size_t a = first(rng);
    std::size_t b = second(rng);
    if (b >= a) ++b;
    return {segment.detections[a], segment.detections[b]};
}

/// det_id -> row lookup for an observation matrix.
struct RowIndex {
    std::unordered_map<std::int64_t, std::size_t> row;

    explicit RowIndex(std::span<const Detection> dets) {
        row.reserve(dets.size());
        for (std::size_t i = 0; i < dets.size(); ++i) row.emplace(dets[i].det_id, i);
    }
    std::size_t at(std::int64_t det_id) const {
        auto it = row.find(det_id);
        if (it == row.end()) throw InvalidInput("unknown det_id " + std::to_string(det_id));
        return it->second;
    }
};

/// One epoch of tracklet segment discrimination. Segments are drawn with
/// probability proportional to their length; the anchor and positive are two
/// distinct members, each augmented independently. A length-1 segment (only
/// present when no length filter was applied) pairs its detection with a
/// second augmentation of itself. lr = cosine_lr(epoch_index, epochs_tsd).
template <class T>
TrainStats tsd_epoch(TrainState<T>& st, const std::vector<TrackletSegment>& segments,
                     const Matrix<double>& observations, const RowIndex& rows, const ContrastiveConfig& cfg, Rng& rng,
                     int epoch_index) {
    cfg.validate();
    require(!segments.empty(), "tsd_epoch: no segments");
    require(observations.cols() == st.pair.query.in_dim(), "tsd_epoch: observation width mismatch");
    const auto t0 = std::chrono::steady_clock::now();

    std::vector<double> weights;
    weights.reserve(segments.size());
    std::size_t total = 0;
    for (const auto& s : segments) {
        weights.push_back(static_cast<double>(s.length()));
        total += s.length();
    }
    const std::size_t bs = cfg.batch_size;
    if (total < bs) throw InvalidInput("tsd_epoch: fewer segment detections than the batch size");
    std::discrete_distribution<std::size_t> pick(weights.begin(), weights.end());

    const double lr = cosine_lr(epoch_index, std::max(cfg.epochs_tsd, 1), cfg.optim.base_lr);
    Matrix<T> anchors(bs, observations.cols()), positives(bs, observations.cols());
    double loss_sum = 0;
    std::size_t counted = 0;
    const std::size_t steps = total / bs;
    for (std::size_t step = 0; step < steps; ++step) {
        for (std::size_t i = 0; i < bs; ++i) {
            const auto& seg = segments[pick(rng)];
            std::int64_t a, p;
            if (seg.length() >= 2) std::tie(a, p) = sample_tsd_pair(seg, rng);
            else a = p = seg.detections.front();
            detail::augment_into(anchors, i, observations.row(rows.at(a)), rng, cfg.aug_strength);
            detail::augment_into(positives, i, observations.row(rows.at(p)), rng, cfg.aug_strength);
        }
        if (auto l = detail::contrastive_step(st, anchors, positives, static_cast<T>(cfg.tau), static_cast<T>(lr))) {
            loss_sum += static_cast<double>(*l);
            ++counted;
        }
    }
    TrainStats stats;
    stats.epoch = epoch_index;
    stats.mean_loss = counted ? loss_sum / static_cast<double>(counted) : 0.0;
    stats.lr = lr;
    stats.bank_occupancy = st.bank.size();
    stats.steps = steps;
    stats.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return stats;
}

}  // namespace treid

#endif  // TREID_CONTRASTIVE_HPP
