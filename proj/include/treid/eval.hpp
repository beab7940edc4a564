#ifndef TREID_EVAL_HPP
#define TREID_EVAL_HPP

// Retrieval metrics: CMC@k and mAP with Euclidean ranking and the usual
// same-identity-same-camera gallery filter.

#include <algorithm>
#include <cstdio>
#include <map>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "treid/ccr.hpp"
#include "treid/encoder.hpp"
#include "treid/error.hpp"
#include "treid/linalg.hpp"
#include "treid/parallel.hpp"
#include "treid/synth.hpp"
#include "treid/tracklet.hpp"

namespace treid {

struct EvalItem {
    int gt_id = -1;
    int camera_id = -1;
};

struct EvalProtocol {
    bool cross_camera_filter = true;
    bool renormalize_after_ccr = false;
    std::vector<int> ranks{1, 5, 10};
};

struct EvalReport {
    std::map<int, double> cmc;  // rank -> CMC@rank
    double mean_ap = 0;
    std::vector<double> average_precision;
    std::size_t queries = 0;
    std::size_t skipped = 0;
    std::string fingerprint;

    double rank1() const { return cmc.count(1) ? cmc.at(1) : 0.0; }
    bool operator==(const EvalReport&) const = default;
};

/// Gallery indices by ascending Euclidean distance to the query, ties broken
/// by index. Filtered items (same gt and same camera as the query) are
/// dropped. nullopt when nothing survives the filter.
template <class T>
std::optional<std::vector<std::size_t>> rank_gallery(std::span<const T> query, const Matrix<T>& gallery,
                                                     const EvalItem& query_item,
                                                     std::span<const EvalItem> gallery_items,
                                                     const EvalProtocol& protocol = {}) {
    require(gallery_items.size() == gallery.rows(), "rank_gallery: one item per gallery row required");
    require(gallery.rows() == 0 || gallery.cols() == query.size(), "rank_gallery: dimension mismatch");
    require(all_finite(query) && all_finite(gallery), "rank_gallery: non-finite embeddings");
    std::vector<std::pair<T, std::size_t>> scored;
    scored.reserve(gallery.rows());
    for (std::size_t g = 0; g < gallery.rows(); ++g) {
        const auto& it = gallery_items[g];
        if (protocol.cross_camera_filter && it.gt_id == query_item.gt_id && it.camera_id == query_item.camera_id)
            continue;
        scored.emplace_back(squared_distance(query, gallery.row(g)), g);
    }
    if (scored.empty()) return std::nullopt;
    std::sort(scored.begin(), scored.end());
    std::vector<std::size_t> out(scored.size());
    std::transform(scored.begin(), scored.end(), out.begin(), [](const auto& p) { return p.second; });
    return out;
}

/// Relevance flags of a ranking, in rank order.
inline std::vector<bool> relevance(std::span<const std::size_t> ranking, int query_gt,
                                   std::span<const EvalItem> gallery_items) {
    std::vector<bool> rel(ranking.size());
    for (std::size_t i = 0; i < ranking.size(); ++i) rel[i] = gallery_items[ranking[i]].gt_id == query_gt;
    return rel;
}

/// CMC@k = fraction of queries whose first relevant item sits at rank <= k.
inline std::vector<double> cmc_curve(const std::vector<std::vector<bool>>& ranked_relevance, std::span<const int> ks) {
    std::vector<double> out(ks.size(), 0.0);
    if (ranked_relevance.empty()) return out;
    for (const auto& rel : ranked_relevance) {
        const auto it = std::find(rel.begin(), rel.end(), true);
        if (it == rel.end()) throw InvalidInput("cmc_curve: query without a relevant gallery item");
        const auto first = static_cast<int>(it - rel.begin()) + 1;
        for (std::size_t i = 0; i < ks.size(); ++i)
            if (first <= ks[i]) out[i] += 1.0;
    }
    for (auto& v : out) v /= static_cast<double>(ranked_relevance.size());
    return out;
}

/// Mean over relevant items of precision at that item's rank.
inline double average_precision(const std::vector<bool>& rel) {
    double hits = 0, acc = 0;
    for (std::size_t i = 0; i < rel.size(); ++i)
        if (rel[i]) {
            hits += 1;
            acc += hits / static_cast<double>(i + 1);
        }
    if (hits == 0) throw InvalidInput("average_precision: query without a relevant gallery item");
    return acc / hits;
}

inline double mean_ap(const std::vector<std::vector<bool>>& ranked_relevance) {
    if (ranked_relevance.empty()) return 0.0;
    double acc = 0;
    for (const auto& rel : ranked_relevance) acc += average_precision(rel);
    return acc / static_cast<double>(ranked_relevance.size());
}

template <class T>
EvalReport evaluate_embeddings(const Matrix<T>& query, std::span<const EvalItem> query_items, const Matrix<T>& gallery,
                               std::span<const EvalItem> gallery_items, const EvalProtocol& protocol = {},
                               std::size_t workers = 1) {
    require(query.rows() == query_items.size(), "evaluate: one item per query row required");
    std::vector<std::optional<std::vector<bool>>> per_query(query.rows());
    parallel_for(query.rows(), workers, [&](std::size_t q) {
        auto ranking = rank_gallery(query.row(q), gallery, query_items[q], gallery_items, protocol);
        if (!ranking) return;
        auto rel = relevance(*ranking, query_items[q].gt_id, gallery_items);
        if (std::find(rel.begin(), rel.end(), true) == rel.end()) return;
        per_query[q] = std::move(rel);
    });
    std::vector<std::vector<bool>> kept;
    EvalReport rep;
    for (auto& r : per_query) {
        if (r) kept.push_back(std::move(*r));
        else ++rep.skipped;
    }
    rep.queries = kept.size();
    const auto cmc = cmc_curve(kept, protocol.ranks);
    for (std::size_t i = 0; i < protocol.ranks.size(); ++i) rep.cmc[protocol.ranks[i]] = cmc[i];
    for (const auto& rel : kept) rep.average_precision.push_back(average_precision(rel));
    rep.mean_ap = rep.average_precision.empty()
                      ? 0.0
                      : std::accumulate(rep.average_precision.begin(), rep.average_precision.end(), 0.0) /
                            static_cast<double>(rep.average_precision.size());
    return rep;
}

inline std::vector<EvalItem> eval_items(std::span<const LabeledDetection> dets) {
    std::vector<EvalItem> out;
    out.reserve(dets.size());
    for (const auto& d : dets) out.push_back({d.gt_id, d.det.camera_id});
    return out;
}

inline std::vector<Detection> unlabeled(std::span<const LabeledDetection> dets) {
    std::vector<Detection> out;
    out.reserve(dets.size());
    for (const auto& d : dets) out.push_back(d.det);
    return out;
}

/// Embeds query and gallery with the encoder, optionally applies CCR to both,
/// then ranks and scores.
template <class T>
EvalReport evaluate(const EncoderParams<T>& encoder, const CcrProjector<T>* projector,
                    std::span<const LabeledDetection> query, std::span<const LabeledDetection> gallery,
                    const EvalProtocol& protocol = {}, std::size_t workers = 1) {
    const auto qd = unlabeled(query);
    const auto gd = unlabeled(gallery);
    Matrix<T> qe = embed(encoder, observation_matrix<T>(qd));
    Matrix<T> ge = embed(encoder, observation_matrix<T>(gd));
    if (projector) {
        qe = apply_ccr(*projector, qe);
        ge = apply_ccr(*projector, ge);
        if (protocol.renormalize_after_ccr) {
            normalize_rows(qe);
            normalize_rows(ge);
        }
    }
    const auto qi = eval_items(query);
    const auto gi = eval_items(gallery);
    return evaluate_embeddings(qe, qi, ge, gi, protocol, workers);
}

/// Aligned plain-text table, one row per labelled report.
inline std::string format_report_table(const std::vector<std::pair<std::string, EvalReport>>& rows) {
    std::size_t w = 8;
    for (const auto& [name, r] : rows) w = std::max(w, name.size());
    std::string out;
    char buf[256];
    std::snprintf(buf, sizeof buf, "%-*s %8s %8s %8s %8s %8s\n", static_cast<int>(w), "run", "Rank-1", "Rank-5",
                  "Rank-10", "mAP", "queries");
    out += buf;
    for (const auto& [name, r] : rows) {
        auto at = [&](int k) { return r.cmc.count(k) ? 100.0 * r.cmc.at(k) : 0.0; };
        std::snprintf(buf, sizeof buf, "%-*s %8.2f %8.2f %8.2f %8.2f %8zu\n", static_cast<int>(w), name.c_str(), at(1),
                      at(5), at(10), 100.0 * r.mean_ap, r.queries);
        out += buf;
    }
    return out;
}

}  // namespace treid

#endif  // TREID_EVAL_HPP
