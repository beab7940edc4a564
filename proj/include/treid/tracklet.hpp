#ifndef TREID_TRACKLET_HPP
#define TREID_TRACKLET_HPP

// Tracklet segments from adjacent-frame mutual nearest neighbours.
//
// For every camera and every pair of adjacent frames (i, i+1) the affinity
// matrix A = E_i * E_{i+1}^T of unit-norm embeddings is formed. A cell is a
// match iff it is the strict maximum of its row and of its column. A match
// extends the segment of the frame-i detection; unmatched detections in
// frame i+1 open new segments. Frames are never bridged across a gap.

#include <algorithm>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <unordered_map>
#include <vector>

#include "treid/encoder.hpp"
#include "treid/error.hpp"
#include "treid/linalg.hpp"
#include "treid/parallel.hpp"
#include "treid/synth.hpp"

namespace treid {

struct Match {
    std::size_t row = 0;
    std::size_t col = 0;
    bool operator==(const Match&) const = default;
    auto operator<=>(const Match&) const = default;
};

struct TrackletSegment {
    std::int64_t segment_id = 0;
    int camera_id = 0;
    int first_frame = 0;
    std::vector<std::int64_t> detections;  // one per consecutive frame

    std::size_t length() const noexcept { return detections.size(); }
    bool operator==(const TrackletSegment&) const = default;
};

/// A[m][k] = <fi[m], fj[k]>; cosine similarity for unit-norm rows.
template <class T>
Matrix<T> affinity(const Matrix<T>& fi, const Matrix<T>& fj) {
    if (fi.rows() == 0 || fj.rows() == 0) return Matrix<T>(fi.rows(), fj.rows());
    if (fi.cols() != fj.cols()) throw InvalidInput("affinity: embedding dimensions differ");
    return matmul_abt(fi, fj);
}

/// Strict row/column maxima. `floor`, when set, additionally rejects matches
/// whose similarity is below it.
template <class T>
std::vector<Match> mutual_matches(const Matrix<T>& a, std::optional<T> floor = std::nullopt) {
    const std::size_t n = a.rows(), m = a.cols();
    if (n == 0 || m == 0) return {};
    constexpr std::size_t none = static_cast<std::size_t>(-1);
    std::vector<std::size_t> row_best(n, none), col_best(m, none);
    std::vector<T> row_max(n), col_max(m);
    std::vector<bool> row_tie(n, false), col_tie(m, false);
    for (std::size_t r = 0; r < n; ++r)
        for (std::size_t c = 0; c < m; ++c) {
            const T v = a(r, c);
            if (row_best[r] == none || v > row_max[r]) {
                row_best[r] = c;
                row_max[r] = v;
                row_tie[r] = false;
            } else if (v == row_max[r]) {
                row_tie[r] = true;
            }
            if (col_best[c] == none || v > col_max[c]) {
                col_best[c] = r;
                col_max[c] = v;
                col_tie[c] = false;
            } else if (v == col_max[c]) {
                col_tie[c] = true;
            }
        }
    std::vector<Match> out;
    for (std::size_t r = 0; r < n; ++r) {
        const std::size_t c = row_best[r];
        if (row_tie[r] || col_tie[c] || col_best[c] != r) continue;
        if (floor && a(r, c) < *floor) continue;
        out.push_back({r, c});
    }
    return out;
}

/// Pluggable frame-to-frame association; MNN is the only shipped matcher.
template <class T>
using Matcher = std::function<std::vector<Match>(const Matrix<T>&)>;

template <class T>
Matcher<T> mnn_matcher(std::optional<T> floor = std::nullopt) {
    return [floor](const Matrix<T>& a) { return mutual_matches(a, floor); };
}

namespace detail {

template <class T>
Matrix<T> gather_rows(const Matrix<T>& src, std::span<const std::size_t> idx) {
    Matrix<T> out(idx.size(), src.cols());
    for (std::size_t i = 0; i < idx.size(); ++i) std::copy_n(src.row(idx[i]).begin(), src.cols(), out.row(i).begin());
    return out;
}

template <class T>
std::vector<TrackletSegment> assemble_camera(std::span<const Detection> dets, const Matrix<T>& emb,
                                             const std::vector<std::size_t>& members, const Matcher<T>& matcher) {
    std::map<int, std::vector<std::size_t>> by_frame;
    for (std::size_t i : members) by_frame[dets[i].frame].push_back(i);
    for (auto& [f, v] : by_frame)
        std::sort(v.begin(), v.end(), [&](std::size_t a, std::size_t b) { return dets[a].det_id < dets[b].det_id; });

    std::vector<TrackletSegment> segs;
    std::vector<std::size_t> prev_idx, prev_seg;
    int prev_frame = 0;
    bool have_prev = false;
    for (const auto& [frame, idx] : by_frame) {
        std::vector<std::size_t> cur_seg(idx.size(), static_cast<std::size_t>(-1));
        if (have_prev && frame == prev_frame + 1) {
            const auto a = affinity(gather_rows(emb, prev_idx), gather_rows(emb, idx));
            for (const auto& mt : matcher(a)) {
                require(mt.row < prev_idx.size() && mt.col < idx.size(), "matcher returned an out-of-range index");
                require(cur_seg[mt.col] == static_cast<std::size_t>(-1), "matcher reused a column");
                cur_seg[mt.col] = prev_seg[mt.row];
            }
        }
        for (std::size_t k = 0; k < idx.size(); ++k) {
            const auto& d = dets[idx[k]];
            if (cur_seg[k] == static_cast<std::size_t>(-1)) {
                cur_seg[k] = segs.size();
                segs.push_back({0, d.camera_id, d.frame, {}});
            }
            segs[cur_seg[k]].detections.push_back(d.det_id);
        }
        prev_idx = idx;
        prev_seg = std::move(cur_seg);
        prev_frame = frame;
        have_prev = true;
    }
    return segs;
}

}  // namespace detail

/// Partitions `dets` into segments. Row i of `embeddings` is the unit-norm
/// embedding of dets[i]. Segment ids follow (camera_id, first_frame, first
/// det_id) order.
template <class T>
std::vector<TrackletSegment> assemble_segments(std::span<const Detection> dets, const Matrix<T>& embeddings,
                                               const Matcher<T>& matcher = mnn_matcher<T>(), std::size_t workers = 1) {
    require(embeddings.rows() == dets.size(), "assemble_segments: one embedding row per detection required");
    std::map<int, std::vector<std::size_t>> by_cam;
    for (std::size_t i = 0; i < dets.size(); ++i) by_cam[dets[i].camera_id].push_back(i);
    std::vector<std::vector<std::size_t>> groups;
    for (auto& [c, v] : by_cam) groups.push_back(std::move(v));

    std::vector<std::vector<TrackletSegment>> per_cam(groups.size());
    parallel_for(groups.size(), workers,
                 [&](std::size_t g) { per_cam[g] = detail::assemble_camera(dets, embeddings, groups[g], matcher); });

    std::vector<TrackletSegment> out;
    for (auto& v : per_cam)
        for (auto& s : v) out.push_back(std::move(s));
    std::sort(out.begin(), out.end(), [](const TrackletSegment& a, const TrackletSegment& b) {
        if (a.camera_id != b.camera_id) return a.camera_id < b.camera_id;
        if (a.first_frame != b.first_frame) return a.first_frame < b.first_frame;
        return a.detections.front() < b.detections.front();
    });
    for (std::size_t i = 0; i < out.size(); ++i) out[i].segment_id = static_cast<std::int64_t>(i);
    return out;
}

/// Observation matrix (row per detection) in the encoder's precision.
template <class T>
Matrix<T> observation_matrix(std::span<const Detection> dets) {
    if (dets.empty()) return {};
    const std::size_t d = dets.front().observation.size();
    Matrix<T> m(dets.size(), d);
    for (std::size_t i = 0; i < dets.size(); ++i) {
        require(dets[i].observation.size() == d, "observation_matrix: ragged observations");
        std::transform(dets[i].observation.begin(), dets[i].observation.end(), m.row(i).begin(),
                       [](double v) { return static_cast<T>(v); });
    }
    return m;
}

/// Embeds every detection with `params` in chunks.
template <class T>
Matrix<T> embed(const EncoderParams<T>& params, const Matrix<T>& observations, std::size_t chunk = 4096) {
    Matrix<T> out(observations.rows(), params.out_dim());
    for (std::size_t start = 0; start < observations.rows(); start += chunk) {
        const std::size_t n = std::min(chunk, observations.rows() - start);
        Matrix<T> part(n, observations.cols());
        std::copy_n(observations.row(start).data(), n * observations.cols(), part.data());
        const auto e = forward(params, part);
        std::copy_n(e.data(), e.size(), out.row(start).data());
    }
    return out;
}

template <class T>
std::vector<TrackletSegment> assemble_segments(std::span<const Detection> dets, const EncoderParams<T>& encoder,
                                               const Matcher<T>& matcher = mnn_matcher<T>(), std::size_t workers = 1) {
    return assemble_segments(dets, embed(encoder, observation_matrix<T>(dets)), matcher, workers);
}

inline std::vector<TrackletSegment> filter_segments(const std::vector<TrackletSegment>& segments, std::size_t min_len) {
    require(min_len >= 1, "filter_segments: min_len must be >= 1");
    std::vector<TrackletSegment> out;
    for (const auto& s : segments)
        if (s.length() >= min_len) out.push_back(s);
    return out;
}

struct SegmentStats {
    std::size_t segment_count = 0;
    std::size_t detection_count = 0;
    std::map<std::size_t, std::size_t> length_histogram;  // length -> count
    std::map<int, std::size_t> per_camera;                // camera -> count
    double purity = 1.0;
};

/// `gt_of` maps a det_id to its hidden identity; evaluation-side callers only.
inline SegmentStats segment_stats(const std::vector<TrackletSegment>& segments,
                                  const std::function<int(std::int64_t)>& gt_of) {
    SegmentStats st;
    std::size_t pure = 0;
    for (const auto& s : segments) {
        ++st.segment_count;
        st.detection_count += s.length();
        ++st.length_histogram[s.length()];
        ++st.per_camera[s.camera_id];
        bool same = true;
        const int first = s.detections.empty() ? -1 : gt_of(s.detections.front());
        for (auto id : s.detections) same = same && gt_of(id) == first;
        pure += same ? 1 : 0;
    }
    st.purity = st.segment_count ? static_cast<double>(pure) / static_cast<double>(st.segment_count) : 1.0;
    return st;
}

}  // namespace treid

#endif  // TREID_TRACKLET_HPP
