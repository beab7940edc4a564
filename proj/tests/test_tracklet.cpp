#include <gtest/gtest.h>

#include <random>
#include <set>

#include "treid/tracklet.hpp"

using treid::Match;
using treid::Matrix;

namespace {

// Every (r, c) where a[r][c] is the unique maximum of its row and of its column.
std::vector<Match> brute_force_mnn(const Matrix<double>& a) {
    std::vector<Match> out;
    for (std::size_t r = 0; r < a.rows(); ++r)
        for (std::size_t c = 0; c < a.cols(); ++c) {
            bool ok = true;
            for (std::size_t k = 0; k < a.cols() && ok; ++k)
                if (k != c && a(r, k) >= a(r, c)) ok = false;
            for (std::size_t k = 0; k < a.rows() && ok; ++k)
                if (k != r && a(k, c) >= a(r, c)) ok = false;
            if (ok) out.push_back({r, c});
        }
    return out;
}

treid::Detection det(std::int64_t id, int frame, int cam, std::vector<double> obs) {
    return {id, frame, cam, std::move(obs)};
}

}  // namespace

TEST(Mnn, WorkedExample) {
    const Matrix<double> a(2, 3, {0.9, 0.2, 0.1, 0.3, 0.8, 0.4});
    EXPECT_EQ(treid::mutual_matches(a), (std::vector<Match>{{0, 0}, {1, 1}}));
}

TEST(Mnn, TiesGiveNoMatch) {
    const Matrix<double> row_tie(1, 2, {0.5, 0.5});
    EXPECT_TRUE(treid::mutual_matches(row_tie).empty());
    const Matrix<double> col_tie(2, 1, {0.7, 0.7});
    EXPECT_TRUE(treid::mutual_matches(col_tie).empty());
}

TEST(Mnn, EmptyAndFloor) {
    EXPECT_TRUE(treid::mutual_matches(Matrix<double>(0, 3)).empty());
    EXPECT_TRUE(treid::mutual_matches(Matrix<double>(2, 0)).empty());
    const Matrix<double> a(2, 2, {0.1, -0.5, -0.4, 0.05});
    EXPECT_EQ(treid::mutual_matches(a).size(), 2u);  // no floor: low similarity still matches
    EXPECT_EQ(treid::mutual_matches(a, std::optional<double>(0.08)), (std::vector<Match>{{0, 0}}));
}

TEST(Mnn, EqualsBruteForceOnRandomMatrices) {
    std::mt19937_64 rng(1234);
    std::uniform_int_distribution<std::size_t> dim(1, 8);
    std::uniform_int_distribution<int> coarse(-3, 3);
    std::normal_distribution<double> g;
    for (int t = 0; t < 1000; ++t) {
        Matrix<double> a(dim(rng), dim(rng));
        // every fourth matrix is drawn from a coarse grid so that ties occur
        for (auto& v : a.storage()) v = t % 4 == 0 ? coarse(rng) / 3.0 : g(rng);
        const auto got = treid::mutual_matches(a);
        EXPECT_EQ(got, brute_force_mnn(a)) << "trial " << t;
        std::set<std::size_t> rows, cols;
        for (const auto& m : got) {
            EXPECT_TRUE(rows.insert(m.row).second);
            EXPECT_TRUE(cols.insert(m.col).second);
        }
        // transposing the affinity transposes the matching
        std::vector<Match> flipped;
        for (const auto& m : treid::mutual_matches(treid::transpose(a))) flipped.push_back({m.col, m.row});
        std::sort(flipped.begin(), flipped.end());
        EXPECT_EQ(flipped, got);
    }
}

TEST(Segments, ChainOfSingleIdentity) {
    const std::vector<treid::Detection> dets{det(0, 0, 0, {1, 0}), det(1, 1, 0, {1, 0}), det(2, 2, 0, {1, 0})};
    const auto segs = treid::assemble_segments(std::span<const treid::Detection>(dets),
                                               Matrix<double>(3, 2, {1, 0, 1, 0, 1, 0}));
    ASSERT_EQ(segs.size(), 1u);
    EXPECT_EQ(segs[0].detections, (std::vector<std::int64_t>{0, 1, 2}));
    EXPECT_EQ(segs[0].first_frame, 0);
}

TEST(Segments, GapsAndCamerasNeverBridged) {
    const std::vector<treid::Detection> dets{det(0, 0, 0, {1, 0}), det(1, 2, 0, {1, 0}), det(2, 1, 1, {1, 0}),
                                             det(3, 2, 1, {1, 0})};
    const auto segs = treid::assemble_segments(std::span<const treid::Detection>(dets),
                                               Matrix<double>(4, 2, {1, 0, 1, 0, 1, 0, 1, 0}));
    ASSERT_EQ(segs.size(), 3u);
    EXPECT_EQ(segs[0].detections, (std::vector<std::int64_t>{0}));
    EXPECT_EQ(segs[1].detections, (std::vector<std::int64_t>{1}));
    EXPECT_EQ(segs[2].detections, (std::vector<std::int64_t>{2, 3}));
    for (std::size_t i = 0; i < segs.size(); ++i) EXPECT_EQ(segs[i].segment_id, static_cast<std::int64_t>(i));
}

TEST(Segments, TwoWalkersSeparate) {
    std::vector<treid::Detection> dets;
    Matrix<double> emb(10, 2);
    for (int f = 0; f < 5; ++f) {
        dets.push_back(det(2 * f, f, 0, {}));
        dets.push_back(det(2 * f + 1, f, 0, {}));
        emb(2 * f, 0) = 1;
        emb(2 * f + 1, 1) = 1;
    }
    const auto segs = treid::assemble_segments(std::span<const treid::Detection>(dets), emb);
    ASSERT_EQ(segs.size(), 2u);
    EXPECT_EQ(segs[0].detections, (std::vector<std::int64_t>{0, 2, 4, 6, 8}));
    EXPECT_EQ(segs[1].detections, (std::vector<std::int64_t>{1, 3, 5, 7, 9}));
}

TEST(Segments, PartitionOfSimulatedStream) {
    treid::StreamConfig cfg;
    cfg.duration_frames = 200;
    const auto world = treid::generate_world(cfg, 20, 3, 8);
    const auto stream = treid::simulate_stream(world);
    const auto dets = treid::strip_labels(stream);
    const auto enc = treid::init_encoder<double>({static_cast<std::size_t>(cfg.d_obs), 32, 16}, 1);
    const auto segs = treid::assemble_segments(std::span<const treid::Detection>(dets), enc.query);
    const auto segs4 = treid::assemble_segments(std::span<const treid::Detection>(dets), enc.query,
                                                treid::mnn_matcher<double>(), 4);
    EXPECT_EQ(segs, segs4);

    std::map<std::int64_t, const treid::Detection*> by_id;
    for (const auto& d : dets) by_id[d.det_id] = &d;
    std::set<std::int64_t> seen;
    for (const auto& s : segs) {
        for (std::size_t i = 0; i < s.length(); ++i) {
            EXPECT_TRUE(seen.insert(s.detections[i]).second);
            const auto* d = by_id.at(s.detections[i]);
            EXPECT_EQ(d->camera_id, s.camera_id);
            EXPECT_EQ(d->frame, s.first_frame + static_cast<int>(i));
        }
    }
    EXPECT_EQ(seen.size(), dets.size());
}

TEST(Segments, FilterKeepsLongOnes) {
    std::vector<treid::TrackletSegment> segs;
    for (std::size_t len : {1u, 4u, 5u, 9u}) segs.push_back({0, 0, 0, std::vector<std::int64_t>(len, 0)});
    const auto kept = treid::filter_segments(segs, 5);
    ASSERT_EQ(kept.size(), 2u);
    EXPECT_EQ(kept[0].length(), 5u);
    EXPECT_EQ(kept[1].length(), 9u);
    EXPECT_EQ(treid::filter_segments(segs, 1).size(), 4u);
    EXPECT_THROW(treid::filter_segments(segs, 0), treid::InvalidInput);
}

TEST(Segments, StatsHistogramAndPurity) {
    std::vector<treid::TrackletSegment> segs{{0, 0, 0, {0}}, {1, 0, 0, {1, 2}}, {2, 1, 0, {3, 4, 5}}};
    const std::map<std::int64_t, int> gt{{0, 7}, {1, 7}, {2, 7}, {3, 1}, {4, 2}, {5, 1}};
    const auto st = treid::segment_stats(segs, [&](std::int64_t id) { return gt.at(id); });
    EXPECT_EQ(st.segment_count, 3u);
    EXPECT_EQ(st.detection_count, 6u);
    EXPECT_EQ(st.length_histogram, (std::map<std::size_t, std::size_t>{{1, 1}, {2, 1}, {3, 1}}));
    EXPECT_EQ(st.per_camera, (std::map<int, std::size_t>{{0, 2}, {1, 1}}));
    EXPECT_NEAR(st.purity, 2.0 / 3.0, 1e-15);
    const std::vector<treid::TrackletSegment> singles{{0, 0, 0, {0}}, {1, 0, 0, {3}}};
    EXPECT_EQ(treid::segment_stats(singles, [&](std::int64_t id) { return gt.at(id); }).purity, 1.0);
}

TEST(Segments, NoiselessStreamIsPure) {
    treid::StreamConfig cfg;
    cfg.duration_frames = 300;
    cfg.noise_sigma = 0;
    cfg.pose_sigma = 0;
    cfg.exposure_sigma = 0;
    cfg.crossing_prob = 0;
    cfg.dropout_prob = 0;
    cfg.entry_rate = 0.2;
    const auto world = treid::generate_world(cfg, 50, 2, 3);
    const auto stream = treid::simulate_stream(world);
    const auto dets = treid::strip_labels(stream);
    std::map<std::int64_t, int> gt;
    for (const auto& fb : stream)
        for (const auto& d : fb.detections) gt[d.det.det_id] = d.gt_id;
    // Raw observations as embeddings: the same walker sits at cosine 1.
    auto obs = treid::observation_matrix<double>(dets);
    treid::normalize_rows(obs);
    auto gt_of = [&](std::int64_t id) { return gt.at(id); };
    const auto floored = treid::assemble_segments(std::span<const treid::Detection>(dets), obs,
                                                  treid::mnn_matcher<double>(1.0 - 1e-9));
    EXPECT_EQ(treid::segment_stats(floored, gt_of).purity, 1.0);
    // Without a floor, a walker leaving and another arriving one frame later
    // are each other's only candidates and get chained.
    const auto plain = treid::assemble_segments(std::span<const treid::Detection>(dets), obs);
    EXPECT_LT(treid::segment_stats(plain, gt_of).purity, 1.0);
    EXPECT_LT(plain.size(), floored.size());
}

TEST(Segments, CrossingsMakeImpureSegments) {
    int impure_runs = 0;
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        treid::StreamConfig cfg;
        cfg.duration_frames = 400;
        cfg.noise_sigma = 0.01;
        cfg.pose_sigma = 0;
        cfg.exposure_sigma = 0;
        cfg.crossing_prob = 0.2;
        cfg.entry_rate = 0.3;
        const auto world = treid::generate_world(cfg, 50, 2, seed);
        const auto stream = treid::simulate_stream(world);
        const auto dets = treid::strip_labels(stream);
        std::map<std::int64_t, int> gt;
        for (const auto& fb : stream)
            for (const auto& d : fb.detections) gt[d.det.det_id] = d.gt_id;
        auto obs = treid::observation_matrix<double>(dets);
        treid::normalize_rows(obs);
        const auto segs = treid::assemble_segments(std::span<const treid::Detection>(dets), obs);
        if (treid::segment_stats(segs, [&](std::int64_t id) { return gt.at(id); }).purity < 1.0) ++impure_runs;
    }
    EXPECT_EQ(impure_runs, 5);
}
