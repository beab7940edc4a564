#ifndef TREID_PIPELINE_HPP
#define TREID_PIPELINE_HPP

// In-memory orchestration of the full method: simulate -> instance
// discrimination -> tracklet segments -> segment discrimination -> camera
// components reduction -> evaluation, plus the ablation grids.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "treid/ccr.hpp"
#include "treid/contrastive.hpp"
#include "treid/encoder.hpp"
#include "treid/eval.hpp"
#include "treid/synth.hpp"
#include "treid/tracklet.hpp"

namespace treid {

struct PipelineConfig {
    int schema_version = 1;
    StreamConfig stream;
    int n_ids = 200;
    int n_cams = 6;
    SplitConfig split;
    EncoderDims dims{64, 256, 128};
    ContrastiveConfig contrastive;
    std::size_t min_len = 5;
    std::optional<double> match_floor;
    std::size_t ccr_k = 0;  // 0 selects m (camera count)
    bool ccr_center = true;
    CcrFitConfig ccr_fit;
    EvalProtocol eval;
    double data_fraction = 1.0;
    std::uint64_t seed = 1;
    std::size_t workers = 1;
    std::string precision = "f32";  // f32 | f64, used by the command-line driver

    void validate() const {
        require(schema_version == 1, "unsupported config schema_version");
        stream.validate();
        contrastive.validate();
        require(n_ids >= 2 && n_cams >= 2, "need at least two identities and two cameras");
        require(dims.size() >= 2 && dims.front() == static_cast<std::size_t>(stream.d_obs),
                "encoder input width must equal d_obs");
        for (auto d : dims) require(d >= 1, "zero-width encoder layer");
        require(static_cast<std::size_t>(n_cams) <= dims.back(), "embedding dim must be >= camera count");
        require(min_len >= 1, "min_len must be >= 1");
        require(ccr_k <= static_cast<std::size_t>(n_cams), "ccr_k must be <= camera count");
        require(data_fraction > 0 && data_fraction <= 1, "data_fraction must lie in (0, 1]");
        require(workers >= 1, "workers must be >= 1");
        require(precision == "f32" || precision == "f64", "precision must be f32 or f64");
    }
};

/// Batch size and bank capacity for a stage with `n` samples: the configured
/// batch size, halved until it fits, with the bank trimmed to a multiple.
inline ContrastiveConfig fit_batch_to_data(ContrastiveConfig cfg, std::size_t n) {
    if (n == 0) throw InvalidInput("no training samples");
    while (cfg.batch_size > 1 && cfg.batch_size > n) cfg.batch_size /= 2;
    cfg.bank_capacity = std::max(cfg.batch_size, cfg.bank_capacity - cfg.bank_capacity % cfg.batch_size);
    return cfg;
}

struct PreparedData {
    SyntheticWorld world;
    Stream stream;
    EvalSplit split;
    std::vector<Detection> train;  // after data_fraction slicing
    Matrix<double> observations;   // row per train detection
};

inline PreparedData prepare_data(const PipelineConfig& cfg) {
    cfg.validate();
    PreparedData d;
    d.world = generate_world(cfg.stream, cfg.n_ids, cfg.n_cams, cfg.seed);
    d.stream = simulate_stream(d.world, cfg.workers);
    SplitConfig sc = cfg.split;
    sc.seed = cfg.seed;
    d.split = split_eval(d.world, d.stream, sc);
    const int cutoff = static_cast<int>(std::ceil(cfg.data_fraction * cfg.stream.duration_frames));
    for (const auto& det : d.split.train)
        if (det.frame < cutoff) d.train.push_back(det);
    d.observations = observation_matrix<double>(d.train);
    return d;
}

using EpochLog = std::function<void(const std::string& stage, const TrainStats&)>;

template <class T>
EncoderPair<T> train_cid(const PipelineConfig& cfg, const Matrix<double>& observations, EncoderPair<T> init,
                         const EpochLog& log = {}) {
    const auto cc = fit_batch_to_data(cfg.contrastive, observations.rows());
    TrainState<T> st(std::move(init), cc);
    Rng rng = make_rng(cfg.seed, {kCidStream});
    for (int e = 0; e < cc.epochs_cid; ++e) {
        auto s = cid_epoch(st, observations, cc, rng, e);
        if (log) log("cid", s);
    }
    return std::move(st.pair);
}

/// Segment discrimination starting from `init`'s query weights; the key
/// encoder restarts as a copy and the bank starts empty.
template <class T>
EncoderPair<T> train_tsd(const PipelineConfig& cfg, const std::vector<TrackletSegment>& segments,
                         const Matrix<double>& observations, const RowIndex& rows, const EncoderPair<T>& init,
                         const EpochLog& log = {}) {
    std::size_t total = 0;
    for (const auto& s : segments) total += s.length();
    const auto cc = fit_batch_to_data(cfg.contrastive, total);
    EncoderPair<T> pair;
    pair.query = init.query;
    pair.key = init.query;
    TrainState<T> st(std::move(pair), cc);
    Rng rng = make_rng(cfg.seed, {kTsdStream});
    for (int e = 0; e < cc.epochs_tsd; ++e) {
        auto s = tsd_epoch(st, segments, observations, rows, cc, rng, e);
        if (log) log("tsd", s);
    }
    return std::move(st.pair);
}

template <class T>
std::vector<TrackletSegment> build_segments(const PipelineConfig& cfg, std::span<const Detection> train,
                                            const EncoderParams<T>& encoder) {
    std::optional<T> floor;
    if (cfg.match_floor) floor = static_cast<T>(*cfg.match_floor);
    return assemble_segments(train, encoder, mnn_matcher<T>(floor), cfg.workers);
}

template <class T>
CcrProjector<T> fit_ccr(const PipelineConfig& cfg, std::span<const Detection> train, const Matrix<double>& observations,
                        const EncoderParams<T>& encoder, CameraClassifier<T>* classifier_out = nullptr) {
    const auto emb = embed(encoder, Matrix<T>(observations.rows(), observations.cols(),
                                              std::vector<T>(observations.storage().begin(), observations.storage().end())));
    std::vector<int> labels;
    labels.reserve(train.size());
    for (const auto& d : train) labels.push_back(d.camera_id);
    CcrFitConfig fc = cfg.ccr_fit;
    fc.seed = cfg.seed;
    auto clf = fit_camera_classifier(emb, labels, static_cast<std::size_t>(cfg.n_cams), fc);
    const std::size_t k = cfg.ccr_k ? cfg.ccr_k : static_cast<std::size_t>(cfg.n_cams);
    auto proj = build_projector(clf, k, cfg.ccr_center);
    if (classifier_out) *classifier_out = std::move(clf);
    return proj;
}

/// Which arms of the step ablation to run.
struct StepArms {
    bool cid = true;
    bool tsd_only = true;
    bool cid_tsd = true;
    bool cid_tsd_ccr = true;
};

struct SegmentSummary {
    std::size_t all_segments = 0;
    std::size_t kept_segments = 0;
    std::size_t kept_detections = 0;
    double purity_all = 1;
    double purity_kept = 1;
};

struct ExperimentResult {
    std::vector<std::pair<std::string, EvalReport>> reports;
    SegmentSummary segments;
    double seconds = 0;

    const EvalReport& at(const std::string& name) const {
        for (const auto& [n, r] : reports)
            if (n == name) return r;
        throw InvalidInput("no report named " + name);
    }
};

inline std::function<int(std::int64_t)> gt_lookup(const Stream& stream) {
    auto map = std::make_shared<std::unordered_map<std::int64_t, int>>();
    for (const auto& fb : stream)
        for (const auto& d : fb.detections) (*map)[d.det.det_id] = d.gt_id;
    return [map](std::int64_t id) { return map->at(id); };
}

/// Runs the requested arms of the step ablation on one prepared dataset.
template <class T>
ExperimentResult run_steps(const PipelineConfig& cfg, const PreparedData& data, StepArms arms = {},
                           const EpochLog& log = {}) {
    const auto t0 = std::chrono::steady_clock::now();
    ExperimentResult res;
    const RowIndex rows(data.train);
    const auto init = init_encoder<T>(cfg.dims, cfg.seed, static_cast<T>(cfg.contrastive.momentum));
    auto report = [&](const std::string& name, const EncoderParams<T>& enc, const CcrProjector<T>* p) {
        res.reports.emplace_back(name, evaluate(enc, p, data.split.query, data.split.gallery, cfg.eval, cfg.workers));
    };
    const auto gt = gt_lookup(data.stream);

    if (arms.tsd_only) {
        auto segs = filter_segments(build_segments(cfg, data.train, init.query), cfg.min_len);
        auto tsd = train_tsd(cfg, segs, data.observations, rows, init, log);
        report("TSD", tsd.query, nullptr);
    }
    if (arms.cid || arms.cid_tsd || arms.cid_tsd_ccr) {
        auto cid = train_cid(cfg, data.observations, init, log);
        if (arms.cid) report("CID", cid.query, nullptr);
        if (arms.cid_tsd || arms.cid_tsd_ccr) {
            auto all = build_segments(cfg, data.train, cid.query);
            auto segs = filter_segments(all, cfg.min_len);
            res.segments.all_segments = all.size();
            res.segments.kept_segments = segs.size();
            for (const auto& s : segs) res.segments.kept_detections += s.length();
            res.segments.purity_all = segment_stats(all, gt).purity;
            res.segments.purity_kept = segment_stats(segs, gt).purity;
            auto tsd = train_tsd(cfg, segs, data.observations, rows, cid, log);
            if (arms.cid_tsd) report("CID+TSD", tsd.query, nullptr);
            if (arms.cid_tsd_ccr) {
                auto proj = fit_ccr(cfg, data.train, data.observations, tsd.query);
                report("CID+TSD+CCR", tsd.query, &proj);
            }
        }
    }
    res.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return res;
}

/// One grid point of an ablation.
struct AblationRow {
    std::string label;
    double x = 0;  // numeric axis value (steps axis: row index)
    EvalReport report;
    std::optional<double> purity;  // kept-segment purity, where segments exist
    double seconds = 0;
};

inline const std::vector<std::string>& ablation_axes() {
    static const std::vector<std::string> axes{"steps", "min_len", "data_fraction", "model_size"};
    return axes;
}

/// Tracklet-length sweep. CID and tracklet generation are shared; only the
/// length filter and the TSD/CCR stages are rerun per threshold. Reports the
/// full method.
template <class T>
std::vector<AblationRow> sweep_min_len(const PipelineConfig& base, const PreparedData& data,
                                       const std::vector<std::size_t>& lens) {
    std::vector<AblationRow> rows;
    const RowIndex index(data.train);
    const auto gt = gt_lookup(data.stream);
    auto t0 = std::chrono::steady_clock::now();
    const auto init = init_encoder<T>(base.dims, base.seed, static_cast<T>(base.contrastive.momentum));
    const auto cid = train_cid(base, data.observations, init);
    const auto all = build_segments(base, data.train, cid.query);
    const double shared = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    for (auto len : lens) {
        t0 = std::chrono::steady_clock::now();
        PipelineConfig cfg = base;
        cfg.min_len = len;
        cfg.validate();
        const auto segs = filter_segments(all, len);
        auto tsd = train_tsd(cfg, segs, data.observations, index, cid);
        const auto proj = fit_ccr(cfg, data.train, data.observations, tsd.query);
        AblationRow row;
        row.label = "min_len=" + std::to_string(len);
        row.x = static_cast<double>(len);
        row.report = evaluate(tsd.query, &proj, data.split.query, data.split.gallery, cfg.eval, cfg.workers);
        row.purity = segment_stats(segs, gt).purity;
        row.seconds = shared + std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        rows.push_back(std::move(row));
    }
    return rows;
}

/// Full method on one configuration.
template <class T>
AblationRow full_method_row(const PipelineConfig& cfg, const PreparedData& data, std::string label, double x) {
    StepArms arms;
    arms.cid = arms.tsd_only = arms.cid_tsd = false;
    const auto res = run_steps<T>(cfg, data, arms);
    return {std::move(label), x, res.at("CID+TSD+CCR"), res.segments.purity_kept, res.seconds};
}

inline std::string format_dims(const EncoderDims& d) {
    std::string s;
    for (std::size_t i = 0; i < d.size(); ++i) s += (i ? "-" : "") + std::to_string(d[i]);
    return s;
}

/// Runs one ablation axis from a base configuration with a shared seed.
template <class T>
std::vector<AblationRow> ablation_grid(const PipelineConfig& base, const std::string& axis) {
    base.validate();
    std::vector<AblationRow> rows;
    if (axis == "steps") {
        const auto data = prepare_data(base);
        const auto res = run_steps<T>(base, data);
        double x = 0;
        for (const auto& [name, rep] : res.reports) {
            AblationRow row{name, x++, rep, std::nullopt, res.seconds};
            if (name != "CID" && name != "TSD") row.purity = res.segments.purity_kept;
            rows.push_back(std::move(row));
        }
    } else if (axis == "min_len") {
        rows = sweep_min_len<T>(base, prepare_data(base), {1, 3, 5, 9});
    } else if (axis == "data_fraction") {
        for (double f : {0.01, 0.05, 0.1, 0.25, 0.5, 1.0}) {
            PipelineConfig cfg = base;
            cfg.data_fraction = f;
            char label[32];
            std::snprintf(label, sizeof label, "fraction=%g", f);
            rows.push_back(full_method_row<T>(cfg, prepare_data(cfg), label, f));
        }
    } else if (axis == "model_size") {
        const std::size_t in = static_cast<std::size_t>(base.stream.d_obs);
        const std::size_t out = base.dims.back();
        const PreparedData data = prepare_data(base);
        for (const EncoderDims& dims : std::vector<EncoderDims>{
                 {in, 64, out}, {in, 128, out}, {in, 256, out}, {in, 512, out}, {in, 512, 256, out}}) {
            PipelineConfig cfg = base;
            cfg.dims = dims;
            const auto params = init_encoder<T>(dims, cfg.seed).query.parameter_count();
            rows.push_back(full_method_row<T>(cfg, data, "dims=" + format_dims(dims), static_cast<double>(params)));
        }
    } else {
        throw InvalidInput("unknown ablation axis '" + axis + "' (expected steps, min_len, data_fraction or model_size)");
    }
    return rows;
}

}  // namespace treid

#endif  // TREID_PIPELINE_HPP
