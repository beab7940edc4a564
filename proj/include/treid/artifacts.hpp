#ifndef TREID_ARTIFACTS_HPP
#define TREID_ARTIFACTS_HPP

// Conversions between in-memory pipeline objects and their on-disk records.

#include <string>
#include <vector>

#include "treid/ccr.hpp"
#include "treid/contrastive.hpp"
#include "treid/encoder.hpp"
#include "treid/eval.hpp"
#include "treid/io.hpp"
#include "treid/tracklet.hpp"

namespace treid::io {

// ------------------------------------------------------------- encoders

template <class T>
void append_encoder(std::vector<Tensor>& out, const std::string& prefix, const EncoderParams<T>& p) {
    for (std::size_t i = 0; i < p.layers.size(); ++i) {
        out.push_back(make_tensor(prefix + ".layer" + std::to_string(i) + ".weight", p.layers[i].weight));
        out.push_back(make_tensor(prefix + ".layer" + std::to_string(i) + ".bias", p.layers[i].bias));
    }
}

/// Reads `prefix.layerN.{weight,bias}` for N = 0, 1, ... until absent.
template <class T>
EncoderParams<T> read_encoder(const std::vector<Tensor>& ts, const std::string& prefix) {
    EncoderParams<T> p;
    for (std::size_t i = 0;; ++i) {
        const std::string base = prefix + ".layer" + std::to_string(i);
        bool found = false;
        for (const auto& t : ts) found = found || t.name == base + ".weight";
        if (!found) break;
        Layer<T> l{to_matrix<T>(find_tensor(ts, base + ".weight")), to_vector<T>(find_tensor(ts, base + ".bias"))};
        if (l.bias.size() != l.weight.rows()) throw ManifestError("tensor " + base + ": bias does not match weight");
        if (!p.layers.empty() && p.layers.back().weight.rows() != l.weight.cols())
            throw ManifestError("tensor " + base + ": width does not chain with the previous layer");
        p.layers.push_back(std::move(l));
    }
    if (p.layers.empty()) throw ManifestError("no encoder '" + prefix + "' in checkpoint");
    return p;
}

template <class T>
std::vector<Tensor> checkpoint_tensors(const EncoderPair<T>& pair) {
    std::vector<Tensor> ts;
    append_encoder(ts, "query", pair.query);
    append_encoder(ts, "key", pair.key);
    return ts;
}

template <class T>
EncoderPair<T> pair_from_tensors(const std::vector<Tensor>& ts, T momentum) {
    EncoderPair<T> pair{read_encoder<T>(ts, "query"), read_encoder<T>(ts, "key"), momentum};
    if (pair.query.dims() != pair.key.dims()) throw ManifestError("query and key encoders differ in shape");
    return pair;
}

// ------------------------------------------------------------- projector

template <class T>
std::vector<Tensor> projector_tensors(const CcrProjector<T>& p, const CameraClassifier<T>& clf) {
    return {make_tensor("v", p.v),
            make_tensor("centering", p.centering),
            make_tensor("sigma", p.sigma),
            make_tensor("classifier", clf.w),
            make_tensor("shape", std::vector<std::int64_t>{static_cast<std::int64_t>(p.k),
                                                           static_cast<std::int64_t>(p.m),
                                                           static_cast<std::int64_t>(p.n)})};
}

template <class T>
CcrProjector<T> projector_from_tensors(const std::vector<Tensor>& ts) {
    CcrProjector<T> p;
    const auto shape = to_vector<std::int64_t>(find_tensor(ts, "shape"));
    if (shape.size() != 3) throw ManifestError("projector shape record must have 3 entries");
    p.k = static_cast<std::size_t>(shape[0]);
    p.m = static_cast<std::size_t>(shape[1]);
    p.n = static_cast<std::size_t>(shape[2]);
    const auto& vt = find_tensor(ts, "v");
    if (vt.shape.size() != 2 || vt.shape[0] != p.n)
        throw ManifestError("projector basis has the wrong shape");
    p.v = to_matrix<T>(vt);
    p.centering = to_vector<T>(find_tensor(ts, "centering"));
    p.sigma = to_vector<T>(find_tensor(ts, "sigma"));
    return p;
}

// ------------------------------------------------------------- records

inline json to_json(const Detection& d, const std::string& split) {
    return {{"det_id", d.det_id}, {"frame", d.frame}, {"camera_id", d.camera_id}, {"split", split}};
}

inline json to_json(const TrackletSegment& s) {
    return {{"segment_id", s.segment_id},
            {"camera_id", s.camera_id},
            {"first_frame", s.first_frame},
            {"detections", s.detections}};
}

inline TrackletSegment segment_from_json(const json& j) {
    try {
        return {j.at("segment_id").get<std::int64_t>(), j.at("camera_id").get<int>(), j.at("first_frame").get<int>(),
                j.at("detections").get<std::vector<std::int64_t>>()};
    } catch (const json::exception& e) {
        throw ManifestError(std::string("malformed segment record: ") + e.what());
    }
}

inline json to_json(const TrainStats& s, const std::string& stage) {
    return {{"stage", stage},         {"epoch", s.epoch}, {"loss", s.mean_loss},
            {"lr", s.lr},             {"steps", s.steps}, {"bank_occupancy", s.bank_occupancy},
            {"seconds", s.wall_seconds}};
}

inline json to_json(const EvalReport& r) {
    json cmc = json::object();
    for (const auto& [k, v] : r.cmc) cmc[std::to_string(k)] = v;
    return {{"cmc", cmc},
            {"mAP", r.mean_ap},
            {"average_precision", r.average_precision},
            {"queries", r.queries},
            {"skipped", r.skipped},
            {"fingerprint", r.fingerprint}};
}

inline EvalReport report_from_json(const json& j) {
    try {
        EvalReport r;
        for (const auto& [k, v] : j.at("cmc").items()) r.cmc[std::stoi(k)] = v.get<double>();
        r.mean_ap = j.at("mAP").get<double>();
        r.average_precision = j.at("average_precision").get<std::vector<double>>();
        r.queries = j.at("queries").get<std::size_t>();
        r.skipped = j.at("skipped").get<std::size_t>();
        r.fingerprint = j.value("fingerprint", "");
        return r;
    } catch (const std::exception& e) {
        throw ManifestError(std::string("malformed report: ") + e.what());
    }
}

inline json to_json(const SegmentStats& s) {
    json hist = json::object(), cams = json::object();
    for (const auto& [len, n] : s.length_histogram) hist[std::to_string(len)] = n;
    for (const auto& [c, n] : s.per_camera) cams[std::to_string(c)] = n;
    return {{"segments", s.segment_count}, {"detections", s.detection_count}, {"length_histogram", hist},
            {"per_camera", cams}};
}

}  // namespace treid::io

#endif  // TREID_ARTIFACTS_HPP
