#ifndef TREID_CONFIG_HPP
#define TREID_CONFIG_HPP

// PipelineConfig <-> JSON. Every field is optional in the file (defaults fill
// the gaps) but unknown keys are rejected so that typos do not silently fall
// back to defaults.

#include <set>
#include <string>

#include "treid/io.hpp"
#include "treid/pipeline.hpp"

namespace treid {

namespace config_detail {

using io::json;

inline void check_keys(const json& j, const std::set<std::string>& allowed, const std::string& where) {
    if (!j.is_object()) throw InvalidInput(where + " must be an object");
    for (const auto& [k, v] : j.items())
        if (!allowed.count(k)) throw InvalidInput("unknown config key " + where + "." + k);
}

template <class T>
void read(const json& j, const char* key, T& out, const std::string& where) {
    if (!j.contains(key)) return;
    try {
        out = j.at(key).get<T>();
    } catch (const json::exception& e) {
        throw InvalidInput("config " + where + "." + key + ": " + e.what());
    }
}

}  // namespace config_detail

inline io::json to_json(const PipelineConfig& c) {
    using io::json;
    const auto& s = c.stream;
    const auto& k = c.contrastive;
    json j;
    j["schema_version"] = c.schema_version;
    j["seed"] = c.seed;
    j["workers"] = c.workers;
    j["n_ids"] = c.n_ids;
    j["n_cams"] = c.n_cams;
    j["data_fraction"] = c.data_fraction;
    j["precision"] = c.precision;
    j["stream"] = {{"fps", s.fps},
                   {"duration_frames", s.duration_frames},
                   {"entry_rate", s.entry_rate},
                   {"dwell_mean", s.dwell_mean},
                   {"crossing_prob", s.crossing_prob},
                   {"dropout_prob", s.dropout_prob},
                   {"d_latent", s.d_latent},
                   {"d_obs", s.d_obs},
                   {"noise_sigma", s.noise_sigma},
                   {"noise_corr", s.noise_corr},
                   {"camera_bias_scale", s.camera_bias_scale},
                   {"camera_transform_scale", s.camera_transform_scale},
                   {"pose_dim", s.pose_dim},
                   {"pose_sigma", s.pose_sigma},
                   {"pose_corr", s.pose_corr},
                   {"occlusion_prob", s.occlusion_prob},
                   {"occlusion_frac", s.occlusion_frac},
                   {"exposure_sigma", s.exposure_sigma}};
    j["split"] = {{"query_frac", c.split.query_frac},
                  {"eval_id_frac", c.split.eval_id_frac},
                  {"max_per_camera", c.split.max_per_camera}};
    j["encoder"] = {{"dims", c.dims}};
    j["contrastive"] = {{"tau", k.tau},
                        {"batch_size", k.batch_size},
                        {"bank_capacity", k.bank_capacity},
                        {"momentum", k.momentum},
                        {"epochs_cid", k.epochs_cid},
                        {"epochs_tsd", k.epochs_tsd},
                        {"aug_strength", k.aug_strength},
                        {"lr", k.optim.base_lr},
                        {"sgd_momentum", k.optim.momentum},
                        {"weight_decay", k.optim.weight_decay}};
    j["tracklet"] = {{"min_len", c.min_len}, {"match_floor", c.match_floor ? json(*c.match_floor) : json(nullptr)}};
    j["ccr"] = {{"k", c.ccr_k},
                {"center", c.ccr_center},
                {"epochs", c.ccr_fit.epochs},
                {"lr", c.ccr_fit.lr},
                {"batch_size", c.ccr_fit.batch_size},
                {"holdout_frac", c.ccr_fit.holdout_frac}};
    j["eval"] = {{"cross_camera_filter", c.eval.cross_camera_filter},
                 {"renormalize_after_ccr", c.eval.renormalize_after_ccr},
                 {"ranks", c.eval.ranks}};
    return j;
}

inline PipelineConfig config_from_json(const io::json& j) {
    using namespace config_detail;
    PipelineConfig c;
    check_keys(j, {"schema_version", "seed", "workers", "n_ids", "n_cams", "data_fraction", "precision", "stream", "split", "encoder",
                   "contrastive", "tracklet", "ccr", "eval"},
               "<root>");
    read(j, "schema_version", c.schema_version, "");
    if (c.schema_version != 1)
        throw InvalidInput("unsupported config schema_version " + std::to_string(c.schema_version));
    read(j, "seed", c.seed, "");
    read(j, "workers", c.workers, "");
    read(j, "n_ids", c.n_ids, "");
    read(j, "n_cams", c.n_cams, "");
    read(j, "data_fraction", c.data_fraction, "");
    read(j, "precision", c.precision, "");
    if (j.contains("stream")) {
        const auto& s = j["stream"];
        auto& o = c.stream;
        check_keys(s, {"fps", "duration_frames", "entry_rate", "dwell_mean", "crossing_prob", "dropout_prob", "d_latent",
                       "d_obs", "noise_sigma", "noise_corr", "camera_bias_scale", "camera_transform_scale", "pose_dim",
                       "pose_sigma", "pose_corr", "occlusion_prob", "occlusion_frac", "exposure_sigma"},
                   "stream");
        read(s, "fps", o.fps, "stream");
        read(s, "duration_frames", o.duration_frames, "stream");
        read(s, "entry_rate", o.entry_rate, "stream");
        read(s, "dwell_mean", o.dwell_mean, "stream");
        read(s, "crossing_prob", o.crossing_prob, "stream");
        read(s, "dropout_prob", o.dropout_prob, "stream");
        read(s, "d_latent", o.d_latent, "stream");
        read(s, "d_obs", o.d_obs, "stream");
        read(s, "noise_sigma", o.noise_sigma, "stream");
        read(s, "noise_corr", o.noise_corr, "stream");
        read(s, "camera_bias_scale", o.camera_bias_scale, "stream");
        read(s, "camera_transform_scale", o.camera_transform_scale, "stream");
        read(s, "pose_dim", o.pose_dim, "stream");
        read(s, "pose_sigma", o.pose_sigma, "stream");
        read(s, "pose_corr", o.pose_corr, "stream");
        read(s, "occlusion_prob", o.occlusion_prob, "stream");
        read(s, "occlusion_frac", o.occlusion_frac, "stream");
        read(s, "exposure_sigma", o.exposure_sigma, "stream");
    }
    if (j.contains("split")) {
        const auto& s = j["split"];
        check_keys(s, {"query_frac", "eval_id_frac", "max_per_camera"}, "split");
        read(s, "query_frac", c.split.query_frac, "split");
        read(s, "eval_id_frac", c.split.eval_id_frac, "split");
        read(s, "max_per_camera", c.split.max_per_camera, "split");
    }
    if (j.contains("encoder")) {
        check_keys(j["encoder"], {"dims"}, "encoder");
        read(j["encoder"], "dims", c.dims, "encoder");
    }
    if (j.contains("contrastive")) {
        const auto& s = j["contrastive"];
        auto& o = c.contrastive;
        check_keys(s, {"tau", "batch_size", "bank_capacity", "momentum", "epochs_cid", "epochs_tsd", "aug_strength", "lr",
                       "sgd_momentum", "weight_decay"},
                   "contrastive");
        read(s, "tau", o.tau, "contrastive");
        read(s, "batch_size", o.batch_size, "contrastive");
        read(s, "bank_capacity", o.bank_capacity, "contrastive");
        read(s, "momentum", o.momentum, "contrastive");
        read(s, "epochs_cid", o.epochs_cid, "contrastive");
        read(s, "epochs_tsd", o.epochs_tsd, "contrastive");
        read(s, "aug_strength", o.aug_strength, "contrastive");
        read(s, "lr", o.optim.base_lr, "contrastive");
        read(s, "sgd_momentum", o.optim.momentum, "contrastive");
        read(s, "weight_decay", o.optim.weight_decay, "contrastive");
    }
    if (j.contains("tracklet")) {
        const auto& s = j["tracklet"];
        check_keys(s, {"min_len", "match_floor"}, "tracklet");
        read(s, "min_len", c.min_len, "tracklet");
        if (s.contains("match_floor") && !s["match_floor"].is_null()) {
            double f = 0;
            read(s, "match_floor", f, "tracklet");
            c.match_floor = f;
        }
    }
    if (j.contains("ccr")) {
        const auto& s = j["ccr"];
        check_keys(s, {"k", "center", "epochs", "lr", "batch_size", "holdout_frac"}, "ccr");
        read(s, "k", c.ccr_k, "ccr");
        read(s, "center", c.ccr_center, "ccr");
        read(s, "epochs", c.ccr_fit.epochs, "ccr");
        read(s, "lr", c.ccr_fit.lr, "ccr");
        read(s, "batch_size", c.ccr_fit.batch_size, "ccr");
        read(s, "holdout_frac", c.ccr_fit.holdout_frac, "ccr");
    }
    if (j.contains("eval")) {
        const auto& s = j["eval"];
        check_keys(s, {"cross_camera_filter", "renormalize_after_ccr", "ranks"}, "eval");
        read(s, "cross_camera_filter", c.eval.cross_camera_filter, "eval");
        read(s, "renormalize_after_ccr", c.eval.renormalize_after_ccr, "eval");
        read(s, "ranks", c.eval.ranks, "eval");
    }
    c.validate();
    return c;
}

/// SHA-256 of the canonical JSON form, ignoring the worker count (results do
/// not depend on it).
inline std::string config_fingerprint(const PipelineConfig& c) {
    auto j = to_json(c);
    j.erase("workers");
    return io::sha256_hex(j.dump());
}

}  // namespace treid

#endif  // TREID_CONFIG_HPP
