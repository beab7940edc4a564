#ifndef TREID_SYNTH_HPP
#define TREID_SYNTH_HPP

// Seeded multi-camera observation stream with hidden identities.
//
// Each camera sees walkers arrive (Poisson per frame), stay for a geometric
// dwell and leave. A detection's observation is
//     camera.transform * appearance(identity) + camera.bias + pose + noise
// where pose = pose_basis * z lives in a shared low-dimensional subspace and z
// drifts per walker as an AR(1) process (slowly varying body pose and
// background). noise is per-walker AR(1) as well; noise_corr = 0 gives i.i.d.
// noise. A partially occluded detection has a random subset of its
// coordinates zeroed. A crossing swaps the appearance-generating identity of two
// concurrent walkers for one frame; the detection keeps its walker's gt_id,
// which is what makes MNN chains through a crossing impure.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "treid/error.hpp"
#include "treid/linalg.hpp"
#include "treid/parallel.hpp"
#include "treid/rng.hpp"

namespace treid {

struct StreamConfig {
    double fps = 2.0;
    int duration_frames = 2000;
    double entry_rate = 0.15;
    double dwell_mean = 12.0;
    double crossing_prob = 0.02;
    double dropout_prob = 0.03;
    int d_latent = 32;
    int d_obs = 64;
    double noise_sigma = 0.1;
    double noise_corr = 0.0;
    double camera_bias_scale = 0.5;
    double camera_transform_scale = 0.2;
    int pose_dim = 8;
    double pose_sigma = 0.7;
    double pose_corr = 0.9;
    double occlusion_prob = 0.0;
    double occlusion_frac = 0.3;
    double exposure_sigma = 1.0;  // per-detection offset shared by every channel

    void validate() const {
        require(fps > 0, "fps must be positive");
        require(duration_frames >= 1, "duration_frames must be >= 1");
        require(entry_rate >= 0, "entry_rate must be >= 0");
        require(dwell_mean >= 1, "dwell_mean must be >= 1");
        for (double p : {crossing_prob, dropout_prob, noise_corr, pose_corr, occlusion_prob, occlusion_frac})
            require(p >= 0 && p <= 1, "probabilities must lie in [0, 1]");
        require(d_latent >= 1 && d_obs >= d_latent, "need 1 <= d_latent <= d_obs");
        require(pose_dim >= 0 && pose_dim <= d_obs, "pose_dim must lie in [0, d_obs]");
        require(noise_sigma >= 0 && pose_sigma >= 0 && exposure_sigma >= 0 && camera_bias_scale >= 0 && camera_transform_scale >= 0,
                "scales must be non-negative");
    }
};

struct IdentityLatent {
    int id = 0;
    std::vector<double> appearance;
};

struct CameraModel {
    int camera_id = 0;
    Matrix<double> transform;  // d_obs x d_latent
    std::vector<double> bias;  // d_obs
    double noise_sigma = 0;
};

struct SyntheticWorld {
    std::vector<IdentityLatent> identities;
    std::vector<CameraModel> cameras;
    Matrix<double> pose_basis;  // d_obs x pose_dim, orthonormal columns
    StreamConfig config;
    std::uint64_t seed = 0;
};

/// What the training-side modules see. No identity field exists on this type.
struct Detection {
    std::int64_t det_id = 0;
    int frame = 0;
    int camera_id = 0;
    std::vector<double> observation;
};

/// A detection plus its hidden identity; only the simulator and evaluation
/// code handle this type.
struct LabeledDetection {
    Detection det;
    int gt_id = -1;
};

struct FrameBatch {
    int camera_id = 0;
    int frame = 0;
    std::vector<LabeledDetection> detections;
};

using Stream = std::vector<FrameBatch>;

inline SyntheticWorld generate_world(const StreamConfig& config, int n_ids, int n_cams, std::uint64_t seed) {
    if (n_ids < 2) throw InvalidInput("generate_world: need at least 2 identities");
    if (n_cams < 2) throw InvalidInput("generate_world: need at least 2 cameras");
    config.validate();

    SyntheticWorld world;
    world.config = config;
    world.seed = seed;
    const auto dl = static_cast<std::size_t>(config.d_latent);
    const auto dobs = static_cast<std::size_t>(config.d_obs);

    Rng id_rng = make_rng(seed, {kIdentityStream});
    std::normal_distribution<double> gauss(0.0, 1.0);
    world.identities.reserve(static_cast<std::size_t>(n_ids));
    for (int i = 0; i < n_ids; ++i) {
        std::vector<double> a(dl);
        for (auto& x : a) x = gauss(id_rng);
        world.identities.push_back({i, l2_normalize(a)});
    }

    world.cameras.reserve(static_cast<std::size_t>(n_cams));
    for (int c = 0; c < n_cams; ++c) {
        Rng rng = make_rng(seed, {kCameraStream, static_cast<std::uint64_t>(c)});
        CameraModel cam;
        cam.camera_id = c;
        cam.noise_sigma = config.noise_sigma;
        cam.transform = Matrix<double>(dobs, dl);
        const double pert = config.camera_transform_scale / std::sqrt(static_cast<double>(dl));
        for (std::size_t r = 0; r < dobs; ++r)
            for (std::size_t k = 0; k < dl; ++k)
                cam.transform(r, k) = (r == k ? 1.0 : 0.0) + pert * gauss(rng);
        std::vector<double> b(dobs);
        for (auto& x : b) x = gauss(rng);
        b = l2_normalize(b);
        for (auto& x : b) x *= config.camera_bias_scale;
        cam.bias = std::move(b);
        world.cameras.push_back(std::move(cam));
    }

    // Orthonormal pose basis via Gram-Schmidt on Gaussian columns.
    const auto dp = static_cast<std::size_t>(config.pose_dim);
    Rng pose_rng = make_rng(seed, {kPoseStream});
    world.pose_basis = Matrix<double>(dobs, dp);
    for (std::size_t j = 0; j < dp; ++j) {
        std::vector<double> v(dobs);
        for (auto& x : v) x = gauss(pose_rng);
        for (std::size_t i = 0; i < j; ++i) {
            double c = 0;
            for (std::size_t r = 0; r < dobs; ++r) c += v[r] * world.pose_basis(r, i);
            for (std::size_t r = 0; r < dobs; ++r) v[r] -= c * world.pose_basis(r, i);
        }
        v = l2_normalize(v);
        for (std::size_t r = 0; r < dobs; ++r) world.pose_basis(r, j) = v[r];
    }
    return world;
}

namespace detail {

struct Walker {
    int identity;
    int remaining;
    std::vector<double> noise;
    std::vector<double> pose;
};

inline std::vector<double> render(const CameraModel& cam, const Matrix<double>& pose_basis,
                                  const std::vector<double>& appearance, const Walker& w) {
    std::vector<double> obs(cam.bias);
    const std::size_t dl = appearance.size();
    for (std::size_t r = 0; r < obs.size(); ++r) {
        double acc = 0;
        for (std::size_t k = 0; k < dl; ++k) acc += cam.transform(r, k) * appearance[k];
        for (std::size_t k = 0; k < w.pose.size(); ++k) acc += pose_basis(r, k) * w.pose[k];
        obs[r] += acc + w.noise[r];
    }
    return obs;
}

// Frames with at least one detection for one camera, det_id left unset.
inline std::vector<FrameBatch> simulate_camera(const SyntheticWorld& world, const CameraModel& cam) {
    const auto& cfg = world.config;
    Rng rng = make_rng(world.seed, {kWalkStream, static_cast<std::uint64_t>(cam.camera_id)});
    std::poisson_distribution<int> arrivals(cfg.entry_rate);
    std::geometric_distribution<int> extra_dwell(1.0 / cfg.dwell_mean);
    std::uniform_int_distribution<int> pick_id(0, static_cast<int>(world.identities.size()) - 1);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    std::normal_distribution<double> gauss(0.0, 1.0);
    const double sigma = cam.noise_sigma;
    const double rho = cfg.noise_corr;
    const double innov = std::sqrt(std::max(0.0, 1.0 - rho * rho));
    const double pose_innov = std::sqrt(std::max(0.0, 1.0 - cfg.pose_corr * cfg.pose_corr));
    const auto dobs = static_cast<std::size_t>(cfg.d_obs);
    const auto dp = static_cast<std::size_t>(cfg.pose_dim);

    std::vector<Walker> active;
    std::vector<FrameBatch> frames;
    for (int f = 0; f < cfg.duration_frames; ++f) {
        const int n_new = cfg.entry_rate > 0 ? arrivals(rng) : 0;
        for (int i = 0; i < n_new; ++i) {
            Walker w{pick_id(rng), 1 + extra_dwell(rng), std::vector<double>(dobs), std::vector<double>(dp)};
            for (auto& x : w.noise) x = sigma * gauss(rng);
            for (auto& x : w.pose) x = cfg.pose_sigma * gauss(rng);
            active.push_back(std::move(w));
        }

        std::vector<int> generating(active.size());
        for (std::size_t i = 0; i < active.size(); ++i) generating[i] = active[i].identity;
        std::vector<bool> swapped(active.size(), false);
        for (std::size_t i = 0; i < active.size(); ++i)
            for (std::size_t j = i + 1; j < active.size(); ++j) {
                const bool cross = unif(rng) < cfg.crossing_prob;
                if (cross && !swapped[i] && !swapped[j]) {
                    std::swap(generating[i], generating[j]);
                    swapped[i] = swapped[j] = true;
                }
            }

        FrameBatch batch{cam.camera_id, f, {}};
        for (std::size_t i = 0; i < active.size(); ++i) {
            const bool dropped = unif(rng) < cfg.dropout_prob;
            if (!dropped) {
                LabeledDetection d;
                d.det.frame = f;
                d.det.camera_id = cam.camera_id;
                d.det.observation = render(cam, world.pose_basis,
                                           world.identities[static_cast<std::size_t>(generating[i])].appearance,
                                           active[i]);
                if (unif(rng) < cfg.occlusion_prob)
                    for (auto& v : d.det.observation)
                        if (unif(rng) < cfg.occlusion_frac) v = 0.0;
                if (cfg.exposure_sigma > 0) {
                    const double shift = cfg.exposure_sigma * gauss(rng);
                    for (auto& v : d.det.observation) v += shift;
                }
                d.gt_id = active[i].identity;
                batch.detections.push_back(std::move(d));
            }
        }
        if (!batch.detections.empty()) frames.push_back(std::move(batch));

        // Advance: age walkers, evolve noise, drop expired ones.
        std::vector<Walker> next;
        next.reserve(active.size());
        for (auto& w : active) {
            if (--w.remaining <= 0) continue;
            for (auto& x : w.noise) x = rho * x + innov * sigma * gauss(rng);
            for (auto& x : w.pose) x = cfg.pose_corr * x + pose_innov * cfg.pose_sigma * gauss(rng);
            next.push_back(std::move(w));
        }
        active = std::move(next);
    }
    return frames;
}

}  // namespace detail

/// Frame batches ordered by (camera_id, frame); only frames holding at least
/// one detection are listed. det_ids are assigned in that order from 0.
inline Stream simulate_stream(const SyntheticWorld& world, std::size_t workers = 1) {
    require(world.identities.size() >= 2 && world.cameras.size() >= 2, "simulate_stream: invalid world");
    world.config.validate();
    std::vector<std::vector<FrameBatch>> per_cam(world.cameras.size());
    parallel_for(world.cameras.size(), workers,
                 [&](std::size_t c) { per_cam[c] = detail::simulate_camera(world, world.cameras[c]); });
    Stream out;
    std::int64_t next_id = 0;
    for (auto& frames : per_cam)
        for (auto& fb : frames) {
            for (auto& d : fb.detections) d.det.det_id = next_id++;
            out.push_back(std::move(fb));
        }
    return out;
}

inline std::size_t detection_count(const Stream& stream) {
    std::size_t n = 0;
    for (const auto& fb : stream) n += fb.detections.size();
    return n;
}

/// Keeps the frames with index < cutoff_frame (contiguous-time slicing).
inline Stream slice_stream(const Stream& stream, int cutoff_frame) {
    Stream out;
    for (const auto& fb : stream)
        if (fb.frame < cutoff_frame) out.push_back(fb);
    return out;
}

/// Vector analog of crop/flip/colour-jitter augmentation: random gain,
/// random coordinate dropout and additive Gaussian jitter, all scaled by
/// `strength`. strength == 0 returns x unchanged.
inline std::vector<double> augment_observation(std::span<const double> x, Rng& rng, double strength) {
    require(strength >= 0, "augment_observation: strength must be >= 0");
    std::vector<double> out(x.begin(), x.end());
    if (strength == 0) return out;
    std::normal_distribution<double> gauss(0.0, 1.0);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    const double gain = std::exp(0.25 * strength * gauss(rng));
    const double p_drop = std::min(0.5, 0.1 * strength);
    const double shift = 0.5 * strength * gauss(rng);
    for (auto& v : out) {
        const bool drop = unif(rng) < p_drop;
        v = (drop ? 0.0 : gain * v) + shift + strength * 0.1 * gauss(rng);
    }
    return out;
}

struct SplitConfig {
    double query_frac = 0.2;
    double eval_id_frac = 0.3;
    int max_per_camera = 6;
    std::uint64_t seed = 0;
};

struct EvalSplit {
    std::vector<LabeledDetection> query;
    std::vector<LabeledDetection> gallery;
    std::vector<Detection> train;  // gt stripped, eval identities removed
    std::vector<int> eval_ids;
    std::vector<std::string> warnings;
};

/// Holds out a fraction of identities for evaluation. Their detections are
/// thinned to at most max_per_camera per (identity, camera) and split into
/// query / gallery so that every query identity keeps gallery detections in
/// at least two cameras. Everything else becomes the gt-free training set.
inline EvalSplit split_eval(const SyntheticWorld& world, const Stream& stream, const SplitConfig& cfg) {
    if (!(cfg.query_frac > 0 && cfg.query_frac < 1)) throw InvalidInput("split_eval: query_frac must lie in (0, 1)");
    if (!(cfg.eval_id_frac > 0 && cfg.eval_id_frac < 1))
        throw InvalidInput("split_eval: eval_id_frac must lie in (0, 1)");
    require(cfg.max_per_camera >= 1, "split_eval: max_per_camera must be >= 1");

    Rng rng = make_rng(cfg.seed ^ world.seed, {kSplitStream});
    const int n_ids = static_cast<int>(world.identities.size());
    std::vector<int> ids(static_cast<std::size_t>(n_ids));
    std::iota(ids.begin(), ids.end(), 0);
    std::shuffle(ids.begin(), ids.end(), rng);
    const int n_eval = std::clamp(static_cast<int>(std::lround(cfg.eval_id_frac * n_ids)), 1, n_ids - 1);
    std::set<int> eval_set(ids.begin(), ids.begin() + n_eval);

    EvalSplit out;
    out.eval_ids.assign(eval_set.begin(), eval_set.end());
    std::map<int, std::map<int, std::vector<const LabeledDetection*>>> pool;  // id -> cam -> dets
    for (const auto& fb : stream)
        for (const auto& d : fb.detections) {
            if (eval_set.count(d.gt_id)) pool[d.gt_id][d.det.camera_id].push_back(&d);
            else out.train.push_back(d.det);
        }

    for (int id : out.eval_ids) {
        auto it = pool.find(id);
        if (it == pool.end()) {
            out.warnings.push_back("identity " + std::to_string(id) + " never observed; excluded from evaluation");
            continue;
        }
        std::vector<const LabeledDetection*> kept;
        std::vector<const LabeledDetection*> reserved;
        for (auto& [cam, dets] : it->second) {
            std::vector<const LabeledDetection*> d = dets;
            std::shuffle(d.begin(), d.end(), rng);
            if (d.size() > static_cast<std::size_t>(cfg.max_per_camera)) d.resize(static_cast<std::size_t>(cfg.max_per_camera));
            std::sort(d.begin(), d.end(), [](auto* a, auto* b) { return a->det.det_id < b->det.det_id; });
            if (reserved.size() < 2) {
                reserved.push_back(d.front());
                kept.insert(kept.end(), d.begin() + 1, d.end());
            } else {
                kept.insert(kept.end(), d.begin(), d.end());
            }
        }
        if (it->second.size() < 2) {
            out.warnings.push_back("identity " + std::to_string(id) + " seen by one camera only; excluded from query");
            for (auto* d : reserved) out.gallery.push_back(*d);
            for (auto* d : kept) out.gallery.push_back(*d);
            continue;
        }
        for (auto* d : reserved) out.gallery.push_back(*d);
        const std::size_t total = kept.size() + reserved.size();
        std::size_t n_query = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(cfg.query_frac * total)));
        n_query = std::min(n_query, kept.size());
        std::shuffle(kept.begin(), kept.end(), rng);
        for (std::size_t i = 0; i < kept.size(); ++i) (i < n_query ? out.query : out.gallery).push_back(*kept[i]);
    }
    auto by_id = [](const LabeledDetection& a, const LabeledDetection& b) { return a.det.det_id < b.det.det_id; };
    std::sort(out.query.begin(), out.query.end(), by_id);
    std::sort(out.gallery.begin(), out.gallery.end(), by_id);
    return out;
}

/// Training-side view of a labelled stream: gt removed.
inline std::vector<Detection> strip_labels(const Stream& stream) {
    std::vector<Detection> out;
    out.reserve(detection_count(stream));
    for (const auto& fb : stream)
        for (const auto& d : fb.detections) out.push_back(d.det);
    return out;
}

}  // namespace treid

#endif  // TREID_SYNTH_HPP
