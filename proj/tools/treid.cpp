// treid: command-line driver for the staged pipeline.
//
//   treid simulate|train-cid|extract|trackletize|train-tsd|fit-ccr|eval|run [flags]
//   treid ablate --axis steps|min_len|data_fraction|model_size [flags]
//
// Each stage writes into <out>/<stage>/ together with a manifest.json holding
// the digests of its inputs and outputs. A stage whose manifest matches its
// current inputs and config is skipped; anything else that would replace
// existing output needs --force.

#include <iostream>
#include <optional>
#include <string>
#include <unordered_map>

#include <CLI11.hpp>

#include "treid/artifacts.hpp"
#include "treid/config.hpp"
#include "treid/pipeline.hpp"

namespace fs = std::filesystem;
using namespace treid;
using io::json;

namespace {

struct Run {
    PipelineConfig cfg;
    fs::path out;
    bool force = false;
    std::string fingerprint;
};

class StageExists : public Error {
public:
    explicit StageExists(const std::string& what) : Error("output-exists", what) {}
};

void emit(const json& j) { std::cout << j.dump() << std::endl; }

// Every input must be listed, with a matching digest, in the manifest of the
// stage that produced it.
std::map<std::string, std::string> verify_inputs(const Run& run, const std::vector<std::string>& inputs) {
    std::map<std::string, std::string> digests;
    for (const auto& rel : inputs) {
        const fs::path p = run.out / rel;
        const std::string stage = fs::path(rel).begin()->string();
        const fs::path mpath = run.out / stage / "manifest.json";
        if (!fs::exists(mpath)) throw ManifestError(rel + ": stage '" + stage + "' has no manifest; run it first");
        const auto m = io::manifest_from_json(io::read_json(mpath), mpath.string());
        const auto it = m.outputs.find(rel);
        if (it == m.outputs.end()) throw ManifestError(rel + ": not listed in " + mpath.string());
        const auto d = io::file_digest(p);
        if (d != it->second) throw ManifestError(rel + ": digest does not match its manifest (file changed or corrupt)");
        digests[rel] = d;
    }
    return digests;
}

/// Runs `body` unless the stage's manifest already matches. `body` receives
/// the stage directory and returns the relative paths it wrote.
template <class Body>
void stage(const Run& run, const std::string& name, const std::vector<std::string>& inputs, Body&& body) {
    const fs::path dir = run.out / name;
    const fs::path mpath = dir / "manifest.json";
    const auto in = verify_inputs(run, inputs);
    if (fs::exists(mpath)) {
        const auto m = io::manifest_from_json(io::read_json(mpath), mpath.string());
        bool intact = m.config_fingerprint == run.fingerprint && m.inputs == in;
        for (const auto& [rel, d] : m.outputs)
            intact = intact && fs::exists(run.out / rel) && io::file_digest(run.out / rel) == d;
        if (intact) {
            emit({{"stage", name}, {"status", "skipped"}, {"reason", "manifest matches"}});
            return;
        }
        if (!run.force) throw StageExists(dir.string() + " holds results for other inputs or config; pass --force");
    } else if (fs::exists(dir) && !fs::is_empty(dir) && !run.force) {
        throw StageExists(dir.string() + " is not empty; pass --force");
    }
    if (fs::exists(mpath)) fs::remove(mpath);
    fs::create_directories(dir);
    io::Manifest m;
    m.stage = name;
    m.inputs = in;
    m.config_fingerprint = run.fingerprint;
    m.started = io::utc_timestamp();
    const std::vector<std::string> written = body(dir);
    for (const auto& rel : written) m.outputs[rel] = io::file_digest(run.out / rel);
    m.finished = io::utc_timestamp();
    io::write_json(mpath, io::to_json(m));
    emit({{"stage", name}, {"status", "done"}, {"outputs", written}});
}

// ---------------------------------------------------------------- stream I/O

// Detection metadata as the training stages see it: no identities.
struct StreamFiles {
    std::vector<Detection> dets;
    std::vector<std::string> split;
};

StreamFiles read_stream(const Run& run) {
    StreamFiles s;
    const auto recs = io::read_jsonl(run.out / "simulate/detections.jsonl");
    const auto ts = io::read_tensors(run.out / "simulate/observations.rctr");
    const auto obs = io::to_matrix<double>(io::find_tensor(ts, "observations"));
    const auto ids = io::to_vector<std::int64_t>(io::find_tensor(ts, "det_id"));
    if (ids.size() != recs.size() || obs.rows() != recs.size())
        throw ManifestError("detections.jsonl and observations.rctr disagree on the detection count");
    for (std::size_t i = 0; i < recs.size(); ++i) {
        Detection d;
        try {
            d.det_id = recs[i].at("det_id").get<std::int64_t>();
            d.frame = recs[i].at("frame").get<int>();
            d.camera_id = recs[i].at("camera_id").get<int>();
            s.split.push_back(recs[i].at("split").get<std::string>());
        } catch (const json::exception& e) {
            throw ManifestError("detections.jsonl line " + std::to_string(i + 1) + ": " + e.what());
        }
        if (d.det_id != ids[i]) throw ManifestError("observation rows are not in detection order");
        d.observation.assign(obs.row(i).begin(), obs.row(i).end());
        s.dets.push_back(std::move(d));
    }
    return s;
}

// Training detections after the data_fraction cut, in file order.
std::vector<Detection> train_detections(const Run& run, const StreamFiles& s) {
    const int cutoff = static_cast<int>(std::ceil(run.cfg.data_fraction * run.cfg.stream.duration_frames));
    std::vector<Detection> out;
    for (std::size_t i = 0; i < s.dets.size(); ++i)
        if (s.split[i] == "train" && s.dets[i].frame < cutoff) out.push_back(s.dets[i]);
    if (out.empty()) throw DegenerateInput("no training detections");
    return out;
}

template <class T>
EncoderPair<T> read_checkpoint(const Run& run, const std::string& rel) {
    return io::pair_from_tensors<T>(io::read_tensors(run.out / rel), static_cast<T>(run.cfg.contrastive.momentum));
}

std::vector<TrackletSegment> read_segments(const Run& run) {
    std::vector<TrackletSegment> segs;
    for (const auto& r : io::read_jsonl(run.out / "segments/segments.jsonl")) segs.push_back(io::segment_from_json(r));
    return segs;
}

// ---------------------------------------------------------------- stages

void cmd_simulate(const Run& run) {
    stage(run, "simulate", {}, [&](const fs::path&) {
        const auto& cfg = run.cfg;
        const auto world = generate_world(cfg.stream, cfg.n_ids, cfg.n_cams, cfg.seed);
        const auto stream = simulate_stream(world, cfg.workers);
        SplitConfig sc = cfg.split;
        sc.seed = cfg.seed;
        const auto split = split_eval(world, stream, sc);
        for (const auto& w : split.warnings) emit({{"warning", w}});

        std::vector<json> dets, truth;
        std::vector<double> obs;
        std::vector<std::int64_t> ids;
        std::unordered_map<std::int64_t, int> gt;
        for (const auto& fb : stream)
            for (const auto& d : fb.detections) gt[d.det.det_id] = d.gt_id;
        auto add = [&](const Detection& d, const std::string& part) {
            dets.push_back(io::to_json(d, part));
            truth.push_back({{"det_id", d.det_id}, {"gt_id", gt.at(d.det_id)}});
            obs.insert(obs.end(), d.observation.begin(), d.observation.end());
            ids.push_back(d.det_id);
        };
        for (const auto& d : split.train) add(d, "train");
        for (const auto& d : split.query) add(d.det, "query");
        for (const auto& d : split.gallery) add(d.det, "gallery");

        io::write_jsonl(run.out / "simulate/detections.jsonl", dets);
        io::write_jsonl(run.out / "simulate/truth.jsonl", truth);
        const auto n = ids.size();
        io::write_tensors(run.out / "simulate/observations.rctr",
                          {io::make_tensor("observations", Matrix<double>(n, static_cast<std::size_t>(cfg.stream.d_obs),
                                                                          std::move(obs))),
                           io::make_tensor("det_id", ids)});
        io::write_json(run.out / "simulate/stats.json", {{"detections", detection_count(stream)},
                                                         {"train", split.train.size()},
                                                         {"query", split.query.size()},
                                                         {"gallery", split.gallery.size()},
                                                         {"eval_ids", split.eval_ids}});
        return std::vector<std::string>{"simulate/detections.jsonl", "simulate/truth.jsonl",
                                        "simulate/observations.rctr", "simulate/stats.json"};
    });
}

const std::vector<std::string> kStreamInputs{"simulate/detections.jsonl", "simulate/observations.rctr"};

std::vector<std::string> plus(std::vector<std::string> a, const std::vector<std::string>& b) {
    a.insert(a.end(), b.begin(), b.end());
    return a;
}

// Writes the curves collected so far even when training diverges, so the
// partial run can be inspected.
template <class T, class Train>
EncoderPair<T> train_with_curves(const fs::path& curves, const std::string& name, Train&& train) {
    std::vector<json> rows;
    EpochLog log = [&](const std::string& s, const TrainStats& st) {
        rows.push_back(io::to_json(st, s));
        emit({{"stage", name}, {"epoch", st.epoch}, {"loss", st.mean_loss}, {"lr", st.lr}});
    };
    try {
        auto pair = train(log);
        io::write_jsonl(curves, rows);
        return pair;
    } catch (...) {
        io::write_jsonl(curves, rows);
        throw;
    }
}

template <class T>
void cmd_train_cid(const Run& run) {
    stage(run, "cid", kStreamInputs, [&](const fs::path& dir) {
        const auto s = read_stream(run);
        const auto train = train_detections(run, s);
        const auto obs = observation_matrix<double>(train);
        const auto init = init_encoder<T>(run.cfg.dims, run.cfg.seed, static_cast<T>(run.cfg.contrastive.momentum));
        const auto pair = train_with_curves<T>(dir / "curves.jsonl", "cid",
                                               [&](const EpochLog& log) { return train_cid(run.cfg, obs, init, log); });
        io::write_tensors(dir / "checkpoint.rctr", io::checkpoint_tensors(pair));
        return std::vector<std::string>{"cid/checkpoint.rctr", "cid/curves.jsonl"};
    });
}

template <class T>
void cmd_extract(const Run& run) {
    stage(run, "extract", plus(kStreamInputs, {"cid/checkpoint.rctr"}), [&](const fs::path& dir) {
        const auto s = read_stream(run);
        const auto train = train_detections(run, s);
        const auto enc = read_checkpoint<T>(run, "cid/checkpoint.rctr").query;
        std::vector<std::int64_t> ids;
        for (const auto& d : train) ids.push_back(d.det_id);
        io::write_tensors(dir / "embeddings.rctr", {io::make_tensor("embeddings", embed(enc, observation_matrix<T>(train))),
                                                     io::make_tensor("det_id", ids)});
        return std::vector<std::string>{"extract/embeddings.rctr"};
    });
}

template <class T>
void cmd_trackletize(const Run& run) {
    stage(run, "segments", plus(kStreamInputs, {"extract/embeddings.rctr"}), [&](const fs::path& dir) {
        const auto s = read_stream(run);
        const auto train = train_detections(run, s);
        const auto ts = io::read_tensors(run.out / "extract/embeddings.rctr");
        const auto emb = io::to_matrix<T>(io::find_tensor(ts, "embeddings"));
        const auto ids = io::to_vector<std::int64_t>(io::find_tensor(ts, "det_id"));
        if (ids.size() != train.size()) throw ManifestError("embeddings do not cover the training detections");
        for (std::size_t i = 0; i < ids.size(); ++i)
            if (ids[i] != train[i].det_id) throw ManifestError("embedding rows are not in detection order");
        std::optional<T> floor;
        if (run.cfg.match_floor) floor = static_cast<T>(*run.cfg.match_floor);
        const auto segs = assemble_segments(std::span<const Detection>(train), emb, mnn_matcher<T>(floor), run.cfg.workers);
        std::vector<json> recs;
        for (const auto& sg : segs) recs.push_back(io::to_json(sg));
        io::write_jsonl(dir / "segments.jsonl", recs);
        // statistics only; identities are not visible here
        const auto none = [](std::int64_t) { return 0; };
        auto stats = io::to_json(segment_stats(segs, none));
        const auto kept = filter_segments(segs, run.cfg.min_len);
        stats["min_len"] = run.cfg.min_len;
        stats["kept_segments"] = kept.size();
        std::size_t kept_dets = 0;
        for (const auto& sg : kept) kept_dets += sg.length();
        stats["kept_detections"] = kept_dets;
        io::write_json(dir / "stats.json", stats);
        return std::vector<std::string>{"segments/segments.jsonl", "segments/stats.json"};
    });
}

template <class T>
void cmd_train_tsd(const Run& run) {
    stage(run, "tsd", plus(kStreamInputs, {"segments/segments.jsonl", "cid/checkpoint.rctr"}), [&](const fs::path& dir) {
        const auto s = read_stream(run);
        const auto train = train_detections(run, s);
        const auto obs = observation_matrix<double>(train);
        const auto segs = filter_segments(read_segments(run), run.cfg.min_len);
        if (segs.empty()) throw DegenerateInput("no segments survive min_len " + std::to_string(run.cfg.min_len));
        const auto init = read_checkpoint<T>(run, "cid/checkpoint.rctr");
        const RowIndex rows(train);
        const auto pair = train_with_curves<T>(dir / "curves.jsonl", "tsd", [&](const EpochLog& log) {
            return train_tsd(run.cfg, segs, obs, rows, init, log);
        });
        io::write_tensors(dir / "checkpoint.rctr", io::checkpoint_tensors(pair));
        return std::vector<std::string>{"tsd/checkpoint.rctr", "tsd/curves.jsonl"};
    });
}

template <class T>
void cmd_fit_ccr(const Run& run) {
    stage(run, "ccr", plus(kStreamInputs, {"tsd/checkpoint.rctr"}), [&](const fs::path& dir) {
        const auto s = read_stream(run);
        const auto train = train_detections(run, s);
        const auto enc = read_checkpoint<T>(run, "tsd/checkpoint.rctr").query;
        CameraClassifier<T> clf;
        const auto proj = fit_ccr(run.cfg, train, observation_matrix<double>(train), enc, &clf);
        io::write_tensors(dir / "projector.rctr", io::projector_tensors(proj, clf));
        io::write_json(dir / "stats.json", {{"k", proj.k},
                                            {"effective_k", proj.effective_k()},
                                            {"train_accuracy", clf.train_accuracy},
                                            {"holdout_accuracy", clf.holdout_accuracy},
                                            {"singular_values", proj.sigma}});
        return std::vector<std::string>{"ccr/projector.rctr", "ccr/stats.json"};
    });
}

template <class T>
void cmd_eval(const Run& run) {
    const std::vector<std::string> inputs{"simulate/detections.jsonl", "simulate/observations.rctr",
                                          "simulate/truth.jsonl",      "cid/checkpoint.rctr",
                                          "tsd/checkpoint.rctr",       "ccr/projector.rctr",
                                          "segments/segments.jsonl"};
    stage(run, "eval", inputs, [&](const fs::path& dir) {
        const auto s = read_stream(run);
        std::unordered_map<std::int64_t, int> gt;
        for (const auto& r : io::read_jsonl(run.out / "simulate/truth.jsonl"))
            gt[r.at("det_id").get<std::int64_t>()] = r.at("gt_id").get<int>();
        std::vector<LabeledDetection> query, gallery;
        for (std::size_t i = 0; i < s.dets.size(); ++i) {
            if (s.split[i] != "query" && s.split[i] != "gallery") continue;
            auto& part = s.split[i] == "query" ? query : gallery;
            part.push_back({s.dets[i], gt.at(s.dets[i].det_id)});
        }
        const auto cid = read_checkpoint<T>(run, "cid/checkpoint.rctr").query;
        const auto tsd = read_checkpoint<T>(run, "tsd/checkpoint.rctr").query;
        const auto proj = io::projector_from_tensors<T>(io::read_tensors(run.out / "ccr/projector.rctr"));
        if (proj.n != tsd.out_dim()) throw ManifestError("projector width does not match the TSD encoder");

        std::vector<std::pair<std::string, EvalReport>> reports;
        auto add = [&](const std::string& name, const EncoderParams<T>& enc, const CcrProjector<T>* p) {
            auto r = evaluate(enc, p, query, gallery, run.cfg.eval, run.cfg.workers);
            r.fingerprint = run.fingerprint;
            reports.emplace_back(name, std::move(r));
        };
        add("CID", cid, nullptr);
        add("CID+TSD", tsd, nullptr);
        add("CID+TSD+CCR", tsd, &proj);

        const auto segs = read_segments(run);
        const auto gt_of = [&](std::int64_t id) { return gt.at(id); };
        json report{{"runs", json::array()},
                    {"config_fingerprint", run.fingerprint},
                    {"segments",
                     {{"purity_all", segment_stats(segs, gt_of).purity},
                      {"purity_kept", segment_stats(filter_segments(segs, run.cfg.min_len), gt_of).purity},
                      {"min_len", run.cfg.min_len}}}};
        std::vector<json> lines;
        for (const auto& [name, r] : reports) {
            auto j = io::to_json(r);
            j["run"] = name;
            report["runs"].push_back(j);
            lines.push_back({{"run", name}, {"rank1", r.rank1()}, {"mAP", r.mean_ap}, {"queries", r.queries}});
        }
        io::write_json(dir / "report.json", report);
        io::write_jsonl(dir / "report.jsonl", lines);
        const auto table = format_report_table(reports);
        std::ofstream(dir / "report.txt") << table;
        std::cerr << table;
        return std::vector<std::string>{"eval/report.json", "eval/report.jsonl", "eval/report.txt"};
    });
}

template <class T>
void cmd_ablate(const Run& run, const std::string& axis) {
    if (std::find(ablation_axes().begin(), ablation_axes().end(), axis) == ablation_axes().end())
        throw InvalidInput("unknown ablation axis '" + axis + "'");
    stage(run, "ablate_" + axis, {}, [&](const fs::path& dir) {
        const auto rows = ablation_grid<T>(run.cfg, axis);
        std::vector<std::pair<std::string, EvalReport>> table;
        std::vector<json> lines;
        std::string csv = axis + ",rank1,mAP\n";
        for (const auto& r : rows) {
            table.emplace_back(r.label, r.report);
            json j{{"label", r.label}, {"x", r.x}, {"rank1", r.report.rank1()}, {"mAP", r.report.mean_ap},
                   {"report", io::to_json(r.report)}, {"seconds", r.seconds}};
            if (r.purity) j["purity"] = *r.purity;
            lines.push_back(j);
            char buf[128];
            std::snprintf(buf, sizeof buf, "%.17g,%.17g,%.17g\n", r.x, r.report.rank1(), r.report.mean_ap);
            csv += buf;
        }
        const auto text = format_report_table(table);
        std::cerr << text;
        std::ofstream(dir / "table.txt") << text;
        io::write_jsonl(dir / "results.jsonl", lines);
        std::ofstream(dir / "series.csv") << csv;
        const std::string d = "ablate_" + axis + "/";
        return std::vector<std::string>{d + "table.txt", d + "results.jsonl", d + "series.csv"};
    });
}

template <class T>
void dispatch(const Run& run, const std::string& verb, const std::string& axis) {
    if (verb == "simulate") cmd_simulate(run);
    else if (verb == "train-cid") cmd_train_cid<T>(run);
    else if (verb == "extract") cmd_extract<T>(run);
    else if (verb == "trackletize") cmd_trackletize<T>(run);
    else if (verb == "train-tsd") cmd_train_tsd<T>(run);
    else if (verb == "fit-ccr") cmd_fit_ccr<T>(run);
    else if (verb == "eval") cmd_eval<T>(run);
    else if (verb == "ablate") cmd_ablate<T>(run, axis);
    else if (verb == "run") {
        cmd_simulate(run);
        cmd_train_cid<T>(run);
        cmd_extract<T>(run);
        cmd_trackletize<T>(run);
        cmd_train_tsd<T>(run);
        cmd_fit_ccr<T>(run);
        cmd_eval<T>(run);
    }
}

// The serialized config lives at <out>/config.json. A different one is only
// replaced with --force.
void write_config(const Run& run) {
    fs::create_directories(run.out);
    const fs::path p = run.out / "config.json";
    const auto j = to_json(run.cfg);
    if (fs::exists(p)) {
        auto old = io::read_json(p);
        old.erase("workers");
        auto cur = j;
        cur.erase("workers");
        if (old == cur) return;
        if (!run.force) throw StageExists(p.string() + " holds a different config; pass --force");
    }
    io::write_json(p, j);
}

void report_error(const std::string& kind, const std::string& msg, const std::optional<fs::path>& out) {
    const json rec{{"error", kind}, {"message", msg}};
    std::cerr << rec.dump() << std::endl;
    if (out && fs::exists(*out)) {
        try {
            io::write_json(*out / "error.json", rec);
        } catch (...) {
        }
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Tracklet-based unsupervised re-identification pipeline"};
    app.require_subcommand(1);
    app.fallthrough();

    std::string config_path, out = "run", axis;
    std::optional<std::string> precision;
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> workers;
    bool deterministic = false, force = false;
    app.add_option("--config", config_path, "JSON config file")->check(CLI::ExistingFile);
    app.add_option("--seed", seed, "global seed (overrides the config)");
    app.add_option("--out", out, "run directory")->capture_default_str();
    app.add_flag("--deterministic", deterministic, "single worker, bit-exact reproduction");
    app.add_option("--workers", workers, "worker threads")->check(CLI::PositiveNumber);
    app.add_option("--precision", precision, "numeric precision")->check(CLI::IsMember({"f32", "f64"}));
    app.add_flag("--force", force, "overwrite existing stage outputs");

    for (const char* verb : {"simulate", "train-cid", "extract", "trackletize", "train-tsd", "fit-ccr", "eval", "run"})
        app.add_subcommand(verb, std::string("pipeline stage: ") + verb);
    auto* ablate = app.add_subcommand("ablate", "run one ablation axis");
    ablate->add_option("--axis", axis, "steps | min_len | data_fraction | model_size")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e);
        report_error("usage", e.what(), std::nullopt);
        return 2;
    }

    std::optional<fs::path> out_dir;
    try {
        Run run;
        run.out = out;
        run.force = force;
        if (!config_path.empty()) run.cfg = config_from_json(io::read_json(config_path));
        if (seed) run.cfg.seed = *seed;
        if (workers) run.cfg.workers = *workers;
        if (precision) run.cfg.precision = *precision;
        if (deterministic) run.cfg.workers = 1;
        run.cfg.validate();
        run.fingerprint = config_fingerprint(run.cfg);
        out_dir = run.out;
        write_config(run);

        const std::string verb = app.get_subcommands().front()->get_name();
        if (run.cfg.precision == "f64") dispatch<double>(run, verb, axis);
        else dispatch<float>(run, verb, axis);
        return 0;
    } catch (const Error& e) {
        report_error(e.kind(), e.what(), out_dir);
    } catch (const std::exception& e) {
        report_error("internal", e.what(), out_dir);
    }
    return 1;
}
