#include "cma/pipeline.hpp"

#include "cma/atlas.hpp"
#include "cma/embed.hpp"
#include "cma/io.hpp"
#include "cma/motion.hpp"
#include "cma/stats.hpp"

#include <json.hpp>

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <set>

namespace cma::pipeline {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string join(const std::string& dir, const std::string& rest) {
    return (fs::path(dir) / rest).string();
}

void ensure_dir(const std::string& path) {
    std::error_code ec;
    fs::create_directories(path, ec);
    if (ec) throw StageError("io", "cannot create directory '" + path + "': " + ec.message());
}

double now_seconds() {
    return std::chrono::duration<double>(std::chrono::steady_clock::now().time_since_epoch())
        .count();
}

struct StageGuard {
    RunManifest& manifest;
    StageRecord record;
    double start = now_seconds();

    StageGuard(RunManifest& m, std::string name, std::uint64_t config_checksum)
        : manifest(m) {
        record.name = std::move(name);
        record.config_checksum = config_checksum;
    }

    void add_input(const std::string& path) { record.inputs[path] = io::checksum_file(path); }
    void add_output(const std::string& path) { record.outputs[path] = io::checksum_file(path); }

    void commit(bool cached) {
        record.cached = cached;
        record.seconds = now_seconds() - start;
        auto& stages = manifest.stages;
        const auto it = std::find_if(stages.begin(), stages.end(),
                                     [&](const StageRecord& r) { return r.name == record.name; });
        if (it != stages.end()) {
            *it = record;
        } else {
            stages.push_back(record);
        }
    }
};

// A stage is a cache hit when its config slice and every recorded input and
// output checksum still match what the manifest saw last time.
bool cache_hit(const RunManifest& manifest, const std::string& name,
               std::uint64_t config_checksum, const std::vector<std::string>& inputs) {
    const StageRecord* rec = manifest.find(name);
    if (!rec || rec->config_checksum != config_checksum) return false;
    if (rec->inputs.size() != inputs.size()) return false;
    for (const auto& path : inputs) {
        const auto it = rec->inputs.find(path);
        if (it == rec->inputs.end()) return false;
        if (!fs::exists(path) || io::checksum_file(path) != it->second) return false;
    }
    for (const auto& [path, checksum] : rec->outputs) {
        if (!fs::exists(path) || io::checksum_file(path) != checksum) return false;
    }
    return true;
}

std::string subject_sequence_path(const std::string& out, const std::string& id) {
    return join(out, "cohort/" + id + ".lvseq");
}

std::vector<std::string> read_keep_list(const std::string& out) {
    std::vector<std::string> keep;
    std::ifstream in(join(out, "qc/keep.txt"));
    if (!in) throw StageError("atlas", "missing qc/keep.txt (run the qc stage first)");
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty()) keep.push_back(line);
    }
    return keep;
}

json summary_stats(const std::vector<double>& values) {
    double mean = 0.0;
    for (double v : values) mean += v;
    mean /= static_cast<double>(values.size());
    double var = 0.0;
    for (double v : values) var += (v - mean) * (v - mean);
    var = values.size() > 1 ? var / static_cast<double>(values.size() - 1) : 0.0;
    return json{{"mean", mean}, {"sd", std::sqrt(var)}};
}

}  // namespace

const StageRecord* RunManifest::find(const std::string& name) const {
    for (const auto& s : stages) {
        if (s.name == name) return &s;
    }
    return nullptr;
}

void write_manifest(const std::string& path, const RunManifest& manifest) {
    json doc;
    doc["format"] = "cma-manifest-1";
    doc["subjects_total"] = manifest.subjects_total;
    doc["qc_excluded"] = manifest.qc_excluded;
    doc["config"] = manifest.config_text;
    json stages = json::array();
    for (const auto& s : manifest.stages) {
        json rec;
        rec["name"] = s.name;
        rec["cached"] = s.cached;
        rec["seconds"] = s.seconds;
        rec["config_checksum"] = s.config_checksum;
        rec["inputs"] = s.inputs;
        rec["outputs"] = s.outputs;
        stages.push_back(rec);
    }
    doc["stages"] = stages;
    io::write_text_file(path, doc.dump(1) + "\n");
}

RunManifest read_manifest(const std::string& path) {
    RunManifest manifest;
    if (!fs::exists(path)) return manifest;
    json doc;
    std::ifstream in(path);
    try {
        in >> doc;
    } catch (const std::exception&) {
        return manifest;  // unreadable manifest: treat as absent
    }
    if (doc.value("format", "") != "cma-manifest-1") return manifest;
    manifest.subjects_total = doc.value("subjects_total", 0);
    manifest.qc_excluded = doc.value("qc_excluded", 0);
    manifest.config_text = doc.value("config", "");
    for (const auto& rec : doc.value("stages", json::array())) {
        StageRecord s;
        s.name = rec.value("name", "");
        s.cached = rec.value("cached", false);
        s.seconds = rec.value("seconds", 0.0);
        s.config_checksum = rec.value("config_checksum", 0ull);
        for (const auto& [k, v] : rec.value("inputs", json::object()).items()) {
            s.inputs[k] = v.get<std::uint64_t>();
        }
        for (const auto& [k, v] : rec.value("outputs", json::object()).items()) {
            s.outputs[k] = v.get<std::uint64_t>();
        }
        manifest.stages.push_back(std::move(s));
    }
    return manifest;
}

void stage_synth(const PipelineConfig& config, RunManifest& manifest, bool force) {
    const std::string out = config.output_dir();
    const auto slice = config.slice({"seed", "cohort.", "phantom."});
    StageGuard guard(manifest, "synth", fnv1a64(slice));
    if (!force && cache_hit(manifest, "synth", guard.record.config_checksum, {})) {
        guard.record = *manifest.find("synth");
        guard.commit(true);
        return;
    }
    ensure_dir(join(out, "cohort"));

    const auto cohort_cfg = config.cohort_config();
    cohort::Cohort cohort;
    try {
        cohort = cohort::synth_cohort(cohort_cfg);
    } catch (const std::exception& e) {
        throw StageError("synth", e.what());
    }
    manifest.subjects_total = cohort_cfg.subjects;

    // Deterministic artifact injection, cycling through the configured kinds.
    const double fraction = config.get_double("cohort.artifact_fraction");
    std::vector<cohort::ArtifactKind> kinds;
    {
        std::istringstream ss(config.get("cohort.artifact_kinds"));
        std::string token;
        while (std::getline(ss, token, ',')) {
            if (!token.empty()) kinds.push_back(cohort::artifact_kind_from_string(token));
        }
    }
    std::vector<int> injected_with(cohort.sequences.size(), -1);
    if (fraction > 0.0 && !kinds.empty()) {
        int injected = 0;
        for (std::size_t i = 0; i < cohort.sequences.size(); ++i) {
            if (std::floor((i + 1) * fraction) > std::floor(i * fraction)) {
                injected_with[i] = injected % static_cast<int>(kinds.size());
                ++injected;
            }
        }
    }

    std::vector<std::string> failures(cohort.sequences.size());
    parallel_for(cohort.sequences.size(), config.jobs(), [&](std::size_t i) {
        try {
            if (injected_with[i] >= 0) {
                cohort.sequences[i] =
                    cohort::inject_artifact(cohort.sequences[i], kinds[injected_with[i]]);
            }
            io::write_sequence_file(
                subject_sequence_path(out, cohort.covariates.subject_ids[i]),
                cohort.sequences[i]);
        } catch (const std::exception& e) {
            failures[i] = e.what();
        }
    });
    for (std::size_t i = 0; i < failures.size(); ++i) {
        if (!failures[i].empty()) {
            throw StageError("synth",
                             "subject " + cohort.covariates.subject_ids[i] + ": " + failures[i]);
        }
    }
    io::write_covariates_file(join(out, "cohort/covariates.csv"), cohort.covariates);

    // Cohort summary (demographics plus analytic EF from the realized specs).
    json summary;
    summary["format"] = "cma-cohort-summary-1";
    summary["subjects"] = cohort_cfg.subjects;
    std::vector<double> age, bmi, bfp, bmr, ef;
    int smoking = 0, alcohol = 0, hypertension = 0, injected_count = 0;
    for (std::size_t i = 0; i < cohort.covariates.size(); ++i) {
        const auto& r = cohort.covariates.records[i];
        age.push_back(r.age);
        bmi.push_back(r.bmi);
        bfp.push_back(r.bfp);
        bmr.push_back(r.bmr);
        smoking += r.smoking;
        alcohol += r.alcohol;
        hypertension += r.hypertension;
        ef.push_back(cohort::analytic_ejection_fraction(cohort.specs[i]));
        if (injected_with[i] >= 0) ++injected_count;
    }
    const double n = static_cast<double>(cohort.covariates.size());
    summary["age"] = summary_stats(age);
    summary["bmi"] = summary_stats(bmi);
    summary["bfp"] = summary_stats(bfp);
    summary["bmr"] = summary_stats(bmr);
    summary["ef_analytic"] = summary_stats(ef);
    summary["smoking_rate"] = smoking / n;
    summary["alcohol_rate"] = alcohol / n;
    summary["hypertension_rate"] = hypertension / n;
    summary["artifacts_injected"] = injected_count;
    io::write_text_file(join(out, "cohort/cohort_summary.json"), summary.dump(1) + "\n");

    guard.add_output(join(out, "cohort/covariates.csv"));
    guard.add_output(join(out, "cohort/cohort_summary.json"));
    for (const auto& id : cohort.covariates.subject_ids) {
        guard.add_output(subject_sequence_path(out, id));
    }
    guard.commit(false);
}

void stage_qc(const PipelineConfig& config, RunManifest& manifest, bool force) {
    const std::string out = config.output_dir();
    const auto covariates = io::read_covariates_file(join(out, "cohort/covariates.csv"));
    std::vector<std::string> inputs = {join(out, "cohort/covariates.csv")};
    for (const auto& id : covariates.subject_ids) inputs.push_back(subject_sequence_path(out, id));

    StageGuard guard(manifest, "qc", fnv1a64(config.slice({"qc."})));
    if (!force && cache_hit(manifest, "qc", guard.record.config_checksum, inputs)) {
        guard.record = *manifest.find("qc");
        guard.commit(true);
        return;
    }
    ensure_dir(join(out, "qc"));
    const auto thresholds = config.qc_thresholds();
    const bool enabled = config.get_bool("qc.enabled");

    io::CurveTable curves;
    curves.subject_ids = covariates.subject_ids;
    curves.curves.resize(covariates.size());
    std::vector<qc::QcReport> reports(covariates.size());
    std::vector<std::string> failures(covariates.size());
    parallel_for(covariates.size(), config.jobs(), [&](std::size_t i) {
        try {
            const auto seq = io::read_sequence_file(
                subject_sequence_path(out, covariates.subject_ids[i]));
            curves.curves[i] = geometry::volume_curve(seq);
            reports[i] = qc::qc_volume_curve(curves.curves[i], thresholds);
        } catch (const std::exception& e) {
            failures[i] = e.what();
        }
    });
    for (std::size_t i = 0; i < failures.size(); ++i) {
        if (!failures[i].empty()) {
            throw StageError("qc", "subject " + covariates.subject_ids[i] + ": " + failures[i]);
        }
    }

    std::ostringstream jsonl, keep;
    int excluded = 0, malformed = 0;
    for (std::size_t i = 0; i < reports.size(); ++i) {
        jsonl << io::qc_report_jsonl(covariates.subject_ids[i], reports[i]) << '\n';
        const bool pass = reports[i].pass || !enabled;
        if (pass) {
            keep << covariates.subject_ids[i] << '\n';
        } else {
            ++excluded;
        }
        for (const auto r : reports[i].reasons) {
            if (r == qc::Reason::MalformedCurve) ++malformed;
        }
    }
    io::write_curves_file(join(out, "qc/curves.csv"), curves);
    io::write_text_file(join(out, "qc/reports.jsonl"), jsonl.str());
    io::write_text_file(join(out, "qc/keep.txt"), keep.str());
    json summary = {{"format", "cma-qc-summary-1"},
                    {"subjects", covariates.size()},
                    {"excluded", excluded},
                    {"malformed", malformed},
                    {"enabled", enabled}};
    io::write_text_file(join(out, "qc/qc_summary.json"), summary.dump(1) + "\n");
    manifest.subjects_total = static_cast<int>(covariates.size());
    manifest.qc_excluded = excluded;

    for (const auto& path : inputs) guard.add_input(path);
    guard.add_output(join(out, "qc/curves.csv"));
    guard.add_output(join(out, "qc/reports.jsonl"));
    guard.add_output(join(out, "qc/keep.txt"));
    guard.add_output(join(out, "qc/qc_summary.json"));
    guard.commit(false);
}

void stage_atlas(const PipelineConfig& config, RunManifest& manifest, bool force) {
    const std::string out = config.output_dir();
    const auto keep = read_keep_list(out);
    if (keep.empty()) throw EmptyCohortError("atlas");
    std::vector<std::string> inputs = {join(out, "qc/keep.txt")};
    for (const auto& id : keep) inputs.push_back(subject_sequence_path(out, id));

    StageGuard guard(manifest, "atlas", fnv1a64(config.slice({"atlas."})));
    if (!force && cache_hit(manifest, "atlas", guard.record.config_checksum, inputs)) {
        guard.record = *manifest.find("atlas");
        guard.commit(true);
        return;
    }
    ensure_dir(join(out, "atlas"));
    const int medial_target = config.get_int("atlas.medial_target");
    const double tps_lambda = config.get_double("atlas.tps_lambda");

    // Medial midsurfaces at end-diastole. Subjects share mesh topology, so
    // the medial meshes stay vertex-corresponded across the cohort.
    std::vector<geometry::TriSurface> medials(keep.size());
    std::vector<double> fallback_fractions(keep.size(), 0.0);
    std::vector<std::string> failures(keep.size());
    parallel_for(keep.size(), config.jobs(), [&](std::size_t i) {
        try {
            const auto seq = io::read_sequence_file(subject_sequence_path(out, keep[i]));
            auto medial =
                atlas::medial_surface(seq.frames[0].endo, seq.frames[0].epi, medial_target);
            medials[i] = std::move(medial.surface);
            fallback_fractions[i] = medial.fallback_fraction;
        } catch (const std::exception& e) {
            failures[i] = e.what();
        }
    });
    for (std::size_t i = 0; i < keep.size(); ++i) {
        if (!failures[i].empty()) {
            throw StageError("atlas", "subject " + keep[i] + ": " + failures[i]);
        }
        if (medials[i].vertex_count() != medials[0].vertex_count() ||
            medials[i].faces != medials[0].faces) {
            throw StageError("atlas", "subject " + keep[i] +
                                          ": medial mesh lost vertex correspondence");
        }
    }

    std::vector<std::vector<Vec3>> shapes(keep.size());
    for (std::size_t i = 0; i < keep.size(); ++i) shapes[i] = medials[i].vertices;
    atlas::GpaResult gpa_result;
    try {
        gpa_result = atlas::gpa(shapes, config.get_double("atlas.gpa_tol"),
                                config.get_int("atlas.gpa_max_iter"));
    } catch (const std::exception& e) {
        throw StageError("atlas", e.what());
    }

    geometry::TriSurface mean_mesh;
    mean_mesh.vertices = gpa_result.mean_shape;
    mean_mesh.faces = medials[0].faces;
    io::AtlasBundle bundle;
    bundle.space = atlas::build_atlas_space(std::move(mean_mesh));
    bundle.rv_direction = atlas::atlas_rv_direction(bundle.space);
    {
        // Parcellate the mean mesh: apex point and apex-to-base vector from
        // the atlas axis, sector zero at the rv direction.
        const auto& verts = bundle.space.mean_medial.vertices;
        double lo = 0.0, hi = 0.0;
        for (const auto& p : verts) {
            const double t = (p - bundle.space.axis_point).dot(bundle.space.long_axis);
            lo = std::min(lo, t);
            hi = std::max(hi, t);
        }
        const Vec3 apex = bundle.space.axis_point + hi * bundle.space.long_axis;
        const Vec3 apex_to_base = (lo - hi) * bundle.space.long_axis;
        try {
            bundle.labels = geometry::aha_parcellate(bundle.space.mean_medial, apex_to_base, apex,
                                                     bundle.rv_direction);
        } catch (const std::exception& e) {
            throw StageError("atlas", std::string("parcellation: ") + e.what());
        }
    }
    io::write_atlas_bundle(join(out, "atlas/atlas.bundle"), bundle);

    std::vector<io::SubjectTransform> transforms(keep.size());
    std::fill(failures.begin(), failures.end(), std::string());
    parallel_for(keep.size(), config.jobs(), [&](std::size_t i) {
        try {
            io::SubjectTransform st;
            st.subject_id = keep[i];
            st.transform.similarity = gpa_result.transforms[i];
            std::vector<Vec3> aligned(shapes[i].size());
            for (std::size_t v = 0; v < shapes[i].size(); ++v) {
                aligned[v] = gpa_result.transforms[i].apply(shapes[i][v]);
            }
            st.transform.warp = atlas::tps_fit(aligned, gpa_result.mean_shape, tps_lambda);
            st.medial_ed_vertices = shapes[i];
            transforms[i] = std::move(st);
        } catch (const std::exception& e) {
            failures[i] = e.what();
        }
    });
    for (std::size_t i = 0; i < keep.size(); ++i) {
        if (!failures[i].empty()) {
            throw StageError("atlas", "subject " + keep[i] + ": " + failures[i]);
        }
    }
    io::write_transforms_file(join(out, "atlas/transforms.txt"), transforms);

    const double worst_fallback =
        *std::max_element(fallback_fractions.begin(), fallback_fractions.end());
    json summary = {{"format", "cma-atlas-summary-1"},
                    {"subjects", keep.size()},
                    {"medial_vertices", bundle.space.mean_medial.vertex_count()},
                    {"gpa_iterations", gpa_result.iterations},
                    {"gpa_final_delta", gpa_result.final_delta},
                    {"worst_ray_fallback_fraction", worst_fallback},
                    {"ray_fallback_warning", worst_fallback > 0.05}};
    io::write_text_file(join(out, "atlas/atlas_summary.json"), summary.dump(1) + "\n");

    for (const auto& path : inputs) guard.add_input(path);
    guard.add_output(join(out, "atlas/atlas.bundle"));
    guard.add_output(join(out, "atlas/transforms.txt"));
    guard.add_output(join(out, "atlas/atlas_summary.json"));
    guard.commit(false);
}

void stage_features(const PipelineConfig& config, RunManifest& manifest, bool force) {
    const std::string out = config.output_dir();
    const auto keep = read_keep_list(out);
    if (keep.empty()) throw EmptyCohortError("features");
    std::vector<std::string> inputs = {join(out, "qc/keep.txt"), join(out, "atlas/atlas.bundle"),
                                       join(out, "atlas/transforms.txt")};
    for (const auto& id : keep) inputs.push_back(subject_sequence_path(out, id));

    StageGuard guard(manifest, "features", fnv1a64(config.slice({"motion."})));
    if (!force && cache_hit(manifest, "features", guard.record.config_checksum, inputs)) {
        guard.record = *manifest.find("features");
        guard.commit(true);
        return;
    }
    ensure_dir(join(out, "features"));
    const auto bundle = io::read_atlas_bundle(join(out, "atlas/atlas.bundle"));
    const auto transforms = io::read_transforms_file(join(out, "atlas/transforms.txt"));
    if (transforms.size() != keep.size()) {
        throw StageError("features", "transforms file does not match keep list");
    }
    const double ffd_spacing = config.get_double("motion.ffd_spacing");
    const double ffd_ridge = config.get_double("motion.ffd_ridge");
    const double spacing4d = config.get_double("motion.spacing4d");
    const double temporal_spacing = config.get_double("motion.temporal_spacing");

    std::vector<atlas::DisplacementField> local_fields(keep.size());
    std::vector<double> ffd_rms(keep.size(), 0.0), fit4d_rms(keep.size(), 0.0);
    std::vector<std::string> failures(keep.size());
    parallel_for(keep.size(), config.jobs(), [&](std::size_t i) {
        try {
            const auto seq = io::read_sequence_file(subject_sequence_path(out, keep[i]));
            const std::size_t T = seq.frame_count();

            // Inter-frame FFDs fitted to the known endo+epi vertex motion.
            std::vector<motion::BsplineFfd3d> ffds;
            ffds.reserve(T - 1);
            double rms = 0.0;
            for (std::size_t t = 0; t + 1 < T; ++t) {
                std::vector<Vec3> points, disp;
                const auto& cur = seq.frames[t];
                const auto& nxt = seq.frames[t + 1];
                points.reserve(cur.endo.vertex_count() + cur.epi.vertex_count());
                for (std::size_t v = 0; v < cur.endo.vertex_count(); ++v) {
                    points.push_back(cur.endo.vertices[v]);
                    disp.push_back(nxt.endo.vertices[v] - cur.endo.vertices[v]);
                }
                for (std::size_t v = 0; v < cur.epi.vertex_count(); ++v) {
                    points.push_back(cur.epi.vertices[v]);
                    disp.push_back(nxt.epi.vertices[v] - cur.epi.vertices[v]);
                }
                ffds.push_back(motion::fit_ffd(points, disp, ffd_spacing, ffd_ridge));
                rms += ffds.back().fit_rms_mm;
            }
            ffd_rms[i] = rms / static_cast<double>(T - 1);

            const auto trajectories =
                motion::compose_interframe(ffds, transforms[i].medial_ed_vertices);
            const auto field4d =
                motion::fit_4dt(trajectories, spacing4d, temporal_spacing);
            fit4d_rms[i] = field4d.fit_rms_mm;

            // Subject-frame displacements sampled from the space-time fit.
            atlas::DisplacementField u;
            u.tag = atlas::FrameTag::Subject;
            u.vectors.resize(T);
            for (std::size_t t = 0; t < T; ++t) {
                u.vectors[t].resize(transforms[i].medial_ed_vertices.size());
                for (std::size_t v = 0; v < transforms[i].medial_ed_vertices.size(); ++v) {
                    u.vectors[t][v] = motion::evaluate_4dt(
                        field4d, transforms[i].medial_ed_vertices[v], static_cast<double>(t));
                }
            }
            const auto u_atlas =
                atlas::pushforward(u, transforms[i].transform, transforms[i].medial_ed_vertices);
            local_fields[i] = atlas::project_local(u_atlas, bundle.space.basis);
        } catch (const std::exception& e) {
            failures[i] = e.what();
        }
    });
    for (std::size_t i = 0; i < keep.size(); ++i) {
        if (!failures[i].empty()) {
            throw StageError("features", "subject " + keep[i] + ": " + failures[i]);
        }
    }

    embed::FeatureMatrix features;
    try {
        features = embed::build_features(local_fields, bundle.labels);
    } catch (const std::exception& e) {
        throw StageError("features", e.what());
    }
    io::write_features_file(join(out, "features/features.mat"), features, keep);

    json motion_report = {
        {"format", "cma-motion-report-1"},
        {"subjects", keep.size()},
        {"ffd_fit_rms_mm", summary_stats(ffd_rms)},
        {"fit4d_rms_mm", summary_stats(fit4d_rms)},
        {"ffd_fit_rms_max_mm", *std::max_element(ffd_rms.begin(), ffd_rms.end())},
        {"fit4d_rms_max_mm", *std::max_element(fit4d_rms.begin(), fit4d_rms.end())}};
    io::write_text_file(join(out, "features/motion_report.json"), motion_report.dump(1) + "\n");

    for (const auto& path : inputs) guard.add_input(path);
    guard.add_output(join(out, "features/features.mat"));
    guard.add_output(join(out, "features/motion_report.json"));
    guard.commit(false);
}

namespace {

embed::SdaConfig sda_config_from(const PipelineConfig& config, long input_dim) {
    embed::SdaConfig cfg;
    const std::string widths = config.get("embed.sda_widths");
    if (widths == "auto") {
        cfg.layer_widths = embed::default_sda_widths(input_dim, config.get_int("embed.sda_d"));
    } else {
        cfg.layer_widths.clear();
        std::istringstream ss(widths);
        std::string token;
        while (std::getline(ss, token, ',')) {
            if (!token.empty()) cfg.layer_widths.push_back(std::stoi(token));
        }
        cfg.layer_widths.push_back(config.get_int("embed.sda_d"));
    }
    cfg.learning_rate = config.get_double("embed.sda_learning_rate");
    cfg.corruption = config.get_double("embed.sda_corruption");
    cfg.pretrain_epochs = config.get_int("embed.sda_pretrain_epochs");
    cfg.finetune_epochs = config.get_int("embed.sda_finetune_epochs");
    cfg.batch_size = config.get_int("embed.sda_batch");
    cfg.seed = config.get_seed("seed") ^ 0x5da0001;
    return cfg;
}

}  // namespace

void stage_embed(const PipelineConfig& config, RunManifest& manifest, bool force) {
    const std::string out = config.output_dir();
    const std::vector<std::string> inputs = {join(out, "features/features.mat")};
    StageGuard guard(manifest, "embed", fnv1a64(config.slice({"embed.", "seed"})));
    if (!force && cache_hit(manifest, "embed", guard.record.config_checksum, inputs)) {
        guard.record = *manifest.find("embed");
        guard.commit(true);
        return;
    }
    ensure_dir(join(out, "embed"));
    std::vector<std::string> subject_ids;
    const auto features = io::read_features_file(join(out, "features/features.mat"), &subject_ids);
    const int grid_max = config.get_int("embed.grid_max");

    try {
        const auto pca = embed::pca_fit(features, config.get_double("embed.pca_variance"));
        io::write_embedding_file(join(out, "embed/pca.json"), pca, subject_ids);

        embed::LleConfig lle_cfg;
        lle_cfg.neighbours = config.get_int("embed.lle_neighbours");
        lle_cfg.regularization = config.get_double("embed.lle_regularization");
        if (config.get_bool("embed.lle_grid")) {
            const auto grid = embed::grid_search_d("lle", features, lle_cfg, {}, config.jobs(),
                                                   grid_max);
            io::write_embedding_file(join(out, "embed/lle.json"), grid.best, subject_ids, &grid);
        } else {
            lle_cfg.d = config.get_int("embed.lle_d");
            const auto lle = embed::lle_fit(features, lle_cfg);
            io::write_embedding_file(join(out, "embed/lle.json"), lle, subject_ids);
        }

        const auto sda_cfg = sda_config_from(config, features.X.rows());
        if (config.get_bool("embed.sda_grid")) {
            const auto grid = embed::grid_search_d("sda", features, {}, sda_cfg, config.jobs(),
                                                   grid_max);
            io::write_embedding_file(join(out, "embed/sda.json"), grid.best, subject_ids, &grid);
        } else {
            const auto sda = embed::sda_fit(features, sda_cfg);
            io::write_embedding_file(join(out, "embed/sda.json"), sda, subject_ids);
        }
    } catch (const std::exception& e) {
        throw StageError("embed", e.what());
    }

    for (const auto& path : inputs) guard.add_input(path);
    guard.add_output(join(out, "embed/pca.json"));
    guard.add_output(join(out, "embed/lle.json"));
    guard.add_output(join(out, "embed/sda.json"));
    guard.commit(false);
}

void stage_associate(const PipelineConfig& config, RunManifest& manifest, bool force) {
    const std::string out = config.output_dir();
    const std::vector<std::string> inputs = {
        join(out, "embed/pca.json"),        join(out, "embed/lle.json"),
        join(out, "embed/sda.json"),        join(out, "qc/curves.csv"),
        join(out, "qc/keep.txt"),           join(out, "cohort/covariates.csv")};
    StageGuard guard(manifest, "associate", fnv1a64(config.slice({"stats."})));
    if (!force && cache_hit(manifest, "associate", guard.record.config_checksum, inputs)) {
        guard.record = *manifest.find("associate");
        guard.commit(true);
        return;
    }
    ensure_dir(join(out, "report"));
    const auto keep = read_keep_list(out);
    if (keep.empty()) throw EmptyCohortError("associate");
    const std::set<std::string> kept(keep.begin(), keep.end());

    const auto all_covariates = io::read_covariates_file(join(out, "cohort/covariates.csv"));
    const auto curve_table = io::read_curves_file(join(out, "qc/curves.csv"));
    std::map<std::string, const geometry::VolumeCurve*> curve_by_id;
    for (std::size_t i = 0; i < curve_table.subject_ids.size(); ++i) {
        curve_by_id[curve_table.subject_ids[i]] = &curve_table.curves[i];
    }
    CovariateTable covariates;
    std::vector<double> ef;
    int dropped = 0;
    for (std::size_t i = 0; i < all_covariates.size(); ++i) {
        const auto& id = all_covariates.subject_ids[i];
        if (!kept.count(id)) continue;
        const auto it = curve_by_id.find(id);
        if (it == curve_by_id.end()) {
            ++dropped;
            continue;
        }
        covariates.subject_ids.push_back(id);
        covariates.records.push_back(all_covariates.records[i]);
        ef.push_back(geometry::ejection_fraction(*it->second));
    }

    std::vector<stats::AssociationResult> merged;
    const double alpha = config.get_double("stats.alpha");
    const int m = config.get_int("stats.bonferroni_m");
    bool ef_rows_taken = false;
    for (const std::string method : {"pca", "lle", "sda"}) {
        std::vector<std::string> emb_ids;
        const auto embedding =
            io::read_embedding_file(join(out, "embed/" + method + ".json"), &emb_ids);
        if (emb_ids != covariates.subject_ids) {
            throw StageError("associate", method + " embedding subjects do not match keep list");
        }
        const auto rows = stats::associate_all(embedding, ef, covariates, alpha, m);
        for (const auto& row : rows) {
            if (row.source == "ef" && ef_rows_taken) continue;
            merged.push_back(row);
        }
        ef_rows_taken = true;
    }
    io::write_association_report(join(out, "report/associations.json"),
                                 join(out, "report/associations.txt"), merged);
    json note = {{"format", "cma-associate-summary-1"},
                 {"subjects_tested", covariates.size()},
                 {"dropped_missing", dropped},
                 {"alpha", alpha},
                 {"bonferroni_m", m}};
    io::write_text_file(join(out, "report/associate_summary.json"), note.dump(1) + "\n");

    for (const auto& path : inputs) guard.add_input(path);
    guard.add_output(join(out, "report/associations.json"));
    guard.add_output(join(out, "report/associations.txt"));
    guard.add_output(join(out, "report/associate_summary.json"));
    guard.commit(false);
}

void stage_report(const PipelineConfig& config, RunManifest& manifest, bool force) {
    const std::string out = config.output_dir();
    const std::vector<std::string> inputs = {
        join(out, "cohort/cohort_summary.json"), join(out, "qc/qc_summary.json"),
        join(out, "embed/pca.json"),             join(out, "embed/lle.json"),
        join(out, "embed/sda.json"),             join(out, "report/associations.json")};
    StageGuard guard(manifest, "report", fnv1a64(std::string("report")));
    if (!force && cache_hit(manifest, "report", guard.record.config_checksum, inputs)) {
        guard.record = *manifest.find("report");
        guard.commit(true);
        return;
    }
    ensure_dir(join(out, "report"));

    json summary;
    summary["format"] = "cma-run-summary-1";
    summary["cohort"] = json::parse(io::read_text_file(join(out, "cohort/cohort_summary.json")));
    summary["qc"] = json::parse(io::read_text_file(join(out, "qc/qc_summary.json")));
    json embeddings;
    for (const std::string method : {"pca", "lle", "sda"}) {
        const json doc = json::parse(io::read_text_file(join(out, "embed/" + method + ".json")));
        json entry = {{"d", doc.at("d")},
                      {"reconstruction_error_mm", doc.at("reconstruction_error_mm")}};
        if (doc.contains("grid")) entry["grid"] = doc["grid"];
        embeddings[method] = entry;
    }
    summary["embeddings"] = embeddings;
    summary["associations"] =
        json::parse(io::read_text_file(join(out, "report/associations.json")))["results"];
    io::write_text_file(join(out, "report/summary.json"), summary.dump(1) + "\n");

    std::ostringstream text;
    text << "cohort: " << summary["cohort"]["subjects"] << " subjects, qc excluded "
         << summary["qc"]["excluded"] << "\n";
    text << "embeddings:\n";
    for (const std::string method : {"pca", "lle", "sda"}) {
        text << "  " << method << ": d=" << embeddings[method]["d"]
             << " eps_mm=" << embeddings[method]["reconstruction_error_mm"] << "\n";
    }
    text << "\nassociations (adjusted p, * = significant):\n";
    text << io::read_text_file(join(out, "report/associations.txt"));
    io::write_text_file(join(out, "report/summary.txt"), text.str());

    for (const auto& path : inputs) guard.add_input(path);
    guard.add_output(join(out, "report/summary.json"));
    guard.add_output(join(out, "report/summary.txt"));
    guard.commit(false);
}

RunManifest run_pipeline(const PipelineConfig& config, bool force) {
    const std::string out = config.output_dir();
    ensure_dir(out);
    RunManifest manifest = read_manifest(join(out, "manifest.json"));
    manifest.config_text = config.normalized_text();
    io::write_text_file(join(out, "config.resolved"), manifest.config_text);

    const std::vector<std::pair<std::string, void (*)(const PipelineConfig&, RunManifest&, bool)>>
        stages = {{"synth", stage_synth},     {"qc", stage_qc},
                  {"atlas", stage_atlas},     {"features", stage_features},
                  {"embed", stage_embed},     {"associate", stage_associate},
                  {"report", stage_report}};
    for (const auto& [name, fn] : stages) {
        try {
            fn(config, manifest, force);
        } catch (const StageError&) {
            write_manifest(join(out, "manifest.json"), manifest);
            throw;
        } catch (const std::exception& e) {
            write_manifest(join(out, "manifest.json"), manifest);
            throw StageError(name, e.what());
        }
        write_manifest(join(out, "manifest.json"), manifest);
    }
    return manifest;
}

void run_stage(const std::string& name, const PipelineConfig& config, bool force) {
    const std::string out = config.output_dir();
    ensure_dir(out);
    RunManifest manifest = read_manifest(join(out, "manifest.json"));
    manifest.config_text = config.normalized_text();
    using StageFn = void (*)(const PipelineConfig&, RunManifest&, bool);
    const std::map<std::string, StageFn> stages = {
        {"synth", stage_synth},   {"qc", stage_qc},
        {"atlas", stage_atlas},   {"features", stage_features},
        {"embed", stage_embed},   {"associate", stage_associate},
        {"report", stage_report}};
    const auto it = stages.find(name);
    if (it == stages.end()) throw ConfigError("unknown stage '" + name + "'");
    try {
        it->second(config, manifest, force);
    } catch (const StageError&) {
        write_manifest(join(out, "manifest.json"), manifest);
        throw;
    } catch (const std::exception& e) {
        write_manifest(join(out, "manifest.json"), manifest);
        throw StageError(name, e.what());
    }
    write_manifest(join(out, "manifest.json"), manifest);
}

std::string compare_runs(const std::string& manifest_a, const std::string& manifest_b) {
    const RunManifest a = read_manifest(manifest_a);
    const RunManifest b = read_manifest(manifest_b);
    std::ostringstream out;
    out << "stage              run A                run B                outputs\n";
    std::vector<std::string> names;
    for (const auto& s : a.stages) names.push_back(s.name);
    for (const auto& s : b.stages) {
        if (std::find(names.begin(), names.end(), s.name) == names.end()) {
            names.push_back(s.name);
        }
    }
    for (const auto& name : names) {
        const StageRecord* ra = a.find(name);
        const StageRecord* rb = b.find(name);
        auto cell = [](const StageRecord* r) {
            if (!r) return std::string("-");
            std::ostringstream c;
            c << (r->cached ? "cached" : "ran") << " " << std::fixed << std::setprecision(2)
              << r->seconds << "s";
            return c.str();
        };
        std::string outputs = "-";
        if (ra && rb) {
            outputs = (ra->outputs == rb->outputs) ? "identical" : "differ";
        }
        out << std::left << std::setw(19) << name << std::setw(21) << cell(ra) << std::setw(21)
            << cell(rb) << outputs << '\n';
    }
    out << "subjects: " << a.subjects_total << " vs " << b.subjects_total
        << "; qc excluded: " << a.qc_excluded << " vs " << b.qc_excluded << '\n';
    return out.str();
}

}  // namespace cma::pipeline
