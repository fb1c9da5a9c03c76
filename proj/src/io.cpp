#include "cma/io.hpp"

#include <json.hpp>

#include <cinttypes>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace cma::io {

namespace {

using nlohmann::json;

[[noreturn]] void fail(const std::string& what) { throw std::runtime_error("io: " + what); }

std::ifstream open_in(const std::string& path) {
    std::ifstream in(path);
    if (!in) fail("cannot open '" + path + "' for reading");
    return in;
}

std::ofstream open_out(const std::string& path) {
    std::ofstream out(path);
    if (!out) fail("cannot open '" + path + "' for writing");
    return out;
}

// Round-trip float formatting shared by all writers.
std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

struct LineReader {
    std::istream& in;
    std::string context;
    int line_no = 0;

    std::string next() {
        std::string line;
        while (std::getline(in, line)) {
            ++line_no;
            if (!line.empty() && line.back() == '\r') line.pop_back();
            if (line.empty() || line[0] == '#') continue;
            return line;
        }
        fail(context + ": unexpected end of file at line " + std::to_string(line_no));
    }

    [[noreturn]] void error(const std::string& what) {
        fail(context + ": line " + std::to_string(line_no) + ": " + what);
    }
};

std::vector<std::string> split(const std::string& s, char sep = ' ') {
    std::vector<std::string> out;
    std::string token;
    std::istringstream ss(s);
    while (std::getline(ss, token, sep)) {
        if (!token.empty() || sep == ',') out.push_back(token);
    }
    return out;
}

double parse_double(LineReader& reader, const std::string& token) {
    try {
        std::size_t pos = 0;
        const double v = std::stod(token, &pos);
        if (pos != token.size()) reader.error("bad number '" + token + "'");
        return v;
    } catch (const std::exception&) {
        reader.error("bad number '" + token + "'");
    }
}

long parse_long(LineReader& reader, const std::string& token) {
    try {
        std::size_t pos = 0;
        const long v = std::stol(token, &pos);
        if (pos != token.size()) reader.error("bad integer '" + token + "'");
        return v;
    } catch (const std::exception&) {
        reader.error("bad integer '" + token + "'");
    }
}

void expect_key(LineReader& reader, const std::vector<std::string>& fields,
                const std::string& key, std::size_t count) {
    if (fields.empty() || fields[0] != key || fields.size() != count + 1) {
        reader.error("expected '" + key + "' with " + std::to_string(count) + " fields");
    }
}

Vec3 parse_vec3(LineReader& reader, const std::vector<std::string>& f, std::size_t first) {
    return {parse_double(reader, f[first]), parse_double(reader, f[first + 1]),
            parse_double(reader, f[first + 2])};
}

void write_vertices(std::ostream& out, const std::vector<Vec3>& vertices) {
    for (const auto& v : vertices) {
        out << fmt(v.x()) << ' ' << fmt(v.y()) << ' ' << fmt(v.z()) << '\n';
    }
}

std::vector<Vec3> read_vertices(LineReader& reader, long count) {
    std::vector<Vec3> out;
    out.reserve(count);
    for (long i = 0; i < count; ++i) {
        const auto f = split(reader.next());
        if (f.size() != 3) reader.error("expected 3 coordinates");
        out.push_back(parse_vec3(reader, f, 0));
    }
    return out;
}

void write_faces(std::ostream& out, const std::vector<std::array<int, 3>>& faces) {
    for (const auto& f : faces) out << f[0] << ' ' << f[1] << ' ' << f[2] << '\n';
}

std::vector<std::array<int, 3>> read_faces(LineReader& reader, long count) {
    std::vector<std::array<int, 3>> out;
    out.reserve(count);
    for (long i = 0; i < count; ++i) {
        const auto f = split(reader.next());
        if (f.size() != 3) reader.error("expected 3 vertex indices");
        out.push_back({static_cast<int>(parse_long(reader, f[0])),
                       static_cast<int>(parse_long(reader, f[1])),
                       static_cast<int>(parse_long(reader, f[2]))});
    }
    return out;
}

}  // namespace

void write_sequence(std::ostream& out, const geometry::LvSequence& seq) {
    const auto& first = seq.frames.front();
    out << "lvseq 1\n";
    out << "subject " << seq.subject_id << '\n';
    out << "frames " << seq.frames.size() << '\n';
    out << "frame_interval_ms " << fmt(seq.frame_interval_ms) << '\n';
    out << "endo_vertices " << first.endo.vertex_count() << '\n';
    out << "epi_vertices " << first.epi.vertex_count() << '\n';
    out << "endo_faces " << first.endo.face_count() << '\n';
    out << "epi_faces " << first.epi.face_count() << '\n';
    for (std::size_t t = 0; t < seq.frames.size(); ++t) {
        const auto& fr = seq.frames[t];
        out << "frame " << t << '\n';
        out << "basal_plane " << fmt(fr.basal_plane.point.x()) << ' '
            << fmt(fr.basal_plane.point.y()) << ' ' << fmt(fr.basal_plane.point.z()) << ' '
            << fmt(fr.basal_plane.normal.x()) << ' ' << fmt(fr.basal_plane.normal.y()) << ' '
            << fmt(fr.basal_plane.normal.z()) << '\n';
        write_vertices(out, fr.endo.vertices);
        write_vertices(out, fr.epi.vertices);
    }
    out << "endo_face_list\n";
    write_faces(out, first.endo.faces);
    out << "epi_face_list\n";
    write_faces(out, first.epi.faces);
}

geometry::LvSequence read_sequence(std::istream& in, const std::string& context) {
    LineReader reader{in, context.empty() ? "lvseq" : context};
    auto f = split(reader.next());
    if (f.size() != 2 || f[0] != "lvseq" || f[1] != "1") reader.error("bad lvseq header");

    geometry::LvSequence seq;
    f = split(reader.next());
    expect_key(reader, f, "subject", 1);
    seq.subject_id = f[1];
    f = split(reader.next());
    expect_key(reader, f, "frames", 1);
    const long frames = parse_long(reader, f[1]);
    f = split(reader.next());
    expect_key(reader, f, "frame_interval_ms", 1);
    seq.frame_interval_ms = parse_double(reader, f[1]);
    f = split(reader.next());
    expect_key(reader, f, "endo_vertices", 1);
    const long n_endo = parse_long(reader, f[1]);
    f = split(reader.next());
    expect_key(reader, f, "epi_vertices", 1);
    const long n_epi = parse_long(reader, f[1]);
    f = split(reader.next());
    expect_key(reader, f, "endo_faces", 1);
    const long f_endo = parse_long(reader, f[1]);
    f = split(reader.next());
    expect_key(reader, f, "epi_faces", 1);
    const long f_epi = parse_long(reader, f[1]);
    if (frames < 1 || n_endo < 3 || n_epi < 3) reader.error("implausible header counts");

    seq.frames.resize(frames);
    for (long t = 0; t < frames; ++t) {
        f = split(reader.next());
        expect_key(reader, f, "frame", 1);
        if (parse_long(reader, f[1]) != t) reader.error("frames out of order");
        f = split(reader.next());
        expect_key(reader, f, "basal_plane", 6);
        auto& frame = seq.frames[t];
        frame.basal_plane.point = parse_vec3(reader, f, 1);
        frame.basal_plane.normal = parse_vec3(reader, f, 4);
        frame.endo.vertices = read_vertices(reader, n_endo);
        frame.epi.vertices = read_vertices(reader, n_epi);
    }
    f = split(reader.next());
    if (f.size() != 1 || f[0] != "endo_face_list") reader.error("expected endo_face_list");
    const auto endo_faces = read_faces(reader, f_endo);
    f = split(reader.next());
    if (f.size() != 1 || f[0] != "epi_face_list") reader.error("expected epi_face_list");
    const auto epi_faces = read_faces(reader, f_epi);
    for (auto& frame : seq.frames) {
        frame.endo.faces = endo_faces;
        frame.epi.faces = epi_faces;
    }
    return seq;
}

void write_sequence_file(const std::string& path, const geometry::LvSequence& seq) {
    auto out = open_out(path);
    write_sequence(out, seq);
}

geometry::LvSequence read_sequence_file(const std::string& path) {
    auto in = open_in(path);
    return read_sequence(in, path);
}

void write_surface(std::ostream& out, const geometry::TriSurface& surface) {
    out << "surface 1\n";
    out << "vertices " << surface.vertex_count() << '\n';
    out << "faces " << surface.face_count() << '\n';
    write_vertices(out, surface.vertices);
    write_faces(out, surface.faces);
}

geometry::TriSurface read_surface(std::istream& in, const std::string& context) {
    LineReader reader{in, context.empty() ? "surface" : context};
    auto f = split(reader.next());
    if (f.size() != 2 || f[0] != "surface" || f[1] != "1") reader.error("bad surface header");
    f = split(reader.next());
    expect_key(reader, f, "vertices", 1);
    const long nv = parse_long(reader, f[1]);
    f = split(reader.next());
    expect_key(reader, f, "faces", 1);
    const long nf = parse_long(reader, f[1]);
    geometry::TriSurface surface;
    surface.vertices = read_vertices(reader, nv);
    surface.faces = read_faces(reader, nf);
    return surface;
}

void write_covariates_file(const std::string& path, const CovariateTable& table) {
    auto out = open_out(path);
    out << "subject_id,age,bmi,bfp,bmr,smoking,alcohol,hypertension\n";
    for (std::size_t i = 0; i < table.size(); ++i) {
        const auto& r = table.records[i];
        out << table.subject_ids[i] << ',' << fmt(r.age) << ',' << fmt(r.bmi) << ',' << fmt(r.bfp)
            << ',' << fmt(r.bmr) << ',' << r.smoking << ',' << r.alcohol << ',' << r.hypertension
            << '\n';
    }
}

CovariateTable read_covariates_file(const std::string& path) {
    auto in = open_in(path);
    LineReader reader{in, path};
    const std::string header = reader.next();
    if (header != "subject_id,age,bmi,bfp,bmr,smoking,alcohol,hypertension") {
        reader.error("unexpected covariate header");
    }
    CovariateTable table;
    std::string line;
    while (std::getline(in, line)) {
        ++reader.line_no;
        if (line.empty()) continue;
        const auto f = split(line, ',');
        if (f.size() != 8) reader.error("expected 8 comma-separated fields");
        CovariateRecord r;
        r.age = parse_double(reader, f[1]);
        r.bmi = parse_double(reader, f[2]);
        r.bfp = parse_double(reader, f[3]);
        r.bmr = parse_double(reader, f[4]);
        r.smoking = static_cast<int>(parse_long(reader, f[5]));
        r.alcohol = static_cast<int>(parse_long(reader, f[6]));
        r.hypertension = static_cast<int>(parse_long(reader, f[7]));
        table.subject_ids.push_back(f[0]);
        table.records.push_back(r);
    }
    return table;
}

void write_curves_file(const std::string& path, const CurveTable& table) {
    auto out = open_out(path);
    out << "subject_id,frame_interval_ms,volumes_ml...\n";
    for (std::size_t i = 0; i < table.curves.size(); ++i) {
        out << table.subject_ids[i] << ',' << fmt(table.curves[i].frame_interval_ms);
        for (double v : table.curves[i].volumes_ml) out << ',' << fmt(v);
        out << '\n';
    }
}

CurveTable read_curves_file(const std::string& path) {
    auto in = open_in(path);
    LineReader reader{in, path};
    reader.next();  // header
    CurveTable table;
    std::string line;
    while (std::getline(in, line)) {
        ++reader.line_no;
        if (line.empty()) continue;
        const auto f = split(line, ',');
        if (f.size() < 3) reader.error("curve row too short");
        geometry::VolumeCurve curve;
        curve.frame_interval_ms = parse_double(reader, f[1]);
        for (std::size_t k = 2; k < f.size(); ++k) {
            curve.volumes_ml.push_back(parse_double(reader, f[k]));
        }
        table.subject_ids.push_back(f[0]);
        table.curves.push_back(std::move(curve));
    }
    return table;
}

void write_atlas_bundle(const std::string& path, const AtlasBundle& bundle) {
    auto out = open_out(path);
    out << "atlas 1\n";
    out << "long_axis " << fmt(bundle.space.long_axis.x()) << ' '
        << fmt(bundle.space.long_axis.y()) << ' ' << fmt(bundle.space.long_axis.z()) << '\n';
    out << "axis_point " << fmt(bundle.space.axis_point.x()) << ' '
        << fmt(bundle.space.axis_point.y()) << ' ' << fmt(bundle.space.axis_point.z()) << '\n';
    out << "rv_direction " << fmt(bundle.rv_direction.x()) << ' ' << fmt(bundle.rv_direction.y())
        << ' ' << fmt(bundle.rv_direction.z()) << '\n';
    write_surface(out, bundle.space.mean_medial);
    out << "basis " << bundle.space.basis.size() << '\n';
    for (std::size_t v = 0; v < bundle.space.basis.size(); ++v) {
        const auto& b = bundle.space.basis;
        out << fmt(b.radial[v].x()) << ' ' << fmt(b.radial[v].y()) << ' ' << fmt(b.radial[v].z())
            << ' ' << fmt(b.circumferential[v].x()) << ' ' << fmt(b.circumferential[v].y()) << ' '
            << fmt(b.circumferential[v].z()) << ' ' << fmt(b.longitudinal[v].x()) << ' '
            << fmt(b.longitudinal[v].y()) << ' ' << fmt(b.longitudinal[v].z()) << '\n';
    }
    out << "labels " << bundle.labels.size() << '\n';
    for (int label : bundle.labels.labels) out << label << '\n';
}

AtlasBundle read_atlas_bundle(const std::string& path) {
    auto in = open_in(path);
    LineReader reader{in, path};
    auto f = split(reader.next());
    if (f.size() != 2 || f[0] != "atlas" || f[1] != "1") reader.error("bad atlas header");
    AtlasBundle bundle;
    f = split(reader.next());
    expect_key(reader, f, "long_axis", 3);
    bundle.space.long_axis = parse_vec3(reader, f, 1);
    f = split(reader.next());
    expect_key(reader, f, "axis_point", 3);
    bundle.space.axis_point = parse_vec3(reader, f, 1);
    f = split(reader.next());
    expect_key(reader, f, "rv_direction", 3);
    bundle.rv_direction = parse_vec3(reader, f, 1);
    bundle.space.mean_medial = read_surface(in, path);
    f = split(reader.next());
    expect_key(reader, f, "basis", 1);
    const long n = parse_long(reader, f[1]);
    auto& basis = bundle.space.basis;
    basis.radial.resize(n);
    basis.circumferential.resize(n);
    basis.longitudinal.resize(n);
    for (long v = 0; v < n; ++v) {
        const auto b = split(reader.next());
        if (b.size() != 9) reader.error("basis row needs 9 numbers");
        basis.radial[v] = parse_vec3(reader, b, 0);
        basis.circumferential[v] = parse_vec3(reader, b, 3);
        basis.longitudinal[v] = parse_vec3(reader, b, 6);
    }
    f = split(reader.next());
    expect_key(reader, f, "labels", 1);
    const long nl = parse_long(reader, f[1]);
    bundle.labels.labels.resize(nl);
    for (long v = 0; v < nl; ++v) {
        bundle.labels.labels[v] = static_cast<int>(parse_long(reader, split(reader.next())[0]));
    }
    return bundle;
}

void write_transforms_file(const std::string& path,
                           const std::vector<SubjectTransform>& subjects) {
    auto out = open_out(path);
    out << "transforms 1\n";
    out << "count " << subjects.size() << '\n';
    for (const auto& s : subjects) {
        out << "subject " << s.subject_id << '\n';
        const auto& sim = s.transform.similarity;
        out << "scale " << fmt(sim.scale) << '\n';
        out << "rotation";
        for (int r = 0; r < 3; ++r) {
            for (int c = 0; c < 3; ++c) out << ' ' << fmt(sim.rotation(r, c));
        }
        out << '\n';
        out << "translation " << fmt(sim.translation.x()) << ' ' << fmt(sim.translation.y()) << ' '
            << fmt(sim.translation.z()) << '\n';
        const auto& warp = s.transform.warp;
        out << "tps_lambda " << fmt(warp.lambda) << '\n';
        out << "tps_affine";
        for (int r = 0; r < 3; ++r) {
            for (int c = 0; c < 4; ++c) out << ' ' << fmt(warp.affine(r, c));
        }
        out << '\n';
        out << "tps_landmarks " << warp.landmarks.size() << '\n';
        for (std::size_t i = 0; i < warp.landmarks.size(); ++i) {
            const auto& p = warp.landmarks[i];
            out << fmt(p.x()) << ' ' << fmt(p.y()) << ' ' << fmt(p.z()) << ' '
                << fmt(warp.kernel_coefficients(i, 0)) << ' ' << fmt(warp.kernel_coefficients(i, 1))
                << ' ' << fmt(warp.kernel_coefficients(i, 2)) << '\n';
        }
        out << "medial_vertices " << s.medial_ed_vertices.size() << '\n';
        write_vertices(out, s.medial_ed_vertices);
    }
}

std::vector<SubjectTransform> read_transforms_file(const std::string& path) {
    auto in = open_in(path);
    LineReader reader{in, path};
    auto f = split(reader.next());
    if (f.size() != 2 || f[0] != "transforms" || f[1] != "1") reader.error("bad header");
    f = split(reader.next());
    expect_key(reader, f, "count", 1);
    const long count = parse_long(reader, f[1]);
    std::vector<SubjectTransform> subjects(count);
    for (long s = 0; s < count; ++s) {
        auto& subject = subjects[s];
        f = split(reader.next());
        expect_key(reader, f, "subject", 1);
        subject.subject_id = f[1];
        f = split(reader.next());
        expect_key(reader, f, "scale", 1);
        subject.transform.similarity.scale = parse_double(reader, f[1]);
        f = split(reader.next());
        expect_key(reader, f, "rotation", 9);
        for (int r = 0; r < 3; ++r) {
            for (int c = 0; c < 3; ++c) {
                subject.transform.similarity.rotation(r, c) = parse_double(reader, f[1 + r * 3 + c]);
            }
        }
        f = split(reader.next());
        expect_key(reader, f, "translation", 3);
        subject.transform.similarity.translation = parse_vec3(reader, f, 1);
        f = split(reader.next());
        expect_key(reader, f, "tps_lambda", 1);
        subject.transform.warp.lambda = parse_double(reader, f[1]);
        f = split(reader.next());
        expect_key(reader, f, "tps_affine", 12);
        for (int r = 0; r < 3; ++r) {
            for (int c = 0; c < 4; ++c) {
                subject.transform.warp.affine(r, c) = parse_double(reader, f[1 + r * 4 + c]);
            }
        }
        f = split(reader.next());
        expect_key(reader, f, "tps_landmarks", 1);
        const long nl = parse_long(reader, f[1]);
        subject.transform.warp.landmarks.resize(nl);
        subject.transform.warp.kernel_coefficients.resize(nl, 3);
        for (long i = 0; i < nl; ++i) {
            const auto row = split(reader.next());
            if (row.size() != 6) reader.error("tps landmark row needs 6 numbers");
            subject.transform.warp.landmarks[i] = parse_vec3(reader, row, 0);
            subject.transform.warp.kernel_coefficients(i, 0) = parse_double(reader, row[3]);
            subject.transform.warp.kernel_coefficients(i, 1) = parse_double(reader, row[4]);
            subject.transform.warp.kernel_coefficients(i, 2) = parse_double(reader, row[5]);
        }
        f = split(reader.next());
        expect_key(reader, f, "medial_vertices", 1);
        subject.medial_ed_vertices = read_vertices(reader, parse_long(reader, f[1]));
    }
    return subjects;
}

void write_features_file(const std::string& path, const embed::FeatureMatrix& features,
                         const std::vector<std::string>& subject_ids) {
    auto out = open_out(path);
    out << "features 1\n";
    out << "rows " << features.X.rows() << '\n';
    out << "cols " << features.X.cols() << '\n';
    out << "regions " << features.regions << '\n';
    out << "frames " << features.frames << '\n';
    out << "subjects";
    for (const auto& id : subject_ids) out << ' ' << id;
    out << '\n';
    for (long r = 0; r < features.X.rows(); ++r) {
        for (long c = 0; c < features.X.cols(); ++c) {
            if (c) out << ' ';
            out << fmt(features.X(r, c));
        }
        out << '\n';
    }
}

embed::FeatureMatrix read_features_file(const std::string& path,
                                        std::vector<std::string>* subject_ids) {
    auto in = open_in(path);
    LineReader reader{in, path};
    auto f = split(reader.next());
    if (f.size() != 2 || f[0] != "features" || f[1] != "1") reader.error("bad features header");
    embed::FeatureMatrix features;
    f = split(reader.next());
    expect_key(reader, f, "rows", 1);
    const long rows = parse_long(reader, f[1]);
    f = split(reader.next());
    expect_key(reader, f, "cols", 1);
    const long cols = parse_long(reader, f[1]);
    f = split(reader.next());
    expect_key(reader, f, "regions", 1);
    features.regions = static_cast<int>(parse_long(reader, f[1]));
    f = split(reader.next());
    expect_key(reader, f, "frames", 1);
    features.frames = static_cast<int>(parse_long(reader, f[1]));
    f = split(reader.next());
    if (f.empty() || f[0] != "subjects" || static_cast<long>(f.size()) != cols + 1) {
        reader.error("subjects line does not match cols");
    }
    if (subject_ids) subject_ids->assign(f.begin() + 1, f.end());
    features.X.resize(rows, cols);
    for (long r = 0; r < rows; ++r) {
        const auto row = split(reader.next());
        if (static_cast<long>(row.size()) != cols) reader.error("feature row width mismatch");
        for (long c = 0; c < cols; ++c) features.X(r, c) = parse_double(reader, row[c]);
    }
    const long N = cols;
    features.row_mean = features.X.rowwise().mean();
    features.row_scale.resize(rows);
    for (long r = 0; r < rows; ++r) {
        const double var = (features.X.row(r).array() - features.row_mean[r]).square().sum() / N;
        features.row_scale[r] = var > 0.0 ? std::sqrt(var) : 0.0;
    }
    return features;
}

namespace {

json embedding_to_json(const embed::Embedding& emb, const std::vector<std::string>& subject_ids,
                       const embed::GridSearchResult* grid) {
    json doc;
    doc["format"] = "cma-embedding-1";
    doc["method"] = emb.method;
    doc["d"] = emb.d;
    doc["reconstruction_error_mm"] = emb.reconstruction_error_mm;
    doc["hyperparameters"] = emb.hyperparameters;
    doc["subject_ids"] = subject_ids;
    // Row-standardized features feed every method; errors are de-standardized
    // back to millimetres before reporting.
    doc["standardized_features"] = true;
    std::vector<std::vector<double>> rows(emb.D.rows());
    for (long r = 0; r < emb.D.rows(); ++r) {
        rows[r].assign(emb.D.row(r).begin(), emb.D.row(r).end());
    }
    doc["D"] = rows;
    if (!emb.explained_variance.empty()) doc["explained_variance"] = emb.explained_variance;
    if (grid) {
        doc["grid"] = {{"candidates", grid->candidates},
                       {"errors_mm", grid->errors_mm},
                       {"best_d", grid->best_d},
                       {"non_elbow", grid->non_elbow}};
    }
    return doc;
}

}  // namespace

void write_embedding_file(const std::string& path, const embed::Embedding& embedding,
                          const std::vector<std::string>& subject_ids,
                          const embed::GridSearchResult* grid) {
    auto out = open_out(path);
    out << embedding_to_json(embedding, subject_ids, grid).dump(1) << '\n';
}

embed::Embedding read_embedding_file(const std::string& path,
                                     std::vector<std::string>* subject_ids) {
    auto in = open_in(path);
    json doc;
    try {
        in >> doc;
    } catch (const std::exception& e) {
        fail(path + ": " + e.what());
    }
    if (doc.value("format", "") != "cma-embedding-1") fail(path + ": bad embedding format");
    embed::Embedding emb;
    emb.method = doc.at("method").get<std::string>();
    emb.d = doc.at("d").get<int>();
    emb.reconstruction_error_mm = doc.at("reconstruction_error_mm").get<double>();
    for (const auto& [key, value] : doc.at("hyperparameters").items()) {
        emb.hyperparameters[key] = value.get<double>();
    }
    if (subject_ids) *subject_ids = doc.at("subject_ids").get<std::vector<std::string>>();
    const auto rows = doc.at("D").get<std::vector<std::vector<double>>>();
    if (!rows.empty()) {
        emb.D.resize(static_cast<long>(rows.size()), static_cast<long>(rows[0].size()));
        for (std::size_t r = 0; r < rows.size(); ++r) {
            for (std::size_t c = 0; c < rows[r].size(); ++c) {
                emb.D(static_cast<long>(r), static_cast<long>(c)) = rows[r][c];
            }
        }
    }
    if (doc.contains("explained_variance")) {
        emb.explained_variance = doc["explained_variance"].get<std::vector<double>>();
    }
    return emb;
}

std::string qc_report_jsonl(const std::string& subject_id, const qc::QcReport& report) {
    json doc;
    doc["subject_id"] = subject_id;
    doc["pass"] = report.pass;
    std::vector<std::string> reasons;
    for (const auto r : report.reasons) reasons.push_back(qc::to_string(r));
    doc["reasons"] = reasons;
    doc["ed_index"] = report.ed_index;
    doc["es_index"] = report.es_index;
    doc["rapid_inflow_end"] = report.phases.rapid_inflow_end;
    doc["diastasis_end"] = report.phases.diastasis_end;
    doc["diastasis_empty"] = report.diastasis_empty;
    return doc.dump();
}

void write_association_report(const std::string& json_path, const std::string& text_path,
                              const std::vector<stats::AssociationResult>& rows) {
    json doc;
    doc["format"] = "cma-associations-1";
    json entries = json::array();
    for (const auto& r : rows) {
        json e;
        e["covariate"] = r.covariate;
        e["kind"] = r.categorical ? "categorical" : "continuous";
        e["source"] = r.source;
        e["method"] = r.method;
        e["statistic"] = r.statistic;
        if (r.r_statistic >= 0.0) e["r_statistic"] = r.r_statistic;
        e["raw_p"] = r.raw_p;
        e["adjusted_p"] = r.adjusted_p;
        e["significant"] = r.significant;
        e["ridge_applied"] = r.ridge_applied;
        if (!r.error.empty()) e["error"] = r.error;
        entries.push_back(e);
    }
    doc["results"] = entries;
    write_text_file(json_path, doc.dump(1) + "\n");

    // Rendered table: covariate rows, method columns, R (continuous) and
    // adjusted p per cell; stars mark adjusted p < 0.05.
    std::vector<std::string> methods;
    for (const auto& r : rows) {
        if (std::find(methods.begin(), methods.end(), r.method) == methods.end()) {
            methods.push_back(r.method);
        }
    }
    std::vector<std::string> covariates;
    for (const auto& r : rows) {
        if (std::find(covariates.begin(), covariates.end(), r.covariate) == covariates.end()) {
            covariates.push_back(r.covariate);
        }
    }
    std::ostringstream table;
    table << std::left << std::setw(14) << "covariate";
    for (const auto& m : methods) {
        table << std::setw(11) << ("R:" + m) << std::setw(11) << ("p:" + m);
    }
    table << '\n';
    for (const auto& cov : covariates) {
        table << std::left << std::setw(14) << cov;
        for (const auto& m : methods) {
            const stats::AssociationResult* found = nullptr;
            for (const auto& r : rows) {
                if (r.covariate == cov && r.method == m) found = &r;
            }
            std::ostringstream rcell, pcell;
            if (!found || !found->error.empty()) {
                rcell << "-";
                pcell << (found ? "err" : "-");
            } else {
                if (found->r_statistic >= 0.0) {
                    rcell << std::fixed << std::setprecision(2) << found->r_statistic;
                } else {
                    rcell << "-";
                }
                pcell << std::fixed << std::setprecision(4) << found->adjusted_p;
                if (found->significant) pcell << '*';
            }
            table << std::setw(11) << rcell.str() << std::setw(11) << pcell.str();
        }
        table << '\n';
    }
    write_text_file(text_path, table.str());
}

std::string read_text_file(const std::string& path) {
    auto in = open_in(path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_text_file(const std::string& path, const std::string& content) {
    auto out = open_out(path);
    out << content;
}

std::uint64_t checksum_file(const std::string& path) {
    return fnv1a64(read_text_file(path));
}

}  // namespace cma::io
