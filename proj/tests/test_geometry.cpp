#include "cma/cohort.hpp"
#include "cma/geometry.hpp"
#include "test_meshes.hpp"

#include <doctest.h>

#include <cmath>
#include <set>

using namespace cma;
using namespace cma::geometry;

namespace {

LvFrame closed_frame(TriSurface endo) {
    LvFrame frame;
    frame.endo = std::move(endo);
    frame.epi = frame.endo;
    return frame;
}

}  // namespace

TEST_CASE("cavity volume matches the analytic sphere") {
    // 2562-vertex icosphere; 4/3 pi r^3 in mm^3, reported in ml.
    const auto frame = closed_frame(testing::icosphere(1.0, 4));
    const double analytic_mm3 = 4.0 / 3.0 * M_PI;
    const double volume_mm3 = cavity_volume(frame) * 1000.0;
    CHECK(std::abs(volume_mm3 - analytic_mm3) / analytic_mm3 < 0.01);

    const auto big = closed_frame(testing::icosphere(10.0, 4));
    CHECK(std::abs(cavity_volume(big) - 4.18879) / 4.18879 < 0.01);
}

TEST_CASE("cavity volume matches the analytic ellipsoid") {
    const double a = 25.0, b = 20.0, c = 55.0;
    const auto frame = closed_frame(testing::ellipsoid(a, b, c, 4));
    const double analytic_ml = 4.0 / 3.0 * M_PI * a * b * c / 1000.0;
    CHECK(std::abs(cavity_volume(frame) - analytic_ml) / analytic_ml < 0.01);
}

TEST_CASE("cavity volume scaling law and rigid invariance") {
    cohort::SubjectSpec spec;
    spec.rings = 16;
    spec.azimuth = 24;
    const auto seq = cohort::synth_subject(spec);
    const LvFrame& frame = seq.frames[5];
    const double v = cavity_volume(frame);

    LvFrame doubled = frame;
    for (auto& p : doubled.endo.vertices) p *= 2.0;
    doubled.basal_plane.point *= 2.0;
    CHECK(cavity_volume(doubled) == doctest::Approx(8.0 * v).epsilon(1e-12));

    Rng rng(7);
    const auto t = testing::random_similarity(rng, 1.0, 1.0);  // rigid
    LvFrame moved = frame;
    for (auto& p : moved.endo.vertices) p = t.apply(p);
    moved.basal_plane.point = t.apply(moved.basal_plane.point);
    moved.basal_plane.normal = t.rotation * moved.basal_plane.normal;
    CHECK(cavity_volume(moved) == doctest::Approx(v).epsilon(1e-9));
}

TEST_CASE("cavity volume is orientation independent") {
    auto frame = closed_frame(testing::icosphere(5.0, 3));
    const double v = cavity_volume(frame);
    for (auto& f : frame.endo.faces) std::swap(f[1], f[2]);
    CHECK(cavity_volume(frame) == doctest::Approx(v).epsilon(1e-12));
}

TEST_CASE("cavity volume input validation") {
    auto frame = closed_frame(testing::icosphere(5.0, 2));
    frame.endo.vertices[3].x() = std::nan("");
    CHECK_THROWS_WITH_AS(cavity_volume(frame), doctest::Contains("non-finite"),
                         std::invalid_argument);

    // Punch a hole far from the basal plane: open boundary must be rejected.
    auto holed = closed_frame(testing::icosphere(5.0, 2));
    holed.basal_plane.point = Vec3(0, 0, 5.0);
    holed.basal_plane.normal = Vec3(0, 0, 1);
    for (std::size_t f = 0; f < holed.endo.faces.size(); ++f) {
        const auto& face = holed.endo.faces[f];
        const Vec3 c = (holed.endo.vertices[face[0]] + holed.endo.vertices[face[1]] +
                        holed.endo.vertices[face[2]]) /
                       3.0;
        if (c.z() < -4.5) {
            holed.endo.faces.erase(holed.endo.faces.begin() + f);
            break;
        }
    }
    CHECK_THROWS_WITH_AS(cavity_volume(holed), doctest::Contains("basal plane"),
                         std::invalid_argument);
}

TEST_CASE("phantom frame with basal cap matches the analytic truncated volume") {
    cohort::SubjectSpec spec;
    spec.rings = 40;
    spec.azimuth = 60;
    const auto seq = cohort::synth_subject(spec);
    for (int t : {0, 7}) {
        const double w = cohort::cycle_waveform(t / static_cast<double>(spec.frames), spec.timing);
        const double analytic = cohort::analytic_cavity_volume(spec, w);
        CHECK(std::abs(cavity_volume(seq.frames[t]) - analytic) / analytic < 0.01);
    }
}

TEST_CASE("volume curve of a static sequence is constant") {
    cohort::SubjectSpec spec;
    spec.contraction_amplitude = 0.0;
    spec.longitudinal_shortening = 0.0;
    spec.twist_degrees = 0.0;
    const auto curve = volume_curve(cohort::synth_subject(spec));
    for (double v : curve.volumes_ml) {
        CHECK(v == doctest::Approx(curve.volumes_ml[0]).epsilon(1e-15));
    }
}

TEST_CASE("phantom volume curve has a single minimum") {
    cohort::SubjectSpec spec;
    const auto curve = volume_curve(cohort::synth_subject(spec));
    int minima = 0;
    const int n = static_cast<int>(curve.size());
    for (int i = 0; i < n; ++i) {
        const double prev = curve.volumes_ml[(i - 1 + n) % n];
        const double next = curve.volumes_ml[(i + 1) % n];
        if (curve.volumes_ml[i] < prev && curve.volumes_ml[i] < next) ++minima;
    }
    CHECK(minima == 1);
}

TEST_CASE("volume curve rejects too few frames") {
    cohort::SubjectSpec spec;
    auto seq = cohort::synth_subject(spec);
    seq.frames.resize(1);
    CHECK_THROWS_WITH_AS(volume_curve(seq), doctest::Contains("too few frames"),
                         std::invalid_argument);
}

TEST_CASE("ejection fraction basics") {
    VolumeCurve curve;
    curve.volumes_ml = {100, 80, 50, 70, 95};
    CHECK(ejection_fraction(curve) == doctest::Approx(50.0));

    VolumeCurve flat;
    flat.volumes_ml = {80, 80, 80, 80};
    CHECK(ejection_fraction(flat) == doctest::Approx(0.0));

    VolumeCurve scaled = curve;
    for (double& v : scaled.volumes_ml) v *= 3.7;
    CHECK(ejection_fraction(scaled) == doctest::Approx(ejection_fraction(curve)).epsilon(1e-12));
}

TEST_CASE("healthy phantom default lands in the expected EF band") {
    cohort::SubjectSpec spec;
    const double analytic = cohort::analytic_ejection_fraction(spec);
    const double measured = ejection_fraction(volume_curve(cohort::synth_subject(spec)));
    CHECK(measured > 55.0);
    CHECK(measured < 65.0);
    CHECK(std::abs(measured - analytic) < 1.0);
}

TEST_CASE("aha parcellation on a half sphere") {
    // Half-sphere medial point set; by the hat-box theorem equal height
    // bands carry equal area, so the three long-axis bands should hold
    // roughly equal vertex counts.
    const auto sphere = testing::icosphere(30.0, 3);
    TriSurface half;
    for (const auto& v : sphere.vertices) {
        if (v.z() <= 1e-9) half.vertices.push_back(v);
    }
    const Vec3 apex(0, 0, -30.0);
    const Vec3 axis(0, 0, 30.0);  // apex -> base, length = axis extent
    const auto labels = aha_parcellate(half, axis, apex, Vec3(1, 0, 0));

    std::set<int> present(labels.labels.begin(), labels.labels.end());
    CHECK(present.size() == 17);

    int basal = 0, mid = 0, apical = 0;
    for (int label : labels.labels) {
        if (label <= 6) {
            ++basal;
        } else if (label <= 12) {
            ++mid;
        } else {
            ++apical;  // apical sectors + cap form the lowest third
        }
    }
    const double third = static_cast<double>(labels.size()) / 3.0;
    CHECK(std::abs(basal - third) / third < 0.2);
    CHECK(std::abs(mid - third) / third < 0.2);
    CHECK(std::abs(apical - third) / third < 0.2);
}

TEST_CASE("aha parcellation is equivariant under similarity transforms") {
    // Random off-boundary points: band and sector quantization boundaries are
    // measure-zero, so labels must match exactly after a joint transform.
    TriSurface half;
    Rng cloud_rng(23);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    for (int i = 0; i < 400; ++i) {
        const double z = -25.0 + 25.0 * unif(cloud_rng);
        const double r = 25.0 * std::sqrt(1.0 - (z * z) / 625.0);
        const double az = 2.0 * M_PI * unif(cloud_rng);
        half.vertices.emplace_back(r * std::cos(az), r * std::sin(az), z);
    }
    const Vec3 apex(0, 0, -25.0);
    const Vec3 axis(0, 0, 25.0);
    const Vec3 rv(1, 0, 0);
    const auto labels = aha_parcellate(half, axis, apex, rv);

    Rng rng(11);
    const auto t = testing::random_similarity(rng);
    TriSurface moved = half;
    for (auto& v : moved.vertices) v = t.apply(v);
    const auto moved_labels =
        aha_parcellate(moved, t.scale * (t.rotation * axis), t.apply(apex), t.rotation * rv);
    CHECK(moved_labels.labels == labels.labels);
}

TEST_CASE("aha parcellation labels a cap-only point set as segment 17") {
    TriSurface points;
    Rng rng(3);
    std::uniform_real_distribution<double> unif(-1.0, 1.0);
    // Everything below one sixth of the axis length above the apex.
    for (int i = 0; i < 50; ++i) {
        points.vertices.emplace_back(2.0 * unif(rng), 2.0 * unif(rng),
                                     4.0 * (0.5 + 0.5 * unif(rng)));
    }
    const auto labels = aha_parcellate(points, Vec3(0, 0, 30.0), Vec3(0, 0, 0), Vec3(1, 0, 0));
    for (int label : labels.labels) CHECK(label == 17);
}

TEST_CASE("aha parcellation resolves on-axis vertices by nearest neighbour") {
    TriSurface mesh;
    for (int j = 0; j < 12; ++j) {
        const double az = 2.0 * M_PI * j / 12;
        mesh.vertices.emplace_back(10.0 * std::cos(az), 10.0 * std::sin(az), 15.0);
    }
    mesh.vertices.emplace_back(0.0, 0.0, 15.0);  // exactly on the axis, mid band
    const auto labels = aha_parcellate(mesh, Vec3(0, 0, 30.0), Vec3(0, 0, 0), Vec3(1, 0, 0));
    CHECK(labels.labels.back() >= 7);
    CHECK(labels.labels.back() <= 12);
}
