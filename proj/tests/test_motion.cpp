#include "cma/cohort.hpp"
#include "cma/motion.hpp"

#include <doctest.h>

#include <cmath>
#include <random>
#include <sstream>

using namespace cma;
using namespace cma::motion;

namespace {

std::vector<Vec3> random_points(int n, double lo, double hi, std::uint64_t seed) {
    Rng rng(seed);
    std::uniform_real_distribution<double> unif(lo, hi);
    std::vector<Vec3> pts(n);
    for (auto& p : pts) p = Vec3(unif(rng), unif(rng), unif(rng));
    return pts;
}

// Regular sample lattice: every grid cell gets hit, so an exact fit is
// fully determined (no unsupported margin controls).
std::vector<Vec3> lattice_points(int per_axis, double lo, double hi) {
    std::vector<Vec3> pts;
    pts.reserve(per_axis * per_axis * per_axis);
    for (int i = 0; i < per_axis; ++i) {
        for (int j = 0; j < per_axis; ++j) {
            for (int k = 0; k < per_axis; ++k) {
                const double s = (hi - lo) / (per_axis - 1);
                pts.emplace_back(lo + s * i, lo + s * j, lo + s * k);
            }
        }
    }
    return pts;
}

}  // namespace

TEST_CASE("cubic B-spline weights form a partition of unity") {
    for (double u : {0.0, 0.1, 0.25, 0.5, 0.75, 0.9, 0.999}) {
        const auto w = bspline_weights(u);
        CHECK(std::abs(w[0] + w[1] + w[2] + w[3] - 1.0) < 1e-12);
    }
    // And through a full evaluation: constant coefficients reproduce the
    // constant anywhere inside the support.
    BsplineFfd3d ffd;
    ffd.origin = Vec3(-8.0, -8.0, -8.0);
    ffd.spacing = 8.0;
    ffd.dims = {7, 7, 7};
    ffd.coefficients.resize(ffd.coefficient_count(), 3);
    ffd.coefficients.rowwise() = Eigen::RowVector3d(1.5, -2.0, 0.25);
    Rng rng(2);
    std::uniform_real_distribution<double> unif(2.0, 28.0);
    for (int i = 0; i < 50; ++i) {
        const Vec3 p(unif(rng), unif(rng), unif(rng));
        CHECK((evaluate_ffd(ffd, p) - Vec3(1.5, -2.0, 0.25)).norm() < 1e-12);
    }
}

TEST_CASE("translation fields are reproduced exactly") {
    const auto points = lattice_points(9, -10.0, 10.0);
    const Vec3 shift(0.75, -0.5, 2.0);
    std::vector<Vec3> disp(points.size(), shift);
    const auto ffd = fit_ffd(points, disp, 7.0, 0.0);
    CHECK(ffd.fit_rms_mm < 1e-9);
    CHECK((evaluate_ffd(ffd, Vec3(0.2, 0.1, -0.3)) - shift).norm() < 1e-9);
}

TEST_CASE("linear fields fit with tiny residual") {
    Mat3 a;
    a << 0.02, 0.01, 0.0, -0.01, 0.03, 0.005, 0.0, 0.002, -0.015;
    const auto points = lattice_points(10, 0.0, 40.0);
    std::vector<Vec3> disp(points.size());
    for (std::size_t i = 0; i < points.size(); ++i) disp[i] = a * points[i];

    SUBCASE("overdetermined least squares") {
        const auto ffd = fit_ffd(points, disp, 12.0, 0.0);
        CHECK(ffd.fit_rms_mm < 1e-6);
        CHECK((evaluate_ffd(ffd, Vec3(20.0, 17.0, 23.0)) - a * Vec3(20.0, 17.0, 23.0)).norm() <
              1e-6);
    }
    SUBCASE("default ridge only mildly perturbs the fit") {
        const auto ffd = fit_ffd(points, disp, 12.0);
        CHECK(ffd.fit_rms_mm < 1e-4);
    }
    SUBCASE("underdetermined minimum-norm interpolates the samples") {
        const auto sparse_cloud = random_points(80, 0.0, 40.0, 4);
        std::vector<Vec3> sparse_disp(sparse_cloud.size());
        for (std::size_t i = 0; i < sparse_cloud.size(); ++i) {
            sparse_disp[i] = a * sparse_cloud[i];
        }
        const auto ffd = fit_ffd(sparse_cloud, sparse_disp, 6.0, 0.0);
        CHECK(ffd.fit_rms_mm < 1e-8);
    }
}

TEST_CASE("a single sample is matched exactly by the minimum-norm fit") {
    const std::vector<Vec3> points = {Vec3(1.0, 2.0, 3.0)};
    const std::vector<Vec3> disp = {Vec3(0.4, -0.2, 0.9)};
    const auto ffd = fit_ffd(points, disp, 6.0, 0.0);
    CHECK((evaluate_ffd(ffd, points[0]) - disp[0]).norm() < 1e-10);
}

TEST_CASE("fit and evaluation guard their inputs") {
    const auto points = random_points(20, 0.0, 10.0, 5);
    const std::vector<Vec3> disp(points.size(), Vec3::Zero());
    CHECK_THROWS_AS(fit_ffd(points, disp, 0.0), std::invalid_argument);
    CHECK_THROWS_AS(fit_ffd({}, {}, 5.0), std::invalid_argument);
    const auto ffd = fit_ffd(points, disp, 5.0);
    CHECK_THROWS_AS(evaluate_ffd(ffd, Vec3(1000.0, 0.0, 0.0)), std::domain_error);
}

TEST_CASE("composition of identity fields is static") {
    const auto points = random_points(50, 0.0, 20.0, 6);
    std::vector<Vec3> zero(points.size(), Vec3::Zero());
    std::vector<BsplineFfd3d> ffds(3, fit_ffd(points, zero, 8.0));
    const auto traj = compose_interframe(ffds, points);
    for (std::size_t t = 0; t < traj.frame_count(); ++t) {
        for (std::size_t v = 0; v < traj.vertex_count(); ++v) {
            CHECK(traj.displacement(t, v).norm() < 1e-9);
        }
    }
}

TEST_CASE("composed translations add and associate") {
    const auto points = random_points(40, 0.0, 24.0, 7);
    const Vec3 ta(0.5, 0.25, -0.125);
    const Vec3 tb(-0.25, 1.0, 0.5);
    const Vec3 tc(0.125, -0.5, 0.25);
    auto make_translation = [&](const Vec3& shift) {
        // Wide, fully sampled box so composed positions stay inside the
        // support and the exact fit is unique.
        const auto box = lattice_points(8, -5.0, 30.0);
        std::vector<Vec3> box_disp(box.size(), shift);
        return fit_ffd(box, box_disp, 6.0, 0.0);
    };
    const std::vector<BsplineFfd3d> ffds = {make_translation(ta), make_translation(tb),
                                            make_translation(tc)};
    const auto traj = compose_interframe(ffds, points);
    for (std::size_t v = 0; v < points.size(); ++v) {
        CHECK((traj.displacement(3, v) - (ta + tb + tc)).norm() < 1e-9);
    }

    // Grouping the chain differently changes nothing beyond roundoff.
    const auto first_two = compose_interframe({ffds[0], ffds[1]}, points);
    const auto then_third = compose_interframe({ffds[2]}, first_two.positions[2]);
    for (std::size_t v = 0; v < points.size(); ++v) {
        CHECK((then_third.positions[1][v] - traj.positions[3][v]).norm() < 1e-12);
    }
}

TEST_CASE("composed phantom trajectories track the analytic paths") {
    cohort::SubjectSpec spec;
    spec.rings = 10;
    spec.azimuth = 16;
    spec.frames = 12;
    const auto seq = cohort::synth_subject(spec);

    std::vector<BsplineFfd3d> ffds;
    double worst_rms = 0.0;
    for (int t = 0; t + 1 < spec.frames; ++t) {
        std::vector<Vec3> points, disp;
        for (std::size_t v = 0; v < seq.frames[t].endo.vertex_count(); ++v) {
            points.push_back(seq.frames[t].endo.vertices[v]);
            disp.push_back(seq.frames[t + 1].endo.vertices[v] - seq.frames[t].endo.vertices[v]);
        }
        for (std::size_t v = 0; v < seq.frames[t].epi.vertex_count(); ++v) {
            points.push_back(seq.frames[t].epi.vertices[v]);
            disp.push_back(seq.frames[t + 1].epi.vertices[v] - seq.frames[t].epi.vertices[v]);
        }
        ffds.push_back(fit_ffd(points, disp, 15.0));
        worst_rms = std::max(worst_rms, ffds.back().fit_rms_mm);
    }

    const auto traj = compose_interframe(ffds, seq.frames[0].endo.vertices);
    double worst_path_error = 0.0;
    for (int t = 1; t < spec.frames; ++t) {
        for (std::size_t v = 0; v < traj.vertex_count(); ++v) {
            const double err = (traj.positions[t][v] - seq.frames[t].endo.vertices[v]).norm();
            worst_path_error = std::max(worst_path_error, err);
        }
    }
    // Per-step fit error accumulates at most once per frame; the factor 5
    // covers pointwise error above the per-fit RMS.
    CHECK(worst_path_error < 5.0 * worst_rms * (spec.frames - 1));
    CHECK(worst_path_error < 0.5);  // absolute sanity floor, mm
}

TEST_CASE("space-time fit reproduces separable fields and vanishes at t=0") {
    const auto seeds = random_points(80, 0.0, 20.0, 8);
    const int T = 9;
    Mat3 g;
    g << 0.01, 0.002, 0.0, 0.0, -0.015, 0.001, 0.003, 0.0, 0.02;

    VertexTrajectorySet traj;
    traj.positions.resize(T);
    traj.positions[0] = seeds;
    for (int t = 1; t < T; ++t) {
        traj.positions[t].resize(seeds.size());
        for (std::size_t v = 0; v < seeds.size(); ++v) {
            traj.positions[t][v] = seeds[v] + static_cast<double>(t) * (g * seeds[v]);
        }
    }
    const auto field = fit_4dt(traj, 10.0, 3.0, 1e-12);
    CHECK(field.fit_rms_mm < 1e-6);
    for (std::size_t v = 0; v < seeds.size(); ++v) {
        CHECK(evaluate_4dt(field, seeds[v], 0.0).norm() == 0.0);  // exact by construction
        CHECK((evaluate_4dt(field, seeds[v], 5.0) - 5.0 * (g * seeds[v])).norm() < 1e-5);
    }

    SUBCASE("static trajectories fit to a zero field") {
        VertexTrajectorySet still;
        still.positions.assign(T, seeds);
        const auto zero_field = fit_4dt(still, 10.0, 3.0);
        CHECK(zero_field.fit_rms_mm < 1e-12);
        CHECK(evaluate_4dt(zero_field, seeds[0], 4.0).norm() < 1e-9);
    }
}

TEST_CASE("phantom space-time fit stays under the pinned residual") {
    cohort::SubjectSpec spec;
    spec.rings = 10;
    spec.azimuth = 16;
    spec.frames = 20;
    const auto seq = cohort::synth_subject(spec);
    VertexTrajectorySet traj;
    traj.positions.resize(spec.frames);
    for (int t = 0; t < spec.frames; ++t) traj.positions[t] = seq.frames[t].endo.vertices;
    const auto field = fit_4dt(traj, 25.0, 5.0);
    CHECK(field.fit_rms_mm < 0.1);
}

TEST_CASE("control grid dumps round-trip") {
    const auto points = random_points(60, 0.0, 15.0, 9);
    std::vector<Vec3> disp(points.size());
    for (std::size_t i = 0; i < points.size(); ++i) disp[i] = 0.05 * points[i];
    const auto ffd = fit_ffd(points, disp, 6.0);
    std::stringstream buffer;
    save_ffd(buffer, ffd);
    const auto loaded = load_ffd(buffer);
    CHECK(loaded.dims == ffd.dims);
    CHECK(loaded.coefficients == ffd.coefficients);
    CHECK((evaluate_ffd(loaded, points[7]) - evaluate_ffd(ffd, points[7])).norm() == 0.0);

    VertexTrajectorySet traj;
    traj.positions.resize(4);
    for (int t = 0; t < 4; ++t) {
        traj.positions[t].resize(points.size());
        for (std::size_t v = 0; v < points.size(); ++v) {
            traj.positions[t][v] = points[v] + 0.02 * t * points[v];
        }
    }
    const auto field = fit_4dt(traj, 8.0, 1.5);
    std::stringstream buffer4;
    save_4dt(buffer4, field);
    const auto loaded4 = load_4dt(buffer4);
    CHECK(loaded4.coefficients == field.coefficients);
    CHECK((evaluate_4dt(loaded4, points[3], 2.0) - evaluate_4dt(field, points[3], 2.0)).norm() ==
          0.0);
}
