#include "cma/atlas.hpp"
#include "cma/cohort.hpp"
#include "test_meshes.hpp"

#include <doctest.h>

#include <cmath>
#include <random>

using namespace cma;
using namespace cma::atlas;

namespace {

std::vector<Vec3> random_cloud(int n, double extent, std::uint64_t seed) {
    Rng rng(seed);
    std::uniform_real_distribution<double> unif(-extent, extent);
    std::vector<Vec3> pts(n);
    for (auto& p : pts) p = Vec3(unif(rng), unif(rng), unif(rng));
    return pts;
}

TpsWarp identity_warp(const std::vector<Vec3>& landmarks) {
    return tps_fit(landmarks, landmarks, 0.0);
}

}  // namespace

TEST_CASE("procrustes recovers the identity") {
    const auto pts = random_cloud(30, 20.0, 1);
    const auto t = procrustes(pts, pts);
    CHECK(std::abs(t.scale - 1.0) < 1e-10);
    CHECK((t.rotation - Mat3::Identity()).norm() < 1e-10);
    CHECK(t.translation.norm() < 1e-9);
}

TEST_CASE("procrustes recovers a random similarity") {
    const auto pts = random_cloud(40, 15.0, 2);
    Rng rng(3);
    for (int trial = 0; trial < 5; ++trial) {
        const auto truth = testing::random_similarity(rng);
        std::vector<Vec3> target(pts.size());
        for (std::size_t i = 0; i < pts.size(); ++i) target[i] = truth.apply(pts[i]);
        const auto fit = procrustes(pts, target);
        CHECK(std::abs(fit.scale - truth.scale) < 1e-8);
        CHECK((fit.rotation - truth.rotation).norm() < 1e-8);
        CHECK((fit.translation - truth.translation).norm() < 1e-7);
        CHECK(std::abs(fit.rotation.determinant() - 1.0) < 1e-10);
    }
}

TEST_CASE("procrustes refuses reflections and degenerate input") {
    const auto pts = random_cloud(25, 10.0, 4);
    std::vector<Vec3> reflected(pts.size());
    for (std::size_t i = 0; i < pts.size(); ++i) {
        reflected[i] = Vec3(-pts[i].x(), pts[i].y(), pts[i].z());
    }
    const auto fit = procrustes(pts, reflected);
    CHECK(fit.rotation.determinant() > 0.0);
    double residual = 0.0;
    for (std::size_t i = 0; i < pts.size(); ++i) {
        residual += (fit.apply(pts[i]) - reflected[i]).squaredNorm();
    }
    CHECK(residual > 1.0);  // a proper rotation cannot match a reflection

    std::vector<Vec3> line;
    for (int i = 0; i < 10; ++i) line.emplace_back(i, 2.0 * i, -i);
    CHECK_THROWS_WITH_AS(procrustes(line, line), doctest::Contains("degenerate"),
                         std::invalid_argument);
    CHECK_THROWS_AS(procrustes({pts[0], pts[1], pts[2]}, {pts[0], pts[1], pts[2]}),
                    std::invalid_argument);
}

TEST_CASE("gpa recovers a common shape under random similarities") {
    const auto shape = random_cloud(60, 12.0, 5);
    Rng rng(6);
    std::vector<std::vector<Vec3>> cohort;
    for (int n = 0; n < 12; ++n) {
        const auto t = testing::random_similarity(rng);
        std::vector<Vec3> copy(shape.size());
        for (std::size_t v = 0; v < shape.size(); ++v) copy[v] = t.apply(shape[v]);
        cohort.push_back(std::move(copy));
    }
    const auto result = gpa(cohort);
    double worst = 0.0;
    for (std::size_t n = 0; n < cohort.size(); ++n) {
        for (std::size_t v = 0; v < shape.size(); ++v) {
            worst = std::max(worst, (result.transforms[n].apply(cohort[n][v]) -
                                     result.mean_shape[v])
                                        .norm());
        }
    }
    CHECK(worst < 1e-8);

    SUBCASE("mean is order independent within tolerance") {
        auto reversed = cohort;
        std::reverse(reversed.begin(), reversed.end());
        const auto result2 = gpa(reversed);
        double diff = 0.0;
        for (std::size_t v = 0; v < shape.size(); ++v) {
            diff = std::max(diff, (result2.mean_shape[v] - result.mean_shape[v]).norm());
        }
        CHECK(diff < 1e-7);
    }
}

TEST_CASE("gpa on duplicated meshes converges immediately") {
    const auto shape = random_cloud(40, 9.0, 7);
    const std::vector<std::vector<Vec3>> cohort(5, shape);
    const auto result = gpa(cohort);
    CHECK(result.iterations <= 2);
    for (std::size_t v = 0; v < shape.size(); ++v) {
        CHECK((result.transforms[0].apply(shape[v]) - result.mean_shape[v]).norm() < 1e-10);
    }
}

TEST_CASE("tps reproduces affine maps with vanishing kernel coefficients") {
    const auto src = random_cloud(30, 10.0, 8);
    Mat3 a;
    a << 1.1, 0.2, 0.0, -0.1, 0.9, 0.05, 0.02, 0.0, 1.05;
    const Vec3 b(2.0, -1.0, 0.5);
    std::vector<Vec3> dst(src.size());
    for (std::size_t i = 0; i < src.size(); ++i) dst[i] = a * src[i] + b;
    const auto warp = tps_fit(src, dst, 0.0);
    CHECK(warp.kernel_coefficients.norm() < 1e-8);
    CHECK((warp.affine.leftCols<3>() - a).norm() < 1e-8);
    CHECK((warp.affine.col(3) - b).norm() < 1e-7);
}

TEST_CASE("tps interpolates landmarks exactly at lambda zero") {
    const auto src = random_cloud(80, 14.0, 9);
    Rng rng(10);
    std::normal_distribution<double> gauss(0.0, 1.0);
    std::vector<Vec3> dst(src.size());
    for (std::size_t i = 0; i < src.size(); ++i) {
        // Smooth-ish random deformation.
        dst[i] = src[i] + Vec3(std::sin(0.1 * src[i].y()) + 0.1 * gauss(rng),
                               0.05 * src[i].x() + 0.1 * gauss(rng), 0.1 * gauss(rng));
    }
    const auto warp = tps_fit(src, dst, 0.0);
    for (std::size_t i = 0; i < src.size(); ++i) {
        CHECK((warp.apply(src[i]) - dst[i]).norm() < 1e-8);
    }
    // Side conditions: kernel coefficients orthogonal to the affine space.
    Eigen::RowVector3d sum = Eigen::RowVector3d::Zero();
    Mat3 moment = Mat3::Zero();
    for (std::size_t i = 0; i < src.size(); ++i) {
        sum += warp.kernel_coefficients.row(i);
        moment += src[i] * warp.kernel_coefficients.row(i);
    }
    CHECK(sum.norm() < 1e-8);
    CHECK(moment.norm() < 1e-8);
}

TEST_CASE("tps tends to the least-squares affine fit as lambda grows") {
    const auto src = random_cloud(50, 10.0, 11);
    Rng rng(12);
    std::normal_distribution<double> gauss(0.0, 0.8);
    std::vector<Vec3> dst(src.size());
    for (std::size_t i = 0; i < src.size(); ++i) {
        dst[i] = 1.05 * src[i] + Vec3(gauss(rng), gauss(rng), gauss(rng));
    }
    // Affine least-squares oracle.
    Eigen::MatrixXd design(src.size(), 4);
    Eigen::MatrixXd rhs(src.size(), 3);
    for (std::size_t i = 0; i < src.size(); ++i) {
        design.row(i) << src[i].x(), src[i].y(), src[i].z(), 1.0;
        rhs.row(i) = dst[i].transpose();
    }
    const Eigen::MatrixXd beta = design.colPivHouseholderQr().solve(rhs);

    const auto warp = tps_fit(src, dst, 1e9);
    Rng probe(13);
    std::uniform_real_distribution<double> unif(-9.0, 9.0);
    for (int k = 0; k < 20; ++k) {
        const Vec3 x(unif(probe), unif(probe), unif(probe));
        const Vec3 affine = beta.transpose() * Eigen::Vector4d(x.x(), x.y(), x.z(), 1.0);
        CHECK((warp.apply(x) - affine).norm() < 1e-3);
    }
}

TEST_CASE("tps rejects coplanar landmarks at lambda zero") {
    std::vector<Vec3> flat, dst;
    Rng rng(14);
    std::uniform_real_distribution<double> unif(-5.0, 5.0);
    for (int i = 0; i < 20; ++i) {
        flat.emplace_back(unif(rng), unif(rng), 0.0);
        dst.emplace_back(unif(rng), unif(rng), unif(rng));
    }
    CHECK_THROWS_WITH(tps_fit(flat, dst, 0.0), doctest::Contains("lambda"));
}

TEST_CASE("tps analytic jacobian matches finite differences") {
    const auto src = random_cloud(40, 10.0, 15);
    Rng rng(16);
    std::normal_distribution<double> gauss(0.0, 0.5);
    std::vector<Vec3> dst(src.size());
    for (std::size_t i = 0; i < src.size(); ++i) {
        dst[i] = src[i] + Vec3(gauss(rng), gauss(rng), gauss(rng));
    }
    const auto warp = tps_fit(src, dst, 0.0);

    const double h = 1e-4;
    std::uniform_real_distribution<double> unif(-9.5, 9.5);
    double worst = 0.0;
    for (int k = 0; k < 1000; ++k) {
        const Vec3 x(unif(rng), unif(rng), unif(rng));
        const Mat3 analytic = tps_jacobian(warp, x);
        Mat3 numeric;
        for (int axis = 0; axis < 3; ++axis) {
            Vec3 dx = Vec3::Zero();
            dx[axis] = h;
            numeric.col(axis) = (warp.apply(x + dx) - warp.apply(x - dx)) / (2.0 * h);
        }
        worst = std::max(worst, (analytic - numeric).norm() / std::max(1.0, analytic.norm()));
    }
    CHECK(worst < 1e-4);

    SUBCASE("identity warp has the identity jacobian") {
        const auto id = identity_warp(src);
        CHECK((tps_jacobian(id, Vec3(1.0, 2.0, 3.0)) - Mat3::Identity()).norm() < 1e-7);
    }
    SUBCASE("affine warp has a constant jacobian") {
        Mat3 a;
        a << 1.2, 0.1, 0.0, 0.0, 0.8, 0.1, -0.1, 0.0, 1.1;
        std::vector<Vec3> affine_dst(src.size());
        for (std::size_t i = 0; i < src.size(); ++i) affine_dst[i] = a * src[i];
        const auto affine_warp = tps_fit(src, affine_dst, 0.0);
        CHECK((tps_jacobian(affine_warp, Vec3(3.0, -2.0, 5.0)) - a).norm() < 1e-7);
        CHECK((tps_jacobian(affine_warp, src[5]) - a).norm() < 1e-7);  // r = 0 path
    }
}

TEST_CASE("medial surface of concentric spheres sits at the mid radius") {
    const auto endo = testing::icosphere(20.0, 4);
    const auto epi = testing::icosphere(30.0, 4);
    const auto result = medial_surface(endo, epi, 1000);
    CHECK(result.fallback_fraction <= 0.05);
    const double n = static_cast<double>(result.surface.vertex_count());
    CHECK(n > 800);
    CHECK(n < 1200);
    for (const auto& v : result.surface.vertices) {
        CHECK(std::abs(v.norm() - 25.0) / 25.0 < 0.02);
    }
}

TEST_CASE("medial surface of coincident surfaces is that surface") {
    const auto endo = testing::icosphere(22.0, 2);
    const auto result = medial_surface(endo, endo, 4000);
    REQUIRE(result.surface.vertex_count() == endo.vertex_count());
    for (std::size_t v = 0; v < endo.vertex_count(); ++v) {
        CHECK((result.surface.vertices[v] - endo.vertices[v]).norm() < 1e-12);
    }
}

TEST_CASE("medial surface of concentric ellipsoids stays inside the shell") {
    const auto endo = testing::ellipsoid(20.0, 18.0, 45.0, 3);
    const auto epi = testing::ellipsoid(29.0, 27.0, 54.0, 3);
    const auto result = medial_surface(endo, epi, 400);
    auto implicit = [](const Vec3& p, double a, double b, double c) {
        return p.x() * p.x() / (a * a) + p.y() * p.y() / (b * b) + p.z() * p.z() / (c * c);
    };
    for (const auto& v : result.surface.vertices) {
        CHECK(implicit(v, 20.0, 18.0, 45.0) > 1.0);  // outside endo
        CHECK(implicit(v, 29.0, 27.0, 54.0) < 1.0);  // inside epi
    }
}

TEST_CASE("pushforward handles identity, rotation and scale exactly") {
    const auto landmarks = random_cloud(30, 10.0, 17);
    DisplacementField u;
    u.tag = FrameTag::Subject;
    u.vectors.resize(3);
    Rng rng(18);
    std::normal_distribution<double> gauss(0.0, 1.0);
    for (auto& frame : u.vectors) {
        frame.resize(landmarks.size());
        for (auto& vec : frame) vec = Vec3(gauss(rng), gauss(rng), gauss(rng));
    }

    SUBCASE("identity transform is a no-op") {
        SubjectToAtlasTransform id;
        id.warp = identity_warp(landmarks);
        const auto out = pushforward(u, id, landmarks);
        CHECK(out.tag == FrameTag::Atlas);
        for (std::size_t t = 0; t < 3; ++t) {
            for (std::size_t v = 0; v < landmarks.size(); ++v) {
                CHECK((out.vectors[t][v] - u.vectors[t][v]).norm() < 1e-10);
            }
        }
    }
    SUBCASE("pure rotation rotates every vector") {
        const auto t = testing::random_similarity(rng, 1.0, 1.0);
        SubjectToAtlasTransform rot;
        rot.similarity.rotation = t.rotation;
        std::vector<Vec3> mapped(landmarks.size());
        for (std::size_t i = 0; i < landmarks.size(); ++i) {
            mapped[i] = rot.similarity.apply(landmarks[i]);
        }
        rot.warp = identity_warp(mapped);
        const auto out = pushforward(u, rot, landmarks);
        for (std::size_t v = 0; v < landmarks.size(); ++v) {
            CHECK((out.vectors[1][v] - t.rotation * u.vectors[1][v]).norm() < 1e-10);
        }
    }
    SUBCASE("uniform scale multiplies every vector") {
        SubjectToAtlasTransform sc;
        sc.similarity.scale = 1.7;
        std::vector<Vec3> mapped(landmarks.size());
        for (std::size_t i = 0; i < landmarks.size(); ++i) {
            mapped[i] = sc.similarity.apply(landmarks[i]);
        }
        sc.warp = identity_warp(mapped);
        const auto out = pushforward(u, sc, landmarks);
        for (std::size_t v = 0; v < landmarks.size(); ++v) {
            CHECK((out.vectors[2][v] - 1.7 * u.vectors[2][v]).norm() < 1e-10);
        }
    }
    SUBCASE("pushforward is linear in the field") {
        SubjectToAtlasTransform id;
        id.warp = identity_warp(landmarks);
        DisplacementField u2 = u;
        for (auto& frame : u2.vectors) {
            for (auto& vec : frame) vec = vec.cwiseProduct(Vec3(0.5, -1.0, 2.0));
        }
        DisplacementField combo = u;
        for (std::size_t t = 0; t < 3; ++t) {
            for (std::size_t v = 0; v < landmarks.size(); ++v) {
                combo.vectors[t][v] = 2.0 * u.vectors[t][v] + 3.0 * u2.vectors[t][v];
            }
        }
        const auto a = pushforward(u, id, landmarks);
        const auto b = pushforward(u2, id, landmarks);
        const auto c = pushforward(combo, id, landmarks);
        for (std::size_t v = 0; v < landmarks.size(); ++v) {
            CHECK((c.vectors[1][v] - 2.0 * a.vectors[1][v] - 3.0 * b.vectors[1][v]).norm() <
                  1e-12);
        }
    }
    SUBCASE("frame tag is enforced") {
        DisplacementField wrong = u;
        wrong.tag = FrameTag::Atlas;
        SubjectToAtlasTransform id;
        id.warp = identity_warp(landmarks);
        CHECK_THROWS_WITH(pushforward(wrong, id, landmarks), doctest::Contains("tag"));
    }
}

TEST_CASE("cylindrical basis is right-handed and orthonormal") {
    cohort::SubjectSpec spec;
    const auto seq = cohort::synth_subject(spec);
    const auto medial = medial_surface(seq.frames[0].endo, seq.frames[0].epi, 4000);
    auto atlas_space = build_atlas_space(medial.surface);

    for (std::size_t v = 0; v < atlas_space.basis.size(); ++v) {
        const auto& b = atlas_space.basis;
        CHECK(std::abs(b.radial[v].norm() - 1.0) < 1e-10);
        CHECK(std::abs(b.circumferential[v].norm() - 1.0) < 1e-10);
        CHECK(std::abs(b.longitudinal[v].norm() - 1.0) < 1e-10);
        CHECK(std::abs(b.radial[v].dot(b.circumferential[v])) < 1e-8);
        CHECK(std::abs(b.radial[v].dot(b.longitudinal[v])) < 1e-8);
        // Right-handed: r x c = l.
        CHECK((b.radial[v].cross(b.circumferential[v]) - b.longitudinal[v]).norm() < 1e-8);
    }

    SUBCASE("explicit quadrant check on a z-axis atlas") {
        AtlasSpace tiny;
        tiny.mean_medial.vertices = {Vec3(10, 0, 5), Vec3(0, 10, 5)};
        tiny.long_axis = Vec3(0, 0, 1);
        tiny.axis_point = Vec3::Zero();
        const auto basis = cylindrical_basis(tiny);
        CHECK((basis.radial[0] - Vec3(1, 0, 0)).norm() < 1e-12);
        CHECK((basis.circumferential[0] - Vec3(0, 1, 0)).norm() < 1e-12);
        CHECK((basis.longitudinal[0] - Vec3(0, 0, 1)).norm() < 1e-12);
    }
    SUBCASE("rotating the atlas rotates every basis vector") {
        Rng rng(19);
        const auto t = testing::random_similarity(rng, 1.0, 1.0);
        AtlasSpace rotated;
        rotated.mean_medial = atlas_space.mean_medial;
        for (auto& v : rotated.mean_medial.vertices) v = t.apply(v);
        rotated.long_axis = t.rotation * atlas_space.long_axis;
        rotated.axis_point = t.apply(atlas_space.axis_point);
        const auto basis = cylindrical_basis(rotated);
        for (std::size_t v = 0; v < basis.size(); ++v) {
            CHECK((basis.radial[v] - t.rotation * atlas_space.basis.radial[v]).norm() < 1e-8);
        }
    }
}

TEST_CASE("local projection preserves norms and component meaning") {
    AtlasSpace tiny;
    tiny.mean_medial.vertices = {Vec3(10, 0, 5), Vec3(0, 10, 5), Vec3(-10, 0, 7)};
    tiny.long_axis = Vec3(0, 0, 1);
    tiny.axis_point = Vec3::Zero();
    const auto basis = cylindrical_basis(tiny);

    DisplacementField u;
    u.tag = FrameTag::Atlas;
    u.vectors = {{Vec3(0, 0, 2.5), Vec3(0, 3.0, 0), Vec3(1.0, 2.0, -1.0)}};
    const auto local = project_local(u, basis);
    CHECK(local.tag == FrameTag::Local);
    // Axis-parallel displacement becomes purely longitudinal.
    CHECK((local.vectors[0][0] - Vec3(0, 0, 2.5)).norm() < 1e-12);
    // Radial displacement at the +y vertex is radial in local terms.
    CHECK((local.vectors[0][1] - Vec3(3.0, 0, 0)).norm() < 1e-12);
    // Norm preservation for a generic vector.
    CHECK(std::abs(local.vectors[0][2].norm() - u.vectors[0][2].norm()) < 1e-10);

    DisplacementField wrong = u;
    wrong.tag = FrameTag::Subject;
    CHECK_THROWS_WITH(project_local(wrong, basis), doctest::Contains("tag"));
}
