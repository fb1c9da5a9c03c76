#pragma once

#include "cma/core.hpp"
#include "cma/geometry.hpp"

#include <vector>

namespace cma::atlas {

using geometry::TriSurface;

/// Similarity transform x -> scale * R * x + t with det(R) = +1.
struct SimilarityTransform {
    double scale = 1.0;
    Mat3 rotation = Mat3::Identity();
    Vec3 translation = Vec3::Zero();

    Vec3 apply(const Vec3& x) const { return scale * (rotation * x) + translation; }
    SimilarityTransform inverse() const;
};

/// Closed-form least-squares similarity mapping source -> target
/// (cross-covariance SVD with reflection guard). Throws on degenerate
/// (collinear or too-small) configurations.
SimilarityTransform procrustes(const std::vector<Vec3>& source, const std::vector<Vec3>& target);

struct GpaResult {
    std::vector<Vec3> mean_shape;
    std::vector<SimilarityTransform> transforms;  // per subject, subject -> mean space
    int iterations = 0;
    double final_delta = 0.0;
};

/// Generalized Procrustes alignment. The evolving mean keeps its centroid at
/// the origin and its centroid size pinned to the cohort average, so the
/// result stays in physical millimetres. The initial mean is the centered
/// per-vertex average, which makes the procedure symmetric in input order.
GpaResult gpa(const std::vector<std::vector<Vec3>>& shapes, double tol = 1e-10,
              int max_iter = 200);

/// Thin-plate-spline warp in 3D with kernel phi(r) = r: affine part plus
/// kernel terms whose coefficients satisfy the polynomial side conditions.
struct TpsWarp {
    std::vector<Vec3> landmarks;
    Eigen::Matrix<double, 3, 4> affine = Eigen::Matrix<double, 3, 4>::Zero();  // [A | b]
    Eigen::Matrix<double, Eigen::Dynamic, 3> kernel_coefficients;
    double lambda = 0.0;

    Vec3 apply(const Vec3& x) const;
};

/// Interpolating (lambda = 0) or smoothing (lambda > 0) TPS fit.
/// Needs >= 5 non-coplanar landmarks; an ill-conditioned solve (coplanar
/// landmarks at lambda = 0) throws with a hint to raise lambda.
TpsWarp tps_fit(const std::vector<Vec3>& src, const std::vector<Vec3>& dst, double lambda);

/// Analytic Jacobian: affine part + sum_i c_i (x-p_i)^T / |x-p_i|, with the
/// kernel-term gradient defined as zero exactly at a landmark.
Mat3 tps_jacobian(const TpsWarp& warp, const Vec3& x);

/// Full subject-to-atlas map: TPS warp composed onto a similarity.
struct SubjectToAtlasTransform {
    SimilarityTransform similarity;
    TpsWarp warp;

    Vec3 apply(const Vec3& x) const { return warp.apply(similarity.apply(x)); }
    Mat3 jacobian(const Vec3& x) const {
        return tps_jacobian(warp, similarity.apply(x)) * (similarity.scale * similarity.rotation);
    }
};

/// Mid-wall surface: per endo vertex, cast a ray along the outward normal to
/// the epi surface and emit the midpoint (corresponding-vertex midpoint when
/// no hit lands within 3x the local wall thickness), then shortest-edge
/// collapse and one midpoint-subdivision pass to land near target_vertices.
struct MedialResult {
    TriSurface surface;
    double fallback_fraction = 0.0;  // > 0.05 is reported as a warning by callers
};
MedialResult medial_surface(const TriSurface& endo, const TriSurface& epi,
                            int target_vertices = 1000);

/// Orthonormal right-handed frame per vertex.
struct LocalBasis {
    std::vector<Vec3> radial;
    std::vector<Vec3> circumferential;
    std::vector<Vec3> longitudinal;

    std::size_t size() const { return radial.size(); }
};

struct AtlasSpace {
    TriSurface mean_medial;
    Vec3 long_axis = Vec3::UnitZ();  // unit, oriented base -> apex
    Vec3 axis_point = Vec3::Zero();  // centroid of the mean medial mesh
    LocalBasis basis;
};

/// Principal axis of the vertex cloud, oriented base -> apex (the apex is
/// the longer extent of a truncated LV shape).
Vec3 long_axis_of(const std::vector<Vec3>& points);

/// longitudinal = atlas axis; radial = unit component of (v - axis_point)
/// orthogonal to the axis; circumferential = longitudinal x radial.
/// Vertices within 1e-6 mm of the axis inherit the averaged basis of their
/// mesh neighbours.
LocalBasis cylindrical_basis(const AtlasSpace& atlas);

/// Assembles AtlasSpace from a mean medial mesh: axis, centroid, basis.
AtlasSpace build_atlas_space(TriSurface mean_medial);

/// In-plane reference direction for parcellating the atlas mesh: the second
/// principal axis of the vertex cloud with a deterministic sign convention.
Vec3 atlas_rv_direction(const AtlasSpace& atlas);

enum class FrameTag { Subject, Atlas, Local };

/// Per-vertex displacement vectors per frame, tagged with their frame.
struct DisplacementField {
    FrameTag tag = FrameTag::Subject;
    std::vector<std::vector<Vec3>> vectors;  // [frame][vertex]

    std::size_t frame_count() const { return vectors.size(); }
    std::size_t vertex_count() const { return vectors.empty() ? 0 : vectors[0].size(); }
};

/// u_atlas = J(phi(r)) * u, with the Jacobian frozen at the end-diastolic
/// positions (small deformation treatment). Requires tag == Subject.
DisplacementField pushforward(const DisplacementField& u, const SubjectToAtlasTransform& transform,
                              const std::vector<Vec3>& ed_vertices);

/// Components (radial, circumferential, longitudinal); norm preserved per
/// vector. Requires tag == Atlas.
DisplacementField project_local(const DisplacementField& u, const LocalBasis& basis);

}  // namespace cma::atlas
