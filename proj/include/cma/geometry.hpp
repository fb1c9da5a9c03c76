#pragma once

#include "cma/core.hpp"

#include <array>
#include <string>
#include <vector>

namespace cma::geometry {

/// Triangulated surface. Faces index into vertices; orientation is expected
/// to be consistent (outward for closed surfaces).
struct TriSurface {
    std::vector<Vec3> vertices;
    std::vector<std::array<int, 3>> faces;

    std::size_t vertex_count() const { return vertices.size(); }
    std::size_t face_count() const { return faces.size(); }
};

/// Checks index ranges, finiteness and non-degeneracy (zero-area faces).
/// Throws std::invalid_argument naming the offending entity.
void validate_surface(const TriSurface& surface, const std::string& context);

/// Valve-plane cap: a point on the plane plus its (unit) normal.
struct BasalPlane {
    Vec3 point{0, 0, 0};
    Vec3 normal{0, 0, 1};
};

struct LvFrame {
    TriSurface endo;
    TriSurface epi;
    BasalPlane basal_plane;
};

struct LvSequence {
    std::string subject_id;
    std::vector<LvFrame> frames;
    double frame_interval_ms = 0.0;

    std::size_t frame_count() const { return frames.size(); }
};

/// Throws if the sequence breaks its invariants: T >= 4, per-surface vertex
/// counts identical across frames, shared face lists.
void validate_sequence(const LvSequence& seq);

struct VolumeCurve {
    std::vector<double> volumes_ml;
    double frame_interval_ms = 0.0;

    std::size_t size() const { return volumes_ml.size(); }
};

/// Per-vertex AHA-17 labels (1..17) on a medial surface.
struct AhaLabels {
    std::vector<int> labels;

    std::size_t size() const { return labels.size(); }
};
constexpr int kAhaRegionCount = 17;

/// Cavity volume in ml of the endocardial surface, closed across the basal
/// opening by fan-triangulating the boundary loop to its centroid. Uses the
/// divergence theorem; the result is the absolute value of the signed sum,
/// so face orientation does not matter. A closed surface (no boundary) is
/// accepted as-is. Boundary vertices must lie near the basal plane.
double cavity_volume(const LvFrame& frame);

/// cavity_volume per frame. Errors are rethrown with the frame index.
VolumeCurve volume_curve(const LvSequence& seq);

/// (V_ED - V_ES) / V_ED * 100 with V_ED = max, V_ES = min of the curve.
/// A constant curve gives 0.
double ejection_fraction(const VolumeCurve& curve);

/// AHA-17 parcellation of a medial surface.
///
/// long_axis is the full apex-to-base vector: its direction orients the
/// longitudinal coordinate and its length fixes the basal level, so the
/// banding does not depend on the extent of the input vertex set. Bands in
/// normalized height s (0 at apex, 1 at base):
///   s >= 2/3          basal, 6 sectors   -> segments 1..6
///   1/3 <= s < 2/3    mid, 6 sectors     -> segments 7..12
///   1/6 <= s < 1/3    apical, 4 sectors  -> segments 13..16
///   s < 1/6           apical cap         -> segment 17
/// Sector zero starts at rv_direction (projected orthogonal to the axis) and
/// advances right-handed about the apex-to-base direction. Vertices on the
/// axis outside the cap take the label of the nearest off-axis vertex.
AhaLabels aha_parcellate(const TriSurface& medial, const Vec3& long_axis, const Vec3& apex,
                         const Vec3& rv_direction);

/// Mean position of a vertex set.
Vec3 centroid(const std::vector<Vec3>& points);

/// Boundary loops of a surface (edges used by exactly one face), each
/// returned as an ordered vertex cycle. Used by cavity_volume and tests.
std::vector<std::vector<int>> boundary_loops(const TriSurface& surface);

}  // namespace cma::geometry
