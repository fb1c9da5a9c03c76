#pragma once

#include "cma/core.hpp"

#include <array>
#include <iosfwd>
#include <vector>

namespace cma::motion {

/// Cubic B-spline free-form deformation on a regular 3D control grid.
/// The grid always covers the fitted cloud with at least one control-point
/// margin; evaluation outside the supported box throws (no extrapolation).
struct BsplineFfd3d {
    Vec3 origin = Vec3::Zero();
    double spacing = 0.0;
    std::array<int, 3> dims = {0, 0, 0};
    Eigen::Matrix<double, Eigen::Dynamic, 3> coefficients;  // flattened (x-major) x 3
    double fit_rms_mm = 0.0;

    int coefficient_count() const { return dims[0] * dims[1] * dims[2]; }
    bool contains(const Vec3& point) const;
};

/// Least-squares FFD fit to displacement samples. ridge < 0 selects the
/// default 1e-8 * sample count; ridge == 0 gives the exact least-squares /
/// minimum-norm solution.
BsplineFfd3d fit_ffd(const std::vector<Vec3>& points, const std::vector<Vec3>& displacements,
                     double spacing_mm, double ridge = -1.0);

/// Tensor-product evaluation. Throws if point is outside the grid support.
Vec3 evaluate_ffd(const BsplineFfd3d& ffd, const Vec3& point);

/// Per-vertex positions across the cycle; positions[t][v]. Frame 0 holds the
/// seed positions, so displacement u_{0->t} = positions[t] - positions[0].
struct VertexTrajectorySet {
    std::vector<std::vector<Vec3>> positions;

    std::size_t frame_count() const { return positions.size(); }
    std::size_t vertex_count() const { return positions.empty() ? 0 : positions[0].size(); }
    Vec3 displacement(std::size_t t, std::size_t v) const {
        return positions[t][v] - positions[0][v];
    }
};

/// Walks each seed vertex through the chain of inter-frame deformations:
/// p_t = p_{t-1} + ffd_{t-1}(p_{t-1}). Throws naming vertex and frame if a
/// trajectory leaves a grid's support.
VertexTrajectorySet compose_interframe(const std::vector<BsplineFfd3d>& ffds,
                                       const std::vector<Vec3>& ed_positions);

/// Cubic B-spline over (x, y, z, t). The temporal basis is rebased so the
/// fitted displacement field is identically zero at t = 0.
struct Bspline4d {
    Vec3 origin = Vec3::Zero();
    double spatial_spacing = 0.0;
    std::array<int, 3> spatial_dims = {0, 0, 0};
    double temporal_origin = 0.0;
    double temporal_spacing = 0.0;
    int temporal_dims = 0;
    // Flattened (spatial-major, temporal-minor) x 3 components.
    Eigen::Matrix<double, Eigen::Dynamic, 3> coefficients;
    double fit_rms_mm = 0.0;

    bool contains(const Vec3& point, double t) const;
};

/// Space-time least-squares fit of u_{0->t} sampled on the trajectory set.
/// The solve exploits the shared spatial sample locations (all frames sample
/// the same end-diastolic vertices), so cost is one small spatial system per
/// temporal eigenmode. ridge < 0 selects the 1e-8 * sample-count default;
/// the rebased temporal basis leaves a null direction per spatial control, so
/// a positive ridge is required and enforced.
Bspline4d fit_4dt(const VertexTrajectorySet& trajectories, double spatial_spacing_mm,
                  double temporal_spacing_frames, double ridge = -1.0);

/// u_{0->t}(r). Throws outside support.
Vec3 evaluate_4dt(const Bspline4d& field, const Vec3& point, double t);

/// Binary control-grid dump: line-oriented text header, then the coefficient
/// array row-major as little-endian IEEE doubles. See README for the layout.
void save_ffd(std::ostream& out, const BsplineFfd3d& ffd);
BsplineFfd3d load_ffd(std::istream& in);
void save_4dt(std::ostream& out, const Bspline4d& field);
Bspline4d load_4dt(std::istream& in);

/// Cubic B-spline basis weights at fractional position u in [0,1), for the
/// four controls surrounding the containing cell. Exposed for tests
/// (partition of unity, polynomial reproduction).
std::array<double, 4> bspline_weights(double u);

}  // namespace cma::motion
