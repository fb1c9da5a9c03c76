#include "cma/motion.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>
#include <Eigen/SparseCholesky>
#include <Eigen/SparseQR>

#include <algorithm>
#include <cmath>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>

namespace cma::motion {

namespace {

[[noreturn]] void fail(const std::string& what) { throw std::invalid_argument("motion: " + what); }

struct GridAxis {
    double origin;
    int dims;
};

// One-control-point margin on both sides; a sample at the lower bound lands
// in cell 1 and the upper bound in cell dims-3, so all four stencil controls
// exist for every cloud point.
GridAxis make_axis(double lo, double hi, double spacing) {
    const int span_cells = std::max(1, static_cast<int>(std::ceil((hi - lo) / spacing - 1e-12)));
    return {lo - spacing, span_cells + 4};
}

struct Stencil {
    int base[3];             // first control index per axis
    std::array<double, 4> w[3];
};

bool make_stencil(const Vec3& point, const Vec3& origin, double spacing,
                  const std::array<int, 3>& dims, Stencil& out) {
    for (int axis = 0; axis < 3; ++axis) {
        const double g = (point[axis] - origin[axis]) / spacing;
        const int cell = static_cast<int>(std::floor(g));
        if (cell < 1 || cell > dims[axis] - 3) return false;
        out.base[axis] = cell - 1;
        out.w[axis] = bspline_weights(g - cell);
    }
    return true;
}

}  // namespace

std::array<double, 4> bspline_weights(double u) {
    const double u2 = u * u;
    const double u3 = u2 * u;
    return {
        (1.0 - 3.0 * u + 3.0 * u2 - u3) / 6.0,
        (4.0 - 6.0 * u2 + 3.0 * u3) / 6.0,
        (1.0 + 3.0 * u + 3.0 * u2 - 3.0 * u3) / 6.0,
        u3 / 6.0,
    };
}

bool BsplineFfd3d::contains(const Vec3& point) const {
    Stencil st;
    return make_stencil(point, origin, spacing, dims, st);
}

namespace {

// 64-entry sparse design row for one sample.
struct DesignRow {
    int index[64];
    double weight[64];
};

DesignRow design_row(const Stencil& st, const std::array<int, 3>& dims) {
    DesignRow row;
    int n = 0;
    for (int a = 0; a < 4; ++a) {
        for (int b = 0; b < 4; ++b) {
            const double wab = st.w[0][a] * st.w[1][b];
            const int xy = ((st.base[0] + a) * dims[1] + st.base[1] + b) * dims[2];
            for (int c = 0; c < 4; ++c) {
                row.index[n] = xy + st.base[2] + c;
                row.weight[n] = wab * st.w[2][c];
                ++n;
            }
        }
    }
    return row;
}

}  // namespace

BsplineFfd3d fit_ffd(const std::vector<Vec3>& points, const std::vector<Vec3>& displacements,
                     double spacing_mm, double ridge) {
    if (points.empty()) fail("fit_ffd: no samples");
    if (points.size() != displacements.size()) fail("fit_ffd: size mismatch");
    if (!(spacing_mm > 0.0) || !std::isfinite(spacing_mm)) fail("fit_ffd: invalid spacing");

    Vec3 lo = points[0], hi = points[0];
    for (const auto& p : points) {
        if (!finite(p)) fail("fit_ffd: non-finite sample point");
        lo = lo.cwiseMin(p);
        hi = hi.cwiseMax(p);
    }
    BsplineFfd3d ffd;
    ffd.spacing = spacing_mm;
    for (int axis = 0; axis < 3; ++axis) {
        const GridAxis ga = make_axis(lo[axis], hi[axis], spacing_mm);
        ffd.origin[axis] = ga.origin;
        ffd.dims[axis] = ga.dims;
    }
    const int K = ffd.coefficient_count();
    if (K > 80000) fail("fit_ffd: control grid too large (" + std::to_string(K) + ")");

    const std::size_t M = points.size();
    std::vector<DesignRow> rows(M);
    for (std::size_t i = 0; i < M; ++i) {
        Stencil st;
        if (!make_stencil(points[i], ffd.origin, ffd.spacing, ffd.dims, st)) {
            fail("fit_ffd: sample escaped the grid (internal)");
        }
        rows[i] = design_row(st, ffd.dims);
    }

    const double lambda = ridge < 0.0 ? 1e-8 * static_cast<double>(M) : ridge;
    Eigen::Matrix<double, Eigen::Dynamic, 3> solution(K, 3);

    if (lambda == 0.0 && M < static_cast<std::size_t>(K)) {
        // Underdetermined, exact: minimum-norm via the dual system.
        Eigen::MatrixXd gram = Eigen::MatrixXd::Zero(M, M);
        for (std::size_t i = 0; i < M; ++i) {
            for (std::size_t j = i; j < M; ++j) {
                double dot = 0.0;
                int a = 0, b = 0;
                while (a < 64 && b < 64) {
                    if (rows[i].index[a] == rows[j].index[b]) {
                        dot += rows[i].weight[a] * rows[j].weight[b];
                        ++a;
                        ++b;
                    } else if (rows[i].index[a] < rows[j].index[b]) {
                        ++a;
                    } else {
                        ++b;
                    }
                }
                gram(i, j) = dot;
                gram(j, i) = dot;
            }
        }
        Eigen::MatrixXd rhs(M, 3);
        for (std::size_t i = 0; i < M; ++i) rhs.row(i) = displacements[i].transpose();
        Eigen::LDLT<Eigen::MatrixXd> ldlt(gram);
        if (ldlt.info() != Eigen::Success) {
            fail("fit_ffd: singular dual system (duplicate samples?); use ridge > 0");
        }
        const Eigen::MatrixXd alpha = ldlt.solve(rhs);
        solution.setZero();
        for (std::size_t i = 0; i < M; ++i) {
            for (int k = 0; k < 64; ++k) {
                solution.row(rows[i].index[k]) += rows[i].weight[k] * alpha.row(i);
            }
        }
    } else if (lambda == 0.0) {
        // Exact least squares. Margin controls can be unsupported by the
        // samples, so rank-revealing QR is required here.
        Eigen::SparseMatrix<double> design(M, K);
        {
            std::vector<Eigen::Triplet<double>> triplets;
            triplets.reserve(M * 64);
            for (std::size_t i = 0; i < M; ++i) {
                for (int k = 0; k < 64; ++k) {
                    triplets.emplace_back(static_cast<int>(i), rows[i].index[k],
                                          rows[i].weight[k]);
                }
            }
            design.setFromTriplets(triplets.begin(), triplets.end());
        }
        Eigen::SparseQR<Eigen::SparseMatrix<double>, Eigen::COLAMDOrdering<int>> qr(design);
        if (qr.info() != Eigen::Success) {
            fail("fit_ffd: rank-deficient system; use ridge > 0");
        }
        Eigen::MatrixXd rhs(M, 3);
        for (std::size_t i = 0; i < M; ++i) rhs.row(i) = displacements[i].transpose();
        solution = qr.solve(rhs);
        if (!solution.allFinite()) fail("fit_ffd: rank-deficient system; use ridge > 0");
    } else if (K <= 1500) {
        Eigen::MatrixXd normal = Eigen::MatrixXd::Zero(K, K);
        Eigen::MatrixXd rhs = Eigen::MatrixXd::Zero(K, 3);
        for (std::size_t i = 0; i < M; ++i) {
            const auto& row = rows[i];
            for (int a = 0; a < 64; ++a) {
                const double wa = row.weight[a];
                const int ia = row.index[a];
                rhs.row(ia) += wa * displacements[i].transpose();
                for (int b = a; b < 64; ++b) {
                    normal(ia, row.index[b]) += wa * row.weight[b];
                }
            }
        }
        normal.diagonal().array() += lambda;
        Eigen::LDLT<Eigen::MatrixXd> ldlt(normal.selfadjointView<Eigen::Upper>());
        if (ldlt.info() != Eigen::Success) {
            fail("fit_ffd: singular normal equations; use ridge > 0");
        }
        solution = ldlt.solve(rhs);
    } else {
        std::vector<Eigen::Triplet<double>> triplets;
        triplets.reserve(M * 2080 + K);
        Eigen::MatrixXd rhs = Eigen::MatrixXd::Zero(K, 3);
        for (std::size_t i = 0; i < M; ++i) {
            const auto& row = rows[i];
            for (int a = 0; a < 64; ++a) {
                const double wa = row.weight[a];
                const int ia = row.index[a];
                rhs.row(ia) += wa * displacements[i].transpose();
                for (int b = a; b < 64; ++b) {
                    triplets.emplace_back(ia, row.index[b], wa * row.weight[b]);
                }
            }
        }
        for (int k = 0; k < K; ++k) triplets.emplace_back(k, k, lambda);
        Eigen::SparseMatrix<double> normal(K, K);
        normal.setFromTriplets(triplets.begin(), triplets.end());
        Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>, Eigen::Upper> ldlt(normal);
        if (ldlt.info() != Eigen::Success) {
            fail("fit_ffd: singular normal equations; use ridge > 0");
        }
        solution = ldlt.solve(rhs);
    }

    ffd.coefficients = solution;
    double ss = 0.0;
    for (std::size_t i = 0; i < M; ++i) {
        Vec3 fitted = Vec3::Zero();
        for (int k = 0; k < 64; ++k) {
            fitted += rows[i].weight[k] * ffd.coefficients.row(rows[i].index[k]).transpose();
        }
        ss += (fitted - displacements[i]).squaredNorm();
    }
    ffd.fit_rms_mm = std::sqrt(ss / static_cast<double>(M));
    return ffd;
}

Vec3 evaluate_ffd(const BsplineFfd3d& ffd, const Vec3& point) {
    Stencil st;
    if (!make_stencil(point, ffd.origin, ffd.spacing, ffd.dims, st)) {
        std::ostringstream msg;
        msg << "evaluate_ffd: point (" << point.transpose() << ") outside grid support";
        throw std::domain_error(msg.str());
    }
    Vec3 value = Vec3::Zero();
    for (int a = 0; a < 4; ++a) {
        for (int b = 0; b < 4; ++b) {
            const double wab = st.w[0][a] * st.w[1][b];
            const int xy = ((st.base[0] + a) * ffd.dims[1] + st.base[1] + b) * ffd.dims[2];
            for (int c = 0; c < 4; ++c) {
                value += wab * st.w[2][c] *
                         ffd.coefficients.row(xy + st.base[2] + c).transpose();
            }
        }
    }
    return value;
}

VertexTrajectorySet compose_interframe(const std::vector<BsplineFfd3d>& ffds,
                                       const std::vector<Vec3>& ed_positions) {
    VertexTrajectorySet traj;
    traj.positions.resize(ffds.size() + 1);
    traj.positions[0] = ed_positions;
    for (std::size_t t = 0; t < ffds.size(); ++t) {
        auto& next = traj.positions[t + 1];
        next.resize(ed_positions.size());
        const auto& prev = traj.positions[t];
        for (std::size_t v = 0; v < prev.size(); ++v) {
            try {
                next[v] = prev[v] + evaluate_ffd(ffds[t], prev[v]);
            } catch (const std::domain_error&) {
                fail("compose_interframe: vertex " + std::to_string(v) +
                     " left the grid support at frame " + std::to_string(t + 1));
            }
        }
    }
    return traj;
}

bool Bspline4d::contains(const Vec3& point, double t) const {
    Stencil st;
    if (!make_stencil(point, origin, spatial_spacing, spatial_dims, st)) return false;
    const double g = (t - temporal_origin) / temporal_spacing;
    const int cell = static_cast<int>(std::floor(g));
    return cell >= 1 && cell <= temporal_dims - 3;
}

namespace {

// Temporal stencil as a dense vector over all temporal controls.
Eigen::VectorXd temporal_row(const Bspline4d& f, double t) {
    const double g = (t - f.temporal_origin) / f.temporal_spacing;
    const int cell = static_cast<int>(std::floor(g));
    if (cell < 1 || cell > f.temporal_dims - 3) {
        throw std::domain_error("fit_4dt: time outside temporal support");
    }
    const auto w = bspline_weights(g - cell);
    Eigen::VectorXd row = Eigen::VectorXd::Zero(f.temporal_dims);
    for (int m = 0; m < 4; ++m) row[cell - 1 + m] = w[m];
    return row;
}

}  // namespace

Bspline4d fit_4dt(const VertexTrajectorySet& trajectories, double spatial_spacing_mm,
                  double temporal_spacing_frames, double ridge) {
    if (trajectories.frame_count() < 2 || trajectories.vertex_count() == 0) {
        fail("fit_4dt: empty trajectory set");
    }
    if (!(spatial_spacing_mm > 0.0) || !(temporal_spacing_frames > 0.0)) {
        fail("fit_4dt: invalid spacing");
    }
    const std::size_t V = trajectories.vertex_count();
    const int T = static_cast<int>(trajectories.frame_count());
    const auto& seeds = trajectories.positions[0];

    Bspline4d field;
    field.spatial_spacing = spatial_spacing_mm;
    Vec3 lo = seeds[0], hi = seeds[0];
    for (const auto& p : seeds) {
        lo = lo.cwiseMin(p);
        hi = hi.cwiseMax(p);
    }
    for (int axis = 0; axis < 3; ++axis) {
        const GridAxis ga = make_axis(lo[axis], hi[axis], spatial_spacing_mm);
        field.origin[axis] = ga.origin;
        field.spatial_dims[axis] = ga.dims;
    }
    field.temporal_spacing = temporal_spacing_frames;
    const GridAxis ta = make_axis(0.0, static_cast<double>(T - 1), temporal_spacing_frames);
    field.temporal_origin = ta.origin;
    field.temporal_dims = ta.dims;

    const int Ks = field.spatial_dims[0] * field.spatial_dims[1] * field.spatial_dims[2];
    const int Kt = field.temporal_dims;
    if (Ks > 4000 || static_cast<long>(Ks) * Kt > 200000) fail("fit_4dt: control grid too large");

    // Shared spatial rows: every frame samples the same ED vertex positions.
    std::vector<DesignRow> srows(V);
    for (std::size_t v = 0; v < V; ++v) {
        Stencil st;
        if (!make_stencil(seeds[v], field.origin, field.spatial_spacing, field.spatial_dims, st)) {
            fail("fit_4dt: seed vertex escaped the grid (internal)");
        }
        srows[v] = design_row(st, field.spatial_dims);
    }
    // Temporal rows rebased so the field vanishes at t = 0: the row at time t
    // is b(t) - b(0). Frame 0 samples become identically zero and are skipped.
    const Eigen::VectorXd t0_row = temporal_row(field, 0.0);
    std::vector<Eigen::VectorXd> trows(T);
    for (int t = 1; t < T; ++t) {
        trows[t] = temporal_row(field, static_cast<double>(t)) - t0_row;
    }

    Eigen::MatrixXd S = Eigen::MatrixXd::Zero(Ks, Ks);
    for (std::size_t v = 0; v < V; ++v) {
        const auto& row = srows[v];
        for (int a = 0; a < 64; ++a) {
            for (int b = a; b < 64; ++b) {
                S(row.index[a], row.index[b]) += row.weight[a] * row.weight[b];
            }
        }
    }
    S = S.selfadjointView<Eigen::Upper>();
    Eigen::MatrixXd Tm = Eigen::MatrixXd::Zero(Kt, Kt);
    for (int t = 1; t < T; ++t) Tm += trows[t] * trows[t].transpose();

    // RHS as a (Ks x Kt) matrix per displacement component.
    std::array<Eigen::MatrixXd, 3> rhs;
    for (auto& r : rhs) r = Eigen::MatrixXd::Zero(Ks, Kt);
    for (int t = 1; t < T; ++t) {
        for (std::size_t v = 0; v < V; ++v) {
            const Vec3 u = trajectories.displacement(t, v);
            const auto& row = srows[v];
            for (int k = 0; k < 64; ++k) {
                const double w = row.weight[k];
                for (int j = 0; j < Kt; ++j) {
                    const double wt = w * trows[t][j];
                    if (wt == 0.0) continue;
                    rhs[0](row.index[k], j) += wt * u.x();
                    rhs[1](row.index[k], j) += wt * u.y();
                    rhs[2](row.index[k], j) += wt * u.z();
                }
            }
        }
    }

    const std::size_t samples = V * static_cast<std::size_t>(T - 1);
    double lambda = ridge < 0.0 ? 1e-8 * static_cast<double>(samples) : ridge;
    if (lambda <= 0.0) {
        // The rebased temporal basis has an exact null direction (adding a
        // constant to all temporal controls of one spatial control changes
        // nothing), so the normal matrix is singular without a ridge.
        lambda = 1e-8 * static_cast<double>(samples);
    }

    // Solve (S (x) T + lambda I) via the temporal eigenbasis: one SPD spatial
    // system per temporal eigenmode.
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(Tm);
    const Eigen::MatrixXd& Q = es.eigenvectors();
    const Eigen::VectorXd& mu = es.eigenvalues();
    field.coefficients.resize(static_cast<long>(Ks) * Kt, 3);
    for (int comp = 0; comp < 3; ++comp) {
        const Eigen::MatrixXd rhat = rhs[comp] * Q;
        Eigen::MatrixXd chat(Ks, Kt);
        for (int j = 0; j < Kt; ++j) {
            Eigen::MatrixXd A = mu[j] * S;
            A.diagonal().array() += lambda;
            chat.col(j) = Eigen::LDLT<Eigen::MatrixXd>(A).solve(rhat.col(j));
        }
        const Eigen::MatrixXd C = chat * Q.transpose();
        for (int s = 0; s < Ks; ++s) {
            for (int j = 0; j < Kt; ++j) {
                field.coefficients(static_cast<long>(s) * Kt + j, comp) = C(s, j);
            }
        }
    }

    double ss = 0.0;
    for (int t = 1; t < T; ++t) {
        for (std::size_t v = 0; v < V; ++v) {
            const Vec3 fitted = evaluate_4dt(field, seeds[v], static_cast<double>(t));
            ss += (fitted - trajectories.displacement(t, v)).squaredNorm();
        }
    }
    field.fit_rms_mm = std::sqrt(ss / static_cast<double>(samples));
    return field;
}

Vec3 evaluate_4dt(const Bspline4d& field, const Vec3& point, double t) {
    Stencil st;
    if (!make_stencil(point, field.origin, field.spatial_spacing, field.spatial_dims, st)) {
        throw std::domain_error("evaluate_4dt: point outside spatial support");
    }
    const double g = (t - field.temporal_origin) / field.temporal_spacing;
    const int cell = static_cast<int>(std::floor(g));
    if (cell < 1 || cell > field.temporal_dims - 3) {
        throw std::domain_error("evaluate_4dt: time outside temporal support");
    }
    const auto wt = bspline_weights(g - cell);
    const double g0 = (0.0 - field.temporal_origin) / field.temporal_spacing;
    const int cell0 = static_cast<int>(std::floor(g0));
    const auto wt0 = bspline_weights(g0 - cell0);

    const int Kt = field.temporal_dims;
    Vec3 value = Vec3::Zero();
    for (int a = 0; a < 4; ++a) {
        for (int b = 0; b < 4; ++b) {
            const double wab = st.w[0][a] * st.w[1][b];
            const int xy =
                ((st.base[0] + a) * field.spatial_dims[1] + st.base[1] + b) * field.spatial_dims[2];
            for (int c = 0; c < 4; ++c) {
                const double ws = wab * st.w[2][c];
                const long srow = static_cast<long>(xy + st.base[2] + c) * Kt;
                Vec3 temporal = Vec3::Zero();
                for (int m = 0; m < 4; ++m) {
                    temporal += wt[m] * field.coefficients.row(srow + cell - 1 + m).transpose();
                    temporal -= wt0[m] * field.coefficients.row(srow + cell0 - 1 + m).transpose();
                }
                value += ws * temporal;
            }
        }
    }
    return value;
}

namespace {

void write_doubles(std::ostream& out, const double* data, std::size_t count) {
    out.write(reinterpret_cast<const char*>(data), static_cast<std::streamsize>(count * 8));
}

void read_doubles(std::istream& in, double* data, std::size_t count) {
    in.read(reinterpret_cast<char*>(data), static_cast<std::streamsize>(count * 8));
    if (!in) fail("control grid dump truncated");
}

}  // namespace

void save_ffd(std::ostream& out, const BsplineFfd3d& ffd) {
    out.precision(17);
    out << "cma-ffd3d 1\n";
    out << ffd.origin.x() << ' ' << ffd.origin.y() << ' ' << ffd.origin.z() << '\n';
    out << ffd.spacing << '\n';
    out << ffd.dims[0] << ' ' << ffd.dims[1] << ' ' << ffd.dims[2] << '\n';
    out << ffd.fit_rms_mm << '\n';
    Eigen::Matrix<double, Eigen::Dynamic, 3, Eigen::RowMajor> rm = ffd.coefficients;
    write_doubles(out, rm.data(), static_cast<std::size_t>(rm.size()));
}

BsplineFfd3d load_ffd(std::istream& in) {
    std::string magic;
    int version = 0;
    in >> magic >> version;
    if (magic != "cma-ffd3d" || version != 1) fail("bad FFD dump header");
    BsplineFfd3d ffd;
    in >> ffd.origin.x() >> ffd.origin.y() >> ffd.origin.z();
    in >> ffd.spacing;
    in >> ffd.dims[0] >> ffd.dims[1] >> ffd.dims[2];
    in >> ffd.fit_rms_mm;
    in.ignore(1);  // newline before the binary block
    if (!in || ffd.coefficient_count() <= 0) fail("bad FFD dump header");
    Eigen::Matrix<double, Eigen::Dynamic, 3, Eigen::RowMajor> rm(ffd.coefficient_count(), 3);
    read_doubles(in, rm.data(), static_cast<std::size_t>(rm.size()));
    ffd.coefficients = rm;
    return ffd;
}

void save_4dt(std::ostream& out, const Bspline4d& field) {
    out.precision(17);
    out << "cma-bspline4d 1\n";
    out << field.origin.x() << ' ' << field.origin.y() << ' ' << field.origin.z() << '\n';
    out << field.spatial_spacing << '\n';
    out << field.spatial_dims[0] << ' ' << field.spatial_dims[1] << ' ' << field.spatial_dims[2]
        << '\n';
    out << field.temporal_origin << ' ' << field.temporal_spacing << ' ' << field.temporal_dims
        << '\n';
    out << field.fit_rms_mm << '\n';
    Eigen::Matrix<double, Eigen::Dynamic, 3, Eigen::RowMajor> rm = field.coefficients;
    write_doubles(out, rm.data(), static_cast<std::size_t>(rm.size()));
}

Bspline4d load_4dt(std::istream& in) {
    std::string magic;
    int version = 0;
    in >> magic >> version;
    if (magic != "cma-bspline4d" || version != 1) fail("bad 4D dump header");
    Bspline4d field;
    in >> field.origin.x() >> field.origin.y() >> field.origin.z();
    in >> field.spatial_spacing;
    in >> field.spatial_dims[0] >> field.spatial_dims[1] >> field.spatial_dims[2];
    in >> field.temporal_origin >> field.temporal_spacing >> field.temporal_dims;
    in >> field.fit_rms_mm;
    in.ignore(1);
    const long rows = static_cast<long>(field.spatial_dims[0]) * field.spatial_dims[1] *
                      field.spatial_dims[2] * field.temporal_dims;
    if (!in || rows <= 0) fail("bad 4D dump header");
    Eigen::Matrix<double, Eigen::Dynamic, 3, Eigen::RowMajor> rm(rows, 3);
    read_doubles(in, rm.data(), static_cast<std::size_t>(rm.size()));
    field.coefficients = rm;
    return field;
}

}  // namespace cma::motion
