#include "cma/atlas.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <queue>
#include <set>

namespace cma::atlas {

namespace {

[[noreturn]] void fail(const std::string& what) { throw std::invalid_argument("atlas: " + what); }

Vec3 mean_of(const std::vector<Vec3>& pts) {
    Vec3 m = Vec3::Zero();
    for (const auto& p : pts) m += p;
    return m / static_cast<double>(pts.size());
}

double centroid_size(const std::vector<Vec3>& pts, const Vec3& center) {
    double ss = 0.0;
    for (const auto& p : pts) ss += (p - center).squaredNorm();
    return std::sqrt(ss / static_cast<double>(pts.size()));
}

}  // namespace

SimilarityTransform SimilarityTransform::inverse() const {
    SimilarityTransform inv;
    inv.scale = 1.0 / scale;
    inv.rotation = rotation.transpose();
    inv.translation = -inv.scale * (inv.rotation * translation);
    return inv;
}

SimilarityTransform procrustes(const std::vector<Vec3>& source, const std::vector<Vec3>& target) {
    if (source.size() != target.size()) fail("procrustes: point count mismatch");
    const std::size_t n = source.size();
    if (n < 4) fail("procrustes: need at least 4 points");
    const Vec3 src_mean = mean_of(source);
    const Vec3 dst_mean = mean_of(target);

    Mat3 cross = Mat3::Zero();
    double src_var = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const Vec3 a = source[i] - src_mean;
        const Vec3 b = target[i] - dst_mean;
        cross += b * a.transpose();
        src_var += a.squaredNorm();
    }
    cross /= static_cast<double>(n);
    src_var /= static_cast<double>(n);
    if (src_var <= 0.0) fail("procrustes: source points coincide");

    Eigen::JacobiSVD<Mat3> svd(cross, Eigen::ComputeFullU | Eigen::ComputeFullV);
    const Vec3 d = svd.singularValues();
    if (d[1] <= 1e-12 * std::max(d[0], 1e-300)) {
        fail("procrustes: degenerate (collinear) configuration");
    }
    Vec3 signs(1.0, 1.0, 1.0);
    if ((svd.matrixU() * svd.matrixV().transpose()).determinant() < 0.0) signs[2] = -1.0;

    SimilarityTransform t;
    t.rotation = svd.matrixU() * signs.asDiagonal() * svd.matrixV().transpose();
    t.scale = d.dot(signs) / src_var;
    t.translation = dst_mean - t.scale * (t.rotation * src_mean);
    return t;
}

GpaResult gpa(const std::vector<std::vector<Vec3>>& shapes, double tol, int max_iter) {
    if (shapes.size() < 2) fail("gpa: need at least 2 shapes");
    const std::size_t n_vertices = shapes[0].size();
    for (const auto& s : shapes) {
        if (s.size() != n_vertices) fail("gpa: vertex count mismatch");
    }
    if (max_iter < 1) fail("gpa: max_iter must be positive");

    // Reference size: cohort-average centroid size keeps the mean in mm.
    double ref_size = 0.0;
    for (const auto& s : shapes) ref_size += centroid_size(s, mean_of(s));
    ref_size /= static_cast<double>(shapes.size());

    // Order-symmetric start: centered per-vertex average.
    std::vector<Vec3> mean(n_vertices, Vec3::Zero());
    for (const auto& s : shapes) {
        const Vec3 c = mean_of(s);
        for (std::size_t v = 0; v < n_vertices; ++v) mean[v] += s[v] - c;
    }
    for (auto& p : mean) p /= static_cast<double>(shapes.size());
    {
        const double size = centroid_size(mean, mean_of(mean));
        if (size <= 1e-12 * ref_size) {
            // Pathological cancellation; fall back to the first centered shape.
            const Vec3 c = mean_of(shapes[0]);
            for (std::size_t v = 0; v < n_vertices; ++v) mean[v] = shapes[0][v] - c;
        }
    }
    {
        const double size = centroid_size(mean, Vec3::Zero());
        for (auto& p : mean) p *= ref_size / size;
    }

    GpaResult result;
    result.transforms.resize(shapes.size());
    double delta = std::numeric_limits<double>::infinity();
    for (int iter = 0; iter < max_iter; ++iter) {
        std::vector<Vec3> next(n_vertices, Vec3::Zero());
        for (std::size_t s = 0; s < shapes.size(); ++s) {
            result.transforms[s] = procrustes(shapes[s], mean);
            for (std::size_t v = 0; v < n_vertices; ++v) {
                next[v] += result.transforms[s].apply(shapes[s][v]);
            }
        }
        for (auto& p : next) p /= static_cast<double>(shapes.size());
        const Vec3 c = mean_of(next);
        for (auto& p : next) p -= c;
        const double size = centroid_size(next, Vec3::Zero());
        if (size <= 0.0) fail("gpa: mean collapsed");
        for (auto& p : next) p *= ref_size / size;

        double move = 0.0;
        for (std::size_t v = 0; v < n_vertices; ++v) move += (next[v] - mean[v]).squaredNorm();
        delta = std::sqrt(move / static_cast<double>(n_vertices));
        mean = std::move(next);
        result.iterations = iter + 1;
        if (delta < tol) {
            // Final per-subject alignments against the settled mean.
            for (std::size_t s = 0; s < shapes.size(); ++s) {
                result.transforms[s] = procrustes(shapes[s], mean);
            }
            result.mean_shape = std::move(mean);
            result.final_delta = delta;
            return result;
        }
    }
    throw std::runtime_error("atlas: gpa did not converge in " + std::to_string(max_iter) +
                             " iterations (last delta " + std::to_string(delta) + ")");
}

Vec3 TpsWarp::apply(const Vec3& x) const {
    Eigen::Vector4d xh(x.x(), x.y(), x.z(), 1.0);
    Vec3 out = affine * xh;
    for (std::size_t i = 0; i < landmarks.size(); ++i) {
        out += kernel_coefficients.row(static_cast<long>(i)).transpose() *
               (x - landmarks[i]).norm();
    }
    return out;
}

TpsWarp tps_fit(const std::vector<Vec3>& src, const std::vector<Vec3>& dst, double lambda) {
    const std::size_t n = src.size();
    if (n != dst.size()) fail("tps_fit: landmark count mismatch");
    if (n < 5) fail("tps_fit: need at least 5 landmarks");
    if (lambda < 0.0) fail("tps_fit: lambda must be >= 0");

    const long m = static_cast<long>(n);
    Eigen::MatrixXd system = Eigen::MatrixXd::Zero(m + 4, m + 4);
    Eigen::MatrixXd rhs = Eigen::MatrixXd::Zero(m + 4, 3);
    for (long i = 0; i < m; ++i) {
        for (long j = i + 1; j < m; ++j) {
            const double r = (src[i] - src[j]).norm();
            system(i, j) = r;
            system(j, i) = r;
        }
        system(i, i) = lambda;
        system(i, m) = 1.0;
        system(m, i) = 1.0;
        system.block<3, 1>(m + 1, i) = src[i];
        system.block<1, 3>(i, m + 1) = src[i].transpose();
        rhs.row(i) = dst[i].transpose();
    }

    Eigen::PartialPivLU<Eigen::MatrixXd> lu(system);
    const Eigen::MatrixXd sol = lu.solve(rhs);
    const double rel_residual =
        (system * sol - rhs).norm() / std::max(1.0, rhs.norm());
    if (!sol.allFinite() || rel_residual > 1e-6) {
        fail("tps_fit: ill-conditioned system (coplanar landmarks?); increase lambda");
    }

    TpsWarp warp;
    warp.landmarks = src;
    warp.lambda = lambda;
    warp.kernel_coefficients = sol.topRows(m);
    // Solution rows m..m+3 hold [b; A^T] per component.
    for (int comp = 0; comp < 3; ++comp) {
        warp.affine(comp, 3) = sol(m, comp);
        warp.affine.block<1, 3>(comp, 0) = sol.block<3, 1>(m + 1, comp).transpose();
    }
    return warp;
}

Mat3 tps_jacobian(const TpsWarp& warp, const Vec3& x) {
    Mat3 j = warp.affine.leftCols<3>();
    for (std::size_t i = 0; i < warp.landmarks.size(); ++i) {
        const Vec3 diff = x - warp.landmarks[i];
        const double r = diff.norm();
        if (r <= 0.0) continue;  // kernel-term gradient defined as 0 at the landmark
        j += (warp.kernel_coefficients.row(static_cast<long>(i)).transpose() / r) *
             diff.transpose();
    }
    return j;
}

namespace {

struct RayHit {
    bool hit = false;
    double t = 0.0;
};

// Moller-Trumbore, front and back faces alike.
RayHit ray_triangle(const Vec3& origin, const Vec3& dir, const Vec3& a, const Vec3& b,
                    const Vec3& c) {
    constexpr double kEps = 1e-12;
    const Vec3 e1 = b - a;
    const Vec3 e2 = c - a;
    const Vec3 pvec = dir.cross(e2);
    const double det = e1.dot(pvec);
    if (std::abs(det) < kEps) return {};
    const double inv_det = 1.0 / det;
    const Vec3 tvec = origin - a;
    const double u = tvec.dot(pvec) * inv_det;
    if (u < -1e-9 || u > 1.0 + 1e-9) return {};
    const Vec3 qvec = tvec.cross(e1);
    const double v = dir.dot(qvec) * inv_det;
    if (v < -1e-9 || u + v > 1.0 + 1e-9) return {};
    const double t = e2.dot(qvec) * inv_det;
    if (t <= kEps) return {};
    return {true, t};
}

std::vector<Vec3> vertex_normals(const TriSurface& surf) {
    std::vector<Vec3> normals(surf.vertices.size(), Vec3::Zero());
    for (const auto& f : surf.faces) {
        const Vec3 n = (surf.vertices[f[1]] - surf.vertices[f[0]])
                           .cross(surf.vertices[f[2]] - surf.vertices[f[0]]);
        for (int v : f) normals[v] += n;  // area-weighted
    }
    for (auto& n : normals) {
        const double len = n.norm();
        if (len > 0.0) n /= len;
    }
    return normals;
}

// Shortest-edge collapse decimation preserving manifoldness. Boundary
// vertices absorb interior neighbours instead of moving.
void decimate(TriSurface& mesh, std::size_t target_vertices) {
    const std::size_t nv = mesh.vertices.size();
    std::vector<std::set<int>> vertex_faces(nv);
    std::vector<bool> face_alive(mesh.faces.size(), true);
    for (std::size_t f = 0; f < mesh.faces.size(); ++f) {
        for (int v : mesh.faces[f]) vertex_faces[v].insert(static_cast<int>(f));
    }
    std::vector<bool> vertex_alive(nv, true);
    std::size_t alive_count = nv;

    auto is_boundary_edge = [&](int a, int b) {
        int shared = 0;
        for (int f : vertex_faces[a]) {
            if (!face_alive[f]) continue;
            const auto& face = mesh.faces[f];
            const bool has_b =
                face[0] == b || face[1] == b || face[2] == b;
            if (has_b) ++shared;
        }
        return shared == 1;
    };
    auto is_boundary_vertex = [&](int v) {
        std::map<int, int> edge_count;
        for (int f : vertex_faces[v]) {
            if (!face_alive[f]) continue;
            for (int u : mesh.faces[f]) {
                if (u != v) edge_count[u]++;
            }
        }
        for (const auto& [u, c] : edge_count) {
            if (c == 1) return true;
        }
        return false;
    };

    using QueueItem = std::pair<double, std::pair<int, int>>;
    std::priority_queue<QueueItem, std::vector<QueueItem>, std::greater<>> queue;
    auto push_edges_of = [&](int v) {
        for (int f : vertex_faces[v]) {
            if (!face_alive[f]) continue;
            for (int u : mesh.faces[f]) {
                if (u == v) continue;
                const double len = (mesh.vertices[v] - mesh.vertices[u]).norm();
                queue.push({len, {std::min(v, u), std::max(v, u)}});
            }
        }
    };
    for (std::size_t v = 0; v < nv; ++v) push_edges_of(static_cast<int>(v));

    auto neighbours = [&](int v) {
        std::set<int> out;
        for (int f : vertex_faces[v]) {
            if (!face_alive[f]) continue;
            for (int u : mesh.faces[f]) {
                if (u != v) out.insert(u);
            }
        }
        return out;
    };

    while (alive_count > target_vertices && !queue.empty()) {
        const auto [len, edge] = queue.top();
        queue.pop();
        const auto [a, b] = edge;
        if (!vertex_alive[a] || !vertex_alive[b]) continue;
        const double current = (mesh.vertices[a] - mesh.vertices[b]).norm();
        if (std::abs(current - len) > 1e-12 * std::max(1.0, current)) continue;  // stale
        const auto na = neighbours(a);
        if (!na.count(b)) continue;  // edge vanished

        // Link condition: shared neighbours must be exactly the apex vertices
        // of the faces on this edge.
        std::set<int> shared;
        const auto nb = neighbours(b);
        std::set_intersection(na.begin(), na.end(), nb.begin(), nb.end(),
                              std::inserter(shared, shared.begin()));
        std::set<int> edge_face_apexes;
        std::vector<int> edge_faces;
        for (int f : vertex_faces[a]) {
            if (!face_alive[f]) continue;
            const auto& face = mesh.faces[f];
            bool has_b = false;
            int apex = -1;
            for (int u : face) {
                if (u == b) has_b = true;
                if (u != a && u != b) apex = u;
            }
            if (has_b) {
                edge_faces.push_back(f);
                edge_face_apexes.insert(apex);
            }
        }
        if (shared != edge_face_apexes || edge_faces.empty()) continue;

        const bool a_bound = is_boundary_vertex(a);
        const bool b_bound = is_boundary_vertex(b);
        // Subset placement: the survivor keeps its position, so decimated
        // vertices stay on the sampled surface. Boundary vertices survive
        // interior ones.
        const Vec3 new_pos = (b_bound && !a_bound) ? mesh.vertices[b] : mesh.vertices[a];
        if (a_bound != b_bound && is_boundary_edge(a, b)) continue;  // keep rim intact

        // Fold-over guard: surviving faces must not flip.
        bool flips = false;
        for (int v : {a, b}) {
            for (int f : vertex_faces[v]) {
                if (!face_alive[f] || flips) continue;
                if (std::find(edge_faces.begin(), edge_faces.end(), f) != edge_faces.end()) {
                    continue;
                }
                const auto& face = mesh.faces[f];
                Vec3 p[3], q[3];
                for (int k = 0; k < 3; ++k) {
                    p[k] = mesh.vertices[face[k]];
                    q[k] = (face[k] == a || face[k] == b) ? new_pos : p[k];
                }
                const Vec3 n0 = (p[1] - p[0]).cross(p[2] - p[0]);
                const Vec3 n1 = (q[1] - q[0]).cross(q[2] - q[0]);
                if (n0.dot(n1) <= 0.0) flips = true;
            }
        }
        if (flips) continue;

        // Collapse b into a.
        mesh.vertices[a] = new_pos;
        for (int f : edge_faces) {
            face_alive[f] = false;
            for (int u : mesh.faces[f]) vertex_faces[u].erase(f);
        }
        for (int f : std::vector<int>(vertex_faces[b].begin(), vertex_faces[b].end())) {
            if (!face_alive[f]) continue;
            for (int& u : mesh.faces[f]) {
                if (u == b) u = a;
            }
            vertex_faces[b].erase(f);
            vertex_faces[a].insert(f);
        }
        vertex_alive[b] = false;
        --alive_count;
        push_edges_of(a);
    }

    // Compact.
    std::vector<int> remap(nv, -1);
    std::vector<Vec3> new_vertices;
    new_vertices.reserve(alive_count);
    for (std::size_t v = 0; v < nv; ++v) {
        if (vertex_alive[v]) {
            remap[v] = static_cast<int>(new_vertices.size());
            new_vertices.push_back(mesh.vertices[v]);
        }
    }
    std::vector<std::array<int, 3>> new_faces;
    for (std::size_t f = 0; f < mesh.faces.size(); ++f) {
        if (!face_alive[f]) continue;
        new_faces.push_back(
            {remap[mesh.faces[f][0]], remap[mesh.faces[f][1]], remap[mesh.faces[f][2]]});
    }
    mesh.vertices = std::move(new_vertices);
    mesh.faces = std::move(new_faces);
}

void subdivide_midpoint(TriSurface& mesh) {
    std::map<std::pair<int, int>, int> midpoint;
    auto midpoint_of = [&](int a, int b) {
        const auto key = std::minmax(a, b);
        auto it = midpoint.find(key);
        if (it != midpoint.end()) return it->second;
        const int idx = static_cast<int>(mesh.vertices.size());
        mesh.vertices.push_back(0.5 * (mesh.vertices[a] + mesh.vertices[b]));
        midpoint[key] = idx;
        return idx;
    };
    std::vector<std::array<int, 3>> faces;
    faces.reserve(mesh.faces.size() * 4);
    for (const auto& f : mesh.faces) {
        const int ab = midpoint_of(f[0], f[1]);
        const int bc = midpoint_of(f[1], f[2]);
        const int ca = midpoint_of(f[2], f[0]);
        faces.push_back({f[0], ab, ca});
        faces.push_back({f[1], bc, ab});
        faces.push_back({f[2], ca, bc});
        faces.push_back({ab, bc, ca});
    }
    mesh.faces = std::move(faces);
}

}  // namespace

MedialResult medial_surface(const TriSurface& endo, const TriSurface& epi, int target_vertices) {
    geometry::validate_surface(endo, "medial_surface(endo)");
    geometry::validate_surface(epi, "medial_surface(epi)");
    if (target_vertices < 16) fail("medial_surface: target too small");
    const bool corresponding = endo.vertex_count() == epi.vertex_count();
    const auto normals = vertex_normals(endo);

    MedialResult result;
    TriSurface medial;
    medial.vertices.resize(endo.vertex_count());
    medial.faces = endo.faces;
    std::size_t fallbacks = 0;
    for (std::size_t v = 0; v < endo.vertex_count(); ++v) {
        const Vec3& origin = endo.vertices[v];
        double thickness;
        Vec3 fallback_partner;
        if (corresponding) {
            fallback_partner = epi.vertices[v];
            thickness = (fallback_partner - origin).norm();
        } else {
            double best = std::numeric_limits<double>::infinity();
            std::size_t best_idx = 0;
            for (std::size_t u = 0; u < epi.vertex_count(); ++u) {
                const double d = (epi.vertices[u] - origin).squaredNorm();
                if (d < best) {
                    best = d;
                    best_idx = u;
                }
            }
            fallback_partner = epi.vertices[best_idx];
            thickness = std::sqrt(best);
        }
        double nearest = std::numeric_limits<double>::infinity();
        for (const auto& f : epi.faces) {
            const RayHit hit = ray_triangle(origin, normals[v], epi.vertices[f[0]],
                                            epi.vertices[f[1]], epi.vertices[f[2]]);
            if (hit.hit && hit.t < nearest) nearest = hit.t;
        }
        if (thickness == 0.0) {
            medial.vertices[v] = origin;  // coincident surfaces: medial is the surface
        } else if (std::isfinite(nearest) && nearest <= 3.0 * thickness) {
            medial.vertices[v] = origin + 0.5 * nearest * normals[v];
        } else {
            medial.vertices[v] = 0.5 * (origin + fallback_partner);
            ++fallbacks;
        }
    }
    result.fallback_fraction = static_cast<double>(fallbacks) /
                               static_cast<double>(std::max<std::size_t>(1, endo.vertex_count()));
    if (result.fallback_fraction > 0.5) {
        throw std::runtime_error("atlas: medial_surface: more than half the rays missed (" +
                                 std::to_string(result.fallback_fraction) + ")");
    }

    if (medial.vertices.size() > static_cast<std::size_t>(target_vertices)) {
        // Collapse to roughly a quarter of the target; one subdivision pass
        // multiplies the vertex count by about four.
        const auto quarter = static_cast<std::size_t>(std::max(8.0, target_vertices / 3.85));
        decimate(medial, quarter);
        subdivide_midpoint(medial);
        // Rarely the collapse stalls above the quota; trim without subdividing.
        if (medial.vertices.size() > static_cast<std::size_t>(target_vertices) * 6 / 5) {
            decimate(medial, static_cast<std::size_t>(target_vertices));
        }
    }
    result.surface = std::move(medial);
    return result;
}

Vec3 long_axis_of(const std::vector<Vec3>& points) {
    if (points.size() < 4) fail("long_axis_of: too few points");
    const Vec3 c = mean_of(points);
    Mat3 cov = Mat3::Zero();
    for (const auto& p : points) {
        const Vec3 d = p - c;
        cov += d * d.transpose();
    }
    Eigen::SelfAdjointEigenSolver<Mat3> es(cov);
    Vec3 axis = es.eigenvectors().col(2);  // largest eigenvalue
    double lo = 0.0, hi = 0.0;
    for (const auto& p : points) {
        const double t = (p - c).dot(axis);
        lo = std::min(lo, t);
        hi = std::max(hi, t);
    }
    // The apex protrudes further from the centroid than the cut base.
    if (hi < -lo) axis = -axis;
    return axis;
}

LocalBasis cylindrical_basis(const AtlasSpace& atlas) {
    const auto& verts = atlas.mean_medial.vertices;
    if (verts.empty()) fail("cylindrical_basis: empty atlas mesh");
    const Vec3 axis = atlas.long_axis.normalized();
    LocalBasis basis;
    basis.radial.resize(verts.size());
    basis.circumferential.resize(verts.size());
    basis.longitudinal.assign(verts.size(), axis);
    std::vector<std::size_t> on_axis;
    for (std::size_t v = 0; v < verts.size(); ++v) {
        const Vec3 rel = verts[v] - atlas.axis_point;
        Vec3 radial = rel - rel.dot(axis) * axis;
        if (radial.norm() <= 1e-6) {
            on_axis.push_back(v);
            basis.radial[v] = Vec3::Zero();
            continue;
        }
        radial.normalize();
        basis.radial[v] = radial;
        basis.circumferential[v] = axis.cross(radial);
    }
    if (!on_axis.empty()) {
        std::vector<std::set<int>> neighbours(verts.size());
        for (const auto& f : atlas.mean_medial.faces) {
            for (int i = 0; i < 3; ++i) {
                neighbours[f[i]].insert(f[(i + 1) % 3]);
                neighbours[f[i]].insert(f[(i + 2) % 3]);
            }
        }
        for (std::size_t v : on_axis) {
            Vec3 sum = Vec3::Zero();
            for (int u : neighbours[v]) {
                sum += basis.radial[u];
            }
            Vec3 radial = sum - sum.dot(axis) * axis;
            if (radial.norm() <= 1e-12) {
                // Symmetric neighbourhood (a pole): the average cancels, so
                // take the first neighbour's basis; the azimuthal reference
                // is arbitrary on the axis anyway.
                for (int u : neighbours[v]) {
                    if (basis.radial[u].norm() > 0.5) {
                        radial = basis.radial[u] - basis.radial[u].dot(axis) * axis;
                        break;
                    }
                }
            }
            if (radial.norm() <= 1e-12) {
                fail("cylindrical_basis: on-axis vertex " + std::to_string(v) +
                     " has no valid neighbour basis");
            }
            radial.normalize();
            basis.radial[v] = radial;
            basis.circumferential[v] = axis.cross(radial);
        }
    }
    return basis;
}

AtlasSpace build_atlas_space(TriSurface mean_medial) {
    AtlasSpace atlas;
    atlas.long_axis = long_axis_of(mean_medial.vertices);
    atlas.axis_point = mean_of(mean_medial.vertices);
    atlas.mean_medial = std::move(mean_medial);
    atlas.basis = cylindrical_basis(atlas);
    return atlas;
}

Vec3 atlas_rv_direction(const AtlasSpace& atlas) {
    const auto& verts = atlas.mean_medial.vertices;
    const Vec3 c = atlas.axis_point;
    Mat3 cov = Mat3::Zero();
    for (const auto& p : verts) {
        const Vec3 d = p - c;
        cov += d * d.transpose();
    }
    Eigen::SelfAdjointEigenSolver<Mat3> es(cov);
    Vec3 dir = es.eigenvectors().col(1);
    // Deterministic sign: positive third moment along the direction if any.
    double skew = 0.0;
    for (const auto& p : verts) {
        const double t = (p - c).dot(dir);
        skew += t * t * t;
    }
    if (skew < 0.0) dir = -dir;
    return dir;
}

namespace {

void check_field(const DisplacementField& u, FrameTag expected, const char* op) {
    if (u.tag != expected) {
        fail(std::string(op) + ": displacement field has the wrong coordinate-frame tag");
    }
    if (u.vectors.empty()) fail(std::string(op) + ": empty displacement field");
}

}  // namespace

DisplacementField pushforward(const DisplacementField& u, const SubjectToAtlasTransform& transform,
                              const std::vector<Vec3>& ed_vertices) {
    check_field(u, FrameTag::Subject, "pushforward");
    if (u.vertex_count() != ed_vertices.size()) {
        fail("pushforward: vertex count mismatch with ED positions");
    }
    std::vector<Mat3> jacobians(ed_vertices.size());
    for (std::size_t v = 0; v < ed_vertices.size(); ++v) {
        jacobians[v] = transform.jacobian(ed_vertices[v]);
    }
    DisplacementField out;
    out.tag = FrameTag::Atlas;
    out.vectors.resize(u.frame_count());
    for (std::size_t t = 0; t < u.frame_count(); ++t) {
        out.vectors[t].resize(ed_vertices.size());
        for (std::size_t v = 0; v < ed_vertices.size(); ++v) {
            out.vectors[t][v] = jacobians[v] * u.vectors[t][v];
        }
    }
    return out;
}

DisplacementField project_local(const DisplacementField& u, const LocalBasis& basis) {
    check_field(u, FrameTag::Atlas, "project_local");
    if (u.vertex_count() != basis.size()) fail("project_local: basis size mismatch");
    DisplacementField out;
    out.tag = FrameTag::Local;
    out.vectors.resize(u.frame_count());
    for (std::size_t t = 0; t < u.frame_count(); ++t) {
        out.vectors[t].resize(basis.size());
        for (std::size_t v = 0; v < basis.size(); ++v) {
            const Vec3& vec = u.vectors[t][v];
            out.vectors[t][v] = Vec3(vec.dot(basis.radial[v]), vec.dot(basis.circumferential[v]),
                                     vec.dot(basis.longitudinal[v]));
        }
    }
    return out;
}

}  // namespace cma::atlas
