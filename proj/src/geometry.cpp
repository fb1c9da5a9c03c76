#include "cma/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <sstream>

namespace cma::geometry {

namespace {

constexpr double kMm3PerMl = 1000.0;

[[noreturn]] void fail(const std::string& context, const std::string& what) {
    throw std::invalid_argument(context + ": " + what);
}

}  // namespace

void validate_surface(const TriSurface& surface, const std::string& context) {
    const int n = static_cast<int>(surface.vertices.size());
    for (int i = 0; i < n; ++i) {
        if (!finite(surface.vertices[i])) {
            fail(context, "non-finite vertex " + std::to_string(i));
        }
    }
    for (std::size_t f = 0; f < surface.faces.size(); ++f) {
        const auto& face = surface.faces[f];
        for (int corner : face) {
            if (corner < 0 || corner >= n) {
                fail(context, "face " + std::to_string(f) + " index out of range");
            }
        }
        if (face[0] == face[1] || face[1] == face[2] || face[0] == face[2]) {
            fail(context, "degenerate face " + std::to_string(f));
        }
        const Vec3& a = surface.vertices[face[0]];
        const Vec3& b = surface.vertices[face[1]];
        const Vec3& c = surface.vertices[face[2]];
        if ((b - a).cross(c - a).norm() <= 0.0) {
            fail(context, "zero-area face " + std::to_string(f));
        }
    }
}

void validate_sequence(const LvSequence& seq) {
    if (seq.frames.size() < 4) {
        fail("sequence '" + seq.subject_id + "'", "too few frames (need T >= 4, got " +
                                                      std::to_string(seq.frames.size()) + ")");
    }
    const auto& first = seq.frames.front();
    for (std::size_t t = 0; t < seq.frames.size(); ++t) {
        const auto& fr = seq.frames[t];
        if (fr.endo.vertex_count() != first.endo.vertex_count() ||
            fr.epi.vertex_count() != first.epi.vertex_count()) {
            fail("sequence '" + seq.subject_id + "'",
                 "vertex count differs at frame " + std::to_string(t));
        }
        if (fr.endo.faces != first.endo.faces || fr.epi.faces != first.epi.faces) {
            fail("sequence '" + seq.subject_id + "'",
                 "face list differs at frame " + std::to_string(t));
        }
    }
}

Vec3 centroid(const std::vector<Vec3>& points) {
    Vec3 c = Vec3::Zero();
    for (const auto& p : points) c += p;
    if (!points.empty()) c /= static_cast<double>(points.size());
    return c;
}

std::vector<std::vector<int>> boundary_loops(const TriSurface& surface) {
    // Undirected edge -> usage count; keep one directed representative so the
    // loop inherits the orientation induced by the faces.
    std::map<std::pair<int, int>, int> count;
    std::map<std::pair<int, int>, std::pair<int, int>> directed;
    for (const auto& face : surface.faces) {
        for (int e = 0; e < 3; ++e) {
            const int a = face[e];
            const int b = face[(e + 1) % 3];
            const auto key = std::minmax(a, b);
            count[key]++;
            directed[key] = {a, b};
        }
    }
    std::map<int, int> next;  // boundary successor along induced orientation
    for (const auto& [key, c] : count) {
        if (c == 1) {
            const auto [a, b] = directed.at(key);
            if (next.count(a)) {
                fail("boundary_loops", "non-manifold boundary at vertex " + std::to_string(a));
            }
            next[a] = b;
        }
    }
    std::vector<std::vector<int>> loops;
    std::map<int, bool> visited;
    for (const auto& [start, unused] : next) {
        if (visited[start]) continue;
        std::vector<int> loop;
        int v = start;
        do {
            loop.push_back(v);
            visited[v] = true;
            auto it = next.find(v);
            if (it == next.end()) fail("boundary_loops", "open boundary chain (not a loop)");
            v = it->second;
        } while (v != start);
        loops.push_back(std::move(loop));
    }
    return loops;
}

namespace {

double signed_volume_sum_mm3(const TriSurface& surface) {
    double sum = 0.0;
    for (const auto& face : surface.faces) {
        const Vec3& a = surface.vertices[face[0]];
        const Vec3& b = surface.vertices[face[1]];
        const Vec3& c = surface.vertices[face[2]];
        sum += a.dot(b.cross(c));
    }
    return sum / 6.0;
}

}  // namespace

double cavity_volume(const LvFrame& frame) {
    validate_surface(frame.endo, "cavity_volume(endo)");
    const auto loops = boundary_loops(frame.endo);
    double sum = signed_volume_sum_mm3(frame.endo);
    if (!loops.empty()) {
        if (loops.size() > 1) {
            fail("cavity_volume", "endo surface has " + std::to_string(loops.size()) +
                                      " boundary loops (holes besides the basal opening)");
        }
        const auto& loop = loops.front();
        std::vector<Vec3> ring;
        ring.reserve(loop.size());
        for (int idx : loop) ring.push_back(frame.endo.vertices[idx]);
        const Vec3 cap_center = centroid(ring);

        // Boundary must sit on the basal plane; anything else is a hole.
        Vec3 n = frame.basal_plane.normal;
        if (n.norm() <= 0.0) fail("cavity_volume", "basal plane normal is zero");
        n.normalize();
        double ring_radius = 0.0;
        for (const auto& p : ring) ring_radius += (p - cap_center).norm();
        ring_radius /= static_cast<double>(ring.size());
        const double tol = std::max(1e-9, 0.15 * ring_radius);
        for (std::size_t i = 0; i < ring.size(); ++i) {
            const double dist = std::abs((ring[i] - frame.basal_plane.point).dot(n));
            if (dist > tol) {
                fail("cavity_volume", "open boundary does not match the basal plane (vertex " +
                                          std::to_string(loop[i]) + " is " + std::to_string(dist) +
                                          " mm away)");
            }
        }
        // Fan the opening to its centroid, reversing each boundary edge so the
        // cap is oriented consistently with the surface.
        for (std::size_t i = 0; i < ring.size(); ++i) {
            const Vec3& a = ring[i];
            const Vec3& b = ring[(i + 1) % ring.size()];
            sum += b.dot(a.cross(cap_center)) / 6.0;
        }
    }
    const double volume_ml = std::abs(sum) / kMm3PerMl;
    if (!std::isfinite(volume_ml) || volume_ml <= 0.0) {
        fail("cavity_volume", "non-positive cavity volume");
    }
    return volume_ml;
}

VolumeCurve volume_curve(const LvSequence& seq) {
    validate_sequence(seq);
    VolumeCurve curve;
    curve.frame_interval_ms = seq.frame_interval_ms;
    curve.volumes_ml.reserve(seq.frames.size());
    for (std::size_t t = 0; t < seq.frames.size(); ++t) {
        try {
            curve.volumes_ml.push_back(cavity_volume(seq.frames[t]));
        } catch (const std::exception& e) {
            throw std::invalid_argument("volume_curve: frame " + std::to_string(t) + ": " +
                                        e.what());
        }
    }
    return curve;
}

double ejection_fraction(const VolumeCurve& curve) {
    if (curve.volumes_ml.empty()) fail("ejection_fraction", "empty curve");
    double v_ed = -std::numeric_limits<double>::infinity();
    double v_es = std::numeric_limits<double>::infinity();
    for (double v : curve.volumes_ml) {
        if (!(v > 0.0) || !std::isfinite(v)) fail("ejection_fraction", "non-positive volume");
        v_ed = std::max(v_ed, v);
        v_es = std::min(v_es, v);
    }
    return (v_ed - v_es) / v_ed * 100.0;
}

AhaLabels aha_parcellate(const TriSurface& medial, const Vec3& long_axis, const Vec3& apex,
                         const Vec3& rv_direction) {
    if (medial.vertices.empty()) fail("aha_parcellate", "empty medial surface");
    const double axis_len = long_axis.norm();
    if (axis_len <= 0.0) fail("aha_parcellate", "long_axis is zero");
    const Vec3 e_long = long_axis / axis_len;
    Vec3 e_rv = rv_direction - rv_direction.dot(e_long) * e_long;
    if (e_rv.norm() <= 1e-12 * std::max(1.0, rv_direction.norm())) {
        fail("aha_parcellate", "rv_direction parallel to long axis");
    }
    e_rv.normalize();
    const Vec3 e_circ = e_long.cross(e_rv);

    AhaLabels out;
    out.labels.assign(medial.vertices.size(), 0);
    std::vector<std::size_t> on_axis;
    const double axis_tol = 1e-9 * axis_len;

    for (std::size_t i = 0; i < medial.vertices.size(); ++i) {
        const Vec3 rel = medial.vertices[i] - apex;
        const double s = rel.dot(e_long) / axis_len;
        if (s < 1.0 / 6.0) {
            out.labels[i] = 17;
            continue;
        }
        const Vec3 radial = rel - rel.dot(e_long) * e_long;
        if (radial.norm() <= axis_tol) {
            on_axis.push_back(i);
            continue;
        }
        double az = std::atan2(radial.dot(e_circ), radial.dot(e_rv));
        if (az < 0.0) az += 2.0 * M_PI;
        if (s >= 2.0 / 3.0) {
            out.labels[i] = 1 + std::min(5, static_cast<int>(az / (M_PI / 3.0)));
        } else if (s >= 1.0 / 3.0) {
            out.labels[i] = 7 + std::min(5, static_cast<int>(az / (M_PI / 3.0)));
        } else {
            out.labels[i] = 13 + std::min(3, static_cast<int>(az / (M_PI / 2.0)));
        }
    }

    for (std::size_t i : on_axis) {
        double best = std::numeric_limits<double>::infinity();
        int label = 0;
        for (std::size_t j = 0; j < medial.vertices.size(); ++j) {
            if (out.labels[j] == 0) continue;
            const double d2 = (medial.vertices[j] - medial.vertices[i]).squaredNorm();
            if (d2 < best) {
                best = d2;
                label = out.labels[j];
            }
        }
        if (label == 0) fail("aha_parcellate", "on-axis vertex with no labeled neighbor");
        out.labels[i] = label;
    }
    return out;
}

}  // namespace cma::geometry
