#include "test_meshes.hpp"

#include <cmath>
#include <map>

namespace cma::testing {

geometry::TriSurface icosphere(double radius, int subdivisions) {
    const double phi = (1.0 + std::sqrt(5.0)) / 2.0;
    geometry::TriSurface mesh;
    mesh.vertices = {
        {-1, phi, 0}, {1, phi, 0},   {-1, -phi, 0}, {1, -phi, 0},
        {0, -1, phi}, {0, 1, phi},   {0, -1, -phi}, {0, 1, -phi},
        {phi, 0, -1}, {phi, 0, 1},   {-phi, 0, -1}, {-phi, 0, 1},
    };
    mesh.faces = {{0, 11, 5}, {0, 5, 1},  {0, 1, 7},   {0, 7, 10}, {0, 10, 11},
                  {1, 5, 9},  {5, 11, 4}, {11, 10, 2}, {10, 7, 6}, {7, 1, 8},
                  {3, 9, 4},  {3, 4, 2},  {3, 2, 6},   {3, 6, 8},  {3, 8, 9},
                  {4, 9, 5},  {2, 4, 11}, {6, 2, 10},  {8, 6, 7},  {9, 8, 1}};
    for (int level = 0; level < subdivisions; ++level) {
        std::map<std::pair<int, int>, int> midpoint;
        auto mid = [&](int a, int b) {
            const auto key = std::minmax(a, b);
            const auto it = midpoint.find(key);
            if (it != midpoint.end()) return it->second;
            const int idx = static_cast<int>(mesh.vertices.size());
            mesh.vertices.push_back(0.5 * (mesh.vertices[a] + mesh.vertices[b]));
            midpoint[key] = idx;
            return idx;
        };
        std::vector<std::array<int, 3>> faces;
        faces.reserve(mesh.faces.size() * 4);
        for (const auto& f : mesh.faces) {
            const int ab = mid(f[0], f[1]);
            const int bc = mid(f[1], f[2]);
            const int ca = mid(f[2], f[0]);
            faces.push_back({f[0], ab, ca});
            faces.push_back({f[1], bc, ab});
            faces.push_back({f[2], ca, bc});
            faces.push_back({ab, bc, ca});
        }
        mesh.faces = std::move(faces);
    }
    for (auto& v : mesh.vertices) v = radius * v.normalized();
    return mesh;
}

geometry::TriSurface ellipsoid(double a, double b, double c, int subdivisions) {
    geometry::TriSurface mesh = icosphere(1.0, subdivisions);
    for (auto& v : mesh.vertices) {
        v.x() *= a;
        v.y() *= b;
        v.z() *= c;
    }
    return mesh;
}

atlas::SimilarityTransform random_similarity(Rng& rng, double scale_lo, double scale_hi) {
    std::normal_distribution<double> gauss(0.0, 1.0);
    std::uniform_real_distribution<double> unif(scale_lo, scale_hi);
    Eigen::Quaterniond q(gauss(rng), gauss(rng), gauss(rng), gauss(rng));
    q.normalize();
    atlas::SimilarityTransform t;
    t.rotation = q.toRotationMatrix();
    t.scale = unif(rng);
    t.translation = Vec3(10.0 * gauss(rng), 10.0 * gauss(rng), 10.0 * gauss(rng));
    return t;
}

geometry::TriSurface transformed(const geometry::TriSurface& surface,
                                 const atlas::SimilarityTransform& t) {
    geometry::TriSurface out = surface;
    for (auto& v : out.vertices) v = t.apply(v);
    return out;
}

}  // namespace cma::testing
