#pragma once

#include "cma/atlas.hpp"
#include "cma/geometry.hpp"

#include <random>

namespace cma::testing {

/// Icosphere of the given radius: subdivisions 0 -> 12 vertices, each level
/// quadruples the face count (1 -> 42, 2 -> 162, 3 -> 642, 4 -> 2562).
geometry::TriSurface icosphere(double radius, int subdivisions);

/// Axis-aligned ellipsoid by scaling an icosphere.
geometry::TriSurface ellipsoid(double a, double b, double c, int subdivisions);

/// Random proper-rotation + scale + translation, seeded.
atlas::SimilarityTransform random_similarity(Rng& rng, double scale_lo = 0.6,
                                             double scale_hi = 1.6);

/// Applies a similarity to every vertex of a copy of the surface.
geometry::TriSurface transformed(const geometry::TriSurface& surface,
                                 const atlas::SimilarityTransform& t);

}  // namespace cma::testing
