#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <random>
#include <stdexcept>
#include <string>

namespace cma {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Rng = std::mt19937_64;

/// Runs fn(i) for i in [0, n). jobs <= 1 runs inline; otherwise a small
/// worker pool pulls indices from a shared counter. fn must be safe to call
/// concurrently for distinct i.
void parallel_for(std::size_t n, int jobs, const std::function<void(std::size_t)>& fn);

/// FNV-1a 64-bit, used for stage/input checksums in run manifests.
std::uint64_t fnv1a64(const void* data, std::size_t len);
std::uint64_t fnv1a64(const std::string& s);

inline bool finite(const Vec3& v) {
    return std::isfinite(v.x()) && std::isfinite(v.y()) && std::isfinite(v.z());
}

}  // namespace cma
