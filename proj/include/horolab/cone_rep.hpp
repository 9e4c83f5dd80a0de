#pragma once

#include <array>

#include "horolab/moebius.hpp"

namespace horolab {

using Vec3 = std::array<double, 3>;
using Mat3 = std::array<std::array<double, 3>, 3>;

// Q(x) = x1^2 + x2^2 - x3^2.
double quadratic_form(const Vec3& v);

// Row-vector action v -> v M.
Vec3 apply(const Vec3& v, const Mat3& m);
Mat3 multiply(const Mat3& a, const Mat3& b);
Mat3 identity3();

// Symmetric-square representation into SO(Q). A vector (x1,x2,x3) is the
// symmetric matrix [[x3-x1, x2], [x2, x3+x1]], and g acts by M -> g^T M g,
// so -det M = Q is preserved and (1,0,1) is fixed exactly by every n_x.
Mat3 iota(const MoebiusElement& g);

inline constexpr Vec3 kConeBase = {1.0, 0.0, 1.0};

}  // namespace horolab
