#include "horolab/cone_rep.hpp"

namespace horolab {

double quadratic_form(const Vec3& v) { return v[0] * v[0] + v[1] * v[1] - v[2] * v[2]; }

Vec3 apply(const Vec3& v, const Mat3& m) {
    Vec3 r{};
    for (int j = 0; j < 3; ++j) r[j] = v[0] * m[0][j] + v[1] * m[1][j] + v[2] * m[2][j];
    return r;
}

Mat3 multiply(const Mat3& a, const Mat3& b) {
    Mat3 r{};
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) r[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j] + a[i][2] * b[2][j];
    return r;
}

Mat3 identity3() { return {{{1, 0, 0}, {0, 1, 0}, {0, 0, 1}}}; }

Mat3 iota(const MoebiusElement& g) {
    const double a = g.a, b = g.b, c = g.c, d = g.d;
    // Rows are the images of the basis vectors; each image is g^T M(e_i) g
    // read back through x3 = (p+r)/2, x1 = (r-p)/2, x2 = q.
    auto row = [](double p, double q, double r) { return std::array<double, 3>{(r - p) / 2, q, (p + r) / 2}; };
    // M(e1) = diag(-1, 1)
    const auto r1 = row(c * c - a * a, c * d - a * b, d * d - b * b);
    // M(e2) = [[0,1],[1,0]]
    const auto r2 = row(2 * a * c, a * d + b * c, 2 * b * d);
    // M(e3) = I
    const auto r3 = row(a * a + c * c, a * b + c * d, b * b + d * d);
    return {r1, r2, r3};
}

}  // namespace horolab
