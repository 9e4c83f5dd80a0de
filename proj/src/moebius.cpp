#include "horolab/moebius.hpp"

#include <cmath>
#include <cstdio>
#include <limits>
#include <stdexcept>

namespace horolab {

PlanePoint PlanePoint::from(std::complex<double> z) { return {z.real(), z.imag()}; }

BoundaryPoint BoundaryPoint::finite(double u) {
    if (!std::isfinite(u)) throw std::invalid_argument("BoundaryPoint::finite: non-finite value");
    return BoundaryPoint(false, u);
}

double BoundaryPoint::value() const {
    if (inf_) throw std::logic_error("BoundaryPoint::value at infinity");
    return u_;
}

namespace {

// ad - bc with one rounding (Kahan's fma trick).
double det2(double a, double b, double c, double d) {
    const double w = b * c;
    const double e = std::fma(-b, c, w);
    const double f = std::fma(a, d, -w);
    return f + e;
}

MoebiusElement canonical(double a, double b, double c, double d) {
    const double det = det2(a, b, c, d);
    const double scale = std::fabs(a * d) + std::fabs(b * c);
    // For long words ad and bc cancel to far below double resolution; the
    // determinant of the stored entries then carries no information and the
    // entries are kept as computed.
    const bool resolvable =
        std::isfinite(det) && (scale < 1e6 || std::fabs(det) * kCancellationLimit > scale);
    if (resolvable) {
        if (!(det > 0.0)) throw std::invalid_argument("MoebiusElement: determinant must be positive");
        const double floor = 4.0 * std::numeric_limits<double>::epsilon() * scale;
        if (std::fabs(det - 1.0) > floor) {
            const double s = 1.0 / std::sqrt(det);
            a *= s; b *= s; c *= s; d *= s;
        }
    } else if (!std::isfinite(scale)) {
        throw std::invalid_argument("MoebiusElement: non-finite entries");
    }
    const double lead = a != 0.0 ? a : (b != 0.0 ? b : c);
    if (lead < 0.0) { a = -a; b = -b; c = -c; d = -d; }
    return {a, b, c, d};
}

}  // namespace

MoebiusElement MoebiusElement::from_entries(double a, double b, double c, double d) {
    return canonical(a, b, c, d);
}

MoebiusElement MoebiusElement::translation(double x) { return {1.0, x, 0.0, 1.0}; }

MoebiusElement MoebiusElement::dilation(double y) {
    if (!(y > 0.0)) throw std::invalid_argument("dilation: y must be positive");
    const double r = std::sqrt(y);
    return {r, 0.0, 0.0, 1.0 / r};
}

MoebiusElement MoebiusElement::rotation(double theta) {
    const double c = std::cos(theta), s = std::sin(theta);
    return canonical(c, s, -s, c);
}

double MoebiusElement::trace_abs() const { return std::fabs(a + d); }

bool MoebiusElement::approx_equal(const MoebiusElement& o, double tol) const {
    auto close = [&](double sgn) {
        return std::fabs(a - sgn * o.a) <= tol && std::fabs(b - sgn * o.b) <= tol &&
               std::fabs(c - sgn * o.c) <= tol && std::fabs(d - sgn * o.d) <= tol;
    };
    return close(1.0) || close(-1.0);
}

std::string MoebiusElement::to_string() const {
    char buf[128];
    std::snprintf(buf, sizeof buf, "[[%.17g, %.17g], [%.17g, %.17g]]", a, b, c, d);
    return buf;
}

MoebiusElement IwasawaNAK::to_element() const {
    return compose(compose(MoebiusElement::translation(x), MoebiusElement::dilation(y)),
                   MoebiusElement::rotation(theta));
}

MoebiusElement compose(const MoebiusElement& g, const MoebiusElement& h) {
    return canonical(g.a * h.a + g.b * h.c, g.a * h.b + g.b * h.d,
                     g.c * h.a + g.d * h.c, g.c * h.b + g.d * h.d);
}

MoebiusElement invert(const MoebiusElement& g) { return canonical(g.d, -g.b, -g.c, g.a); }

PlanePoint act_plane(const MoebiusElement& g, const PlanePoint& z) {
    const std::complex<double> w = z.z();
    const std::complex<double> den = g.c * w + g.d;
    const double n2 = std::norm(den);
    // Real part from the product with the conjugate; imaginary part via y/|cz+d|^2.
    const std::complex<double> num = (g.a * w + g.b) * std::conj(den);
    return {num.real() / n2, z.y / n2};
}

BoundaryPoint act_boundary(const MoebiusElement& g, const BoundaryPoint& xi) {
    if (xi.is_infinite()) {
        if (g.c == 0.0) return BoundaryPoint::infinity();
        return BoundaryPoint::finite(g.a / g.c);
    }
    const double u = xi.value();
    const double den = g.c * u + g.d;
    if (den == 0.0) return BoundaryPoint::infinity();
    return BoundaryPoint::finite((g.a * u + g.b) / den);
}

double reduce_angle(double theta) {
    double t = std::fmod(theta, kPi);
    if (t < 0.0) t += kPi;
    if (t >= kPi) t -= kPi;
    return t;
}

IwasawaNAK iwasawa(const MoebiusElement& g) {
    const double n2 = g.c * g.c + g.d * g.d;
    IwasawaNAK r;
    r.y = 1.0 / n2;
    r.x = (g.a * g.c + g.b * g.d) / n2;
    r.theta = reduce_angle(std::atan2(-g.c, g.d));
    return r;
}

double distance(const PlanePoint& z, const PlanePoint& w) {
    const double dx = z.x - w.x, dy = z.y - w.y;
    const double chord = std::sqrt(dx * dx + dy * dy);
    return 2.0 * std::asinh(chord / (2.0 * std::sqrt(z.y * w.y)));
}

double displacement(const MoebiusElement& g) {
    const double c = 0.5 * g.frobenius_sq();
    return c <= 1.0 ? 0.0 : std::acosh(c);
}

double busemann(const BoundaryPoint& xi, const PlanePoint& z1, const PlanePoint& z2) {
    if (xi.is_infinite()) return std::log(z2.y / z1.y);
    const double u = xi.value();
    const double q1 = ((z1.x - u) * (z1.x - u) + z1.y * z1.y) / z1.y;
    const double q2 = ((z2.x - u) * (z2.x - u) + z2.y * z2.y) / z2.y;
    return std::log(q1 / q2);
}

BoundaryPoint visual_projection(const PlanePoint& z) {
    const std::complex<double> w = z.z();
    const std::complex<double> disk = (w - std::complex<double>(0, 1)) / (w + std::complex<double>(0, 1));
    const double r = std::abs(disk);
    if (r == 0.0) return BoundaryPoint::infinity();
    const double phi = std::arg(disk);
    // Inverse Cayley of e^{i phi}: u = -cot(phi/2).
    const double half = 0.5 * phi;
    const double s = std::sin(half);
    if (s == 0.0) return BoundaryPoint::infinity();
    return BoundaryPoint::finite(-std::cos(half) / s);
}

namespace {
void check_delta(double delta) {
    if (!(delta > 0.5 && delta < 1.0)) throw std::domain_error("delta must lie in (1/2, 1)");
}
}  // namespace

double gamma_ratio(double delta, int ell) {
    check_delta(delta);
    if (ell < 0) throw std::domain_error("gamma_ratio: ell must be nonnegative");
    const double l = ell;
    return std::exp(0.5 * (std::lgamma(delta) + std::lgamma(l + 1.0 - delta) -
                           std::lgamma(1.0 - delta) - std::lgamma(delta + l)));
}

double kernel_prefactor(double delta, int ell) { return 1.0 / gamma_ratio(delta, ell < 0 ? -ell : ell); }

double horocycle_constant(double delta) {
    if (!(delta > 0.5)) throw std::domain_error("horocycle_constant: delta must exceed 1/2");
    return std::sqrt(kPi) * std::exp(std::lgamma(delta - 0.5) - std::lgamma(delta));
}

}  // namespace horolab
