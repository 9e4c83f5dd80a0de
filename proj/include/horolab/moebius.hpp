#pragma once

#include <complex>
#include <string>

namespace horolab {

// Named tolerances used across the library.
inline constexpr double kDetTol = 1e-10;
inline constexpr double kRoundTripTol = 1e-10;
// Determinants are renormalized only while |ad| + |bc| stays below this
// multiple of |ad - bc|.
inline constexpr double kCancellationLimit = 1e10;
inline constexpr double kPi = 3.14159265358979323846;

struct PlanePoint {
    double x = 0.0;
    double y = 1.0;

    std::complex<double> z() const { return {x, y}; }
    static PlanePoint from(std::complex<double> z);
};

// Either a finite real u or the point at infinity.
class BoundaryPoint {
public:
    static BoundaryPoint finite(double u);
    static BoundaryPoint infinity() { return BoundaryPoint(true, 0.0); }

    bool is_infinite() const { return inf_; }
    // Throws std::logic_error at infinity.
    double value() const;
    bool operator==(const BoundaryPoint& o) const {
        return inf_ == o.inf_ && (inf_ || u_ == o.u_);
    }

private:
    BoundaryPoint(bool inf, double u) : inf_(inf), u_(u) {}
    bool inf_;
    double u_;
};

// Element of PSL(2,R), stored as a det-1 matrix [[a,b],[c,d]] with the
// first nonzero of (a,b,c) positive.
struct MoebiusElement {
    double a = 1, b = 0, c = 0, d = 1;

    static MoebiusElement identity() { return {}; }
    // Normalizes determinant and sign; throws std::invalid_argument if det <= 0.
    static MoebiusElement from_entries(double a, double b, double c, double d);
    static MoebiusElement translation(double x);   // n_x
    static MoebiusElement dilation(double y);      // a_y, y > 0
    static MoebiusElement rotation(double theta);  // k_theta

    double det() const { return a * d - b * c; }
    double frobenius_sq() const { return a * a + b * b + c * c + d * d; }
    double trace_abs() const;
    bool approx_equal(const MoebiusElement& o, double tol) const;
    std::string to_string() const;
};

struct IwasawaNAK {
    double x = 0.0;
    double y = 1.0;
    double theta = 0.0;  // in [0, pi)

    MoebiusElement to_element() const;
    PlanePoint point() const { return {x, y}; }
};

MoebiusElement compose(const MoebiusElement& g, const MoebiusElement& h);
MoebiusElement invert(const MoebiusElement& g);
PlanePoint act_plane(const MoebiusElement& g, const PlanePoint& z);
BoundaryPoint act_boundary(const MoebiusElement& g, const BoundaryPoint& xi);
IwasawaNAK iwasawa(const MoebiusElement& g);

// Reduce an angle into [0, pi).
double reduce_angle(double theta);

double distance(const PlanePoint& z, const PlanePoint& w);
// d(i, g i) from the matrix entries alone.
double displacement(const MoebiusElement& g);

// lim d(z1, p) - d(z2, p) as p runs to xi along a geodesic.
double busemann(const BoundaryPoint& xi, const PlanePoint& z1, const PlanePoint& z2);

// Endpoint of the geodesic ray from i through z; i itself maps to infinity.
BoundaryPoint visual_projection(const PlanePoint& z);

// r_l = sqrt(Gamma(d)Gamma(l+1-d) / (Gamma(1-d)Gamma(d+l))), d in (1/2, 1).
double gamma_ratio(double delta, int ell);
// Positive prefactor of the weight-l eigenfunction, equal to 1/gamma_ratio.
double kernel_prefactor(double delta, int ell);
// Integral of (1+x^2)^(-delta) over the real line: sqrt(pi) Gamma(d-1/2)/Gamma(d).
double horocycle_constant(double delta);

}  // namespace horolab
