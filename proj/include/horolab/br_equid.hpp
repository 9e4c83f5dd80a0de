#pragma once

#include <string>
#include <vector>

#include "horolab/eigenfn.hpp"
#include "horolab/group.hpp"
#include "json.hpp"

namespace horolab {

// exp(-1/(1 - t^2)) on |t| < 1, zero elsewhere.
double bump_profile(double t);

// Product bump in NAK coordinates; the angle offset is taken mod pi.
struct BumpFunction {
    double xc = 0.0, yc = 1.0, thetac = 0.5 * kPi;
    double rx = 0.1, ry = 0.1, rtheta = 0.3;
    double amplitude = 1.0;

    void validate() const;  // support inside y > 0, rtheta < pi/2
    double operator()(const IwasawaNAK& g) const;
    double operator()(const MoebiusElement& g) const { return (*this)(iwasawa(g)); }
    // Largest d(i, z) over the support and the hyperbolic radius of the support around its center.
    double reach() const;
    double radius() const;
    nlohmann::json to_json() const;
};

// Finite linear combination of bumps.
struct TestFunction {
    std::vector<BumpFunction> bumps;
    TestFunction() = default;
    TestFunction(const BumpFunction& b) : bumps{b} {}
    double operator()(const IwasawaNAK& g) const;
    double reach() const;
    double ylo() const;
    double yhi() const;
    nlohmann::json to_json() const;
};

struct InjectivityCertificate {
    bool valid = false;
    double checked_radius = 0.0;
    double threshold = 0.0;  // beyond this displacement no translate can meet the support
    double margin = 0.0;     // min over checked gamma != e of d(z_i, gamma z_j) - rho_i - rho_j
    std::string ball_hash;
    std::string function_json;
};

InjectivityCertificate certify_injectivity(const TestFunction& f, const OrbitBall& ball);

struct PeriodizedValue {
    double value = 0.0;
    double required_radius = 0.0;
    int terms = 0;  // number of gamma with f(gamma g) != 0
};

// sum over the ball of f(gamma g); throws when the ball cannot reach every
// translate meeting the support.
PeriodizedValue periodized_eval(const TestFunction& f, const OrbitBall& ball, const MoebiusElement& g);

// x-range for horocycle integrals: the hull of the ping-pong disks for a
// Schottky group, one period [-x0, x0) for a parabolic pair.
struct HorocycleWindow {
    double lo = 0.0, hi = 0.0;
    bool periodic = false;
    double x0() const { return 0.5 * (hi - lo); }
};
HorocycleWindow window_for(const GroupPresentation& p);

struct PsiN {
    double value = 0.0;
    double error = 0.0;
    int contributing = 0;  // gamma whose x-interval is nonempty
    double required_radius = 0.0;
};

// int over the window of sum_gamma f(gamma n_x a_y) dx.
PsiN psi_N(const TestFunction& f, const OrbitBall& ball, double y, const HorocycleWindow& w, double rel_tol = 1e-9);
namespace serial {
PsiN psi_N(const TestFunction& f, const OrbitBall& ball, double y, const HorocycleWindow& w, double rel_tol = 1e-9);
}

// Boundary point carried by the sheet k_theta A N: theta with k_theta(inf) = u.
double br_sheet_angle(double u);

// sum_j w_j int int f(k_theta(u_j) a_s n_t) s^(delta - 1) dt ds.
double mBR(const TestFunction& f, const AtomicMeasure& m, double delta);

struct InnerProduct {
    cplx value;
    double error = 0.0;  // difference between two Gauss-Legendre orders
};

// <psi, phi_ell> = int_G f conj(phi_ell) y^-2 dx dy dtheta / pi over the support.
InnerProduct inner_product_phi(const TestFunction& f, const InjectivityCertificate& cert, const EigenContext& ctx,
                               int ell);
// All ell in [-L, L] at once (index ell + L).
std::vector<InnerProduct> inner_products_phi(const TestFunction& f, const InjectivityCertificate& cert,
                                             const EigenContext& ctx, int L);

struct BrdReport {
    int L = 12;
    cplx spectral_sum;           // sum_{|l| <= L} c_l <psi, phi_l>
    double br_side = 0.0;        // kappa * mBR(psi)
    double fitted_main = 0.0;    // M from the horocycle fit, when supplied
    bool has_fit = false;
    double imag_ratio = 0.0;     // |Im S_L| / |S_L|
    double tail_estimate = 0.0;  // |S_L - S_{L-4}|
    std::vector<cplx> partial_sums;  // S_0 .. S_L
    double gap_spectral_br = 0.0, gap_spectral_fit = 0.0, gap_br_fit = 0.0;
    nlohmann::json to_json() const;
};

BrdReport brd_identity_check(const TestFunction& f, const InjectivityCertificate& cert, const EigenContext& ctx,
                             int L = 12);
void attach_fit(BrdReport& r, double fitted_main);

struct EquidFit {
    double main_exponent = 0.0;        // a in M y^a + B y^b with a free
    double M = 0.0;                    // at a = 1 - delta
    double B = 0.0;
    double correction_exponent = 0.0;  // b at a = 1 - delta, searched in (a, a + 1]
    double error_exponent = 0.0;       // slope of log|psi - M y^(1-delta)| vs log y
    double gap = 0.0;                  // error_exponent - (1 - delta)
    double rms_residual = 0.0;         // relative, two-term model
    bool flagged = false;              // residual does not decay faster than the main term
};

// Two-term fits of psi(y) over the grid. a free / a fixed at 1 - delta.
EquidFit fit_equidistribution(const std::vector<double>& y, const std::vector<double>& psi, double delta);

struct EquidReport {
    std::string group_hash, measure_hash;
    double delta_hat = 0.0;
    nlohmann::json function;
    std::vector<double> y, psi, main_term, residual;
    EquidFit fit;
    nlohmann::json to_json() const;
    // comment lines are written first, each prefixed by "# ".
    void write_csv(const std::string& path, const std::string& comment = "") const;
};

EquidReport equid_experiment(const TestFunction& f, const OrbitBall& ball, const HorocycleWindow& w,
                             double delta_hat, const std::vector<double>& ys, const std::string& measure_hash = "");

}  // namespace horolab
