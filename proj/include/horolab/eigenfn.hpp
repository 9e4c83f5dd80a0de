#pragma once

#include <complex>
#include <limits>
#include <vector>

#include "horolab/group.hpp"
#include "horolab/moebius.hpp"
#include "horolab/patterson.hpp"
#include "horolab/quadrature.hpp"

namespace horolab {

using cplx = std::complex<double>;

struct EigenOptions {
    // Merge atoms closer than this before evaluating (0 keeps every atom).
    double compress_resolution = 0.0;
    // Lattice shifts summed directly on each side when x0 is finite; the rest
    // of the lattice sum is an Euler-Maclaurin tail.
    int lattice_terms = 24;
};

// Measure, critical exponent and half-period. For x0 < inf only atoms in
// [-x0, x0) are kept and the kernel sums are periodized with period 2 x0.
class EigenContext {
   public:
    EigenContext(const AtomicMeasure& m, double delta, double x0 = std::numeric_limits<double>::infinity(),
                 const EigenOptions& opt = {});

    double delta() const { return delta_; }
    double x0() const { return x0_; }
    bool periodic() const { return std::isfinite(x0_); }
    double period() const { return 2.0 * x0_; }
    int lattice_terms() const { return lattice_terms_; }
    const AtomicMeasure& measure() const { return measure_; }
    std::size_t dropped_atoms() const { return dropped_; }

    // Atom positions (ascending) and weights w_j (1 + u_j^2)^delta.
    const std::vector<double>& atoms() const { return u_; }
    const std::vector<double>& ps_weights() const { return mu_; }
    double ps_total() const { return ps_total_; }
    std::pair<double, double> hull() const { return {u_.front(), u_.back()}; }

    // Same function precomposed with z -> -1/z: atoms -1/u, weights mu u^(-2 delta).
    // Only for x0 = inf and atoms away from 0.
    EigenContext inverted() const;

   private:
    EigenContext() = default;
    void finish();
    AtomicMeasure measure_;
    double delta_ = 0.75;
    double x0_ = std::numeric_limits<double>::infinity();
    int lattice_terms_ = 24;
    std::size_t dropped_ = 0;
    std::vector<double> u_, mu_;
    double ps_total_ = 0.0;
};

struct EigenValue {
    cplx value;
    int ell = 0;
    IwasawaNAK point;
};

// int_0^a sin^(2 delta - 2)(t) e^(-2 i ell t) dt for 0 < a < pi.
cplx angular_tail(double delta, int ell, double a);

// sum_j mu_j (y / ((x - u_j)^2 + y^2))^delta ((x - u_j - iy) / (x - u_j + iy))^ell,
// periodized when x0 is finite. ell >= 0.
cplx kernel_sum(const EigenContext& ctx, int ell, double x, double y);

double phi0(const EigenContext& ctx, const PlanePoint& z);
cplx phi_ell(const EigenContext& ctx, int ell, const IwasawaNAK& g);
EigenValue evaluate(const EigenContext& ctx, int ell, const IwasawaNAK& g);

std::vector<cplx> phi_ell_batch(const EigenContext& ctx, int ell, const std::vector<IwasawaNAK>& pts);
namespace serial {
std::vector<cplx> phi_ell_batch(const EigenContext& ctx, int ell, const std::vector<IwasawaNAK>& pts);
}

// Relative residuals of central-difference identities at g with step h. The
// second-order checks combine steps h and h/2 (Richardson).
double laplacian_check(const EigenContext& ctx, const PlanePoint& z, double h = 1e-3);
double casimir_check(const EigenContext& ctx, int ell, const IwasawaNAK& g, double h = 1e-3);
// R phi_ell vs sqrt((delta+ell)(1-delta+ell)) phi_(ell+1), ell >= 0.
double raising_check(const EigenContext& ctx, int ell, const IwasawaNAK& g, double h = 1e-4);
// L phi_(-ell) vs sqrt((delta+ell)(1-delta+ell)) phi_(-ell-1), ell >= 0.
double lowering_check(const EigenContext& ctx, int ell, const IwasawaNAK& g, double h = 1e-4);

// Truncation window for horocycle integrals; the default is the whole line.
struct Truncation {
    double lo = -std::numeric_limits<double>::infinity();
    double hi = std::numeric_limits<double>::infinity();
    bool whole_line() const { return std::isinf(lo) && std::isinf(hi); }
};

struct HorocycleAverage {
    cplx value;
    double error = 0.0;
    int evaluations = 0;
    bool converged = true;
};

// int phi_ell(n_x a_y) dx over [-x0, x0) (x0 finite) or over J. A finite
// window must contain the atom hull. For x0 finite the period integral is
// unfolded into a whole-line integral over the atoms of one period.
HorocycleAverage horocycle_average(const EigenContext& ctx, int ell, double y, const Truncation& J = {},
                                   const QuadOptions& opt = {});

double c0(const EigenContext& ctx);
double c_ell(const EigenContext& ctx, int ell);

// |int d/dx phi_ell(n_x a_y k_theta) dx| relative to int |d/dx phi_ell|, with
// the derivative taken by central differences.
double dx_integral_check(const EigenContext& ctx, int ell, double y, double theta, double h = 1e-3);
// |phi(n_{x0} a_y k_theta) - phi(n_{-x0} a_y k_theta)| / |phi|; finite x0 only.
double periodicity_defect(const EigenContext& ctx, int ell, double y, double theta);

// int over the complement of J of phi0(n_x a_y) dx. Needs x0 = inf and J
// strictly containing the atom hull.
double tail_integral(const EigenContext& ctx, double y, const Truncation& J);

struct SupRatio {
    int ell = 0;
    double max_ratio = 0.0;  // max |phi_ell| / phi0 over the sample
    double bound = 0.0;      // kernel_prefactor(delta, ell)
};
SupRatio sup_ratio(const EigenContext& ctx, int ell, const std::vector<IwasawaNAK>& pts);

struct L2Options {
    QuadOptions outer{1e-6, 0.0, 4000};
    double inner_rel_tol = 1e-8;
    // Cusp: integrate up to height factor * period, then add the constant-term tail.
    double cusp_height_factor = 1.5;
};

// int over a fundamental domain of phi0^2 dx dy / y^2. Schottky groups with
// disk regions (x0 = inf), or the S-symmetric parabolic pair (finite x0).
double phi0_l2_norm_sq(const EigenContext& ctx, const GroupPresentation& p, const L2Options& opt = {});
// Measure rescaled so that the L2 norm of phi0 is one.
AtomicMeasure normalize_phi0_l2(const EigenContext& ctx, const GroupPresentation& p, const L2Options& opt = {});

}  // namespace horolab
