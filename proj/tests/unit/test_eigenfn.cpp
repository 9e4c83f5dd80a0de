#include <cmath>
#include <random>

#include <boost/math/quadrature/exp_sinh.hpp>
#include <boost/math/quadrature/tanh_sinh.hpp>
#include <boost/math/special_functions/beta.hpp>
#include <boost/math/special_functions/gamma.hpp>

#include "doctest.h"
#include "horolab/eigenfn.hpp"

using namespace horolab;

namespace {

struct Fixture {
    GroupPresentation group;
    double delta;
    AtomicMeasure measure;
    double x0;
};

Fixture make_fixture(bool cusp) {
    auto p = cusp ? parabolic_pair(4.0) : schottky_symmetric(0.1, 0.95);
    const auto ball = enumerate_ball(p, 14.0);
    const auto est = estimate_delta(ball);
    auto m = build_patterson(ball, est.delta_hat, default_s(est)).measure;
    return {p, est.delta_hat, m, cusp ? 2.0 : INFINITY};
}

const Fixture& sch() {
    static const Fixture f = make_fixture(false);
    return f;
}
const Fixture& cusp() {
    static const Fixture f = make_fixture(true);
    return f;
}

EigenContext context(const Fixture& f, double resolution = 1e-3) {
    EigenOptions o;
    o.compress_resolution = resolution;
    return EigenContext(f.measure, f.delta, f.x0, o);
}

EigenContext single_atom(double delta, double u = 0.0) { return EigenContext(AtomicMeasure::from_atoms({{u, 1.0}}), delta); }

// independent closed forms
double gamma_ratio_product(double d, int l) {
    double r = 1.0;
    for (int k = 0; k < l; ++k) r *= (k + 1 - d) / (d + k);
    return std::sqrt(r);
}

// int_a^inf (y / (x^2 + y^2))^d dx
double beta_tail(double d, double y, double a) {
    return std::pow(y, 1 - d) * 0.5 * boost::math::beta(d - 0.5, 0.5, 1.0 / (1.0 + (a / y) * (a / y)));
}

std::vector<IwasawaNAK> random_points(int n, double xlo, double xhi, double ylo, double yhi, unsigned seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> X(xlo, xhi), L(std::log(ylo), std::log(yhi)), T(0, kPi);
    std::vector<IwasawaNAK> pts;
    for (int i = 0; i < n; ++i) pts.push_back({X(rng), std::exp(L(rng)), T(rng)});
    return pts;
}

}  // namespace

TEST_CASE("EigenContext validation") {
    auto m = AtomicMeasure::from_atoms({{0.0, 1.0}});
    CHECK_THROWS_AS(EigenContext(m, 0.5), std::domain_error);
    CHECK_THROWS_AS(EigenContext(m, 1.0), std::domain_error);
    CHECK_THROWS_AS(EigenContext(AtomicMeasure::from_atoms({{INFINITY, 1.0}}), 0.7), std::invalid_argument);
    EigenContext per(AtomicMeasure::from_atoms({{INFINITY, 1.0}, {0.5, 1.0}, {3.0, 1.0}}), 0.7, 2.0);
    CHECK(per.atoms().size() == 1);
    CHECK(per.dropped_atoms() == 2);
}

TEST_CASE("angular_tail") {
    for (double d : {0.6, 0.7, 0.9}) {
        // ell = 0 against the incomplete beta function
        for (double a : {0.01, 0.3, 0.59, 0.61, 1.0, 1.5, 2.5}) {
            const double s2 = std::sin(a) * std::sin(a);
            double expect = 0.5 * boost::math::beta(d - 0.5, 0.5, s2);
            if (a > kPi / 2) expect = boost::math::beta(d - 0.5, 0.5) - expect;
            CHECK(angular_tail(d, 0, a).real() == doctest::Approx(expect).epsilon(1e-10));
            CHECK(std::fabs(angular_tail(d, 0, a).imag()) < 1e-12);
        }
        // general ell against direct quadrature of the angular integrand
        for (int l : {1, 3, 12}) {
            for (double a : {0.05, 0.4, 0.6, 0.8, 1.3}) {
                boost::math::quadrature::tanh_sinh<double> ts;
                auto re = ts.integrate([&](double t) { return std::pow(std::sin(t), 2 * d - 2) * std::cos(2 * l * t); }, 0.0, a);
                auto im = ts.integrate([&](double t) { return -std::pow(std::sin(t), 2 * d - 2) * std::sin(2 * l * t); }, 0.0, a);
                const cplx v = angular_tail(d, l, a);
                CHECK(std::abs(v - cplx(re, im)) < 1e-9 * std::max(1.0, std::abs(v)));
            }
        }
    }
    CHECK_THROWS_AS(angular_tail(0.7, 0, 0.0), std::invalid_argument);
}

TEST_CASE("phi0 examples") {
    const auto ctx = single_atom(0.7);
    CHECK(phi0(ctx, {0.0, 1.0}) == doctest::Approx(1.0).epsilon(1e-14));
    CHECK(phi0(ctx, {0.4, 0.3}) == doctest::Approx(std::pow(0.3 / 0.25, 0.7)).epsilon(1e-13));
    // the Poisson kernel at i is identically one, so phi0(i) is the total mass
    const auto m = sch().measure;
    EigenContext full(m, sch().delta);
    CHECK(phi0(full, {0.0, 1.0}) == doctest::Approx(m.total_mass).epsilon(1e-10));
}

TEST_CASE("phi0 is a Laplace eigenfunction and positive") {
    const auto ctx = context(sch());
    for (const auto& g : random_points(40, -1.5, 1.5, 0.05, 3.0, 7)) {
        CHECK(phi0(ctx, {g.x, g.y}) > 0.0);
        CHECK(laplacian_check(ctx, {g.x, g.y}, std::min(1e-3, 0.2 * g.y)) < 1e-4);
    }
}

TEST_CASE("phi_ell formula symmetries") {
    const auto ctx = context(sch());
    const auto pts = random_points(1000, -3.0, 3.0, 0.02, 5.0, 11);
    SUBCASE("ell = 0 is phi0, conjugation, K-type law") {
        for (std::size_t i = 0; i < 100; ++i) {
            const auto& g = pts[i];
            CHECK(phi_ell(ctx, 0, g).real() == doctest::Approx(phi0(ctx, {g.x, g.y})).epsilon(1e-13));
            CHECK(std::fabs(phi_ell(ctx, 0, g).imag()) < 1e-14 * phi0(ctx, {g.x, g.y}));
            for (int l : {1, 2, 5}) {
                const cplx a = phi_ell(ctx, l, g), b = phi_ell(ctx, -l, g);
                CHECK(std::abs(b - std::conj(a)) <= 1e-12 * std::abs(a));
                const cplx rot = phi_ell(ctx, l, {g.x, g.y, g.theta + 0.3});
                CHECK(std::abs(rot - std::polar(1.0, 2 * l * 0.3) * a) <= 1e-12 * std::abs(a));
                const auto ev = evaluate(ctx, -l, g);
                CHECK(ev.ell == -l);
                CHECK(ev.value == b);
            }
        }
    }
    SUBCASE("l-dependent bound from the triangle inequality") {
        for (int l : {1, 2, 4, 8}) {
            const auto s = sup_ratio(ctx, l, pts);
            CHECK(s.bound == doctest::Approx(kernel_prefactor(sch().delta, l)));
            CHECK(s.max_ratio <= s.bound * (1 + 1e-12));
        }
    }
    SUBCASE("batch matches the serial reference") {
        const auto a = phi_ell_batch(ctx, 3, pts), b = serial::phi_ell_batch(ctx, 3, pts);
        REQUIRE(a.size() == b.size());
        for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);
    }
}

TEST_CASE("raising and lowering") {
    const double d = 0.72;
    const auto one = single_atom(d, 0.2);
    const IwasawaNAK g{0.5, 0.6, 0.4};
    CHECK(raising_check(one, 0, g, 1e-4) < 1e-3);
    CHECK(lowering_check(one, 0, g, 1e-4) < 1e-3);
    // central differences: halving h quarters the residual
    for (int l : {0, 2}) {
        const double r1 = raising_check(one, l, g, 2e-2), r2 = raising_check(one, l, g, 1e-2);
        CHECK(r1 / r2 == doctest::Approx(4.0).epsilon(0.1));
        const double s1 = lowering_check(one, l, g, 2e-2), s2 = lowering_check(one, l, g, 1e-2);
        CHECK(s1 / s2 == doctest::Approx(4.0).epsilon(0.1));
    }
    for (const auto* f : {&sch(), &cusp()}) {
        const auto ctx = context(*f);
        for (const auto& p : random_points(10, -1.0, 1.0, 0.1, 2.0, 5))
            for (int l : {0, 1, 3}) {
                CHECK(raising_check(ctx, l, p) < 1e-3);
                CHECK(lowering_check(ctx, l, p) < 1e-3);
            }
    }
    CHECK_THROWS_AS(raising_check(one, -1, g), std::invalid_argument);
    CHECK_THROWS_AS(raising_check(one, 0, {0, 1e-5, 0}, 1e-4), std::invalid_argument);
}

TEST_CASE("Casimir eigenrelation for every K-type") {
    for (const auto* f : {&sch(), &cusp()}) {
        const auto ctx = context(*f);
        for (const auto& p : random_points(15, -1.0, 1.0, 0.1, 2.0, 3))
            for (int l : {0, 1, 3}) CHECK(casimir_check(ctx, l, p) < 1e-3);
    }
}

TEST_CASE("horocycle average: single atom closed form") {
    for (double d : {0.6, 0.75, 0.9}) {
        const auto ctx = single_atom(d);
        for (double y : {1.0, 0.1, 0.01}) {
            const double expect = std::pow(y, 1 - d) * std::sqrt(kPi) * boost::math::tgamma_ratio(d - 0.5, d);
            const auto h = horocycle_average(ctx, 0, y);
            CHECK(h.converged);
            CHECK(h.value.real() == doctest::Approx(expect).epsilon(1e-5));
        }
        // general ell against a direct whole-line integral
        for (int l : {1, 4}) {
            const double y = 0.3;
            auto kern = [&](double x, bool im) {
                const double v = std::pow(y / (x * x + y * y), d) * kernel_prefactor(d, l);
                const double ph = -2 * l * std::atan2(y, x);
                return im ? v * std::sin(ph) : v * std::cos(ph);
            };
            boost::math::quadrature::exp_sinh<double> es;
            auto whole = [&](bool im) {
                return es.integrate([&](double x) { return kern(x, im); }, 1e-13) +
                       es.integrate([&](double x) { return kern(-x, im); }, 1e-13);
            };
            const cplx h = horocycle_average(ctx, l, y).value;
            CHECK(h.real() == doctest::Approx(whole(false)).epsilon(1e-6));
            CHECK(h.imag() == doctest::Approx(whole(true)).epsilon(1e-6));
        }
    }
}

TEST_CASE("horocycle average: K-type ratios and y-scaling") {
    for (const auto* f : {&sch(), &cusp()}) {
        const auto ctx = context(*f);
        const double d = f->delta;
        const auto h0a = horocycle_average(ctx, 0, 0.5).value, h0b = horocycle_average(ctx, 0, 0.05).value;
        for (int l = 1; l <= 10; ++l) {
            const auto ha = horocycle_average(ctx, l, 0.5).value, hb = horocycle_average(ctx, l, 0.05).value;
            CHECK(std::abs(ha) / std::abs(h0a) == doctest::Approx(gamma_ratio_product(d, l)).epsilon(1e-3));
            CHECK(std::abs(hb) / std::abs(h0b) == doctest::Approx(gamma_ratio_product(d, l)).epsilon(1e-3));
            CHECK(std::abs(ha) / std::abs(hb) == doctest::Approx(std::pow(10.0, 1 - d)).epsilon(1e-3));
            // the phase is trivial: averages are real and positive
            CHECK(std::fabs(std::arg(ha)) < 1e-6);
            CHECK(std::fabs(std::arg(hb)) < 1e-6);
        }
    }
}

TEST_CASE("horocycle average: exponent law on the Schottky fixture") {
    const auto ctx = context(sch(), 1e-3);
    std::vector<double> lx, ly;
    for (double y : {1e-1, 1e-2, 1e-3}) {
        lx.push_back(std::log(y));
        ly.push_back(std::log(std::abs(horocycle_average(ctx, 0, y).value)));
    }
    const double slope = (ly[2] - ly[0]) / (lx[2] - lx[0]);
    CHECK(slope == doctest::Approx(1 - sch().delta).epsilon(0.02 / (1 - sch().delta)));
}

TEST_CASE("horocycle average: truncation windows") {
    const auto ctx = single_atom(0.7, 0.5);
    CHECK_THROWS_AS(horocycle_average(ctx, 0, 0.1, {0.6, 2.0}), std::invalid_argument);
    const double y = 0.1, d = 0.7;
    const double inside = horocycle_average(ctx, 0, y, {-1.0, 3.0}).value.real();
    const double whole = horocycle_average(ctx, 0, y).value.real();
    CHECK(whole - inside == doctest::Approx(std::pow(1.25, d) * (beta_tail(d, y, 1.5) + beta_tail(d, y, 2.5))).epsilon(1e-6));
}

TEST_CASE("c0 and c_ell") {
    const auto ctx = context(sch());
    CHECK(c_ell(ctx, 0) == doctest::Approx(c0(ctx)).epsilon(1e-15));
    CHECK(c0(ctx) == doctest::Approx(ctx.ps_total() * horocycle_constant(sch().delta)).epsilon(1e-12));
    double prev = c0(ctx);
    for (int l = 1; l <= 12; ++l) {
        CHECK(c_ell(ctx, l) < prev);
        CHECK(c_ell(ctx, -l) == c_ell(ctx, l));
        prev = c_ell(ctx, l);
    }
    // cusped family: c0 read off at two heights agrees
    const auto cc = context(cusp());
    const double d = cusp().delta;
    const double at1 = horocycle_average(cc, 0, 1.0).value.real();
    const auto half = horocycle_average(cc, 0, 0.5);
    CHECK(c0(cc) == doctest::Approx(at1).epsilon(1e-12));
    CHECK(half.value.real() / std::pow(0.5, 1 - d) == doctest::Approx(at1).epsilon(1e-6));
}

TEST_CASE("integral of the x-derivative vanishes") {
    for (const auto* f : {&sch(), &cusp()}) {
        const auto ctx = context(*f, 1e-2);
        for (int l : {0, 1, 3})
            for (double y : {1.0, 0.1})
                for (double th : {0.0, 1.0}) CHECK(dx_integral_check(ctx, l, y, th) < 1e-4);
    }
    const auto cc = context(cusp(), 1e-2);
    for (int l : {0, 3}) CHECK(periodicity_defect(cc, l, 0.3, 0.5) < 1e-9);
    CHECK(dx_integral_check(single_atom(0.8), 2, 0.2, 0.4) < 1e-6);
    CHECK_THROWS_AS(periodicity_defect(single_atom(0.8), 0, 1.0, 0.0), std::invalid_argument);
}

TEST_CASE("periodized evaluation matches a brute lattice sum") {
    const double d = 0.7, P = 4.0;
    EigenContext ctx(AtomicMeasure::from_atoms({{0.3, 1.0}, {-1.1, 0.5}}), d, P / 2);
    for (int l : {0, 2}) {
        const double x = 0.7, y = 0.8;
        const long N = 200000;
        cplx brute = 0.0;
        for (long k = -N; k <= N; ++k)
            for (std::size_t j = 0; j < ctx.atoms().size(); ++j) {
                const double X = x - ctx.atoms()[j] - P * k;
                brute += ctx.ps_weights()[j] * std::polar(std::pow(y / (X * X + y * y), d), -2.0 * l * std::atan2(y, X));
            }
        // lattice points beyond N, replaced by the integral of their far-field term
        brute += ctx.ps_total() * 2.0 * std::pow(y, d) * std::pow(P, -2 * d) * std::pow(N + 0.5, 1 - 2 * d) / (2 * d - 1);
        const cplx v = kernel_sum(ctx, l, x, y);
        CHECK(std::abs(v - brute) < 2e-4 * std::abs(v));
        // periodicity
        CHECK(std::abs(kernel_sum(ctx, l, x + P, y) - v) < 1e-9 * std::abs(v));
    }
}

TEST_CASE("tail integral") {
    SUBCASE("single atom against the incomplete beta function") {
        const double d = 0.73;
        const auto ctx = single_atom(d, 0.1);
        for (double y : {0.5, 0.1, 0.01})
            for (double eps : {0.05, 0.5}) {
                const double expect = std::pow(1.01, d) * (beta_tail(d, y, eps) + beta_tail(d, y, 1.0 + eps));
                CHECK(tail_integral(ctx, y, {0.1 - 1.0 - eps, 0.1 + eps}) == doctest::Approx(expect).epsilon(1e-4));
            }
    }
    SUBCASE("Schottky decay rate and the shrinking margin") {
        const auto ctx = context(sch());
        const auto [lo, hi] = ctx.hull();
        const Truncation J{lo - 0.5, hi + 0.5};
        const double t1 = tail_integral(ctx, 1e-1, J), t3 = tail_integral(ctx, 1e-3, J);
        const double slope = std::log(t3 / t1) / std::log(1e-2);
        CHECK(slope >= sch().delta - 0.05);
        // shrinking margin: the tail grows and decays more slowly
        double prev_rate = INFINITY, prev_tail = 0.0;
        for (double eps : {0.5, 0.05, 0.005, 0.0005}) {
            const Truncation K{lo - eps, hi + eps};
            const double t = tail_integral(ctx, 1e-3, K);
            const double s = std::log(t / tail_integral(ctx, 1e-1, K)) / std::log(1e-2);
            CHECK(s < prev_rate);
            CHECK(t > prev_tail);
            prev_rate = s;
            prev_tail = t;
        }
        // an atom on the edge of the window decays at the full y^(1 - delta) rate
        const double d = 0.7;
        const auto one = single_atom(d, 0.0);
        const Truncation edge{-1e6, 1e-9};
        const double rate = std::log(tail_integral(one, 1e-3, edge) / tail_integral(one, 1e-1, edge)) / std::log(1e-2);
        CHECK(rate == doctest::Approx(1 - d).epsilon(0.01));
        CHECK_THROWS_AS(tail_integral(ctx, 0.1, {lo, hi + 1}), std::invalid_argument);
        CHECK_THROWS_AS(tail_integral(context(cusp()), 0.1, {-5, 5}), std::invalid_argument);
    }
}

TEST_CASE("L2 norm of phi0 over a fundamental domain") {
    SUBCASE("Schottky: unfolded polar-coordinate oracle") {
        const auto ctx = context(sch(), 1e-2);
        const double d = sch().delta;
        const double total = phi0_l2_norm_sq(ctx, sch().group);
        // polar coordinates over the exterior of the circles, no folding;
        // beyond r = Rmax phi0 is replaced by its leading far-field term
        std::vector<std::pair<double, double>> disks;
        for (const auto& r : sch().group.regions()) disks.emplace_back(r.center, r.radius);
        auto blocked = [&](double r, double c, double rho) {
            // cos(alpha) beyond which r e^{i alpha} lies inside the disk
            if (r <= std::fabs(c) - rho || r >= std::fabs(c) + rho) return kPi;
            return std::acos(std::clamp((r * r + c * c - rho * rho) / (2 * r * std::fabs(c)), -1.0, 1.0));
        };
        auto ring = [&](double r) {
            double a0 = 0.0, a1 = kPi;
            for (auto [c, rho] : disks) {
                const double b = blocked(r, c, rho);
                if (b < kPi) {
                    if (c > 0) a0 = std::max(a0, b);
                    else a1 = std::min(a1, kPi - b);
                }
            }
            boost::math::quadrature::tanh_sinh<double> ts;
            auto g = [&](double al) {
                const double y = r * std::sin(al);
                if (!(y > 0)) return 0.0;
                const double f = phi0(ctx, {r * std::cos(al), y}) / y;
                return f * f * r;
            };
            return ts.integrate(g, a0, a1, 1e-10);
        };
        const double Rmax = 1e4;
        boost::math::quadrature::tanh_sinh<double> outer;
        double oracle = 0.0;
        const double cuts[] = {0.0, 0.1, 0.95, 1.0 / 0.95, 10.0, 100.0, Rmax};
        for (int i = 0; i + 1 < 7; ++i) oracle += outer.integrate(ring, cuts[i], cuts[i + 1], 1e-9);
        oracle += ctx.ps_total() * ctx.ps_total() * boost::math::beta(d - 0.5, 0.5) * std::pow(Rmax, -2 * d) / (2 * d);
        CHECK(total == doctest::Approx(oracle).epsilon(1e-5));
    }
    SUBCASE("normalization and homogeneity") {
        for (const auto* f : {&sch(), &cusp()}) {
            const auto ctx = context(*f, 1e-2);
            const double n2 = phi0_l2_norm_sq(ctx, f->group);
            EigenContext doubled(ctx.measure().scaled(2.0, Normalization::Raw), f->delta, f->x0);
            CHECK(phi0_l2_norm_sq(doubled, f->group) == doctest::Approx(4 * n2).epsilon(1e-6));
            const auto unit = normalize_phi0_l2(ctx, f->group);
            CHECK(unit.normalization == Normalization::Phi0L2Unit);
            EigenContext uctx(unit, f->delta, f->x0);
            CHECK(phi0_l2_norm_sq(uctx, f->group) == doctest::Approx(1.0).epsilon(1e-5));
        }
    }
    SUBCASE("cusp: the constant-term tail above the cut height") {
        const auto ctx = context(cusp(), 1e-2);
        L2Options lo, hi;
        lo.cusp_height_factor = 1.0;
        hi.cusp_height_factor = 3.0;
        CHECK(phi0_l2_norm_sq(ctx, cusp().group, lo) ==
              doctest::Approx(phi0_l2_norm_sq(ctx, cusp().group, hi)).epsilon(1e-6));
    }
    SUBCASE("unsupported shapes") {
        CHECK_THROWS_AS(phi0_l2_norm_sq(context(sch()), cusp().group), std::invalid_argument);
        CHECK_THROWS_AS(phi0_l2_norm_sq(context(cusp()), sch().group), std::invalid_argument);
    }
}
