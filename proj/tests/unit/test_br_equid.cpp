#include <cmath>
#include <cstdio>
#include <fstream>
#include <random>
#include <sstream>

#include "doctest.h"
#include "horolab/br_equid.hpp"
#include "horolab/quadrature.hpp"

using namespace horolab;

namespace {

// int_{-1}^{1} exp(-1/(1-t^2)) dt
constexpr double kBumpMass = 0.44399381616807943;

struct Setup {
    GroupPresentation group;
    OrbitBall ball;
    double delta;
    AtomicMeasure measure;  // phi0-L2-unit, compressed
};

const Setup& sch() {
    static const Setup s = [] {
        auto p = schottky_symmetric(0.1, 0.95);
        auto ball = enumerate_ball(p, 14.0);
        const auto est = estimate_delta(ball);
        auto raw = compress(build_patterson(ball, est.delta_hat, default_s(est)).measure, 1e-3);
        const EigenContext ctx(raw, est.delta_hat);
        auto m = normalize_phi0_l2(ctx, p);
        return Setup{p, std::move(ball), est.delta_hat, std::move(m)};
    }();
    return s;
}

const Setup& cusp() {
    static const Setup s = [] {
        auto p = parabolic_pair(4.0);
        auto ball = enumerate_ball(p, 13.0);
        const auto est = estimate_delta(ball);
        auto m = compress(build_patterson(ball, est.delta_hat, default_s(est)).measure, 1e-3);
        return Setup{p, std::move(ball), est.delta_hat, std::move(m)};
    }();
    return s;
}

BumpFunction bump(double xc, double yc, double thc, double rx, double ry, double rth, double amp = 1.0) {
    BumpFunction b;
    b.xc = xc;
    b.yc = yc;
    b.thetac = thc;
    b.rx = rx;
    b.ry = ry;
    b.rtheta = rth;
    b.amplitude = amp;
    return b;
}

// Bump around i, inside the exterior of the ping-pong disks.
BumpFunction central_bump() { return bump(0.0, 1.0, 0.5 * kPi, 0.45, 0.42, 1.5); }

OrbitBall identity_ball(double radius) {
    OrbitBall b;
    b.radius = radius;
    b.entries.push_back({"", MoebiusElement::identity(), 0.0});
    return b;
}

// Sheet integral in the NAK chart: on the sheet through u the angle is
// atan2(y, x - u) and the density is (1 + u^2)^d P_u(z)^d y^-2.
double mbr_nak_oracle(const BumpFunction& b, const AtomicMeasure& m, double d, int n = 240) {
    const GaussLegendre gl(n);
    double total = 0.0;
    for (const auto& a : m.atoms) {
        double s = 0.0;
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < n; ++j) {
                const double x = b.xc + b.rx * gl.nodes[i], y = b.yc + b.ry * gl.nodes[j];
                double theta, dens;
                if (std::isinf(a.u)) {
                    theta = 0.0;
                    dens = std::pow(y, d - 2.0);
                } else {
                    theta = std::atan2(y, x - a.u);
                    const double p = y / ((x - a.u) * (x - a.u) + y * y);
                    dens = std::pow((1.0 + a.u * a.u) * p, d) / (y * y);
                }
                s += gl.weights[i] * gl.weights[j] * b.rx * b.ry * b(IwasawaNAK{x, y, reduce_angle(theta)}) * dens;
            }
        total += a.w * s;
    }
    return total;
}

// <f, phi_ell> by a 3-d tensor rule calling phi_ell pointwise.
cplx inner_oracle(const BumpFunction& b, const EigenContext& ctx, int ell, int n = 40) {
    const GaussLegendre gl(n);
    cplx s = 0.0;
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j)
            for (int k = 0; k < n; ++k) {
                const IwasawaNAK g{b.xc + b.rx * gl.nodes[i], b.yc + b.ry * gl.nodes[j],
                                   reduce_angle(b.thetac + b.rtheta * gl.nodes[k])};
                const double w = gl.weights[i] * gl.weights[j] * gl.weights[k] * b.rx * b.ry * b.rtheta;
                s += w * b(g) * std::conj(phi_ell(ctx, ell, g)) / (g.y * g.y);
            }
    return s / kPi;
}

}  // namespace

TEST_CASE("bump profile and validation") {
    CHECK(bump_profile(0.0) == doctest::Approx(std::exp(-1.0)).epsilon(1e-15));
    CHECK(bump_profile(1.0) == 0.0);
    CHECK(bump_profile(-1.5) == 0.0);
    const auto b = bump(0.3, 2.0, 1.0, 0.1, 0.2, 0.4, 2.5);
    CHECK(b(IwasawaNAK{0.3, 2.0, 1.0}) == doctest::Approx(2.5 * std::exp(-3.0)).epsilon(1e-14));
    // angle is taken mod pi
    const IwasawaNAK g{0.32, 2.05, 1.1};
    CHECK(b(g) == doctest::Approx(b(IwasawaNAK{0.32, 2.05, 1.1 + kPi - 1e-12})).epsilon(1e-9));
    CHECK_THROWS_AS(bump(0, 0.1, 1, 0.1, 0.2, 0.3).validate(), std::invalid_argument);
    CHECK_THROWS_AS(bump(0, 1, 1, 0.1, 0.2, 1.6).validate(), std::invalid_argument);
    CHECK_THROWS_AS(bump(0, 1, 1, 0.0, 0.2, 0.3).validate(), std::invalid_argument);
    // reach and radius bound the distance of sampled support points
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> U(-1, 1);
    for (int i = 0; i < 500; ++i) {
        const PlanePoint z{b.xc + b.rx * U(rng), b.yc + b.ry * U(rng)};
        CHECK(distance({0, 1}, z) <= b.reach() + 1e-12);
        CHECK(distance({b.xc, b.yc}, z) <= b.radius() + 1e-12);
    }
}

TEST_CASE("injectivity certificate") {
    const auto& s = sch();
    const TestFunction f(central_bump());
    const auto cert = certify_injectivity(f, s.ball);
    CHECK(cert.valid);
    CHECK(cert.margin > 0.0);
    CHECK(cert.threshold <= s.ball.radius);
    CHECK(cert.function_json == f.to_json().dump());

    // A box straddling an isometric circle overlaps its own translate.
    const TestFunction wide(bump(0.525, 0.5, 1.0, 0.4, 0.3, 0.5));
    CHECK_FALSE(certify_injectivity(wide, s.ball).valid);
    // A ball smaller than the threshold cannot certify.
    CHECK_FALSE(certify_injectivity(f, enumerate_ball(s.group, 1.0)).valid);
}

TEST_CASE("periodized evaluation") {
    const auto& s = sch();
    const TestFunction f(central_bump());
    // far from every translate of the support
    CHECK(periodized_eval(f, s.ball, MoebiusElement::dilation(1e3)).value == 0.0);
    // inside a certified box only the identity term survives
    const IwasawaNAK g{0.1, 1.1, 1.4};
    const auto v = periodized_eval(f, s.ball, g.to_element());
    CHECK(v.terms == 1);
    CHECK(v.value == doctest::Approx(f(g)).epsilon(1e-12));
    // covariance under generators, by re-summation
    for (int li = 0; li < s.group.letter_count(); ++li) {
        const auto g0 = s.group.letter(li);
        for (const auto& h : {g, IwasawaNAK{-0.2, 0.8, 1.9}, IwasawaNAK{0.3, 1.2, 0.9}}) {
            const auto base = periodized_eval(f, s.ball, h.to_element());
            const auto moved = periodized_eval(f, s.ball, compose(g0, h.to_element()));
            CHECK(moved.value == doctest::Approx(base.value).epsilon(1e-10));
        }
    }
    CHECK_THROWS_AS(periodized_eval(f, s.ball, MoebiusElement::dilation(1e-8)), std::invalid_argument);
}

TEST_CASE("horocycle windows") {
    const auto w = window_for(sch().group);
    CHECK_FALSE(w.periodic);
    CHECK(w.lo == doctest::Approx(-10.0).epsilon(1e-9));
    CHECK(w.hi == doctest::Approx(10.0).epsilon(1e-9));
    const auto wc = window_for(cusp().group);
    CHECK(wc.periodic);
    CHECK(wc.x0() == doctest::Approx(2.0));
}

TEST_CASE("psi_N on the trivial group has a closed form") {
    const auto ball = identity_ball(40.0);
    const HorocycleWindow w{-5.0, 5.0, false};
    const auto b = bump(0.2, 0.5, 0.1, 0.3, 0.2, 0.4, 1.7);
    const TestFunction f(b);
    const double y = 0.55;
    const double expect = 1.7 * 0.3 * kBumpMass * bump_profile(0.05 / 0.2) * bump_profile(-0.1 / 0.4);
    CHECK(psi_N(f, ball, y, w).value == doctest::Approx(expect).epsilon(1e-9));
    // theta-support missing 0 or y outside the support gives nothing
    CHECK(psi_N(TestFunction(bump(0.2, 0.5, 1.5, 0.3, 0.2, 0.4)), ball, y, w).value == 0.0);
    CHECK(psi_N(f, ball, 0.2, w).value == 0.0);
    CHECK_THROWS_AS(psi_N(f, identity_ball(1.0), 1e-3, w), std::invalid_argument);
    CHECK_THROWS_AS(psi_N(f, ball, -1.0, w), std::invalid_argument);
}

TEST_CASE("psi_N parallel matches serial, positivity, linearity") {
    const auto& s = sch();
    const auto w = window_for(s.group);
    const auto b1 = central_bump();
    const auto b2 = bump(0.1, 1.05, 1.2, 0.2, 0.25, 0.8, 0.6);
    for (double y : {1e-2, 1e-3}) {
        const auto par = psi_N(TestFunction(b1), s.ball, y, w);
        const auto ser = serial::psi_N(TestFunction(b1), s.ball, y, w);
        CHECK(par.value == ser.value);
        CHECK(par.contributing == ser.contributing);
        CHECK(par.value > 0.0);
        CHECK(par.error <= 1e-6 * par.value);

        TestFunction both;
        both.bumps = {b1, b2};
        const double lhs = psi_N(both, s.ball, y, w).value;
        const double rhs = par.value + psi_N(TestFunction(b2), s.ball, y, w).value;
        CHECK(std::fabs(lhs - rhs) <= 1e-10 * std::fabs(rhs));
    }
}

TEST_CASE("psi_N is periodic for the cusp family") {
    const auto& c = cusp();
    const auto w = window_for(c.group);
    const TestFunction f(bump(0.0, 1.2, 0.5 * kPi, 0.5, 0.3, 1.2));
    for (double y : {0.05, 0.01}) {
        const double base = psi_N(f, c.ball, y, w).value;
        const HorocycleWindow shifted{w.lo + 2.0 * w.x0(), w.hi + 2.0 * w.x0(), true};
        const double moved = psi_N(f, c.ball, y, shifted).value;
        CHECK(base > 0.0);
        CHECK(moved == doctest::Approx(base).epsilon(1e-8));
    }
}

TEST_CASE("mBR sheet angle") {
    for (double u : {-3.0, -0.4, 0.0, 0.7, 12.0}) {
        const auto k = MoebiusElement::rotation(br_sheet_angle(u));
        CHECK(act_boundary(k, BoundaryPoint::infinity()).value() == doctest::Approx(u).epsilon(1e-12));
    }
    CHECK(br_sheet_angle(INFINITY) == 0.0);
}

TEST_CASE("mBR agrees with the NAK-chart integral") {
    const double d = 0.7;
    const auto m = AtomicMeasure::from_atoms({{-0.7, 0.3}, {-0.2, 1.0}, {0.3, 0.5}, {1.1, 0.8}, {INFINITY, 0.4}});
    for (const auto& b : {bump(0.0, 1.0, 0.5 * kPi, 0.3, 0.25, 0.6), bump(0.4, 0.6, 0.2, 0.2, 0.2, 0.5),
                          bump(-0.5, 2.0, 2.6, 0.6, 0.5, 1.0, 2.0)}) {
        const double joint = mBR(TestFunction(b), m, d);
        const double chart = mbr_nak_oracle(b, m, d);
        CHECK(joint > 0.0);
        CHECK(joint == doctest::Approx(chart).epsilon(1e-6));
    }
    CHECK(mBR(TestFunction(bump(0, 1, 1, 0.2, 0.2, 0.3, 0.0)), m, d) == 0.0);
}

TEST_CASE("mBR linearity and covariance") {
    const auto& s = sch();
    const auto b1 = central_bump();
    const auto b2 = bump(0.2, 0.9, 1.0, 0.15, 0.2, 0.7, 0.4);
    TestFunction both;
    both.bumps = {b1, b2};
    const double m1 = mBR(TestFunction(b1), s.measure, s.delta);
    const double m2 = mBR(TestFunction(b2), s.measure, s.delta);
    CHECK(m1 > 0.0);
    CHECK(m2 > 0.0);
    CHECK(std::fabs(mBR(both, s.measure, s.delta) - m1 - m2) <= 1e-10 * (m1 + m2));
    const auto scaled = s.measure.scaled(3.0, Normalization::Raw);
    CHECK(mBR(TestFunction(b1), scaled, s.delta) == doctest::Approx(3.0 * m1).epsilon(1e-12));
}

TEST_CASE("inner products") {
    const auto& s = sch();
    const EigenContext small(compress(s.measure, 2e-2), s.delta);
    const TestFunction f(central_bump());
    const auto cert = certify_injectivity(f, s.ball);
    const int L = 12;
    const auto ip = inner_products_phi(f, cert, small, L);
    REQUIRE(ip.size() == 2 * L + 1);
    for (int l : {0, 1, 3, -2, -5}) {
        const cplx want = inner_oracle(central_bump(), small, l);
        CHECK(std::abs(ip[L + l].value - want) <= 1e-7 * std::abs(ip[L].value));
        CHECK(inner_product_phi(f, cert, small, l).value == ip[L + l].value);
    }
    for (int l = 1; l <= L; ++l) CHECK(std::abs(ip[L - l].value - std::conj(ip[L + l].value)) == 0.0);
    // theta-symmetric bump: l = 0 is real
    CHECK(std::fabs(ip[L].value.imag()) <= 1e-8 * std::abs(ip[L].value));
    for (const auto& v : ip) CHECK(v.error <= 1e-8 * std::abs(ip[L].value));
    // decay envelope over l
    std::vector<double> env(L + 1);
    for (int l = L; l >= 0; --l) env[l] = std::max(std::abs(ip[L + l].value), l < L ? env[l + 1] : 0.0);
    for (int l = 0; l + 4 <= L; ++l) CHECK(env[l + 4] < env[l]);
    CHECK(env[L] < 1e-2 * env[0]);

    // inner products are linear in f
    const auto b2 = bump(0.1, 1.05, 1.2, 0.2, 0.25, 0.8, 0.6);
    TestFunction both;
    both.bumps = {central_bump(), b2};
    const auto cb = certify_injectivity(both, s.ball);
    REQUIRE(cb.valid);
    const auto i2 = inner_products_phi(TestFunction(b2), certify_injectivity(TestFunction(b2), s.ball), small, 3);
    const auto i12 = inner_products_phi(both, cb, small, 3);
    for (int l = -3; l <= 3; ++l)
        CHECK(std::abs(i12[3 + l].value - ip[L + l].value - i2[3 + l].value) <= 1e-10 * std::abs(ip[L].value));

    // certificates are checked
    InjectivityCertificate bad = cert;
    bad.valid = false;
    CHECK_THROWS_AS(inner_product_phi(f, bad, small, 0), std::invalid_argument);
    CHECK_THROWS_AS(inner_product_phi(TestFunction(b2), cert, small, 0), std::invalid_argument);
}

TEST_CASE("Burger-Roblin identity on the Schottky fixture") {
    const auto& s = sch();
    const EigenContext ctx(s.measure, s.delta);
    const TestFunction f(central_bump());
    const auto cert = certify_injectivity(f, s.ball);
    const auto r = brd_identity_check(f, cert, ctx, 12);
    CHECK(r.imag_ratio < 1e-6);
    CHECK(r.gap_spectral_br < 0.15);
    CHECK(r.spectral_sum.real() > 0.0);
    // partial sums are Cauchy in L
    const auto& S = r.partial_sums;
    const double d1 = std::abs(S[4] - S[0]), d2 = std::abs(S[8] - S[4]), d3 = std::abs(S[12] - S[8]);
    CHECK(d2 < d1);
    CHECK(d3 < d2);
    CHECK(r.tail_estimate == doctest::Approx(d3));

    // the gap does not depend on the normalization of the measure
    const EigenContext ctx3(s.measure.scaled(3.0, Normalization::Raw), s.delta);
    const auto r3 = brd_identity_check(f, cert, ctx3, 12);
    CHECK(c0(ctx3) == doctest::Approx(3.0 * c0(ctx)).epsilon(1e-12));
    CHECK(r3.spectral_sum.real() == doctest::Approx(9.0 * r.spectral_sum.real()).epsilon(1e-10));
    CHECK(r3.br_side == doctest::Approx(9.0 * r.br_side).epsilon(1e-10));
    CHECK(r3.gap_spectral_br == doctest::Approx(r.gap_spectral_br).epsilon(1e-8));

    auto rf = r3;
    attach_fit(rf, rf.br_side * 1.1);
    CHECK(rf.has_fit);
    CHECK(rf.gap_br_fit == doctest::Approx(0.1 / 1.1));
    const auto j = rf.to_json();
    CHECK(j.at("partial_sums").size() == 13);
    CHECK(j.contains("gap_br_fit"));
}

TEST_CASE("equidistribution fit recovers synthetic parameters") {
    std::vector<double> ys, ps;
    for (int i = 0; i <= 16; ++i) ys.push_back(std::pow(10.0, -1.0 - 0.25 * i));
    const double d = 0.7, M = 0.02, B = 0.05, b = 0.6;
    for (double y : ys) ps.push_back(M * std::pow(y, 1 - d) + B * std::pow(y, b));
    const auto fit = fit_equidistribution(ys, ps, d);
    CHECK(fit.M == doctest::Approx(M).epsilon(1e-5));
    CHECK(fit.B == doctest::Approx(B).epsilon(1e-3));
    CHECK(fit.correction_exponent == doctest::Approx(b).epsilon(1e-4));
    CHECK(fit.main_exponent == doctest::Approx(1 - d).epsilon(0.01));
    CHECK(fit.error_exponent == doctest::Approx(b).epsilon(1e-3));
    CHECK(fit.gap > 0.0);
    CHECK_FALSE(fit.flagged);

    // a residual that keeps pace with the main term is flagged
    std::vector<double> osc;
    for (double y : ys) osc.push_back(M * std::pow(y, 1 - d) * (1.0 + 0.3 * std::sin(3.0 * std::log(y))));
    CHECK(fit_equidistribution(ys, osc, d).flagged);

    CHECK_THROWS_AS(fit_equidistribution({1e-2, 2e-2, 3e-2, 5e-2}, {1, 1, 1, 1}, d), std::invalid_argument);
    CHECK_THROWS_AS(fit_equidistribution({1e-1, 1e-2}, {1, 1}, d), std::invalid_argument);
}

TEST_CASE("equidistribution experiment report") {
    const auto& s = sch();
    const auto w = window_for(s.group);
    const TestFunction f(central_bump());
    std::vector<double> ys;
    for (int i = 0; i <= 8; ++i) ys.push_back(std::pow(10.0, -1.25 - 0.25 * i));
    const auto r = equid_experiment(f, s.ball, w, s.delta, ys, s.measure.hash());
    REQUIRE(r.psi.size() == ys.size());
    for (std::size_t i = 0; i < ys.size(); ++i) {
        CHECK(r.psi[i] > 0.0);
        CHECK(r.main_term[i] + r.residual[i] == doctest::Approx(r.psi[i]).epsilon(1e-14));
    }
    // the rescaled integral settles: later points sit closer to M
    const double early = std::fabs(r.psi[0] * std::pow(ys[0], s.delta - 1) - r.fit.M);
    const double late = std::fabs(r.psi.back() * std::pow(ys.back(), s.delta - 1) - r.fit.M);
    CHECK(late < early);

    const std::string path = "test_equid_report.csv";
    r.write_csv(path);
    std::ifstream in(path);
    std::string header;
    std::getline(in, header);
    CHECK(header == "y,psi_N,main_term,residual");
    int rows = 0;
    for (std::string line; std::getline(in, line);) ++rows;
    CHECK(rows == static_cast<int>(ys.size()));
    std::remove(path.c_str());
    const auto j = r.to_json();
    CHECK(j.at("measure_hash") == s.measure.hash());
    CHECK(j.at("fit").contains("error_exponent"));
}
