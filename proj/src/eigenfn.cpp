#include "horolab/eigenfn.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <stdexcept>

namespace horolab {

namespace {

constexpr int kSeriesTerms = 64;
constexpr double kSeriesMaxAngle = 0.6;

// Power series of sin^(2d-2)(t) e^(-2 i l t) / t^(2d-2) around t = 0.
struct AngularSeries {
    double delta = 0.0;
    int ell = 0;
    std::array<cplx, kSeriesTerms> coef{};

    AngularSeries(double d, int l) : delta(d), ell(l) {
        std::array<double, kSeriesTerms> s{}, f{};
        double fact = 1.0;
        for (int n = 0; 2 * n < kSeriesTerms; ++n) {
            if (n > 0) fact *= (2.0 * n) * (2.0 * n + 1.0);
            s[2 * n] = (n % 2 ? -1.0 : 1.0) / fact;
        }
        // (sin t / t)^alpha by Miller's recurrence
        const double alpha = 2.0 * d - 2.0;
        f[0] = 1.0;
        for (int n = 1; n < kSeriesTerms; ++n) {
            double acc = 0.0;
            for (int k = 1; k <= n; ++k) acc += ((alpha + 1.0) * k - n) * s[k] * f[n - k];
            f[n] = acc / n;
        }
        std::array<cplx, kSeriesTerms> e{};
        e[0] = 1.0;
        const cplx step(0.0, -2.0 * l);
        for (int m = 1; m < kSeriesTerms; ++m) e[m] = e[m - 1] * step / double(m);
        for (int m = 0; m < kSeriesTerms; ++m) {
            cplx acc = 0.0;
            for (int k = 0; k <= m; ++k) acc += f[k] * e[m - k];
            coef[m] = acc;
        }
    }

    bool usable(double a) const { return a <= kSeriesMaxAngle && 2.0 * std::abs(ell) * a <= 8.0; }

    cplx eval(double a) const {
        const double p = 2.0 * delta - 1.0;
        cplx acc = 0.0;
        double pw = 1.0;
        for (int m = 0; m < kSeriesTerms; ++m) {
            acc += coef[m] * (pw / (m + p));
            pw *= a;
        }
        return acc * std::pow(a, p);
    }
};

const AngularSeries& series_for(double delta, int ell) {
    thread_local std::map<std::pair<double, int>, AngularSeries> cache;
    auto key = std::make_pair(delta, ell);
    auto it = cache.find(key);
    if (it == cache.end()) it = cache.emplace(key, AngularSeries(delta, ell)).first;
    return it->second;
}

// Quadrature form of the angular tail for 0 < a <= pi/2, t = a s^q.
cplx angular_tail_quad(double delta, int ell, double a) {
    const double p = 2.0 * delta - 1.0, q = 1.0 / p;
    auto g = [&](double s) -> cplx {
        const double t = a * std::pow(s, q);
        const double ratio = t > 0 ? std::sin(t) / t : 1.0;
        return std::pow(ratio, 2.0 * delta - 2.0) * std::polar(1.0, -2.0 * ell * t);
    };
    QuadOptions o;
    o.rel_tol = 1e-12;
    o.abs_tol = 1e-15;
    return integrate_adaptive<cplx>(g, 0.0, 1.0, o).value * (std::pow(a, p) / p);
}

cplx tail_with(const AngularSeries& ser, double a) {
    if (a <= 0.0) return 0.0;
    if (ser.usable(a)) return ser.eval(a);
    return angular_tail(ser.delta, ser.ell, a);
}

// Single-atom kernel (y / (X^2 + y^2))^delta e^(-2 i ell atan2(y, X)).
inline cplx atom_kernel(double X, double y, double delta, int ell) {
    const double v = std::exp(delta * std::log(y / (X * X + y * y)));
    if (ell == 0) return v;
    return std::polar(v, -2.0 * ell * std::atan2(y, X));
}

cplx direct_sum(const EigenContext& ctx, int ell, double x, double y) {
    const auto& u = ctx.atoms();
    const auto& mu = ctx.ps_weights();
    cplx acc = 0.0;
    for (std::size_t j = 0; j < u.size(); ++j) acc += mu[j] * atom_kernel(x - u[j], y, ctx.delta(), ell);
    return acc;
}

cplx periodic_sum(const EigenContext& ctx, int ell, double x, double y) {
    const double P = ctx.period(), d = ctx.delta();
    if (std::fabs(x) > P) x -= P * std::round(x / P);
    const int K = ctx.lattice_terms();
    const auto& ser = series_for(d, ell);
    const double scale = std::pow(y, 1.0 - d) / P;
    const auto& u = ctx.atoms();
    const auto& mu = ctx.ps_weights();
    cplx acc = 0.0;
    for (std::size_t j = 0; j < u.size(); ++j) {
        const double X0 = x - u[j];
        cplx s = 0.0;
        for (int k = -K; k <= K; ++k) s += atom_kernel(X0 - P * k, y, d, ell);
        // Euler-Maclaurin midpoint tails on both sides of the window
        const double XR = X0 - P * (K + 0.5), XL = X0 + P * (K + 0.5);
        s += scale * std::conj(tail_with(ser, std::atan2(y, -XR)));
        s += scale * tail_with(ser, std::atan2(y, XL));
        const cplx kR = atom_kernel(XR, y, d, ell), kL = atom_kernel(XL, y, d, ell);
        const cplx dR = kR * cplx(-2.0 * d * XR, 2.0 * ell * y) / (XR * XR + y * y);
        const cplx dL = kL * cplx(-2.0 * d * XL, 2.0 * ell * y) / (XL * XL + y * y);
        s += (-P * dR + P * dL) / 24.0;
        acc += mu[j] * s;
    }
    return acc;
}

void check_y(double y) {
    if (!(y > 0.0) || !std::isfinite(y)) throw std::invalid_argument("eigenfn: need y > 0");
}

// Breakpoints around clusters of atoms at scale y.
std::vector<double> cluster_breaks(const std::vector<double>& u, double y) {
    std::vector<double> br;
    std::size_t i = 0;
    while (i < u.size()) {
        std::size_t j = i;
        while (j + 1 < u.size() && u[j + 1] - u[j] < 2.0 * y) ++j;
        const double lo = u[i], hi = u[j];
        br.push_back(lo - 4.0 * y);
        br.push_back(lo);
        if (hi > lo) br.push_back(hi);
        br.push_back(hi + 4.0 * y);
        i = j + 1;
    }
    return br;
}

}  // namespace

cplx angular_tail(double delta, int ell, double a) {
    if (!(a > 0.0 && a < kPi)) throw std::invalid_argument("angular_tail: need 0 < a < pi");
    const auto& ser = series_for(delta, ell);
    if (ser.usable(a)) return ser.eval(a);
    if (a <= 0.5 * kPi) return angular_tail_quad(delta, ell, a);
    const cplx half = angular_tail_quad(delta, ell, 0.5 * kPi);
    return 2.0 * half.real() - std::conj(angular_tail(delta, ell, kPi - a));
}

EigenContext::EigenContext(const AtomicMeasure& m, double delta, double x0, const EigenOptions& opt) {
    if (!(delta > 0.5 && delta < 1.0)) throw std::domain_error("EigenContext: delta must lie in (1/2, 1)");
    if (!(x0 > 0.0)) throw std::invalid_argument("EigenContext: x0 must be positive");
    if (opt.lattice_terms < 4) throw std::invalid_argument("EigenContext: lattice_terms too small");
    delta_ = delta;
    x0_ = x0;
    lattice_terms_ = opt.lattice_terms;
    measure_ = opt.compress_resolution > 0.0 ? compress(m, opt.compress_resolution) : m;
    for (const auto& a : measure_.atoms) {
        if (std::isinf(a.u)) {
            if (!periodic()) throw std::invalid_argument("EigenContext: atom at infinity needs a finite x0");
            ++dropped_;
            continue;
        }
        if (periodic() && !(a.u >= -x0 && a.u < x0)) {
            ++dropped_;
            continue;
        }
        u_.push_back(a.u);
        mu_.push_back(a.w * std::pow(1.0 + a.u * a.u, delta));
    }
    finish();
}

void EigenContext::finish() {
    if (u_.empty()) throw std::invalid_argument("EigenContext: no usable atoms");
    std::vector<std::size_t> idx(u_.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return u_[a] < u_[b]; });
    std::vector<double> u(u_.size()), mu(u_.size());
    for (std::size_t i = 0; i < idx.size(); ++i) {
        u[i] = u_[idx[i]];
        mu[i] = mu_[idx[i]];
    }
    u_ = std::move(u);
    mu_ = std::move(mu);
    ps_total_ = 0.0;
    for (double w : mu_) ps_total_ += w;
}

EigenContext EigenContext::inverted() const {
    if (periodic()) throw std::invalid_argument("EigenContext::inverted: needs x0 = inf");
    EigenContext out;
    out.delta_ = delta_;
    out.x0_ = x0_;
    out.lattice_terms_ = lattice_terms_;
    std::vector<Atom> atoms;
    for (std::size_t j = 0; j < u_.size(); ++j) {
        if (u_[j] == 0.0) throw std::invalid_argument("EigenContext::inverted: atom at 0");
        const double v = -1.0 / u_[j];
        out.u_.push_back(v);
        out.mu_.push_back(mu_[j] * std::pow(std::fabs(u_[j]), -2.0 * delta_));
        atoms.push_back({v, out.mu_.back() / std::pow(1.0 + v * v, delta_)});
    }
    out.measure_ = AtomicMeasure::from_atoms(std::move(atoms), measure_.normalization);
    out.finish();
    return out;
}

cplx kernel_sum(const EigenContext& ctx, int ell, double x, double y) {
    check_y(y);
    if (ell < 0) throw std::invalid_argument("kernel_sum: ell must be nonnegative");
    return ctx.periodic() ? periodic_sum(ctx, ell, x, y) : direct_sum(ctx, ell, x, y);
}

double phi0(const EigenContext& ctx, const PlanePoint& z) { return kernel_sum(ctx, 0, z.x, z.y).real(); }

cplx phi_ell(const EigenContext& ctx, int ell, const IwasawaNAK& g) {
    const int l = std::abs(ell);
    const cplx v = kernel_sum(ctx, l, g.x, g.y) * std::polar(kernel_prefactor(ctx.delta(), l), 2.0 * l * g.theta);
    return ell < 0 ? std::conj(v) : v;
}

EigenValue evaluate(const EigenContext& ctx, int ell, const IwasawaNAK& g) { return {phi_ell(ctx, ell, g), ell, g}; }

std::vector<cplx> phi_ell_batch(const EigenContext& ctx, int ell, const std::vector<IwasawaNAK>& pts) {
    std::vector<cplx> out(pts.size());
    const long n = static_cast<long>(pts.size());
#pragma omp parallel for schedule(dynamic, 16)
    for (long i = 0; i < n; ++i) out[i] = phi_ell(ctx, ell, pts[i]);
    return out;
}

namespace serial {
std::vector<cplx> phi_ell_batch(const EigenContext& ctx, int ell, const std::vector<IwasawaNAK>& pts) {
    std::vector<cplx> out;
    out.reserve(pts.size());
    for (const auto& g : pts) out.push_back(phi_ell(ctx, ell, g));
    return out;
}
}  // namespace serial

namespace {

void check_step(double y, double h) {
    check_y(y);
    if (!(h > 0.0) || !(h < y)) throw std::invalid_argument("finite differences: need 0 < h < y");
}

struct Partials {
    cplx f, fx, fy, ft, fxx, fyy, fxt;
};

Partials partials(const EigenContext& ctx, int ell, const IwasawaNAK& g, double h) {
    auto F = [&](double dx, double dy, double dt) { return phi_ell(ctx, ell, {g.x + dx, g.y + dy, g.theta + dt}); };
    Partials p;
    p.f = F(0, 0, 0);
    const cplx xp = F(h, 0, 0), xm = F(-h, 0, 0), yp = F(0, h, 0), ym = F(0, -h, 0);
    p.fx = (xp - xm) / (2 * h);
    p.fy = (yp - ym) / (2 * h);
    p.ft = (F(0, 0, h) - F(0, 0, -h)) / (2 * h);
    p.fxx = (xp - 2.0 * p.f + xm) / (h * h);
    p.fyy = (yp - 2.0 * p.f + ym) / (h * h);
    p.fxt = (F(h, 0, h) - F(h, 0, -h) - F(-h, 0, h) + F(-h, 0, -h)) / (4 * h * h);
    return p;
}

double step_factor(double delta, int ell) { return std::sqrt((delta + ell) * (1.0 - delta + ell)); }

}  // namespace

double laplacian_check(const EigenContext& ctx, const PlanePoint& z, double h) {
    check_step(z.y, h);
    auto F = [&](double dx, double dy) { return phi0(ctx, {z.x + dx, z.y + dy}); };
    const double f = F(0, 0);
    auto lap = [&](double k) { return (F(k, 0) + F(-k, 0) + F(0, k) + F(0, -k) - 4.0 * f) / (k * k); };
    // Richardson step h -> h/2 removes the O(h^2) term
    const double L = (4.0 * lap(0.5 * h) - lap(h)) / 3.0;
    const double ev = ctx.delta() * (1.0 - ctx.delta());
    return std::fabs(-z.y * z.y * L - ev * f) / (ev * std::fabs(f));
}

double casimir_check(const EigenContext& ctx, int ell, const IwasawaNAK& g, double h) {
    check_step(g.y, h);
    auto cas = [&](double k) {
        const auto p = partials(ctx, ell, g, k);
        return -g.y * g.y * (p.fxx + p.fyy) + g.y * p.fxt;
    };
    const cplx C = (4.0 * cas(0.5 * h) - cas(h)) / 3.0;
    const cplx f = phi_ell(ctx, ell, g);
    const double ev = ctx.delta() * (1.0 - ctx.delta());
    return std::abs(C - ev * f) / (ev * std::abs(f));
}

double raising_check(const EigenContext& ctx, int ell, const IwasawaNAK& g, double h) {
    if (ell < 0) throw std::invalid_argument("raising_check: ell must be nonnegative");
    check_step(g.y, h);
    const auto p = partials(ctx, ell, g, h);
    const cplx I(0.0, 1.0);
    const cplx r = std::polar(1.0, 2.0 * g.theta) * (I * g.y * p.fx + g.y * p.fy + p.ft / (2.0 * I));
    const cplx target = step_factor(ctx.delta(), ell) * phi_ell(ctx, ell + 1, g);
    return std::abs(r - target) / std::abs(target);
}

double lowering_check(const EigenContext& ctx, int ell, const IwasawaNAK& g, double h) {
    if (ell < 0) throw std::invalid_argument("lowering_check: ell must be nonnegative");
    check_step(g.y, h);
    const auto p = partials(ctx, -ell, g, h);
    const cplx I(0.0, 1.0);
    const cplx r = std::polar(1.0, -2.0 * g.theta) * (-I * g.y * p.fx + g.y * p.fy - p.ft / (2.0 * I));
    const cplx target = step_factor(ctx.delta(), ell) * phi_ell(ctx, -ell - 1, g);
    return std::abs(r - target) / std::abs(target);
}

HorocycleAverage horocycle_average(const EigenContext& ctx, int ell, double y, const Truncation& J,
                                   const QuadOptions& opt) {
    check_y(y);
    const int l = std::abs(ell);
    const double d = ctx.delta();
    const auto [ulo, uhi] = ctx.hull();
    const bool whole = ctx.periodic() || J.whole_line();
    double lo = J.lo, hi = J.hi;
    if (whole) {
        const double margin = std::max(1.0, 20.0 * y);
        lo = ulo - margin;
        hi = uhi + margin;
    } else if (!(lo <= ulo && hi >= uhi)) {
        throw std::invalid_argument("horocycle_average: truncation window misses atoms");
    }
    const double pref = kernel_prefactor(d, l);
    auto f = [&](double x) { return direct_sum(ctx, l, x, y); };
    auto breaks = cluster_breaks(ctx.atoms(), y);
    QuadOptions o = opt;
    o.max_intervals = std::max<int>(o.max_intervals, 40 * static_cast<int>(breaks.size()) + 1000);
    const auto q = integrate_adaptive<cplx>(f, lo, hi, o, std::move(breaks));
    cplx total = q.value;
    if (whole) {
        const auto& ser = series_for(d, l);
        const auto& u = ctx.atoms();
        const auto& mu = ctx.ps_weights();
        std::vector<cplx> per(u.size());
        const long n = static_cast<long>(u.size());
#pragma omp parallel for schedule(static)
        for (long j = 0; j < n; ++j)
            per[j] = mu[j] * (tail_with(ser, std::atan2(y, hi - u[j])) + std::conj(tail_with(ser, std::atan2(y, u[j] - lo))));
        cplx tails = 0.0;
        for (const auto& t : per) tails += t;
        total += tails * std::pow(y, 1.0 - d);
    }
    HorocycleAverage out;
    out.value = total * pref;
    if (ell < 0) out.value = std::conj(out.value);
    out.error = q.error * pref;
    out.evaluations = q.evaluations;
    out.converged = q.converged;
    return out;
}

double c0(const EigenContext& ctx) {
    if (!ctx.periodic()) return ctx.ps_total() * horocycle_constant(ctx.delta());
    return horocycle_average(ctx, 0, 1.0).value.real();
}

double c_ell(const EigenContext& ctx, int ell) { return c0(ctx) * gamma_ratio(ctx.delta(), std::abs(ell)); }

double dx_integral_check(const EigenContext& ctx, int ell, double y, double theta, double h) {
    check_step(y, h);
    auto phi = [&](double x) { return phi_ell(ctx, ell, {x, y, theta}); };
    auto deriv = [&](double x) { return (phi(x + h) - phi(x - h)) / (2 * h); };
    double lo, hi;
    if (ctx.periodic()) {
        lo = -ctx.x0();
        hi = ctx.x0();
    } else {
        const auto [ulo, uhi] = ctx.hull();
        lo = ulo - std::max(1.0, 20.0 * y);
        hi = uhi + std::max(1.0, 20.0 * y);
    }
    auto breaks = cluster_breaks(ctx.atoms(), y);
    QuadOptions o;
    o.rel_tol = 1e-4;
    o.max_intervals = 40 * static_cast<int>(breaks.size()) + 2000;
    auto absd = [&](double x) { return std::abs(deriv(x)); };
    double scale = integrate_adaptive<double>(absd, lo, hi, o, breaks).value;
    cplx edge = 0.0;
    if (!ctx.periodic()) {
        // exact antiderivative outside the window: phi vanishes at both ends
        edge = phi(lo) - phi(hi);
        scale += std::abs(phi(lo)) + std::abs(phi(hi));
    }
    if (!(scale > 0.0)) return 0.0;
    o.rel_tol = 0.0;
    o.abs_tol = 1e-7 * scale;
    const auto q = integrate_adaptive<cplx>(deriv, lo, hi, o, std::move(breaks));
    return std::abs(q.value + edge) / scale;
}

double periodicity_defect(const EigenContext& ctx, int ell, double y, double theta) {
    if (!ctx.periodic()) throw std::invalid_argument("periodicity_defect: needs a finite x0");
    const cplx a = phi_ell(ctx, ell, {ctx.x0(), y, theta}), b = phi_ell(ctx, ell, {-ctx.x0(), y, theta});
    return std::abs(a - b) / std::abs(a);
}

double tail_integral(const EigenContext& ctx, double y, const Truncation& J) {
    check_y(y);
    if (ctx.periodic()) throw std::invalid_argument("tail_integral: needs x0 = inf");
    const auto [ulo, uhi] = ctx.hull();
    if (!(J.lo < ulo && J.hi > uhi)) throw std::invalid_argument("tail_integral: zero margin around the atom hull");
    const auto& ser = series_for(ctx.delta(), 0);
    const auto& u = ctx.atoms();
    const auto& mu = ctx.ps_weights();
    double acc = 0.0;
    for (std::size_t j = 0; j < u.size(); ++j) {
        const double r = std::isinf(J.hi) ? 0.0 : tail_with(ser, std::atan2(y, J.hi - u[j])).real();
        const double l = std::isinf(J.lo) ? 0.0 : tail_with(ser, std::atan2(y, u[j] - J.lo)).real();
        acc += mu[j] * (r + l);
    }
    return acc * std::pow(y, 1.0 - ctx.delta());
}

SupRatio sup_ratio(const EigenContext& ctx, int ell, const std::vector<IwasawaNAK>& pts) {
    SupRatio s;
    s.ell = ell;
    s.bound = kernel_prefactor(ctx.delta(), std::abs(ell));
    const auto vals = phi_ell_batch(ctx, ell, pts);
    for (std::size_t i = 0; i < pts.size(); ++i)
        s.max_ratio = std::max(s.max_ratio, std::abs(vals[i]) / phi0(ctx, {pts[i].x, pts[i].y}));
    return s;
}

namespace {

struct Disk {
    double c, r;
};

// int_{y_lo}^{y_hi} phi0(x, y)^2 / y^2 dy with y = t^q, q = 1/(2 delta - 1).
double vertical_integral(const EigenContext& ctx, double x, double ylo, double yhi, double tol) {
    if (!(yhi > ylo)) return 0.0;
    const double q = 1.0 / (2.0 * ctx.delta() - 1.0);
    auto g = [&](double t) {
        if (t <= 0.0) return 0.0;
        const double y = std::pow(t, q);
        const double f = phi0(ctx, {x, y});
        return f * f / (y * y) * q * y / t;
    };
    QuadOptions o;
    o.rel_tol = tol;
    return integrate_adaptive<double>(g, std::pow(ylo, 1.0 / q), std::pow(yhi, 1.0 / q), o).value;
}

// x-integral over [a, b] with x = mid - half cos(alpha) to absorb square-root ends.
template <class F>
double chebyshev_integral(F&& inner, double a, double b, const QuadOptions& opt) {
    const double mid = 0.5 * (a + b), half = 0.5 * (b - a);
    auto g = [&](double alpha) { return inner(mid - half * std::cos(alpha)) * half * std::sin(alpha); };
    return integrate_adaptive<double>(g, 0.0, kPi, opt).value;
}

// Unit half-disk minus the given disks.
double half_disk_integral(const EigenContext& ctx, const std::vector<Disk>& disks, const L2Options& opt) {
    std::vector<double> cuts{-1.0, 1.0};
    for (const auto& d : disks)
        for (double e : {d.c - d.r, d.c + d.r})
            if (e > -1.0 && e < 1.0) cuts.push_back(e);
    std::sort(cuts.begin(), cuts.end());
    cuts.erase(std::unique(cuts.begin(), cuts.end()), cuts.end());
    auto inner = [&](double x) {
        const double top = std::sqrt(std::max(0.0, 1.0 - x * x));
        double lo = 0.0;
        for (const auto& d : disks)
            if (std::fabs(x - d.c) < d.r) lo = std::max(lo, std::sqrt(d.r * d.r - (x - d.c) * (x - d.c)));
        return vertical_integral(ctx, x, lo, top, opt.inner_rel_tol);
    };
    double acc = 0.0;
    for (std::size_t i = 0; i + 1 < cuts.size(); ++i) acc += chebyshev_integral(inner, cuts[i], cuts[i + 1], opt.outer);
    return acc;
}

}  // namespace

double phi0_l2_norm_sq(const EigenContext& ctx, const GroupPresentation& p, const L2Options& opt) {
    if (!p.has_regions()) throw std::invalid_argument("phi0_l2_norm_sq: group has no ping-pong regions");
    if (p.kind() == GroupKind::SchottkyHyperbolic) {
        if (ctx.periodic()) throw std::invalid_argument("phi0_l2_norm_sq: Schottky domain needs x0 = inf");
        std::vector<Disk> disks, images;
        for (const auto& r : p.regions()) {
            if (r.shape != PingPongRegion::Shape::Disk || std::fabs(r.center) <= r.radius)
                throw std::invalid_argument("phi0_l2_norm_sq: need disks away from 0");
            disks.push_back({r.center, r.radius});
            const double e1 = -1.0 / (r.center - r.radius), e2 = -1.0 / (r.center + r.radius);
            images.push_back({0.5 * (e1 + e2), 0.5 * std::fabs(e1 - e2)});
        }
        // the part outside the unit circle is folded inside by z -> -1/z
        return half_disk_integral(ctx, disks, opt) + half_disk_integral(ctx.inverted(), images, opt);
    }
    if (!ctx.periodic()) throw std::invalid_argument("phi0_l2_norm_sq: parabolic pair needs a finite x0");
    const double x0 = ctx.x0(), d = ctx.delta();
    if (x0 < 1.0) throw std::invalid_argument("phi0_l2_norm_sq: x0 < 1 not supported");
    for (const auto& r : p.regions())
        if (r.shape == PingPongRegion::Shape::Disk && std::fabs(r.center) + r.radius > 1.0 + 1e-12)
            throw std::invalid_argument("phi0_l2_norm_sq: disk region leaves the unit disk");
    // The pair is normalized by z -> -1/z, which swaps the parts of the
    // domain inside and outside the unit circle; integrate outside, double it.
    const double Y = opt.cusp_height_factor * ctx.period();
    auto inner = [&](double x) {
        const double lo = std::fabs(x) < 1.0 ? std::sqrt(1.0 - x * x) : 0.0;
        return vertical_integral(ctx, x, lo, Y, opt.inner_rel_tol);
    };
    std::vector<double> cuts{-x0, -1.0, 1.0, x0};
    cuts.erase(std::unique(cuts.begin(), cuts.end()), cuts.end());
    double acc = 0.0;
    for (std::size_t i = 0; i + 1 < cuts.size(); ++i) acc += chebyshev_integral(inner, cuts[i], cuts[i + 1], opt.outer);
    // above Y only the constant term of the Fourier expansion survives
    const double a0 = ctx.ps_total() * horocycle_constant(d) / ctx.period();
    acc += ctx.period() * a0 * a0 * std::pow(Y, 1.0 - 2.0 * d) / (2.0 * d - 1.0);
    return 2.0 * acc;
}

AtomicMeasure normalize_phi0_l2(const EigenContext& ctx, const GroupPresentation& p, const L2Options& opt) {
    const double n2 = phi0_l2_norm_sq(ctx, p, opt);
    return ctx.measure().scaled(1.0 / std::sqrt(n2), Normalization::Phi0L2Unit);
}

}  // namespace horolab
