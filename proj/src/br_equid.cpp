#include "horolab/br_equid.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <optional>
#include <stdexcept>

#include "horolab/io.hpp"

namespace horolab {

namespace {

// cosh d(i, x + iy) - 1
double cosh_dist_from_i_m1(double x, double y) { return (x * x + (y - 1.0) * (y - 1.0)) / (2.0 * y); }

double dist_from_i(double x, double y) { return std::acosh(1.0 + cosh_dist_from_i_m1(x, y)); }

// Angle offset reduced into [-pi/2, pi/2).
double angle_offset(double theta, double center) {
    double d = std::fmod(theta - center, kPi);
    if (d < -0.5 * kPi) d += kPi;
    if (d >= 0.5 * kPi) d -= kPi;
    return d;
}

// Iwasawa coordinates of gamma n_x a_y without building the product.
IwasawaNAK act_on_horocycle(const MoebiusElement& g, double x, double y) {
    const double sy = std::sqrt(y);
    const double a = g.a * sy, b = (g.a * x + g.b) / sy;
    const double c = g.c * sy, d = (g.c * x + g.d) / sy;
    const double n = c * c + d * d;
    IwasawaNAK out;
    out.y = 1.0 / n;
    out.x = (a * c + b * d) / n;
    out.theta = reduce_angle(std::atan2(-c, d));
    return out;
}

std::vector<double> even_breaks(double a, double b, int panels) {
    std::vector<double> br;
    for (int i = 1; i < panels; ++i) br.push_back(a + (b - a) * i / panels);
    return br;
}

std::string ball_fingerprint(const OrbitBall& ball) {
    return hash_string(ball.group_hash + "|" + fmt_double(ball.radius) + "|" + std::to_string(ball.size()));
}

void require_certificate(const TestFunction& f, const InjectivityCertificate& cert) {
    if (!cert.valid) throw std::invalid_argument("inner product: invalid injectivity certificate");
    if (cert.function_json != f.to_json().dump())
        throw std::invalid_argument("inner product: certificate issued for a different function");
}

}  // namespace

double bump_profile(double t) {
    if (!(std::fabs(t) < 1.0)) return 0.0;
    return std::exp(-1.0 / (1.0 - t * t));
}

void BumpFunction::validate() const {
    if (!(rx > 0.0 && ry > 0.0 && rtheta > 0.0)) throw std::invalid_argument("bump: half-widths must be positive");
    if (!(rtheta < 0.5 * kPi)) throw std::invalid_argument("bump: angular half-width must be below pi/2");
    if (!(yc - ry > 0.0)) throw std::invalid_argument("bump: support must lie in y > 0");
    if (!std::isfinite(xc) || !std::isfinite(yc) || !std::isfinite(thetac) || !std::isfinite(amplitude))
        throw std::invalid_argument("bump: non-finite parameter");
}

double BumpFunction::operator()(const IwasawaNAK& g) const {
    const double bx = bump_profile((g.x - xc) / rx);
    if (bx == 0.0) return 0.0;
    const double by = bump_profile((g.y - yc) / ry);
    if (by == 0.0) return 0.0;
    return amplitude * bx * by * bump_profile(angle_offset(g.theta, thetac) / rtheta);
}

// Both distances are convex along each coordinate of the rectangle, so the
// maximum sits at a corner.
double BumpFunction::reach() const {
    double best = 0.0;
    for (double sx : {-1.0, 1.0})
        for (double sy : {-1.0, 1.0}) best = std::max(best, dist_from_i(xc + sx * rx, yc + sy * ry));
    return best;
}

double BumpFunction::radius() const {
    double best = 0.0;
    for (double sx : {-1.0, 1.0})
        for (double sy : {-1.0, 1.0}) best = std::max(best, distance({xc, yc}, {xc + sx * rx, yc + sy * ry}));
    return best;
}

nlohmann::json BumpFunction::to_json() const {
    return {{"xc", fmt_double(xc)},         {"yc", fmt_double(yc)}, {"thetac", fmt_double(thetac)},
            {"rx", fmt_double(rx)},         {"ry", fmt_double(ry)}, {"rtheta", fmt_double(rtheta)},
            {"amplitude", fmt_double(amplitude)}};
}

double TestFunction::operator()(const IwasawaNAK& g) const {
    double s = 0.0;
    for (const auto& b : bumps) s += b(g);
    return s;
}

double TestFunction::reach() const {
    double r = 0.0;
    for (const auto& b : bumps) r = std::max(r, b.reach());
    return r;
}

double TestFunction::ylo() const {
    double v = std::numeric_limits<double>::infinity();
    for (const auto& b : bumps) v = std::min(v, b.yc - b.ry);
    return v;
}

double TestFunction::yhi() const {
    double v = 0.0;
    for (const auto& b : bumps) v = std::max(v, b.yc + b.ry);
    return v;
}

nlohmann::json TestFunction::to_json() const {
    auto arr = nlohmann::json::array();
    for (const auto& b : bumps) arr.push_back(b.to_json());
    return arr;
}

InjectivityCertificate certify_injectivity(const TestFunction& f, const OrbitBall& ball) {
    if (f.bumps.empty()) throw std::invalid_argument("certify_injectivity: empty test function");
    for (const auto& b : f.bumps) b.validate();
    InjectivityCertificate cert;
    cert.checked_radius = ball.radius;
    cert.ball_hash = ball_fingerprint(ball);
    cert.function_json = f.to_json().dump();

    // gamma B_j meets B_i only if d(i, gamma i) <= d(i,z_i) + rho_i + rho_j + d(z_j, i).
    std::vector<PlanePoint> centers;
    std::vector<double> rho;
    double worst = 0.0;
    for (const auto& b : f.bumps) {
        centers.push_back({b.xc, b.yc});
        rho.push_back(b.radius());
        worst = std::max(worst, dist_from_i(b.xc, b.yc) + rho.back());
    }
    cert.threshold = 2.0 * worst;
    cert.margin = std::numeric_limits<double>::infinity();
    bool disjoint = true;
    for (const auto& e : ball.entries) {
        if (e.distance > cert.threshold) break;
        if (e.word.empty()) continue;
        for (std::size_t j = 0; j < centers.size(); ++j) {
            const PlanePoint moved = act_plane(e.element, centers[j]);
            for (std::size_t i = 0; i < centers.size(); ++i) {
                const double gap = distance(centers[i], moved) - rho[i] - rho[j];
                cert.margin = std::min(cert.margin, gap);
                if (!(gap > 0.0)) disjoint = false;
            }
        }
    }
    cert.valid = disjoint && ball.radius >= cert.threshold;
    return cert;
}

PeriodizedValue periodized_eval(const TestFunction& f, const OrbitBall& ball, const MoebiusElement& g) {
    PeriodizedValue out;
    out.required_radius = f.reach() + displacement(g);
    if (ball.radius < out.required_radius) throw std::invalid_argument("periodized_eval: ball too small");
    for (const auto& e : ball.entries) {
        if (e.distance > out.required_radius) break;
        const double v = f(iwasawa(compose(e.element, g)));
        if (v != 0.0) {
            out.value += v;
            ++out.terms;
        }
    }
    return out;
}

HorocycleWindow window_for(const GroupPresentation& p) {
    if (!p.has_regions()) throw std::invalid_argument("window_for: group has no ping-pong regions");
    HorocycleWindow w;
    if (p.kind() == GroupKind::ParabolicPair) {
        double x0 = 0.0;
        for (const auto& r : p.regions())
            if (r.shape != PingPongRegion::Shape::Disk) x0 = std::max(x0, std::fabs(r.center));
        if (!(x0 > 0.0)) throw std::invalid_argument("window_for: no translation half-planes");
        w.lo = -x0;
        w.hi = x0;
        w.periodic = true;
        return w;
    }
    w.lo = std::numeric_limits<double>::infinity();
    w.hi = -w.lo;
    for (const auto& r : p.regions()) {
        if (r.shape != PingPongRegion::Shape::Disk) throw std::invalid_argument("window_for: unbounded region");
        w.lo = std::min(w.lo, r.center - r.radius);
        w.hi = std::max(w.hi, r.center + r.radius);
    }
    return w;
}

namespace {

struct EntryIntegral {
    double value = 0.0, error = 0.0;
    bool hit = false;
};

// Part of the window where ylo <= Im(gamma (x + iy)) <= yhi.
std::vector<std::pair<double, double>> height_intervals(const MoebiusElement& g, double y, double ylo, double yhi,
                                                        const HorocycleWindow& w) {
    std::vector<std::pair<double, double>> raw;
    if (g.c == 0.0) {
        const double h = y / (g.d * g.d);
        if (h >= ylo && h <= yhi) raw.push_back({w.lo, w.hi});
    } else {
        // Im = y / ((cx + d)^2 + c^2 y^2)
        const double outer = y / ylo - g.c * g.c * y * y;
        if (outer <= 0.0) return {};
        const double ro = std::sqrt(outer);
        double a = (-g.d - ro) / g.c, b = (-g.d + ro) / g.c;
        if (a > b) std::swap(a, b);
        const double inner = y / yhi - g.c * g.c * y * y;
        if (inner > 0.0) {
            const double ri = std::sqrt(inner);
            double ia = (-g.d - ri) / g.c, ib = (-g.d + ri) / g.c;
            if (ia > ib) std::swap(ia, ib);
            raw.push_back({a, ia});
            raw.push_back({ib, b});
        } else {
            raw.push_back({a, b});
        }
    }
    std::vector<std::pair<double, double>> out;
    for (auto [a, b] : raw) {
        a = std::max(a, w.lo);
        b = std::min(b, w.hi);
        if (b > a) out.push_back({a, b});
    }
    return out;
}

EntryIntegral entry_integral(const TestFunction& f, const MoebiusElement& g, double y, const HorocycleWindow& w,
                             double ylo, double yhi, double rel_tol) {
    EntryIntegral out;
    for (auto [a, b] : height_intervals(g, y, ylo, yhi, w)) {
        out.hit = true;
        auto integrand = [&](double x) { return f(act_on_horocycle(g, x, y)); };
        const auto q = integrate_adaptive<double>(integrand, a, b, QuadOptions{rel_tol, 1e-300, 4000},
                                                  even_breaks(a, b, 4));
        out.value += q.value;
        out.error += q.error;
    }
    return out;
}

double psi_required_radius(const TestFunction& f, double y, const HorocycleWindow& w) {
    return f.reach() + std::max(dist_from_i(w.lo, y), dist_from_i(w.hi, y));
}

PsiN psi_reduce(const std::vector<EntryIntegral>& parts, double required) {
    PsiN out;
    out.required_radius = required;
    for (const auto& p : parts) {
        out.value += p.value;
        out.error += p.error;
        out.contributing += p.hit ? 1 : 0;
    }
    return out;
}

void psi_validate(const TestFunction& f, double y, const HorocycleWindow& w) {
    if (!(y > 0.0)) throw std::invalid_argument("psi_N: y must be positive");
    if (!(w.hi > w.lo)) throw std::invalid_argument("psi_N: empty window");
    if (f.bumps.empty()) throw std::invalid_argument("psi_N: empty test function");
    for (const auto& b : f.bumps) b.validate();
}

}  // namespace

PsiN psi_N(const TestFunction& f, const OrbitBall& ball, double y, const HorocycleWindow& w, double rel_tol) {
    psi_validate(f, y, w);
    const double need = psi_required_radius(f, y, w);
    if (ball.radius < need) throw std::invalid_argument("psi_N: ball too small");
    const std::size_t n = ball.count_within(need);
    const double ylo = f.ylo(), yhi = f.yhi();
    std::vector<EntryIntegral> parts(n);
#pragma omp parallel for schedule(dynamic, 64)
    for (long i = 0; i < static_cast<long>(n); ++i)
        parts[i] = entry_integral(f, ball.entries[i].element, y, w, ylo, yhi, rel_tol);
    return psi_reduce(parts, need);
}

namespace serial {
PsiN psi_N(const TestFunction& f, const OrbitBall& ball, double y, const HorocycleWindow& w, double rel_tol) {
    psi_validate(f, y, w);
    const double need = psi_required_radius(f, y, w);
    if (ball.radius < need) throw std::invalid_argument("psi_N: ball too small");
    const std::size_t n = ball.count_within(need);
    const double ylo = f.ylo(), yhi = f.yhi();
    std::vector<EntryIntegral> parts(n);
    for (std::size_t i = 0; i < n; ++i) parts[i] = entry_integral(f, ball.entries[i].element, y, w, ylo, yhi, rel_tol);
    return psi_reduce(parts, need);
}
}  // namespace serial

double br_sheet_angle(double u) {
    if (std::isinf(u)) return 0.0;
    return 0.5 * kPi + std::atan(u);
}

namespace {

struct SheetBox {
    double t0, t1, s0, s1;
};

// Bounding box in (t, s) of the support pulled back along k_theta a_s n_t.
SheetBox sheet_box(const BumpFunction& b, double theta) {
    const MoebiusElement kinv = MoebiusElement::rotation(-theta);
    SheetBox box{std::numeric_limits<double>::infinity(), -std::numeric_limits<double>::infinity(),
                 std::numeric_limits<double>::infinity(), -std::numeric_limits<double>::infinity()};
    constexpr int n = 64;
    for (int i = 0; i <= n; ++i)
        for (int j = 0; j <= n; ++j) {
            const PlanePoint z{b.xc + b.rx * (2.0 * i / n - 1.0), b.yc + b.ry * (2.0 * j / n - 1.0)};
            const PlanePoint w = act_plane(kinv, z);
            const double t = w.x / w.y;
            box.t0 = std::min(box.t0, t);
            box.t1 = std::max(box.t1, t);
            box.s0 = std::min(box.s0, w.y);
            box.s1 = std::max(box.s1, w.y);
        }
    const double pt = 0.1 * (box.t1 - box.t0), ps = 0.1 * (box.s1 - box.s0);
    box.t0 -= pt;
    box.t1 += pt;
    box.s0 = std::max(box.s0 - ps, 0.5 * box.s0);
    box.s1 += ps;
    return box;
}

// Range of g(inf) = x - y cot(theta) over the support, or nullopt when the
// angular support contains 0 mod pi (then g(inf) reaches infinity).
std::optional<std::pair<double, double>> sheet_range(const BumpFunction& b) {
    const double a = reduce_angle(b.thetac - b.rtheta);
    const double c = a + 2.0 * b.rtheta;
    if (a == 0.0 || c >= kPi) return std::nullopt;
    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    for (double x : {b.xc - b.rx, b.xc + b.rx})
        for (double y : {b.yc - b.ry, b.yc + b.ry})
            for (double th : {a, c}) {
                const double v = x - y * std::cos(th) / std::sin(th);
                lo = std::min(lo, v);
                hi = std::max(hi, v);
            }
    return std::make_pair(lo, hi);
}

double sheet_integral(const BumpFunction& b, double theta, double delta) {
    const SheetBox box = sheet_box(b, theta);
    const MoebiusElement k = MoebiusElement::rotation(theta);
    const QuadOptions inner{1e-9, 1e-300, 2000}, outer{1e-8, 1e-300, 2000};
    auto row = [&](double s) {
        const double sq = std::sqrt(s);
        auto g = [&](double t) {
            const MoebiusElement as{sq, t * sq, 0.0, 1.0 / sq};
            return b(iwasawa(compose(k, as)));
        };
        return integrate_adaptive<double>(g, box.t0, box.t1, inner, even_breaks(box.t0, box.t1, 6)).value *
               std::pow(s, delta - 1.0);
    };
    return integrate_adaptive<double>(row, box.s0, box.s1, outer, even_breaks(box.s0, box.s1, 6)).value;
}

}  // namespace

double mBR(const TestFunction& f, const AtomicMeasure& m, double delta) {
    double total = 0.0;
    for (const auto& b : f.bumps) {
        b.validate();
        const auto range = sheet_range(b);
        std::vector<std::size_t> live;
        for (std::size_t j = 0; j < m.atoms.size(); ++j) {
            const double u = m.atoms[j].u;
            if (m.atoms[j].w == 0.0) continue;
            if (range && (std::isinf(u) || u < range->first || u > range->second)) continue;
            live.push_back(j);
        }
        std::vector<double> part(live.size());
#pragma omp parallel for schedule(dynamic, 4)
        for (long i = 0; i < static_cast<long>(live.size()); ++i) {
            const Atom& a = m.atoms[live[i]];
            part[i] = a.w * sheet_integral(b, br_sheet_angle(a.u), delta);
        }
        for (double v : part) total += v;
    }
    return total;
}

namespace {

// <bump, phi_ell> for ell = 0..L with a Gauss-Legendre tensor rule of order n.
std::vector<cplx> bump_products(const BumpFunction& b, const EigenContext& ctx, int L, int n) {
    const GaussLegendre gl(n);
    std::vector<double> xs(n), ys(n), wx(n), wy(n);
    for (int i = 0; i < n; ++i) {
        xs[i] = b.xc + b.rx * gl.nodes[i];
        ys[i] = b.yc + b.ry * gl.nodes[i];
        wx[i] = b.rx * gl.weights[i] * bump_profile(gl.nodes[i]);
        wy[i] = b.ry * gl.weights[i] * bump_profile(gl.nodes[i]) / (ys[i] * ys[i]);
    }
    // Angular factor int b(theta) e^(-2 i ell theta) dtheta / pi.
    std::vector<cplx> ang(L + 1);
    for (int l = 0; l <= L; ++l) {
        cplx s = 0.0;
        for (int i = 0; i < n; ++i) {
            const double th = b.thetac + b.rtheta * gl.nodes[i];
            s += b.rtheta * gl.weights[i] * bump_profile(gl.nodes[i]) * std::polar(1.0, -2.0 * l * th);
        }
        ang[l] = s / kPi;
    }

    const long nodes = static_cast<long>(n) * n;
    std::vector<std::vector<cplx>> per_node(nodes, std::vector<cplx>(L + 1));
    const double d = ctx.delta();
    const auto& u = ctx.atoms();
    const auto& mu = ctx.ps_weights();
#pragma omp parallel for schedule(static)
    for (long k = 0; k < nodes; ++k) {
        const double x = xs[k / n], y = ys[k % n];
        auto& acc = per_node[k];
        if (ctx.periodic()) {
            for (int l = 0; l <= L; ++l) acc[l] = kernel_sum(ctx, l, x, y);
        } else {
            for (std::size_t j = 0; j < u.size(); ++j) {
                const double dx = x - u[j];
                const cplx step = cplx(dx, -y) / cplx(dx, y);  // e^(-2 i alpha)
                cplx term = mu[j] * std::pow(y / (dx * dx + y * y), d);
                for (int l = 0; l <= L; ++l) {
                    acc[l] += term;
                    term *= step;
                }
            }
        }
    }
    std::vector<cplx> out(L + 1);
    for (long k = 0; k < nodes; ++k) {
        const double wgt = wx[k / n] * wy[k % n];
        for (int l = 0; l <= L; ++l) out[l] += wgt * std::conj(per_node[k][l]);
    }
    for (int l = 0; l <= L; ++l) out[l] *= b.amplitude * kernel_prefactor(d, l) * ang[l];
    return out;
}

}  // namespace

std::vector<InnerProduct> inner_products_phi(const TestFunction& f, const InjectivityCertificate& cert,
                                             const EigenContext& ctx, int L) {
    require_certificate(f, cert);
    if (L < 0) throw std::invalid_argument("inner products: L must be nonnegative");
    std::vector<cplx> lo(L + 1), hi(L + 1);
    for (const auto& b : f.bumps) {
        const auto p = bump_products(b, ctx, L, 48);
        const auto q = bump_products(b, ctx, L, 64);
        for (int l = 0; l <= L; ++l) {
            lo[l] += p[l];
            hi[l] += q[l];
        }
    }
    std::vector<InnerProduct> out(2 * L + 1);
    for (int l = 0; l <= L; ++l) {
        const double err = std::abs(hi[l] - lo[l]);
        out[L + l] = {hi[l], err};
        // phi_(-l) = conj(phi_l) and f is real.
        out[L - l] = {std::conj(hi[l]), err};
    }
    return out;
}

InnerProduct inner_product_phi(const TestFunction& f, const InjectivityCertificate& cert, const EigenContext& ctx,
                               int ell) {
    const int L = std::abs(ell);
    return inner_products_phi(f, cert, ctx, L)[L + ell];
}

namespace {

double rel_gap(double a, double b) {
    const double s = std::max(std::fabs(a), std::fabs(b));
    return s == 0.0 ? 0.0 : std::fabs(a - b) / s;
}

nlohmann::json cplx_json(cplx z) { return {fmt_double(z.real()), fmt_double(z.imag())}; }

}  // namespace

nlohmann::json BrdReport::to_json() const {
    auto partial = nlohmann::json::array();
    for (const auto& s : partial_sums) partial.push_back(cplx_json(s));
    nlohmann::json j = {{"L", L},
                        {"spectral_sum", cplx_json(spectral_sum)},
                        {"br_side", fmt_double(br_side)},
                        {"imag_ratio", fmt_double(imag_ratio)},
                        {"tail_estimate", fmt_double(tail_estimate)},
                        {"partial_sums", partial},
                        {"gap_spectral_br", fmt_double(gap_spectral_br)}};
    if (has_fit) {
        j["fitted_main"] = fmt_double(fitted_main);
        j["gap_spectral_fit"] = fmt_double(gap_spectral_fit);
        j["gap_br_fit"] = fmt_double(gap_br_fit);
    }
    return j;
}

BrdReport brd_identity_check(const TestFunction& f, const InjectivityCertificate& cert, const EigenContext& ctx,
                             int L) {
    BrdReport r;
    r.L = L;
    const auto ips = inner_products_phi(f, cert, ctx, L);
    const double kap = c0(ctx);
    r.partial_sums.resize(L + 1);
    cplx s = 0.0;
    for (int l = 0; l <= L; ++l) {
        s += c_ell(ctx, l) * ips[L + l].value;
        if (l > 0) s += c_ell(ctx, -l) * ips[L - l].value;
        r.partial_sums[l] = s;
    }
    r.spectral_sum = s;
    r.imag_ratio = std::abs(s) > 0.0 ? std::fabs(s.imag()) / std::abs(s) : 0.0;
    r.tail_estimate = std::abs(s - r.partial_sums[std::max(0, L - 4)]);
    r.br_side = kap * mBR(f, ctx.measure(), ctx.delta());
    r.gap_spectral_br = rel_gap(s.real(), r.br_side);
    return r;
}

void attach_fit(BrdReport& r, double fitted_main) {
    r.fitted_main = fitted_main;
    r.has_fit = true;
    r.gap_spectral_fit = rel_gap(r.spectral_sum.real(), fitted_main);
    r.gap_br_fit = rel_gap(r.br_side, fitted_main);
}

namespace {

struct TwoTerm {
    double M = 0.0, B = 0.0, cost = std::numeric_limits<double>::infinity();
};

// Least squares for psi ~ M y^a + B y^b in relative residuals.
TwoTerm solve_two_term(const std::vector<double>& y, const std::vector<double>& psi, double a, double b) {
    double s11 = 0, s12 = 0, s22 = 0, r1 = 0, r2 = 0;
    for (std::size_t i = 0; i < y.size(); ++i) {
        const double p = std::pow(y[i], a) / psi[i], q = std::pow(y[i], b) / psi[i];
        s11 += p * p;
        s12 += p * q;
        s22 += q * q;
        r1 += p;
        r2 += q;
    }
    const double det = s11 * s22 - s12 * s12;
    TwoTerm t;
    if (!(std::fabs(det) > 1e-14 * s11 * s22)) return t;
    t.M = (r1 * s22 - r2 * s12) / det;
    t.B = (s11 * r2 - s12 * r1) / det;
    t.cost = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) {
        const double e = 1.0 - (t.M * std::pow(y[i], a) + t.B * std::pow(y[i], b)) / psi[i];
        t.cost += e * e;
    }
    return t;
}

// Best b > a on a grid, then refined by golden section.
std::pair<double, TwoTerm> best_b(const std::vector<double>& y, const std::vector<double>& psi, double a) {
    double bb = a + 0.02;
    TwoTerm best;
    for (int i = 1; i <= 100; ++i) {
        const double b = a + 0.01 * i;
        const auto t = solve_two_term(y, psi, a, b);
        if (t.cost < best.cost) best = t, bb = b;
    }
    double lo = std::max(a + 1e-3, bb - 0.01), hi = bb + 0.01;
    const double g = 0.5 * (std::sqrt(5.0) - 1.0);
    for (int it = 0; it < 60; ++it) {
        const double m1 = hi - g * (hi - lo), m2 = lo + g * (hi - lo);
        if (solve_two_term(y, psi, a, m1).cost < solve_two_term(y, psi, a, m2).cost)
            hi = m2;
        else
            lo = m1;
    }
    const double b = 0.5 * (lo + hi);
    const auto t = solve_two_term(y, psi, a, b);
    if (t.cost < best.cost) return {b, t};
    return {bb, best};
}

}  // namespace

EquidFit fit_equidistribution(const std::vector<double>& y, const std::vector<double>& psi, double delta) {
    if (y.size() != psi.size() || y.size() < 4) throw std::invalid_argument("fit: need at least four points");
    double ymin = y[0], ymax = y[0];
    for (std::size_t i = 0; i < y.size(); ++i) {
        if (!(y[i] > 0.0) || !(psi[i] > 0.0)) throw std::invalid_argument("fit: values must be positive");
        ymin = std::min(ymin, y[i]);
        ymax = std::max(ymax, y[i]);
    }
    if (ymax / ymin < 100.0 * (1.0 - 1e-9)) throw std::invalid_argument("fit: y-grid must span two decades");
    EquidFit fit;
    const double a0 = 1.0 - delta;

    const auto [b, fixed] = best_b(y, psi, a0);
    fit.M = fixed.M;
    fit.B = fixed.B;
    fit.correction_exponent = b;
    fit.rms_residual = std::sqrt(fixed.cost / y.size());

    // Free leading exponent: scan a, each with its best b.
    double best_a = a0, best_cost = fixed.cost;
    for (int i = -60; i <= 60; ++i) {
        const double a = a0 + 0.005 * i;
        const double c = best_b(y, psi, a).second.cost;
        if (c < best_cost) best_cost = c, best_a = a;
    }
    fit.main_exponent = best_a;

    std::vector<double> lx, le;
    for (std::size_t i = 0; i < y.size(); ++i) {
        const double e = std::fabs(psi[i] - fit.M * std::pow(y[i], a0));
        if (e > 0.0) {
            lx.push_back(std::log(y[i]));
            le.push_back(std::log(e));
        }
    }
    if (lx.size() >= 2) {
        double mx = 0, me = 0;
        for (std::size_t i = 0; i < lx.size(); ++i) mx += lx[i], me += le[i];
        mx /= lx.size();
        me /= lx.size();
        double sxx = 0, sxe = 0;
        for (std::size_t i = 0; i < lx.size(); ++i) {
            sxx += (lx[i] - mx) * (lx[i] - mx);
            sxe += (lx[i] - mx) * (le[i] - me);
        }
        fit.error_exponent = sxx > 0 ? sxe / sxx : 0.0;
    }
    fit.gap = fit.error_exponent - a0;
    fit.flagged = !(fit.gap > 0.0);
    return fit;
}

nlohmann::json EquidReport::to_json() const {
    auto arr = [](const std::vector<double>& v) {
        auto a = nlohmann::json::array();
        for (double x : v) a.push_back(fmt_double(x));
        return a;
    };
    return {{"group_hash", group_hash},
            {"measure_hash", measure_hash},
            {"delta_hat", fmt_double(delta_hat)},
            {"function", function},
            {"y", arr(y)},
            {"psi_N", arr(psi)},
            {"main_term", arr(main_term)},
            {"residual", arr(residual)},
            {"fit",
             {{"main_exponent", fmt_double(fit.main_exponent)},
              {"M", fmt_double(fit.M)},
              {"B", fmt_double(fit.B)},
              {"correction_exponent", fmt_double(fit.correction_exponent)},
              {"error_exponent", fmt_double(fit.error_exponent)},
              {"gap", fmt_double(fit.gap)},
              {"rms_residual", fmt_double(fit.rms_residual)},
              {"flagged", fit.flagged}}}};
}

void EquidReport::write_csv(const std::string& path, const std::string& comment) const {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path);
    std::istringstream lines(comment);
    for (std::string line; std::getline(lines, line);) out << "# " << line << '\n';
    out << "y,psi_N,main_term,residual\n";
    for (std::size_t i = 0; i < y.size(); ++i)
        out << fmt_double(y[i]) << ',' << fmt_double(psi[i]) << ',' << fmt_double(main_term[i]) << ','
            << fmt_double(residual[i]) << '\n';
}

EquidReport equid_experiment(const TestFunction& f, const OrbitBall& ball, const HorocycleWindow& w,
                             double delta_hat, const std::vector<double>& ys, const std::string& measure_hash) {
    EquidReport r;
    r.group_hash = ball.group_hash;
    r.measure_hash = measure_hash;
    r.delta_hat = delta_hat;
    r.function = f.to_json();
    r.y = ys;
    for (double y : ys) r.psi.push_back(psi_N(f, ball, y, w).value);
    r.fit = fit_equidistribution(r.y, r.psi, delta_hat);
    for (std::size_t i = 0; i < ys.size(); ++i) {
        r.main_term.push_back(r.fit.M * std::pow(ys[i], 1.0 - delta_hat));
        r.residual.push_back(r.psi[i] - r.main_term[i]);
    }
    return r;
}

}  // namespace horolab
