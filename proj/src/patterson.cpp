#include "horolab/patterson.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "horolab/io.hpp"
#include "json.hpp"

namespace horolab {

const char* to_string(Normalization n) {
    switch (n) {
        case Normalization::Raw: return "raw";
        case Normalization::UnitMass: return "unit-mass";
        case Normalization::Phi0L2Unit: return "phi0-L2-unit";
    }
    return "?";
}

Normalization normalization_from_string(const std::string& s) {
    if (s == "raw") return Normalization::Raw;
    if (s == "unit-mass") return Normalization::UnitMass;
    if (s == "phi0-L2-unit") return Normalization::Phi0L2Unit;
    throw std::invalid_argument("unknown normalization '" + s + "'");
}

AtomicMeasure AtomicMeasure::from_atoms(std::vector<Atom> atoms, Normalization n) {
    AtomicMeasure m;
    m.atoms = std::move(atoms);
    m.normalization = n;
    for (const auto& a : m.atoms)
        if (!(a.w >= 0.0)) throw std::invalid_argument("AtomicMeasure: negative or NaN weight");
    m.recompute_total();
    return m;
}

void AtomicMeasure::recompute_total() {
    double t = 0.0;
    for (const auto& a : atoms) t += a.w;
    total_mass = t;
}

bool AtomicMeasure::has_infinite_atom() const {
    return std::any_of(atoms.begin(), atoms.end(), [](const Atom& a) { return std::isinf(a.u); });
}

AtomicMeasure AtomicMeasure::scaled(double factor, Normalization tag) const {
    if (!(factor > 0.0)) throw std::invalid_argument("AtomicMeasure::scaled: factor must be positive");
    AtomicMeasure m = *this;
    for (auto& a : m.atoms) a.w *= factor;
    m.normalization = tag;
    m.recompute_total();
    return m;
}

AtomicMeasure AtomicMeasure::unit_mass() const {
    if (!(total_mass > 0.0)) throw std::invalid_argument("unit_mass: measure has no mass");
    AtomicMeasure m = scaled(1.0 / total_mass, Normalization::UnitMass);
    return m;
}

std::pair<double, double> AtomicMeasure::hull() const {
    double lo = INFINITY, hi = -INFINITY;
    for (const auto& a : atoms) {
        if (std::isinf(a.u)) continue;
        lo = std::min(lo, a.u);
        hi = std::max(hi, a.u);
    }
    return {lo, hi};
}

std::string AtomicMeasure::hash() const {
    std::uint64_t h = fnv1a(to_string(normalization));
    for (const auto& a : atoms) {
        h = fnv1a(fmt_double(a.u), h);
        h = fnv1a(fmt_double(a.w), h);
    }
    return hex64(h);
}

double default_s(const DeltaEstimate& est) { return est.delta_hat + std::max(0.01, 2.0 * est.stderr_); }

namespace {

void check_build(const OrbitBall& ball, double delta_hat, double s, const PattersonOptions& opt) {
    if (ball.entries.empty()) throw std::invalid_argument("build_patterson: empty ball");
    if (!(s > delta_hat)) throw std::invalid_argument("build_patterson: s must exceed delta_hat (divergent regime)");
    if (opt.normalization == Normalization::Phi0L2Unit)
        throw std::invalid_argument("build_patterson: phi0-L2-unit needs a fundamental-domain integral");
}

bool in_window(const BallEntry& e, const PattersonOptions& opt) {
    return !e.word.empty() && e.distance >= opt.depth_min && e.distance <= opt.depth_max;
}

Atom atom_of(const BallEntry& e, double s) {
    const auto b = visual_projection(act_plane(e.element, {0.0, 1.0}));
    return {b.is_infinite() ? INFINITY : b.value(), std::exp(-s * e.distance)};
}

PattersonApprox finish(const OrbitBall& ball, double delta_hat, double s, const PattersonOptions& opt,
                       std::vector<Atom> atoms) {
    if (atoms.empty()) throw std::invalid_argument("build_patterson: degenerate (no atoms)");
    PattersonApprox out;
    out.measure = AtomicMeasure::from_atoms(std::move(atoms), Normalization::Raw);
    if (opt.normalization == Normalization::UnitMass) out.measure = out.measure.unit_mass();
    out.s = s;
    out.delta_hat = delta_hat;
    out.ball_hash = ball.group_hash;
    out.depth_min = opt.depth_min;
    out.depth_max = std::min(opt.depth_max, ball.radius);
    return out;
}

}  // namespace

PattersonApprox build_patterson(const OrbitBall& ball, double delta_hat, double s, const PattersonOptions& opt) {
    check_build(ball, delta_hat, s, opt);
    const auto& E = ball.entries;
    std::vector<char> keep(E.size());
    std::vector<Atom> mapped(E.size());
#pragma omp parallel for schedule(static)
    for (std::size_t i = 0; i < E.size(); ++i) {
        keep[i] = in_window(E[i], opt);
        if (keep[i]) mapped[i] = atom_of(E[i], s);
    }
    std::vector<Atom> atoms;
    atoms.reserve(E.size());
    for (std::size_t i = 0; i < E.size(); ++i)
        if (keep[i]) atoms.push_back(mapped[i]);
    return finish(ball, delta_hat, s, opt, std::move(atoms));
}

namespace serial {

PattersonApprox build_patterson(const OrbitBall& ball, double delta_hat, double s, const PattersonOptions& opt) {
    check_build(ball, delta_hat, s, opt);
    std::vector<Atom> atoms;
    for (const auto& e : ball.entries)
        if (in_window(e, opt)) atoms.push_back(atom_of(e, s));
    return finish(ball, delta_hat, s, opt, std::move(atoms));
}

}  // namespace serial

AtomicMeasure compress(const AtomicMeasure& m, double resolution) {
    if (!(resolution > 0.0)) return m;
    std::vector<Atom> sorted = m.atoms;
    std::sort(sorted.begin(), sorted.end(), [](const Atom& a, const Atom& b) { return a.u < b.u; });
    std::vector<Atom> out;
    std::size_t i = 0;
    while (i < sorted.size()) {
        if (std::isinf(sorted[i].u)) {
            out.push_back(sorted[i++]);
            continue;
        }
        const double start = sorted[i].u;
        double w = 0.0, wu = 0.0;
        std::size_t j = i;
        for (; j < sorted.size() && !std::isinf(sorted[j].u) && sorted[j].u - start < resolution; ++j) {
            w += sorted[j].w;
            wu += sorted[j].w * sorted[j].u;
        }
        out.push_back({w > 0 ? wu / w : start, w});
        i = j;
    }
    return AtomicMeasure::from_atoms(std::move(out), m.normalization);
}

BinnedMeasure bin_measure(const AtomicMeasure& m, double lo, double hi, int bins) {
    if (!(hi > lo) || bins < 1) throw std::invalid_argument("bin_measure: bad range");
    BinnedMeasure b;
    b.lo = lo;
    b.hi = hi;
    b.mass.assign(bins, 0.0);
    for (const auto& a : m.atoms) {
        if (std::isinf(a.u) || a.u < lo || a.u > hi) continue;
        int k = static_cast<int>((a.u - lo) / (hi - lo) * bins);
        b.mass[std::clamp(k, 0, bins - 1)] += a.w;
    }
    return b;
}

double total_variation(const BinnedMeasure& a, const BinnedMeasure& b) {
    if (a.mass.size() != b.mass.size()) throw std::invalid_argument("total_variation: bin mismatch");
    double t = 0.0;
    for (std::size_t i = 0; i < a.mass.size(); ++i) t += std::fabs(a.mass[i] - b.mass[i]);
    return 0.5 * t;
}

Extrapolation extrapolate_binned(const std::vector<std::pair<double, AtomicMeasure>>& family, double delta_hat,
                                 int bins) {
    if (family.size() < 2) throw std::invalid_argument("extrapolate: need at least two values of s");
    for (const auto& [s, m] : family)
        if (!(s > delta_hat)) throw std::invalid_argument("extrapolate: s must exceed delta_hat");
    double lo = INFINITY, hi = -INFINITY;
    for (const auto& [s, m] : family) {
        auto [a, b] = m.hull();
        lo = std::min(lo, a);
        hi = std::max(hi, b);
    }
    if (!(hi > lo)) {
        lo -= 0.5;
        hi += 0.5;
    }
    std::vector<BinnedMeasure> binned;
    std::vector<double> xs;
    for (const auto& [s, m] : family) {
        binned.push_back(bin_measure(m, lo, hi, bins));
        xs.push_back(s - delta_hat);
    }
    const std::size_t n = xs.size();
    const double mx = std::accumulate(xs.begin(), xs.end(), 0.0) / n;
    double sxx = 0.0;
    for (double x : xs) sxx += (x - mx) * (x - mx);

    // order of the family by s, for the monotonicity diagnostic
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return xs[a] < xs[b]; });

    Extrapolation out;
    out.binned.lo = lo;
    out.binned.hi = hi;
    out.binned.mass.assign(bins, 0.0);
    out.residuals.assign(bins, 0.0);
    double total = 0.0;
    for (const auto& b : binned) total = std::max(total, std::accumulate(b.mass.begin(), b.mass.end(), 0.0));
    std::vector<Atom> atoms;
    for (int k = 0; k < bins; ++k) {
        double my = 0.0;
        for (std::size_t i = 0; i < n; ++i) my += binned[i].mass[k];
        my /= n;
        double sxy = 0.0;
        for (std::size_t i = 0; i < n; ++i) sxy += (xs[i] - mx) * (binned[i].mass[k] - my);
        const double slope = sxx > 0 ? sxy / sxx : 0.0;
        const double at0 = my - slope * mx;
        double rss = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double r = binned[i].mass[k] - (at0 + slope * xs[i]);
            rss += r * r;
        }
        out.residuals[k] = std::sqrt(rss / n);
        if (my > 1e-9 * total) {
            int ups = 0, downs = 0;
            for (std::size_t i = 1; i < n; ++i) {
                const double d = binned[order[i]].mass[k] - binned[order[i - 1]].mass[k];
                if (d > 1e-12 * total) ++ups;
                if (d < -1e-12 * total) ++downs;
            }
            if (ups > 0 && downs > 0) out.warning = true;
        }
        if (at0 < 0.0) {
            if (at0 < -1e-12 * total) out.warning = true;
        }
        const double w = std::max(0.0, at0);
        out.binned.mass[k] = w;
        if (w > 0.0) atoms.push_back({out.binned.center(k), w});
    }
    out.approx.measure = AtomicMeasure::from_atoms(std::move(atoms), family.front().second.normalization);
    out.approx.s = delta_hat;
    out.approx.delta_hat = delta_hat;
    out.approx.projection = "binned-extrapolated";
    return out;
}

Extrapolation extrapolate(const OrbitBall& ball, double delta_hat, const std::vector<double>& s_values,
                          const PattersonOptions& opt, int bins) {
    std::vector<std::pair<double, AtomicMeasure>> family;
    for (double s : s_values) family.emplace_back(s, build_patterson(ball, delta_hat, s, opt).measure);
    Extrapolation e = extrapolate_binned(family, delta_hat, bins);
    e.approx.ball_hash = ball.group_hash;
    e.approx.depth_min = opt.depth_min;
    e.approx.depth_max = std::min(opt.depth_max, ball.radius);
    return e;
}

double omega0(const AtomicMeasure& m, double delta) {
    double t = 0.0;
    for (const auto& a : m.atoms) {
        if (std::isinf(a.u)) throw std::invalid_argument("omega0: atom at infinity");
        t += a.w * std::pow(a.u * a.u + 1.0, delta);
    }
    return t;
}

double ps_mass(const AtomicMeasure& m, double delta, double x0) {
    if (std::isinf(x0)) return omega0(m, delta);
    double t = 0.0;
    for (const auto& a : m.atoms)
        if (!std::isinf(a.u) && a.u >= -x0 && a.u < x0) t += a.w * std::pow(a.u * a.u + 1.0, delta);
    return t;
}

double kappa(const AtomicMeasure& m, double delta, double x0) {
    if (!(delta > 0.5 && delta < 1.0)) throw std::domain_error("kappa: delta must lie in (1/2, 1)");
    return horocycle_constant(delta) * ps_mass(m, delta, x0);
}

void export_measure(const std::string& path, const PattersonApprox& approx, const nlohmann::json& meta) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("export_measure: cannot open " + path);
    nlohmann::json head = {{"format", "horolab-measure"},
                           {"version", 1},
                           {"group_hash", approx.ball_hash},
                           {"s", approx.s},
                           {"delta_hat", approx.delta_hat},
                           {"mode", to_string(approx.measure.normalization)},
                           {"projection", approx.projection},
                           {"depth_min", approx.depth_min},
                           {"depth_max", std::isinf(approx.depth_max) ? nlohmann::json(nullptr) : nlohmann::json(approx.depth_max)},
                           {"count", approx.measure.atoms.size()}};
    if (!meta.is_null()) head["meta"] = meta;
    os << head.dump() << '\n';
    for (const auto& a : approx.measure.atoms) os << (std::isinf(a.u) ? "inf" : fmt_double(a.u)) << ' ' << fmt_double(a.w) << '\n';
    if (!os) throw std::runtime_error("export_measure: write failed");
}

PattersonApprox import_measure(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("import_measure: cannot open " + path);
    std::string line;
    std::getline(is, line);
    const auto head = nlohmann::json::parse(line);
    if (head.at("format") != "horolab-measure") throw std::runtime_error("import_measure: not a measure file");
    PattersonApprox out;
    out.ball_hash = head.at("group_hash").get<std::string>();
    out.s = head.at("s").get<double>();
    out.delta_hat = head.at("delta_hat").get<double>();
    out.projection = head.at("projection").get<std::string>();
    out.depth_min = head.at("depth_min").get<double>();
    out.depth_max = head.at("depth_max").is_null() ? INFINITY : head.at("depth_max").get<double>();
    std::vector<Atom> atoms;
    while (std::getline(is, line)) {
        std::istringstream ls(line);
        std::string u, w;
        ls >> u >> w;
        atoms.push_back({u == "inf" ? INFINITY : std::stod(u), std::stod(w)});
    }
    if (atoms.size() != head.at("count").get<std::size_t>()) throw std::runtime_error("import_measure: truncated");
    out.measure = AtomicMeasure::from_atoms(std::move(atoms), normalization_from_string(head.at("mode")));
    return out;
}

}  // namespace horolab
