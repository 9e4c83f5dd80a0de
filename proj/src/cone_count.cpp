#include "horolab/cone_count.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <deque>
#include <exception>
#include <fstream>
#include <limits>
#include <numeric>
#include <tuple>

#include "horolab/io.hpp"

namespace horolab {

NormSpec NormSpec::weighted(const Vec3& w) {
    for (double x : w)
        if (!(x > 0.0) || !std::isfinite(x)) throw std::invalid_argument("norm: weights must be positive");
    return {NormKind::Weighted, w};
}

double NormSpec::operator()(const Vec3& v) const {
    switch (kind) {
        case NormKind::Euclidean:
            return std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]);
        case NormKind::Sup:
            return std::max({std::fabs(v[0]), std::fabs(v[1]), std::fabs(v[2])});
        case NormKind::Weighted:
            return std::sqrt(weights[0] * v[0] * v[0] + weights[1] * v[1] * v[1] + weights[2] * v[2] * v[2]);
    }
    return 0.0;
}

double NormSpec::euclidean_bound() const {
    switch (kind) {
        case NormKind::Euclidean:
            return 1.0;
        case NormKind::Sup:
            return std::sqrt(3.0);
        case NormKind::Weighted:
            return 1.0 / std::sqrt(std::min({weights[0], weights[1], weights[2]}));
    }
    return 1.0;
}

nlohmann::json NormSpec::to_json() const {
    switch (kind) {
        case NormKind::Euclidean:
            return "euclidean";
        case NormKind::Sup:
            return "sup";
        case NormKind::Weighted:
            return {{"weights", {weights[0], weights[1], weights[2]}}};
    }
    return nullptr;
}

NormSpec NormSpec::from_json(const nlohmann::json& j) {
    if (j.is_string()) {
        const auto s = j.get<std::string>();
        if (s == "euclidean") return euclidean();
        if (s == "sup") return sup();
        throw std::invalid_argument("unknown norm '" + s + "'");
    }
    const auto w = j.at("weights");
    if (!w.is_array() || w.size() != 3) throw std::invalid_argument("norm: weights need three entries");
    return weighted({w[0].get<double>(), w[1].get<double>(), w[2].get<double>()});
}

void SectorSpec::validate() const {
    if (intervals.empty()) throw std::invalid_argument("sector: no intervals");
    for (std::size_t i = 0; i < intervals.size(); ++i) {
        const auto [lo, hi] = intervals[i];
        if (!(lo >= 0.0 && hi <= kPi && lo <= hi)) throw std::invalid_argument("sector: interval outside [0, pi]");
        if (i > 0 && !(lo > intervals[i - 1].second))
            throw std::invalid_argument("sector: intervals must be sorted and disjoint");
    }
}

bool SectorSpec::contains(double theta) const {
    for (const auto& [lo, hi] : intervals)
        if (theta >= lo && theta <= hi) return true;
    return false;
}

nlohmann::json SectorSpec::to_json() const {
    auto arr = nlohmann::json::array();
    for (const auto& [lo, hi] : intervals) arr.push_back({lo, hi});
    return {{"intervals", arr}, {"norm", norm.to_json()}};
}

SectorSpec SectorSpec::from_json(const nlohmann::json& j) {
    SectorSpec s;
    s.intervals.clear();
    for (const auto& iv : j.at("intervals")) s.intervals.push_back({iv.at(0).get<double>(), iv.at(1).get<double>()});
    if (j.contains("norm")) s.norm = NormSpec::from_json(j.at("norm"));
    s.validate();
    return s;
}

void check_cone_base(const Vec3& v0) {
    if (!(v0[0] > 0.0) || v0[1] != 0.0 || v0[2] != v0[0])
        throw std::invalid_argument("cone base must be a positive multiple of (1, 0, 1)");
}

Vec3 cone_point(double y, double theta, const Vec3& v0) {
    check_cone_base(v0);
    const double s = v0[2] / y;
    return {s * std::cos(2.0 * theta), -s * std::sin(2.0 * theta), s};
}

ConeChart cone_chart(const Vec3& v, const Vec3& v0) {
    check_cone_base(v0);
    const double n2 = v[0] * v[0] + v[1] * v[1] + v[2] * v[2];
    if (!(v[2] > 0.0)) throw std::invalid_argument("cone_chart: vector not on the forward nappe");
    if (std::fabs(quadratic_form(v)) > 1e-6 * n2) throw std::invalid_argument("cone_chart: vector off the cone");
    ConeChart c;
    c.y = v0[2] / v[2];
    c.theta = reduce_angle(0.5 * std::atan2(-v[1], v[0]));
    return c;
}

// g^T diag-form of v0 g: x3 = l (c^2 + d^2), x1 = l (d^2 - c^2), x2 = 2 l c d.
Vec3 orbit_vector(const MoebiusElement& g, const Vec3& v0) {
    const double l = v0[2];
    return {l * (g.d * g.d - g.c * g.c), 2.0 * l * g.c * g.d, l * (g.c * g.c + g.d * g.d)};
}

std::size_t OrbitVectors::count_below(double t) const {
    auto it = std::lower_bound(vectors.begin(), vectors.end(), t,
                               [](const ConeVector& c, double v) { return c.norm < v; });
    return static_cast<std::size_t>(it - vectors.begin());
}

namespace {

using VecKey = std::tuple<long long, long long, long long>;

VecKey vector_key(const Vec3& v, bool integral) {
    if (integral) return {std::llround(v[0]), std::llround(v[1]), std::llround(v[2])};
    const double q = 1e-8 * std::max(1.0, std::fabs(v[2]));
    return {std::llround(v[0] / q), std::llround(v[1] / q), std::llround(v[2] / q)};
}

bool word_less(const std::string& a, const std::string& b) {
    if (a.size() != b.size()) return a.size() < b.size();
    return a < b;
}

// Merge equal vectors, then order by (norm, word).
void dedup_and_sort(OrbitVectors& out) {
    auto& vs = out.vectors;
    std::vector<std::pair<VecKey, std::size_t>> keys(vs.size());
    for (std::size_t i = 0; i < vs.size(); ++i) keys[i] = {vector_key(vs[i].v, out.integral), i};
    std::sort(keys.begin(), keys.end());
    std::vector<ConeVector> uniq;
    out.max_multiplicity = 1;
    for (std::size_t i = 0; i < keys.size();) {
        std::size_t j = i;
        ConeVector best = vs[keys[i].second];
        int mult = 0;
        for (; j < keys.size() && keys[j].first == keys[i].first; ++j) {
            const ConeVector& c = vs[keys[j].second];
            mult += c.multiplicity;
            if (word_less(c.word, best.word)) best = c;
        }
        best.multiplicity = mult;
        out.max_multiplicity = std::max(out.max_multiplicity, mult);
        uniq.push_back(std::move(best));
        i = j;
    }
    std::sort(uniq.begin(), uniq.end(), [](const ConeVector& a, const ConeVector& b) {
        if (a.norm != b.norm) return a.norm < b.norm;
        return a.word < b.word;
    });
    vs = std::move(uniq);
}

OrbitVectors prepare(const GroupPresentation& p, const Vec3& v0, double T, const NormSpec& norm) {
    check_cone_base(v0);
    if (!(T > 0.0)) throw std::invalid_argument("orbit_vectors: T must be positive");
    OrbitVectors out;
    out.T = T;
    out.norm = norm;
    out.v0 = v0;
    out.group_hash = p.hash();
    out.integral = p.integral() && v0[0] == std::round(v0[0]);
    for (int l = 0; l < p.letter_count(); ++l) {
        const Vec3 w = orbit_vector(p.letter(l), v0);
        if (std::fabs(w[0] - v0[0]) + std::fabs(w[1] - v0[1]) + std::fabs(w[2] - v0[2]) <= 1e-12 * v0[2])
            out.stabilizer_letters.push_back(l);
    }
    return out;
}

bool is_stabilizer(const OrbitVectors& o, int l) {
    return std::find(o.stabilizer_letters.begin(), o.stabilizer_letters.end(), l) != o.stabilizer_letters.end();
}

void check_regions(const GroupPresentation& p) {
    if (!p.has_regions()) throw std::invalid_argument("orbit_vectors: group has no ping-pong regions");
    if (!verify_ping_pong(p).ok) throw std::invalid_argument("orbit_vectors: ping-pong certificate failed");
}

double height_floor(const OrbitVectors& o) { return std::sqrt(2.0) * o.v0[2] / (o.norm.euclidean_bound() * o.T); }

// Orbit points of i avoid open horoballs at the fixed points of parabolic
// letters: |d(z, P z)| >= m0, the smallest nontrivial displacement of i.
// A parabolic letter fixing infinity turns that into a ceiling on Im z.
struct Exclusions {
    double ceiling = std::numeric_limits<double>::infinity();
    std::vector<std::pair<double, double>> balls;  // (tangency point, diameter)
};

Exclusions orbit_exclusions(const GroupPresentation& p) {
    Exclusions ex;
    bool half_planes = false;
    double disk_top = 1.0;
    for (const auto& r : p.regions()) {
        if (r.shape == PingPongRegion::Shape::Disk)
            disk_top = std::max(disk_top, r.radius);
        else
            half_planes = true;
    }
    if (!half_planes) ex.ceiling = disk_top;

    double reach = 0.0;
    bool any_parabolic = false;
    for (int l = 0; l < p.letter_count(); ++l) {
        reach = std::max(reach, displacement(p.letter(l)));
        any_parabolic |= std::fabs(p.letter(l).trace_abs() - 2.0) < 1e-12;
    }
    if (!any_parabolic) return ex;
    double m0 = std::numeric_limits<double>::infinity();
    for (const auto& e : enumerate_ball(p, reach * (1.0 + 1e-9)).entries)
        if (!e.word.empty()) m0 = std::min(m0, e.distance);
    const double s = 2.0 * std::sinh(0.5 * m0);
    for (int l = 0; l < p.letter_count(); l += 2) {
        const MoebiusElement& g = p.letter(l);
        if (std::fabs(g.trace_abs() - 2.0) >= 1e-12) continue;
        if (g.c == 0.0) {
            ex.ceiling = std::min(ex.ceiling, std::fabs(g.b / g.d) / s);
        } else {
            ex.balls.emplace_back((g.a - g.d) / (2.0 * g.c), s / std::fabs(g.c));
        }
    }
    return ex;
}

// Largest Im w(z) over z in the region minus the excluded horoballs. Im w is
// |det| / (c^2 D(z)) with D(z) = |z - pole|^2 / Im z, whose level sets are
// horocycles at the pole. D has no interior critical points, so its minimum
// over the region sits at a tangency point of one boundary curve or at a
// corner where two curves cross; every such candidate is tried.
double image_height(const MoebiusElement& w, const PingPongRegion& r, const Exclusions& ex) {
    constexpr double inf = std::numeric_limits<double>::infinity();
    const bool disk = r.shape == PingPongRegion::Shape::Disk;
    const double det = std::fabs(w.a * w.d - w.b * w.c);
    if (w.c == 0.0) {
        const double top = disk ? std::min(r.radius, ex.ceiling) : ex.ceiling;
        return det * top / (w.d * w.d);
    }
    const double pole = -w.d / w.c;

    // Boundary curves: circles (cx, cy, rad); rad < 0 marks a vertical line
    // x = cx, and cy < 0 a horizontal line y = -cy.
    struct Curve {
        double cx, cy, rad;
    };
    std::vector<Curve> curves;
    if (disk)
        curves.push_back({r.center, 0.0, r.radius});
    else
        curves.push_back({r.center, 0.0, -1.0});
    if (std::isfinite(ex.ceiling)) curves.push_back({0.0, -ex.ceiling, 0.0});
    bool pole_at_cusp = false;
    for (const auto& [q, diam] : ex.balls) {
        curves.push_back({q, 0.5 * diam, 0.5 * diam});
        pole_at_cusp |= std::fabs(pole - q) <= 1e-13 * std::max(1.0, std::fabs(q));
    }
    const double lo = disk ? r.center - r.radius : (r.shape == PingPongRegion::Shape::RightHalfPlane ? r.center : -inf);
    const double hi = disk ? r.center + r.radius : (r.shape == PingPongRegion::Shape::RightHalfPlane ? inf : r.center);
    if (pole > lo && pole < hi && !pole_at_cusp) return inf;
    if ((pole == lo || pole == hi) && !pole_at_cusp) return inf;

    auto feasible = [&](double x, double y) {
        if (!(y > 0.0) || !std::isfinite(x)) return false;
        if (disk) {
            if ((x - r.center) * (x - r.center) + y * y > r.radius * r.radius * (1.0 + 1e-9)) return false;
        } else {
            const double slack = 1e-12 * std::max(1.0, std::fabs(r.center));
            if (r.shape == PingPongRegion::Shape::RightHalfPlane ? x < r.center - slack : x > r.center + slack)
                return false;
        }
        if (y > ex.ceiling * (1.0 + 1e-9)) return false;
        for (const auto& [q, diam] : ex.balls) {
            const double rad = 0.5 * diam;
            if ((x - q) * (x - q) + (y - rad) * (y - rad) < rad * rad * (1.0 - 1e-9)) return false;
        }
        return true;
    };
    double best = inf;  // smallest D over feasible candidates
    auto consider = [&](double x, double y) {
        if (feasible(x, y)) best = std::min(best, ((x - pole) * (x - pole) + y * y) / y);
    };

    for (const auto& c : curves) {
        if (c.cy < 0.0) {
            consider(pole, -c.cy);
        } else if (c.rad < 0.0) {
            consider(c.cx, std::fabs(c.cx - pole));
        } else if (c.cy == 0.0) {
            // geodesic circle; touched from outside by the horocycle at the pole
            const double off = pole - c.cx;
            const double diam = (off * off - c.rad * c.rad) / c.rad;
            const double len = std::hypot(off, 0.5 * diam);
            if (diam > 0.0) consider(c.cx + c.rad * off / len, c.rad * 0.5 * diam / len);
        } else {
            // horocycle at q: tangent to the one at the pole from outside
            const double off = pole - c.cx;
            if (std::fabs(off) <= 1e-13 * std::max(1.0, std::fabs(c.cx))) {
                consider(c.cx, 2.0 * c.rad);
            } else {
                const double diam = off * off / (2.0 * c.rad);
                const double dx = off, dy = 0.5 * diam - c.rad;
                const double len = std::hypot(dx, dy);
                consider(c.cx + c.rad * dx / len, c.cy + c.rad * dy / len);
            }
        }
    }
    auto cross = [&](const Curve& u, const Curve& v) {
        const bool uh = u.cy < 0.0, vh = v.cy < 0.0, uv = !uh && u.rad < 0.0, vv = !vh && v.rad < 0.0;
        if ((uh && vh) || (uv && vv)) return;
        if ((uh && vv) || (uv && vh)) {
            const Curve& line = uv ? u : v;
            const Curve& flat = uh ? u : v;
            consider(line.cx, -flat.cy);
            return;
        }
        if (uh || vh || uv || vv) {
            const Curve& circ = (uh || uv) ? v : u;
            const Curve& line = (uh || uv) ? u : v;
            if (line.cy < 0.0) {
                const double h = -line.cy, t = circ.rad * circ.rad - (h - circ.cy) * (h - circ.cy);
                if (t < 0.0) return;
                consider(circ.cx - std::sqrt(t), h);
                consider(circ.cx + std::sqrt(t), h);
            } else {
                const double t = circ.rad * circ.rad - (line.cx - circ.cx) * (line.cx - circ.cx);
                if (t < 0.0) return;
                consider(line.cx, circ.cy + std::sqrt(t));
                consider(line.cx, circ.cy - std::sqrt(t));
            }
            return;
        }
        const double dx = v.cx - u.cx, dy = v.cy - u.cy, dist = std::hypot(dx, dy);
        if (dist == 0.0 || dist > u.rad + v.rad || dist < std::fabs(u.rad - v.rad)) return;
        const double along = (dist * dist + u.rad * u.rad - v.rad * v.rad) / (2.0 * dist);
        const double h = std::sqrt(std::max(0.0, u.rad * u.rad - along * along));
        const double mx = u.cx + along * dx / dist, my = u.cy + along * dy / dist;
        consider(mx - h * dy / dist, my + h * dx / dist);
        consider(mx + h * dy / dist, my - h * dx / dist);
    };
    for (std::size_t i = 0; i < curves.size(); ++i)
        for (std::size_t j = i + 1; j < curves.size(); ++j) cross(curves[i], curves[j]);
    if (!std::isfinite(best)) return inf;
    return det / (w.c * w.c * best);
}

void add_identity(OrbitVectors& o) {
    const double n = o.norm(o.v0);
    if (n < o.T) o.vectors.push_back({"", o.v0, n, 1});
}

// Pruned depth-first walk over reduced words, one subtree per first letter.
// sink(first, letters, v, norm) sees every vector with norm < T.
// Returns false when the budget ran out.
template <class Sink>
bool walk_orbit(const GroupPresentation& p, OrbitVectors& out, std::size_t budget, Sink&& sink) {
    const int L = p.letter_count();
    const double floor = out.height_floor;
    const double T = out.T;
    const Exclusions cap = orbit_exclusions(p);
    std::vector<std::size_t> visited(L, 0);
    std::vector<std::exception_ptr> errors(L);
    std::atomic<std::size_t> total{1};
    std::atomic<bool> over{false};

#pragma omp parallel for schedule(dynamic, 1)
    for (int first = 0; first < L; ++first) try {
        if (is_stabilizer(out, first)) continue;
        struct Frame {
            MoebiusElement g;
            int last, next;
        };
        std::vector<Frame> path;
        std::vector<int> letters;
        auto visit = [&](const MoebiusElement& parent, int l) {
            ++visited[first];
            if (total.fetch_add(1, std::memory_order_relaxed) + 1 > budget) over = true;
            if (image_height(parent, p.regions()[l], cap) <= floor) return;
            const MoebiusElement g = compose(parent, p.letter(l));
            letters.push_back(l);
            const Vec3 v = orbit_vector(g, out.v0);
            const double n = out.norm(v);
            if (n < T) sink(first, letters, v, n);
            path.push_back({g, l, 0});
        };
        visit(MoebiusElement::identity(), first);
        while (!path.empty() && !over.load(std::memory_order_relaxed)) {
            Frame& top = path.back();
            int l = top.next;
            if (l < L && l == GroupPresentation::inverse_letter(top.last)) ++l;
            if (l >= L) {
                path.pop_back();
                letters.pop_back();
                continue;
            }
            top.next = l + 1;
            visit(top.g, l);
        }
    } catch (...) {
        errors[first] = std::current_exception();
        over = true;
    }
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
    for (auto n : visited) out.words_visited += n;
    return !over;
}

}  // namespace

OrbitVectors orbit_vectors(const GroupPresentation& p, const Vec3& v0, double T, const OrbitOptions& opt) {
    OrbitVectors out = prepare(p, v0, T, opt.norm);
    check_regions(p);
    out.height_floor = height_floor(out);
    add_identity(out);
    std::vector<std::vector<ConeVector>> parts(p.letter_count());
    const bool done = walk_orbit(p, out, opt.budget, [&](int first, const std::vector<int>& letters, const Vec3& v,
                                                         double n) {
        parts[first].push_back({p.format_word(letters), v, n, 1});
    });
    for (const auto& part : parts) out.vectors.insert(out.vectors.end(), part.begin(), part.end());
    dedup_and_sort(out);
    if (!done) throw OrbitBudgetExceeded("orbit_vectors: budget exceeded", std::move(out));
    return out;
}

namespace serial {

OrbitVectors orbit_vectors(const GroupPresentation& p, const Vec3& v0, double T, const OrbitOptions& opt) {
    OrbitVectors out = prepare(p, v0, T, opt.norm);
    check_regions(p);
    out.height_floor = height_floor(out);
    add_identity(out);
    const Exclusions cap = orbit_exclusions(p);
    struct Node {
        std::vector<int> letters;
        MoebiusElement parent;
    };
    std::deque<Node> queue;
    for (int l = 0; l < p.letter_count(); ++l)
        if (!is_stabilizer(out, l)) queue.push_back({{l}, MoebiusElement::identity()});
    while (!queue.empty()) {
        Node n = std::move(queue.front());
        queue.pop_front();
        if (++out.words_visited + 1 > opt.budget) {
            dedup_and_sort(out);
            throw OrbitBudgetExceeded("orbit_vectors: budget exceeded", std::move(out));
        }
        if (image_height(n.parent, p.regions()[n.letters.back()], cap) <= out.height_floor) continue;
        const MoebiusElement g = compose(n.parent, p.letter(n.letters.back()));
        const Vec3 v = orbit_vector(g, v0);
        const double nv = out.norm(v);
        if (nv < T) out.vectors.push_back({p.format_word(n.letters), v, nv, 1});
        for (int l = 0; l < p.letter_count(); ++l) {
            if (l == GroupPresentation::inverse_letter(n.letters.back())) continue;
            auto w = n.letters;
            w.push_back(l);
            queue.push_back({std::move(w), g});
        }
    }
    dedup_and_sort(out);
    return out;
}

}  // namespace serial

OrbitVectors exhaustive_orbit_vectors(const GroupPresentation& p, const Vec3& v0, double T, int max_len,
                                      const NormSpec& norm) {
    OrbitVectors out = prepare(p, v0, T, norm);
    add_identity(out);
    ++out.words_visited;
    struct Node {
        std::vector<int> letters;
        MoebiusElement g;
    };
    std::vector<Node> level;
    for (int l = 0; l < p.letter_count(); ++l) level.push_back({{l}, p.letter(l)});
    for (int len = 1; len <= max_len && !level.empty(); ++len) {
        std::vector<Node> next;
        for (auto& n : level) {
            ++out.words_visited;
            const Vec3 v = orbit_vector(n.g, v0);
            const double nv = norm(v);
            if (nv < T) out.vectors.push_back({p.format_word(n.letters), v, nv, 1});
            if (len == max_len) continue;
            for (int l = 0; l < p.letter_count(); ++l) {
                if (l == GroupPresentation::inverse_letter(n.letters.back())) continue;
                auto w = n.letters;
                w.push_back(l);
                next.push_back({std::move(w), compose(n.g, p.letter(l))});
            }
        }
        level = std::move(next);
    }
    dedup_and_sort(out);
    return out;
}

std::vector<ConeVector> sector_filter(const std::vector<ConeVector>& vs, const SectorSpec& sector, const Vec3& v0) {
    sector.validate();
    std::vector<ConeVector> out;
    for (const auto& c : vs)
        if (sector.contains(cone_chart(c.v, v0).theta)) out.push_back(c);
    return out;
}

namespace {

long long mod_pos(long long a, long long d) {
    const long long r = a % d;
    return r < 0 ? r + d : r;
}

void write_comment(std::ostream& os, const std::string& comment) {
    std::size_t start = 0;
    while (start < comment.size()) {
        const auto end = comment.find('\n', start);
        os << "# " << comment.substr(start, end == std::string::npos ? std::string::npos : end - start) << '\n';
        if (end == std::string::npos) break;
        start = end + 1;
    }
}

}  // namespace

CountSeries count_series(const OrbitVectors& orbit, const SectorSpec& sector, const std::vector<double>& Ts,
                         long long d) {
    sector.validate();
    if (!(sector.norm == orbit.norm)) throw std::invalid_argument("count_series: sector norm differs from orbit norm");
    if (Ts.empty()) throw std::invalid_argument("count_series: empty T-grid");
    for (std::size_t i = 0; i < Ts.size(); ++i) {
        if (i > 0 && !(Ts[i] > Ts[i - 1])) throw std::invalid_argument("count_series: T-grid must increase");
        if (Ts[i] > orbit.T) throw std::invalid_argument("count_series: T-grid exceeds the enumerated bound");
    }
    if (d < 1) throw std::invalid_argument("count_series: d must be positive");
    if (d > 1 && !orbit.integral) throw std::invalid_argument("count_series: congruence levels need an integral orbit");
    CountSeries s;
    s.T = Ts;
    s.group_hash = orbit.group_hash;
    s.sector = sector;
    s.d = d;
    std::vector<double> norms;
    const long long b0 = std::llround(orbit.v0[0]), b1 = std::llround(orbit.v0[1]), b2 = std::llround(orbit.v0[2]);
    for (const auto& c : orbit.vectors) {
        if (!sector.contains(cone_chart(c.v, orbit.v0).theta)) continue;
        if (d > 1) {
            const long long x1 = std::llround(c.v[0]), x2 = std::llround(c.v[1]), x3 = std::llround(c.v[2]);
            if (mod_pos(x1 - b0, d) || mod_pos(x2 - b1, d) || mod_pos(x3 - b2, d)) continue;
        }
        norms.push_back(c.norm);
    }
    for (double t : Ts)
        s.N.push_back(static_cast<long long>(std::lower_bound(norms.begin(), norms.end(), t) - norms.begin()));
    return s;
}

CountSeries count_series(const GroupPresentation& p, const Vec3& v0, const SectorSpec& sector,
                         const std::vector<double>& Ts, long long d, std::size_t budget) {
    if (Ts.empty()) throw std::invalid_argument("count_series: empty T-grid");
    OrbitOptions opt;
    opt.norm = sector.norm;
    opt.budget = budget;
    const auto orbit = orbit_vectors(p, v0, *std::max_element(Ts.begin(), Ts.end()), opt);
    return count_series(orbit, sector, Ts, d);
}

std::vector<CountSeries> streaming_count_series(const GroupPresentation& p, const Vec3& v0, const SectorSpec& sector,
                                                const std::vector<double>& Ts, const std::vector<long long>& levels,
                                                std::size_t budget, double check_T) {
    sector.validate();
    if (Ts.empty() || levels.empty()) throw std::invalid_argument("streaming_count_series: empty T-grid or levels");
    for (std::size_t i = 1; i < Ts.size(); ++i)
        if (!(Ts[i] > Ts[i - 1])) throw std::invalid_argument("streaming_count_series: T-grid must increase");
    OrbitOptions opt;
    opt.norm = sector.norm;
    const auto probe = orbit_vectors(p, v0, std::min(Ts.back(), check_T), opt);
    if (probe.max_multiplicity > 1)
        throw std::runtime_error("streaming_count_series: distinct words reach the same vector");

    OrbitVectors out = prepare(p, v0, Ts.back(), sector.norm);
    for (long long d : levels) {
        if (d < 1) throw std::invalid_argument("streaming_count_series: d must be positive");
        if (d > 1 && !out.integral)
            throw std::invalid_argument("streaming_count_series: congruence levels need an integral orbit");
    }
    check_regions(p);
    out.height_floor = height_floor(out);
    const std::size_t nT = Ts.size(), nd = levels.size();
    // hist[first][level][bin]: bin = #{T_k <= norm}
    std::vector<std::vector<long long>> hist(p.letter_count() + 1, std::vector<long long>(nd * (nT + 1), 0));
    const long long b0 = std::llround(v0[0]), b1 = std::llround(v0[1]), b2 = std::llround(v0[2]);
    auto tally = [&](std::vector<long long>& h, const Vec3& v, double n) {
        if (!sector.contains(cone_chart(v, v0).theta)) return;
        const std::size_t bin = std::upper_bound(Ts.begin(), Ts.end(), n) - Ts.begin();
        for (std::size_t k = 0; k < nd; ++k) {
            const long long d = levels[k];
            if (d > 1 && (mod_pos(std::llround(v[0]) - b0, d) || mod_pos(std::llround(v[1]) - b1, d) ||
                          mod_pos(std::llround(v[2]) - b2, d)))
                continue;
            ++h[k * (nT + 1) + bin];
        }
    };
    if (out.norm(v0) < out.T) tally(hist.back(), v0, out.norm(v0));
    const bool done = walk_orbit(p, out, budget, [&](int first, const std::vector<int>&, const Vec3& v, double n) {
        tally(hist[first], v, n);
    });
    if (!done) throw OrbitBudgetExceeded("streaming_count_series: budget exceeded", std::move(out));

    std::vector<CountSeries> res(nd);
    for (std::size_t k = 0; k < nd; ++k) {
        res[k].T = Ts;
        res[k].group_hash = out.group_hash;
        res[k].sector = sector;
        res[k].d = levels[k];
        long long run = 0;
        for (std::size_t b = 0; b < nT; ++b) {
            for (const auto& h : hist) run += h[k * (nT + 1) + b];
            res[k].N.push_back(run);
        }
    }
    return res;
}

void CountSeries::write_csv(const std::string& path, const std::string& comment) const {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot write " + path);
    os << "# horolab count series\n# group_hash=" << group_hash << "\n# d=" << d
       << "\n# sector=" << sector.to_json().dump() << '\n';
    write_comment(os, comment);
    os << "T,N\n";
    for (std::size_t i = 0; i < T.size(); ++i) os << fmt_double(T[i]) << ',' << N[i] << '\n';
    if (!os) throw std::runtime_error("write failed for " + path);
}

CountFit fit_count(const CountSeries& s) {
    const std::size_t n = s.T.size();
    if (n < 6) throw std::invalid_argument("fit_count: need at least six samples");
    if (!(s.T.back() >= 10.0 * s.T.front())) throw std::invalid_argument("fit_count: T-grid must span a decade");
    std::vector<double> lx, ly;
    for (std::size_t k = n / 2; k < n; ++k)
        if (s.N[k] > 0) {
            lx.push_back(std::log(s.T[k]));
            ly.push_back(std::log(static_cast<double>(s.N[k])));
        }
    if (lx.size() < 3) throw std::invalid_argument("fit_count: too few nonzero counts");
    const double m = static_cast<double>(lx.size());
    const double mx = std::accumulate(lx.begin(), lx.end(), 0.0) / m;
    const double my = std::accumulate(ly.begin(), ly.end(), 0.0) / m;
    double sxx = 0.0, sxy = 0.0;
    for (std::size_t i = 0; i < lx.size(); ++i) {
        sxx += (lx[i] - mx) * (lx[i] - mx);
        sxy += (lx[i] - mx) * (ly[i] - my);
    }
    CountFit f;
    f.used = static_cast<int>(lx.size());
    f.delta_fit = sxy / sxx;
    const double intercept = my - f.delta_fit * mx;
    f.constant_fit = std::exp(intercept);
    double rss = 0.0;
    for (std::size_t i = 0; i < lx.size(); ++i) {
        const double e = ly[i] - intercept - f.delta_fit * lx[i];
        rss += e * e;
    }
    f.rms = std::sqrt(rss / m);
    const double s2 = lx.size() > 2 ? rss / (m - 2.0) : 0.0;
    f.delta_stderr = std::sqrt(s2 / sxx);
    f.log_constant_stderr = std::sqrt(s2 * (1.0 / m + mx * mx / sxx));
    return f;
}

double xi_angle(double u) {
    if (std::isinf(u)) return 0.0;
    return 0.5 * kPi - std::atan(u);
}

double Xi(const AtomicMeasure& m, double delta, double x0, const SectorSpec& sector, const Vec3& v0) {
    sector.validate();
    check_cone_base(v0);
    const double kap = kappa(m, delta, x0);
    double sum = 0.0;
    for (const auto& a : m.atoms) {
        const double th = xi_angle(a.u);
        if (!sector.contains(th)) continue;
        sum += a.w * std::pow(sector.norm(cone_point(1.0, th, v0)), -delta);
    }
    return kap / delta * sum;
}

namespace {

using u128 = unsigned __int128;

std::uint64_t mulmod(std::uint64_t a, std::uint64_t b, std::uint64_t m) {
    return static_cast<std::uint64_t>(static_cast<u128>(a) * b % m);
}

std::uint64_t powmod(std::uint64_t a, std::uint64_t e, std::uint64_t m) {
    std::uint64_t r = 1 % m;
    a %= m;
    while (e) {
        if (e & 1) r = mulmod(r, a, m);
        a = mulmod(a, a, m);
        e >>= 1;
    }
    return r;
}

// Brent's variant; 0 when the budget runs out.
std::uint64_t pollard_rho(std::uint64_t n, int& budget) {
    if (n % 2 == 0) return 2;
    for (std::uint64_t c = 1; budget > 0; ++c) {
        std::uint64_t y = 2, x = 2, g = 1, q = 1, ys = 2;
        const std::uint64_t m = 128;
        std::uint64_t r = 1;
        auto f = [&](std::uint64_t v) { return (mulmod(v, v, n) + c) % n; };
        do {
            x = y;
            for (std::uint64_t i = 0; i < r; ++i) y = f(y);
            std::uint64_t k = 0;
            do {
                ys = y;
                for (std::uint64_t i = 0; i < std::min(m, r - k); ++i) {
                    y = f(y);
                    q = mulmod(q, x > y ? x - y : y - x, n);
                }
                budget -= static_cast<int>(std::min(m, r - k));
                g = std::gcd(q, n);
                k += m;
            } while (k < r && g == 1 && budget > 0);
            r *= 2;
        } while (g == 1 && budget > 0);
        if (g == n) {
            do {
                ys = f(ys);
                g = std::gcd(x > ys ? x - ys : ys - x, n);
                --budget;
            } while (g == 1 && budget > 0);
        }
        if (g != 1 && g != n) return g;
    }
    return 0;
}

bool count_factors(std::uint64_t n, int& count, int& budget) {
    if (n == 1) return true;
    if (is_prime_u64(n)) {
        ++count;
        return true;
    }
    const std::uint64_t f = pollard_rho(n, budget);
    if (f == 0) return false;
    return count_factors(f, count, budget) && count_factors(n / f, count, budget);
}

}  // namespace

bool is_prime_u64(std::uint64_t n) {
    if (n < 2) return false;
    for (std::uint64_t p : {2ULL, 3ULL, 5ULL, 7ULL, 11ULL, 13ULL, 17ULL, 19ULL, 23ULL, 29ULL, 31ULL, 37ULL}) {
        if (n % p == 0) return n == p;
    }
    std::uint64_t d = n - 1;
    int s = 0;
    while ((d & 1) == 0) {
        d >>= 1;
        ++s;
    }
    // These bases are deterministic below 2^64.
    for (std::uint64_t a : {2ULL, 3ULL, 5ULL, 7ULL, 11ULL, 13ULL, 17ULL, 19ULL, 23ULL, 29ULL, 31ULL, 37ULL}) {
        std::uint64_t x = powmod(a, d, n);
        if (x == 1 || x == n - 1) continue;
        bool composite = true;
        for (int r = 1; r < s; ++r) {
            x = mulmod(x, x, n);
            if (x == n - 1) {
                composite = false;
                break;
            }
        }
        if (composite) return false;
    }
    return true;
}

std::optional<int> prime_factor_count(std::uint64_t n, int rho_budget) {
    if (n == 0) return std::nullopt;
    int count = 0;
    for (std::uint64_t p = 2; p < 1000 && p * p <= n; p += (p == 2 ? 1 : 2))
        while (n % p == 0) {
            n /= p;
            ++count;
        }
    int budget = rho_budget;
    if (!count_factors(n, count, budget)) return std::nullopt;
    return count;
}

Census almost_prime_census(const std::vector<ConeVector>& vs, int Rmax) {
    if (Rmax < 1) throw std::invalid_argument("census: Rmax must be positive");
    Census c;
    c.Rmax = Rmax;
    c.at_most.assign(Rmax + 1, 0);
    const long n = static_cast<long>(vs.size());
    std::vector<int> omega(n, -1);
#pragma omp parallel for schedule(dynamic, 256)
    for (long i = 0; i < n; ++i) {
        const double x3 = vs[i].v[2];
        if (x3 != std::round(x3) || std::fabs(x3) >= 1.8e19) continue;
        const auto k = prime_factor_count(static_cast<std::uint64_t>(std::llround(std::fabs(x3))));
        if (k) omega[i] = *k;
    }
    for (long i = 0; i < n; ++i) {
        const double x3 = vs[i].v[2];
        if (x3 != std::round(x3)) throw std::invalid_argument("census: non-integral vector");
        if (omega[i] < 0) {
            ++c.excluded;
            c.excluded_words.push_back(vs[i].word);
            continue;
        }
        ++c.total;
        for (int r = std::max(omega[i], 0); r <= Rmax; ++r) ++c.at_most[r];
    }
    return c;
}

void Census::write_csv(const std::string& path, const std::string& comment) const {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot write " + path);
    os << "# horolab almost-prime census\n# total=" << total << "\n# excluded=" << excluded << '\n';
    write_comment(os, comment);
    os << "r,count\n";
    for (int r = 1; r <= Rmax; ++r) os << r << ',' << at_most[r] << '\n';
    if (!os) throw std::runtime_error("write failed for " + path);
}

void write_orbit_dump(const std::string& path, const OrbitVectors& orbit, const std::string& comment) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot write " + path);
    os << "# horolab orbit dump\n# group_hash=" << orbit.group_hash << "\n# T=" << fmt_double(orbit.T)
       << "\n# norm=" << orbit.norm.to_json().dump() << "\n# v0=" << fmt_double(orbit.v0[0]) << ','
       << fmt_double(orbit.v0[1]) << ',' << fmt_double(orbit.v0[2]) << '\n';
    write_comment(os, comment);
    for (const auto& c : orbit.vectors) {
        const auto ch = cone_chart(c.v, orbit.v0);
        nlohmann::json rec = nlohmann::json::array({c.word, fmt_double(c.v[0]), fmt_double(c.v[1]),
                                                    fmt_double(c.v[2]), fmt_double(c.norm), fmt_double(ch.theta),
                                                    fmt_double(ch.y)});
        os << rec.dump() << '\n';
    }
    if (!os) throw std::runtime_error("write failed for " + path);
}

}  // namespace horolab
