#include "horolab/group.hpp"

#include <algorithm>
#include <atomic>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <deque>
#include <exception>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>
#include <unordered_set>

#include "horolab/io.hpp"
#include "json.hpp"

namespace horolab {

const char* to_string(GroupKind k) {
    return k == GroupKind::SchottkyHyperbolic ? "schottky-hyperbolic" : "parabolic-pair";
}

const char* to_string(DeltaMethod m) {
    return m == DeltaMethod::GrowthFit ? "growth-fit" : "poincare-bisect";
}

namespace {

bool is_integer(double v) { return std::fabs(v - std::nearbyint(v)) <= 1e-9 * std::max(1.0, std::fabs(v)); }

bool is_translation(const MoebiusElement& g) {
    return g.c == 0.0 && std::fabs(g.a - 1.0) < 1e-14 && std::fabs(g.d - 1.0) < 1e-14;
}

}  // namespace

GroupPresentation::GroupPresentation(GroupKind kind, std::vector<Generator> gens)
    : kind_(kind), gens_(std::move(gens)) {
    if (gens_.empty()) throw std::invalid_argument("GroupPresentation: no generators");
    for (std::size_t i = 0; i < gens_.size(); ++i) {
        const char l = gens_[i].label;
        if (!std::islower(static_cast<unsigned char>(l)))
            throw std::invalid_argument("GroupPresentation: labels must be lowercase letters");
        for (std::size_t j = 0; j < i; ++j)
            if (gens_[j].label == l) throw std::invalid_argument("GroupPresentation: duplicate label");
        if (gens_[i].element.approx_equal(MoebiusElement::identity(), 1e-12))
            throw std::invalid_argument("GroupPresentation: identity generator");
        letters_.push_back(gens_[i].element);
        letters_.push_back(invert(gens_[i].element));
    }
    integral_ = std::all_of(gens_.begin(), gens_.end(), [](const Generator& g) {
        const auto& e = g.element;
        return is_integer(e.a) && is_integer(e.b) && is_integer(e.c) && is_integer(e.d);
    });
}

char GroupPresentation::letter_label(int i) const {
    const char l = gens_[i / 2].label;
    return (i % 2 == 0) ? l : static_cast<char>(std::toupper(static_cast<unsigned char>(l)));
}

int GroupPresentation::letter_index(char label) const {
    for (int i = 0; i < letter_count(); ++i)
        if (letter_label(i) == label) return i;
    throw std::invalid_argument(std::string("unknown letter '") + label + "'");
}

void GroupPresentation::set_regions(std::vector<PingPongRegion> r) {
    if (static_cast<int>(r.size()) != letter_count())
        throw std::invalid_argument("set_regions: need one region per letter");
    regions_ = std::move(r);
}

void GroupPresentation::derive_regions() {
    std::vector<PingPongRegion> r;
    for (int i = 0; i < letter_count(); ++i) {
        const auto& g = letters_[i];
        PingPongRegion reg;
        if (g.c != 0.0) {
            reg.shape = PingPongRegion::Shape::Disk;
            reg.center = g.a / g.c;
            reg.radius = 1.0 / std::fabs(g.c);
        } else if (is_translation(g)) {
            reg.shape = g.b > 0 ? PingPongRegion::Shape::RightHalfPlane : PingPongRegion::Shape::LeftHalfPlane;
            reg.center = 0.5 * g.b;
        } else {
            throw std::invalid_argument("derive_regions: generator fixes infinity without being a translation");
        }
        r.push_back(reg);
    }
    regions_ = std::move(r);
}

std::vector<int> GroupPresentation::parse_word(const std::string& word) const {
    std::vector<int> out;
    for (std::size_t i = 0; i < word.size();) {
        const int l = letter_index(word[i++]);
        std::size_t j = i;
        while (j < word.size() && std::isdigit(static_cast<unsigned char>(word[j]))) ++j;
        const long n = j > i ? std::stol(word.substr(i, j - i)) : 1;
        if (n < 1) throw std::invalid_argument("parse_word: bad exponent");
        out.insert(out.end(), static_cast<std::size_t>(n), l);
        i = j;
    }
    return out;
}

std::string GroupPresentation::format_word(const std::vector<int>& letters) const {
    std::string w;
    for (std::size_t i = 0; i < letters.size();) {
        std::size_t j = i;
        while (j < letters.size() && letters[j] == letters[i]) ++j;
        w += letter_label(letters[i]);
        if (j - i > 1) w += std::to_string(j - i);
        i = j;
    }
    return w;
}

std::string GroupPresentation::inverse_word(const std::string& word) const {
    auto letters = parse_word(word);
    std::reverse(letters.begin(), letters.end());
    for (int& l : letters) l = inverse_letter(l);
    return format_word(letters);
}

MoebiusElement GroupPresentation::word_element(const std::string& word) const {
    MoebiusElement g = MoebiusElement::identity();
    for (int l : parse_word(word)) g = compose(g, letters_[l]);
    return g;
}

std::string GroupPresentation::describe() const {
    std::ostringstream os;
    os << to_string(kind_);
    for (const auto& g : gens_)
        os << '|' << g.label << ':' << fmt_double(g.element.a) << ',' << fmt_double(g.element.b) << ','
           << fmt_double(g.element.c) << ',' << fmt_double(g.element.d);
    return os.str();
}

std::string GroupPresentation::hash() const { return hash_string(describe()); }

MoebiusElement circle_pairing(double p, double q, double r) {
    return MoebiusElement::from_entries(q / r, (-p * q - r * r) / r, 1.0 / r, -p / r);
}

GroupPresentation parabolic_pair(double c) {
    GroupPresentation p(GroupKind::ParabolicPair, {{'a', MoebiusElement::translation(c)},
                                                   {'b', MoebiusElement::from_entries(1, 0, c, 1)}});
    p.derive_regions();
    return p;
}

GroupPresentation schottky_symmetric(double a, double b) {
    if (!(0.0 < a && a < b && b < 1.0)) throw std::invalid_argument("schottky_symmetric: need 0 < a < b < 1");
    const double m = 0.5 * (a + b), r = 0.5 * (b - a);
    const MoebiusElement g1 = circle_pairing(-m, m, r);
    const MoebiusElement s{0.0, -1.0, 1.0, 0.0};
    const MoebiusElement g2 = compose(compose(s, g1), invert(s));
    GroupPresentation p(GroupKind::SchottkyHyperbolic, {{'a', g1}, {'b', g2}});
    p.derive_regions();
    return p;
}

GroupPresentation cyclic_hyperbolic(double length) {
    // Pairing C(-p, r) -> C(p, r) has trace 2p/r; pick p/r = cosh(length/2).
    const double r = 1.0, p = std::cosh(0.5 * length);
    GroupPresentation g(GroupKind::SchottkyHyperbolic, {{'a', circle_pairing(-p, p, r)}});
    g.derive_regions();
    return g;
}

namespace {

double region_gap(const PingPongRegion& x, const PingPongRegion& y) {
    using S = PingPongRegion::Shape;
    if (x.shape == S::Disk && y.shape == S::Disk) return std::fabs(x.center - y.center) - x.radius - y.radius;
    if (x.shape != S::Disk && y.shape == S::Disk) return region_gap(y, x);
    if (x.shape == S::Disk) {
        if (y.shape == S::RightHalfPlane) return y.center - (x.center + x.radius);
        return (x.center - x.radius) - y.center;
    }
    if (x.shape == y.shape) return -INFINITY;
    const double right = x.shape == S::RightHalfPlane ? x.center : y.center;
    const double left = x.shape == S::LeftHalfPlane ? x.center : y.center;
    return right - left;
}

}  // namespace

PingPongCertificate verify_ping_pong(const GroupPresentation& p) {
    if (!p.has_regions()) throw std::invalid_argument("verify_ping_pong: missing circle data");
    PingPongCertificate cert;
    cert.min_gap = INFINITY;
    const auto& reg = p.regions();
    for (int i = 0; i < p.letter_count(); ++i) {
        for (int j = i + 1; j < p.letter_count(); ++j) {
            // A parabolic generator's two regions touch at its fixed point.
            if (j == GroupPresentation::inverse_letter(i) && std::fabs(p.letter(i).trace_abs() - 2.0) < 1e-9)
                continue;
            const double gap = region_gap(reg[i], reg[j]);
            if (gap < cert.min_gap) {
                cert.min_gap = gap;
                cert.letter_i = i;
                cert.letter_j = j;
            }
        }
    }
    cert.ok = cert.min_gap > 1e-12;
    return cert;
}

std::size_t OrbitBall::count_within(double r) const {
    auto it = std::upper_bound(entries.begin(), entries.end(), r,
                               [](double v, const BallEntry& e) { return v < e.distance; });
    return static_cast<std::size_t>(it - entries.begin());
}

double default_slack(const GroupPresentation& p) {
    double m = 0.0;
    for (int i = 0; i < p.letter_count(); ++i) m = std::max(m, displacement(p.letter(i)));
    return 2.0 * m;
}

namespace {

void sort_entries(std::vector<BallEntry>& v) {
    std::sort(v.begin(), v.end(), [](const BallEntry& x, const BallEntry& y) {
        if (x.distance != y.distance) return x.distance < y.distance;
        return x.word < y.word;
    });
}

OrbitBall make_ball(const GroupPresentation& p, double R, double slack) {
    OrbitBall b;
    b.radius = R;
    b.slack = slack;
    b.group_hash = p.hash();
    b.entries.push_back({"", MoebiusElement::identity(), 0.0});
    return b;
}

double resolve_slack(const GroupPresentation& p, const EnumerateOptions& opt) {
    if (!opt.trusted) {
        if (!p.has_regions()) throw std::invalid_argument("enumerate_ball: group is neither certified nor trusted");
        if (!verify_ping_pong(p).ok) throw std::invalid_argument("enumerate_ball: ping-pong certificate failed");
    }
    return opt.slack < 0 ? default_slack(p) : opt.slack;
}

struct Node {
    std::string word;
    MoebiusElement g;
    int last;
    int run;  // length of the trailing run of `last`
};

// Append letter l to a run-length word whose trailing run is `run` copies of `last`.
std::string extend_word(const GroupPresentation& p, const std::string& word, int last, int run, int l) {
    if (l != last) return word + p.letter_label(l);
    std::string w = word;
    if (run > 1) w.erase(w.find_last_not_of("0123456789") + 1);
    return w + std::to_string(run + 1);
}

std::string run_word(const GroupPresentation& p, const std::vector<std::pair<int, int>>& runs) {
    std::string w;
    for (const auto& [l, n] : runs) {
        w += p.letter_label(l);
        if (n > 1) w += std::to_string(n);
    }
    return w;
}

}  // namespace

OrbitBall enumerate_ball(const GroupPresentation& p, double R, const EnumerateOptions& opt) {
    const double slack = resolve_slack(p, opt);
    OrbitBall ball = make_ball(p, R, slack);
    const int L = p.letter_count();
    std::vector<std::vector<BallEntry>> parts(L);
    std::atomic<std::size_t> found{1};
    std::atomic<bool> over{false};
    std::vector<std::exception_ptr> errors(L);

#pragma omp parallel for schedule(dynamic, 1)
    for (int first = 0; first < L; ++first) try {
        // Backtracking depth-first search; memory is linear in the word length.
        struct Frame {
            MoebiusElement g;
            int last;
            int next;
        };
        auto& out = parts[first];
        std::vector<Frame> path;
        std::vector<std::pair<int, int>> runs;
        auto visit = [&](const MoebiusElement& g, int l) {
            const double dist = displacement(g);
            if (dist > R + slack) return false;
            if (!runs.empty() && runs.back().first == l) ++runs.back().second;
            else runs.push_back({l, 1});
            if (dist <= R) {
                out.push_back({run_word(p, runs), g, dist});
                if (found.fetch_add(1, std::memory_order_relaxed) + 1 > opt.budget) over = true;
            }
            path.push_back({g, l, 0});
            return true;
        };
        visit(p.letter(first), first);
        while (!path.empty() && !over.load(std::memory_order_relaxed)) {
            Frame& top = path.back();
            int l = top.next;
            if (l < L && l == GroupPresentation::inverse_letter(top.last)) ++l;
            if (l >= L) {
                path.pop_back();
                if (--runs.back().second == 0) runs.pop_back();
                continue;
            }
            top.next = l + 1;
            visit(compose(top.g, p.letter(l)), l);
        }
    } catch (...) {
        errors[first] = std::current_exception();
        over = true;
    }
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
    for (auto& part : parts)
        ball.entries.insert(ball.entries.end(), std::make_move_iterator(part.begin()),
                            std::make_move_iterator(part.end()));
    sort_entries(ball.entries);
    if (over) throw BudgetExceeded("enumerate_ball: budget exceeded", std::move(ball));
    return ball;
}

namespace serial {

OrbitBall enumerate_ball(const GroupPresentation& p, double R, const EnumerateOptions& opt) {
    const double slack = resolve_slack(p, opt);
    OrbitBall ball = make_ball(p, R, slack);
    const int L = p.letter_count();
    std::deque<Node> queue;
    for (int l = 0; l < L; ++l) queue.push_back({std::string(1, p.letter_label(l)), p.letter(l), l, 1});
    while (!queue.empty()) {
        Node n = std::move(queue.front());
        queue.pop_front();
        const double dist = displacement(n.g);
        if (dist > R + slack) continue;
        if (dist <= R) {
            ball.entries.push_back({n.word, n.g, dist});
            if (ball.entries.size() > opt.budget) {
                sort_entries(ball.entries);
                throw BudgetExceeded("enumerate_ball: budget exceeded", std::move(ball));
            }
        }
        for (int l = 0; l < L; ++l) {
            if (l == GroupPresentation::inverse_letter(n.last)) continue;
            queue.push_back({extend_word(p, n.word, n.last, n.run, l), compose(n.g, p.letter(l)), l,
                             l == n.last ? n.run + 1 : 1});
        }
    }
    sort_entries(ball.entries);
    return ball;
}

}  // namespace serial

namespace {

struct LineFit {
    double slope = 0, intercept = 0, slope_se = 0;
};

LineFit fit_line(const std::vector<double>& x, const std::vector<double>& y) {
    const std::size_t n = x.size();
    const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
    const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
    double sxx = 0, sxy = 0;
    for (std::size_t i = 0; i < n; ++i) {
        sxx += (x[i] - mx) * (x[i] - mx);
        sxy += (x[i] - mx) * (y[i] - my);
    }
    LineFit f;
    f.slope = sxy / sxx;
    f.intercept = my - f.slope * mx;
    double rss = 0;
    for (std::size_t i = 0; i < n; ++i) {
        const double r = y[i] - f.intercept - f.slope * x[i];
        rss += r * r;
    }
    f.slope_se = n > 2 ? std::sqrt(rss / (n - 2) / sxx) : 0.0;
    return f;
}

LineFit growth_window(const OrbitBall& ball, double lo, double hi) {
    const int n = 41;
    std::vector<double> xs, ys;
    for (int k = 0; k < n; ++k) {
        const double r = lo + (hi - lo) * k / (n - 1);
        xs.push_back(r);
        ys.push_back(std::log(static_cast<double>(ball.count_within(r))));
    }
    return fit_line(xs, ys);
}

// Root of log(B/A) where A, B are Poincare sums over consecutive shells.
double bisect_window(const OrbitBall& ball, double r0, double r1, double r2) {
    auto f = [&](double s) {
        double a = 0, b = 0;
        for (const auto& e : ball.entries) {
            if (e.distance > r0 && e.distance <= r1) a += std::exp(-s * (e.distance - r0));
            else if (e.distance > r1 && e.distance <= r2) b += std::exp(-s * (e.distance - r0));
        }
        return (a > 0 && b > 0) ? std::log(b / a) : -INFINITY;
    };
    double lo = 0.0, hi = 2.0;
    if (f(lo) <= 0) return 0.0;
    for (int it = 0; it < 60; ++it) {
        const double mid = 0.5 * (lo + hi);
        (f(mid) > 0 ? lo : hi) = mid;
    }
    return 0.5 * (lo + hi);
}

}  // namespace

DeltaEstimate estimate_delta(const OrbitBall& ball, DeltaMethod method) {
    if (ball.size() < 100) throw std::invalid_argument("estimate_delta: ball too small (< 100 entries)");
    const double R = ball.radius;
    DeltaEstimate est;
    est.method = method;
    est.radius = R;
    if (method == DeltaMethod::GrowthFit) {
        const LineFit full = growth_window(ball, R / 2, R);
        const LineFit lower = growth_window(ball, R / 2, R - R / 8);
        const LineFit upper = growth_window(ball, R / 2 + R / 8, R);
        const double spread = 0.5 * std::fabs(upper.slope - lower.slope);
        est.delta_hat = full.slope;
        est.stderr_ = std::sqrt(full.slope_se * full.slope_se + spread * spread);
    } else {
        const double main = bisect_window(ball, R / 2, 3 * R / 4, R);
        const double early = bisect_window(ball, 3 * R / 8, 5 * R / 8, 7 * R / 8);
        const double wide = bisect_window(ball, R / 2 - R / 16, 3 * R / 4 - R / 32, R);
        est.delta_hat = main;
        est.stderr_ = std::max(std::fabs(main - early), std::fabs(main - wide));
    }
    est.delta_hat = std::clamp(est.delta_hat, 0.0, 1.0);
    return est;
}

std::array<std::array<long long, 3>, 3> iota_integral(const MoebiusElement& g) {
    const Mat3 m = iota(g);
    std::array<std::array<long long, 3>, 3> r{};
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) {
            if (!is_integer(m[i][j]) || std::fabs(m[i][j]) > 9e15)
                throw std::invalid_argument("iota_integral: representation is not integral");
            r[i][j] = std::llround(m[i][j]);
        }
    return r;
}

namespace {

bool square_free(long long d) {
    for (long long q = 2; q * q <= d; ++q)
        if (d % (q * q) == 0) return false;
    return true;
}

long long mod(long long v, long long d) {
    long long r = v % d;
    return r < 0 ? r + d : r;
}

}  // namespace

long long reduction_index(const GroupPresentation& p, const IVec3& v0, long long d) {
    if (!p.integral()) throw std::invalid_argument("reduction_index: non-integral generators");
    if (d < 1) throw std::invalid_argument("reduction_index: d must be positive");
    if (!square_free(d)) throw std::invalid_argument("reduction_index: d must be square-free");
    if (d == 1) return 1;
    std::vector<std::array<std::array<long long, 3>, 3>> mats;
    for (int i = 0; i < p.letter_count(); ++i) {
        auto m = iota_integral(p.letter(i));
        for (auto& row : m)
            for (auto& e : row) e = mod(e, d);
        mats.push_back(m);
    }
    auto key = [d](const IVec3& v) { return (v[0] * d + v[1]) * d + v[2]; };
    std::unordered_set<long long> seen;
    std::vector<IVec3> frontier{{mod(v0[0], d), mod(v0[1], d), mod(v0[2], d)}};
    seen.insert(key(frontier[0]));
    while (!frontier.empty()) {
        IVec3 v = frontier.back();
        frontier.pop_back();
        for (const auto& m : mats) {
            IVec3 w{};
            for (int j = 0; j < 3; ++j) w[j] = mod(v[0] * m[0][j] + v[1] * m[1][j] + v[2] * m[2][j], d);
            if (seen.insert(key(w)).second) frontier.push_back(w);
        }
    }
    return static_cast<long long>(seen.size());
}

void save_ball(const std::string& path, const OrbitBall& ball) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("save_ball: cannot open " + path);
    nlohmann::json head = {{"format", "horolab-orbit-ball"}, {"version", 1},         {"group_hash", ball.group_hash},
                           {"radius", ball.radius},          {"slack", ball.slack}, {"count", ball.entries.size()}};
    os << head.dump() << '\n';
    for (const auto& e : ball.entries) {
        nlohmann::json rec = nlohmann::json::array(
            {e.word, e.element.a, e.element.b, e.element.c, e.element.d, e.distance});
        os << rec.dump() << '\n';
    }
    if (!os) throw std::runtime_error("save_ball: write failed for " + path);
}

std::optional<OrbitBall> load_ball(const std::string& path, const GroupPresentation& p, double R) {
    std::ifstream is(path);
    if (!is) return std::nullopt;
    std::string line;
    if (!std::getline(is, line)) return std::nullopt;
    try {
        const auto head = nlohmann::json::parse(line);
        if (head.at("format") != "horolab-orbit-ball" || head.at("version") != 1) return std::nullopt;
        if (head.at("group_hash") != p.hash() || head.at("radius").get<double>() != R) return std::nullopt;
        OrbitBall ball;
        ball.radius = R;
        ball.slack = head.at("slack").get<double>();
        ball.group_hash = p.hash();
        const std::size_t count = head.at("count").get<std::size_t>();
        ball.entries.reserve(count);
        while (std::getline(is, line)) {
            const auto rec = nlohmann::json::parse(line);
            BallEntry e;
            e.word = rec.at(0).get<std::string>();
            e.element = {rec.at(1).get<double>(), rec.at(2).get<double>(), rec.at(3).get<double>(),
                         rec.at(4).get<double>()};
            e.distance = rec.at(5).get<double>();
            ball.entries.push_back(std::move(e));
        }
        if (ball.entries.size() != count) return std::nullopt;
        return ball;
    } catch (const nlohmann::json::exception&) {
        return std::nullopt;
    }
}

OrbitBall cached_ball(const GroupPresentation& p, double R, const std::string& dir, const EnumerateOptions& opt) {
    if (dir.empty()) return enumerate_ball(p, R, opt);
    const double slack = opt.slack < 0 ? default_slack(p) : opt.slack;
    const std::string path =
        dir + "/ball-" + p.hash() + "-" + hash_string(fmt_double(R) + "/" + fmt_double(slack)) + ".jsonl";
    if (auto hit = load_ball(path, p, R); hit && hit->slack == slack) return std::move(*hit);
    OrbitBall ball = enumerate_ball(p, R, opt);
    std::filesystem::create_directories(dir);
    const std::string tmp = path + ".tmp";
    save_ball(tmp, ball);
    std::filesystem::rename(tmp, path);
    return ball;
}

}  // namespace horolab
