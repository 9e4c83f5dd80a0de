#include "horolab/run_config.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

#include "horolab/io.hpp"

namespace horolab {

namespace {

using nlohmann::json;

// Strict view of one JSON object: every key must be claimed.
class Section {
   public:
    Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
        if (!j_.is_object()) fail("", "expected an object");
    }

    bool has(const std::string& key) {
        claimed_.insert(key);
        return j_.contains(key) && !j_.at(key).is_null();
    }
    const json& raw(const std::string& key) {
        claimed_.insert(key);
        return j_.at(key);
    }

    double number(const std::string& key, double def, double lo = -inf(), double hi = inf(), bool open_lo = false) {
        if (!has(key)) return def;
        const json& v = j_.at(key);
        if (!v.is_number()) fail(key, "expected a number");
        const double x = v.get<double>();
        if (!std::isfinite(x) || x < lo || x > hi || (open_lo && x == lo))
            fail(key, "value " + fmt_double(x) + " out of range");
        return x;
    }
    long long integer(const std::string& key, long long def, long long lo, long long hi) {
        if (!has(key)) return def;
        const json& v = j_.at(key);
        if (v.is_number_float() && v.get<double>() == std::floor(v.get<double>()) && std::fabs(v.get<double>()) < 9e15)
            return check_int(key, static_cast<long long>(v.get<double>()), lo, hi);
        if (!v.is_number_integer()) fail(key, "expected an integer");
        return check_int(key, v.get<long long>(), lo, hi);
    }
    bool boolean(const std::string& key, bool def) {
        if (!has(key)) return def;
        if (!j_.at(key).is_boolean()) fail(key, "expected true or false");
        return j_.at(key).get<bool>();
    }
    std::string string(const std::string& key, const std::string& def, const std::vector<std::string>& allowed = {}) {
        if (!has(key)) return def;
        if (!j_.at(key).is_string()) fail(key, "expected a string");
        auto s = j_.at(key).get<std::string>();
        if (!allowed.empty() && std::find(allowed.begin(), allowed.end(), s) == allowed.end()) {
            std::string opts;
            for (const auto& a : allowed) opts += (opts.empty() ? "" : ", ") + a;
            fail(key, "'" + s + "' is not one of " + opts);
        }
        return s;
    }
    std::vector<double> numbers(const std::string& key, const std::vector<double>& def) {
        if (!has(key)) return def;
        const json& v = j_.at(key);
        if (!v.is_array()) fail(key, "expected an array of numbers");
        std::vector<double> out;
        for (const auto& e : v) {
            if (!e.is_number()) fail(key, "expected an array of numbers");
            out.push_back(e.get<double>());
        }
        return out;
    }
    Grid grid(const std::string& key, const Grid& def, double lo) {
        if (!has(key)) return def;
        const json& v = j_.at(key);
        Grid g;
        if (v.is_array()) {
            g = Grid::list(numbers(key, {}));
            if (g.values.empty()) fail(key, "empty grid");
            for (std::size_t i = 0; i < g.values.size(); ++i)
                if (!(g.values[i] > lo) || !std::isfinite(g.values[i])) fail(key, "grid value out of range");
        } else {
            Section s(v, path_ + key + ".");
            const double from = s.number("log10_from", 0.0), to = s.number("log10_to", 0.0);
            const double step = s.number("step", 1.0, 0.0, inf(), true);
            s.finish();
            if (!(to >= from)) fail(key, "log10_to must be >= log10_from");
            if ((to - from) / step > 1e5) fail(key, "grid too dense");
            g = Grid::log10(from, to, step);
        }
        return g;
    }
    Section sub(const std::string& key) {
        claimed_.insert(key);
        static const json empty = json::object();
        return Section(j_.contains(key) && !j_.at(key).is_null() ? j_.at(key) : empty, path_ + key + ".");
    }
    void finish() const {
        for (const auto& [k, v] : j_.items())
            if (!claimed_.count(k)) throw ConfigError("config: unknown key '" + path_ + k + "'");
    }
    [[noreturn]] void fail(const std::string& key, const std::string& what) const {
        throw ConfigError("config: " + path_ + key + ": " + what);
    }

   private:
    static constexpr double inf() { return std::numeric_limits<double>::infinity(); }
    long long check_int(const std::string& key, long long x, long long lo, long long hi) const {
        if (x < lo || x > hi) fail(key, "value " + std::to_string(x) + " out of range");
        return x;
    }
    const json& j_;
    std::string path_;
    std::set<std::string> claimed_;
};

BumpFunction read_bump(const json& j, const std::string& path) {
    Section s(j, path);
    BumpFunction b;
    b.xc = s.number("xc", b.xc);
    b.yc = s.number("yc", b.yc, 0.0, 1e6, true);
    b.thetac = s.number("thetac", b.thetac);
    b.rx = s.number("rx", b.rx, 0.0, 1e6, true);
    b.ry = s.number("ry", b.ry, 0.0, 1e6, true);
    b.rtheta = s.number("rtheta", b.rtheta, 0.0, 0.5 * kPi, true);
    b.amplitude = s.number("amplitude", b.amplitude);
    s.finish();
    try {
        b.validate();
    } catch (const std::invalid_argument& e) {
        throw ConfigError("config: " + path + ": " + e.what());
    }
    return b;
}

json bump_json(const BumpFunction& b) {
    return {{"xc", b.xc}, {"yc", b.yc}, {"thetac", b.thetac}, {"rx", b.rx},
            {"ry", b.ry}, {"rtheta", b.rtheta}, {"amplitude", b.amplitude}};
}

SectorSpec read_sector(const json& j, const std::string& path) {
    Section s(j, path);
    SectorSpec out;
    if (s.has("intervals")) {
        const json& iv = s.raw("intervals");
        if (!iv.is_array() || iv.empty()) s.fail("intervals", "expected a nonempty array of [lo, hi] pairs");
        out.intervals.clear();
        for (const auto& p : iv) {
            if (!p.is_array() || p.size() != 2 || !p[0].is_number() || !p[1].is_number())
                s.fail("intervals", "expected [lo, hi] pairs");
            out.intervals.push_back({p[0].get<double>(), p[1].get<double>()});
        }
    }
    if (s.has("norm")) {
        try {
            out.norm = NormSpec::from_json(s.raw("norm"));
        } catch (const std::exception& e) {
            s.fail("norm", e.what());
        }
    }
    s.finish();
    try {
        out.validate();
    } catch (const std::invalid_argument& e) {
        throw ConfigError("config: " + path + ": " + e.what());
    }
    return out;
}

json group_json(const GroupConfig& g) {
    if (g.kind == "parabolic_pair") return {{"kind", g.kind}, {"period", g.period}};
    if (g.kind == "schottky_symmetric") return {{"kind", g.kind}, {"a", g.a}, {"b", g.b}};
    return {{"kind", g.kind}, {"length", g.length}};
}

}  // namespace

Grid Grid::log10(double from, double to, double step) {
    Grid g;
    g.logarithmic = true;
    g.log10_from = from;
    g.log10_to = to;
    g.step = step;
    return g;
}

Grid Grid::list(std::vector<double> v) {
    Grid g;
    g.values = std::move(v);
    return g;
}

std::vector<double> Grid::expand() const {
    std::vector<double> out;
    if (logarithmic) {
        const long n = std::lround(std::floor((log10_to - log10_from) / step + 1e-9));
        for (long i = 0; i <= n; ++i) out.push_back(std::pow(10.0, log10_from + step * static_cast<double>(i)));
    } else {
        out = values;
    }
    std::sort(out.begin(), out.end());
    out.erase(std::unique(out.begin(), out.end()), out.end());
    return out;
}

nlohmann::json Grid::to_json() const {
    if (logarithmic) return {{"log10_from", log10_from}, {"log10_to", log10_to}, {"step", step}};
    return values;
}

GroupPresentation GroupConfig::build() const {
    if (kind == "parabolic_pair") return parabolic_pair(period);
    if (kind == "schottky_symmetric") return schottky_symmetric(a, b);
    return cyclic_hyperbolic(length);
}

RunConfig RunConfig::from_json(const nlohmann::json& j) {
    RunConfig c;
    Section top(j, "");
    c.name = top.string("name", "");
    c.description = top.string("description", "");

    if (top.has("group")) {
        Section g = top.sub("group");
        GroupConfig gc;
        gc.kind = g.string("kind", gc.kind, {"parabolic_pair", "schottky_symmetric", "cyclic_hyperbolic"});
        if (gc.kind == "parabolic_pair") gc.period = g.number("period", gc.period, 0.0, 1e6, true);
        if (gc.kind == "schottky_symmetric") {
            gc.a = g.number("a", gc.a, 0.0, 1e6, true);
            gc.b = g.number("b", gc.b, 0.0, 1e6, true);
            if (!(gc.b > gc.a)) g.fail("b", "must exceed a");
        }
        if (gc.kind == "cyclic_hyperbolic") gc.length = g.number("length", gc.length, 0.0, 1e3, true);
        g.finish();
        c.group = gc;
    }
    if (top.has("measure")) {
        Section m = top.sub("measure");
        const json& atoms = m.raw("atoms");
        if (!atoms.is_array() || atoms.empty()) m.fail("atoms", "expected a nonempty array of [u, w] pairs");
        for (const auto& a : atoms) {
            if (!a.is_array() || a.size() != 2 || !a[0].is_number() || !a[1].is_number() || !(a[1].get<double>() > 0))
                m.fail("atoms", "expected [u, w] pairs with w > 0");
            c.synthetic_atoms.push_back({a[0].get<double>(), a[1].get<double>()});
        }
        c.synthetic_delta = m.number("delta", c.synthetic_delta, 0.5, 1.0, true);
        if (c.synthetic_delta == 1.0) m.fail("delta", "must be below 1");
        m.finish();
    }
    if (!c.group && c.synthetic_atoms.empty()) top.fail("group", "a group or a synthetic measure is required");
    if (c.group && !c.synthetic_atoms.empty()) top.fail("measure", "give either a group or a synthetic measure");

    {
        Section b = top.sub("ball");
        c.ball_radius = b.number("radius", c.ball_radius, 0.0, 60.0, true);
        c.ball_budget = static_cast<std::size_t>(b.integer("budget", static_cast<long long>(c.ball_budget), 1, 1LL << 40));
        b.finish();
    }
    {
        Section d = top.sub("delta");
        c.delta_method = d.string("method", c.delta_method, {"growth_fit", "poincare_bisect"});
        d.finish();
    }
    {
        Section p = top.sub("patterson");
        if (p.has("s_offset")) c.s_offset = p.number("s_offset", 0.0, 0.0, 1.0, true);
        c.normalization = p.string("normalization", c.normalization, {"unit_mass", "phi0_l2"});
        c.compress = p.number("compress", c.compress, 0.0, 1.0);
        c.depth_min = p.number("depth_min", c.depth_min, 0.0);
        if (p.has("depth_max")) c.depth_max = p.number("depth_max", 0.0, c.depth_min, 1e3, true);
        p.finish();
    }
    {
        Section e = top.sub("eigen");
        if (e.has("ells")) {
            c.eigen_ells.clear();
            for (double l : e.numbers("ells", {})) {
                if (l != std::floor(l) || l < 0 || l > 64) e.fail("ells", "expected integers in [0, 64]");
                c.eigen_ells.push_back(static_cast<int>(l));
            }
        }
        c.eigen_points = static_cast<int>(e.integer("points", c.eigen_points, 0, 1000000));
        c.eigen_seed = static_cast<unsigned>(e.integer("seed", c.eigen_seed, 0, 0xffffffffLL));
        c.eigen_ys = e.grid("ys", c.eigen_ys, 0.0);
        c.eigen_thetas = e.numbers("thetas", c.eigen_thetas);
        e.finish();
    }
    {
        Section h = top.sub("horocycle");
        c.horocycle_max_ell = static_cast<int>(h.integer("max_ell", c.horocycle_max_ell, 0, 64));
        c.horocycle_ys = h.grid("ys", c.horocycle_ys, 0.0);
        c.slope_ys = h.grid("slope_ys", c.slope_ys, 0.0);
        c.tail_margin = h.number("tail_margin", c.tail_margin, 0.0, 1e6, true);
        h.finish();
    }
    {
        Section q = top.sub("equid");
        if (q.has("bumps")) {
            const json& bs = q.raw("bumps");
            if (!bs.is_array() || bs.empty()) q.fail("bumps", "expected a nonempty array");
            c.bump.bumps.clear();
            for (std::size_t i = 0; i < bs.size(); ++i)
                c.bump.bumps.push_back(read_bump(bs[i], "equid.bumps[" + std::to_string(i) + "]."));
        }
        c.brd_L = static_cast<int>(q.integer("L", c.brd_L, 4, 64));
        c.equid_ys = q.grid("ys", c.equid_ys, 0.0);
        q.finish();
    }
    {
        Section n = top.sub("count");
        c.v0_scale = n.number("v0_scale", c.v0_scale, 0.0, 1e9, true);
        if (n.has("sector")) c.sector = read_sector(n.raw("sector"), "count.sector.");
        if (n.has("pieces")) {
            const json& ps = n.raw("pieces");
            if (!ps.is_array()) n.fail("pieces", "expected an array of sectors");
            for (std::size_t i = 0; i < ps.size(); ++i) {
                auto s = read_sector(ps[i], "count.pieces[" + std::to_string(i) + "].");
                if (!(s.norm == c.sector.norm)) n.fail("pieces", "pieces must use the sector's norm");
                c.sector_pieces.push_back(std::move(s));
            }
        }
        c.count_T = n.grid("T", c.count_T, 1.0);
        if (n.has("levels")) {
            c.levels.clear();
            for (double d : n.numbers("levels", {})) {
                if (d != std::floor(d) || d < 1 || d > 1e6) n.fail("levels", "expected integers in [1, 1e6]");
                c.levels.push_back(static_cast<long long>(d));
            }
            if (c.levels.empty()) n.fail("levels", "empty");
        }
        c.streaming = n.boolean("streaming", c.streaming);
        c.count_budget =
            static_cast<std::size_t>(n.integer("budget", static_cast<long long>(c.count_budget), 1, 1LL << 40));
        n.finish();
    }
    {
        Section s = top.sub("census");
        c.census_T = s.number("T", c.census_T, 1.0, 1e15);
        c.census_Rmax = static_cast<int>(s.integer("Rmax", c.census_Rmax, 1, 64));
        s.finish();
    }
    {
        Section r = top.sub("run");
        c.workers = static_cast<int>(r.integer("workers", c.workers, 0, 4096));
        c.cache = r.boolean("cache", c.cache);
        r.finish();
    }
    if (top.has("acceptance")) {
        c.acceptance = top.raw("acceptance");
        if (!c.acceptance.is_object()) top.fail("acceptance", "expected an object");
    }
    top.finish();
    return c;
}

RunConfig RunConfig::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("config: cannot read " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    json j;
    try {
        j = json::parse(ss.str());
    } catch (const json::parse_error& e) {
        throw ConfigError("config: " + path + ": " + e.what());
    }
    return from_json(j);
}

nlohmann::json RunConfig::to_json() const {
    json j;
    j["name"] = name;
    j["description"] = description;
    if (group) j["group"] = group_json(*group);
    if (!synthetic_atoms.empty()) {
        json atoms = json::array();
        for (const auto& a : synthetic_atoms) atoms.push_back({a.u, a.w});
        j["measure"] = {{"atoms", atoms}, {"delta", synthetic_delta}};
    }
    j["ball"] = {{"radius", ball_radius}, {"budget", ball_budget}};
    j["delta"] = {{"method", delta_method}};
    j["patterson"] = {{"s_offset", s_offset ? json(*s_offset) : json(nullptr)},
                      {"normalization", normalization},
                      {"compress", compress},
                      {"depth_min", depth_min},
                      {"depth_max", depth_max ? json(*depth_max) : json(nullptr)}};
    j["eigen"] = {{"ells", eigen_ells},
                  {"points", eigen_points},
                  {"seed", eigen_seed},
                  {"ys", eigen_ys.to_json()},
                  {"thetas", eigen_thetas}};
    j["horocycle"] = {{"max_ell", horocycle_max_ell},
                      {"ys", horocycle_ys.to_json()},
                      {"slope_ys", slope_ys.to_json()},
                      {"tail_margin", tail_margin}};
    json bumps = json::array();
    for (const auto& b : bump.bumps) bumps.push_back(bump_json(b));
    j["equid"] = {{"bumps", bumps}, {"L", brd_L}, {"ys", equid_ys.to_json()}};
    json pieces = json::array();
    for (const auto& p : sector_pieces) pieces.push_back(p.to_json());
    j["count"] = {{"v0_scale", v0_scale},   {"sector", sector.to_json()},   {"pieces", pieces},
                  {"T", count_T.to_json()}, {"levels", levels},             {"streaming", streaming},
                  {"budget", count_budget}};
    j["census"] = {{"T", census_T}, {"Rmax", census_Rmax}};
    j["run"] = {{"workers", workers}, {"cache", cache}};
    j["acceptance"] = acceptance;
    return j;
}

// Worker count and cache toggle do not change results, so they stay out of the hash.
std::string RunConfig::hash() const {
    auto j = to_json();
    j.erase("run");
    return hash_string(j.dump());
}

}  // namespace horolab
