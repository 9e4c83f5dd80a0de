#include "horolab/pipeline.hpp"

#include <omp.h>

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <random>
#include <sstream>

#include "horolab/io.hpp"

namespace horolab {

namespace {

using nlohmann::json;
using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

// Least-squares slope of log|v| against log x.
double loglog_slope(const std::vector<double>& x, const std::vector<double>& v) {
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    const double n = static_cast<double>(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double lx = std::log(x[i]), ly = std::log(std::fabs(v[i]));
        sx += lx;
        sy += ly;
        sxx += lx * lx;
        sxy += lx * ly;
    }
    return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

json finite_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

class Table {
   public:
    Table(const std::string& path, const std::string& comment, const std::string& header) : os_(path) {
        if (!os_) throw std::runtime_error("cannot write " + path);
        std::istringstream lines(comment);
        for (std::string line; std::getline(lines, line);) os_ << "# " << line << '\n';
        os_ << header << '\n';
    }
    template <class... Cells>
    void row(const Cells&... cells) {
        bool first = true;
        ((os_ << (first ? "" : ",") << cell(cells), first = false), ...);
        os_ << '\n';
    }

   private:
    static std::string cell(double v) { return fmt_double(v); }
    static std::string cell(int v) { return std::to_string(v); }
    static std::string cell(long long v) { return std::to_string(v); }
    static std::string cell(const std::string& s) { return s; }
    std::ofstream os_;
};

}  // namespace

Pipeline::Pipeline(RunConfig cfg, PipelineOptions opt) : cfg_(std::move(cfg)), opt_(std::move(opt)) {
    hash_ = cfg_.hash();
    if (cfg_.workers > 0) omp_set_num_threads(cfg_.workers);
    std::filesystem::create_directories(opt_.out_dir);
}

const std::vector<std::string>& Pipeline::subcommands() {
    static const std::vector<std::string> s{"enumerate", "delta", "patterson", "eigen", "horocycle",
                                            "brd",       "equid", "count",     "census", "all"};
    return s;
}

std::string Pipeline::path(const std::string& file) const { return (std::filesystem::path(opt_.out_dir) / file).string(); }

std::string Pipeline::comment(const std::string& stage) const {
    return "horolab " + stage + "\nconfig_hash=" + hash_ + (cfg_.name.empty() ? "" : "\nconfig_name=" + cfg_.name);
}

json Pipeline::stamp(const std::string& stage) const {
    return {{"stage", stage}, {"config_hash", hash_}, {"config_name", cfg_.name}};
}

void Pipeline::write_json(const std::string& stage, const json& j) const {
    std::ofstream os(path(stage + ".json"));
    if (!os) throw std::runtime_error("cannot write " + path(stage + ".json"));
    os << j.dump(2) << '\n';
}

void Pipeline::log(const std::string& msg) const {
    if (!opt_.quiet) std::cerr << "[horolab] " << msg << '\n';
}

void Pipeline::require_group(const std::string& stage) const {
    if (synthetic()) throw std::invalid_argument(stage + ": needs a group, the config has a synthetic measure");
}

const GroupPresentation& Pipeline::group() {
    require_group("group");
    if (!group_) group_ = cfg_.group->build();
    return *group_;
}

const OrbitBall& Pipeline::ball() {
    if (!ball_) {
        const auto t0 = Clock::now();
        EnumerateOptions eo;
        eo.budget = cfg_.ball_budget;
        ball_ = cached_ball(group(), cfg_.ball_radius, cfg_.cache ? opt_.cache_dir : "", eo);
        log("ball R=" + fmt_double(cfg_.ball_radius) + ": " + std::to_string(ball_->size()) + " words, " +
            fmt_double(std::round(seconds_since(t0) * 100) / 100) + " s");
    }
    return *ball_;
}

double Pipeline::delta() {
    if (synthetic()) return cfg_.synthetic_delta;
    if (!delta_)
        delta_ = estimate_delta(ball(), cfg_.delta_method == "growth_fit" ? DeltaMethod::GrowthFit
                                                                           : DeltaMethod::PoincareBisect);
    return delta_->delta_hat;
}

double Pipeline::x0() {
    if (synthetic()) return std::numeric_limits<double>::infinity();
    const auto w = window_for(group());
    return w.periodic ? w.x0() : std::numeric_limits<double>::infinity();
}

const PattersonApprox& Pipeline::patterson() {
    if (patterson_) return *patterson_;
    if (synthetic()) {
        PattersonApprox a;
        a.measure = AtomicMeasure::from_atoms(cfg_.synthetic_atoms);
        a.delta_hat = a.s = cfg_.synthetic_delta;
        a.projection = "synthetic";
        patterson_ = std::move(a);
        return *patterson_;
    }
    const auto t0 = Clock::now();
    const double d = delta();
    const double s = cfg_.s_offset ? d + *cfg_.s_offset : default_s(*delta_);
    std::ostringstream key;
    key << ball().group_hash << '|' << fmt_double(ball().radius) << '|' << fmt_double(ball().slack) << '|'
        << cfg_.delta_method << '|' << fmt_double(s) << '|' << cfg_.normalization << '|' << fmt_double(cfg_.compress)
        << '|' << fmt_double(cfg_.depth_min) << '|' << (cfg_.depth_max ? fmt_double(*cfg_.depth_max) : "inf");
    const bool use_cache = cfg_.cache && !opt_.cache_dir.empty();
    const std::string cached = use_cache ? opt_.cache_dir + "/measure-" + hash_string(key.str()) + ".txt" : "";
    if (use_cache && std::filesystem::exists(cached)) {
        patterson_ = import_measure(cached);
        log("measure from cache: " + std::to_string(patterson_->measure.atoms.size()) + " atoms");
        return *patterson_;
    }
    PattersonOptions po;
    po.depth_min = cfg_.depth_min;
    if (cfg_.depth_max) po.depth_max = *cfg_.depth_max;
    PattersonApprox a = build_patterson(ball(), d, s, po);
    a.measure = compress(a.measure, cfg_.compress);
    if (cfg_.normalization == "phi0_l2") {
        const EigenContext raw(a.measure, d, x0());
        a.measure = normalize_phi0_l2(raw, group());
    }
    if (use_cache) {
        std::filesystem::create_directories(opt_.cache_dir);
        export_measure(cached + ".tmp", a);
        std::filesystem::rename(cached + ".tmp", cached);
    }
    log("measure: " + std::to_string(a.measure.atoms.size()) + " atoms, " +
        fmt_double(std::round(seconds_since(t0) * 100) / 100) + " s");
    patterson_ = std::move(a);
    return *patterson_;
}

const EigenContext& Pipeline::context() {
    if (!ctx_) ctx_ = std::make_unique<EigenContext>(patterson().measure, delta(), x0());
    return *ctx_;
}

json Pipeline::run(const std::string& sub) {
    const auto t0 = Clock::now();
    json out;
    if (sub == "enumerate") out = stage_enumerate();
    else if (sub == "delta") out = stage_delta();
    else if (sub == "patterson") out = stage_patterson();
    else if (sub == "eigen") out = stage_eigen();
    else if (sub == "horocycle") out = stage_horocycle();
    else if (sub == "equid") out = stage_equid();
    else if (sub == "brd") out = stage_brd();
    else if (sub == "count") out = stage_count();
    else if (sub == "census") out = stage_census();
    else if (sub == "all") {
        out = stamp("all");
        std::vector<std::string> stages;
        if (synthetic()) {
            stages = {"eigen", "horocycle"};
        } else {
            stages = {"enumerate", "delta", "patterson", "eigen", "horocycle", "equid", "brd", "count"};
            if (group().integral()) stages.push_back("census");
        }
        for (const auto& s : stages) out["stages"][s] = run(s);
        write_json("all", out);
        return out;
    } else {
        throw std::invalid_argument("unknown subcommand '" + sub + "'");
    }
    log(sub + " done in " + fmt_double(std::round(seconds_since(t0) * 100) / 100) + " s");
    return out;
}

json Pipeline::stage_enumerate() {
    require_group("enumerate");
    json j = stamp("enumerate");
    j["group"] = group().describe();
    j["group_hash"] = group().hash();
    try {
        ball();
    } catch (const BudgetExceeded& e) {
        j["partial"] = true;
        j["size"] = e.partial().size();
        j["radius"] = cfg_.ball_radius;
        write_json("enumerate", j);
        throw;
    }
    const auto& b = ball();
    j["partial"] = false;
    j["radius"] = b.radius;
    j["slack"] = b.slack;
    j["size"] = b.size();
    Table t(path("ball_growth.csv"), comment("enumerate"), "r,count");
    for (double r = 1.0; r <= b.radius + 1e-12; r += 1.0) t.row(r, static_cast<long long>(b.count_within(r)));
    write_json("enumerate", j);
    return j;
}

json Pipeline::stage_delta() {
    json j = stamp("delta");
    if (synthetic()) {
        j["delta_hat"] = cfg_.synthetic_delta;
        j["method"] = "synthetic";
    } else {
        delta();
        j["delta_hat"] = delta_->delta_hat;
        j["stderr"] = delta_->stderr_;
        j["method"] = to_string(delta_->method);
        j["radius"] = delta_->radius;
        j["ball_size"] = ball().size();
    }
    write_json("delta", j);
    return j;
}

json Pipeline::stage_patterson() {
    const auto& a = patterson();
    const double d = delta();
    json j = stamp("patterson");
    j["delta_hat"] = d;
    j["s"] = a.s;
    j["atoms"] = a.measure.atoms.size();
    j["total_mass"] = a.measure.total_mass;
    j["normalization"] = to_string(a.measure.normalization);
    j["x0"] = finite_or_null(x0());
    j["ps_mass"] = ps_mass(a.measure, d, x0());
    j["kappa"] = kappa(a.measure, d, x0());
    j["measure_hash"] = a.measure.hash();
    export_measure(path("measure.txt"), a, {{"config_hash", hash_}});
    const auto finite_hull = a.measure.hull();
    const double lo = finite_hull.first, hi = finite_hull.second > finite_hull.first ? finite_hull.second : lo + 1.0;
    const auto binned = bin_measure(a.measure, lo, hi, 256);
    Table t(path("measure_binned.csv"), comment("patterson"), "u,mass");
    for (std::size_t i = 0; i < binned.mass.size(); ++i) t.row(binned.center(i), binned.mass[i]);
    write_json("patterson", j);
    return j;
}

json Pipeline::stage_eigen() {
    const auto& ctx = context();
    const double d = ctx.delta();
    std::mt19937_64 rng(cfg_.eigen_seed);
    const auto [ulo, uhi] = ctx.hull();
    const double xlo = ctx.periodic() ? -ctx.x0() : ulo - 1.0, xhi = ctx.periodic() ? ctx.x0() : uhi + 1.0;
    std::uniform_real_distribution<double> ux(xlo, xhi), uy(std::log(0.2), std::log(2.0)), ut(0.0, kPi);
    std::vector<IwasawaNAK> pts(cfg_.eigen_points);
    for (auto& p : pts) {
        p.x = ux(rng);
        p.y = std::exp(uy(rng));
        p.theta = ut(rng);
    }
    double worst_cas = 0, worst_raise = 0, worst_lower = 0, worst_lap = 0, worst_dx = 0, worst_table = 0;
    Table checks(path("eigen_checks.csv"), comment("eigen"), "ell,x,y,theta,re,im,casimir,raising,lowering");
    json sup = json::array();
    for (int l : cfg_.eigen_ells) {
        const auto vals = phi_ell_batch(ctx, l, pts);
        for (std::size_t i = 0; i < pts.size(); ++i) {
            const double cas = casimir_check(ctx, l, pts[i]);
            const double up = raising_check(ctx, l, pts[i]);
            const double down = lowering_check(ctx, l, pts[i]);
            worst_cas = std::max(worst_cas, cas);
            worst_raise = std::max(worst_raise, up);
            worst_lower = std::max(worst_lower, down);
            if (l == 0) worst_lap = std::max(worst_lap, laplacian_check(ctx, pts[i].point()));
            checks.row(l, pts[i].x, pts[i].y, pts[i].theta, vals[i].real(), vals[i].imag(), cas, up, down);
        }
        if (!pts.empty()) {
            const auto sr = sup_ratio(ctx, l, pts);
            sup.push_back({{"ell", l}, {"max_ratio", sr.max_ratio}, {"bound", sr.bound}});
        }
    }
    Table dx(path("dx_checks.csv"), comment("eigen"), "ell,y,theta,residual");
    Table table(path("horocycle_table.csv"), comment("eigen"), "ell,y,re,im,predicted,rel_dev");
    for (int l : cfg_.eigen_ells)
        for (double y : cfg_.eigen_ys.expand()) {
            for (double th : cfg_.eigen_thetas) {
                const double r = dx_integral_check(ctx, l, y, th);
                worst_dx = std::max(worst_dx, r);
                dx.row(l, y, th, r);
            }
            const auto h = horocycle_average(ctx, l, y);
            const double pred = c_ell(ctx, l) * std::pow(y, 1.0 - d);
            const double dev = std::abs(h.value - pred) / pred;
            worst_table = std::max(worst_table, dev);
            table.row(l, y, h.value.real(), h.value.imag(), pred, dev);
        }
    json j = stamp("eigen");
    j["delta"] = d;
    j["points"] = pts.size();
    j["max_casimir_residual"] = worst_cas;
    j["max_raising_residual"] = worst_raise;
    j["max_lowering_residual"] = worst_lower;
    j["max_laplacian_residual"] = worst_lap;
    j["max_dx_integral_residual"] = worst_dx;
    j["max_horocycle_table_deviation"] = worst_table;
    j["sup_ratios"] = sup;
    write_json("eigen", j);
    return j;
}

json Pipeline::stage_horocycle() {
    const auto& ctx = context();
    const double d = ctx.delta();
    const auto ys = cfg_.horocycle_ys.expand();
    Table t(path("horocycle.csv"), comment("horocycle"), "ell,y,re,im,ratio,gamma_ratio,rel_dev");
    double worst = 0.0;
    for (double y : ys) {
        const auto h0 = horocycle_average(ctx, 0, y).value;
        for (int l = 0; l <= cfg_.horocycle_max_ell; ++l) {
            const auto h = l == 0 ? h0 : horocycle_average(ctx, l, y).value;
            const double ratio = std::abs(h) / std::abs(h0), expect = gamma_ratio(d, l);
            const double dev = std::fabs(ratio - expect) / expect;
            worst = std::max(worst, dev);
            t.row(l, y, h.real(), h.imag(), ratio, expect, dev);
        }
    }
    const auto sy = cfg_.slope_ys.expand();
    std::vector<double> main, tail;
    Table e(path("exponent.csv"), comment("horocycle"), "y,phi0_average,tail");
    const auto [ulo, uhi] = ctx.hull();
    const Truncation J{ulo - cfg_.tail_margin, uhi + cfg_.tail_margin};
    for (double y : sy) {
        main.push_back(horocycle_average(ctx, 0, y).value.real());
        tail.push_back(ctx.periodic() ? std::nan("") : tail_integral(ctx, y, J));
        e.row(y, main.back(), tail.back());
    }
    json j = stamp("horocycle");
    j["delta"] = d;
    j["max_ratio_deviation"] = worst;
    j["expected_slope"] = 1.0 - d;
    j["slope"] = sy.size() >= 2 ? json(loglog_slope(sy, main)) : json(nullptr);
    j["tail_slope"] = sy.size() >= 2 && !ctx.periodic() ? json(loglog_slope(sy, tail)) : json(nullptr);
    write_json("horocycle", j);
    return j;
}

const EquidReport& Pipeline::equid_report() {
    if (!equid_) {
        const auto w = window_for(group());
        equid_ = equid_experiment(cfg_.bump, ball(), w, delta(), cfg_.equid_ys.expand(), patterson().measure.hash());
    }
    return *equid_;
}

json Pipeline::stage_equid() {
    require_group("equid");
    const auto& r = equid_report();
    r.write_csv(path("equid.csv"), comment("equid"));
    json j = stamp("equid");
    j["report"] = r.to_json();
    j["expected_exponent"] = 1.0 - r.delta_hat;
    j["main_exponent_gap"] = std::fabs(r.fit.main_exponent - (1.0 - r.delta_hat));
    write_json("equid", j);
    return j;
}

json Pipeline::stage_brd() {
    require_group("brd");
    const auto cert = certify_injectivity(cfg_.bump, ball());
    json j = stamp("brd");
    j["certificate"] = {{"valid", cert.valid},
                        {"checked_radius", cert.checked_radius},
                        {"threshold", cert.threshold},
                        {"margin", cert.margin}};
    if (!cert.valid) {
        write_json("brd", j);
        throw std::invalid_argument("brd: injectivity certificate failed for the configured bump");
    }
    auto rep = brd_identity_check(cfg_.bump, cert, context(), cfg_.brd_L);
    attach_fit(rep, equid_report().fit.M);
    j["report"] = rep.to_json();
    j["normalization"] = to_string(patterson().measure.normalization);
    Table t(path("brd_partial_sums.csv"), comment("brd"), "L,re,im");
    for (std::size_t l = 0; l < rep.partial_sums.size(); ++l)
        t.row(static_cast<int>(l), rep.partial_sums[l].real(), rep.partial_sums[l].imag());
    write_json("brd", j);
    return j;
}

json Pipeline::stage_count() {
    require_group("count");
    const auto& p = group();
    const Vec3 v0 = cfg_.v0();
    const auto Ts = cfg_.count_T.expand();
    std::vector<CountSeries> series;
    std::vector<CountSeries> pieces;
    std::size_t orbit_size = 0;
    if (cfg_.streaming) {
        series = streaming_count_series(p, v0, cfg_.sector, Ts, cfg_.levels, cfg_.count_budget);
        for (const auto& s : cfg_.sector_pieces)
            pieces.push_back(streaming_count_series(p, v0, s, Ts, {1}, cfg_.count_budget).front());
    } else {
        OrbitOptions oo;
        oo.norm = cfg_.sector.norm;
        oo.budget = cfg_.count_budget;
        OrbitVectors orbit;
        try {
            orbit = orbit_vectors(p, v0, Ts.back(), oo);
        } catch (const OrbitBudgetExceeded& e) {
            json j = stamp("count");
            j["partial"] = true;
            j["vectors_found"] = e.partial().vectors.size();
            write_json("count", j);
            throw;
        }
        orbit_size = orbit.vectors.size();
        for (long long d : cfg_.levels) series.push_back(count_series(orbit, cfg_.sector, Ts, d));
        for (const auto& s : cfg_.sector_pieces) pieces.push_back(count_series(orbit, s, Ts, 1));
    }

    std::string header = "T";
    for (const auto& s : series) header += ",N_d" + std::to_string(s.d);
    for (std::size_t i = 0; i < pieces.size(); ++i) header += ",N_piece" + std::to_string(i);
    {
        Table t(path("counts.csv"), comment("count"), header);
        for (std::size_t k = 0; k < Ts.size(); ++k) {
            std::string line = fmt_double(Ts[k]);
            for (const auto& s : series) line += "," + std::to_string(s.N[k]);
            for (const auto& s : pieces) line += "," + std::to_string(s.N[k]);
            t.row(line);
        }
    }

    json j = stamp("count");
    j["partial"] = false;
    j["T_max"] = Ts.back();
    j["streaming"] = cfg_.streaming;
    if (!cfg_.streaming) j["orbit_vectors"] = orbit_size;
    const CountSeries* full = nullptr;
    for (const auto& s : series)
        if (s.d == 1) full = &s;
    const double d = delta();
    j["delta_hat"] = d;
    j["delta_stderr"] = delta_->stderr_;
    const auto& m = patterson().measure;
    const double xi = Xi(m, d, x0(), cfg_.sector, v0);
    j["Xi"] = xi;
    j["normalization"] = to_string(m.normalization);
    if (full) {
        j["N_max"] = full->N.back();
        try {
            const auto fit = fit_count(*full);
            j["fit"] = {{"delta_fit", fit.delta_fit},        {"delta_stderr", fit.delta_stderr},
                        {"constant_fit", fit.constant_fit},  {"log_constant_stderr", fit.log_constant_stderr},
                        {"rms", fit.rms},                    {"used", fit.used}};
            j["delta_gap"] = std::fabs(fit.delta_fit - d);
            j["constant_over_Xi"] = xi > 0 ? json(fit.constant_fit / xi) : json(nullptr);
        } catch (const std::invalid_argument& e) {
            j["fit"] = nullptr;
            j["fit_error"] = e.what();
        }
        json lv = json::array();
        for (const auto& s : series) {
            if (s.d == 1) continue;
            const long long idx = reduction_index(
                p, {std::llround(v0[0]), std::llround(v0[1]), std::llround(v0[2])}, s.d);
            json ratios = json::array();
            for (std::size_t k = 0; k < Ts.size(); ++k)
                ratios.push_back(full->N[k] > 0 ? json(double(idx) * s.N[k] / full->N[k]) : json(nullptr));
            lv.push_back({{"d", s.d}, {"index", idx}, {"ratios", ratios}, {"ratio_at_T_max", ratios.back()}});
        }
        j["levels"] = lv;
        if (!pieces.empty()) {
            long long defect = 0;
            double xi_sum = 0.0;
            for (std::size_t k = 0; k < Ts.size(); ++k) {
                long long sum = 0;
                for (const auto& s : pieces) sum += s.N[k];
                defect = std::max(defect, std::llabs(sum - full->N[k]));
            }
            json pj = json::array();
            for (std::size_t i = 0; i < pieces.size(); ++i) {
                const double xp = Xi(m, d, x0(), cfg_.sector_pieces[i], v0);
                xi_sum += xp;
                pj.push_back({{"sector", cfg_.sector_pieces[i].to_json()},
                              {"Xi", xp},
                              {"N_max", pieces[i].N.back()},
                              {"N_half", pieces[i].N[Ts.size() / 2]}});
            }
            j["pieces"] = pj;
            j["additivity_defect"] = defect;
            j["Xi_additivity_defect"] = std::fabs(xi_sum - xi);
        }
    }
    write_json("count", j);
    return j;
}

json Pipeline::stage_census() {
    require_group("census");
    if (!group().integral()) throw std::invalid_argument("census: the group is not integral");
    OrbitOptions oo;
    oo.budget = cfg_.count_budget;
    const auto orbit = orbit_vectors(group(), cfg_.v0(), cfg_.census_T, oo);
    const auto c = almost_prime_census(orbit.vectors, cfg_.census_Rmax);
    c.write_csv(path("census.csv"), comment("census"));
    json j = stamp("census");
    j["T"] = cfg_.census_T;
    j["total"] = c.total;
    j["excluded"] = c.excluded;
    j["excluded_words"] = c.excluded_words;
    j["at_most"] = c.at_most;
    json frac = json::array();
    for (auto n : c.at_most) frac.push_back(c.total ? double(n) / c.total : 0.0);
    j["fraction_at_most"] = frac;
    write_json("census", j);
    return j;
}

}  // namespace horolab
