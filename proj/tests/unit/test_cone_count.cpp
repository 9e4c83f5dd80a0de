#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <tuple>

#include "doctest.h"
#include "horolab/cone_count.hpp"

using namespace horolab;

namespace {

MoebiusElement random_element(std::mt19937_64& rng) {
    std::uniform_real_distribution<double> x(-3.0, 3.0), ly(-2.0, 2.0), th(0.0, kPi);
    return compose(compose(MoebiusElement::translation(x(rng)), MoebiusElement::dilation(std::exp(ly(rng)))),
                   MoebiusElement::rotation(th(rng)));
}

double max_abs_diff(const Vec3& a, const Vec3& b) {
    return std::max({std::fabs(a[0] - b[0]), std::fabs(a[1] - b[1]), std::fabs(a[2] - b[2])});
}

using Key = std::tuple<long long, long long, long long>;

std::set<Key> integral_set(const std::vector<ConeVector>& vs) {
    std::set<Key> s;
    for (const auto& c : vs) s.insert({std::llround(c.v[0]), std::llround(c.v[1]), std::llround(c.v[2])});
    return s;
}

std::vector<double> norms_of(const OrbitVectors& o) {
    std::vector<double> n;
    for (const auto& c : o.vectors) n.push_back(c.norm);
    return n;
}

std::size_t longest_word(const GroupPresentation& p, const OrbitVectors& o) {
    std::size_t m = 0;
    for (const auto& c : o.vectors) m = std::max(m, p.parse_word(c.word).size());
    return m;
}

std::vector<double> log_grid(double lo_exp, double hi_exp, double step) {
    std::vector<double> ts;
    for (double e = lo_exp; e <= hi_exp + 1e-9; e += step) ts.push_back(std::pow(10.0, e));
    return ts;
}

const std::string kTmp = (std::filesystem::temp_directory_path() / "horolab_cone_test").string();

std::string slurp(const std::string& path) {
    std::ifstream in(path);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

}  // namespace

TEST_CASE("representation: identity, form, horocycle stabilizer, homomorphism") {
    const Mat3 id = iota(MoebiusElement::identity());
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) CHECK(id[i][j] == doctest::Approx(i == j ? 1.0 : 0.0));

    for (double x : {1.0, -2.5, 7.0}) {
        const Vec3 v = horolab::apply(kConeBase, iota(MoebiusElement::translation(x)));
        CHECK(max_abs_diff(v, kConeBase) == 0.0);
    }

    std::mt19937_64 rng(7);
    std::uniform_real_distribution<double> comp(-5.0, 5.0);
    double worst_form = 0.0;
    for (int i = 0; i < 1000; ++i) {
        const Vec3 v{comp(rng), comp(rng), comp(rng)};
        const Vec3 w = horolab::apply(v, iota(random_element(rng)));
        worst_form = std::max(worst_form, std::fabs(quadratic_form(w) - quadratic_form(v)) /
                                              std::max(1.0, std::fabs(quadratic_form(v)) + w[2] * w[2]));
    }
    CHECK(worst_form < 1e-12);

    double worst_hom = 0.0;
    for (int i = 0; i < 10000; ++i) {
        const auto g = random_element(rng), h = random_element(rng);
        const Mat3 lhs = iota(compose(g, h)), rhs = multiply(iota(g), iota(h));
        double scale = 1.0;
        for (const auto& row : lhs)
            for (double e : row) scale = std::max(scale, std::fabs(e));
        for (int r = 0; r < 3; ++r)
            for (int c = 0; c < 3; ++c) worst_hom = std::max(worst_hom, std::fabs(lhs[r][c] - rhs[r][c]) / scale);
    }
    CHECK(worst_hom < 1e-9);
}

TEST_CASE("orbit vector and cone chart") {
    std::mt19937_64 rng(11);
    for (int i = 0; i < 500; ++i) {
        const auto g = random_element(rng);
        const Vec3 direct = horolab::apply(kConeBase, iota(g));
        const Vec3 v = orbit_vector(g, kConeBase);
        CHECK(max_abs_diff(v, direct) <= 1e-10 * std::max(1.0, direct[2]));
        CHECK(std::fabs(quadratic_form(v)) <= 1e-9 * v[2] * v[2]);
    }
    std::uniform_real_distribution<double> ly(-3.0, 3.0), th(0.0, kPi);
    for (int i = 0; i < 500; ++i) {
        const double y = std::exp(ly(rng)), t = th(rng);
        const auto chart = cone_chart(cone_point(y, t, {2.0, 0.0, 2.0}), {2.0, 0.0, 2.0});
        CHECK(chart.y == doctest::Approx(y).epsilon(1e-8));
        CHECK(std::fabs(chart.theta - t) < 1e-8);
        // the chart matches the group coordinates: v0 iota(a_y k_theta)
        const Vec3 via_group = orbit_vector(compose(MoebiusElement::dilation(y), MoebiusElement::rotation(t)));
        CHECK(max_abs_diff(via_group, cone_point(y, t)) <= 1e-10 * std::max(1.0, via_group[2]));
    }
    CHECK_THROWS_AS(cone_chart({1.0, 0.0, 2.0}), std::invalid_argument);
    CHECK_THROWS_AS(cone_chart({1.0, 0.0, -1.0}), std::invalid_argument);
    CHECK_THROWS_AS(check_cone_base({1.0, 0.5, 1.0}), std::invalid_argument);
}

TEST_CASE("norms and sectors") {
    const Vec3 v{3.0, -4.0, 5.0};
    CHECK(NormSpec::euclidean()(v) == doctest::Approx(std::sqrt(50.0)));
    CHECK(NormSpec::sup()(v) == 5.0);
    CHECK(NormSpec::weighted({1.0, 4.0, 1.0})(v) == doctest::Approx(std::sqrt(9.0 + 64.0 + 25.0)));
    CHECK_THROWS_AS(NormSpec::weighted({1.0, 0.0, 1.0}), std::invalid_argument);
    for (const auto& n : {NormSpec::euclidean(), NormSpec::sup(), NormSpec::weighted({2.0, 0.5, 3.0})}) {
        CHECK(NormSpec::from_json(n.to_json()) == n);
        std::mt19937_64 rng(3);
        std::normal_distribution<double> g;
        for (int i = 0; i < 200; ++i) {
            const Vec3 w{g(rng), g(rng), g(rng)};
            CHECK(std::sqrt(w[0] * w[0] + w[1] * w[1] + w[2] * w[2]) <= n.euclidean_bound() * n(w) * (1 + 1e-12));
        }
    }

    SectorSpec s{{{0.2, 0.4}, {1.0, 2.0}}, NormSpec::sup()};
    s.validate();
    CHECK(s.contains(0.3));
    CHECK_FALSE(s.contains(0.5));
    CHECK(s.contains(2.0));
    const auto back = SectorSpec::from_json(s.to_json());
    CHECK(back.intervals == s.intervals);
    CHECK(back.norm == s.norm);
    CHECK_THROWS_AS((SectorSpec{{{0.4, 0.2}}, {}}.validate()), std::invalid_argument);
    CHECK_THROWS_AS((SectorSpec{{{0.0, 1.0}, {0.5, 2.0}}, {}}.validate()), std::invalid_argument);
    CHECK_THROWS_AS((SectorSpec{{{0.0, 4.0}}, {}}.validate()), std::invalid_argument);

    // a_y for y in (0, 1) sits at angle 0: kept iff 0 is in the sector
    const ConeVector diag{"", orbit_vector(MoebiusElement::dilation(0.25)), 0.0, 1};
    CHECK(sector_filter({diag}, SectorSpec::full()).size() == 1);
    CHECK(sector_filter({diag}, SectorSpec{{{0.0, 0.1}}, {}}).size() == 1);
    CHECK(sector_filter({diag}, SectorSpec{{{0.05, 0.1}}, {}}).empty());
}

TEST_CASE("pruned enumeration equals exhaustive enumeration") {
    const auto cusp = parabolic_pair(4);
    const auto pruned = orbit_vectors(cusp, kConeBase, 1000.0);
    REQUIRE(longest_word(cusp, pruned) <= 7);
    const auto full = exhaustive_orbit_vectors(cusp, kConeBase, 1000.0, 10);
    CHECK(integral_set(pruned.vectors) == integral_set(full.vectors));
    CHECK(pruned.vectors.size() == full.vectors.size());
    CHECK(pruned.max_multiplicity == 1);
    CHECK(pruned.stabilizer_letters.size() == 2);
    CHECK(pruned.words_visited < full.words_visited);

    const auto sch = schottky_symmetric(0.1, 0.95);
    const auto ps = orbit_vectors(sch, kConeBase, 1000.0);
    REQUIRE(longest_word(sch, ps) <= 7);
    const auto fs = exhaustive_orbit_vectors(sch, kConeBase, 1000.0, 9);
    REQUIRE(ps.vectors.size() == fs.vectors.size());
    for (std::size_t i = 0; i < ps.vectors.size(); ++i) {
        CHECK(ps.vectors[i].norm == doctest::Approx(fs.vectors[i].norm).epsilon(1e-12));
        CHECK(max_abs_diff(ps.vectors[i].v, fs.vectors[i].v) <= 1e-9 * ps.vectors[i].v[2]);
    }
}

TEST_CASE("parallel and serial enumeration agree") {
    for (const auto& p : {parabolic_pair(4), schottky_symmetric(0.1, 0.95)}) {
        const double T = p.integral() ? 1e5 : 2e3;
        const auto par = orbit_vectors(p, kConeBase, T);
        const auto ser = serial::orbit_vectors(p, kConeBase, T);
        REQUIRE(par.vectors.size() == ser.vectors.size());
        for (std::size_t i = 0; i < par.vectors.size(); ++i) {
            CHECK(par.vectors[i].word == ser.vectors[i].word);
            CHECK(par.vectors[i].norm == ser.vectors[i].norm);
        }
        CHECK(par.words_visited == ser.words_visited);
    }
}

TEST_CASE("orbit invariants on the cusp group") {
    const auto p = parabolic_pair(4);
    CHECK(orbit_vectors(p, kConeBase, std::sqrt(2.0)).vectors.empty());
    CHECK(orbit_vectors(p, kConeBase, std::sqrt(2.0) * 1.0001).vectors.size() == 1);

    const auto o = orbit_vectors(p, kConeBase, 1e6);
    CHECK(o.integral);
    CHECK(o.vectors.size() == 2013);
    for (const auto& c : o.vectors) {
        const long long x1 = std::llround(c.v[0]), x2 = std::llround(c.v[1]), x3 = std::llround(c.v[2]);
        CHECK(x1 * x1 + x2 * x2 - x3 * x3 == 0);
        CHECK(std::gcd(std::gcd(x1, x2), x3) == 1);
        CHECK(c.norm < 1e6);
    }
    const auto n = norms_of(o);
    CHECK(std::is_sorted(n.begin(), n.end()));
    CHECK(o.count_below(1e6) == o.vectors.size());

    // a larger bound only adds vectors; a smaller norm ball keeps a superset
    const auto small = orbit_vectors(p, kConeBase, 1e4);
    const auto big = integral_set(o.vectors);
    for (const auto& k : integral_set(small.vectors)) CHECK(big.count(k) == 1);
    OrbitOptions sup;
    sup.norm = NormSpec::sup();
    const auto os = orbit_vectors(p, kConeBase, 1e6, sup);
    const auto sup_set = integral_set(os.vectors);
    for (const auto& k : big) CHECK(sup_set.count(k) == 1);  // |v|_sup <= |v|_2
    CHECK(os.vectors.size() > o.vectors.size());

    OrbitOptions tiny;
    tiny.budget = 100;
    CHECK_THROWS_AS(orbit_vectors(p, kConeBase, 1e6, tiny), OrbitBudgetExceeded);
}

TEST_CASE("count series") {
    const auto p = parabolic_pair(4);
    const auto o = orbit_vectors(p, kConeBase, 1e6);
    const auto Ts = log_grid(2.0, 6.0, 0.5);
    const auto all = count_series(o, SectorSpec::full(), Ts, 1);
    CHECK(std::is_sorted(all.N.begin(), all.N.end()));
    CHECK(all.N.back() == 2013);
    for (long long d : {3, 5, 7}) {
        const auto sd = count_series(o, SectorSpec::full(), Ts, d);
        CHECK(std::is_sorted(sd.N.begin(), sd.N.end()));
        for (std::size_t i = 0; i < Ts.size(); ++i) CHECK(sd.N[i] <= all.N[i]);
        CHECK(sd.N.back() > 0);
    }

    // disjoint sectors add up
    const SectorSpec left{{{0.0, 1.0}}, {}}, right{{{1.0 + 1e-12, kPi}}, {}};
    const auto nl = count_series(o, left, Ts), nr = count_series(o, right, Ts);
    for (std::size_t i = 0; i < Ts.size(); ++i) CHECK(nl.N[i] + nr.N[i] == all.N[i]);

    // the limit-set gap: few vectors, and none appear past small T
    const SectorSpec gap{{{0.5, 1.05}}, {}};
    const auto ng = count_series(o, gap, Ts);
    CHECK(ng.N.back() <= 20);
    CHECK(ng.N.back() == ng.N[ng.N.size() / 2]);

    CHECK_THROWS_AS(count_series(o, SectorSpec::full(), {10.0, 5.0}), std::invalid_argument);
    CHECK_THROWS_AS(count_series(o, SectorSpec::full(), {2e6}), std::invalid_argument);
    CHECK_THROWS_AS(count_series(o, SectorSpec::full(NormSpec::sup()), Ts), std::invalid_argument);
    const auto sch = orbit_vectors(schottky_symmetric(0.1, 0.95), kConeBase, 100.0);
    CHECK_THROWS_AS(count_series(sch, SectorSpec::full(), {50.0}, 3), std::invalid_argument);

    const auto direct = count_series(p, kConeBase, SectorSpec::full(), Ts, 5);
    CHECK(direct.N == count_series(o, SectorSpec::full(), Ts, 5).N);
}

TEST_CASE("streaming counts match stored counts") {
    const auto p = parabolic_pair(4);
    const auto Ts = log_grid(2.0, 7.0, 0.25);
    const auto o = orbit_vectors(p, kConeBase, Ts.back());
    const SectorSpec sector{{{0.0, 0.4}, {1.2, kPi}}, {}};
    const auto streamed = streaming_count_series(p, kConeBase, sector, Ts, {1, 3, 5, 7});
    REQUIRE(streamed.size() == 4);
    for (const auto& s : streamed) {
        CHECK(s.N == count_series(o, sector, Ts, s.d).N);
        CHECK(s.group_hash == p.hash());
    }
}

TEST_CASE("count fit recovers a synthetic power law") {
    CountSeries s;
    for (double T : log_grid(2.0, 8.0, 0.05)) {
        s.T.push_back(T);
        s.N.push_back(static_cast<long long>(std::floor(3.7 * std::pow(T, 0.68))));
    }
    const auto fit = fit_count(s);
    CHECK(fit.delta_fit == doctest::Approx(0.68).epsilon(0.02));
    CHECK(fit.constant_fit == doctest::Approx(3.7).epsilon(0.02));
    CHECK(fit.used >= 60);
    CHECK(fit.delta_stderr < 1e-3);
    CountSeries short_series;
    short_series.T = {10.0, 20.0, 30.0};
    short_series.N = {1, 2, 3};
    CHECK_THROWS_AS(fit_count(short_series), std::invalid_argument);
}

TEST_CASE("Xi: angle convention, oracle, additivity, gap") {
    CHECK(xi_angle(std::numeric_limits<double>::infinity()) == 0.0);
    CHECK(xi_angle(0.0) == doctest::Approx(0.5 * kPi));
    for (double u : {-3.0, -0.2, 0.7, 5.0}) {
        // k_theta sends u to infinity
        const auto k = MoebiusElement::rotation(xi_angle(u));
        CHECK(std::fabs(k.c * u + k.d) < 1e-12);
    }

    std::vector<Atom> atoms{{-1.5, 0.2}, {-0.3, 0.1}, {0.1, 0.4}, {0.45, 0.05}, {2.5, 0.15},
                            {std::numeric_limits<double>::infinity(), 0.1}};
    const auto m = AtomicMeasure::from_atoms(atoms, Normalization::Phi0L2Unit);
    const double delta = 0.68, x0 = 2.0;
    const double kap = kappa(m, delta, x0);
    double oracle = 0.0;
    for (const auto& a : atoms) {
        const Vec3 v = horolab::apply(kConeBase, iota(MoebiusElement::rotation(xi_angle(a.u))));
        oracle += a.w * std::pow(std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]), -delta);
    }
    oracle *= kap / delta;
    CHECK(Xi(m, delta, x0, SectorSpec::full()) == doctest::Approx(oracle).epsilon(1e-12));

    const SectorSpec a{{{0.0, 1.0}}, {}}, b{{{1.0 + 1e-12, kPi}}, {}};
    CHECK(Xi(m, delta, x0, a) + Xi(m, delta, x0, b) == doctest::Approx(Xi(m, delta, x0, SectorSpec::full())));
    // atoms at u in (1/2, 2) map into the gap sector only when present
    const SectorSpec gap{{{0.5, 1.05}}, {}};
    CHECK(Xi(m, delta, x0, gap) == 0.0);
    CHECK(Xi(m, delta, x0, SectorSpec::full(NormSpec::sup())) > Xi(m, delta, x0, SectorSpec::full()));
}

TEST_CASE("primality and factor counts") {
    for (std::uint64_t p : {2ull, 3ull, 1000003ull, 2305843009213693951ull, 18446744073709551557ull})
        CHECK(is_prime_u64(p));
    for (std::uint64_t n : {0ull, 1ull, 4ull, 561ull, 1000001ull, 3215031751ull, 3825123056546413051ull})
        CHECK_FALSE(is_prime_u64(n));
    CHECK(prime_factor_count(1).value() == 0);
    CHECK(prime_factor_count(97).value() == 1);
    CHECK(prime_factor_count(2ull * 2 * 3 * 5 * 5 * 7).value() == 6);
    // semiprimes with both factors near 2^31
    CHECK(prime_factor_count(2147483647ull * 2147483629ull).value() == 2);
    CHECK(prime_factor_count(4294967291ull * 1000000007ull).value() == 2);
    CHECK(prime_factor_count(1000003ull * 1000003ull * 1009ull).value() == 3);
}

TEST_CASE("almost-prime census") {
    const auto o = orbit_vectors(parabolic_pair(4), kConeBase, 1e6);
    const auto c = almost_prime_census(o.vectors, 64);
    CHECK(c.total == static_cast<long long>(o.vectors.size()));
    CHECK(c.excluded == 0);
    CHECK(c.at_most.size() == 65);
    CHECK(std::is_sorted(c.at_most.begin(), c.at_most.end()));
    CHECK(c.at_most.back() == c.total);
    CHECK(c.at_most[1] == 527);
    long long primes = 0;
    for (const auto& v : o.vectors) primes += is_prime_u64(static_cast<std::uint64_t>(std::llround(v.v[2])));
    CHECK(c.at_most[1] - c.at_most[0] == primes);
    const auto sch = orbit_vectors(schottky_symmetric(0.1, 0.95), kConeBase, 100.0);
    CHECK_THROWS_AS(almost_prime_census(sch.vectors, 4), std::invalid_argument);
}

TEST_CASE("writers") {
    std::filesystem::create_directories(kTmp);
    const auto p = parabolic_pair(4);
    const auto o = orbit_vectors(p, kConeBase, 1e4);
    const auto s = count_series(o, SectorSpec::full(), {1e2, 1e3, 1e4});
    const std::string csv = kTmp + "/counts.csv";
    s.write_csv(csv, "group cusp\nsector full");
    const std::string text = slurp(csv);
    CHECK(text.find("# group cusp\n# sector full\nT,N\n") != std::string::npos);
    CHECK(text.find("# d=1\n") != std::string::npos);
    CHECK(text.find("T,N\n") != std::string::npos);
    s.write_csv(kTmp + "/counts2.csv", "group cusp\nsector full");
    CHECK(slurp(kTmp + "/counts2.csv") == text);

    const std::string dump = kTmp + "/orbit.jsonl";
    write_orbit_dump(dump, o, "dump");
    std::ifstream in(dump);
    std::string line;
    std::size_t records = 0;
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#') continue;
        const auto j = nlohmann::json::parse(line);
        REQUIRE(j.size() == 7);
        CHECK(std::stod(j[3].get<std::string>()) > 0.0);
        ++records;
    }
    CHECK(records == o.vectors.size());

    const auto c = almost_prime_census(o.vectors, 6);
    c.write_csv(kTmp + "/census.csv", "census");
    CHECK(slurp(kTmp + "/census.csv").find("r,") != std::string::npos);
    std::filesystem::remove_all(kTmp);
}
