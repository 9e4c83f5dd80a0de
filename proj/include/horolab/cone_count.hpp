#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "horolab/cone_rep.hpp"
#include "horolab/group.hpp"
#include "horolab/patterson.hpp"
#include "json.hpp"

namespace horolab {

enum class NormKind { Euclidean, Sup, Weighted };

// Norm on R^3. Weighted is sqrt(sum w_i x_i^2) with positive weights.
struct NormSpec {
    NormKind kind = NormKind::Euclidean;
    Vec3 weights{1.0, 1.0, 1.0};

    static NormSpec euclidean() { return {}; }
    static NormSpec sup() { return {NormKind::Sup, {1.0, 1.0, 1.0}}; }
    static NormSpec weighted(const Vec3& w);

    double operator()(const Vec3& v) const;
    // Smallest C with |v|_2 <= C |v| for every v.
    double euclidean_bound() const;
    bool operator==(const NormSpec& o) const { return kind == o.kind && weights == o.weights; }
    nlohmann::json to_json() const;
    static NormSpec from_json(const nlohmann::json& j);
};

// Finite union of disjoint closed angle intervals inside [0, pi], plus the norm.
struct SectorSpec {
    std::vector<std::pair<double, double>> intervals{{0.0, kPi}};
    NormSpec norm;

    static SectorSpec full(const NormSpec& n = {}) { return {{{0.0, kPi}}, n}; }
    void validate() const;
    bool contains(double theta) const;  // theta in [0, pi)
    nlohmann::json to_json() const;
    static SectorSpec from_json(const nlohmann::json& j);
};

// Coordinates of v = v0 iota(a_y k_theta) on the cone.
struct ConeChart {
    double y = 1.0;
    double theta = 0.0;  // [0, pi)
};

// The base vector must be a positive multiple of (1, 0, 1).
void check_cone_base(const Vec3& v0);
Vec3 cone_point(double y, double theta, const Vec3& v0 = kConeBase);
// Throws std::invalid_argument off the cone or on the other nappe.
ConeChart cone_chart(const Vec3& v, const Vec3& v0 = kConeBase);
// v0 iota(g), from the bottom row of g.
Vec3 orbit_vector(const MoebiusElement& g, const Vec3& v0 = kConeBase);

struct ConeVector {
    std::string word;  // smallest word reaching the vector
    Vec3 v{};
    double norm = 0.0;
    int multiplicity = 1;  // words in the search reaching the same vector
};

struct OrbitVectors {
    std::vector<ConeVector> vectors;  // ascending (norm, word)
    double T = 0.0;
    NormSpec norm;
    Vec3 v0 = kConeBase;
    std::string group_hash;
    bool integral = false;
    std::vector<int> stabilizer_letters;  // letters fixing v0; never used as a first letter
    double height_floor = 0.0;            // orbit points at or below this height have norm >= T
    std::size_t words_visited = 0;
    int max_multiplicity = 1;

    // Vectors with norm < t.
    std::size_t count_below(double t) const;
};

class OrbitBudgetExceeded : public std::runtime_error {
   public:
    OrbitBudgetExceeded(const std::string& what, OrbitVectors partial)
        : std::runtime_error(what), partial_(std::move(partial)) {}
    const OrbitVectors& partial() const { return partial_; }

   private:
    OrbitVectors partial_;
};

struct OrbitOptions {
    NormSpec norm;
    std::size_t budget = 50'000'000;  // visited words
};

// Distinct vectors of v0 Gamma with norm < T. Depth-first over reduced words
// whose first letter does not fix v0. Every extension of w = w' g keeps its
// orbit point inside w'(region of g), a half-disk over a real interval, and
// |v| >= sqrt(2) v0_3 / (C h) at height h; a subtree is cut once that
// half-disk sits below height_floor.
OrbitVectors orbit_vectors(const GroupPresentation& p, const Vec3& v0, double T, const OrbitOptions& opt = {});
namespace serial {
OrbitVectors orbit_vectors(const GroupPresentation& p, const Vec3& v0, double T, const OrbitOptions& opt = {});
}
// Every reduced word of length <= max_len, no pruning and no coset skipping.
OrbitVectors exhaustive_orbit_vectors(const GroupPresentation& p, const Vec3& v0, double T, int max_len,
                                      const NormSpec& norm = {});

std::vector<ConeVector> sector_filter(const std::vector<ConeVector>& vs, const SectorSpec& sector,
                                      const Vec3& v0 = kConeBase);

struct CountSeries {
    std::vector<double> T;
    std::vector<long long> N;
    std::string group_hash;
    SectorSpec sector;
    long long d = 1;

    void write_csv(const std::string& path, const std::string& comment = "") const;
};

// N(T) = #{v in the orbit, |v| < T, theta(v) in the sector, v = v0 mod d}.
CountSeries count_series(const OrbitVectors& orbit, const SectorSpec& sector, const std::vector<double>& Ts,
                         long long d = 1);
CountSeries count_series(const GroupPresentation& p, const Vec3& v0, const SectorSpec& sector,
                         const std::vector<double>& Ts, long long d = 1, std::size_t budget = 50'000'000);

// One pass over the orbit for several congruence levels without storing
// vectors, for T beyond what memory holds. Assumes distinct reduced words
// not starting with a stabilizer letter reach distinct vectors; a stored run
// up to min(max T, check_T) confirms this and throws otherwise.
std::vector<CountSeries> streaming_count_series(const GroupPresentation& p, const Vec3& v0, const SectorSpec& sector,
                                                const std::vector<double>& Ts, const std::vector<long long>& levels,
                                                std::size_t budget = 4'000'000'000, double check_T = 1e6);

struct CountFit {
    double delta_fit = 0.0, delta_stderr = 0.0;
    double constant_fit = 0.0, log_constant_stderr = 0.0;
    double rms = 0.0;  // of log N residuals
    int used = 0;      // samples in the upper half of the grid
};

// Least squares of log N against log T over the upper half of the grid.
CountFit fit_count(const CountSeries& s);

// Angle whose rotation sends u to infinity, arccot u in (0, pi); infinity maps to 0.
double xi_angle(double u);

// (kappa / delta) sum over atoms with xi_angle(u_j) in the sector of
// w_j |v0 iota(k_theta_j)|^-delta, kappa = horocycle constant * ps_mass.
double Xi(const AtomicMeasure& m, double delta, double x0, const SectorSpec& sector, const Vec3& v0 = kConeBase);

// Primality and prime-factor counts for 64-bit integers.
bool is_prime_u64(std::uint64_t n);
// Prime factors with multiplicity; nullopt when Pollard rho gives up.
std::optional<int> prime_factor_count(std::uint64_t n, int rho_budget = 200000);

struct Census {
    int Rmax = 0;
    std::vector<long long> at_most;  // index r: #{omega(x3) <= r}, r = 0..Rmax
    long long total = 0;             // vectors factored
    long long excluded = 0;          // factorization gave up
    std::vector<std::string> excluded_words;

    void write_csv(const std::string& path, const std::string& comment = "") const;
};

// Integral vectors only; |x3| is factored.
Census almost_prime_census(const std::vector<ConeVector>& vs, int Rmax);

// Line-delimited JSON records (word, x1, x2, x3, norm, theta, y) after a
// '#'-prefixed header.
void write_orbit_dump(const std::string& path, const OrbitVectors& orbit, const std::string& comment = "");

}  // namespace horolab
