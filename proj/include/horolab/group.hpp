#pragma once

#include <array>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "horolab/cone_rep.hpp"
#include "horolab/moebius.hpp"

namespace horolab {

enum class GroupKind { SchottkyHyperbolic, ParabolicPair };

const char* to_string(GroupKind k);

// Ping-pong region attached to one letter: the set that letter maps the
// outside of its inverse's region into.
struct PingPongRegion {
    enum class Shape { Disk, RightHalfPlane, LeftHalfPlane };
    Shape shape = Shape::Disk;
    double center = 0.0;  // disk center, or the bounding line x = center
    double radius = 0.0;  // disk only
};

struct Generator {
    char label;  // lowercase; the inverse prints as the uppercase letter
    MoebiusElement element;
};

// Letters are indexed 2i (generator i) and 2i+1 (its inverse).
class GroupPresentation {
public:
    GroupPresentation(GroupKind kind, std::vector<Generator> gens);

    GroupKind kind() const { return kind_; }
    const std::vector<Generator>& generators() const { return gens_; }
    int letter_count() const { return static_cast<int>(letters_.size()); }
    const MoebiusElement& letter(int i) const { return letters_[i]; }
    char letter_label(int i) const;
    int letter_index(char label) const;  // throws on unknown labels
    static int inverse_letter(int i) { return i ^ 1; }

    bool integral() const { return integral_; }
    bool has_regions() const { return !regions_.empty(); }
    const std::vector<PingPongRegion>& regions() const { return regions_; }
    // Region per letter. Derived from isometric circles when c != 0 and from
    // the half-planes |Re z| >= t/2 for translations n_t.
    void set_regions(std::vector<PingPongRegion> r);
    void derive_regions();

    // Words are written run-length encoded: "a3Bb" is a a a B b.
    std::vector<int> parse_word(const std::string& word) const;
    std::string format_word(const std::vector<int>& letters) const;
    std::string inverse_word(const std::string& word) const;
    MoebiusElement word_element(const std::string& word) const;
    std::string hash() const;
    std::string describe() const;

private:
    GroupKind kind_;
    std::vector<Generator> gens_;
    std::vector<MoebiusElement> letters_;
    std::vector<PingPongRegion> regions_;
    bool integral_ = false;
};

// Standard fixtures.
// <n_c, n_c^T>: cusp at infinity with period c.
GroupPresentation parabolic_pair(double c);
// Generator pairing the circle C(p, r) onto C(q, r), with those as its isometric circles.
MoebiusElement circle_pairing(double p, double q, double r);
// Two hyperbolic generators: [-b,-a] -> [a,b] and its conjugate by z -> -1/z.
GroupPresentation schottky_symmetric(double a, double b);
// Cyclic group generated by a hyperbolic element of the given translation length.
GroupPresentation cyclic_hyperbolic(double length);

struct PingPongCertificate {
    bool ok = false;
    double min_gap = 0.0;
    int letter_i = -1, letter_j = -1;  // pair realizing the minimal gap
};

// Throws std::invalid_argument when region data are missing.
PingPongCertificate verify_ping_pong(const GroupPresentation& p);

struct BallEntry {
    std::string word;
    MoebiusElement element;
    double distance = 0.0;
};

struct OrbitBall {
    double radius = 0.0;
    double slack = 0.0;
    std::string group_hash;
    std::vector<BallEntry> entries;  // ascending (distance, word)

    std::size_t size() const { return entries.size(); }
    // Entries with distance <= r.
    std::size_t count_within(double r) const;
};

class BudgetExceeded : public std::runtime_error {
public:
    BudgetExceeded(const std::string& what, OrbitBall partial)
        : std::runtime_error(what), partial_(std::move(partial)) {}
    const OrbitBall& partial() const { return partial_; }

private:
    OrbitBall partial_;
};

struct EnumerateOptions {
    std::size_t budget = 50'000'000;
    double slack = -1.0;   // negative: 2 * max one-letter displacement
    bool trusted = false;  // skip the ping-pong requirement
};

double default_slack(const GroupPresentation& p);

// All reduced words with d(i, g i) <= R. Parallel over first-letter subtrees.
OrbitBall enumerate_ball(const GroupPresentation& p, double R, const EnumerateOptions& opt = {});

namespace serial {
// Breadth-first reference used to validate the parallel kernel.
OrbitBall enumerate_ball(const GroupPresentation& p, double R, const EnumerateOptions& opt = {});
}  // namespace serial

enum class DeltaMethod { GrowthFit, PoincareBisect };
const char* to_string(DeltaMethod m);

struct DeltaEstimate {
    double delta_hat = 0.0;
    double stderr_ = 0.0;
    DeltaMethod method = DeltaMethod::GrowthFit;
    double radius = 0.0;
};

DeltaEstimate estimate_delta(const OrbitBall& ball, DeltaMethod method = DeltaMethod::GrowthFit);

using IVec3 = std::array<long long, 3>;

// [Gamma : Gamma_d] as the size of the orbit of v0 mod d.
long long reduction_index(const GroupPresentation& p, const IVec3& v0, long long d);

// Exact integer matrix of iota(letter); throws if not integral.
std::array<std::array<long long, 3>, 3> iota_integral(const MoebiusElement& g);

// Line-delimited cache of an orbit ball.
void save_ball(const std::string& path, const OrbitBall& ball);
// Returns nullopt if missing, unreadable, or built for another group or radius.
std::optional<OrbitBall> load_ball(const std::string& path, const GroupPresentation& p, double R);

// Enumerate with a disk cache under dir (empty dir disables caching).
OrbitBall cached_ball(const GroupPresentation& p, double R, const std::string& dir,
                      const EnumerateOptions& opt = {});

}  // namespace horolab
