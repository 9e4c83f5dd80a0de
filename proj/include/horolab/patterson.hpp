#pragma once

#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "horolab/group.hpp"
#include "json.hpp"

namespace horolab {

enum class Normalization { Raw, UnitMass, Phi0L2Unit };
const char* to_string(Normalization n);
Normalization normalization_from_string(const std::string& s);

// Boundary atom; u = +inf stands for the point at infinity.
struct Atom {
    double u = 0.0;
    double w = 0.0;
};

struct AtomicMeasure {
    std::vector<Atom> atoms;
    double total_mass = 0.0;
    Normalization normalization = Normalization::Raw;

    static AtomicMeasure from_atoms(std::vector<Atom> atoms, Normalization n = Normalization::Raw);
    void recompute_total();
    bool empty() const { return atoms.empty(); }
    bool has_infinite_atom() const;
    AtomicMeasure scaled(double factor, Normalization tag) const;
    AtomicMeasure unit_mass() const;
    // Smallest interval holding every finite atom.
    std::pair<double, double> hull() const;
    std::string hash() const;
};

struct PattersonOptions {
    Normalization normalization = Normalization::UnitMass;
    // Only ball entries with depth_min <= d(i, g i) <= depth_max contribute.
    double depth_min = 0.0;
    double depth_max = std::numeric_limits<double>::infinity();
};

struct PattersonApprox {
    AtomicMeasure measure;
    double s = 0.0;
    double delta_hat = 0.0;
    std::string ball_hash;
    std::string projection = "visual-from-i";
    double depth_min = 0.0, depth_max = 0.0;
};

// s = delta_hat + max(0.01, 2 stderr).
double default_s(const DeltaEstimate& est);

// Atoms at the visual projections of g i, weights e^{-s d(i, g i)}. Throws on
// s <= delta_hat, and on an empty measure ("degenerate").
PattersonApprox build_patterson(const OrbitBall& ball, double delta_hat, double s, const PattersonOptions& opt = {});

namespace serial {
PattersonApprox build_patterson(const OrbitBall& ball, double delta_hat, double s, const PattersonOptions& opt = {});
}

// Merge atoms closer than `resolution` into their weighted centroid.
AtomicMeasure compress(const AtomicMeasure& m, double resolution);

struct BinnedMeasure {
    double lo = 0.0, hi = 1.0;
    std::vector<double> mass;
    double center(std::size_t i) const { return lo + (hi - lo) * (i + 0.5) / mass.size(); }
};

BinnedMeasure bin_measure(const AtomicMeasure& m, double lo, double hi, int bins = 512);
// Half the l1 distance between bin masses.
double total_variation(const BinnedMeasure& a, const BinnedMeasure& b);

struct Extrapolation {
    PattersonApprox approx;
    BinnedMeasure binned;
    std::vector<double> residuals;  // per-bin fit residual (rms)
    bool warning = false;           // some bin is non-monotone in s or extrapolates below zero
};

// Per-bin linear fit of mass against (s - delta_hat), evaluated at s = delta_hat.
Extrapolation extrapolate_binned(const std::vector<std::pair<double, AtomicMeasure>>& family, double delta_hat,
                                 int bins = 512);
Extrapolation extrapolate(const OrbitBall& ball, double delta_hat, const std::vector<double>& s_values,
                          const PattersonOptions& opt = {}, int bins = 512);

// sum_j w_j (u_j^2 + 1)^delta; throws if an atom sits at infinity.
double omega0(const AtomicMeasure& m, double delta);
// Same sum restricted to [-x0, x0); x0 = +inf means every atom.
double ps_mass(const AtomicMeasure& m, double delta, double x0);
// horocycle_constant(delta) * ps_mass.
double kappa(const AtomicMeasure& m, double delta, double x0);

// meta, when given, is stored in the header line.
void export_measure(const std::string& path, const PattersonApprox& approx, const nlohmann::json& meta = nullptr);
PattersonApprox import_measure(const std::string& path);

}  // namespace horolab
