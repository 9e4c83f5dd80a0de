#pragma once

#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "horolab/br_equid.hpp"
#include "horolab/cone_count.hpp"
#include "json.hpp"

namespace horolab {

// Schema violations; the CLI maps these to exit status 2.
class ConfigError : public std::runtime_error {
   public:
    using std::runtime_error::runtime_error;
};

// Either an explicit list or a base-10 logarithmic grid.
struct Grid {
    std::vector<double> values;
    bool logarithmic = false;
    double log10_from = 0.0, log10_to = 0.0, step = 1.0;

    static Grid log10(double from, double to, double step);
    static Grid list(std::vector<double> v);
    std::vector<double> expand() const;  // ascending
    nlohmann::json to_json() const;
};

struct GroupConfig {
    std::string kind = "parabolic_pair";  // parabolic_pair | schottky_symmetric | cyclic_hyperbolic
    double period = 4.0;                  // parabolic_pair
    double a = 0.1, b = 0.95;             // schottky_symmetric
    double length = 2.0;                  // cyclic_hyperbolic
    GroupPresentation build() const;
};

struct RunConfig {
    std::string name;
    std::string description;

    std::optional<GroupConfig> group;
    // Synthetic measure used instead of a group (eigen and horocycle only).
    std::vector<Atom> synthetic_atoms;
    double synthetic_delta = 0.75;

    double ball_radius = 14.0;
    std::size_t ball_budget = 50'000'000;

    std::string delta_method = "growth_fit";  // growth_fit | poincare_bisect

    std::optional<double> s_offset;  // s = delta_hat + s_offset; default_s when absent
    std::string normalization = "unit_mass";  // unit_mass | phi0_l2
    double compress = 1e-3;
    double depth_min = 0.0;
    std::optional<double> depth_max;

    std::vector<int> eigen_ells{0, 1, 3};
    int eigen_points = 100;
    unsigned eigen_seed = 7;
    Grid eigen_ys = Grid::list({1.0, 0.1});
    std::vector<double> eigen_thetas{0.0, 1.0};

    int horocycle_max_ell = 8;
    Grid horocycle_ys = Grid::list({0.5, 0.05});
    Grid slope_ys = Grid::list({1e-1, 1e-2, 1e-3});
    double tail_margin = 1.0;

    TestFunction bump{BumpFunction{}};
    int brd_L = 12;
    Grid equid_ys = Grid::log10(-5.0, -2.0, 0.25);

    double v0_scale = 1.0;
    SectorSpec sector;
    std::vector<SectorSpec> sector_pieces;  // disjoint parts checked for additivity
    Grid count_T = Grid::log10(2.0, 6.0, 0.05);
    std::vector<long long> levels{1};
    bool streaming = false;
    std::size_t count_budget = 50'000'000;

    double census_T = 1e6;
    int census_Rmax = 7;

    int workers = 0;  // 0: runtime default
    bool cache = true;

    // Free-form thresholds read by the acceptance runner.
    nlohmann::json acceptance = nlohmann::json::object();

    static RunConfig from_json(const nlohmann::json& j);
    static RunConfig load(const std::string& path);
    // Canonical form: every field present, keys sorted.
    nlohmann::json to_json() const;
    std::string hash() const;
    Vec3 v0() const { return {v0_scale, 0.0, v0_scale}; }
};

}  // namespace horolab
