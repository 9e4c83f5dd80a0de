// OpenMP kernels against their serial references on the Schottky fixture.
// Run with OMP_NUM_THREADS set; on one core the pairs should match.

#include <benchmark/benchmark.h>

#include <random>

#include "horolab/br_equid.hpp"
#include "horolab/cone_count.hpp"
#include "horolab/eigenfn.hpp"
#include "horolab/group.hpp"
#include "horolab/patterson.hpp"

using namespace horolab;

namespace {

struct Fixture {
    GroupPresentation group = schottky_symmetric(0.1, 0.95);
    GroupPresentation cusp = parabolic_pair(4.0);
    OrbitBall ball = enumerate_ball(group, 12.0);
    DeltaEstimate est = estimate_delta(ball);
    PattersonApprox approx = build_patterson(ball, est.delta_hat, default_s(est));
    EigenContext ctx{compress(approx.measure, 1e-3), est.delta_hat};
    std::vector<IwasawaNAK> points;
    TestFunction bump{BumpFunction{}};
    HorocycleWindow window = window_for(group);

    Fixture() {
        std::mt19937_64 rng(3);
        std::uniform_real_distribution<double> x(-1.0, 1.0), ly(-3.0, 0.0), th(0.0, kPi);
        for (int i = 0; i < 2000; ++i) points.push_back({x(rng), std::exp(ly(rng)), th(rng)});
    }
};

const Fixture& fx() {
    static const Fixture f;
    return f;
}

void BM_enumerate_ball(benchmark::State& s) {
    for (auto _ : s) benchmark::DoNotOptimize(enumerate_ball(fx().group, 12.0).size());
}
void BM_enumerate_ball_serial(benchmark::State& s) {
    for (auto _ : s) benchmark::DoNotOptimize(serial::enumerate_ball(fx().group, 12.0).size());
}

void BM_build_patterson(benchmark::State& s) {
    const auto& f = fx();
    for (auto _ : s) benchmark::DoNotOptimize(build_patterson(f.ball, f.est.delta_hat, default_s(f.est)).s);
}
void BM_build_patterson_serial(benchmark::State& s) {
    const auto& f = fx();
    for (auto _ : s) benchmark::DoNotOptimize(serial::build_patterson(f.ball, f.est.delta_hat, default_s(f.est)).s);
}

void BM_phi_ell_batch(benchmark::State& s) {
    const auto& f = fx();
    for (auto _ : s) benchmark::DoNotOptimize(phi_ell_batch(f.ctx, 3, f.points).size());
}
void BM_phi_ell_batch_serial(benchmark::State& s) {
    const auto& f = fx();
    for (auto _ : s) benchmark::DoNotOptimize(serial::phi_ell_batch(f.ctx, 3, f.points).size());
}

void BM_psi_N(benchmark::State& s) {
    const auto& f = fx();
    for (auto _ : s) benchmark::DoNotOptimize(psi_N(f.bump, f.ball, 1e-3, f.window).value);
}
void BM_psi_N_serial(benchmark::State& s) {
    const auto& f = fx();
    for (auto _ : s) benchmark::DoNotOptimize(serial::psi_N(f.bump, f.ball, 1e-3, f.window).value);
}

void BM_orbit_vectors(benchmark::State& s) {
    for (auto _ : s) benchmark::DoNotOptimize(orbit_vectors(fx().cusp, kConeBase, 1e7).vectors.size());
}
void BM_orbit_vectors_serial(benchmark::State& s) {
    for (auto _ : s) benchmark::DoNotOptimize(serial::orbit_vectors(fx().cusp, kConeBase, 1e7).vectors.size());
}

}  // namespace

BENCHMARK(BM_enumerate_ball)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_enumerate_ball_serial)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_build_patterson)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_build_patterson_serial)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_phi_ell_batch)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_phi_ell_batch_serial)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_psi_N)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_psi_N_serial)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_orbit_vectors)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_orbit_vectors_serial)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
