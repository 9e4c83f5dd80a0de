#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <limits>
#include <queue>
#include <stdexcept>
#include <vector>

namespace horolab {

template <class T>
struct QuadResult {
    T value{};
    double error = 0.0;
    int evaluations = 0;
    bool converged = true;
};

struct QuadOptions {
    double rel_tol = 1e-6;
    double abs_tol = 0.0;
    int max_intervals = 20000;
};

// Gauss-Legendre rule on [-1, 1].
struct GaussLegendre {
    std::vector<double> nodes, weights;
    explicit GaussLegendre(int n);
};

namespace detail {

inline double magnitude(double v) { return std::fabs(v); }
inline double magnitude(const std::complex<double>& v) { return std::abs(v); }

// 15-point Kronrod nodes/weights with the embedded 7-point Gauss rule.
inline constexpr double kXgk[8] = {0.991455371120812639206854697526329, 0.949107912342758524526189684047851,
                                   0.864864423359769072789712788640926, 0.741531185599394439863864773280788,
                                   0.586087235467691130294144845693013, 0.405845151377397166906606412076961,
                                   0.207784955007898467600689403773245, 0.000000000000000000000000000000000};
inline constexpr double kWgk[8] = {0.022935322010529224963732008058970, 0.063092092629978553290700663189204,
                                   0.104790010322250183839876322541518, 0.140653259715525918745189590510238,
                                   0.169004726639267902826583426598550, 0.190350578064785409913256402421014,
                                   0.204432940075298892414161999234649, 0.209482141084727828012999174891714};
inline constexpr double kWg[4] = {0.129484966168869693270611432679082, 0.279705391489276667901467771423780,
                                  0.381830050505118944950369775488975, 0.417959183673469387755102040816327};

template <class T>
struct Segment {
    double a, b;
    T value;
    double error;
    bool operator<(const Segment& o) const { return error < o.error; }
};

template <class T, class F>
Segment<T> gk15(F& f, double a, double b) {
    const double c = 0.5 * (a + b), h = 0.5 * (b - a);
    const T fc = f(c);
    T kron = fc * kWgk[7];
    T gauss = fc * kWg[3];
    for (int j = 0; j < 7; ++j) {
        const double dx = h * kXgk[j];
        const T s = f(c - dx) + f(c + dx);
        kron += s * kWgk[j];
        if (j % 2 == 1) gauss += s * kWg[j / 2];
    }
    kron *= h;
    gauss *= h;
    return {a, b, kron, magnitude(kron - gauss)};
}

}  // namespace detail

// Globally adaptive Gauss-Kronrod 7/15 on [a, b] with optional interior
// breakpoints. Subdivision order is deterministic.
template <class T, class F>
QuadResult<T> integrate_adaptive(F&& f, double a, double b, const QuadOptions& opt = {},
                                 std::vector<double> breaks = {}) {
    QuadResult<T> res;
    if (a == b) return res;
    if (!(a < b)) throw std::invalid_argument("integrate_adaptive: need a < b");
    breaks.erase(std::remove_if(breaks.begin(), breaks.end(), [&](double x) { return !(x > a && x < b); }),
                 breaks.end());
    std::sort(breaks.begin(), breaks.end());
    breaks.erase(std::unique(breaks.begin(), breaks.end()), breaks.end());
    std::vector<double> pts;
    pts.push_back(a);
    pts.insert(pts.end(), breaks.begin(), breaks.end());
    pts.push_back(b);

    std::priority_queue<detail::Segment<T>> heap;
    T total{};
    double err = 0.0;
    for (std::size_t i = 0; i + 1 < pts.size(); ++i) {
        auto s = detail::gk15<T>(f, pts[i], pts[i + 1]);
        res.evaluations += 15;
        total += s.value;
        err += s.error;
        heap.push(s);
    }
    auto target = [&] { return std::max(opt.abs_tol, opt.rel_tol * detail::magnitude(total)); };
    while (err > target() && static_cast<int>(heap.size()) < opt.max_intervals) {
        auto worst = heap.top();
        heap.pop();
        const double mid = 0.5 * (worst.a + worst.b);
        if (!(mid > worst.a && mid < worst.b)) {
            heap.push(worst);
            break;
        }
        auto l = detail::gk15<T>(f, worst.a, mid);
        auto r = detail::gk15<T>(f, mid, worst.b);
        res.evaluations += 30;
        total += l.value + r.value - worst.value;
        err += l.error + r.error - worst.error;
        heap.push(l);
        heap.push(r);
    }
    // Re-sum from the leaves to shed accumulated rounding in the running total.
    T sum{};
    double esum = 0.0;
    while (!heap.empty()) {
        sum += heap.top().value;
        esum += heap.top().error;
        heap.pop();
    }
    res.value = sum;
    res.error = esum;
    res.converged = esum <= std::max(opt.abs_tol, opt.rel_tol * detail::magnitude(sum)) * 1.0000001;
    return res;
}

// Integral over [a, +inf) via x = a + t/(1-t), t in [0,1).
template <class T, class F>
QuadResult<T> integrate_to_infinity(F&& f, double a, const QuadOptions& opt = {}) {
    auto g = [&](double t) -> T {
        if (t >= 1.0) return T{};
        const double om = 1.0 - t;
        return f(a + t / om) * (1.0 / (om * om));
    };
    return integrate_adaptive<T>(g, 0.0, 1.0, opt);
}

// Integral over (-inf, b] via reflection.
template <class T, class F>
QuadResult<T> integrate_from_minus_infinity(F&& f, double b, const QuadOptions& opt = {}) {
    auto g = [&](double x) -> T { return f(-x); };
    return integrate_to_infinity<T>(g, -b, opt);
}

}  // namespace horolab
