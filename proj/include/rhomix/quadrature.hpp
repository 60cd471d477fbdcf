#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <queue>
#include <span>
#include <stdexcept>
#include <vector>

#include "rhomix/emission.hpp"
#include "rhomix/rng.hpp"

namespace rhomix {

struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct QuadratureConfig {
    double abs_tol = 1e-8;
    int max_subdivisions = 4000;
    std::vector<double> extra_splits;
    double tail_factor = 0.1;  // tail bound must stay below abs_tol * tail_factor
    int mc_fallback_samples = 400000;
    std::uint64_t mc_seed = 0x51ab5eedULL;
};

// A density together with the structure the integrator needs: split points,
// algebraic singularities, and an analytic bound on the mass outside a window.
struct DensityView {
    std::function<double(double)> pdf;
    std::vector<double> breakpoints;
    std::vector<SingularPoint> singularities;
    std::function<double(double, double)> tail;  // mass outside [lo, hi]
    double center = 0.0;
    double spread = 1.0;
};

inline DensityView make_view(const EmissionSpec& spec, const EmissionParams& p) {
    DensityView v;
    v.pdf = [spec, p](double x) { return density(spec, p, x); };
    v.breakpoints = density_breakpoints(spec, p);
    v.singularities = density_singularities(spec, p);
    v.tail = [spec, p](double lo, double hi) { return tail_mass(spec, p, lo, hi); };
    v.center = p.location;
    v.spread = spec.has_scale() ? p.scale : 1.0;
    return v;
}

struct IntegrationResult {
    double value = 0.0;
    double error = 0.0;
    bool used_mc = false;
    double mc_se = 0.0;
    std::size_t panels = 0;
};

namespace detail {

// Gauss-Kronrod 7-15 nodes and weights on [-1,1].
inline constexpr double gk_x[8] = {
    0.000000000000000, 0.207784955007898, 0.405845151377397, 0.586087235467691,
    0.741531185599394, 0.864864423359769, 0.949107912342759, 0.991455371120813};
inline constexpr double gk_wk[8] = {
    0.209482141084728, 0.204432940075298, 0.190350578064785, 0.169004726639267,
    0.140653259715525, 0.104790010322250, 0.063092092629979, 0.022935322010529};
// Gauss-7 weights attach to nodes 0, 2, 4, 6.
inline constexpr double gk_wg[4] = {
    0.417959183673469, 0.381830050505119, 0.279705391489277, 0.129484966168870};

template <class F>
inline void gk15(const F& f, double a, double b, double& value, double& err) {
    const double c = 0.5 * (a + b), h = 0.5 * (b - a);
    auto safe = [&](double x) {
        double v = f(x);
        return std::isfinite(v) ? v : 0.0;  // isolated non-finite points carry no mass
    };
    double f0 = safe(c);
    double k = gk_wk[0] * f0, g = gk_wg[0] * f0;
    for (int i = 1; i < 8; ++i) {
        double dx = h * gk_x[i];
        double s = safe(c + dx) + safe(c - dx);
        k += gk_wk[i] * s;
        if (i % 2 == 0) g += gk_wg[i / 2] * s;
    }
    value = k * h;
    double d = std::abs(k - g) * std::abs(h);
    err = std::min(d, std::pow(200.0 * d, 1.5));
}

struct Panel {
    double a, b, value, err;
    std::size_t seg;
    bool operator<(const Panel& o) const { return err < o.err; }
};

struct Segment {
    double a, b;
    std::function<double(double)> g;
};

// Globally adaptive integration over a list of transformed segments.
inline IntegrationResult integrate_segments(const std::vector<Segment>& segs, double tol,
                                            int max_subdiv) {
    std::priority_queue<Panel> heap;
    double total = 0.0, toterr = 0.0;
    for (std::size_t s = 0; s < segs.size(); ++s) {
        if (!(segs[s].b > segs[s].a)) continue;
        Panel p{segs[s].a, segs[s].b, 0.0, 0.0, s};
        gk15(segs[s].g, p.a, p.b, p.value, p.err);
        total += p.value;
        toterr += p.err;
        heap.push(p);
    }
    int splits = 0;
    while (toterr > tol && splits < max_subdiv && !heap.empty()) {
        Panel p = heap.top();
        heap.pop();
        total -= p.value;
        toterr -= p.err;
        double mid = 0.5 * (p.a + p.b);
        if (!(mid > p.a && mid < p.b)) continue;  // interval at machine resolution
        for (auto [a2, b2] : {std::pair{p.a, mid}, std::pair{mid, p.b}}) {
            Panel q{a2, b2, 0.0, 0.0, p.seg};
            gk15(segs[p.seg].g, a2, b2, q.value, q.err);
            total += q.value;
            toterr += q.err;
            heap.push(q);
        }
        ++splits;
    }
    IntegrationResult r;
    r.value = total;
    r.error = toterr;
    r.panels = static_cast<std::size_t>(splits) + segs.size();
    return r;
}

constexpr double singular_sub_power = 8.0;  // x = s +/- u^8 flattens |x-s|^{-b}, b < 7/8

}  // namespace detail

// Adaptive integration of `f` over [lo, hi] with mandatory splits and
// power-law substitution on panels adjacent to algebraic singularities.
template <class F>
inline IntegrationResult integrate_adaptive(const F& f, double lo, double hi,
                                            std::span<const double> splits,
                                            std::span<const SingularPoint> singulars,
                                            const QuadratureConfig& cfg) {
    std::vector<double> pts{lo, hi};
    for (double s : splits)
        if (s > lo && s < hi) pts.push_back(s);
    for (double s : cfg.extra_splits)
        if (s > lo && s < hi) pts.push_back(s);
    for (const auto& sp : singulars)
        if (sp.x > lo && sp.x < hi) pts.push_back(sp.x);
    std::sort(pts.begin(), pts.end());
    pts.erase(std::unique(pts.begin(), pts.end()), pts.end());

    auto singular_at = [&](double x) {
        for (const auto& sp : singulars)
            if (sp.x == x) return true;
        return false;
    };

    const double m = detail::singular_sub_power;
    std::vector<detail::Segment> segs;
    for (std::size_t i = 0; i + 1 < pts.size(); ++i) {
        double a = pts[i], b = pts[i + 1];
        bool sing_left = singular_at(a), sing_right = singular_at(b);
        if (sing_left && sing_right) {
            double mid = 0.5 * (a + b);
            segs.push_back({0.0, std::pow(mid - a, 1.0 / m), [f, a, m](double u) {
                                double um = std::pow(u, m);
                                return f(a + um) * m * um / u;
                            }});
            segs.push_back({0.0, std::pow(b - mid, 1.0 / m), [f, b, m](double u) {
                                double um = std::pow(u, m);
                                return f(b - um) * m * um / u;
                            }});
        } else if (sing_left) {
            segs.push_back({0.0, std::pow(b - a, 1.0 / m), [f, a, m](double u) {
                                double um = std::pow(u, m);
                                return f(a + um) * m * um / u;
                            }});
        } else if (sing_right) {
            segs.push_back({0.0, std::pow(b - a, 1.0 / m), [f, b, m](double u) {
                                double um = std::pow(u, m);
                                return f(b - um) * m * um / u;
                            }});
        } else {
            segs.push_back({a, b, [f](double x) { return f(x); }});
        }
    }
    return detail::integrate_segments(segs, cfg.abs_tol, cfg.max_subdivisions);
}

namespace detail {

// Panels must start at the scale of the density's features, otherwise a wide
// initial panel can miss a narrow bump entirely and report zero error.
inline void add_feature_splits(std::vector<double>& splits, const DensityView& v) {
    for (double m : {-8.0, -4.0, -2.0, -1.0, 0.0, 1.0, 2.0, 4.0, 8.0})
        splits.push_back(v.center + m * v.spread);
    for (double b : v.breakpoints)
        for (double off : {-0.5, 0.5}) splits.push_back(b + off * std::max(v.spread, 1e-6));
}

// Expand the window until the analytic tail bound drops below the budget.
inline std::pair<double, double> window_for(const std::function<double(double, double)>& tail,
                                            double lo0, double hi0, double budget) {
    double lo = lo0, hi = hi0;
    for (int i = 0; i < 256 && tail(lo, hi) > budget; ++i) {
        double w = std::max(hi - lo, 1.0);
        lo -= w;
        hi += w;
    }
    return {lo, hi};
}

template <class F>
inline IntegrationResult mc_estimate(const F& f, double center, double spread, int n,
                                     std::uint64_t seed) {
    RngStream rng(seed);
    double s = std::max(spread, 1e-6);
    double sum = 0.0, sum2 = 0.0;
    for (int i = 0; i < n; ++i) {
        double x = center + s * rng.cauchy();
        double q = detail::cauchy_pdf(x, center, s);
        double v = f(x) / q;
        if (!std::isfinite(v)) v = 0.0;
        sum += v;
        sum2 += v * v;
    }
    double mean = sum / n;
    double var = std::max(0.0, sum2 / n - mean * mean);
    IntegrationResult r;
    r.value = mean;
    r.mc_se = std::sqrt(var / n);
    r.used_mc = true;
    r.error = r.mc_se;
    return r;
}

}  // namespace detail

// Integral of the density over the real line. Expected to be 1 for any valid
// emission or mixture density.
inline IntegrationResult integrate_density(const DensityView& v, const QuadratureConfig& cfg = {}) {
    double budget = cfg.abs_tol * cfg.tail_factor;
    auto [lo, hi] = detail::window_for(v.tail, v.center - 2.0 * v.spread,
                                       v.center + 2.0 * v.spread, budget);
    for (double b : v.breakpoints) {
        lo = std::min(lo, b - 1.0);
        hi = std::max(hi, b + 1.0);
    }
    std::vector<double> splits = v.breakpoints;
    detail::add_feature_splits(splits, v);
    auto res = integrate_adaptive(v.pdf, lo, hi, splits, v.singularities, cfg);
    res.error += budget;
    if (res.error > 10.0 * cfg.abs_tol) {
        auto mc = detail::mc_estimate(v.pdf, v.center, 4.0 * v.spread, cfg.mc_fallback_samples,
                                      cfg.mc_seed);
        if (mc.mc_se > 1e-3) throw NumericError("integrate_density: quadrature and MC fallback both failed");
        return mc;
    }
    return res;
}

// Squared Hellinger distance via the Bhattacharyya form 1 - int sqrt(p q).
inline IntegrationResult hellinger2_result(const DensityView& p, const DensityView& q,
                                           const QuadratureConfig& cfg = {}) {
    auto f = [&](double x) {
        double a = p.pdf(x), b = q.pdf(x);
        if (a <= 0.0 || b <= 0.0) return 0.0;
        return std::sqrt(a) * std::sqrt(b);
    };
    // Combined singular structure: sqrt halves each order; coincident points add.
    std::vector<SingularPoint> sing;
    for (const auto& sp : p.singularities) sing.push_back({sp.x, 0.5 * sp.order});
    for (const auto& sq : q.singularities) {
        bool merged = false;
        for (auto& sp : sing)
            if (sp.x == sq.x) {
                sp.order += 0.5 * sq.order;
                merged = true;
            }
        if (!merged) sing.push_back({sq.x, 0.5 * sq.order});
    }
    std::vector<double> splits = p.breakpoints;
    splits.insert(splits.end(), q.breakpoints.begin(), q.breakpoints.end());
    detail::add_feature_splits(splits, p);
    detail::add_feature_splits(splits, q);

    // Cauchy-Schwarz: the sqrt(pq) mass outside [lo,hi] is bounded by the
    // geometric mean of the tail masses.
    double budget = cfg.abs_tol * cfg.tail_factor;
    auto tail_bound = [&](double lo, double hi) {
        return std::sqrt(std::max(0.0, p.tail(lo, hi)) * std::max(0.0, q.tail(lo, hi)));
    };
    double lo0 = std::min(p.center - 2.0 * p.spread, q.center - 2.0 * q.spread);
    double hi0 = std::max(p.center + 2.0 * p.spread, q.center + 2.0 * q.spread);
    auto [lo, hi] = detail::window_for(tail_bound, lo0, hi0, budget);

    auto res = integrate_adaptive(f, lo, hi, splits, sing, cfg);
    res.error += budget;
    if (res.error > 10.0 * cfg.abs_tol) {
        double ctr = 0.5 * (p.center + q.center);
        double spr = std::max({p.spread, q.spread, 0.5 * std::abs(p.center - q.center)});
        auto mc = detail::mc_estimate(f, ctr, 4.0 * spr, cfg.mc_fallback_samples, cfg.mc_seed);
        if (mc.mc_se > 1e-3) throw NumericError("hellinger2: quadrature and MC fallback both failed");
        mc.value = std::min(1.0, std::max(0.0, 1.0 - mc.value));
        return mc;
    }
    res.value = std::min(1.0, std::max(0.0, 1.0 - res.value));
    return res;
}

inline double hellinger2_numeric(const DensityView& p, const DensityView& q,
                                 const QuadratureConfig& cfg = {}) {
    return hellinger2_result(p, q, cfg).value;
}

// Cumulative masses of `v` at an increasing sequence of points, computed by
// panel-wise integration; used to compare samples against the numeric CDF.
inline std::vector<double> cumulative_masses(const DensityView& v, std::span<const double> xs,
                                             const QuadratureConfig& cfg = {}) {
    std::vector<double> out(xs.size());
    if (xs.empty()) return out;
    double budget = cfg.abs_tol * cfg.tail_factor;
    auto [lo, hi] = detail::window_for(v.tail, v.center - 2.0 * v.spread,
                                       v.center + 2.0 * v.spread, budget);
    lo = std::min(lo, xs.front() - 1.0);
    QuadratureConfig local = cfg;
    local.max_subdivisions = 64;
    double acc = 0.0, prev = lo;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        if (xs[i] > prev) {
            auto r = integrate_adaptive(v.pdf, prev, xs[i], v.breakpoints, v.singularities, local);
            acc += r.value;
            prev = xs[i];
        }
        out[i] = std::min(acc, 1.0);
    }
    return out;
}

}  // namespace rhomix
