#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "rhomix/mixture.hpp"
#include "rhomix/quadrature.hpp"

namespace rhomix {

struct MixingAtom {
    double z = 0.0;
    double sigma = 1.0;
    double mass = 1.0;
};

// Mixing distribution H over (location, scale); p_H(x) = int phi_sigma(x-z) dH.
// Either a discrete list of atoms or the uniform distribution on a rectangle.
struct MixingMeasure {
    enum class Kind { Discrete, UniformRect };
    Kind kind = Kind::Discrete;
    std::vector<MixingAtom> atoms;
    double z_lo = 0.0, z_hi = 0.0, s_lo = 1.0, s_hi = 1.0;

    static MixingMeasure discrete(std::vector<MixingAtom> a) {
        double total = 0.0;
        for (const auto& atom : a) {
            if (atom.mass < 0.0) throw std::domain_error("MixingMeasure: negative mass");
            if (!(atom.sigma > 0.0)) throw std::domain_error("MixingMeasure: sigma must be positive");
            total += atom.mass;
        }
        if (std::abs(total - 1.0) > 1e-9) throw std::domain_error("MixingMeasure: masses must sum to 1");
        MixingMeasure h;
        h.kind = Kind::Discrete;
        h.atoms = std::move(a);
        return h;
    }
    static MixingMeasure uniform_rect(double z_lo, double z_hi, double s_lo, double s_hi) {
        if (z_hi < z_lo || s_hi < s_lo || !(s_lo > 0.0))
            throw std::domain_error("MixingMeasure: invalid rectangle");
        MixingMeasure h;
        h.kind = Kind::UniformRect;
        h.z_lo = z_lo;
        h.z_hi = z_hi;
        h.s_lo = s_lo;
        h.s_hi = s_hi;
        return h;
    }
};

// Mixed moment int z^l sigma^{-(2j+1)} dH(z, sigma); closed form for the
// uniform rectangle, a finite sum for discrete measures.
inline double mixing_moment(const MixingMeasure& h, int l, int j) {
    if (h.kind == MixingMeasure::Kind::Discrete) {
        double acc = 0.0;
        for (const auto& a : h.atoms)
            acc += a.mass * std::pow(a.z, l) * std::pow(a.sigma, -(2.0 * j + 1.0));
        return acc;
    }
    double mz;
    if (h.z_hi == h.z_lo) {
        mz = std::pow(h.z_lo, l);
    } else {
        mz = (std::pow(h.z_hi, l + 1) - std::pow(h.z_lo, l + 1)) /
             (static_cast<double>(l + 1) * (h.z_hi - h.z_lo));
    }
    double ms;
    if (h.s_hi == h.s_lo) {
        ms = std::pow(h.s_lo, -(2.0 * j + 1.0));
    } else if (j == 0) {
        ms = (std::log(h.s_hi) - std::log(h.s_lo)) / (h.s_hi - h.s_lo);
    } else {
        double p = 2.0 * j;
        ms = (std::pow(h.s_lo, -p) - std::pow(h.s_hi, -p)) / (p * (h.s_hi - h.s_lo));
    }
    return mz * ms;
}

namespace detail {

// Gauss-Legendre nodes and weights on [-1,1] by Newton iteration.
inline void gauss_legendre(int n, std::vector<double>& x, std::vector<double>& w) {
    x.resize(n);
    w.resize(n);
    for (int i = 0; i < (n + 1) / 2; ++i) {
        double t = std::cos(pi_v * (i + 0.75) / (n + 0.5));
        double p0, p1, dp;
        for (int iter = 0; iter < 100; ++iter) {
            p0 = 1.0;
            p1 = t;
            for (int k = 2; k <= n; ++k) {
                double p2 = ((2.0 * k - 1.0) * t * p1 - (k - 1.0) * p0) / k;
                p0 = p1;
                p1 = p2;
            }
            dp = n * (t * p1 - p0) / (t * t - 1.0);
            double dt = p1 / dp;
            t -= dt;
            if (std::abs(dt) < 1e-15) break;
        }
        x[i] = -t;
        x[n - 1 - i] = t;
        w[i] = w[n - 1 - i] = 2.0 / ((1.0 - t * t) * dp * dp);
    }
}

}  // namespace detail

// p_H(x): exact finite sum for discrete H, a fixed-order Gauss-Legendre
// product rule over the rectangle otherwise (smooth integrand).
inline double mixing_density(const MixingMeasure& h, double x) {
    if (h.kind == MixingMeasure::Kind::Discrete) {
        double acc = 0.0;
        for (const auto& a : h.atoms) acc += a.mass * detail::gaussian_pdf(x, a.z, a.sigma);
        return acc;
    }
    static thread_local std::vector<double> gz, gw, sz, sw;
    if (gz.empty()) {
        detail::gauss_legendre(48, gz, gw);
        detail::gauss_legendre(24, sz, sw);
    }
    double acc = 0.0;
    double zc = 0.5 * (h.z_hi + h.z_lo), zr = 0.5 * (h.z_hi - h.z_lo);
    double sc = 0.5 * (h.s_hi + h.s_lo), sr = 0.5 * (h.s_hi - h.s_lo);
    if (zr == 0.0 && sr == 0.0) return detail::gaussian_pdf(x, zc, sc);
    if (sr == 0.0) {
        for (std::size_t i = 0; i < gz.size(); ++i)
            acc += 0.5 * gw[i] * detail::gaussian_pdf(x, zc + zr * gz[i], sc);
        return acc;
    }
    if (zr == 0.0) {
        for (std::size_t j = 0; j < sz.size(); ++j)
            acc += 0.5 * sw[j] * detail::gaussian_pdf(x, zc, sc + sr * sz[j]);
        return acc;
    }
    for (std::size_t i = 0; i < gz.size(); ++i)
        for (std::size_t j = 0; j < sz.size(); ++j)
            acc += 0.25 * gw[i] * sw[j] * detail::gaussian_pdf(x, zc + zr * gz[i], sc + sr * sz[j]);
    return acc;
}

inline DensityView mixing_view(const MixingMeasure& h) {
    DensityView v;
    MixingMeasure copy = h;
    v.pdf = [copy](double x) { return mixing_density(copy, x); };
    double z_hi = copy.kind == MixingMeasure::Kind::Discrete ? -1e300 : copy.z_hi;
    double z_lo = copy.kind == MixingMeasure::Kind::Discrete ? 1e300 : copy.z_lo;
    double s_hi = copy.kind == MixingMeasure::Kind::Discrete ? 0.0 : copy.s_hi;
    for (const auto& a : copy.atoms) {
        z_hi = std::max(z_hi, a.z);
        z_lo = std::min(z_lo, a.z);
        s_hi = std::max(s_hi, a.sigma);
    }
    v.center = 0.5 * (z_lo + z_hi);
    v.spread = 0.5 * (z_hi - z_lo) + s_hi;
    // every component tail is dominated by the widest Gaussian at the rim
    v.tail = [z_lo, z_hi, s_hi](double lo, double hi) {
        double a = detail::normal_cdf((lo - z_lo) / s_hi);
        double b = detail::normal_cdf((z_hi - hi) / s_hi);
        return std::min(1.0, a + b);
    };
    return v;
}

inline double sample_mixing_one(const MixingMeasure& h, RngStream& rng) {
    double z, s;
    if (h.kind == MixingMeasure::Kind::Discrete) {
        double u = rng.uniform01(), acc = 0.0;
        std::size_t i = 0;
        for (; i + 1 < h.atoms.size(); ++i) {
            acc += h.atoms[i].mass;
            if (u < acc) break;
        }
        z = h.atoms[i].z;
        s = h.atoms[i].sigma;
    } else {
        z = rng.uniform(h.z_lo, h.z_hi);
        s = rng.uniform(h.s_lo, h.s_hi);
    }
    return z + s * rng.normal();
}

// K = ceil(2 R^4 log^2(n) / 27) for approximating a continuous Gaussian
// mixture of class C(A,R) by a finite one.
struct KForContinuous {
    std::size_t K = 1;
    bool preconditions_ok = true;
    std::string message;
};

inline KForContinuous k_for_continuous(double R, std::size_t n, double A = -1.0) {
    if (!(R >= 1.0)) throw std::domain_error("k_for_continuous: R must be >= 1");
    if (n < 3) throw std::domain_error("k_for_continuous: n must be >= 3");
    KForContinuous out;
    double ln = std::log(static_cast<double>(n));
    out.K = static_cast<std::size_t>(std::ceil(2.0 * std::pow(R, 4) * ln * ln / 27.0));
    out.K = std::max<std::size_t>(out.K, 1);
    std::ostringstream msg;
    if (static_cast<double>(n) / (ln * ln) < 2.0 * R * R / 27.0) {
        out.preconditions_ok = false;
        msg << "n/log^2(n) < 2R^2/27; ";
    }
    if (A >= 0.0 && static_cast<double>(n) < std::exp(2.0 * (A / R) * (A / R))) {
        out.preconditions_ok = false;
        msg << "n < exp(2(A/R)^2); ";
    }
    out.message = msg.str();
    return out;
}

namespace detail {

// Phase-1 simplex for A x = b, x >= 0 (rows scaled, b made nonnegative);
// returns the basic feasible solution or nullopt when no feasible point
// exists at the grid resolution.
inline std::optional<std::vector<double>> lp_feasible_basic(std::vector<std::vector<double>> A,
                                                            std::vector<double> b) {
    const std::size_t m = A.size();
    const std::size_t ncols = A.empty() ? 0 : A[0].size();
    for (std::size_t r = 0; r < m; ++r) {
        double scale = std::abs(b[r]);
        for (double v : A[r]) scale = std::max(scale, std::abs(v));
        if (scale > 0.0) {
            for (double& v : A[r]) v /= scale;
            b[r] /= scale;
        }
        if (b[r] < 0.0) {
            for (double& v : A[r]) v = -v;
            b[r] = -b[r];
        }
    }
    // tableau with artificial basis
    std::size_t total = ncols + m;
    std::vector<std::vector<double>> T(m, std::vector<double>(total + 1, 0.0));
    for (std::size_t r = 0; r < m; ++r) {
        for (std::size_t c = 0; c < ncols; ++c) T[r][c] = A[r][c];
        T[r][ncols + r] = 1.0;
        T[r][total] = b[r];
    }
    std::vector<std::size_t> basis(m);
    for (std::size_t r = 0; r < m; ++r) basis[r] = ncols + r;
    // phase-1 objective row: minimize sum of artificials
    std::vector<double> obj(total + 1, 0.0);
    for (std::size_t r = 0; r < m; ++r)
        for (std::size_t c = 0; c <= total; ++c) obj[c] += T[r][c];

    const double eps = 1e-11;
    for (long iter = 0; iter < 20000; ++iter) {
        // Bland's rule: smallest structural-then-artificial index with positive reduced cost
        std::size_t pivot_col = total;
        for (std::size_t c = 0; c < total; ++c)
            if (obj[c] > eps) {
                pivot_col = c;
                break;
            }
        if (pivot_col == total) break;
        std::size_t pivot_row = m;
        double best_ratio = 0.0;
        for (std::size_t r = 0; r < m; ++r) {
            if (T[r][pivot_col] > eps) {
                double ratio = T[r][total] / T[r][pivot_col];
                if (pivot_row == m || ratio < best_ratio - 1e-15 ||
                    (std::abs(ratio - best_ratio) <= 1e-15 && basis[r] < basis[pivot_row])) {
                    pivot_row = r;
                    best_ratio = ratio;
                }
            }
        }
        if (pivot_row == m) break;  // unbounded direction in phase 1: cannot happen
        double piv = T[pivot_row][pivot_col];
        for (std::size_t c = 0; c <= total; ++c) T[pivot_row][c] /= piv;
        for (std::size_t r = 0; r < m; ++r) {
            if (r == pivot_row) continue;
            double f = T[r][pivot_col];
            if (f == 0.0) continue;
            for (std::size_t c = 0; c <= total; ++c) T[r][c] -= f * T[pivot_row][c];
        }
        double f = obj[pivot_col];
        for (std::size_t c = 0; c <= total; ++c) obj[c] -= f * T[pivot_row][c];
        basis[pivot_row] = pivot_col;
    }
    // residual objective = remaining artificial mass
    double infeas = 0.0;
    for (std::size_t r = 0; r < m; ++r)
        if (basis[r] >= ncols) infeas += std::abs(T[r][total]);
    if (infeas > 1e-9) return std::nullopt;

    std::vector<double> sol(ncols, 0.0);
    for (std::size_t r = 0; r < m; ++r)
        if (basis[r] < ncols) sol[basis[r]] = std::max(0.0, T[r][total]);
    return sol;
}

}  // namespace detail

// Discrete measure on at most k(2k-1)+1 support points matching the mixed
// moments z^l sigma^{-(2j+1)}, l <= 2k-2, j <= k-1, plus the total mass.
// Constructed as a basic feasible solution of the moment system on a support
// grid, refining the grid when the system is infeasible at its resolution.
inline MixingMeasure discretize_mixing_measure(const MixingMeasure& h, int k,
                                               std::size_t grid_z = 33, std::size_t grid_s = 9,
                                               int max_refines = 4) {
    if (k < 1) throw std::domain_error("discretize_mixing_measure: k must be >= 1");
    std::size_t max_atoms = static_cast<std::size_t>(k) * (2 * k - 1) + 1;
    if (h.kind == MixingMeasure::Kind::Discrete && h.atoms.size() <= max_atoms) return h;

    double z_lo, z_hi, s_lo, s_hi;
    if (h.kind == MixingMeasure::Kind::Discrete) {
        z_lo = 1e300, z_hi = -1e300, s_lo = 1e300, s_hi = 0.0;
        for (const auto& a : h.atoms) {
            z_lo = std::min(z_lo, a.z);
            z_hi = std::max(z_hi, a.z);
            s_lo = std::min(s_lo, a.sigma);
            s_hi = std::max(s_hi, a.sigma);
        }
    } else {
        z_lo = h.z_lo;
        z_hi = h.z_hi;
        s_lo = h.s_lo;
        s_hi = h.s_hi;
    }

    std::vector<std::pair<int, int>> moments;  // (l, j)
    for (int l = 0; l <= 2 * k - 2; ++l)
        for (int j = 0; j <= k - 1; ++j) moments.emplace_back(l, j);
    std::vector<double> b;
    for (auto [l, j] : moments) b.push_back(mixing_moment(h, l, j));
    b.push_back(1.0);  // total mass

    for (int refine = 0; refine <= max_refines; ++refine) {
        std::size_t nz = grid_z << refine;
        std::size_t ns = (s_hi > s_lo) ? (grid_s << refine) : 1;
        std::vector<std::pair<double, double>> grid;
        for (std::size_t i = 0; i < nz; ++i) {
            double z = nz == 1 ? z_lo
                               : z_lo + (z_hi - z_lo) * static_cast<double>(i) /
                                            static_cast<double>(nz - 1);
            for (std::size_t j = 0; j < ns; ++j) {
                double s = ns == 1 ? s_lo
                                   : s_lo + (s_hi - s_lo) * static_cast<double>(j) /
                                                static_cast<double>(ns - 1);
                grid.emplace_back(z, s);
            }
        }
        std::vector<std::vector<double>> A(b.size(), std::vector<double>(grid.size()));
        for (std::size_t r = 0; r < moments.size(); ++r) {
            auto [l, j] = moments[r];
            for (std::size_t c = 0; c < grid.size(); ++c)
                A[r][c] = std::pow(grid[c].first, l) *
                          std::pow(grid[c].second, -(2.0 * j + 1.0));
        }
        for (std::size_t c = 0; c < grid.size(); ++c) A[b.size() - 1][c] = 1.0;

        auto sol = detail::lp_feasible_basic(A, b);
        if (!sol) continue;
        // verify the basic solution against the unscaled system
        std::vector<MixingAtom> atoms;
        for (std::size_t c = 0; c < sol->size(); ++c)
            if ((*sol)[c] > 1e-13) atoms.push_back({grid[c].first, grid[c].second, (*sol)[c]});
        bool ok = atoms.size() <= max_atoms;
        for (std::size_t r = 0; r < b.size() && ok; ++r) {
            double lhs = 0.0;
            for (const auto& a : atoms)
                lhs += (r < moments.size())
                           ? a.mass * std::pow(a.z, moments[r].first) *
                                 std::pow(a.sigma, -(2.0 * moments[r].second + 1.0))
                           : a.mass;
            double scale = std::max(std::abs(b[r]), 1.0);
            if (std::abs(lhs - b[r]) > 1e-8 * scale) ok = false;
        }
        if (!ok) continue;
        double total = 0.0;
        for (const auto& a : atoms) total += a.mass;
        for (auto& a : atoms) a.mass /= total;
        return MixingMeasure::discrete(std::move(atoms));
    }
    throw NumericError("discretize_mixing_measure: no feasible grid up to the refinement cap");
}

}  // namespace rhomix
