#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

#include "rhomix/mixture.hpp"

namespace rhomix {

// Constants attached to the choice psi(x) = (x-1)/(x+1).
struct PsiConstants {
    static constexpr double a0 = 4.0;
    static constexpr double a1 = 3.0 / 8.0;
    static double a2() { return std::sqrt(3.0 * std::sqrt(2.0)); }  // a2^2 = 3 sqrt(2)
    static constexpr double slack = 8.24;
    static constexpr double default_kappa = 470.0;  // tightest value with 4 kappa / a1 < 5014
};

// psi: [0, +inf] -> [-1, 1], x -> (x-1)/(x+1), psi(+inf) = 1.
inline double psi(double x) {
    if (std::isnan(x) || x < 0.0) throw std::domain_error("psi: argument must be >= 0 or +inf");
    if (std::isinf(x)) return 1.0;
    return (x - 1.0) / (x + 1.0);
}

// One term of the T statistic from the square roots of the two densities:
// psi(sqrt(q'/q)) = (s' - s)/(s' + s). Negation-exact under swapping, so
// T(X,q,q') + T(X,q',q) = 0 down to the last bit. Conventions: 0/0 -> 1
// (term 0) and a/0 -> +inf (term 1); two infinite densities compare as equal.
inline double psi_term(double sqrt_q, double sqrt_qp) {
    double t = (sqrt_qp - sqrt_q) / (sqrt_qp + sqrt_q);
    if (std::isnan(t)) {
        if (sqrt_q == sqrt_qp) return 0.0;
        return sqrt_qp > sqrt_q ? 1.0 : -1.0;
    }
    return t;
}

// T over precomputed sqrt-density vectors.
inline double t_statistic_sqrt(std::span<const double> sqrt_q, std::span<const double> sqrt_qp) {
    double acc = 0.0;
    for (std::size_t i = 0; i < sqrt_q.size(); ++i) acc += psi_term(sqrt_q[i], sqrt_qp[i]);
    return acc;
}

inline std::vector<double> sqrt_density_vector(const MixtureCandidate& c,
                                               std::span<const double> x) {
    std::vector<double> s(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) s[i] = std::sqrt(mixture_density(c, x[i]));
    return s;
}

// T(X, q, q') = sum_i psi(sqrt(q'(X_i)/q(X_i))).
inline double t_statistic(std::span<const double> x, const MixtureCandidate& q,
                          const MixtureCandidate& qp) {
    double acc = 0.0;
    for (double xi : x)
        acc += psi_term(std::sqrt(mixture_density(q, xi)), std::sqrt(mixture_density(qp, xi)));
    return acc;
}

// ---- default delta, penalty, rho-dimension ----

inline double log_plus(double x) { return std::max(std::log(x), 0.0); }

// delta = 1 for K = 1 and Vbar/(n(K-1)) ^ 1/K otherwise.
inline double delta_default(std::size_t K, double v_bar, std::size_t n) {
    if (K < 1) throw std::domain_error("delta_default: K must be >= 1");
    if (K == 1) return 1.0;
    return std::min(v_bar / (static_cast<double>(n) * static_cast<double>(K - 1)),
                    1.0 / static_cast<double>(K));
}

// kappa * (174.1 Vbar [5.82 + log((K+1)^2/delta) + log+(n/Vbar)] + Delta).
inline double penalty_value(const ModelDescriptor& d, std::size_t n, double kappa, double Delta) {
    if (!(d.delta > 0.0)) throw std::domain_error("penalty_value: delta must be positive");
    double v = static_cast<double>(d.vc_sum);
    double kp1 = static_cast<double>(d.K + 1);
    double bracket = 5.82 + std::log(kp1 * kp1 / d.delta) + log_plus(static_cast<double>(n) / v);
    return kappa * (174.1 * v * bracket + Delta);
}

// 818.1 Vbar [5.82 + log((K+1)^2/delta) + log+(n/Vbar)], capped at n/6.
inline double rho_dimension_bound(double v_bar, std::size_t K, double delta, std::size_t n) {
    if (!(delta > 0.0)) throw std::domain_error("rho_dimension_bound: delta must be positive");
    double kp1 = static_cast<double>(K + 1);
    double bracket = 5.82 + std::log(kp1 * kp1 / delta) + log_plus(static_cast<double>(n) / v_bar);
    return std::min(818.1 * v_bar * bracket, static_cast<double>(n) / 6.0);
}

// Penalty assignment across a collection of descriptors; Delta must satisfy
// sum exp(-Delta) <= 1 over the collection.
struct PenaltySpec {
    double kappa = PsiConstants::default_kappa;
    std::function<double(const ModelDescriptor&)> Delta = [](const ModelDescriptor&) { return 0.0; };

    void validate_summability(std::span<const ModelDescriptor> thetas) const {
        double s = 0.0;
        for (const auto& d : thetas) s += std::exp(-Delta(d));
        if (s > 1.0 + 1e-9)
            throw std::domain_error("PenaltySpec: sum of exp(-Delta) over the collection exceeds 1");
    }
};

// ---- estimator search over explicit candidate sets ----

struct SearchError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

enum class SearchMode { Exhaustive, Heuristic };

struct SearchConfig {
    SearchMode mode = SearchMode::Exhaustive;
    std::size_t max_rows = std::numeric_limits<std::size_t>::max();
    bool keep_table = false;
};

struct RhoFit {
    MixtureCandidate chosen;
    double upsilon = 0.0;
    double penalty_of_chosen = 0.0;
    std::size_t chosen_index = 0;      // index across the concatenated sets
    std::size_t descriptor_index = 0;  // which candidate set it came from
    SearchMode mode = SearchMode::Exhaustive;
    bool table_exhaustive = false;
    std::size_t rows_evaluated = 0;
    std::size_t n_candidates = 0;
    std::optional<std::vector<double>> upsilon_table;
};

namespace detail {

struct FlatSets {
    std::vector<const MixtureCandidate*> cand;
    std::vector<double> pen;  // per candidate (its descriptor's penalty)
    std::vector<std::size_t> set_of;
};

inline FlatSets flatten(std::span<const CandidateSet> sets, std::span<const double> pen_per_set) {
    if (sets.empty()) throw std::domain_error("rho_estimate: empty collection of candidate sets");
    if (!pen_per_set.empty() && pen_per_set.size() != sets.size())
        throw std::domain_error("rho_estimate: one penalty per candidate set required");
    FlatSets f;
    for (std::size_t s = 0; s < sets.size(); ++s) {
        double pen = pen_per_set.empty() ? 0.0 : pen_per_set[s];
        for (const auto& c : sets[s].candidates) {
            f.cand.push_back(&c);
            f.pen.push_back(pen);
            f.set_of.push_back(s);
        }
    }
    if (f.cand.empty()) throw std::domain_error("rho_estimate: no candidates");
    return f;
}

}  // namespace detail

// Penalized criterion of one candidate against a collection of sets:
// sup_{q'} [T(X,q,q') - pen(q')] + pen(q).
inline double upsilon(std::span<const double> x, const MixtureCandidate& q,
                      std::span<const CandidateSet> sets, std::span<const double> pen_per_set,
                      double pen_of_q) {
    auto flat = detail::flatten(sets, pen_per_set);
    auto sq = sqrt_density_vector(q, x);
    double best = -std::numeric_limits<double>::infinity();
    std::vector<double> sp(x.size());
    for (std::size_t j = 0; j < flat.cand.size(); ++j) {
        for (std::size_t i = 0; i < x.size(); ++i)
            sp[i] = std::sqrt(mixture_density(*flat.cand[j], x[i]));
        best = std::max(best, t_statistic_sqrt(sq, sp) - flat.pen[j]);
    }
    return best + pen_of_q;
}

inline double upsilon(std::span<const double> x, const MixtureCandidate& q,
                      const CandidateSet& set) {
    return upsilon(x, q, std::span<const CandidateSet>(&set, 1), {}, 0.0);
}

// The rho-estimator over the union of the given sets: the candidate minimizing
// Upsilon, ties resolved by the first index. Exhaustive mode evaluates every
// row; heuristic mode prunes rows via the lower bound
// Upsilon(q) >= -T(q0, q) - pen(q0) + pen(q) obtained from each evaluated row,
// and returns the same minimizer whenever it runs to completion.
inline RhoFit rho_estimate(std::span<const double> x, std::span<const CandidateSet> sets,
                           std::span<const double> pen_per_set, const SearchConfig& cfg = {}) {
    auto flat = detail::flatten(sets, pen_per_set);
    const std::size_t m = flat.cand.size();
    const std::size_t n = x.size();

    if (m * n > 300'000'000ULL)
        throw SearchError("rho_estimate: candidate set too large for explicit search");
    if (cfg.max_rows == 0) throw SearchError("rho_estimate: row budget exhausted before any evaluation");

    std::vector<std::vector<double>> sq(m);
    for (std::size_t j = 0; j < m; ++j) sq[j] = sqrt_density_vector(*flat.cand[j], x);

    std::vector<double> table(cfg.keep_table ? m : 0,
                              std::numeric_limits<double>::quiet_NaN());
    std::vector<double> trow(m);

    auto eval_row = [&](std::size_t i) {
        double best = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < m; ++j) {
            double t = t_statistic_sqrt(sq[i], sq[j]);
            trow[j] = t;
            best = std::max(best, t - flat.pen[j]);
        }
        return best + flat.pen[i];
    };

    double best_upsilon = std::numeric_limits<double>::infinity();
    std::size_t best_index = 0;
    std::size_t rows = 0;

    if (cfg.mode == SearchMode::Exhaustive) {
        if (m > cfg.max_rows) throw SearchError("rho_estimate: exhaustive search exceeds the row budget");
        for (std::size_t i = 0; i < m; ++i) {
            double u = eval_row(i);
            if (cfg.keep_table) table[i] = u;
            if (u < best_upsilon) {
                best_upsilon = u;
                best_index = i;
            }
            ++rows;
        }
    } else {
        const double neg_inf = -std::numeric_limits<double>::infinity();
        std::vector<double> lower(m, neg_inf);
        std::vector<char> done(m, 0);
        std::size_t next = 0;
        while (rows < cfg.max_rows) {
            double u = eval_row(next);
            done[next] = 1;
            ++rows;
            if (cfg.keep_table) table[next] = u;
            if (u < best_upsilon) {
                best_upsilon = u;
                best_index = next;
            } else if (u == best_upsilon && next < best_index) {
                best_index = next;
            }
            for (std::size_t j = 0; j < m; ++j)
                lower[j] = std::max(lower[j], -trow[j] - flat.pen[next] + flat.pen[j]);
            // most promising unevaluated candidate that could still tie or win
            bool found = false;
            double best_lb = std::numeric_limits<double>::infinity();
            for (std::size_t j = 0; j < m; ++j) {
                if (done[j] || lower[j] > best_upsilon) continue;
                if (!found || lower[j] < best_lb) {
                    found = true;
                    best_lb = lower[j];
                    next = j;
                }
            }
            if (!found) break;
        }
    }

    RhoFit fit;
    fit.chosen = *flat.cand[best_index];
    fit.upsilon = best_upsilon;
    fit.penalty_of_chosen = flat.pen[best_index];
    fit.chosen_index = best_index;
    fit.descriptor_index = flat.set_of[best_index];
    fit.mode = cfg.mode;
    fit.table_exhaustive = rows == m;
    fit.rows_evaluated = rows;
    fit.n_candidates = m;
    if (cfg.keep_table) fit.upsilon_table = std::move(table);
    return fit;
}

inline RhoFit rho_estimate(std::span<const double> x, const CandidateSet& set,
                           const SearchConfig& cfg = {}) {
    return rho_estimate(x, std::span<const CandidateSet>(&set, 1), {}, cfg);
}

// Affine image of a candidate under y = (x - a) / b for location-scale
// families; with the data mapped the same way, all T values are unchanged.
inline MixtureCandidate affine_transform_candidate(const MixtureCandidate& c, double a, double b) {
    if (!(b > 0.0)) throw std::domain_error("affine_transform_candidate: b must be positive");
    MixtureCandidate out = c;
    for (auto& comp : out.components) {
        comp.params.location = (comp.params.location - a) / b;
        if (comp.spec.has_scale()) comp.params.scale = comp.params.scale / b;
    }
    return out;
}

}  // namespace rhomix
