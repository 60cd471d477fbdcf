#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <span>
#include <stdexcept>
#include <vector>

#include "rhomix/hungarian.hpp"
#include "rhomix/mixture.hpp"
#include "rhomix/quadrature.hpp"

namespace rhomix {

// Closed form for two univariate Gaussians (sigma are standard deviations);
// serves as the oracle for the numeric engine.
inline double hellinger2_gaussian(double mu1, double s1, double mu2, double s2) {
    if (!(s1 > 0.0) || !(s2 > 0.0)) throw std::domain_error("hellinger2_gaussian: scales must be positive");
    double ss = s1 * s1 + s2 * s2;
    double d = mu1 - mu2;
    return 1.0 - std::sqrt(2.0 * s1 * s2 / ss) * std::exp(-d * d / (4.0 * ss));
}

// Squared product-measure distance: the sum of per-coordinate squared
// Hellinger distances.
inline double product_hellinger2(std::span<const double> h2_values) {
    double acc = 0.0;
    for (double h : h2_values) {
        if (!(h >= 0.0 && h <= 1.0)) throw std::domain_error("product_hellinger2: inputs must lie in [0,1]");
        acc += h;
    }
    return acc;
}

// (h(w,v) + max_k h(F_k,G_k))^2, an upper bound for the squared Hellinger
// distance between the mixtures with aligned components.
inline double mixture_hellinger_upper_bound(const WeightVector& w, const WeightVector& v,
                                            std::span<const double> component_h2) {
    if (w.size() != v.size() || component_h2.size() != w.size())
        throw std::domain_error("mixture_hellinger_upper_bound: arity mismatch");
    double max_h = 0.0;
    for (double h : component_h2) max_h = std::max(max_h, std::sqrt(h));
    double b = std::sqrt(weight_hellinger2(w, v)) + max_h;
    return b * b;
}

struct ParamLossReport {
    double weight_loss = 0.0;                 // ||w - w_hat o tau||^2
    std::vector<double> component_losses;     // clipped, in true-component order
    std::vector<std::size_t> permutation;     // est index matched to each true component
    double total = 0.0;
};

namespace detail {

// Squared parameter loss clipped at 1. GMM components compare (z, sigma^2);
// all other kinds compare (z, sigma).
inline double clipped_component_loss(const MixtureComponent& a, const MixtureComponent& b) {
    double dz = a.params.location - b.params.location;
    double ds;
    if (a.spec.kind == FamilyKind::Gaussian)
        ds = a.params.scale * a.params.scale - b.params.scale * b.params.scale;
    else
        ds = a.params.scale - b.params.scale;
    return std::min(1.0, dz * dz + ds * ds);
}

}  // namespace detail

// Matches estimated components to true ones within same-kind blocks,
// minimizing the total of weight and clipped parameter losses: exhaustive for
// K <= 6, Hungarian otherwise.
inline ParamLossReport match_components(const MixtureCandidate& truth, const MixtureCandidate& est) {
    std::size_t K = truth.order();
    if (est.order() != K) throw std::domain_error("match_components: order mismatch");

    std::map<FamilyKind, std::vector<std::size_t>> blocks_true, blocks_est;
    for (std::size_t k = 0; k < K; ++k) {
        blocks_true[truth.components[k].spec.kind].push_back(k);
        blocks_est[est.components[k].spec.kind].push_back(k);
    }
    if (blocks_true.size() != blocks_est.size())
        throw std::domain_error("match_components: family kind multisets differ");
    for (const auto& [kind, idx] : blocks_true) {
        auto it = blocks_est.find(kind);
        if (it == blocks_est.end() || it->second.size() != idx.size())
            throw std::domain_error("match_components: family kind multisets differ");
    }

    auto pair_cost = [&](std::size_t i, std::size_t j) {
        double dw = truth.weights[i] - est.weights[j];
        return dw * dw + detail::clipped_component_loss(truth.components[i], est.components[j]);
    };

    ParamLossReport rep;
    rep.permutation.assign(K, 0);
    for (const auto& [kind, t_idx] : blocks_true) {
        const auto& e_idx = blocks_est[kind];
        std::size_t m = t_idx.size();
        std::vector<std::size_t> best(m);
        if (m <= 6) {
            std::vector<std::size_t> perm(m);
            std::iota(perm.begin(), perm.end(), 0);
            double best_cost = std::numeric_limits<double>::infinity();
            do {
                double c = 0.0;
                for (std::size_t r = 0; r < m; ++r) c += pair_cost(t_idx[r], e_idx[perm[r]]);
                if (c < best_cost) {
                    best_cost = c;
                    best = perm;
                }
            } while (std::next_permutation(perm.begin(), perm.end()));
        } else {
            std::vector<std::vector<double>> cost(m, std::vector<double>(m));
            for (std::size_t r = 0; r < m; ++r)
                for (std::size_t c = 0; c < m; ++c) cost[r][c] = pair_cost(t_idx[r], e_idx[c]);
            best = hungarian_assignment(cost);
        }
        for (std::size_t r = 0; r < m; ++r) rep.permutation[t_idx[r]] = e_idx[best[r]];
    }

    rep.component_losses.resize(K);
    for (std::size_t k = 0; k < K; ++k) {
        std::size_t j = rep.permutation[k];
        double dw = truth.weights[k] - est.weights[j];
        rep.weight_loss += dw * dw;
        rep.component_losses[k] =
            detail::clipped_component_loss(truth.components[k], est.components[j]);
    }
    rep.total = rep.weight_loss +
                std::accumulate(rep.component_losses.begin(), rep.component_losses.end(), 0.0);
    return rep;
}

// ---- numeric Fisher information for Gaussian mixtures ----

struct FisherReport {
    std::vector<std::vector<double>> matrix;
    double min_eigenvalue = 0.0;
};

namespace detail {

// Jacobi eigenvalue iteration for a small symmetric matrix.
inline double min_eigenvalue_sym(std::vector<std::vector<double>> a) {
    std::size_t n = a.size();
    for (int sweep = 0; sweep < 128; ++sweep) {
        double off = 0.0;
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = i + 1; j < n; ++j) off += a[i][j] * a[i][j];
        if (off < 1e-24) break;
        for (std::size_t p = 0; p < n; ++p)
            for (std::size_t q = p + 1; q < n; ++q) {
                if (std::abs(a[p][q]) < 1e-300) continue;
                double theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                double t = (theta >= 0 ? 1.0 : -1.0) /
                           (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                double c = 1.0 / std::sqrt(t * t + 1.0), s = t * c;
                for (std::size_t k = 0; k < n; ++k) {
                    double akp = a[k][p], akq = a[k][q];
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for (std::size_t k = 0; k < n; ++k) {
                    double apk = a[p][k], aqk = a[q][k];
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
            }
    }
    double mn = a[0][0];
    for (std::size_t i = 1; i < n; ++i) mn = std::min(mn, a[i][i]);
    return mn;
}

inline double gmm_pdf_theta(std::span<const double> theta, std::size_t K, double x) {
    double acc = 0.0, wsum = 0.0;
    for (std::size_t k = 0; k + 1 < K; ++k) wsum += theta[k];
    for (std::size_t k = 0; k < K; ++k) {
        double w = (k + 1 < K) ? theta[k] : 1.0 - wsum;
        double z = theta[K - 1 + 2 * k];
        double var = theta[K - 1 + 2 * k + 1];
        acc += w * gaussian_pdf(x, z, std::sqrt(var));
    }
    return acc;
}

}  // namespace detail

// Fisher information of a K-component Gaussian mixture in the parameters
// (w_1..w_{K-1}, z_1, sigma_1^2, ..., z_K, sigma_K^2), computed by quadrature
// of the score outer product with central-difference scores. The minimum
// eigenvalue is the identifiability diagnostic.
inline FisherReport fisher_information_numeric(const MixtureCandidate& gmm,
                                               const QuadratureConfig& cfg = {}) {
    std::size_t K = gmm.order();
    for (const auto& c : gmm.components)
        if (c.spec.kind != FamilyKind::Gaussian)
            throw std::domain_error("fisher_information_numeric: Gaussian mixtures only");

    std::vector<double> theta;
    for (std::size_t k = 0; k + 1 < K; ++k) theta.push_back(gmm.weights[k]);
    for (std::size_t k = 0; k < K; ++k) {
        theta.push_back(gmm.components[k].params.location);
        theta.push_back(gmm.components[k].params.scale * gmm.components[k].params.scale);
    }
    std::size_t d = theta.size();

    const double rel_step = 1e-5;
    auto grad = [&](double x) {
        std::vector<double> g(d);
        for (std::size_t j = 0; j < d; ++j) {
            double h = rel_step * std::max(std::abs(theta[j]), 1.0);
            std::vector<double> tp = theta, tm = theta;
            tp[j] += h;
            tm[j] -= h;
            g[j] = (detail::gmm_pdf_theta(tp, K, x) - detail::gmm_pdf_theta(tm, K, x)) / (2.0 * h);
        }
        return g;
    };

    auto view = make_view(gmm);
    double budget = cfg.abs_tol * cfg.tail_factor;
    auto [lo, hi] = detail::window_for(view.tail, view.center - 2.0 * view.spread,
                                       view.center + 2.0 * view.spread, budget);

    FisherReport rep;
    rep.matrix.assign(d, std::vector<double>(d, 0.0));
    for (std::size_t a = 0; a < d; ++a)
        for (std::size_t b = a; b < d; ++b) {
            auto f = [&](double x) {
                double p = detail::gmm_pdf_theta(theta, K, x);
                if (p < 1e-300) return 0.0;
                auto g = grad(x);
                return g[a] * g[b] / p;
            };
            auto r = integrate_adaptive(f, lo, hi, view.breakpoints, {}, cfg);
            rep.matrix[a][b] = rep.matrix[b][a] = r.value;
        }
    rep.min_eigenvalue = detail::min_eigenvalue_sym(rep.matrix);
    return rep;
}

}  // namespace rhomix
