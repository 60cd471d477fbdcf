#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "rhomix/fit.hpp"
#include "rhomix/rho.hpp"

namespace rhomix {

enum class PenaltyMode { Formula, Null };

struct SelectionOptions {
    std::size_t locations = 15;
    std::size_t scales = 5;
    std::int64_t weight_denominator = 0;  // 0 -> automatic
    PenaltyMode penalty = PenaltyMode::Formula;
    double kappa = PsiConstants::default_kappa;
    std::function<double(std::size_t K)> Delta = [](std::size_t K) {
        return static_cast<double>(K);
    };
    FitOptions fit;
};

// Largest grid denominator >= K whose floored weight grid is nonempty and of
// manageable size.
inline std::int64_t auto_weight_denominator(std::size_t K, double delta, std::size_t n,
                                            std::size_t grid_budget = 256) {
    if (K == 1) return 1;
    auto feasible = [&](std::int64_t N) {
        auto d_min = static_cast<std::int64_t>(std::ceil(delta * static_cast<double>(N) - 1e-9));
        return d_min * static_cast<std::int64_t>(K) <= N;
    };
    auto N = static_cast<std::int64_t>(std::ceil(std::sqrt(static_cast<double>(n))));
    N = std::max<std::int64_t>(N, static_cast<std::int64_t>(K));
    while (N > static_cast<std::int64_t>(K)) {
        try {
            if (feasible(N) && covering_size(K, static_cast<std::uint64_t>(N)) <= grid_budget) break;
        } catch (const std::overflow_error&) {
        }
        --N;
    }
    while (!feasible(N)) ++N;
    return N;
}

struct SelectionReport {
    MixtureCandidate chosen;
    double upsilon = 0.0;
    std::size_t chosen_model = 0;
    std::vector<std::string> model_labels;
    std::vector<double> model_upsilon;  // best penalized criterion per descriptor
    std::vector<double> model_penalty;
    bool materialized = false;
};

struct OrderSelectionReport : SelectionReport {
    std::size_t K_hat = 1;
};

namespace detail {

struct BuiltModel {
    FactoredModel model;
    double penalty;
};

inline SelectionReport run_union(std::span<const double> x, std::vector<BuiltModel> built,
                                 const SelectionOptions& opt, RngStream& rng) {
    SelectionReport rep;
    std::size_t total_explicit = 0;
    bool small = true;
    for (const auto& bm : built) {
        std::size_t p = bm.model.product_size();
        if (p == SIZE_MAX || total_explicit + p > opt.fit.explicit_budget) {
            small = false;
            break;
        }
        total_explicit += p;
    }
    for (const auto& bm : built) {
        rep.model_labels.push_back(bm.model.descriptor.label());
        rep.model_penalty.push_back(bm.penalty);
    }

    if (small) {
        // materialize all sets and run the exact pruned search over the union
        std::vector<CandidateSet> sets;
        std::vector<double> pens;
        for (const auto& bm : built) {
            std::vector<WeightVector> grid = bm.model.weight_grid;
            if (grid.empty())
                grid = enumerate_weight_grid(bm.model.descriptor.K, bm.model.weight_denominator,
                                             bm.model.descriptor.delta);
            sets.push_back(assemble_candidates(bm.model.descriptor, bm.model.nets, grid,
                                               opt.fit.explicit_budget * 4, true));
            pens.push_back(bm.penalty);
        }
        SearchConfig cfg;
        cfg.mode = SearchMode::Heuristic;
        cfg.keep_table = true;
        auto fit = rho_estimate(x, sets, pens, cfg);
        rep.chosen = canonicalize(fit.chosen);
        rep.upsilon = fit.upsilon;
        rep.chosen_model = fit.descriptor_index;
        rep.materialized = true;
        rep.model_upsilon.assign(built.size(), std::numeric_limits<double>::infinity());
        // per-descriptor best over the evaluated part of the table
        std::size_t offset = 0;
        for (std::size_t m = 0; m < sets.size(); ++m) {
            for (std::size_t i = 0; i < sets[m].size(); ++i) {
                double u = (*fit.upsilon_table)[offset + i];
                if (!std::isnan(u)) rep.model_upsilon[m] = std::min(rep.model_upsilon[m], u);
            }
            offset += sets[m].size();
        }
        return rep;
    }

    std::vector<FactoredModel> models;
    std::vector<double> pens;
    for (auto& bm : built) {
        models.push_back(std::move(bm.model));
        pens.push_back(bm.penalty);
    }
    auto ufit = fit_union_factored(x, std::move(models), pens, opt.fit, rng);
    rep.chosen = ufit.global.chosen;
    rep.upsilon = ufit.global.upsilon;
    rep.chosen_model = ufit.chosen_model;
    rep.model_upsilon = ufit.model_upsilon;
    return rep;
}

}  // namespace detail

// Order selection over K in [K_lo, K_hi] with a single emission family: one
// penalized fit over the union of the per-K candidate sets; delta(1) = 1 and
// delta(K) = V/n ^ 1/K otherwise, penalty 174.1 K V [...] scaled by kappa.
inline OrderSelectionReport select_order(std::span<const double> x, std::size_t K_lo,
                                         std::size_t K_hi, const EmissionSpec& family,
                                         const SelectionOptions& opt, RngStream& rng) {
    if (K_lo < 1 || K_hi < K_lo) throw std::domain_error("select_order: bad K range");
    if (K_hi > x.size()) throw std::domain_error("select_order: K range must stay within {1..n}");
    const std::size_t n = x.size();
    const double V = vc_index_bound(family);

    // Delta must be summable over the range
    {
        double s = 0.0;
        for (std::size_t K = K_lo; K <= K_hi; ++K) s += std::exp(-opt.Delta(K));
        if (s > 1.0 + 1e-9) throw std::domain_error("select_order: sum exp(-Delta) exceeds 1");
    }

    std::vector<detail::BuiltModel> built;
    for (std::size_t K = K_lo; K <= K_hi; ++K) {
        double delta = K == 1 ? 1.0
                              : std::min(V / static_cast<double>(n), 1.0 / static_cast<double>(K));
        auto descriptor = ModelDescriptor::make(std::vector<EmissionSpec>(K, family), delta);
        FactoredModel model;
        model.descriptor = descriptor;
        auto net = build_net_robust(family, x, opt.locations, opt.scales);
        model.nets.assign(K, net);
        std::int64_t N = opt.weight_denominator > 0 ? opt.weight_denominator
                                                    : auto_weight_denominator(K, delta, n);
        model.weight_grid = enumerate_weight_grid(K, N, delta);
        model.weight_denominator = N;
        double pen = 0.0;
        if (opt.penalty == PenaltyMode::Formula) {
            double bracket = 5.82 + std::log(std::pow(static_cast<double>(K + 1), 2) / delta) +
                             log_plus(static_cast<double>(n) / (static_cast<double>(K) * V));
            pen = opt.kappa * (174.1 * static_cast<double>(K) * V * bracket +
                               opt.Delta(K));
        }
        built.push_back({std::move(model), pen});
    }

    auto rep = detail::run_union(x, std::move(built), opt, rng);
    OrderSelectionReport out;
    static_cast<SelectionReport&>(out) = rep;
    out.K_hat = K_lo + rep.chosen_model;
    return out;
}

struct FamilySelectionReport : SelectionReport {
    std::size_t j_hat = 0;  // number of Gaussian components in the chosen block model
};

// Composite-family selection with K fixed: the union of the block models
// Q_j = (j Gaussians, K-j Cauchys), j = 0..K, fitted with delta = 5/n ^ 1/K
// and a null penalty by default.
inline FamilySelectionReport select_emission_families(std::span<const double> x, std::size_t K,
                                                      const SelectionOptions& opt,
                                                      RngStream& rng) {
    if (K < 1) throw std::domain_error("select_emission_families: K must be >= 1");
    const std::size_t n = x.size();
    double delta = std::min(5.0 / static_cast<double>(n), 1.0 / static_cast<double>(K));

    auto gauss = EmissionSpec::gaussian();
    auto cauchy = EmissionSpec::cauchy();
    auto gauss_net = build_net_robust(gauss, x, opt.locations, opt.scales);
    auto cauchy_net = build_net_robust(cauchy, x, opt.locations, opt.scales);

    std::vector<detail::BuiltModel> built;
    for (std::size_t j = 0; j <= K; ++j) {
        std::vector<EmissionSpec> fams;
        for (std::size_t k = 0; k < K; ++k) fams.push_back(k < j ? gauss : cauchy);
        auto descriptor = ModelDescriptor::make(std::move(fams), delta);
        FactoredModel model;
        model.descriptor = descriptor;
        for (std::size_t k = 0; k < K; ++k)
            model.nets.push_back(k < j ? gauss_net : cauchy_net);
        std::int64_t N = opt.weight_denominator > 0 ? opt.weight_denominator
                                                    : auto_weight_denominator(K, delta, n);
        model.weight_grid = enumerate_weight_grid(K, N, delta);
        model.weight_denominator = N;
        double pen = 0.0;
        if (opt.penalty == PenaltyMode::Formula) {
            double V = static_cast<double>(descriptor.vc_sum);
            double bracket = 5.82 + std::log(std::pow(static_cast<double>(K + 1), 2) / delta) +
                             log_plus(static_cast<double>(n) / V);
            pen = opt.kappa * (174.1 * V * bracket + opt.Delta(j + 1));
        }
        built.push_back({std::move(model), pen});
    }

    auto rep = detail::run_union(x, std::move(built), opt, rng);
    FamilySelectionReport out;
    static_cast<SelectionReport&>(out) = rep;
    out.j_hat = rep.chosen_model;
    return out;
}

}  // namespace rhomix
