#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <memory>
#include <numeric>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

#include "rhomix/rho.hpp"

namespace rhomix {

// A candidate space in product form: weight grid x net_1 x ... x net_K. Large
// spaces are searched by block-coordinate descent instead of materialization.
struct FactoredModel {
    ModelDescriptor descriptor;
    std::vector<WeightVector> weight_grid;          // empty -> implicit grid, transfer moves
    std::int64_t weight_denominator = 0;            // used when weight_grid is empty
    std::vector<std::vector<EmissionParams>> nets;  // one per component
    std::vector<char> refine_component;             // empty -> refine all

    std::size_t product_size() const {
        std::size_t p = std::max<std::size_t>(weight_grid.size(), 1);
        for (const auto& net : nets) {
            if (p > (1ULL << 62) / std::max<std::size_t>(net.size(), 1)) return SIZE_MAX;
            p *= net.size();
        }
        return p;
    }
};

struct FitOptions {
    std::size_t probe_count = 12;
    int sweeps = 4;
    int refine_rounds = 3;
    double refine_zoom = 5.0;
    int refine_points = 9;
    std::size_t pool_cap = 48;
    std::size_t explicit_budget = 20000;  // materialize and search exactly below this size
    std::uint64_t seed = 1;
    bool refine_weights = true;
    int restarts = 2;      // descents from different starting basins
    int polish_passes = 2; // continuous per-coordinate polish rounds
};

struct FactoredFit {
    MixtureCandidate chosen;
    double upsilon = 0.0;  // certified against the explored pool
    double penalty = 0.0;
    std::size_t trials = 0;
    bool materialized = false;  // true when an exact explicit search seeded the incumbent
};

namespace detail {

// Competitor pool: cached sqrt-density vectors with per-member penalties.
struct Pool {
    std::vector<std::vector<double>> sq;
    std::vector<double> pen;
    std::size_t cap = 48;
    std::size_t fixed = 0;  // probes and anchors are never evicted

    void add(std::vector<double> v, double penalty, bool fixed_member) {
        if (fixed_member) {
            sq.insert(sq.begin() + static_cast<std::ptrdiff_t>(fixed), std::move(v));
            pen.insert(pen.begin() + static_cast<std::ptrdiff_t>(fixed), penalty);
            ++fixed;
        } else {
            sq.push_back(std::move(v));
            pen.push_back(penalty);
            if (sq.size() > cap && fixed < sq.size()) {
                sq.erase(sq.begin() + static_cast<std::ptrdiff_t>(fixed));
                pen.erase(pen.begin() + static_cast<std::ptrdiff_t>(fixed));
            }
        }
    }

    // sup_{p in pool} [T(q, p) - pen(p)] for a sqrt-density vector of q
    double score(std::span<const double> sq_q) const {
        double best = -std::numeric_limits<double>::infinity();
        for (std::size_t m = 0; m < sq.size(); ++m) {
            double t = 0.0;
            const double* p = this->sq[m].data();
            for (std::size_t i = 0; i < sq_q.size(); ++i) t += psi_term(sq_q[i], p[i]);
            best = std::max(best, t - pen[m]);
        }
        return best;
    }
};

inline std::vector<double> density_column(const EmissionSpec& spec, const EmissionParams& p,
                                          std::span<const double> x) {
    std::vector<double> col(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) col[i] = density(spec, p, x[i]);
    return col;
}

// Per-component search space: the fixed coarse net plus a zoomed local net
// that is rebuilt every refinement round. The coarse net stays scannable so
// the search can always jump out of a local basin.
struct CompSpace {
    EmissionSpec spec;
    std::vector<EmissionParams> base;
    std::vector<EmissionParams> local;
    std::shared_ptr<std::vector<std::vector<double>>> base_cols;  // shared for identical nets
    std::vector<std::vector<double>> local_cols;                  // empty -> compute on demand
    bool cache_local = true;
    double pitch_loc = 0.0;
    double pitch_log = 0.0;
    bool refinable = true;

    std::size_t size() const { return base.size() + local.size(); }
    const EmissionParams& at(std::size_t j) const {
        return j < base.size() ? base[j] : local[j - base.size()];
    }
};

struct SearchState {
    std::size_t w_index = 0;          // into the enumerable weight list
    std::vector<std::int64_t> w_num;  // implicit rational weights (large K)
    std::int64_t w_den = 0;
    std::vector<double> wv;
    std::vector<std::size_t> j;
};

}  // namespace detail

// Block-coordinate descent over a factored candidate space with multiscale net
// refinement. The incumbent is scored against a pool of competitors (random
// probes, data-quantile anchors, and previous incumbents); the returned
// upsilon is the certified value against that explored pool. Spaces small
// enough to materialize are first solved exactly and the refinement continues
// from the exact coarse solution.
inline FactoredFit fit_factored(std::span<const double> x, FactoredModel model,
                                double pen_of_model, const FitOptions& opt, RngStream& rng,
                                detail::Pool* shared_pool = nullptr) {
    const std::size_t K = model.descriptor.K;
    const std::size_t n = x.size();
    if (model.nets.size() != K)
        throw std::domain_error("fit_factored: one net per component required");
    if (model.refine_component.empty()) model.refine_component.assign(K, 1);

    // ---- exact solve on the coarse product when it is small enough ----
    bool materialized = false;
    std::optional<detail::SearchState> seeded;
    if (model.product_size() <= opt.explicit_budget &&
        model.product_size() * n <= 200'000'000ULL) {
        std::vector<WeightVector> grid = model.weight_grid;
        if (grid.empty())
            grid = enumerate_weight_grid(K, model.weight_denominator, model.descriptor.delta);
        model.weight_grid = std::move(grid);
        auto set = assemble_candidates(model.descriptor, model.nets, model.weight_grid,
                                       opt.explicit_budget * 4, true);
        std::vector<double> pen{pen_of_model};
        SearchConfig cfg;
        cfg.mode = SearchMode::Heuristic;  // pruned search, identical result to exhaustive
        auto fit = rho_estimate(x, std::span<const CandidateSet>(&set, 1), pen, cfg);
        materialized = true;
        detail::SearchState st;
        st.j.assign(K, 0);
        for (std::size_t k = 0; k < K; ++k)
            for (std::size_t j = 0; j < model.nets[k].size(); ++j)
                if (model.nets[k][j] == fit.chosen.components[k].params) {
                    st.j[k] = j;
                    break;
                }
        st.w_index = 0;
        for (std::size_t i = 0; i < model.weight_grid.size(); ++i)
            if (model.weight_grid[i].w == fit.chosen.weights.w) {
                st.w_index = i;
                break;
            }
        st.wv = model.weight_grid[st.w_index].w;
        seeded = std::move(st);
        if (opt.refine_rounds <= 0) {
            FactoredFit out;
            out.chosen = canonicalize(fit.chosen);
            out.upsilon = fit.upsilon;
            out.penalty = pen_of_model;
            out.trials = fit.rows_evaluated;
            out.materialized = true;
            if (shared_pool)
                shared_pool->add(sqrt_density_vector(out.chosen, x), pen_of_model, true);
            return out;
        }
    }

    // ---- search spaces ----
    const bool implicit_weights = model.weight_grid.empty();
    std::vector<WeightVector> weights_base = std::move(model.weight_grid);
    std::vector<WeightVector> weights_local;
    if (!implicit_weights && weights_base.empty())
        throw std::domain_error("fit_factored: empty weight grid");

    std::vector<detail::CompSpace> comp(K);
    for (std::size_t k = 0; k < K; ++k) {
        comp[k].spec = model.descriptor.families[k];
        comp[k].base = model.nets[k];
        comp[k].refinable = model.refine_component[k] != 0 && comp[k].base.size() > 1;
        // share density columns across identical nets
        for (std::size_t t = 0; t < k; ++t)
            if (comp[t].base == comp[k].base &&
                comp[t].spec.kind == comp[k].spec.kind &&
                comp[t].spec.shape == comp[k].spec.shape) {
                comp[k].base_cols = comp[t].base_cols;
                break;
            }
        if (!comp[k].base_cols) {
            comp[k].base_cols = std::make_shared<std::vector<std::vector<double>>>();
            comp[k].base_cols->reserve(comp[k].base.size());
            for (const auto& p : comp[k].base)
                comp[k].base_cols->push_back(detail::density_column(comp[k].spec, p, x));
        }
        std::vector<double> locs, logs;
        for (const auto& p : comp[k].base) {
            locs.push_back(p.location);
            logs.push_back(std::log(p.scale));
        }
        std::sort(locs.begin(), locs.end());
        locs.erase(std::unique(locs.begin(), locs.end()), locs.end());
        std::sort(logs.begin(), logs.end());
        logs.erase(std::unique(logs.begin(), logs.end()), logs.end());
        if (locs.size() > 1)
            comp[k].pitch_loc = (locs.back() - locs.front()) / static_cast<double>(locs.size() - 1);
        if (logs.size() > 1)
            comp[k].pitch_log = (logs.back() - logs.front()) / static_cast<double>(logs.size() - 1);
        std::size_t local_cap = static_cast<std::size_t>(opt.refine_points) *
                                static_cast<std::size_t>(opt.refine_points);
        comp[k].cache_local = K * local_cap * n * 8 <= (1ULL << 27);
    }

    auto local_col = [&](const detail::CompSpace& cs, std::size_t j,
                         std::vector<double>& scratch) -> const std::vector<double>& {
        if (j < cs.base.size()) return (*cs.base_cols)[j];
        std::size_t lj = j - cs.base.size();
        if (cs.cache_local && lj < cs.local_cols.size()) return cs.local_cols[lj];
        scratch = detail::density_column(cs.spec, cs.at(j), x);
        return scratch;
    };

    // ---- state helpers ----
    auto weights_of = [&](const detail::SearchState& st) -> const std::vector<double>& {
        return st.wv;
    };
    auto set_weight_index = [&](detail::SearchState& st, std::size_t i) {
        st.w_index = i;
        st.wv = i < weights_base.size() ? weights_base[i].w
                                        : weights_local[i - weights_base.size()].w;
    };
    auto weight_count = [&]() { return weights_base.size() + weights_local.size(); };

    std::size_t trials = 0;
    std::vector<double> scratch_col;

    auto sqrt_vec_of = [&](const detail::SearchState& st) {
        std::vector<double> s(n);
        const auto& w = weights_of(st);
        for (std::size_t i = 0; i < n; ++i) {
            double d = 0.0;
            for (std::size_t k = 0; k < K; ++k) d += w[k] * local_col(comp[k], st.j[k], scratch_col)[i];
            s[i] = std::sqrt(d);
        }
        return s;
    };

    detail::Pool local_pool;
    detail::Pool& pool = shared_pool ? *shared_pool : local_pool;
    pool.cap = std::max(pool.cap, opt.pool_cap);

    auto score_sqrt = [&](std::span<const double> s) {
        ++trials;
        return pool.score(s) + pen_of_model;
    };
    auto score_state = [&](const detail::SearchState& st) {
        auto s = sqrt_vec_of(st);
        return score_sqrt(s);
    };

    auto random_state = [&]() {
        detail::SearchState st;
        if (!implicit_weights) {
            set_weight_index(st, rng.index(weight_count()));
        } else {
            std::int64_t N = model.weight_denominator;
            auto d_min = static_cast<std::int64_t>(
                std::ceil(model.descriptor.delta * static_cast<double>(N) - 1e-9));
            d_min = std::max<std::int64_t>(d_min, 0);
            std::vector<std::int64_t> num(K, d_min);
            std::int64_t rest = N - d_min * static_cast<std::int64_t>(K);
            if (rest < 0) throw std::domain_error("fit_factored: infeasible implicit weight grid");
            for (std::int64_t r = 0; r < rest; ++r) num[rng.index(K)] += 1;
            st.w_num = std::move(num);
            st.w_den = N;
            st.wv.resize(K);
            for (std::size_t k = 0; k < K; ++k)
                st.wv[k] = static_cast<double>(st.w_num[k]) / static_cast<double>(N);
        }
        st.j.resize(K);
        for (std::size_t k = 0; k < K; ++k) st.j[k] = rng.index(comp[k].size());
        return st;
    };

    // data-quantile anchors: component k near the ((k+1/2)/K)-quantile, and a
    // clustered variant at the median with varied scales
    std::vector<double> sorted(x.begin(), x.end());
    std::sort(sorted.begin(), sorted.end());
    auto nearest_in_net = [&](const detail::CompSpace& cs, double z_target, double rank) {
        std::size_t best = 0;
        double best_d = std::numeric_limits<double>::infinity();
        std::vector<double> scales;
        for (const auto& p : cs.base) scales.push_back(p.scale);
        std::sort(scales.begin(), scales.end());
        scales.erase(std::unique(scales.begin(), scales.end()), scales.end());
        double s_target = scales[static_cast<std::size_t>(rank * static_cast<double>(scales.size() - 1))];
        for (std::size_t j = 0; j < cs.base.size(); ++j) {
            double dz = std::abs(cs.base[j].location - z_target) +
                        std::abs(std::log(cs.base[j].scale / s_target));
            if (dz < best_d) {
                best_d = dz;
                best = j;
            }
        }
        return best;
    };
    auto make_anchor = [&](bool clustered) {
        detail::SearchState st;
        if (!implicit_weights) {
            // closest-to-uniform grid point
            std::size_t best = 0;
            double best_d = std::numeric_limits<double>::infinity();
            for (std::size_t i = 0; i < weights_base.size(); ++i) {
                double d = 0.0;
                for (double wk : weights_base[i].w)
                    d += std::abs(wk - 1.0 / static_cast<double>(K));
                if (d < best_d) {
                    best_d = d;
                    best = i;
                }
            }
            set_weight_index(st, best);
        } else {
            std::int64_t N = model.weight_denominator;
            std::vector<std::int64_t> num(K, N / static_cast<std::int64_t>(K));
            num[0] += N - num[0] * static_cast<std::int64_t>(K);
            st.w_num = std::move(num);
            st.w_den = N;
            st.wv.resize(K);
            for (std::size_t k = 0; k < K; ++k)
                st.wv[k] = static_cast<double>(st.w_num[k]) / static_cast<double>(N);
        }
        st.j.resize(K);
        for (std::size_t k = 0; k < K; ++k) {
            double q = clustered ? 0.5
                                 : (static_cast<double>(k) + 0.5) / static_cast<double>(K);
            double z = sorted_quantile(sorted, q);
            double rank = clustered ? static_cast<double>(k) / std::max<double>(1.0, K - 1) : 0.4;
            st.j[k] = nearest_in_net(comp[k], z, rank);
        }
        return st;
    };

    // probes and anchors enter the pool up front
    for (std::size_t r = 0; r < opt.probe_count; ++r)
        pool.add(sqrt_vec_of(random_state()), pen_of_model, true);
    auto anchor_spread = make_anchor(false);
    auto anchor_cluster = make_anchor(true);
    pool.add(sqrt_vec_of(anchor_spread), pen_of_model, true);
    pool.add(sqrt_vec_of(anchor_cluster), pen_of_model, true);

    // snapshots for restarting the descent from a different basin
    std::vector<double> pitch0_loc(K), pitch0_log(K);
    for (std::size_t k = 0; k < K; ++k) {
        pitch0_loc[k] = comp[k].pitch_loc;
        pitch0_log[k] = comp[k].pitch_log;
    }

    detail::SearchState best_state;
    double best_score = std::numeric_limits<double>::infinity();

    // ---- block scans ----
    auto try_state = [&](detail::SearchState& cand, bool& improved) {
        double sc = score_state(cand);
        if (sc < best_score) {
            best_score = sc;
            best_state = cand;
            improved = true;
        }
    };

    auto scan_blocks = [&]() {
        for (int sweep = 0; sweep < opt.sweeps; ++sweep) {
            bool improved = false;
            // weight block
            if (!implicit_weights) {
                detail::SearchState st = best_state;
                for (std::size_t i = 0; i < weight_count(); ++i) {
                    if (i == best_state.w_index) continue;
                    set_weight_index(st, i);
                    try_state(st, improved);
                }
            } else {
                std::int64_t N = best_state.w_den;
                auto d_min = static_cast<std::int64_t>(
                    std::ceil(model.descriptor.delta * static_cast<double>(N) - 1e-9));
                for (std::size_t a = 0; a < K; ++a)
                    for (std::size_t b = 0; b < K; ++b) {
                        if (a == b) continue;
                        for (std::int64_t step : {std::int64_t{1}, std::int64_t{4}, std::int64_t{16}}) {
                            if (best_state.w_num[b] - step < d_min) continue;
                            detail::SearchState st = best_state;
                            st.w_num[a] += step;
                            st.w_num[b] -= step;
                            for (std::size_t k = 0; k < K; ++k)
                                st.wv[k] = static_cast<double>(st.w_num[k]) /
                                           static_cast<double>(N);
                            try_state(st, improved);
                        }
                    }
            }
            // component blocks
            for (std::size_t k = 0; k < K; ++k) {
                detail::SearchState st = best_state;
                for (std::size_t jj = 0; jj < comp[k].size(); ++jj) {
                    if (jj == best_state.j[k]) continue;
                    st.j[k] = jj;
                    try_state(st, improved);
                }
                st.j[k] = best_state.j[k];
            }
            if (!improved) break;
        }
    };

    // ---- descent: coarse scan plus multiscale refinement ----
    auto run_refinement = [&]() {
    for (int round = 1; round <= opt.refine_rounds; ++round) {
        bool any_refined = false;
        for (std::size_t k = 0; k < K; ++k) {
            auto& cs = comp[k];
            if (!cs.refinable || cs.pitch_loc < 1e-14) continue;
            EmissionParams center = cs.at(best_state.j[k]);
            double new_pitch = cs.pitch_loc / opt.refine_zoom;
            double new_log = cs.pitch_log / opt.refine_zoom;
            int half = opt.refine_points / 2;
            cs.local.clear();
            for (int a = -half; a <= half; ++a) {
                double z = cs.spec.location_domain.clamp(center.location +
                                                         static_cast<double>(a) * new_pitch);
                if (cs.spec.has_scale() && new_log > 0.0) {
                    for (int b = -half; b <= half; ++b) {
                        double s = cs.spec.scale_domain->clamp(
                            center.scale * std::exp(static_cast<double>(b) * new_log));
                        cs.local.push_back({z, s});
                    }
                } else {
                    cs.local.push_back({z, center.scale});
                }
            }
            cs.pitch_loc = new_pitch;
            cs.pitch_log = new_log;
            if (cs.cache_local) {
                cs.local_cols.clear();
                cs.local_cols.reserve(cs.local.size());
                for (const auto& p : cs.local)
                    cs.local_cols.push_back(detail::density_column(cs.spec, p, x));
            }
            // re-anchor the incumbent at the center of the refined net
            for (std::size_t lj = 0; lj < cs.local.size(); ++lj)
                if (cs.local[lj] == center) {
                    best_state.j[k] = cs.base.size() + lj;
                    break;
                }
            any_refined = true;
        }
        // finer rational weights around the incumbent (enumerable mode)
        if (opt.refine_weights && !implicit_weights && K >= 2) {
            std::size_t wi = best_state.w_index;
            const WeightVector& w_now = wi < weights_base.size()
                                            ? weights_base[wi]
                                            : weights_local[wi - weights_base.size()];
            if (w_now.exact()) {
                std::int64_t N_new = w_now.den * 2;
                auto d_min = static_cast<std::int64_t>(
                    std::ceil(model.descriptor.delta * static_cast<double>(N_new) - 1e-9));
                std::vector<std::vector<std::int64_t>> opts_per_k(K);
                for (std::size_t k = 0; k < K; ++k)
                    for (std::int64_t dd = w_now.num[k] * 2 - 3; dd <= w_now.num[k] * 2 + 3; ++dd)
                        if (dd >= d_min) opts_per_k[k].push_back(dd);
                std::vector<WeightVector> refined;
                std::vector<std::int64_t> pick(K);
                auto gen = [&](auto&& self, std::size_t k, std::int64_t sum) -> void {
                    if (refined.size() > 4000) return;
                    if (k + 1 == K) {
                        std::int64_t last = N_new - sum;
                        for (auto o : opts_per_k[k])
                            if (o == last) {
                                pick[k] = last;
                                refined.push_back(WeightVector::rational(
                                    pick, N_new, model.descriptor.delta));
                            }
                        return;
                    }
                    for (auto o : opts_per_k[k]) {
                        pick[k] = o;
                        self(self, k + 1, sum + o);
                    }
                };
                gen(gen, 0, 0);
                if (!refined.empty()) {
                    WeightVector current = w_now;
                    weights_local = std::move(refined);
                    best_state.w_index = 0;
                    bool found = false;
                    for (std::size_t i = 0; i < weights_base.size() && !found; ++i)
                        if (weights_base[i].w == current.w) {
                            best_state.w_index = i;
                            found = true;
                        }
                    for (std::size_t i = 0; i < weights_local.size() && !found; ++i)
                        if (weights_local[i].w == current.w) {
                            best_state.w_index = weights_base.size() + i;
                            found = true;
                        }
                    best_state.wv = current.w;
                    any_refined = true;
                }
            }
        }
        if (!any_refined) break;
        best_score = score_state(best_state);
        scan_blocks();
        pool.add(sqrt_vec_of(best_state), pen_of_model, false);
    }
    };  // run_refinement

    // Continuous polish of one component coordinate by golden-section search
    // within the final refinement cell; the estimator lives on the Hellinger
    // closure of the candidate set, so off-grid parameters are admissible.
    auto polish_coordinate = [&](std::size_t k, bool scale_coord) {
        auto& cs = comp[k];
        EmissionParams center = cs.at(best_state.j[k]);
        double span = scale_coord ? 2.0 * cs.pitch_log : 2.0 * cs.pitch_loc;
        if (!(span > 0.0)) return;
        if (scale_coord && !cs.spec.has_scale()) return;
        auto eval = [&](double t) {
            EmissionParams p = center;
            if (scale_coord)
                p.scale = cs.spec.scale_domain->clamp(center.scale * std::exp(t));
            else
                p.location = cs.spec.location_domain.clamp(center.location + t);
            auto col = detail::density_column(cs.spec, p, x);
            const auto& w = weights_of(best_state);
            std::vector<double> s(n);
            for (std::size_t i = 0; i < n; ++i) {
                double d = w[k] * col[i];
                for (std::size_t t2 = 0; t2 < K; ++t2)
                    if (t2 != k) d += w[t2] * local_col(comp[t2], best_state.j[t2], scratch_col)[i];
                s[i] = std::sqrt(d);
            }
            return score_sqrt(s);
        };
        const double gr = 0.6180339887498949;
        double a = -span, b = span;
        double c1 = b - gr * (b - a), c2 = a + gr * (b - a);
        double f1 = eval(c1), f2 = eval(c2);
        for (int it = 0; it < 16; ++it) {
            if (f1 < f2) {
                b = c2;
                c2 = c1;
                f2 = f1;
                c1 = b - gr * (b - a);
                f1 = eval(c1);
            } else {
                a = c1;
                c1 = c2;
                f1 = f2;
                c2 = a + gr * (b - a);
                f2 = eval(c2);
            }
        }
        double t_best = f1 < f2 ? c1 : c2;
        double f_best = std::min(f1, f2);
        if (f_best < best_score) {
            EmissionParams p = center;
            if (scale_coord)
                p.scale = cs.spec.scale_domain->clamp(center.scale * std::exp(t_best));
            else
                p.location = cs.spec.location_domain.clamp(center.location + t_best);
            cs.local.push_back(p);
            if (cs.cache_local) cs.local_cols.push_back(detail::density_column(cs.spec, p, x));
            best_state.j[k] = cs.base.size() + cs.local.size() - 1;
            best_score = f_best;
        }
    };
    auto run_polish = [&]() {
        for (int pass = 0; pass < opt.polish_passes; ++pass)
            for (std::size_t k = 0; k < K; ++k) {
                if (!comp[k].refinable) continue;
                polish_coordinate(k, false);
                if (comp[k].spec.has_scale()) polish_coordinate(k, true);
            }
    };

    auto state_candidate = [&](const detail::SearchState& st) {
        MixtureCandidate c;
        if (!implicit_weights) {
            c.weights = st.w_index < weights_base.size()
                            ? weights_base[st.w_index]
                            : weights_local[st.w_index - weights_base.size()];
        } else {
            c.weights = WeightVector::rational(st.w_num, st.w_den, model.descriptor.delta);
        }
        for (std::size_t k = 0; k < K; ++k)
            c.components.push_back({comp[k].spec, comp[k].at(st.j[k])});
        return c;
    };

    // Two descents: one from the exact coarse solution (or the best scored
    // start), one from the quantile anchor. The pool is shared, so the second
    // descent is certified against everything the first one explored.
    std::vector<MixtureCandidate> finalists;
    int n_starts = seeded ? 2 : opt.restarts;
    for (int start = 0; start < std::max(1, n_starts); ++start) {
        for (std::size_t k = 0; k < K; ++k) {
            comp[k].local.clear();
            comp[k].local_cols.clear();
            comp[k].pitch_loc = pitch0_loc[k];
            comp[k].pitch_log = pitch0_log[k];
        }
        weights_local.clear();
        bool scan_first = true;
        if (start == 0 && seeded) {
            best_state = *seeded;
            best_score = score_state(best_state);
            scan_first = false;  // already exact on the coarse product
        } else if (start == n_starts - 1) {
            best_state = anchor_spread;
            best_score = score_state(best_state);
        } else {
            best_state = anchor_cluster;
            best_score = score_state(best_state);
            for (std::size_t r = 0; r < std::max<std::size_t>(opt.probe_count / 2, 3); ++r) {
                auto st = random_state();
                double sc = score_state(st);
                if (sc < best_score) {
                    best_score = sc;
                    best_state = st;
                }
            }
        }
        if (scan_first) scan_blocks();
        pool.add(sqrt_vec_of(best_state), pen_of_model, false);
        run_refinement();
        run_polish();
        pool.add(sqrt_vec_of(best_state), pen_of_model, false);
        finalists.push_back(state_candidate(best_state));
    }

    // pick the finalist with the smallest certified criterion vs the final pool
    std::size_t winner = 0;
    double winner_score = std::numeric_limits<double>::infinity();
    for (std::size_t f = 0; f < finalists.size(); ++f) {
        auto sq = sqrt_density_vector(finalists[f], x);
        double sc = std::max(pool.score(sq) + pen_of_model, 0.0);
        if (sc < winner_score) {
            winner_score = sc;
            winner = f;
        }
    }

    FactoredFit out;
    out.chosen = canonicalize(finalists[winner]);
    out.upsilon = winner_score;
    out.penalty = pen_of_model;
    out.trials = trials;
    out.materialized = materialized;
    if (shared_pool) shared_pool->add(sqrt_density_vector(out.chosen, x), pen_of_model, true);
    return out;
}

// Penalized fit over a union of factored models sharing one competitor pool;
// the per-model certified values form the selection table.
struct UnionFit {
    FactoredFit global;
    std::size_t chosen_model = 0;
    std::vector<double> model_upsilon;
    std::vector<MixtureCandidate> model_best;
};

inline UnionFit fit_union_factored(std::span<const double> x, std::vector<FactoredModel> models,
                                   std::span<const double> pen_per_model, const FitOptions& opt,
                                   RngStream& rng) {
    if (models.empty()) throw std::domain_error("fit_union_factored: no models");
    if (pen_per_model.size() != models.size())
        throw std::domain_error("fit_union_factored: one penalty per model required");

    detail::Pool pool;
    pool.cap = std::max<std::size_t>(opt.pool_cap,
                                     models.size() * (opt.probe_count + 4) + 16);

    std::vector<FactoredFit> fits;
    fits.reserve(models.size());
    for (std::size_t m = 0; m < models.size(); ++m)
        fits.push_back(fit_factored(x, models[m], pen_per_model[m], opt, rng, &pool));

    // re-certify every incumbent against the final shared pool, which holds
    // all final incumbents as fixed members; the self test floors Upsilon at 0
    UnionFit out;
    out.model_upsilon.resize(models.size());
    out.model_best.reserve(models.size());
    std::size_t best = 0;
    double best_u = std::numeric_limits<double>::infinity();
    for (std::size_t m = 0; m < models.size(); ++m) {
        auto sq = sqrt_density_vector(fits[m].chosen, x);
        double u = std::max(pool.score(sq) + pen_per_model[m], 0.0);
        out.model_upsilon[m] = u;
        out.model_best.push_back(fits[m].chosen);
        if (u < best_u) {
            best_u = u;
            best = m;
        }
    }
    out.global = fits[best];
    out.global.upsilon = best_u;
    out.chosen_model = best;
    return out;
}

}  // namespace rhomix
