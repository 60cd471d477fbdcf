#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "rhomix/fit.hpp"
#include "rhomix/metrics.hpp"
#include "rhomix/mixing.hpp"
#include "rhomix/selection.hpp"

namespace rhomix {

struct StudyError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// ---- small utilities ----

inline std::string format_g17(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

inline std::uint64_t fnv1a64(std::string_view s) {
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

inline void parallel_for(std::size_t count, int threads, const std::function<void(std::size_t)>& fn) {
    unsigned hw = std::thread::hardware_concurrency();
    std::size_t t = threads > 0 ? static_cast<std::size_t>(threads) : std::max(1u, hw);
    t = std::min(t, count);
    if (t <= 1) {
        for (std::size_t i = 0; i < count; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> workers;
    workers.reserve(t);
    for (std::size_t w = 0; w < t; ++w)
        workers.emplace_back([&] {
            for (std::size_t i = next.fetch_add(1); i < count; i = next.fetch_add(1)) fn(i);
        });
    for (auto& th : workers) th.join();
}

// ---- log-log slope ----

struct SlopeFit {
    double slope = 0.0;
    double stderr_ = 0.0;
    double intercept = 0.0;
    std::size_t used = 0;
    std::size_t dropped = 0;
};

// OLS of log(loss) on log(n); nonpositive losses are dropped, fewer than
// three surviving points is an error.
inline SlopeFit fit_loglog_slope(std::span<const std::pair<double, double>> points) {
    std::vector<std::pair<double, double>> pts;
    std::size_t dropped = 0;
    for (auto [n, loss] : points) {
        if (loss > 0.0 && std::isfinite(loss))
            pts.emplace_back(std::log(n), std::log(loss));
        else
            ++dropped;
    }
    if (pts.size() < 3) throw std::domain_error("fit_loglog_slope: fewer than 3 positive points");
    double sx = 0, sy = 0;
    for (auto [x, y] : pts) {
        sx += x;
        sy += y;
    }
    double mx = sx / pts.size(), my = sy / pts.size();
    double sxx = 0, sxy = 0;
    for (auto [x, y] : pts) {
        sxx += (x - mx) * (x - mx);
        sxy += (x - mx) * (y - my);
    }
    SlopeFit f;
    f.slope = sxy / sxx;
    f.intercept = my - f.slope * mx;
    f.used = pts.size();
    f.dropped = dropped;
    double ss = 0;
    for (auto [x, y] : pts) {
        double r = y - (f.intercept + f.slope * x);
        ss += r * r;
    }
    if (pts.size() > 2) f.stderr_ = std::sqrt(ss / (pts.size() - 2) / sxx);
    return f;
}

// ---- estimator plumbing shared by the studies ----

struct EstimatorSettings {
    std::size_t locations = 15;
    std::size_t scales = 5;
    std::int64_t weight_denominator = 0;  // 0 -> automatic
    double delta_override = -1.0;         // < 0 -> default delta rule
    int rounds_override = -1;             // < 0 -> derived from n and the target resolution
    double resolution_scale = 0.15;       // target location pitch = scale * sd / sqrt(n)
    FitOptions fit;
};

// One mixture fit with per-component optional pinned parameters (components
// with a pinned parameter are excluded from refinement).
inline MixtureCandidate fit_study_mixture(std::span<const double> x,
                                          const std::vector<EmissionSpec>& families,
                                          const EstimatorSettings& est, std::uint64_t seed,
                                          const std::vector<std::optional<EmissionParams>>& pinned = {},
                                          double target_resolution = -1.0) {
    const std::size_t K = families.size();
    const std::size_t n = x.size();
    double v_bar = 0.0;
    for (const auto& f : families) v_bar += vc_index_bound(f);
    double delta = est.delta_override >= 0.0 ? est.delta_override : delta_default(K, v_bar, n);

    FactoredModel model;
    model.descriptor = ModelDescriptor::make(families, delta);
    model.refine_component.assign(K, 1);
    double pitch0 = 0.0;
    for (std::size_t k = 0; k < K; ++k) {
        if (k < pinned.size() && pinned[k]) {
            model.nets.push_back({*pinned[k]});
            model.refine_component[k] = 0;
        } else {
            auto net = build_net_robust(families[k], x, est.locations, est.scales);
            double lo = net.front().location, hi = net.back().location;
            if (net.size() > 1)
                pitch0 = std::max(pitch0, (hi - lo) / static_cast<double>(est.locations - 1));
            model.nets.push_back(std::move(net));
        }
    }
    std::int64_t N = est.weight_denominator > 0 ? est.weight_denominator
                                                : auto_weight_denominator(K, delta, n);
    model.weight_grid = enumerate_weight_grid(K, N, delta);
    model.weight_denominator = N;
    if (model.weight_grid.empty())
        throw StudyError("fit_study_mixture: empty weight grid for delta floor");

    FitOptions opt = est.fit;
    if (est.rounds_override >= 0) {
        opt.refine_rounds = est.rounds_override;
    } else {
        double target = target_resolution;
        if (target <= 0.0) {
            double mean = 0.0, var = 0.0;
            for (double xi : x) mean += xi;
            mean /= static_cast<double>(n);
            for (double xi : x) var += (xi - mean) * (xi - mean);
            double sd = std::sqrt(var / static_cast<double>(n));
            target = est.resolution_scale * sd / std::sqrt(static_cast<double>(n));
        }
        if (pitch0 > 0.0 && target > 0.0)
            opt.refine_rounds = std::clamp(
                static_cast<int>(std::ceil(std::log(pitch0 / target) / std::log(opt.refine_zoom))),
                2, 14);
    }
    opt.seed = seed;
    RngStream rng(derive_seed(seed, 0xf17));
    auto fit = fit_factored(x, std::move(model), 0.0, opt, rng);
    return fit.chosen;
}

// ---- study configuration, records, and reports ----

struct StudyConfig {
    std::string kind;  // rate-gmm | contamination | param-gmm | param-known | spike | continuous | order-gmm | family-gc
    std::vector<std::size_t> n_grid{1000};
    int replications = 20;
    std::uint64_t master_seed = 1;
    int threads = 0;
    double xi = 1.0;  // confidence parameter reported alongside the bands

    MixtureCandidate truth;  // gmm-style studies; defaulted per kind when empty
    double spike_alpha = 0.5, spike_lambda = 0.4, spike_z = 0.7;
    double known_lambda = 0.3, known_z = 1.5;
    double cont_A = 1.0, cont_R = 1.5;
    std::vector<double> eps_grid{0.0, 0.02, 0.05, 0.10};
    std::size_t select_k_lo = 1, select_k_hi = 3, target_K = 1;
    std::size_t family_K = 2, target_j = 1;
    double select_kappa = 0.01;
    double freq_min = 0.9;
    bool require_monotone_freq = false;

    double slope_lo = -1.15, slope_hi = -0.80;  // band for the primary slope check
    EstimatorSettings est;
};

struct RepRecord {
    std::size_t cell = 0;  // index into the n grid (or eps grid cell)
    std::size_t n = 0;
    int rep = 0;
    std::uint64_t seed = 0;
    std::vector<std::pair<std::string, double>> values;
    double runtime_ms = 0.0;
    bool failed = false;
};

struct StudyCheck {
    std::string name;
    bool pass = true;
    std::string detail;
};

struct StudyResult {
    StudyConfig config;
    std::uint64_t config_hash = 0;
    std::vector<std::string> fields;
    std::vector<RepRecord> records;
    std::vector<std::size_t> cell_n;
    std::vector<double> cell_eps;  // contamination only
    std::vector<std::vector<double>> cell_mean;    // [cell][field]
    std::vector<std::vector<double>> cell_median;  // [cell][field]
    std::vector<StudyCheck> checks;
    std::vector<std::pair<std::string, std::optional<SlopeFit>>> slopes;
    bool pass = true;
    double total_runtime_ms = 0.0;
};

inline MixtureCandidate default_rate_truth() {
    MixtureCandidate c;
    c.weights = WeightVector::real({0.4, 0.6});
    c.components.push_back({EmissionSpec::gaussian(), {0.0, 1.0}});
    c.components.push_back({EmissionSpec::gaussian(), {5.0, 1.0}});
    return c;
}

inline std::string canonical_config_string(const StudyConfig& c) {
    std::ostringstream os;
    os << "kind=" << c.kind << ";n=";
    for (auto n : c.n_grid) os << n << ',';
    os << ";R=" << c.replications << ";seed=" << c.master_seed << ";xi=" << format_g17(c.xi);
    if (!c.truth.components.empty()) os << ";truth=" << candidate_to_line(c.truth);
    os << ";spike=" << format_g17(c.spike_alpha) << ',' << format_g17(c.spike_lambda) << ','
       << format_g17(c.spike_z);
    os << ";known=" << format_g17(c.known_lambda) << ',' << format_g17(c.known_z);
    os << ";cont=" << format_g17(c.cont_A) << ',' << format_g17(c.cont_R);
    os << ";eps=";
    for (auto e : c.eps_grid) os << format_g17(e) << ',';
    os << ";sel=" << c.select_k_lo << ',' << c.select_k_hi << ',' << c.target_K << ','
       << c.family_K << ',' << c.target_j << ',' << format_g17(c.select_kappa) << ','
       << format_g17(c.freq_min) << ',' << (c.require_monotone_freq ? 1 : 0);
    os << ";band=" << format_g17(c.slope_lo) << ',' << format_g17(c.slope_hi);
    os << ";est=" << c.est.locations << ',' << c.est.scales << ',' << c.est.weight_denominator
       << ',' << format_g17(c.est.delta_override) << ',' << c.est.rounds_override << ','
       << format_g17(c.est.resolution_scale) << ',' << c.est.fit.probe_count << ','
       << c.est.fit.sweeps << ',' << c.est.fit.refine_rounds << ','
       << format_g17(c.est.fit.refine_zoom) << ',' << c.est.fit.refine_points << ','
       << c.est.fit.pool_cap << ',' << c.est.fit.explicit_budget;
    return os.str();
}

namespace detail {

// Deterministic replication driver: cells x replications, parallel over the
// flattened index, each replication on an independently derived stream. The
// task returns named losses.
inline void run_replications(
    StudyResult& result, std::size_t n_cells, int reps, int threads, std::uint64_t master_seed,
    const std::function<std::vector<std::pair<std::string, double>>(std::size_t cell, int rep,
                                                                    RngStream& rng)>& task) {
    std::size_t total = n_cells * static_cast<std::size_t>(reps);
    result.records.assign(total, {});
    auto t0 = std::chrono::steady_clock::now();
    parallel_for(total, threads, [&](std::size_t idx) {
        std::size_t cell = idx / static_cast<std::size_t>(reps);
        int rep = static_cast<int>(idx % static_cast<std::size_t>(reps));
        RepRecord& rec = result.records[idx];
        rec.cell = cell;
        rec.rep = rep;
        rec.seed = derive_seed(master_seed, idx);
        RngStream rng(rec.seed);
        auto tic = std::chrono::steady_clock::now();
        try {
            rec.values = task(cell, rep, rng);
        } catch (const std::exception&) {
            rec.failed = true;
            rec.values.clear();
        }
        rec.runtime_ms =
            std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - tic)
                .count();
    });
    result.total_runtime_ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();

    std::size_t failures = 0;
    for (const auto& r : result.records) failures += r.failed ? 1 : 0;
    if (failures * 5 > total)
        throw StudyError("study: more than 20% of replications failed");
}

inline void aggregate(StudyResult& result, std::size_t n_cells) {
    std::size_t nf = result.fields.size();
    result.cell_mean.assign(n_cells, std::vector<double>(nf, 0.0));
    result.cell_median.assign(n_cells, std::vector<double>(nf, 0.0));
    for (std::size_t cell = 0; cell < n_cells; ++cell)
        for (std::size_t f = 0; f < nf; ++f) {
            std::vector<double> vals;
            for (const auto& r : result.records)
                if (r.cell == cell && !r.failed)
                    for (const auto& [name, v] : r.values)
                        if (name == result.fields[f]) vals.push_back(v);
            if (vals.empty()) {
                result.cell_mean[cell][f] = std::numeric_limits<double>::quiet_NaN();
                result.cell_median[cell][f] = std::numeric_limits<double>::quiet_NaN();
                continue;
            }
            double s = 0;
            for (double v : vals) s += v;
            result.cell_mean[cell][f] = s / static_cast<double>(vals.size());
            std::sort(vals.begin(), vals.end());
            std::size_t m = vals.size();
            result.cell_median[cell][f] =
                m % 2 ? vals[m / 2] : 0.5 * (vals[m / 2 - 1] + vals[m / 2]);
        }
}

inline std::optional<SlopeFit> slope_of(const StudyResult& result, const std::string& field,
                                        bool use_median) {
    std::vector<std::pair<double, double>> pts;
    for (std::size_t cell = 0; cell < result.cell_n.size(); ++cell) {
        auto it = std::find(result.fields.begin(), result.fields.end(), field);
        if (it == result.fields.end()) continue;
        std::size_t f = static_cast<std::size_t>(it - result.fields.begin());
        double v = use_median ? result.cell_median[cell][f] : result.cell_mean[cell][f];
        pts.emplace_back(static_cast<double>(result.cell_n[cell]), v);
    }
    try {
        return fit_loglog_slope(pts);
    } catch (const std::domain_error&) {
        return std::nullopt;  // slope undefined on short grids
    }
}

inline void band_check(StudyResult& result, const std::string& field,
                       const std::optional<SlopeFit>& slope, double lo, double hi) {
    StudyCheck chk;
    chk.name = "slope(" + field + ") in [" + format_g17(lo) + "," + format_g17(hi) + "]";
    if (!slope) {
        chk.pass = false;
        chk.detail = "slope absent";
    } else {
        chk.pass = slope->slope >= lo && slope->slope <= hi;
        chk.detail = "slope=" + format_g17(slope->slope) + " stderr=" + format_g17(slope->stderr_);
    }
    result.pass = result.pass && chk.pass;
    result.checks.push_back(std::move(chk));
}

}  // namespace detail

// ---- the studies ----

// Density-estimation rate: fit the model per replication and regress
// log mean h^2(truth, fit) on log n.
inline StudyResult run_rate_study(const StudyConfig& cfg_in) {
    StudyConfig cfg = cfg_in;
    if (cfg.truth.components.empty()) cfg.truth = default_rate_truth();
    if (cfg.n_grid.empty()) throw StudyError("rate study: empty n grid");
    StudyResult result;
    result.config = cfg;
    result.config_hash = fnv1a64(canonical_config_string(cfg));
    result.fields = {"h2"};
    result.cell_n = cfg.n_grid;

    std::vector<EmissionSpec> fams;
    for (const auto& c : cfg.truth.components) fams.push_back(c.spec);
    auto truth_view = make_view(cfg.truth);

    detail::run_replications(
        result, cfg.n_grid.size(), cfg.replications, cfg.threads, cfg.master_seed,
        [&](std::size_t cell, int, RngStream& rng) {
            std::size_t n = cfg.n_grid[cell];
            auto x = sample_mixture(cfg.truth, n, rng);
            auto fitted = fit_study_mixture(x, fams, cfg.est, rng.raw());
            double h2 = hellinger2_numeric(truth_view, make_view(fitted));
            return std::vector<std::pair<std::string, double>>{{"h2", h2}};
        });
    detail::aggregate(result, cfg.n_grid.size());
    auto slope = detail::slope_of(result, "h2", false);
    result.slopes.emplace_back("h2", slope);
    if (cfg.n_grid.size() >= 3) detail::band_check(result, "h2", slope, cfg.slope_lo, cfg.slope_hi);
    return result;
}

// Huber contamination: a fraction eps of each sample is replaced by draws
// from a far concentrated outlier distribution (coupled across eps so the
// contamination path is monotone per replication).
inline StudyResult run_contamination_study(const StudyConfig& cfg_in) {
    StudyConfig cfg = cfg_in;
    if (cfg.truth.components.empty()) cfg.truth = default_rate_truth();
    for (double e : cfg.eps_grid)
        if (e < 0.0 || e >= 0.5) throw StudyError("contamination study: eps grid must lie in [0, 0.5)");
    std::size_t n = cfg.n_grid.empty() ? 4000 : cfg.n_grid[0];

    StudyResult result;
    result.config = cfg;
    result.config_hash = fnv1a64(canonical_config_string(cfg));
    result.fields = {"h2"};
    result.cell_n.assign(cfg.eps_grid.size(), n);
    result.cell_eps = cfg.eps_grid;

    std::vector<EmissionSpec> fams;
    for (const auto& c : cfg.truth.components) fams.push_back(c.spec);
    auto truth_view = make_view(cfg.truth);

    // outlier block: narrow uniform at median + 50 IQR of the target law
    RngStream cal(777);
    auto calib = sample_mixture(cfg.truth, 20001, cal);
    std::sort(calib.begin(), calib.end());
    double med = sorted_quantile(calib, 0.5);
    double iqr = sorted_quantile(calib, 0.75) - sorted_quantile(calib, 0.25);
    EmissionParams outlier{med + 50.0 * iqr, std::max(0.01 * iqr, 1e-6)};
    auto outlier_spec = EmissionSpec::uniform();

    detail::run_replications(
        result, cfg.eps_grid.size(), cfg.replications, cfg.threads, cfg.master_seed,
        [&](std::size_t cell, int rep, RngStream&) {
            double eps = cfg.eps_grid[cell];
            // same base stream for every eps of a replication
            RngStream rng(derive_seed(cfg.master_seed ^ 0xc0117a31ULL, static_cast<std::uint64_t>(rep)));
            std::vector<double> x(n);
            for (std::size_t i = 0; i < n; ++i) {
                double u = rng.uniform01();
                double base = sample_mixture_one(cfg.truth, rng);
                double out = sample_one(outlier_spec, outlier, rng);
                x[i] = u < eps ? out : base;
            }
            auto fitted = fit_study_mixture(x, fams, cfg.est, derive_seed(cfg.master_seed, 1000 + rep));
            double h2 = hellinger2_numeric(truth_view, make_view(fitted));
            return std::vector<std::pair<std::string, double>>{{"h2", h2}};
        });
    detail::aggregate(result, cfg.eps_grid.size());

    // Replications are coupled across eps, so the paired difference of the
    // means has a computable standard error; nondecreasing is asserted up to
    // two of them.
    StudyCheck mono{"mean h2 nondecreasing in eps (2 se allowance)", true, ""};
    StudyCheck ceiling{"mean h2 <= 3 eps + level(0)", true, ""};
    for (std::size_t c = 0; c + 1 < cfg.eps_grid.size(); ++c) {
        std::vector<double> diffs;
        for (int rep = 0; rep < cfg.replications; ++rep) {
            const auto* lo_rec = &result.records[c * cfg.replications + rep];
            const auto* hi_rec = &result.records[(c + 1) * cfg.replications + rep];
            if (lo_rec->failed || hi_rec->failed || lo_rec->values.empty() ||
                hi_rec->values.empty())
                continue;
            diffs.push_back(hi_rec->values[0].second - lo_rec->values[0].second);
        }
        double md = 0.0, vd = 0.0;
        for (double d : diffs) md += d;
        md /= std::max<double>(1.0, static_cast<double>(diffs.size()));
        for (double d : diffs) vd += (d - md) * (d - md);
        double se = diffs.size() > 1
                        ? std::sqrt(vd / (static_cast<double>(diffs.size()) *
                                          (static_cast<double>(diffs.size()) - 1.0)))
                        : 0.0;
        if (md < -2.0 * se) mono.pass = false;
    }
    for (std::size_t c = 0; c < cfg.eps_grid.size(); ++c) {
        if (result.cell_mean[c][0] > 3.0 * cfg.eps_grid[c] + result.cell_mean[0][0] + 1e-12)
            ceiling.pass = false;
        mono.detail += format_g17(result.cell_mean[c][0]) + " ";
    }
    ceiling.detail = mono.detail;
    result.pass = mono.pass && ceiling.pass;
    result.checks.push_back(std::move(mono));
    result.checks.push_back(std::move(ceiling));

    // fitted affine relation h2 ~ a eps + b
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    auto m = static_cast<double>(cfg.eps_grid.size());
    for (std::size_t c = 0; c < cfg.eps_grid.size(); ++c) {
        sx += cfg.eps_grid[c];
        sy += result.cell_mean[c][0];
        sxx += cfg.eps_grid[c] * cfg.eps_grid[c];
        sxy += cfg.eps_grid[c] * result.cell_mean[c][0];
    }
    double denom = m * sxx - sx * sx;
    if (denom > 0) {
        SlopeFit affine;
        affine.slope = (m * sxy - sx * sy) / denom;
        affine.intercept = (sy - affine.slope * sx) / m;
        affine.used = cfg.eps_grid.size();
        result.slopes.emplace_back("h2_vs_eps_affine", affine);
    }
    return result;
}

// Parameter recovery: matched (permutation-minimal) weight and clipped
// component losses against the generating GMM.
inline StudyResult run_parameter_study(const StudyConfig& cfg_in) {
    StudyConfig cfg = cfg_in;
    bool known = cfg.kind == "param-known";
    if (cfg.truth.components.empty()) {
        if (known) {
            cfg.truth.weights = WeightVector::real({1.0 - cfg.known_lambda, cfg.known_lambda});
            cfg.truth.components.push_back({EmissionSpec::gaussian(), {0.0, 1.0}});
            cfg.truth.components.push_back({EmissionSpec::gaussian(), {cfg.known_z, 1.0}});
        } else {
            cfg.truth = default_rate_truth();
        }
    }
    StudyResult result;
    result.config = cfg;
    result.config_hash = fnv1a64(canonical_config_string(cfg));
    result.fields = known ? std::vector<std::string>{"lambda_sq", "z_clip"}
                          : std::vector<std::string>{"total", "weight_loss"};
    result.cell_n = cfg.n_grid;

    std::vector<EmissionSpec> fams;
    if (known) {
        // the translation model (1-lambda) phi + lambda phi(. - z) with phi known
        auto shifted = EmissionSpec::known_shifted(EmissionSpec::gaussian(), 1.0);
        fams = {shifted, shifted};
    } else {
        for (const auto& c : cfg.truth.components) fams.push_back(c.spec);
    }

    detail::run_replications(
        result, cfg.n_grid.size(), cfg.replications, cfg.threads, cfg.master_seed,
        [&](std::size_t cell, int, RngStream& rng) {
            std::size_t n = cfg.n_grid[cell];
            auto x = sample_mixture(cfg.truth, n, rng);
            std::vector<std::pair<std::string, double>> out;
            if (known) {
                // component 1 is the known phi pinned at the origin
                std::vector<std::optional<EmissionParams>> pins(2);
                pins[0] = EmissionParams{0.0, 1.0};
                auto fitted = fit_study_mixture(x, fams, cfg.est, rng.raw(), pins);
                // identify the free component as the one away from the pin
                std::size_t free_k = fitted.components[0].params.location == 0.0 &&
                                             fitted.components[0].params.scale == 1.0
                                         ? 1
                                         : 0;
                double lam_hat = fitted.weights[free_k];
                double z_hat = fitted.components[free_k].params.location;
                double dl = lam_hat - cfg.known_lambda;
                double dz = z_hat - cfg.known_z;
                out.emplace_back("lambda_sq", dl * dl);
                out.emplace_back("z_clip", std::min(1.0, dz * dz));
            } else {
                auto fitted = fit_study_mixture(x, fams, cfg.est, rng.raw());
                auto rep = match_components(canonicalize(cfg.truth), fitted);
                out.emplace_back("total", rep.total);
                out.emplace_back("weight_loss", rep.weight_loss);
            }
            return out;
        });
    detail::aggregate(result, cfg.n_grid.size());
    if (known) {
        for (const auto& f : result.fields) {
            auto slope = detail::slope_of(result, f, false);
            result.slopes.emplace_back(f, slope);
            StudyCheck chk{"mean " + f + " decays over the n grid", true, ""};
            std::size_t fi = &f == &result.fields[1] ? 1 : 0;
            double first = result.cell_mean.front()[fi], last = result.cell_mean.back()[fi];
            chk.pass = last < first || last < 1e-10;
            chk.detail = format_g17(first) + " -> " + format_g17(last);
            result.pass = result.pass && chk.pass;
            result.checks.push_back(std::move(chk));
        }
    } else {
        auto slope = detail::slope_of(result, "total", false);
        result.slopes.emplace_back("total", slope);
        if (cfg.n_grid.size() >= 3)
            detail::band_check(result, "total", slope, cfg.slope_lo, cfg.slope_hi);
    }
    return result;
}

// Two-component spike model (1-lambda) s_a + lambda s_a(. - z): medians of
// |z_hat - z*| and |lambda_hat - lambda*| per n, slopes against the
// faster-than-parametric targets.
inline StudyResult run_spike_study(const StudyConfig& cfg_in) {
    StudyConfig cfg = cfg_in;
    double alpha = cfg.spike_alpha;
    if (!(alpha > 0.0 && alpha < 1.0)) throw StudyError("spike study: alpha must lie in (0,1)");
    if (!(cfg.spike_lambda > 0.0)) throw StudyError("spike study: lambda* must be positive");
    if (cfg.spike_z == 0.0) throw StudyError("spike study: z* must be nonzero");
    for (auto n : cfg.n_grid)
        if (n < 20) throw StudyError("spike study: n >= 20 required for delta = 10/n");

    StudyResult result;
    result.config = cfg;
    result.config_hash = fnv1a64(canonical_config_string(cfg));
    result.fields = {"z_err", "lambda_err"};
    result.cell_n = cfg.n_grid;

    auto spike = EmissionSpec::spike(alpha);
    MixtureCandidate truth;
    truth.weights = WeightVector::real({1.0 - cfg.spike_lambda, cfg.spike_lambda});
    truth.components.push_back({spike, {0.0, 1.0}});
    truth.components.push_back({spike, {cfg.spike_z, 1.0}});
    std::vector<EmissionSpec> fams{spike, spike};

    detail::run_replications(
        result, cfg.n_grid.size(), cfg.replications, cfg.threads, cfg.master_seed,
        [&](std::size_t cell, int, RngStream& rng) {
            std::size_t n = cfg.n_grid[cell];
            auto x = sample_mixture(truth, n, rng);
            EstimatorSettings est = cfg.est;
            est.delta_override = std::min(10.0 / static_cast<double>(n), 0.5);
            std::vector<std::optional<EmissionParams>> pins(2);
            pins[0] = EmissionParams{0.0, 1.0};
            double nn = static_cast<double>(n);
            double target =
                0.2 * std::pow(std::log(nn) / nn, 1.0 / (1.0 - alpha));
            auto fitted = fit_study_mixture(x, fams, est, rng.raw(), pins, target);
            std::size_t free_k = fitted.components[0].params.location == 0.0 ? 1 : 0;
            double z_hat = fitted.components[free_k].params.location;
            double lam_hat = fitted.weights[free_k];
            return std::vector<std::pair<std::string, double>>{
                {"z_err", std::abs(z_hat - cfg.spike_z)},
                {"lambda_err", std::abs(lam_hat - cfg.spike_lambda)}};
        });
    detail::aggregate(result, cfg.n_grid.size());
    auto z_slope = detail::slope_of(result, "z_err", true);
    auto l_slope = detail::slope_of(result, "lambda_err", true);
    result.slopes.emplace_back("z_err_median", z_slope);
    result.slopes.emplace_back("lambda_err_median", l_slope);
    if (cfg.n_grid.size() >= 3) {
        detail::band_check(result, "z_err(median)", z_slope, cfg.slope_lo, cfg.slope_hi);
        if (std::abs(alpha - 0.5) < 1e-12)
            detail::band_check(result, "lambda_err(median)", l_slope, -0.75, -0.35);
    }
    return result;
}

// Continuous Gaussian mixture approximation: fit G_K with
// K = ceil(2 R^4 log^2 n / 27) against p_H for H uniform on a rectangle.
inline StudyResult run_continuous_approx_study(const StudyConfig& cfg_in) {
    StudyConfig cfg = cfg_in;
    StudyResult result;
    result.config = cfg;
    result.config_hash = fnv1a64(canonical_config_string(cfg));
    result.fields = {"h2"};
    result.cell_n = cfg.n_grid;

    auto H = MixingMeasure::uniform_rect(-cfg.cont_A, cfg.cont_A, 1.0, cfg.cont_R);
    auto truth_view = mixing_view(H);

    detail::run_replications(
        result, cfg.n_grid.size(), cfg.replications, cfg.threads, cfg.master_seed,
        [&](std::size_t cell, int, RngStream& rng) {
            std::size_t n = cfg.n_grid[cell];
            auto kfc = k_for_continuous(cfg.cont_R, n, cfg.cont_A);
            std::vector<double> x(n);
            for (auto& xi : x) xi = sample_mixing_one(H, rng);
            std::vector<EmissionSpec> fams(kfc.K, EmissionSpec::gaussian());
            EstimatorSettings est = cfg.est;
            if (kfc.K > 4) {
                est.weight_denominator = 0;  // transfer moves on the implicit grid
            }
            MixtureCandidate fitted;
            if (kfc.K > 4) {
                double v_bar = 5.0 * static_cast<double>(kfc.K);
                double delta = est.delta_override >= 0.0
                                   ? est.delta_override
                                   : delta_default(kfc.K, v_bar, n);
                FactoredModel model;
                model.descriptor = ModelDescriptor::make(fams, delta);
                auto net = build_net_robust(fams[0], x, est.locations, est.scales);
                model.nets.assign(kfc.K, net);
                auto N = static_cast<std::int64_t>(
                    std::max<std::size_t>(2 * kfc.K, static_cast<std::size_t>(
                                                         std::sqrt(static_cast<double>(n)))));
                while (static_cast<double>(N) * delta > 1.0 &&
                       std::ceil(delta * static_cast<double>(N)) * static_cast<double>(kfc.K) >
                           static_cast<double>(N))
                    ++N;
                model.weight_denominator = N;
                FitOptions opt = est.fit;
                opt.explicit_budget = 0;  // always factored at this size
                RngStream frng(rng.raw());
                fitted = fit_factored(x, std::move(model), 0.0, opt, frng).chosen;
            } else {
                fitted = fit_study_mixture(x, fams, est, rng.raw());
            }
            double h2 = hellinger2_numeric(truth_view, make_view(fitted));
            return std::vector<std::pair<std::string, double>>{{"h2", h2}};
        });
    detail::aggregate(result, cfg.n_grid.size());

    StudyCheck dec{"mean h2 decreasing over the n grid", true, ""};
    if (result.cell_mean.size() >= 2)
        dec.pass = result.cell_mean.back()[0] < result.cell_mean.front()[0];
    for (const auto& row : result.cell_mean) dec.detail += format_g17(row[0]) + " ";
    result.pass = result.pass && dec.pass;
    result.checks.push_back(dec);

    double envelope_c = 0.0;
    for (std::size_t cell = 0; cell < cfg.n_grid.size(); ++cell) {
        double nn = static_cast<double>(cfg.n_grid[cell]);
        double env = std::pow(cfg.cont_R, 4) * std::pow(std::log(nn), 3) / nn;
        envelope_c = std::max(envelope_c, result.cell_mean[cell][0] / env);
    }
    StudyCheck env{"h2 within c R^4 log^3(n)/n for c < 100", envelope_c < 100.0,
                   "c=" + format_g17(envelope_c)};
    result.pass = result.pass && env.pass;
    result.checks.push_back(env);
    return result;
}

// Order-selection frequencies: fraction of replications recovering target_K.
inline StudyResult run_order_selection_study(const StudyConfig& cfg_in) {
    StudyConfig cfg = cfg_in;
    if (cfg.truth.components.empty()) {
        cfg.truth.weights = WeightVector::real({1.0});
        cfg.truth.components.push_back({EmissionSpec::gaussian(), {0.0, 1.0}});
    }
    StudyResult result;
    result.config = cfg;
    result.config_hash = fnv1a64(canonical_config_string(cfg));
    result.fields = {"k_hat", "hit"};
    result.cell_n = cfg.n_grid;

    detail::run_replications(
        result, cfg.n_grid.size(), cfg.replications, cfg.threads, cfg.master_seed,
        [&](std::size_t cell, int, RngStream& rng) {
            std::size_t n = cfg.n_grid[cell];
            auto x = sample_mixture(cfg.truth, n, rng);
            // order decisions are coarse; a lighter search than the rate
            // studies use is plenty
            SelectionOptions opt;
            opt.locations = std::min<std::size_t>(cfg.est.locations, 13);
            opt.scales = std::min<std::size_t>(cfg.est.scales, 4);
            opt.kappa = cfg.select_kappa;
            opt.fit = cfg.est.fit;
            opt.fit.probe_count = std::min<std::size_t>(opt.fit.probe_count, 8);
            opt.fit.polish_passes = 1;
            RngStream srng(rng.raw());
            auto rep = select_order(x, cfg.select_k_lo, cfg.select_k_hi,
                                    EmissionSpec::gaussian(), opt, srng);
            return std::vector<std::pair<std::string, double>>{
                {"k_hat", static_cast<double>(rep.K_hat)},
                {"hit", rep.K_hat == cfg.target_K ? 1.0 : 0.0}};
        });
    detail::aggregate(result, cfg.n_grid.size());

    std::size_t hit_f = 1;
    StudyCheck freq{"frequency of K_hat = target at the largest n >= " + format_g17(cfg.freq_min),
                    true, ""};
    freq.pass = result.cell_mean.back()[hit_f] >= cfg.freq_min;
    for (const auto& row : result.cell_mean) freq.detail += format_g17(row[hit_f]) + " ";
    result.pass = result.pass && freq.pass;
    result.checks.push_back(freq);
    if (cfg.require_monotone_freq && result.cell_mean.size() >= 2) {
        StudyCheck mono{"hit frequency nondecreasing in n", true, freq.detail};
        for (std::size_t c = 0; c + 1 < result.cell_mean.size(); ++c)
            if (result.cell_mean[c + 1][hit_f] < result.cell_mean[c][hit_f] - 1e-12)
                mono.pass = false;
        result.pass = result.pass && mono.pass;
        result.checks.push_back(mono);
    }
    return result;
}

// Gaussian-vs-Cauchy family identification frequencies.
inline StudyResult run_family_selection_study(const StudyConfig& cfg_in) {
    StudyConfig cfg = cfg_in;
    if (cfg.truth.components.empty()) {
        cfg.truth.weights = WeightVector::real({0.5, 0.5});
        cfg.truth.components.push_back({EmissionSpec::gaussian(), {0.0, 1.0}});
        cfg.truth.components.push_back({EmissionSpec::cauchy(), {4.0, 1.0}});
    }
    StudyResult result;
    result.config = cfg;
    result.config_hash = fnv1a64(canonical_config_string(cfg));
    result.fields = {"j_hat", "hit"};
    result.cell_n = cfg.n_grid;

    detail::run_replications(
        result, cfg.n_grid.size(), cfg.replications, cfg.threads, cfg.master_seed,
        [&](std::size_t cell, int, RngStream& rng) {
            std::size_t n = cfg.n_grid[cell];
            auto x = sample_mixture(cfg.truth, n, rng);
            SelectionOptions opt;
            opt.locations = std::min<std::size_t>(cfg.est.locations, 13);
            opt.scales = std::min<std::size_t>(cfg.est.scales, 4);
            opt.penalty = PenaltyMode::Null;
            opt.fit = cfg.est.fit;
            opt.fit.probe_count = std::min<std::size_t>(opt.fit.probe_count, 8);
            opt.fit.polish_passes = 1;
            RngStream srng(rng.raw());
            auto rep = select_emission_families(x, cfg.family_K, opt, srng);
            return std::vector<std::pair<std::string, double>>{
                {"j_hat", static_cast<double>(rep.j_hat)},
                {"hit", rep.j_hat == cfg.target_j ? 1.0 : 0.0}};
        });
    detail::aggregate(result, cfg.n_grid.size());

    StudyCheck freq{"frequency of j_hat = target at the largest n >= " + format_g17(cfg.freq_min),
                    true, ""};
    freq.pass = result.cell_mean.back()[1] >= cfg.freq_min;
    for (const auto& row : result.cell_mean) freq.detail += format_g17(row[1]) + " ";
    result.pass = result.pass && freq.pass;
    result.checks.push_back(freq);
    if (cfg.require_monotone_freq && result.cell_mean.size() >= 2) {
        StudyCheck mono{"hit frequency nondecreasing in n", true, freq.detail};
        for (std::size_t c = 0; c + 1 < result.cell_mean.size(); ++c)
            if (result.cell_mean[c + 1][1] < result.cell_mean[c][1] - 1e-12) mono.pass = false;
        result.pass = result.pass && mono.pass;
        result.checks.push_back(mono);
    }
    return result;
}

inline StudyResult run_study(const StudyConfig& cfg) {
    if (cfg.kind == "rate-gmm") return run_rate_study(cfg);
    if (cfg.kind == "contamination") return run_contamination_study(cfg);
    if (cfg.kind == "param-gmm" || cfg.kind == "param-known") return run_parameter_study(cfg);
    if (cfg.kind == "spike") return run_spike_study(cfg);
    if (cfg.kind == "continuous") return run_continuous_approx_study(cfg);
    if (cfg.kind == "order-gmm") return run_order_selection_study(cfg);
    if (cfg.kind == "family-gc") return run_family_selection_study(cfg);
    throw StudyError("run_study: unknown study kind '" + cfg.kind + "'");
}

// ---- deterministic study artifacts ----

// Per-replication records; bit-identical across reruns of the same config.
inline std::string records_csv(const StudyResult& r) {
    std::ostringstream os;
    os << "study,n,rep,seed";
    if (!r.cell_eps.empty()) os << ",eps";
    for (const auto& f : r.fields) os << ',' << f;
    os << '\n';
    for (const auto& rec : r.records) {
        os << r.config.kind << ',' << r.cell_n[rec.cell] << ',' << rec.rep << ',' << rec.seed;
        if (!r.cell_eps.empty()) os << ',' << format_g17(r.cell_eps[rec.cell]);
        for (const auto& f : r.fields) {
            double v = std::numeric_limits<double>::quiet_NaN();
            for (const auto& [name, val] : rec.values)
                if (name == f) v = val;
            os << ',' << format_g17(v);
        }
        os << '\n';
    }
    return os.str();
}

// Wall-clock timings, kept out of the deterministic records.
inline std::string timings_csv(const StudyResult& r) {
    std::ostringstream os;
    os << "study,n,rep,runtime_ms\n";
    for (const auto& rec : r.records)
        os << r.config.kind << ',' << r.cell_n[rec.cell] << ',' << rec.rep << ','
           << format_g17(rec.runtime_ms) << '\n';
    return os.str();
}

inline std::string summary_json(const StudyResult& r) {
    std::ostringstream os;
    os << "{\n";
    os << "  \"kind\": \"" << r.config.kind << "\",\n";
    os << "  \"config_hash\": \"" << std::hex << r.config_hash << std::dec << "\",\n";
    os << "  \"xi\": " << format_g17(r.config.xi) << ",\n";
    os << "  \"pass\": " << (r.pass ? "true" : "false") << ",\n";
    os << "  \"n_grid\": [";
    for (std::size_t i = 0; i < r.cell_n.size(); ++i) os << (i ? "," : "") << r.cell_n[i];
    os << "],\n";
    if (!r.cell_eps.empty()) {
        os << "  \"eps_grid\": [";
        for (std::size_t i = 0; i < r.cell_eps.size(); ++i)
            os << (i ? "," : "") << format_g17(r.cell_eps[i]);
        os << "],\n";
    }
    os << "  \"fields\": [";
    for (std::size_t i = 0; i < r.fields.size(); ++i)
        os << (i ? "," : "") << '"' << r.fields[i] << '"';
    os << "],\n";
    auto matrix = [&](const char* name, const std::vector<std::vector<double>>& mm) {
        os << "  \"" << name << "\": [";
        for (std::size_t i = 0; i < mm.size(); ++i) {
            os << (i ? "," : "") << '[';
            for (std::size_t j = 0; j < mm[i].size(); ++j)
                os << (j ? "," : "") << format_g17(mm[i][j]);
            os << ']';
        }
        os << "],\n";
    };
    matrix("mean", r.cell_mean);
    matrix("median", r.cell_median);
    os << "  \"slopes\": {";
    bool first = true;
    for (const auto& [name, s] : r.slopes) {
        os << (first ? "" : ",") << "\n    \"" << name << "\": ";
        if (s)
            os << "{\"slope\": " << format_g17(s->slope) << ", \"stderr\": "
               << format_g17(s->stderr_) << ", \"points\": " << s->used << "}";
        else
            os << "null";
        first = false;
    }
    os << "\n  },\n";
    os << "  \"checks\": [";
    for (std::size_t i = 0; i < r.checks.size(); ++i) {
        os << (i ? "," : "") << "\n    {\"name\": \"" << r.checks[i].name << "\", \"pass\": "
           << (r.checks[i].pass ? "true" : "false") << ", \"detail\": \"" << r.checks[i].detail
           << "\"}";
    }
    os << "\n  ],\n";
    os << "  \"total_runtime_ms\": " << format_g17(r.total_runtime_ms) << "\n";
    os << "}\n";
    return os.str();
}

inline void write_study_outputs(const StudyResult& r, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    auto put = [&](const std::filesystem::path& p, const std::string& s) {
        std::ofstream f(p, std::ios::binary);
        if (!f) throw StudyError("write_study_outputs: cannot write " + p.string());
        f << s;
    };
    put(dir / "records.csv", records_csv(r));
    put(dir / "timings.csv", timings_csv(r));
    put(dir / "summary.json", summary_json(r));
    std::filesystem::create_directories(dir / "plotdata");
    for (std::size_t f = 0; f < r.fields.size(); ++f) {
        std::ostringstream os;
        for (std::size_t c = 0; c < r.cell_n.size(); ++c) {
            double xcol = r.cell_eps.empty() ? static_cast<double>(r.cell_n[c]) : r.cell_eps[c];
            os << format_g17(xcol) << ' ' << format_g17(r.cell_mean[c][f]) << ' '
               << format_g17(r.cell_median[c][f]) << '\n';
        }
        put(dir / "plotdata" / (r.fields[f] + ".dat"), os.str());
    }
}

}  // namespace rhomix
