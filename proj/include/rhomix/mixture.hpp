#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "rhomix/emission.hpp"
#include "rhomix/quadrature.hpp"
#include "rhomix/rng.hpp"
#include "rhomix/simplex.hpp"

namespace rhomix {

struct MixtureComponent {
    EmissionSpec spec;
    EmissionParams params;
};

struct MixtureCandidate {
    WeightVector weights;
    std::vector<MixtureComponent> components;

    std::size_t order() const { return components.size(); }

    void validate() const {
        if (components.empty()) throw std::domain_error("MixtureCandidate: no components");
        if (weights.size() != components.size())
            throw std::domain_error("MixtureCandidate: weight/component count mismatch");
        for (const auto& c : components) validate_params(c.spec, c.params);
    }
};

// theta = (K, lambda_1..lambda_K): the model a candidate set is drawn from.
struct ModelDescriptor {
    std::size_t K = 1;
    std::vector<EmissionSpec> families;
    double delta = 0.0;
    int vc_sum = 0;

    static ModelDescriptor make(std::vector<EmissionSpec> fams, double delta) {
        ModelDescriptor d;
        d.K = fams.size();
        if (d.K == 0) throw std::domain_error("ModelDescriptor: needs at least one family");
        if (delta > 1.0 / static_cast<double>(d.K) + 1e-12)
            throw std::domain_error("ModelDescriptor: delta must be <= 1/K");
        d.families = std::move(fams);
        d.delta = delta;
        d.vc_sum = 0;
        for (const auto& f : d.families) d.vc_sum += vc_index_bound(f);
        return d;
    }

    std::string label() const {
        std::ostringstream os;
        os << "K=" << K;
        for (const auto& f : families) os << ',' << spec_token(f);
        return os.str();
    }
};

struct CandidateSet {
    ModelDescriptor descriptor;
    std::vector<MixtureCandidate> candidates;

    std::size_t size() const { return candidates.size(); }
};

inline double mixture_density(const MixtureCandidate& c, double x) {
    double acc = 0.0;
    for (std::size_t k = 0; k < c.components.size(); ++k)
        acc += c.weights[k] * density(c.components[k].spec, c.components[k].params, x);
    return acc;
}

inline double sample_mixture_one(const MixtureCandidate& c, RngStream& rng) {
    double u = rng.uniform01();
    double acc = 0.0;
    std::size_t k = 0;
    for (; k + 1 < c.components.size(); ++k) {
        acc += c.weights[k];
        if (u < acc) break;
    }
    return sample_one(c.components[k].spec, c.components[k].params, rng);
}

inline std::vector<double> sample_mixture(const MixtureCandidate& c, std::size_t n, RngStream& rng) {
    if (n < 1) throw std::domain_error("sample_mixture: n must be >= 1");
    std::vector<double> out(n);
    for (auto& x : out) x = sample_mixture_one(c, rng);
    return out;
}

inline DensityView make_view(const MixtureCandidate& c) {
    DensityView v;
    MixtureCandidate copy = c;
    v.pdf = [copy](double x) { return mixture_density(copy, x); };
    double wsum = 0.0, ctr = 0.0, spread = 1e-12;
    for (std::size_t k = 0; k < c.components.size(); ++k) {
        auto bp = density_breakpoints(c.components[k].spec, c.components[k].params);
        v.breakpoints.insert(v.breakpoints.end(), bp.begin(), bp.end());
        auto sg = density_singularities(c.components[k].spec, c.components[k].params);
        v.singularities.insert(v.singularities.end(), sg.begin(), sg.end());
        ctr += c.weights[k] * c.components[k].params.location;
        wsum += c.weights[k];
        double s = c.components[k].spec.has_scale() ? c.components[k].params.scale : 1.0;
        spread = std::max(spread, std::abs(c.components[k].params.location) + s);
    }
    v.center = ctr / std::max(wsum, 1e-300);
    v.spread = spread;
    v.tail = [copy](double lo, double hi) {
        double acc = 0.0;
        for (std::size_t k = 0; k < copy.components.size(); ++k)
            acc += copy.weights[k] *
                   tail_mass(copy.components[k].spec, copy.components[k].params, lo, hi);
        return std::min(1.0, acc);
    };
    return v;
}

// Ordering of component parameters: larger scale first, ties by larger
// location; provides a canonical representative under label switching.
inline bool component_greater(const MixtureComponent& a, const MixtureComponent& b) {
    if (a.params.scale != b.params.scale) return a.params.scale > b.params.scale;
    return a.params.location > b.params.location;
}

inline bool components_canonical(const MixtureCandidate& c) {
    for (std::size_t k = 0; k + 1 < c.components.size(); ++k) {
        const auto& a = c.components[k];
        const auto& b = c.components[k + 1];
        if (a.spec.kind != b.spec.kind) continue;  // mixed kinds: order within kind blocks
        if (component_greater(b, a)) return false;
    }
    return true;
}

// Sort components descending by (scale, location) within each same-kind block,
// carrying the weights along. Idempotent.
inline MixtureCandidate canonicalize(const MixtureCandidate& c) {
    std::size_t K = c.components.size();
    std::vector<std::size_t> idx(K);
    std::iota(idx.begin(), idx.end(), 0);
    std::size_t start = 0;
    while (start < K) {
        std::size_t end = start + 1;
        while (end < K && c.components[idx[end]].spec.kind == c.components[idx[start]].spec.kind)
            ++end;
        std::stable_sort(idx.begin() + static_cast<std::ptrdiff_t>(start),
                         idx.begin() + static_cast<std::ptrdiff_t>(end),
                         [&](std::size_t i, std::size_t j) {
                             return component_greater(c.components[i], c.components[j]);
                         });
        start = end;
    }
    MixtureCandidate out;
    out.components.reserve(K);
    std::vector<double> w(K);
    bool exact = c.weights.exact();
    std::vector<std::int64_t> num(K);
    for (std::size_t k = 0; k < K; ++k) {
        out.components.push_back(c.components[idx[k]]);
        w[k] = c.weights.w[idx[k]];
        if (exact) num[k] = c.weights.num[idx[k]];
    }
    if (exact)
        out.weights = WeightVector::rational(std::move(num), c.weights.den, c.weights.floor_delta);
    else
        out.weights = WeightVector::real(std::move(w), c.weights.floor_delta);
    return out;
}

struct CandidateBudgetError : std::runtime_error {
    std::size_t required;
    explicit CandidateBudgetError(std::size_t req)
        : std::runtime_error("assemble_candidates: cross product of " + std::to_string(req) +
                             " candidates exceeds the configured budget"),
          required(req) {}
};

// Full cross product (weight grid) x (net_1) x ... x (net_K). When all
// families and nets coincide, `reduce_exchangeable` keeps only candidates
// whose components appear in canonical order.
inline CandidateSet assemble_candidates(const ModelDescriptor& descriptor,
                                        const std::vector<std::vector<EmissionParams>>& nets,
                                        const std::vector<WeightVector>& weight_grid,
                                        std::size_t budget = 2'000'000,
                                        bool reduce_exchangeable = true) {
    std::size_t K = descriptor.K;
    if (nets.size() != K) throw std::domain_error("assemble_candidates: one net per component required");
    if (weight_grid.empty()) throw std::domain_error("assemble_candidates: empty weight grid");
    for (const auto& net : nets)
        if (net.empty()) throw std::domain_error("assemble_candidates: empty net");
    for (const auto& w : weight_grid) {
        if (w.size() != K) throw std::domain_error("assemble_candidates: weight arity mismatch");
        for (double x : w.w)
            if (x < descriptor.delta - 1e-12)
                throw std::domain_error("assemble_candidates: weight grid violates the delta floor");
    }

    bool identical = true;
    for (std::size_t k = 1; k < K && identical; ++k) {
        identical = descriptor.families[k].kind == descriptor.families[0].kind &&
                    descriptor.families[k].shape == descriptor.families[0].shape &&
                    nets[k].size() == nets[0].size();
        if (identical)
            for (std::size_t j = 0; j < nets[k].size(); ++j)
                if (!(nets[k][j] == nets[0][j])) {
                    identical = false;
                    break;
                }
    }
    bool reduce = reduce_exchangeable && identical && K > 1;

    std::size_t product = weight_grid.size();
    for (const auto& net : nets) {
        if (product > budget / std::max<std::size_t>(net.size(), 1) + 1)
            throw CandidateBudgetError(product * net.size());
        product *= net.size();
    }
    if (product > budget) throw CandidateBudgetError(product);

    CandidateSet set;
    set.descriptor = descriptor;
    std::vector<std::size_t> j(K, 0);
    auto emit = [&](auto&& self, std::size_t k) -> void {
        if (k == K) {
            // canonical-order filter: component k must not precede k-1
            if (reduce) {
                for (std::size_t t = 0; t + 1 < K; ++t) {
                    MixtureComponent a{descriptor.families[t], nets[t][j[t]]};
                    MixtureComponent b{descriptor.families[t + 1], nets[t + 1][j[t + 1]]};
                    if (component_greater(b, a)) return;
                }
            }
            for (const auto& w : weight_grid) {
                MixtureCandidate c;
                c.weights = w;
                for (std::size_t t = 0; t < K; ++t)
                    c.components.push_back({descriptor.families[t], nets[t][j[t]]});
                set.candidates.push_back(std::move(c));
            }
            return;
        }
        for (j[k] = 0; j[k] < nets[k].size(); ++j[k]) self(self, k + 1);
    };
    emit(emit, 0);
    if (set.candidates.empty()) throw std::domain_error("assemble_candidates: no candidates produced");
    return set;
}

// ---- line-oriented candidate serialization (weights, then kind/loc/scale) ----

inline std::string candidate_to_line(const MixtureCandidate& c) {
    std::ostringstream os;
    os.precision(17);
    for (std::size_t k = 0; k < c.weights.size(); ++k) {
        if (k) os << ' ';
        os << c.weights[k];
    }
    for (const auto& comp : c.components)
        os << ' ' << spec_token(comp.spec) << ' ' << comp.params.location << ' '
           << comp.params.scale;
    return os.str();
}

inline MixtureCandidate candidate_from_line(const std::string& line, std::size_t K) {
    std::istringstream is(line);
    std::vector<double> w(K);
    for (auto& x : w)
        if (!(is >> x)) throw std::domain_error("candidate_from_line: truncated weights");
    MixtureCandidate c;
    c.weights = WeightVector::real(std::move(w));
    for (std::size_t k = 0; k < K; ++k) {
        std::string token;
        EmissionParams p;
        if (!(is >> token >> p.location >> p.scale))
            throw std::domain_error("candidate_from_line: truncated component");
        c.components.push_back({spec_from_token(token), p});
    }
    return c;
}

inline std::string candidate_set_to_text(const CandidateSet& set) {
    std::ostringstream os;
    for (const auto& c : set.candidates) os << candidate_to_line(c) << '\n';
    return os.str();
}

}  // namespace rhomix
