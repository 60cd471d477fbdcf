#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <stdexcept>
#include <vector>

namespace rhomix {

// A point of the K-simplex. Grid-born vectors are exact rationals (integer
// numerators over a common denominator) with a real view kept in sync; vectors
// produced by floating-point constructions carry den == 0.
struct WeightVector {
    std::vector<double> w;
    std::vector<std::int64_t> num;
    std::int64_t den = 0;
    double floor_delta = 0.0;

    std::size_t size() const { return w.size(); }
    bool exact() const { return den > 0; }
    double operator[](std::size_t k) const { return w[k]; }

    static WeightVector rational(std::vector<std::int64_t> numerators, std::int64_t denominator,
                                 double floor = 0.0) {
        if (denominator <= 0) throw std::domain_error("WeightVector: denominator must be positive");
        std::int64_t sum = 0;
        for (auto d : numerators) {
            if (d < 0) throw std::domain_error("WeightVector: negative numerator");
            sum += d;
        }
        if (sum != denominator) throw std::domain_error("WeightVector: numerators must sum to the denominator");
        WeightVector v;
        v.num = std::move(numerators);
        v.den = denominator;
        v.floor_delta = floor;
        v.w.resize(v.num.size());
        for (std::size_t k = 0; k < v.num.size(); ++k)
            v.w[k] = static_cast<double>(v.num[k]) / static_cast<double>(denominator);
        v.check_floor();
        return v;
    }

    static WeightVector real(std::vector<double> weights, double floor = 0.0) {
        double sum = 0.0;
        for (double x : weights) {
            if (!(x >= 0.0)) throw std::domain_error("WeightVector: negative weight");
            sum += x;
        }
        if (std::abs(sum - 1.0) > 1e-9) throw std::domain_error("WeightVector: weights must sum to 1");
        WeightVector v;
        v.w = std::move(weights);
        v.floor_delta = floor;
        v.check_floor();
        return v;
    }

  private:
    void check_floor() const {
        if (floor_delta <= 0.0) return;
        for (double x : w)
            if (x < floor_delta - 1e-12)
                throw std::domain_error("WeightVector: coordinate below the delta floor");
    }
};

// Exact binomial coefficient C(n, k); throws on uint64 overflow.
inline std::uint64_t binomial_exact(std::uint64_t n, std::uint64_t k) {
    if (k > n) return 0;
    k = std::min(k, n - k);
    unsigned __int128 acc = 1;
    for (std::uint64_t i = 1; i <= k; ++i) {
        acc = acc * (n - k + i);
        acc /= i;
        if (acc > static_cast<unsigned __int128>(UINT64_MAX))
            throw std::overflow_error("binomial_exact: result exceeds 64 bits");
    }
    return static_cast<std::uint64_t>(acc);
}

// |W_{K,N}| without a floor: the number of compositions of N into K
// nonnegative parts, C(N+K-1, N).
inline std::uint64_t covering_size(std::size_t K, std::uint64_t N) {
    if (K < 1) throw std::domain_error("covering_size: K must be >= 1");
    return binomial_exact(N + K - 1, N);
}

// All (d_1/N, ..., d_K/N) with sum N and d_i/N >= delta, in lexicographic
// order of the numerators. An infeasible floor yields an empty sequence.
inline std::vector<WeightVector> enumerate_weight_grid(std::size_t K, std::int64_t N, double delta) {
    if (K < 1) throw std::domain_error("enumerate_weight_grid: K must be >= 1");
    if (N < static_cast<std::int64_t>(K)) throw std::domain_error("enumerate_weight_grid: N must be >= K");
    if (delta > 1.0 / static_cast<double>(K) + 1e-12)
        throw std::domain_error("enumerate_weight_grid: delta must be <= 1/K");

    auto d_min = static_cast<std::int64_t>(std::ceil(delta * static_cast<double>(N) - 1e-9));
    d_min = std::max<std::int64_t>(d_min, 0);
    std::vector<WeightVector> out;
    if (d_min * static_cast<std::int64_t>(K) > N) return out;

    std::vector<std::int64_t> d(K, 0);
    auto rec = [&](auto&& self, std::size_t k, std::int64_t remaining) -> void {
        if (k + 1 == K) {
            if (remaining >= d_min) {
                d[k] = remaining;
                out.push_back(WeightVector::rational(d, N, delta));
            }
            return;
        }
        std::int64_t hi = remaining - d_min * static_cast<std::int64_t>(K - 1 - k);
        for (std::int64_t v = d_min; v <= hi; ++v) {
            d[k] = v;
            self(self, k + 1, remaining - v);
        }
    };
    rec(rec, 0, N);
    return out;
}

// Squared Hellinger distance between weight vectors viewed as distributions
// on {1..K}.
inline double weight_hellinger2(const WeightVector& a, const WeightVector& b) {
    if (a.size() != b.size()) throw std::domain_error("weight_hellinger2: length mismatch");
    double acc = 0.0;
    for (std::size_t k = 0; k < a.size(); ++k) {
        double d = std::sqrt(a.w[k]) - std::sqrt(b.w[k]);
        acc += d * d;
    }
    return 0.5 * acc;
}

namespace detail {

// Recursive floor-raising construction: lift the smallest coordinate to delta
// and recurse on the renormalized remainder with eta = delta / (1 - delta).
inline std::vector<double> project_floor_rec(std::vector<double> w, double delta) {
    std::size_t K = w.size();
    if (K == 1) return {1.0};
    std::vector<std::size_t> order(K);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t i, std::size_t j) { return w[i] < w[j]; });
    std::size_t i_min = order[0];
    if (w[i_min] >= delta) return w;

    std::vector<double> rest;
    rest.reserve(K - 1);
    double denom = 1.0 - w[i_min];
    for (std::size_t r = 1; r < K; ++r) rest.push_back(w[order[r]] / denom);
    double eta = delta / (1.0 - delta);
    std::vector<double> sub = project_floor_rec(std::move(rest), eta);

    std::vector<double> out(K);
    out[i_min] = delta;
    for (std::size_t r = 1; r < K; ++r) out[order[r]] = (1.0 - delta) * sub[r - 1];
    return out;
}

}  // namespace detail

// Projection onto the delta-floored simplex achieving
// h^2(w, out) <= 1 - sqrt(1 - (K-1) delta). Idempotent; vectors already above
// the floor are returned unchanged.
inline WeightVector project_to_floor(const WeightVector& w, double delta) {
    std::size_t K = w.size();
    if (delta > 1.0 / static_cast<double>(K) + 1e-12)
        throw std::domain_error("project_to_floor: delta must be <= 1/K");
    if (delta <= 0.0) return w;
    bool ok = true;
    for (double x : w.w) ok = ok && x >= delta;
    if (ok) {
        WeightVector out = w;
        out.floor_delta = delta;
        return out;
    }
    std::vector<double> projected = detail::project_floor_rec(w.w, delta);
    double sum = std::accumulate(projected.begin(), projected.end(), 0.0);
    for (double& x : projected) x /= sum;
    WeightVector out;
    out.w = std::move(projected);
    out.floor_delta = delta;
    return out;
}

// Nearest grid vector in sup-norm (floors plus largest-remainder top-up);
// realizes the |w_i - v_i| <= 1/N covering property of the rational grid.
inline WeightVector round_to_grid(const WeightVector& w, std::int64_t N) {
    std::size_t K = w.size();
    std::vector<std::int64_t> d(K);
    std::int64_t total = 0;
    std::vector<std::pair<double, std::size_t>> rem(K);
    for (std::size_t k = 0; k < K; ++k) {
        double scaled = w.w[k] * static_cast<double>(N);
        d[k] = static_cast<std::int64_t>(std::floor(scaled));
        rem[k] = {scaled - std::floor(scaled), k};
        total += d[k];
    }
    std::stable_sort(rem.begin(), rem.end(), [](auto& a, auto& b) { return a.first > b.first; });
    for (std::size_t i = 0; total < N; ++i, ++total) d[rem[i % K].second] += 1;
    return WeightVector::rational(std::move(d), N, 0.0);
}

}  // namespace rhomix
