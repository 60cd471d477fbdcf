#include <catch2/catch.hpp>

#include <cmath>

#include "rhomix/metrics.hpp"
#include "rhomix/rho.hpp"
#include "rhomix/rng.hpp"

using namespace rhomix;

namespace {

MixtureCandidate uniform_candidate(double lo, double width) {
    MixtureCandidate c;
    c.weights = WeightVector::real({1.0});
    c.components.push_back({EmissionSpec::uniform(), {lo, width}});
    return c;
}

CandidateSet two_uniform_set() {
    CandidateSet set;
    set.descriptor = ModelDescriptor::make({EmissionSpec::uniform()}, 1.0);
    set.candidates.push_back(uniform_candidate(0.0, 1.0));
    set.candidates.push_back(uniform_candidate(2.0, 1.0));
    return set;
}

CandidateSet random_gaussian_set(std::size_t target_size, std::span<const double> data,
                                 RngStream& rng) {
    auto spec = EmissionSpec::gaussian();
    std::size_t L = 2 + rng.index(10);
    std::size_t S = 1 + rng.index(5);
    while (L * S < target_size / 8) L += 3;
    auto net = build_net(spec, data, L, S);
    if (net.size() > target_size) net.resize(target_size);
    CandidateSet set;
    set.descriptor = ModelDescriptor::make({spec}, 1.0);
    for (const auto& p : net) {
        MixtureCandidate c;
        c.weights = WeightVector::real({1.0});
        c.components.push_back({spec, p});
        set.candidates.push_back(c);
    }
    return set;
}

}  // namespace

TEST_CASE("psi", "[rho]") {
    CHECK(psi(0.0) == -1.0);
    CHECK(psi(1.0) == 0.0);
    CHECK(psi(4.0) == Approx(0.6));
    CHECK(psi(std::numeric_limits<double>::infinity()) == 1.0);
    CHECK_THROWS_AS(psi(-0.5), std::domain_error);
}

TEST_CASE("t statistic conventions", "[rho]") {
    auto u01 = uniform_candidate(0.0, 1.0);
    auto u23 = uniform_candidate(2.0, 1.0);
    std::vector<double> x{0.1, 0.4, 0.6, 0.9};

    CHECK(t_statistic(x, u01, u01) == 0.0);
    // q'(x)/q(x) = infinity at every point: each term is psi(+inf) = 1
    CHECK(t_statistic(x, u23, u01) == Approx(4.0));
    CHECK(t_statistic(x, u01, u23) == Approx(-4.0));
    // both densities vanish: 0/0 counts as ratio 1, term 0
    std::vector<double> far{5.0, 6.0};
    CHECK(t_statistic(far, u01, u23) == 0.0);

    // single point with density ratio 4: psi(2) = 1/3
    auto narrow = uniform_candidate(0.0, 0.25);
    std::vector<double> one{0.1};
    CHECK(t_statistic(one, u01, narrow) == Approx(1.0 / 3.0));
}

TEST_CASE("t statistic is exactly antisymmetric and bounded", "[rho]") {
    RngStream rng(13);
    auto specs = std::vector<EmissionSpec>{EmissionSpec::gaussian(), EmissionSpec::cauchy(),
                                           EmissionSpec::spike(0.5), EmissionSpec::uniform()};
    for (int trial = 0; trial < 50; ++trial) {
        MixtureCandidate a, b;
        a.weights = WeightVector::real({1.0});
        b.weights = WeightVector::real({1.0});
        const auto& sa = specs[rng.index(specs.size())];
        const auto& sb = specs[rng.index(specs.size())];
        a.components.push_back({sa, {rng.uniform(-2, 2), rng.uniform(0.3, 2.0)}});
        b.components.push_back({sb, {rng.uniform(-2, 2), rng.uniform(0.3, 2.0)}});
        std::size_t n = 10 + rng.index(50);
        std::vector<double> x(n);
        for (auto& xi : x) xi = rng.uniform(-3, 3);
        double tab = t_statistic(x, a, b);
        double tba = t_statistic(x, b, a);
        CHECK(tab + tba == 0.0);  // exact, including the infinite-ratio conventions
        CHECK(std::abs(tab) <= static_cast<double>(n));
    }
}

TEST_CASE("upsilon on the deterministic two-uniform problem", "[rho]") {
    auto set = two_uniform_set();
    RngStream rng(2);
    std::vector<double> x(25);
    for (auto& xi : x) xi = rng.uniform01() * 0.98 + 0.01;
    double n = static_cast<double>(x.size());

    CHECK(upsilon(x, set.candidates[0], set) == 0.0);
    CHECK(upsilon(x, set.candidates[1], set) == Approx(n));

    SECTION("singleton set") {
        CandidateSet single;
        single.descriptor = set.descriptor;
        single.candidates.push_back(set.candidates[0]);
        CHECK(upsilon(x, set.candidates[0], single) == 0.0);
    }
    SECTION("the fit picks the supported uniform with exact values") {
        auto fit = rho_estimate(x, set);
        CHECK(fit.chosen_index == 0);
        CHECK(fit.upsilon == 0.0);
        CHECK(fit.chosen.components[0].params.location == 0.0);
        CHECK(fit.upsilon <= 0.0 + PsiConstants::slack);
    }
    SECTION("a constant penalty does not change the minimizer") {
        std::vector<double> pen{3.7};
        auto sets = std::span<const CandidateSet>(&set, 1);
        auto plain = rho_estimate(x, sets, {}, {});
        auto shifted = rho_estimate(x, sets, pen, {});
        CHECK(plain.chosen_index == shifted.chosen_index);
        CHECK(shifted.upsilon == Approx(plain.upsilon));  // pen(q') and pen(q) cancel
    }
}

TEST_CASE("empty and budget errors", "[rho]") {
    std::vector<double> x{0.5};
    CandidateSet empty;
    empty.descriptor = ModelDescriptor::make({EmissionSpec::uniform()}, 1.0);
    CHECK_THROWS_AS(rho_estimate(x, empty), std::domain_error);
    auto set = two_uniform_set();
    SearchConfig cfg;
    cfg.max_rows = 0;
    CHECK_THROWS_AS(rho_estimate(x, set, cfg), SearchError);
}

TEST_CASE("heuristic search returns the exhaustive minimizer", "[rho]") {
    RngStream rng(101);
    for (int problem = 0; problem < 30; ++problem) {
        std::size_t n = 40 + rng.index(160);
        std::vector<double> data(n);
        double mu = rng.uniform(-2, 2), sigma = rng.uniform(0.5, 2.0);
        for (auto& x : data) x = mu + sigma * rng.normal();
        auto set = random_gaussian_set(40 + rng.index(460), data, rng);

        SearchConfig ex{SearchMode::Exhaustive, SIZE_MAX, true};
        SearchConfig heur{SearchMode::Heuristic, SIZE_MAX, false};
        auto fe = rho_estimate(data, set, ex);
        auto fh = rho_estimate(data, set, heur);
        CHECK(fe.chosen_index == fh.chosen_index);
        CHECK(fe.upsilon == fh.upsilon);
        CHECK(fh.rows_evaluated <= fe.rows_evaluated);
        REQUIRE(fe.upsilon_table.has_value());
        double min_u = *std::min_element(fe.upsilon_table->begin(), fe.upsilon_table->end());
        CHECK(fe.upsilon <= min_u + PsiConstants::slack);
    }
}

TEST_CASE("affine equivariance of the T table", "[rho]") {
    RngStream rng(55);
    for (int problem = 0; problem < 10; ++problem) {
        std::size_t n = 60;
        std::vector<double> data(n);
        for (auto& x : data) x = 1.5 + 0.8 * rng.normal();
        auto set = random_gaussian_set(120, data, rng);

        double a = rng.uniform(-5, 5), b = rng.uniform(0.2, 4.0);
        std::vector<double> tdata(n);
        for (std::size_t i = 0; i < n; ++i) tdata[i] = (data[i] - a) / b;
        CandidateSet tset;
        tset.descriptor = set.descriptor;
        for (const auto& c : set.candidates)
            tset.candidates.push_back(affine_transform_candidate(c, a, b));

        for (int k = 0; k < 5; ++k) {
            std::size_t i = rng.index(set.size()), j = rng.index(set.size());
            double t0 = t_statistic(data, set.candidates[i], set.candidates[j]);
            double t1 = t_statistic(tdata, tset.candidates[i], tset.candidates[j]);
            CHECK(t1 == Approx(t0).margin(1e-9 * static_cast<double>(n)));
        }
        auto f0 = rho_estimate(data, set);
        auto f1 = rho_estimate(tdata, tset);
        CHECK(f0.chosen_index == f1.chosen_index);
    }
}

TEST_CASE("exhaustive fit recovers a standard gaussian from its net", "[rho]") {
    // K = 1 net of 21 locations x 7 scales; the chosen parameters should land
    // within one grid step of (0, 1) in nearly every replication.
    auto spec = EmissionSpec::gaussian();
    int hits = 0;
    const int reps = 100;
    for (int rep = 0; rep < reps; ++rep) {
        RngStream rng(9000 + rep);
        std::vector<double> data(400);
        for (auto& x : data) x = rng.normal();
        auto net = build_net(spec, data, 21, 7);
        std::vector<double> locs, scls;
        for (const auto& p : net) {
            locs.push_back(p.location);
            scls.push_back(std::log(p.scale));
        }
        std::sort(locs.begin(), locs.end());
        locs.erase(std::unique(locs.begin(), locs.end()), locs.end());
        std::sort(scls.begin(), scls.end());
        scls.erase(std::unique(scls.begin(), scls.end()), scls.end());
        double loc_step = locs[1] - locs[0];
        double log_step = scls[1] - scls[0];

        CandidateSet set;
        set.descriptor = ModelDescriptor::make({spec}, 1.0);
        for (const auto& p : net) {
            MixtureCandidate c;
            c.weights = WeightVector::real({1.0});
            c.components.push_back({spec, p});
            set.candidates.push_back(c);
        }
        auto fit = rho_estimate(data, set);
        double dz = std::abs(fit.chosen.components[0].params.location);
        double ds = std::abs(std::log(fit.chosen.components[0].params.scale));
        if (dz <= loc_step + 1e-12 && ds <= log_step + 1e-12) ++hits;
    }
    CHECK(hits >= 95);
}

TEST_CASE("default delta rule", "[rho]") {
    CHECK(delta_default(1, 5, 100) == 1.0);
    CHECK(delta_default(2, 10, 1000) == Approx(0.01));
    CHECK(delta_default(5, 25, 50) == Approx(0.125));
}

TEST_CASE("penalty formula and rho dimension", "[rho]") {
    auto d = ModelDescriptor::make({EmissionSpec::gaussian(), EmissionSpec::gaussian()}, 0.01);
    REQUIRE(d.vc_sum == 10);

    double bracket = 5.82 + std::log(900.0) + std::log(100.0);
    CHECK(penalty_value(d, 1000, 470.0, 2.0) == Approx(470.0 * (174.1 * 10.0 * bracket + 2.0)));
    CHECK(penalty_value(d, 1000, 470.0, 2.0) == Approx(1.41e7).epsilon(2e-3));

    // linearity in Delta
    CHECK(penalty_value(d, 1000, 470.0, 5.0) - penalty_value(d, 1000, 470.0, 2.0) ==
          Approx(470.0 * 3.0));

    // Delta(K) = K satisfies the summability constraint
    double s = 0.0;
    for (int k = 1; k <= 60; ++k) s += std::exp(-static_cast<double>(k));
    CHECK(s <= 1.0);
    CHECK(s == Approx(1.0 / (std::exp(1.0) - 1.0)).epsilon(1e-12));

    // rho dimension: the stated formula capped at n/6
    CHECK(rho_dimension_bound(10, 2, 0.01, 1000) == Approx(1000.0 / 6.0));
    double unlimited = 818.1 * 10.0 * bracket;
    CHECK(rho_dimension_bound(10, 2, 0.01, 10'000'000) ==
          Approx(818.1 * 10.0 * (5.82 + std::log(900.0) + std::log(1e6))));
    CHECK(unlimited > rho_dimension_bound(10, 2, 0.01, 1000));
    // halving delta raises the uncapped bound by 818.1 * Vbar * log 2
    double big_n = 1e9;
    double d1 = rho_dimension_bound(10, 2, 0.01, static_cast<std::size_t>(big_n));
    double d2 = rho_dimension_bound(10, 2, 0.005, static_cast<std::size_t>(big_n));
    CHECK(d2 - d1 == Approx(818.1 * 10.0 * std::log(2.0)).epsilon(1e-9));

    CHECK_THROWS_AS(rho_dimension_bound(10, 2, 0.0, 100), std::domain_error);

    PenaltySpec pen;
    pen.Delta = [](const ModelDescriptor& md) { return static_cast<double>(md.K); };
    std::vector<ModelDescriptor> thetas{ModelDescriptor::make({EmissionSpec::gaussian()}, 1.0), d};
    CHECK_NOTHROW(pen.validate_summability(thetas));
    PenaltySpec bad;
    bad.Delta = [](const ModelDescriptor&) { return 0.0; };
    CHECK_THROWS_AS(bad.validate_summability(thetas), std::domain_error);
}
