#include <catch2/catch.hpp>

#include <cmath>

#include "rhomix/metrics.hpp"
#include "rhomix/mixture.hpp"
#include "rhomix/rng.hpp"

using namespace rhomix;

namespace {

MixtureCandidate gaussian_mixture(std::vector<double> w, std::vector<std::pair<double, double>> ps) {
    MixtureCandidate c;
    c.weights = WeightVector::real(std::move(w));
    for (auto [z, s] : ps) c.components.push_back({EmissionSpec::gaussian(), {z, s}});
    return c;
}

MixtureCandidate random_gaussian_mixture(std::size_t K, RngStream& rng) {
    std::vector<double> w(K);
    double sum = 0.0;
    for (auto& x : w) {
        x = 0.1 + rng.uniform01();
        sum += x;
    }
    for (auto& x : w) x /= sum;
    MixtureCandidate c;
    c.weights = WeightVector::real(std::move(w));
    for (std::size_t k = 0; k < K; ++k)
        c.components.push_back(
            {EmissionSpec::gaussian(), {rng.uniform(-3.0, 3.0), rng.uniform(0.3, 2.5)}});
    return c;
}

DensityView uniform_view(double lo, double width) {
    return make_view(EmissionSpec::uniform(), EmissionParams{lo, width});
}

}  // namespace

TEST_CASE("gaussian closed form", "[metrics]") {
    CHECK(hellinger2_gaussian(0.7, 1.3, 0.7, 1.3) == Approx(0.0).margin(1e-15));
    CHECK(hellinger2_gaussian(0, 1, 1, 1) == Approx(1.0 - std::exp(-1.0 / 8.0)).epsilon(1e-12));
    CHECK(hellinger2_gaussian(0, 1, 1, 1) == Approx(0.1175031).margin(5e-8));
    CHECK(hellinger2_gaussian(0, 1, 0, 2) == Approx(1.0 - std::sqrt(4.0 / 5.0)).epsilon(1e-12));
    CHECK_THROWS_AS(hellinger2_gaussian(0, -1, 0, 1), std::domain_error);
}

TEST_CASE("numeric hellinger matches oracles", "[metrics]") {
    auto g = [](double z, double s) {
        return make_view(EmissionSpec::gaussian(), EmissionParams{z, s});
    };
    CHECK(hellinger2_numeric(g(0, 1), g(0, 1)) == Approx(0.0).margin(1e-8));
    CHECK(hellinger2_numeric(g(0, 1), g(1, 1)) == Approx(1.0 - std::exp(-1.0 / 8.0)).margin(1e-7));

    CHECK(hellinger2_numeric(uniform_view(0, 1), uniform_view(2, 1)) == Approx(1.0).margin(1e-8));
    auto spike = [](double z) { return make_view(EmissionSpec::spike(0.5), EmissionParams{z, 1.0}); };
    CHECK(hellinger2_numeric(spike(0), spike(3)) == Approx(1.0).margin(1e-8));
    CHECK(hellinger2_numeric(spike(0), spike(0)) == Approx(0.0).margin(1e-7));

    RngStream rng(99);
    for (int trial = 0; trial < 100; ++trial) {
        double z1 = rng.uniform(-4, 4), z2 = rng.uniform(-4, 4);
        double s1 = rng.uniform(0.2, 3.0), s2 = rng.uniform(0.2, 3.0);
        double num = hellinger2_numeric(g(z1, s1), g(z2, s2));
        double ref = hellinger2_gaussian(z1, s1, z2, s2);
        CHECK(num == Approx(ref).margin(1e-6));
        double num_swapped = hellinger2_numeric(g(z2, s2), g(z1, s1));
        CHECK(num == Approx(num_swapped).margin(1e-9));
    }
}

TEST_CASE("heavy tails: cauchy pairs stay within tolerance", "[metrics]") {
    auto c = [](double z, double s) {
        return make_view(EmissionSpec::cauchy(), EmissionParams{z, s});
    };
    CHECK(hellinger2_numeric(c(0, 1), c(0, 1)) == Approx(0.0).margin(1e-7));
    // symmetry and the [0,1] range on a few spread-out pairs
    RngStream rng(5);
    for (int trial = 0; trial < 20; ++trial) {
        double z = rng.uniform(-20, 20), s = rng.uniform(0.1, 10.0);
        double h = hellinger2_numeric(c(0, 1), c(z, s));
        CHECK(h >= 0.0);
        CHECK(h <= 1.0);
        CHECK(h == Approx(hellinger2_numeric(c(z, s), c(0, 1))).margin(1e-9));
    }
}

TEST_CASE("product distance is the sum of coordinates", "[metrics]") {
    std::vector<double> zeros(5, 0.0);
    CHECK(product_hellinger2(zeros) == 0.0);
    std::vector<double> same(7, 0.25);
    CHECK(product_hellinger2(same) == Approx(7 * 0.25));
    std::vector<double> mixed{0.1, 0.2, 0.3};
    CHECK(product_hellinger2(mixed) == Approx(0.6));
    std::vector<double> bad{1.5};
    CHECK_THROWS_AS(product_hellinger2(bad), std::domain_error);
}

TEST_CASE("mixture upper bound", "[metrics]") {
    auto w = WeightVector::real({0.4, 0.6});
    std::vector<double> zero2{0.0, 0.0};
    CHECK(mixture_hellinger_upper_bound(w, w, zero2) == 0.0);

    auto v = WeightVector::real({0.7, 0.3});
    CHECK(mixture_hellinger_upper_bound(w, v, zero2) == Approx(weight_hellinger2(w, v)));

    RngStream rng(17);
    for (int trial = 0; trial < 100; ++trial) {
        auto a = random_gaussian_mixture(2, rng);
        auto b = random_gaussian_mixture(2, rng);
        std::vector<double> comp_h2(2);
        for (std::size_t k = 0; k < 2; ++k)
            comp_h2[k] = hellinger2_gaussian(a.components[k].params.location,
                                             a.components[k].params.scale,
                                             b.components[k].params.location,
                                             b.components[k].params.scale);
        double bound = mixture_hellinger_upper_bound(a.weights, b.weights, comp_h2);
        double truth = hellinger2_numeric(make_view(a), make_view(b));
        CHECK(bound >= truth - 1e-7);
    }
}

TEST_CASE("triangle inequality for the mixture hellinger distance", "[metrics]") {
    RngStream rng(31);
    for (int trial = 0; trial < 15; ++trial) {
        auto a = random_gaussian_mixture(2, rng);
        auto b = random_gaussian_mixture(2, rng);
        auto c = random_gaussian_mixture(2, rng);
        double ab = std::sqrt(hellinger2_numeric(make_view(a), make_view(b)));
        double ac = std::sqrt(hellinger2_numeric(make_view(a), make_view(c)));
        double cb = std::sqrt(hellinger2_numeric(make_view(c), make_view(b)));
        CHECK(ab <= ac + cb + 1e-6);
    }
}

TEST_CASE("L2 distance is controlled by the hellinger distance", "[metrics]") {
    RngStream rng(41);
    QuadratureConfig cfg;
    for (int trial = 0; trial < 10; ++trial) {
        auto a = random_gaussian_mixture(2, rng);
        MixtureCandidate b;
        if (trial % 2 == 0) {
            b = random_gaussian_mixture(2, rng);
        } else {
            b.weights = WeightVector::real({0.5, 0.5});
            b.components.push_back({EmissionSpec::cauchy(), {rng.uniform(-2, 2), rng.uniform(0.5, 2)}});
            b.components.push_back({EmissionSpec::cauchy(), {rng.uniform(-2, 2), rng.uniform(0.5, 2)}});
        }
        auto va = make_view(a), vb = make_view(b);
        auto l2_f = [&](double x) {
            double d = va.pdf(x) - vb.pdf(x);
            return d * d;
        };
        auto l2 = integrate_adaptive(l2_f, -60.0, 60.0, {}, {}, cfg);
        double sup_a = 0.0, sup_b = 0.0;
        for (double x = -10.0; x <= 10.0; x += 0.001) {
            sup_a = std::max(sup_a, va.pdf(x));
            sup_b = std::max(sup_b, vb.pdf(x));
        }
        double h2 = hellinger2_numeric(va, vb);
        CHECK(l2.value <= 4.0 * (sup_a + sup_b) * h2 + 1e-7);
    }
}

TEST_CASE("component matching", "[metrics]") {
    auto truth = gaussian_mixture({0.4, 0.6}, {{0.0, 1.0}, {3.0, 2.0}});

    SECTION("swapped estimate has zero loss") {
        auto est = gaussian_mixture({0.6, 0.4}, {{3.0, 2.0}, {0.0, 1.0}});
        auto rep = match_components(truth, est);
        CHECK(rep.total == Approx(0.0).margin(1e-15));
        CHECK(rep.permutation == std::vector<std::size_t>{1, 0});
    }
    SECTION("location shift produces the squared loss") {
        auto est = gaussian_mixture({0.4, 0.6}, {{0.3, 1.0}, {3.0, 2.0}});
        auto rep = match_components(truth, est);
        CHECK(rep.component_losses[0] == Approx(0.09));
        CHECK(rep.component_losses[1] == Approx(0.0).margin(1e-15));
    }
    SECTION("large shifts are clipped at one") {
        auto est = gaussian_mixture({0.4, 0.6}, {{10.0, 1.0}, {3.0, 2.0}});
        auto rep = match_components(truth, est);
        CHECK(rep.component_losses[0] == 1.0);
    }
    SECTION("any permutation of the truth matches itself at zero") {
        RngStream rng(8);
        auto t4 = random_gaussian_mixture(4, rng);
        std::vector<std::size_t> perm{2, 0, 3, 1};
        MixtureCandidate est;
        std::vector<double> w(4);
        for (std::size_t k = 0; k < 4; ++k) {
            est.components.push_back(t4.components[perm[k]]);
            w[k] = t4.weights[perm[k]];
        }
        est.weights = WeightVector::real(std::move(w));
        CHECK(match_components(t4, est).total == Approx(0.0).margin(1e-15));
    }
    SECTION("kind mismatch is a domain error") {
        MixtureCandidate est;
        est.weights = WeightVector::real({0.4, 0.6});
        est.components.push_back({EmissionSpec::cauchy(), {0.0, 1.0}});
        est.components.push_back({EmissionSpec::cauchy(), {3.0, 2.0}});
        CHECK_THROWS_AS(match_components(truth, est), std::domain_error);
    }
    SECTION("hungarian agrees with brute force on random costs") {
        RngStream rng(77);
        for (int trial = 0; trial < 50; ++trial) {
            std::size_t m = 2 + rng.index(4);
            std::vector<std::vector<double>> cost(m, std::vector<double>(m));
            for (auto& row : cost)
                for (auto& v : row) v = rng.uniform01();
            auto assign = hungarian_assignment(cost);
            double got = 0.0;
            for (std::size_t i = 0; i < m; ++i) got += cost[i][assign[i]];
            std::vector<std::size_t> perm(m);
            std::iota(perm.begin(), perm.end(), 0);
            double best = 1e18;
            do {
                double c = 0.0;
                for (std::size_t i = 0; i < m; ++i) c += cost[i][perm[i]];
                best = std::min(best, c);
            } while (std::next_permutation(perm.begin(), perm.end()));
            CHECK(got == Approx(best).margin(1e-12));
        }
    }
}

TEST_CASE("numeric fisher information", "[metrics]") {
    SECTION("single gaussian closed form") {
        auto c = gaussian_mixture({1.0}, {{0.5, 1.3}});
        auto rep = fisher_information_numeric(c);
        double var = 1.3 * 1.3;
        REQUIRE(rep.matrix.size() == 2);
        CHECK(rep.matrix[0][0] == Approx(1.0 / var).epsilon(1e-4));
        CHECK(rep.matrix[1][1] == Approx(1.0 / (2.0 * var * var)).epsilon(1e-4));
        CHECK(std::abs(rep.matrix[0][1]) < 1e-6);
    }
    SECTION("separated two-component mixture is identifiable") {
        auto c = gaussian_mixture({0.5, 0.5}, {{-4.0, 1.0}, {4.0, 1.0}});
        auto rep = fisher_information_numeric(c);
        CHECK(rep.min_eigenvalue > 0.0);
    }
    SECTION("duplicated components are singular") {
        auto c = gaussian_mixture({0.5, 0.5}, {{1.0, 1.0}, {1.0, 1.0}});
        auto rep = fisher_information_numeric(c);
        CHECK(std::abs(rep.min_eigenvalue) < 1e-6);
    }
}
