#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "tokenrelay/policy_table.hpp"
#include "tokenrelay/rng.hpp"

using namespace tokenrelay;
using Catch::Approx;

namespace {

std::vector<double> arange(double lo, double hi, double step) {
    std::vector<double> out;
    for (double v = lo; v <= hi + step / 2; v += step) out.push_back(v);
    return out;
}

table::ParamGrid tiny_grid() {
    table::ParamGrid g;
    g.pi = {0.1, 0.3};
    g.mu = {0.1, 0.3};
    g.cost = {0.05, 0.15};
    g.beta = 0.95;
    g.benefit = 0.5;
    g.space = {8, 4, 1.0};
    return g;
}

std::vector<double> table4_pi() { return arange(0.05, 0.45, 0.05); }
std::vector<double> table4_cost() { return arange(0.025, 0.225, 0.025); }

}  // namespace

TEST_CASE("nearest grid point snapping", "[table]") {
    const auto grid = table4_pi();
    CHECK(grid.size() == 9);
    CHECK(table::nearest(0.118, grid) == 1);   // 0.10
    CHECK(table::nearest(0.125, grid) == 1);   // midpoint rounds down to 0.10
    CHECK(table::nearest(0.9, grid) == 8);     // clamps to 0.45
    CHECK(table::nearest(-2.0, grid) == 0);    // clamps to 0.05
    CHECK(table::nearest(0.3, grid) == 5);     // exact hit
    CHECK_THROWS_AS(table::nearest(0.1, std::vector<double>{}), std::invalid_argument);
}

TEST_CASE("singleton grid build equals a direct solve", "[table]") {
    table::ParamGrid g = tiny_grid();
    g.pi = {0.2};
    g.mu = {0.3};
    g.cost = {0.1};
    const auto t = table::build_table(g, 1e-7, 1);
    REQUIRE(t.entry_count() == 1);

    const mdp::EnvParams env{0.2, 0.3, 0.1, g.benefit, g.beta};
    const auto vi = mdp::value_iteration(env, g.space, 1e-7);
    const auto direct = mdp::to_threshold(mdp::greedy_policy(vi.values, env, g.space));
    CHECK(t.entry(0, 0, 0) == direct);
}

TEST_CASE("built tables are threshold with monotone thresholds", "[table]") {
    const auto t = table::build_table(tiny_grid(), 1e-6);
    REQUIRE(t.entry_count() == 8);
    for (std::size_t i = 0; i < t.grid.pi.size(); ++i) {
        for (std::size_t j = 0; j < t.grid.mu.size(); ++j) {
            for (std::size_t l = 0; l < t.grid.cost.size(); ++l) {
                CHECK(t.threshold(i, j, l, 0) == -1);
                for (int e = 1; e + 1 < t.grid.space.energy_bins; ++e)
                    CHECK(t.threshold(i, j, l, e) <= t.threshold(i, j, l, e + 1));
            }
        }
    }
}

TEST_CASE("infeasible grid corners are solved with mu scaled down", "[table]") {
    table::ParamGrid g = tiny_grid();
    g.pi = {0.4};
    g.mu = {0.7};  // 0.4 + 0.7 > 1
    g.cost = {0.05};
    const auto t = table::build_table(g, 1e-6, 1);
    CHECK(t.was_scaled(0, 0));

    const mdp::EnvParams env{0.4, 0.6, 0.05, g.benefit, g.beta};
    const auto vi = mdp::value_iteration(env, g.space, 1e-6);
    CHECK(t.entry(0, 0, 0) == mdp::to_threshold(mdp::greedy_policy(vi.values, env, g.space)));

    const auto t2 = table::build_table(tiny_grid(), 1e-6, 1);
    CHECK_FALSE(t2.was_scaled(0, 0));
}

TEST_CASE("lookup applies the snapped entry's threshold", "[table]") {
    const auto t = table::build_table(tiny_grid(), 1e-6);

    SECTION("dead bin always refuses") {
        CHECK(table::lookup(t, 0.2, 0.2, 0.1, 0, 0) == 0);
        CHECK(table::lookup(t, 0.45, 0.05, 0.05, 3, 0) == 0);
    }
    SECTION("threshold boundary") {
        const int e = t.grid.space.energy_bins - 1;
        const int th = t.threshold(1, 0, 0, e);  // pi=0.3, mu=0.1, c=0.05
        REQUIRE(th >= 0);
        CHECK(table::lookup(t, 0.3, 0.1, 0.05, th, e) == 1);
        CHECK(table::lookup(t, 0.3, 0.1, 0.05, th + 1, e) == 0);
    }
    SECTION("lookup equals a fresh solve at the snapped triple") {
        Rng rng(7);
        for (int trial = 0; trial < 6; ++trial) {
            const double pi_hat = rng.uniform(0.0, 0.5);
            const double mu_hat = rng.uniform(0.0, 0.6);
            const double cost = rng.uniform(0.01, 0.2);
            const mdp::EnvParams env{t.grid.pi[table::nearest(pi_hat, t.grid.pi)],
                                     t.grid.mu[table::nearest(mu_hat, t.grid.mu)],
                                     t.grid.cost[table::nearest(cost, t.grid.cost)],
                                     t.grid.benefit, t.grid.beta};
            const auto vi = mdp::value_iteration(env, t.grid.space, 1e-6);
            const auto fresh = mdp::to_threshold(mdp::greedy_policy(vi.values, env, t.grid.space));
            for (int e = 0; e < t.grid.space.energy_bins; ++e)
                for (int k = 0; k <= t.grid.space.max_tokens; ++k)
                    CHECK(table::lookup(t, pi_hat, mu_hat, cost, k, e) == fresh.action(k, e));
        }
    }
    SECTION("small perturbations away from midpoints do not change the action") {
        Rng rng(11);
        for (int trial = 0; trial < 40; ++trial) {
            const double pi_hat = t.grid.pi[rng.uniform_int(t.grid.pi.size())] + rng.uniform(-0.04, 0.04);
            const double mu_hat = t.grid.mu[rng.uniform_int(t.grid.mu.size())] + rng.uniform(-0.04, 0.04);
            const double cost = t.grid.cost[rng.uniform_int(t.grid.cost.size())] + rng.uniform(-0.02, 0.02);
            const int k = static_cast<int>(rng.uniform_int(t.grid.space.max_tokens + 1));
            const int e = static_cast<int>(rng.uniform_int(t.grid.space.energy_bins));
            const int base = table::lookup(t, pi_hat, mu_hat, cost, k, e);
            CHECK(table::lookup(t, pi_hat + 0.009, mu_hat - 0.009, cost + 0.004, k, e) == base);
        }
    }
}

TEST_CASE("grid refinement at the query point matches a direct solve", "[table]") {
    const auto coarse = table::build_table(tiny_grid(), 1e-6);
    const double query_pi = 0.2;  // not on the coarse pi axis

    table::ParamGrid refined = tiny_grid();
    refined.pi = {0.1, 0.2, 0.3};
    const auto fine = table::build_table(refined, 1e-6);

    const mdp::EnvParams env{query_pi, 0.1, 0.05, 0.5, 0.95};
    const auto vi = mdp::value_iteration(env, refined.space, 1e-6);
    const auto direct = mdp::to_threshold(mdp::greedy_policy(vi.values, env, refined.space));
    for (int e = 0; e < refined.space.energy_bins; ++e)
        for (int k = 0; k <= refined.space.max_tokens; ++k)
            CHECK(table::lookup(fine, query_pi, 0.1, 0.05, k, e) == direct.action(k, e));
}

TEST_CASE("serialization round-trips bit-exactly", "[table]") {
    SECTION("multi-entry table") {
        const auto t = table::build_table(tiny_grid(), 1e-6);
        const auto bytes = table::serialize(t);
        CHECK(table::deserialize(bytes) == t);
    }
    SECTION("single-entry table") {
        table::ParamGrid g = tiny_grid();
        g.pi = {0.25};
        g.mu = {0.15};
        g.cost = {0.1};
        const auto t = table::build_table(g, 1e-6, 1);
        CHECK(table::deserialize(table::serialize(t)) == t);
    }
    SECTION("truncation is rejected") {
        const auto t = table::build_table(tiny_grid(), 1e-6);
        auto bytes = table::serialize(t);
        bytes.resize(bytes.size() - 3);
        CHECK_THROWS_AS(table::deserialize(bytes), table::FormatError);
    }
    SECTION("bad magic and version are rejected") {
        const auto t = table::build_table(tiny_grid(), 1e-6);
        auto bytes = table::serialize(t);
        auto corrupt = bytes;
        corrupt[0] = 'X';
        CHECK_THROWS_AS(table::deserialize(corrupt), table::FormatError);
        corrupt = bytes;
        corrupt[4] = 0x7F;
        CHECK_THROWS_AS(table::deserialize(corrupt), table::FormatError);
    }
    SECTION("trailing bytes are rejected") {
        const auto t = table::build_table(tiny_grid(), 1e-6);
        auto bytes = table::serialize(t);
        bytes.push_back(0);
        CHECK_THROWS_AS(table::deserialize(bytes), table::FormatError);
    }
}

TEST_CASE("grid validation", "[table]") {
    table::ParamGrid g = tiny_grid();
    g.pi = {0.3, 0.1};  // not increasing
    CHECK_THROWS_AS(g.validate(), std::invalid_argument);

    g = tiny_grid();
    g.pi = {0.2, 0.7};  // outside [0, 0.5]
    CHECK_THROWS_AS(g.validate(), std::invalid_argument);

    g = tiny_grid();
    g.cost = {0.0, 0.1};  // zero cost
    CHECK_THROWS_AS(g.validate(), std::invalid_argument);

    g = tiny_grid();
    CHECK_NOTHROW(g.validate());
    CHECK(table4_cost().size() == 9);
}
