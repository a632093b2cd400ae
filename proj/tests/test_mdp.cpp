#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "oracle.hpp"
#include "tokenrelay/mdp.hpp"
#include "tokenrelay/rng.hpp"

using namespace tokenrelay;
using Catch::Approx;

namespace {

mdp::EnvParams small_env() { return {0.2, 0.3, 0.1, 0.5, 0.9}; }
mdp::StateSpace small_space() { return {4, 3, 0.2}; }  // bin width 0.1 = one cost per bin

double dist_prob(const mdp::TransitionDist& d, int tokens, int bin) {
    for (const auto& t : d)
        if (t.to == mdp::CoopState{tokens, bin}) return t.prob;
    return 0.0;
}

mdp::EnvParams random_env(Rng& rng) {
    mdp::EnvParams env;
    env.pi = rng.uniform(0.0, 0.5);
    env.mu = rng.uniform(0.0, 1.0 - env.pi);
    env.cost = rng.uniform(0.01, 0.3);
    env.benefit = rng.uniform(env.cost, 1.0);
    env.discount = rng.uniform(0.0, 0.95);
    return env;
}

}  // namespace

TEST_CASE("action set follows the energy bin", "[mdp]") {
    CHECK(mdp::action_set(5).size() == 2);
    CHECK(mdp::action_set(0).size() == 1);
    CHECK(mdp::action_set(0)[0] == 0);
    CHECK(mdp::action_set(1).size() == 2);
}

TEST_CASE("transition probabilities match direct substitution", "[mdp]") {
    const mdp::StateSpace space{20, 11, 1.0};  // bin width 0.1
    const mdp::EnvParams env{0.2, 0.3, 0.1, 0.5, 0.9};

    SECTION("full-bin cost, both branches live") {
        const auto d = mdp::transition_probs({3, 5}, 1, env, space);
        CHECK(d.count == 3);
        CHECK(dist_prob(d, 2, 5) == Approx(0.2));
        CHECK(dist_prob(d, 4, 4) == Approx(0.3));
        CHECK(dist_prob(d, 3, 5) == Approx(0.5));
    }
    SECTION("no tokens, no action: self loop only") {
        const auto d = mdp::transition_probs({0, 5}, 0, env, space);
        CHECK(d.count == 1);
        CHECK(dist_prob(d, 0, 5) == Approx(1.0));
    }
    SECTION("dead state is absorbing") {
        const auto d = mdp::transition_probs({3, 0}, 0, env, space);
        CHECK(d.count == 1);
        CHECK(dist_prob(d, 3, 0) == Approx(1.0));
    }
    SECTION("sub-bin cost splits the help-provided branch") {
        const mdp::EnvParams half{0.2, 0.3, 0.05, 0.5, 0.9};  // half a bin per relay
        const auto d = mdp::transition_probs({3, 5}, 1, half, space);
        CHECK(dist_prob(d, 4, 4) == Approx(0.15));
        CHECK(dist_prob(d, 4, 5) == Approx(0.15));
        CHECK(dist_prob(d, 2, 5) == Approx(0.2));
        CHECK(dist_prob(d, 3, 5) == Approx(0.5));
    }
    SECTION("help provided at the token cap merges with the stay branch") {
        const auto d = mdp::transition_probs({20, 5}, 1, env, space);
        CHECK(dist_prob(d, 20, 4) == Approx(0.3));
        CHECK(dist_prob(d, 19, 5) == Approx(0.2));
        CHECK(dist_prob(d, 20, 5) == Approx(0.5));
    }
    SECTION("cooperating in the dead state is rejected") {
        CHECK_THROWS_AS(mdp::transition_probs({3, 0}, 1, env, space), std::invalid_argument);
    }
}

TEST_CASE("transition rows are stochastic and dead states absorb", "[mdp][property]") {
    Rng rng(20260810);
    for (int trial = 0; trial < 200; ++trial) {
        const auto env = random_env(rng);
        const mdp::StateSpace space{2 + static_cast<int>(rng.uniform_int(19)), 2 + static_cast<int>(rng.uniform_int(10)),
                                    rng.uniform(0.1, 200.0)};
        const int k = static_cast<int>(rng.uniform_int(space.max_tokens + 1));
        const int e = static_cast<int>(rng.uniform_int(space.energy_bins));
        for (int a : mdp::action_set(e)) {
            const auto d = mdp::transition_probs({k, e}, a, env, space);
            double sum = 0.0;
            for (const auto& t : d) {
                sum += t.prob;
                CHECK(t.prob > 0.0);
                if (e == 0) {
                    CHECK(t.to.energy_bin == 0);
                    CHECK(t.to.tokens == k);
                }
            }
            CHECK(std::abs(sum - 1.0) < 1e-12);
        }
    }
}

TEST_CASE("expected utility matches direct substitution", "[mdp]") {
    const mdp::EnvParams env{0.2, 0.1, 0.1, 0.5, 0.9};
    CHECK(mdp::expected_utility({3, 5}, 1, env) == Approx(0.09));
    CHECK(mdp::expected_utility({3, 0}, 0, env) == 0.0);
    CHECK(mdp::expected_utility({7, 0}, 0, env) == 0.0);
    CHECK(mdp::expected_utility({0, 5}, 1, env) == Approx(-0.01));
}

TEST_CASE("myopic and zero-success environments never cooperate", "[mdp]") {
    const auto space = small_space();

    SECTION("discount zero") {
        const mdp::EnvParams env{0.2, 0.3, 0.1, 0.5, 0.0};
        const auto result = mdp::value_iteration(env, space);
        const auto policy = mdp::greedy_policy(result.values, env, space);
        for (int k = 0; k <= space.max_tokens; ++k)
            for (int e = 0; e < space.energy_bins; ++e) CHECK(policy.at(k, e) == 0);
    }
    SECTION("pi zero: tokens are worthless") {
        const mdp::EnvParams env{0.0, 0.3, 0.1, 0.5, 0.95};
        const auto result = mdp::value_iteration(env, space);
        const auto policy = mdp::greedy_policy(result.values, env, space);
        for (int k = 0; k <= space.max_tokens; ++k)
            for (int e = 0; e < space.energy_bins; ++e) CHECK(policy.at(k, e) == 0);
    }
}

TEST_CASE("value iteration matches exhaustive enumeration on the small instance", "[mdp][oracle]") {
    const auto env = small_env();
    const auto space = small_space();

    const auto vi = mdp::value_iteration(env, space, 1e-8);
    const auto enumerated = oracle::enumerate_policies(env, space);
    REQUIRE(enumerated.n_policies == 1024);  // 2^(5 tokens x 2 live bins)

    for (int k = 0; k <= space.max_tokens; ++k)
        for (int e = 0; e < space.energy_bins; ++e)
            CHECK(vi.values.at(k, e) == Approx(enumerated.best_values.at(k, e)).margin(1e-8));

    // Frozen oracle outputs for this instance (enumeration + exact solve).
    CHECK(enumerated.best_values.at(4, 2) == Approx(0.86027418028407).margin(1e-9));
    CHECK(enumerated.best_values.at(2, 1) == Approx(0.58673469387755).margin(1e-9));
    CHECK(enumerated.best_values.at(0, 2) == Approx(0.17953667953668).margin(1e-9));
    CHECK(enumerated.best_values.at(3, 0) == 0.0);

    // The greedy policy of the converged values is itself optimal.
    const auto greedy = mdp::greedy_policy(vi.values, env, space);
    const auto greedy_exact = mdp::evaluate_policy_exact(greedy, env, space);
    for (int s = 0; s < space.n_states(); ++s)
        CHECK(greedy_exact.v[s] == Approx(enumerated.best_values.v[s]).margin(1e-8));
}

TEST_CASE("value iteration sweeps contract by the discount factor", "[mdp][property]") {
    const mdp::EnvParams env{0.3, 0.4, 0.08, 0.5, 0.9};
    const auto result = mdp::value_iteration(env, mdp::StateSpace{10, 6, 1.0}, 1e-6);
    for (std::size_t i = 1; i < result.sweep_diffs.size(); ++i)
        CHECK(result.sweep_diffs[i] <= env.discount * result.sweep_diffs[i - 1] + 1e-12);
}

TEST_CASE("action values reduce correctly in edge cases", "[mdp]") {
    const auto space = small_space();

    SECTION("discount zero collapses Q to the immediate utility") {
        const mdp::EnvParams env{0.2, 0.3, 0.1, 0.5, 0.0};
        const auto vi = mdp::value_iteration(env, space);
        const mdp::CoopState s{2, 2};
        const auto q = mdp::q_values(s, vi.values, env, space);
        CHECK(q.q[0] == Approx(mdp::expected_utility(s, 0, env)));
        CHECK(q.q[1] == Approx(mdp::expected_utility(s, 1, env)));
    }
    SECTION("dead state Q is the discounted self loop") {
        const auto env = small_env();
        const auto vi = mdp::value_iteration(env, space);
        const auto q = mdp::q_values({3, 0}, vi.values, env, space);
        CHECK(q.count == 1);
        CHECK(q.q[0] == Approx(env.discount * vi.values.at(3, 0)));
    }
    SECTION("argmax agrees with the enumerated optimal policy off ties") {
        const auto env = small_env();
        const auto vi = mdp::value_iteration(env, space, 1e-8);
        const auto enumerated = oracle::enumerate_policies(env, space);
        for (int k = 0; k <= space.max_tokens; ++k) {
            for (int e = 1; e < space.energy_bins; ++e) {
                const auto q = mdp::q_values({k, e}, vi.values, env, space);
                if (std::abs(q.q[1] - q.q[0]) > 1e-6)
                    CHECK((q.q[1] > q.q[0] ? 1 : 0) == enumerated.best_policy.at(k, e));
            }
        }
    }
}

TEST_CASE("greedy policy breaks ties toward not relaying", "[mdp]") {
    // With zero cost and zero pi, both actions have identical value everywhere.
    const mdp::EnvParams env{0.0, 0.3, 0.0, 0.5, 0.9};
    const auto space = small_space();
    const auto vi = mdp::value_iteration(env, space);
    const auto policy = mdp::greedy_policy(vi.values, env, space);
    for (int k = 0; k <= space.max_tokens; ++k)
        for (int e = 0; e < space.energy_bins; ++e) CHECK(policy.at(k, e) == 0);
}

TEST_CASE("threshold extraction", "[mdp]") {
    SECTION("all-refuse policy maps to -1 thresholds") {
        const mdp::StateSpace space{20, 11, 125.0};
        const auto t = mdp::to_threshold(mdp::Policy(space));
        for (int e = 0; e < space.energy_bins; ++e) CHECK(t.k_th[e] == -1);
    }
    SECTION("per-bin thresholds are recovered") {
        const mdp::StateSpace space{20, 11, 125.0};
        mdp::Policy p(space);
        for (int k = 0; k <= 7; ++k) p.set(k, 10, 1);
        for (int k = 0; k <= 3; ++k) p.set(k, 2, 1);
        const auto t = mdp::to_threshold(p);
        CHECK(t.k_th[10] == 7);
        CHECK(t.k_th[2] == 3);
        CHECK(t.k_th[0] == -1);
        CHECK(t.action(7, 10) == 1);
        CHECK(t.action(8, 10) == 0);
        CHECK(t.action(2, 0) == 0);
    }
    SECTION("a refusal below an acceptance is rejected") {
        mdp::Policy p(small_space());
        p.set(3, 1, 1);  // accepts at 3 but refuses at 0..2
        CHECK_THROWS_AS(mdp::to_threshold(p), mdp::NonThresholdPolicy);
    }
    SECTION("thresholds agree with a scan of the enumerated optimal policy") {
        const auto env = small_env();
        const auto space = small_space();
        const auto enumerated = oracle::enumerate_policies(env, space);
        const auto vi = mdp::value_iteration(env, space, 1e-8);
        const auto t = mdp::to_threshold(mdp::greedy_policy(vi.values, env, space));
        for (int e = 0; e < space.energy_bins; ++e) {
            int top = -1;
            for (int k = 0; k <= space.max_tokens; ++k)
                if (enumerated.best_policy.at(k, e) == 1) top = k;
            CHECK(t.k_th[e] == top);
        }
    }
}

TEST_CASE("exact policy evaluation", "[mdp][oracle]") {
    const auto env = small_env();
    const auto space = small_space();

    SECTION("never-cooperate values match the drain chain closed form") {
        const auto values = mdp::evaluate_policy_exact(mdp::Policy(space), env, space);
        for (int k = 0; k <= space.max_tokens; ++k) {
            const double expect = oracle::drain_chain_value(k, env);
            for (int e = 1; e < space.energy_bins; ++e) CHECK(values.at(k, e) == Approx(expect).margin(1e-12));
            CHECK(values.at(k, 0) == 0.0);
        }
        // frozen: k=3 drain value for pi=0.2, b=0.5, beta=0.9
        CHECK(values.at(3, 1) == Approx(0.73432944606414).margin(1e-9));
    }
    SECTION("discount zero returns the immediate utility") {
        const mdp::EnvParams myopic{0.2, 0.3, 0.1, 0.5, 0.0};
        mdp::Policy p(space);
        for (int k = 0; k <= space.max_tokens; ++k)
            for (int e = 1; e < space.energy_bins; ++e) p.set(k, e, 1);
        const auto values = mdp::evaluate_policy_exact(p, myopic, space);
        for (int k = 0; k <= space.max_tokens; ++k)
            for (int e = 0; e < space.energy_bins; ++e)
                CHECK(values.at(k, e) == Approx(mdp::expected_utility({k, e}, p.at(k, e), myopic)).margin(1e-14));
    }
    SECTION("the optimal policy dominates every enumerated policy pointwise") {
        const auto enumerated = oracle::enumerate_policies(env, space);
        const auto vi = mdp::value_iteration(env, space, 1e-8);
        const auto greedy_exact = mdp::evaluate_policy_exact(mdp::greedy_policy(vi.values, env, space), env, space);
        for (int s = 0; s < space.n_states(); ++s) CHECK(greedy_exact.v[s] >= enumerated.best_values.v[s] - 1e-8);
    }
}

TEST_CASE("steady-state token balance", "[mdp]") {
    const mdp::StateSpace space{20, 11, 125.0};

    SECTION("never cooperating dries up both flows") {
        mdp::ThresholdPolicy never;
        never.k_th.assign(space.energy_bins, -1);
        const auto rates = mdp::steady_state_balance(never, {0.2, 0.3, 0.1, 0.5, 0.99}, space);
        CHECK(rates.use_rate == 0.0);
        CHECK(rates.provide_rate == 0.0);
    }
    SECTION("optimal policies balance use and provide exactly") {
        for (const double mu : {0.05, 0.25, 0.45}) {
            const mdp::EnvParams env{0.2, mu, 0.1, 0.5, 0.99};
            const auto vi = mdp::value_iteration(env, space);
            const auto t = mdp::to_threshold(mdp::greedy_policy(vi.values, env, space));
            if (t.k_th.back() < 0) continue;
            const auto rates = mdp::steady_state_balance(t, env, space);
            CHECK(std::abs(rates.use_rate - rates.provide_rate) < 1e-9);
        }
    }
    SECTION("rates match a long Monte-Carlo chain run") {
        const mdp::EnvParams env{0.2, 0.3, 0.1, 0.5, 0.99};
        mdp::ThresholdPolicy t;
        t.k_th.assign(space.energy_bins, 5);
        const auto exact = mdp::steady_state_balance(t, env, space);
        const auto mc = oracle::mc_chain_rates(0.2, 0.3, 5, space.max_tokens, 10'000'000, 99);
        CHECK(std::abs(exact.use_rate - mc.use_rate) < 1e-3);
        CHECK(std::abs(exact.provide_rate - mc.provide_rate) < 1e-3);
        // frozen from the detailed-balance formula
        CHECK(exact.use_rate == Approx(0.19378338999514).margin(1e-9));
    }
    SECTION("pure accumulation has no unique stationary law") {
        mdp::ThresholdPolicy t;
        t.k_th.assign(space.energy_bins, 5);
        CHECK_THROWS_AS(mdp::steady_state_balance(t, {0.0, 0.3, 0.1, 0.5, 0.99}, space), mdp::NoStationaryDistribution);
    }
}

TEST_CASE("solved policies are threshold with monotone thresholds", "[mdp][property]") {
    // Spot sample of the representative grid; the full build is exercised by
    // the acceptance suite.
    const mdp::StateSpace space{20, 11, 125.0};
    for (const double pi : {0.05, 0.25, 0.45}) {
        for (const double mu : {0.05, 0.25, 0.45}) {
            for (const double cost : {0.025, 0.125, 0.225}) {
                const mdp::EnvParams env{pi, mu, cost, 0.5, 0.99};
                const auto vi = mdp::value_iteration(env, space);
                const auto t = mdp::to_threshold(mdp::greedy_policy(vi.values, env, space));
                for (int e = 1; e + 1 < space.energy_bins; ++e) CHECK(t.k_th[e] <= t.k_th[e + 1]);
                CHECK(t.k_th[0] == -1);
                CHECK(t.k_th.back() < space.max_tokens);  // cap never binds under optimal play
            }
        }
    }
}
