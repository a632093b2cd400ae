#pragma once

// Per-device cooperation MDP. A device holds virtual tokens and a quantized
// relay energy budget; in each slot it may buy a relayed reception for one
// token or earn a token by relaying for someone else at an energy cost. This
// header builds the chain, solves it with value iteration, extracts the
// threshold form of the optimal policy, and provides an exact linear-system
// policy evaluator used as a testing oracle.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace tokenrelay::mdp {

/// Raised when a solved policy is not of threshold form.
struct NonThresholdPolicy : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Raised when the idealized token chain has no unique stationary law.
struct NoStationaryDistribution : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Network environment as experienced by one device.
struct EnvParams {
    double pi;        ///< outbound relay success rate (demand rate x recruitment efficiency), in [0, 0.5]
    double mu;        ///< inbound relay demand rate, in [0, 1]
    double cost;      ///< energy spent per relay transmission provided (J)
    double benefit;   ///< utility gained per relayed reception
    double discount;  ///< per-slot discount factor, in [0, 1)

    void validate() const {
        if (!(pi >= 0.0 && pi <= 0.5)) throw std::invalid_argument("EnvParams: pi must lie in [0, 0.5]");
        if (!(mu >= 0.0 && mu <= 1.0)) throw std::invalid_argument("EnvParams: mu must lie in [0, 1]");
        if (pi + mu > 1.0 + 1e-12) throw std::invalid_argument("EnvParams: pi + mu must not exceed 1");
        if (!(cost >= 0.0)) throw std::invalid_argument("EnvParams: cost must be non-negative");
        if (!(benefit >= 0.0)) throw std::invalid_argument("EnvParams: benefit must be non-negative");
        if (!(discount >= 0.0 && discount < 1.0)) throw std::invalid_argument("EnvParams: discount must lie in [0, 1)");
    }
};

/// Discrete state space: token holdings 0..max_tokens crossed with relay
/// energy bins 0..energy_bins-1. Bin 0 is the dead state.
struct StateSpace {
    int max_tokens = 20;
    int energy_bins = 11;
    double p_max = 125.0;  ///< full relay energy budget (J), shared across bins 1..B-1

    void validate() const {
        if (max_tokens < 1) throw std::invalid_argument("StateSpace: max_tokens must be >= 1");
        if (energy_bins < 2) throw std::invalid_argument("StateSpace: energy_bins must be >= 2");
        if (!(p_max > 0.0)) throw std::invalid_argument("StateSpace: p_max must be positive");
    }

    double bin_width() const { return p_max / (energy_bins - 1); }
    int n_states() const { return (max_tokens + 1) * energy_bins; }
    int index(int tokens, int energy_bin) const { return tokens * energy_bins + energy_bin; }

    bool operator==(const StateSpace&) const = default;
};

/// One MDP state: token holding and energy bin.
struct CoopState {
    int tokens;
    int energy_bin;

    bool operator==(const CoopState&) const = default;
};

/// State value table over a StateSpace.
struct ValueFunction {
    StateSpace space;
    std::vector<double> v;

    explicit ValueFunction(const StateSpace& s) : space(s), v(s.n_states(), 0.0) {}

    double at(int tokens, int energy_bin) const { return v[space.index(tokens, energy_bin)]; }
    double& at(int tokens, int energy_bin) { return v[space.index(tokens, energy_bin)]; }
    double at(CoopState s) const { return at(s.tokens, s.energy_bin); }
};

/// Deterministic cooperation policy: action in {0, 1} per state.
struct Policy {
    StateSpace space;
    std::vector<std::uint8_t> a;

    explicit Policy(const StateSpace& s) : space(s), a(s.n_states(), 0) {}

    int at(int tokens, int energy_bin) const { return a[space.index(tokens, energy_bin)]; }
    void set(int tokens, int energy_bin, int action) { a[space.index(tokens, energy_bin)] = static_cast<std::uint8_t>(action); }
};

/// Compact threshold form of a cooperation policy: cooperate in bin e iff
/// the token holding is <= k_th[e]; -1 means never cooperate in that bin.
struct ThresholdPolicy {
    std::vector<int> k_th;

    int action(int tokens, int energy_bin) const {
        return (energy_bin > 0 && tokens <= k_th[energy_bin]) ? 1 : 0;
    }

    bool operator==(const ThresholdPolicy&) const = default;
};

/// Actions available in an energy bin: {0} in the dead state, else {0, 1}.
inline std::span<const int> action_set(int energy_bin) {
    static constexpr std::array<int, 1> dead{0};
    static constexpr std::array<int, 2> alive{0, 1};
    if (energy_bin < 0) throw std::invalid_argument("action_set: negative energy bin");
    return energy_bin == 0 ? std::span<const int>(dead) : std::span<const int>(alive);
}

struct Transition {
    CoopState to;
    double prob;
};

/// Successor distribution with at most four support points.
struct TransitionDist {
    std::array<Transition, 4> entries{};
    int count = 0;

    void add(CoopState to, double prob) {
        if (prob <= 0.0) return;
        for (int i = 0; i < count; ++i) {
            if (entries[i].to == to) {
                entries[i].prob += prob;
                return;
            }
        }
        entries[count++] = Transition{to, prob};
    }

    const Transition* begin() const { return entries.data(); }
    const Transition* end() const { return entries.data() + count; }
};

/// Successor distribution for (state, action). The help-provided branch
/// splits between dropping one energy bin and staying in-bin so that the
/// expected drain per relay equals the continuous cost.
inline TransitionDist transition_probs(CoopState s, int action, const EnvParams& env, const StateSpace& space) {
    if (s.tokens < 0 || s.tokens > space.max_tokens || s.energy_bin < 0 || s.energy_bin >= space.energy_bins)
        throw std::invalid_argument("transition_probs: state outside the state space");
    if (action != 0 && action != 1) throw std::invalid_argument("transition_probs: action must be 0 or 1");
    if (action == 1 && s.energy_bin == 0) throw std::invalid_argument("transition_probs: action 1 is unavailable in the dead state");

    const bool alive = s.energy_bin > 0;
    const double p_recv = (s.tokens > 0 && alive) ? env.pi : 0.0;
    const double p_prov = alive ? env.mu * action : 0.0;

    TransitionDist d;
    d.add(CoopState{s.tokens - 1, s.energy_bin}, p_recv);
    if (p_prov > 0.0) {
        const double drop = std::min(1.0, env.cost / space.bin_width());
        const int k_up = std::min(s.tokens + 1, space.max_tokens);
        d.add(CoopState{k_up, s.energy_bin - 1}, p_prov * drop);
        d.add(CoopState{k_up, s.energy_bin}, p_prov * (1.0 - drop));
    }
    d.add(s, 1.0 - p_recv - p_prov);
    return d;
}

/// Expected one-slot utility of (state, action).
inline double expected_utility(CoopState s, int action, const EnvParams& env) {
    const bool alive = s.energy_bin > 0;
    const double gain = (s.tokens > 0 && alive) ? env.pi * env.benefit : 0.0;
    const double spend = alive ? env.mu * action * env.cost : 0.0;
    return gain - spend;
}

struct ValueIterationResult {
    ValueFunction values;
    int sweeps = 0;
    std::vector<double> sweep_diffs;  ///< sup-norm change after each sweep
};

/// Solve the MDP by value iteration from V = 0. Iteration stops once the
/// sup-norm sweep difference falls below tol*(1-beta)/(2*beta), which bounds
/// the greedy policy's suboptimality by tol.
inline ValueIterationResult value_iteration(const EnvParams& env, const StateSpace& space, double tol = 1e-6) {
    env.validate();
    space.validate();
    if (!(tol > 0.0)) throw std::invalid_argument("value_iteration: tol must be positive");

    const double beta = env.discount;
    const double stop = beta > 0.0 ? tol * (1.0 - beta) / (2.0 * beta)
                                   : std::numeric_limits<double>::infinity();

    // Flatten transitions and utilities once; sweeps then touch plain arrays.
    const int n = space.n_states();
    struct Arc {
        int to;
        double p;
    };
    struct StateActions {
        int n_actions;
        std::array<double, 2> utility;
        std::array<std::array<Arc, 4>, 2> arcs;
        std::array<int, 2> n_arcs;
    };
    std::vector<StateActions> model(n);
    for (int k = 0; k <= space.max_tokens; ++k) {
        for (int e = 0; e < space.energy_bins; ++e) {
            const CoopState s{k, e};
            auto& m = model[space.index(k, e)];
            const auto actions = action_set(e);
            m.n_actions = static_cast<int>(actions.size());
            for (int a : actions) {
                m.utility[a] = expected_utility(s, a, env);
                const auto dist = transition_probs(s, a, env, space);
                m.n_arcs[a] = dist.count;
                for (int i = 0; i < dist.count; ++i)
                    m.arcs[a][i] = Arc{space.index(dist.entries[i].to.tokens, dist.entries[i].to.energy_bin), dist.entries[i].prob};
            }
        }
    }

    ValueIterationResult result{ValueFunction(space)};
    std::vector<double> v(n, 0.0), next(n, 0.0);
    while (true) {
        double diff = 0.0;
        for (int s = 0; s < n; ++s) {
            const auto& m = model[s];
            double best = -std::numeric_limits<double>::infinity();
            for (int a = 0; a < m.n_actions; ++a) {
                double q = m.utility[a];
                for (int i = 0; i < m.n_arcs[a]; ++i) q += beta * m.arcs[a][i].p * v[m.arcs[a][i].to];
                best = std::max(best, q);
            }
            next[s] = best;
            diff = std::max(diff, std::abs(best - v[s]));
        }
        v.swap(next);
        ++result.sweeps;
        result.sweep_diffs.push_back(diff);
        if (diff < stop) break;
    }
    result.values.v = std::move(v);
    return result;
}

/// Action values Q(s, a) for every available action, indexed by action.
struct ActionValues {
    std::array<double, 2> q{};
    int count = 0;
};

inline ActionValues q_values(CoopState s, const ValueFunction& values, const EnvParams& env, const StateSpace& space) {
    ActionValues out;
    for (int a : action_set(s.energy_bin)) {
        double q = expected_utility(s, a, env);
        for (const auto& t : transition_probs(s, a, env, space)) q += env.discount * t.prob * values.at(t.to);
        out.q[a] = q;
        ++out.count;
    }
    return out;
}

/// Greedy policy with respect to a value function. Ties go to action 0.
inline Policy greedy_policy(const ValueFunction& values, const EnvParams& env, const StateSpace& space) {
    Policy p(space);
    for (int k = 0; k <= space.max_tokens; ++k) {
        for (int e = 0; e < space.energy_bins; ++e) {
            const auto q = q_values(CoopState{k, e}, values, env, space);
            p.set(k, e, q.count > 1 && q.q[1] > q.q[0] ? 1 : 0);
        }
    }
    return p;
}

/// Extract the per-bin token thresholds from a policy. Throws
/// NonThresholdPolicy if some bin has a refusal below an acceptance.
inline ThresholdPolicy to_threshold(const Policy& p) {
    ThresholdPolicy t;
    t.k_th.assign(p.space.energy_bins, -1);
    for (int e = 0; e < p.space.energy_bins; ++e) {
        int top = -1;
        for (int k = 0; k <= p.space.max_tokens; ++k)
            if (p.at(k, e) == 1) top = k;
        for (int k = 0; k <= top; ++k)
            if (p.at(k, e) != 1)
                throw NonThresholdPolicy("policy is not threshold in bin " + std::to_string(e) +
                                         ": refuses at k=" + std::to_string(k) +
                                         " but accepts at k=" + std::to_string(top));
        t.k_th[e] = top;
    }
    return t;
}

/// Exact discounted value of following a fixed policy forever, by direct
/// solution of the linear system (I - beta*P) v = u.
inline ValueFunction evaluate_policy_exact(const Policy& p, const EnvParams& env, const StateSpace& space) {
    env.validate();
    space.validate();
    const int n = space.n_states();
    Eigen::MatrixXd a = Eigen::MatrixXd::Identity(n, n);
    Eigen::VectorXd u(n);
    for (int k = 0; k <= space.max_tokens; ++k) {
        for (int e = 0; e < space.energy_bins; ++e) {
            const int row = space.index(k, e);
            const int act = p.at(k, e);
            if (act == 1 && e == 0) throw std::invalid_argument("evaluate_policy_exact: policy cooperates in the dead state");
            u(row) = expected_utility(CoopState{k, e}, act, env);
            for (const auto& t : transition_probs(CoopState{k, e}, act, env, space))
                a(row, space.index(t.to.tokens, t.to.energy_bin)) -= env.discount * t.prob;
        }
    }
    const Eigen::VectorXd sol = a.partialPivLu().solve(u);
    ValueFunction vf(space);
    for (int i = 0; i < n; ++i) vf.v[i] = sol(i);
    return vf;
}

/// Long-run token exchange rates under the unlimited-energy idealization.
struct BalanceRates {
    double use_rate;      ///< probability per slot of buying a relayed reception
    double provide_rate;  ///< probability per slot of selling a relay transmission
};

/// Stationary use/provide rates of the token birth-death chain induced by a
/// threshold policy, with the energy budget treated as unlimited (the
/// threshold of the highest bin applies everywhere).
inline BalanceRates steady_state_balance(const ThresholdPolicy& tp, const EnvParams& env, const StateSpace& space) {
    env.validate();
    space.validate();
    const int k_th = tp.k_th.back();
    if (k_th < 0) return {0.0, 0.0};  // tokens drain to zero; no exchanges in steady state
    if (env.pi <= 0.0) {
        if (env.mu > 0.0)
            throw NoStationaryDistribution("token chain only accumulates; stationary law depends on the start state");
        return {0.0, 0.0};
    }

    // Birth-death chain on holdings: up with prob mu while k <= k_th, down
    // with prob pi while k > 0. Detailed balance gives geometric weights.
    const int top = std::min(k_th + 1, space.max_tokens);
    const double ratio = env.mu / env.pi;
    std::vector<double> w(top + 1);
    w[0] = 1.0;
    for (int k = 1; k <= top; ++k) {
        w[k] = w[k - 1] * ratio;
        if (w[k] > 1e280) {  // rescale to avoid overflow on extreme ratios
            for (int i = 0; i <= k; ++i) w[i] /= w[k];
        }
    }
    double total = 0.0;
    for (double x : w) total += x;
    double below = 0.0;  // stationary mass on states where the policy accepts
    for (int k = 0; k <= std::min(k_th, top); ++k) below += w[k];

    return {env.pi * (1.0 - w[0] / total), env.mu * below / total};
}

}  // namespace tokenrelay::mdp
