#pragma once

// Online phase of the learning scheme: per-device moving-average estimates
// of the outbound success and inbound demand rates, table-driven relay
// decisions, and token/energy state updates.

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "tokenrelay/policy_table.hpp"

namespace tokenrelay::agent {

/// Raised when a token/energy update is applied out of order. These are
/// programming errors in the driving loop, not recoverable conditions.
struct InvalidEvent : std::logic_error {
    using std::logic_error::logic_error;
};

enum class CoopMode {
    TokenLearning,     ///< table-driven self-interested behavior
    ObedientFinite,    ///< always relays while energy remains
    ObedientInfinite,  ///< always relays; energy never drains
    NeverCooperate,    ///< refuses every request
};

/// Per-device online state.
struct AgentState {
    int tokens = 0;
    int max_tokens = 20;
    double energy = 0.0;  ///< remaining relay energy budget (J)
    double p_max = 0.0;
    double pi_hat = 0.1;  ///< moving-average outbound relay success rate
    double mu_hat = 0.1;  ///< moving-average inbound relay demand rate
    int window = 50;      ///< moving-average window
    CoopMode mode = CoopMode::TokenLearning;
};

/// What one slot looked like from the device's point of view.
struct SlotObservation {
    bool outbound_success = false;  ///< own relay request was acknowledged
    bool inbound_request = false;   ///< someone asked this device to relay
    double inbound_cost = 0.0;      ///< energy cost of serving that request (J)
};

/// Energy bin of a continuous budget: 0 only when fully drained, else
/// ceil((bins-1) * p / p_max) in 1..bins-1.
inline int quantize_energy(double energy, double p_max, int bins) {
    if (!(energy >= 0.0 && energy <= p_max)) throw std::invalid_argument("quantize_energy: energy outside [0, p_max]");
    if (energy == 0.0) return 0;
    const int bin = static_cast<int>(std::ceil((bins - 1) * energy / p_max));
    return std::clamp(bin, 1, bins - 1);
}

/// Moving-average update of both rate estimates. Runs every slot; slots
/// without events push the estimates toward zero.
inline AgentState update_estimates(const AgentState& a, const SlotObservation& obs) {
    if (a.window < 1) throw std::invalid_argument("update_estimates: window must be >= 1");
    AgentState next = a;
    const double w = static_cast<double>(a.window);
    next.pi_hat = (obs.outbound_success ? 1.0 : 0.0) / w + (w - 1.0) / w * a.pi_hat;
    next.mu_hat = (obs.inbound_request ? 1.0 : 0.0) / w + (w - 1.0) / w * a.mu_hat;
    return next;
}

/// Cooperation action for an inbound request costing `inbound_cost`.
inline int decide(const AgentState& a, double inbound_cost, const table::PolicyTable& policies) {
    switch (a.mode) {
        case CoopMode::NeverCooperate:
            return 0;
        case CoopMode::ObedientInfinite:
            return 1;
        case CoopMode::ObedientFinite:
            return a.energy > 0.0 ? 1 : 0;
        case CoopMode::TokenLearning: {
            const int bin = quantize_energy(a.energy, a.p_max, policies.grid.space.energy_bins);
            return table::lookup(policies, a.pi_hat, a.mu_hat, inbound_cost, a.tokens, bin);
        }
    }
    return 0;
}

enum class TokenEvent {
    Provided,  ///< relayed for someone: earn a token, pay the energy cost
    Received,  ///< was relayed for: pay a token
};

/// Apply a completed token transaction to the device state.
inline AgentState apply_token_event(const AgentState& a, TokenEvent event, double cost) {
    AgentState next = a;
    switch (event) {
        case TokenEvent::Provided:
            if (!(a.energy > 0.0)) throw InvalidEvent("provided help from the dead state");
            next.tokens = std::min(a.tokens + 1, a.max_tokens);
            next.energy = std::max(0.0, a.energy - cost);
            break;
        case TokenEvent::Received:
            if (a.tokens <= 0) throw InvalidEvent("received help without a token to pay");
            if (!(a.energy > 0.0)) throw InvalidEvent("received help from the dead state");
            next.tokens = a.tokens - 1;
            break;
    }
    return next;
}

}  // namespace tokenrelay::agent
