#pragma once

// Simulation configuration: Table-style defaults, a flat key = value file
// format with section-prefixed keys, scenario presets, and a canonical echo
// that reproduces a run bit-for-bit.

#include <cmath>
#include <cstdint>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "tokenrelay/agent.hpp"
#include "tokenrelay/policy_table.hpp"
#include "tokenrelay/radio.hpp"

namespace tokenrelay::sim {

/// Raised on malformed configuration input.
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct SpeedRange {
    double min_kmh;
    double max_kmh;
};

struct SimConfig {
    // world
    int n_ues = 1500;
    int n_cells = 100;
    double cell_size_m = 1000.0;
    int slots = 3000;
    double slot_duration_s = 5.0;
    int token_supply = 9000;
    std::uint64_t seed = 1;
    agent::CoopMode mode = agent::CoopMode::TokenLearning;

    // mobility classes
    double high_mobility_fraction = 1.0;
    SpeedRange high_speed{50.0, 120.0};
    SpeedRange low_speed{0.0, 8.0};

    // relay energy budget classes, expressed as relays affordable on average
    double high_budget_fraction = 1.0;
    double high_budget_relays = 1000.0;
    double low_budget_relays = 40.0;
    double joules_per_relay = 0.0;  ///< 0 = mean of the cost grid

    // channel and link budget
    radio::ChannelParams channel;
    double tx_power_dbm = 15.0;
    double gamma_target_db = 0.0;

    // downlink scheduling
    int grants_per_cell = 5;
    double grant_bandwidth_hz = 10e6;

    // online learner
    int window = 50;
    double pi0 = 0.1;
    double mu0 = 0.1;

    // offline policy grid; also pins the table a run accepts
    table::ParamGrid grid = default_grid();

    static table::ParamGrid default_grid() {
        table::ParamGrid g;
        for (int i = 1; i <= 9; ++i) g.pi.push_back(0.05 * i);
        g.mu = g.pi;
        for (int i = 1; i <= 9; ++i) g.cost.push_back(0.025 * i);
        g.beta = 0.99;
        g.benefit = 0.5;
        g.space = {20, 11, 125.0};
        return g;
    }

    double resolved_joules_per_relay() const {
        if (joules_per_relay > 0.0) return joules_per_relay;
        return std::accumulate(grid.cost.begin(), grid.cost.end(), 0.0) / static_cast<double>(grid.cost.size());
    }

    double budget_joules(bool high_budget) const {
        return (high_budget ? high_budget_relays : low_budget_relays) * resolved_joules_per_relay();
    }

    double gamma_target() const { return radio::db_to_linear(gamma_target_db); }
    double tx_power_w() const { return radio::dbm_to_watts(tx_power_dbm); }
    double target_rate_bps() const { return grant_bandwidth_hz * std::log2(1.0 + gamma_target()); }

    void validate() const {
        if (n_ues < 1) throw ConfigError("sim.n_ues must be >= 1");
        if (n_cells < 1) throw ConfigError("sim.n_cells must be >= 1");
        if (!(cell_size_m > 0.0)) throw ConfigError("sim.cell_size_m must be positive");
        if (slots < 1) throw ConfigError("sim.slots must be >= 1");
        if (!(slot_duration_s > 0.0)) throw ConfigError("sim.slot_duration_s must be positive");
        if (token_supply < 0) throw ConfigError("sim.token_supply must be non-negative");
        if (static_cast<long long>(token_supply) > static_cast<long long>(n_ues) * grid.space.max_tokens)
            throw ConfigError("sim.token_supply exceeds n_ues * max_tokens; the supply cannot be dealt");
        if (!(high_mobility_fraction >= 0.0 && high_mobility_fraction <= 1.0)) throw ConfigError("mobility.high_fraction must lie in [0, 1]");
        if (!(high_budget_fraction >= 0.0 && high_budget_fraction <= 1.0)) throw ConfigError("budget.high_fraction must lie in [0, 1]");
        for (const auto& r : {high_speed, low_speed})
            if (!(r.min_kmh >= 0.0 && r.max_kmh >= r.min_kmh)) throw ConfigError("mobility speed ranges must satisfy 0 <= min <= max");
        if (!(high_budget_relays > 0.0 && low_budget_relays > 0.0)) throw ConfigError("budget relay counts must be positive");
        if (joules_per_relay < 0.0) throw ConfigError("budget.joules_per_relay must be non-negative");
        if (grants_per_cell < 1) throw ConfigError("sched.grants_per_cell must be >= 1");
        if (!(grant_bandwidth_hz > 0.0)) throw ConfigError("sched.grant_bandwidth_hz must be positive");
        if (window < 1) throw ConfigError("agent.window must be >= 1");
        if (!(pi0 >= 0.0 && pi0 <= 1.0 && mu0 >= 0.0 && mu0 <= 1.0)) throw ConfigError("agent estimate seeds must lie in [0, 1]");
        if (!(gamma_target() > 0.0)) throw ConfigError("channel.gamma_target_db is out of range");
        try {
            channel.validate();
            grid.validate();
        } catch (const std::invalid_argument& e) {
            throw ConfigError(e.what());
        }
    }
};

namespace detail {

inline std::string trim(const std::string& s) {
    const auto a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    const auto b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

inline double parse_double(const std::string& v, const std::string& key) {
    std::size_t used = 0;
    double x = 0.0;
    try {
        x = std::stod(v, &used);
    } catch (...) {
        throw ConfigError("key " + key + ": cannot parse number '" + v + "'");
    }
    if (used != v.size()) throw ConfigError("key " + key + ": trailing characters in '" + v + "'");
    return x;
}

inline long long parse_int(const std::string& v, const std::string& key) {
    std::size_t used = 0;
    long long x = 0;
    try {
        x = std::stoll(v, &used);
    } catch (...) {
        throw ConfigError("key " + key + ": cannot parse integer '" + v + "'");
    }
    if (used != v.size()) throw ConfigError("key " + key + ": trailing characters in '" + v + "'");
    return x;
}

/// Axis syntax: either "lo:hi:step" (inclusive) or a comma list.
inline std::vector<double> parse_axis(const std::string& v, const std::string& key) {
    std::vector<double> out;
    if (v.find(':') != std::string::npos) {
        const auto c1 = v.find(':');
        const auto c2 = v.find(':', c1 + 1);
        if (c2 == std::string::npos) throw ConfigError("key " + key + ": range needs lo:hi:step");
        const double lo = parse_double(trim(v.substr(0, c1)), key);
        const double hi = parse_double(trim(v.substr(c1 + 1, c2 - c1 - 1)), key);
        const double step = parse_double(trim(v.substr(c2 + 1)), key);
        if (!(step > 0.0) || hi < lo) throw ConfigError("key " + key + ": bad range bounds");
        const int n = static_cast<int>(std::lround((hi - lo) / step)) + 1;
        for (int i = 0; i < n; ++i) out.push_back(lo + step * i);
    } else {
        std::stringstream ss(v);
        std::string item;
        while (std::getline(ss, item, ',')) out.push_back(parse_double(trim(item), key));
    }
    if (out.empty()) throw ConfigError("key " + key + ": empty axis");
    return out;
}

inline std::string format_full(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

}  // namespace detail

inline std::string mode_name(agent::CoopMode m) {
    switch (m) {
        case agent::CoopMode::TokenLearning: return "token-learning";
        case agent::CoopMode::ObedientFinite: return "obedient-finite";
        case agent::CoopMode::ObedientInfinite: return "obedient-infinite";
        case agent::CoopMode::NeverCooperate: return "never-cooperate";
    }
    return "token-learning";
}

inline agent::CoopMode parse_mode(const std::string& s) {
    if (s == "token-learning") return agent::CoopMode::TokenLearning;
    if (s == "obedient-finite") return agent::CoopMode::ObedientFinite;
    if (s == "obedient-infinite") return agent::CoopMode::ObedientInfinite;
    if (s == "never-cooperate") return agent::CoopMode::NeverCooperate;
    throw ConfigError("unknown cooperation mode '" + s + "'");
}

/// Apply one key = value pair. Unknown keys are errors.
inline void apply_key(SimConfig& cfg, const std::string& key, const std::string& value) {
    using detail::parse_axis;
    using detail::parse_double;
    using detail::parse_int;
    if (key == "sim.n_ues") cfg.n_ues = static_cast<int>(parse_int(value, key));
    else if (key == "sim.n_cells") cfg.n_cells = static_cast<int>(parse_int(value, key));
    else if (key == "sim.cell_size_m") cfg.cell_size_m = parse_double(value, key);
    else if (key == "sim.slots") cfg.slots = static_cast<int>(parse_int(value, key));
    else if (key == "sim.slot_duration_s") cfg.slot_duration_s = parse_double(value, key);
    else if (key == "sim.token_supply") cfg.token_supply = static_cast<int>(parse_int(value, key));
    else if (key == "sim.seed") cfg.seed = static_cast<std::uint64_t>(parse_int(value, key));
    else if (key == "sim.mode") cfg.mode = parse_mode(value);
    else if (key == "mobility.high_fraction") cfg.high_mobility_fraction = parse_double(value, key);
    else if (key == "mobility.high_speed_min_kmh") cfg.high_speed.min_kmh = parse_double(value, key);
    else if (key == "mobility.high_speed_max_kmh") cfg.high_speed.max_kmh = parse_double(value, key);
    else if (key == "mobility.low_speed_min_kmh") cfg.low_speed.min_kmh = parse_double(value, key);
    else if (key == "mobility.low_speed_max_kmh") cfg.low_speed.max_kmh = parse_double(value, key);
    else if (key == "budget.high_fraction") cfg.high_budget_fraction = parse_double(value, key);
    else if (key == "budget.high_relays") cfg.high_budget_relays = parse_double(value, key);
    else if (key == "budget.low_relays") cfg.low_budget_relays = parse_double(value, key);
    else if (key == "budget.joules_per_relay") cfg.joules_per_relay = parse_double(value, key);
    else if (key == "channel.eta") cfg.channel.eta = parse_double(value, key);
    else if (key == "channel.d0_m") cfg.channel.d0_m = parse_double(value, key);
    else if (key == "channel.pl_d0_db") cfg.channel.pl_d0_db = parse_double(value, key);
    else if (key == "channel.shadow_sigma_db") cfg.channel.shadow_sigma_db = parse_double(value, key);
    else if (key == "channel.noise_dbm") cfg.channel.noise_dbm = parse_double(value, key);
    else if (key == "channel.interference_w") cfg.channel.interference_w = parse_double(value, key);
    else if (key == "channel.tx_power_dbm") cfg.tx_power_dbm = parse_double(value, key);
    else if (key == "channel.gamma_target_db") cfg.gamma_target_db = parse_double(value, key);
    else if (key == "sched.grants_per_cell") cfg.grants_per_cell = static_cast<int>(parse_int(value, key));
    else if (key == "sched.grant_bandwidth_hz") cfg.grant_bandwidth_hz = parse_double(value, key);
    else if (key == "agent.window") cfg.window = static_cast<int>(parse_int(value, key));
    else if (key == "agent.pi0") cfg.pi0 = parse_double(value, key);
    else if (key == "agent.mu0") cfg.mu0 = parse_double(value, key);
    else if (key == "grid.pi") cfg.grid.pi = parse_axis(value, key);
    else if (key == "grid.mu") cfg.grid.mu = parse_axis(value, key);
    else if (key == "grid.cost") cfg.grid.cost = parse_axis(value, key);
    else if (key == "grid.beta") cfg.grid.beta = parse_double(value, key);
    else if (key == "grid.benefit") cfg.grid.benefit = parse_double(value, key);
    else if (key == "grid.max_tokens") cfg.grid.space.max_tokens = static_cast<int>(parse_int(value, key));
    else if (key == "grid.energy_bins") cfg.grid.space.energy_bins = static_cast<int>(parse_int(value, key));
    else if (key == "grid.p_max_j") cfg.grid.space.p_max = parse_double(value, key);
    else throw ConfigError("unknown key '" + key + "'");
}

/// Parse a config file body on top of existing settings.
inline void parse_config_text(SimConfig& cfg, const std::string& text) {
    std::stringstream ss(text);
    std::string line;
    int lineno = 0;
    while (std::getline(ss, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        line = detail::trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw ConfigError("line " + std::to_string(lineno) + ": expected key = value");
        apply_key(cfg, detail::trim(line.substr(0, eq)), detail::trim(line.substr(eq + 1)));
    }
}

/// Scenario presets used throughout the experiment suite.
inline void apply_preset(SimConfig& cfg, const std::string& name) {
    const auto scenario_mixes = [&cfg] {
        cfg.high_mobility_fraction = 0.7;
        cfg.high_budget_fraction = 0.7;
        cfg.high_budget_relays = 100.0;
        cfg.low_budget_relays = 40.0;
        cfg.grid.beta = 0.99;
    };
    if (name == "table4") {
        // defaults already hold
    } else if (name == "vc-scenario-1") {
        scenario_mixes();
        cfg.mode = agent::CoopMode::TokenLearning;
    } else if (name == "vc-scenario-2") {
        scenario_mixes();
        cfg.mode = agent::CoopMode::ObedientInfinite;
    } else if (name == "vc-scenario-3") {
        scenario_mixes();
        cfg.mode = agent::CoopMode::ObedientFinite;
    } else if (name.rfind("mobility-", 0) == 0) {
        const double pct = detail::parse_double(name.substr(9), "preset");
        if (pct < 0.0 || pct > 100.0) throw ConfigError("mobility preset percentage out of range");
        cfg.mode = agent::CoopMode::TokenLearning;
        cfg.high_mobility_fraction = pct / 100.0;
        cfg.high_budget_fraction = 1.0;
        cfg.high_budget_relays = 1000.0;
        cfg.grid.beta = 0.995;
    } else if (name.rfind("budget-", 0) == 0) {
        const double pct = detail::parse_double(name.substr(7), "preset");
        if (pct < 0.0 || pct > 100.0) throw ConfigError("budget preset percentage out of range");
        cfg.mode = agent::CoopMode::TokenLearning;
        cfg.high_mobility_fraction = 1.0;
        cfg.high_budget_fraction = pct / 100.0;
        cfg.high_budget_relays = 100.0;
        cfg.low_budget_relays = 40.0;
        cfg.grid.beta = 0.995;
    } else {
        throw ConfigError("unknown preset '" + name + "'");
    }
}

/// Shrink the world while keeping densities: scales the device count, the
/// cell count, and the token supply.
inline void apply_scale(SimConfig& cfg, double factor) {
    if (!(factor > 0.0)) throw ConfigError("--scale must be positive");
    cfg.n_ues = std::max(1, static_cast<int>(std::lround(cfg.n_ues * factor)));
    cfg.n_cells = std::max(1, static_cast<int>(std::lround(cfg.n_cells * factor)));
    cfg.token_supply = static_cast<int>(std::lround(cfg.token_supply * factor));
}

/// Canonical full-precision echo; parsing it reproduces the config exactly.
inline std::string write_config(const SimConfig& cfg) {
    using detail::format_full;
    std::string out;
    const auto kv = [&out](const std::string& k, const std::string& v) { out += k + " = " + v + "\n"; };
    const auto kvd = [&](const std::string& k, double v) { kv(k, format_full(v)); };
    const auto axis = [&](const std::string& k, const std::vector<double>& vs) {
        std::string joined;
        for (std::size_t i = 0; i < vs.size(); ++i) joined += (i ? "," : "") + format_full(vs[i]);
        kv(k, joined);
    };
    kv("sim.n_ues", std::to_string(cfg.n_ues));
    kv("sim.n_cells", std::to_string(cfg.n_cells));
    kvd("sim.cell_size_m", cfg.cell_size_m);
    kv("sim.slots", std::to_string(cfg.slots));
    kvd("sim.slot_duration_s", cfg.slot_duration_s);
    kv("sim.token_supply", std::to_string(cfg.token_supply));
    kv("sim.seed", std::to_string(cfg.seed));
    kv("sim.mode", mode_name(cfg.mode));
    kvd("mobility.high_fraction", cfg.high_mobility_fraction);
    kvd("mobility.high_speed_min_kmh", cfg.high_speed.min_kmh);
    kvd("mobility.high_speed_max_kmh", cfg.high_speed.max_kmh);
    kvd("mobility.low_speed_min_kmh", cfg.low_speed.min_kmh);
    kvd("mobility.low_speed_max_kmh", cfg.low_speed.max_kmh);
    kvd("budget.high_fraction", cfg.high_budget_fraction);
    kvd("budget.high_relays", cfg.high_budget_relays);
    kvd("budget.low_relays", cfg.low_budget_relays);
    kvd("budget.joules_per_relay", cfg.resolved_joules_per_relay());
    kvd("channel.eta", cfg.channel.eta);
    kvd("channel.d0_m", cfg.channel.d0_m);
    kvd("channel.pl_d0_db", cfg.channel.pl_d0_db);
    kvd("channel.shadow_sigma_db", cfg.channel.shadow_sigma_db);
    kvd("channel.noise_dbm", cfg.channel.noise_dbm);
    kvd("channel.interference_w", cfg.channel.interference_w);
    kvd("channel.tx_power_dbm", cfg.tx_power_dbm);
    kvd("channel.gamma_target_db", cfg.gamma_target_db);
    kv("sched.grants_per_cell", std::to_string(cfg.grants_per_cell));
    kvd("sched.grant_bandwidth_hz", cfg.grant_bandwidth_hz);
    kv("agent.window", std::to_string(cfg.window));
    kvd("agent.pi0", cfg.pi0);
    kvd("agent.mu0", cfg.mu0);
    axis("grid.pi", cfg.grid.pi);
    axis("grid.mu", cfg.grid.mu);
    axis("grid.cost", cfg.grid.cost);
    kvd("grid.beta", cfg.grid.beta);
    kvd("grid.benefit", cfg.grid.benefit);
    kv("grid.max_tokens", std::to_string(cfg.grid.space.max_tokens));
    kv("grid.energy_bins", std::to_string(cfg.grid.space.energy_bins));
    kvd("grid.p_max_j", cfg.grid.space.p_max);
    return out;
}

/// Grid compatibility between a run and a prebuilt table; mismatches are
/// reported, not silently tolerated.
inline void check_table_compatible(const SimConfig& cfg, const table::PolicyTable& t) {
    const auto close = [](double a, double b) { return std::abs(a - b) <= 1e-12 * std::max({1.0, std::abs(a), std::abs(b)}); };
    const auto axis_close = [&](const std::vector<double>& a, const std::vector<double>& b) {
        if (a.size() != b.size()) return false;
        for (std::size_t i = 0; i < a.size(); ++i)
            if (!close(a[i], b[i])) return false;
        return true;
    };
    if (!axis_close(cfg.grid.pi, t.grid.pi) || !axis_close(cfg.grid.mu, t.grid.mu) || !axis_close(cfg.grid.cost, t.grid.cost) ||
        !close(cfg.grid.beta, t.grid.beta) || !close(cfg.grid.benefit, t.grid.benefit) ||
        cfg.grid.space.max_tokens != t.grid.space.max_tokens || cfg.grid.space.energy_bins != t.grid.space.energy_bins ||
        !close(cfg.grid.space.p_max, t.grid.space.p_max))
        throw ConfigError("policy table was built for a different grid/space than this config");
}

}  // namespace tokenrelay::sim
