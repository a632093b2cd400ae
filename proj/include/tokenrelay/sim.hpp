#pragma once

// Time-slotted cellular world: square cell grid with one base station per
// cell, random-waypoint mobility, round-robin downlink grants, the relay
// request/acknowledge protocol with token settlement, and per-device metric
// accounting.
//
// Draw order per run (single generator, fully deterministic per seed):
//   init:  per device x, y; mobility class permutation; budget class
//          permutation; per device waypoint x, y then speed; token dealing.
//   slot:  per device on waypoint arrival new waypoint x, y then speed;
//          then per cell in index order, per scheduled device in id order:
//          one shadow draw for the direct link, then per candidate relay in
//          id order one draw for the station-to-relay link and one for the
//          relay-to-destination link.

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "tokenrelay/agent.hpp"
#include "tokenrelay/config.hpp"
#include "tokenrelay/csv.hpp"
#include "tokenrelay/policy_table.hpp"
#include "tokenrelay/radio.hpp"
#include "tokenrelay/rng.hpp"

namespace tokenrelay::sim {

/// Raised when a run breaks a conservation or gating invariant. Identifies
/// the slot and device; always a bug, never tolerated.
struct InvariantViolation : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct Vec2 {
    double x = 0.0;
    double y = 0.0;
};

inline double distance(Vec2 a, Vec2 b) { return std::hypot(a.x - b.x, a.y - b.y); }

/// Per-device metric accumulators. Everything except total_slots counts
/// only slots inside the device's lifetime (energy budget still positive).
struct UeAccum {
    long total_slots = 0;
    long lifetime_slots = 0;
    long dl_slots = 0;
    long demand_events = 0;    ///< scheduled slots whose direct link missed the target
    long eligible_demand = 0;  ///< demand slots in which a relay request could be made
    long racks_received = 0;
    long inbound_requests = 0;
    long racks_sent = 0;
    double actual_bits = 0.0;
    double direct_bits = 0.0;  ///< what direct mode alone would have delivered
    double utility = 0.0;
};

struct UE {
    int id = 0;
    Vec2 pos;
    Vec2 waypoint;
    double speed_mps = 0.0;
    bool high_mobility = false;
    bool high_budget = false;
    int cell = 0;
    agent::AgentState state;
    int initial_tokens = 0;
    long earned = 0;
    long spent = 0;
    UeAccum acc;
    // per-slot scratch
    agent::SlotObservation obs;
    bool alive_now = true;
    bool dl_scheduled = false;
    bool engaged = false;
};

struct Cell {
    Vec2 bs;
    int rr_cursor = 0;
    std::vector<int> members;    ///< associated device ids, ascending
    std::vector<int> downlink;   ///< scheduled this slot, ascending
};

struct Transaction {
    int slot;
    int dest;
    int relay;
    double power_w;
    double cost_j;
};

struct World {
    SimConfig cfg;
    table::PolicyTable policies;
    int grid_cols = 0;
    int grid_rows = 0;
    double width_m = 0.0;
    double height_m = 0.0;
    std::vector<UE> ues;
    std::vector<Cell> cells;
    int slot = 0;
    Rng rng;
    long invariant_checks = 0;
    std::vector<Transaction> transactions;
    std::vector<std::vector<int>> token_histogram;  ///< per recorded slot: count of devices per holding

    World(const SimConfig& c, const table::PolicyTable& t) : cfg(c), policies(t), rng(c.seed) {}

    int cell_of(Vec2 p) const {
        const int col = std::min(grid_cols - 1, static_cast<int>(p.x / cfg.cell_size_m));
        const int row = std::min(grid_rows - 1, static_cast<int>(p.y / cfg.cell_size_m));
        return row * grid_cols + col;
    }
};

namespace detail {

/// Cell grid closest to square that tiles n cells exactly.
inline std::pair<int, int> grid_dims(int n_cells) {
    int best = 1;
    for (int d = 1; d * d <= n_cells; ++d)
        if (n_cells % d == 0) best = d;
    return {n_cells / best, best};  // cols x rows
}

inline void record_histogram(World& w) {
    std::vector<int> hist(w.cfg.grid.space.max_tokens + 1, 0);
    for (const auto& ue : w.ues) ++hist[ue.state.tokens];
    w.token_histogram.push_back(std::move(hist));
}

inline void check_invariants(World& w) {
    long total = 0;
    for (const auto& ue : w.ues) {
        total += ue.state.tokens;
        if (ue.state.tokens < 0 || ue.state.tokens > ue.state.max_tokens)
            throw InvariantViolation("slot " + std::to_string(w.slot) + ": device " + std::to_string(ue.id) + " holding out of range");
        if (ue.spent > ue.earned + ue.initial_tokens)
            throw InvariantViolation("slot " + std::to_string(w.slot) + ": device " + std::to_string(ue.id) + " spent more tokens than earned plus endowment");
        if (ue.state.energy < 0.0)
            throw InvariantViolation("slot " + std::to_string(w.slot) + ": device " + std::to_string(ue.id) + " negative energy budget");
        w.invariant_checks += 3;
    }
    if (w.cfg.mode == agent::CoopMode::TokenLearning && total != w.cfg.token_supply)
        throw InvariantViolation("slot " + std::to_string(w.slot) + ": token supply not conserved (" + std::to_string(total) + " != " +
                                 std::to_string(w.cfg.token_supply) + ")");
    ++w.invariant_checks;
}

}  // namespace detail

/// Advance every device toward its waypoint; on arrival draw a fresh
/// waypoint and speed, then refresh the cell association.
inline void mobility_step(World& w) {
    for (auto& ue : w.ues) {
        double remaining = ue.speed_mps * w.cfg.slot_duration_s;
        const double dx = ue.waypoint.x - ue.pos.x;
        const double dy = ue.waypoint.y - ue.pos.y;
        const double dist = std::hypot(dx, dy);
        if (remaining >= dist) {
            ue.pos = ue.waypoint;  // residual motion within the slot is discarded
            ue.waypoint = {w.rng.uniform(0.0, w.width_m), w.rng.uniform(0.0, w.height_m)};
            const auto range = ue.high_mobility ? w.cfg.high_speed : w.cfg.low_speed;
            ue.speed_mps = w.rng.uniform(range.min_kmh, range.max_kmh) / 3.6;
        } else if (dist > 0.0) {
            ue.pos.x += dx / dist * remaining;
            ue.pos.y += dy / dist * remaining;
        }
        ue.cell = w.cell_of(ue.pos);
    }
    for (auto& cell : w.cells) cell.members.clear();
    for (const auto& ue : w.ues) w.cells[ue.cell].members.push_back(ue.id);
}

/// Round-robin downlink grants per cell; everyone else idles this slot.
inline void schedule_downlink(World& w) {
    for (auto& ue : w.ues) ue.dl_scheduled = false;
    for (auto& cell : w.cells) {
        cell.downlink.clear();
        const int n = static_cast<int>(cell.members.size());
        if (n == 0) continue;
        if (n <= w.cfg.grants_per_cell) {
            cell.downlink = cell.members;
        } else {
            const int start = cell.rr_cursor % n;
            for (int i = 0; i < w.cfg.grants_per_cell; ++i) cell.downlink.push_back(cell.members[(start + i) % n]);
            cell.rr_cursor = (start + w.cfg.grants_per_cell) % n;
            std::sort(cell.downlink.begin(), cell.downlink.end());
        }
        for (int id : cell.downlink) w.ues[id].dl_scheduled = true;
    }
}

/// Build the world: uniform positions, exact class mixes assigned by random
/// permutation, waypoints and speeds, relay budgets, and the token deal.
inline World init_world(const SimConfig& cfg, const table::PolicyTable& policies) {
    cfg.validate();
    check_table_compatible(cfg, policies);

    World w(cfg, policies);
    const auto [cols, rows] = detail::grid_dims(cfg.n_cells);
    w.grid_cols = cols;
    w.grid_rows = rows;
    w.width_m = cols * cfg.cell_size_m;
    w.height_m = rows * cfg.cell_size_m;
    w.cells.resize(cfg.n_cells);
    for (int r = 0; r < rows; ++r)
        for (int c = 0; c < cols; ++c) w.cells[r * cols + c].bs = {(c + 0.5) * cfg.cell_size_m, (r + 0.5) * cfg.cell_size_m};

    w.ues.resize(cfg.n_ues);
    for (int i = 0; i < cfg.n_ues; ++i) {
        w.ues[i].id = i;
        w.ues[i].pos = {w.rng.uniform(0.0, w.width_m), w.rng.uniform(0.0, w.height_m)};
    }

    const auto assign_class = [&](double fraction, auto setter) {
        std::vector<int> perm(cfg.n_ues);
        for (int i = 0; i < cfg.n_ues; ++i) perm[i] = i;
        for (int i = cfg.n_ues - 1; i > 0; --i)
            std::swap(perm[i], perm[w.rng.uniform_int(static_cast<std::uint64_t>(i) + 1)]);
        const int n_high = static_cast<int>(std::lround(fraction * cfg.n_ues));
        for (int i = 0; i < cfg.n_ues; ++i) setter(w.ues[perm[i]], i < n_high);
    };
    assign_class(cfg.high_mobility_fraction, [](UE& ue, bool high) { ue.high_mobility = high; });
    assign_class(cfg.high_budget_fraction, [](UE& ue, bool high) { ue.high_budget = high; });

    for (auto& ue : w.ues) {
        ue.waypoint = {w.rng.uniform(0.0, w.width_m), w.rng.uniform(0.0, w.height_m)};
        const auto range = ue.high_mobility ? cfg.high_speed : cfg.low_speed;
        ue.speed_mps = w.rng.uniform(range.min_kmh, range.max_kmh) / 3.6;
        ue.cell = w.cell_of(ue.pos);

        ue.state.tokens = 0;
        ue.state.max_tokens = cfg.grid.space.max_tokens;
        ue.state.p_max = cfg.budget_joules(ue.high_budget);
        ue.state.energy = ue.state.p_max;
        ue.state.pi_hat = cfg.pi0;
        ue.state.mu_hat = cfg.mu0;
        ue.state.window = cfg.window;
        ue.state.mode = cfg.mode;
    }

    // Deal the supply one token at a time to uniformly random devices that
    // still have room.
    std::vector<int> open(cfg.n_ues);
    for (int i = 0; i < cfg.n_ues; ++i) open[i] = i;
    for (int t = 0; t < cfg.token_supply; ++t) {
        const std::size_t pick = w.rng.uniform_int(open.size());
        UE& ue = w.ues[open[pick]];
        ++ue.state.tokens;
        if (ue.state.tokens == ue.state.max_tokens) {
            open[pick] = open.back();
            open.pop_back();
        }
    }
    for (auto& ue : w.ues) ue.initial_tokens = ue.state.tokens;

    for (auto& cell : w.cells) cell.members.clear();
    for (const auto& ue : w.ues) w.cells[ue.cell].members.push_back(ue.id);

    detail::record_histogram(w);
    return w;
}

/// One slot of the protocol: move, schedule, serve downlink with relay
/// fallback, learn, and verify the ledger.
inline void simulate_slot(World& w) {
    ++w.slot;
    mobility_step(w);
    schedule_downlink(w);

    const double r_target_bits = w.cfg.target_rate_bps() * w.cfg.slot_duration_s;
    const double gamma_target = w.cfg.gamma_target();
    const double tx_power = w.cfg.tx_power_w();
    const double noise = w.cfg.channel.noise_watts() + w.cfg.channel.interference_w;
    const bool token_mode = w.cfg.mode == agent::CoopMode::TokenLearning;

    for (auto& ue : w.ues) {
        ue.alive_now = w.cfg.mode == agent::CoopMode::ObedientInfinite || ue.state.energy > 0.0;
        ue.obs = {};
        ue.engaged = false;
        ++ue.acc.total_slots;
        if (ue.alive_now) ++ue.acc.lifetime_slots;
    }

    for (auto& cell : w.cells) {
        for (int dest_id : cell.downlink) {
            UE& dest = w.ues[dest_id];
            const double shadow = w.rng.normal(0.0, w.cfg.channel.shadow_sigma_db);
            const double gain = radio::link_gain(std::max(distance(cell.bs, dest.pos), 1e-6), shadow, w.cfg.channel);
            const double direct_sinr = gain * tx_power / noise;
            if (dest.alive_now) ++dest.acc.dl_slots;

            if (direct_sinr >= gamma_target) {
                // direct mode at the granted rate
                if (dest.alive_now) {
                    dest.acc.actual_bits += r_target_bits;
                    dest.acc.direct_bits += r_target_bits;
                }
                continue;
            }

            // The grant cannot be served directly this slot.
            if (dest.alive_now) ++dest.acc.demand_events;

            bool attempt = false;
            switch (w.cfg.mode) {
                case agent::CoopMode::TokenLearning:
                    attempt = dest.alive_now && dest.state.tokens > 0;
                    break;
                case agent::CoopMode::ObedientFinite:
                case agent::CoopMode::ObedientInfinite:
                    attempt = dest.alive_now;
                    break;
                case agent::CoopMode::NeverCooperate:
                    attempt = false;
                    break;
            }
            if (!attempt) continue;
            ++dest.acc.eligible_demand;

            std::vector<radio::RelayCandidate> candidates;
            candidates.reserve(cell.members.size());
            for (int cand_id : cell.members) {
                UE& cand = w.ues[cand_id];
                if (cand_id == dest_id || cand.dl_scheduled || cand.engaged || !cand.alive_now) continue;
                const double shadow_bs = w.rng.normal(0.0, w.cfg.channel.shadow_sigma_db);
                const double gain_bs = radio::link_gain(std::max(distance(cell.bs, cand.pos), 1e-6), shadow_bs, w.cfg.channel);
                const double shadow_d2d = w.rng.normal(0.0, w.cfg.channel.shadow_sigma_db);
                const double gain_d2d = radio::link_gain(std::max(distance(cand.pos, dest.pos), 1e-6), shadow_d2d, w.cfg.channel);
                candidates.push_back({cand_id, gain_bs * tx_power / noise, gain_d2d});
            }
            const auto offer = radio::select_relay(candidates, w.cfg.channel, gamma_target, tx_power, w.cfg.slot_duration_s);
            if (!offer) continue;

            UE& relay = w.ues[offer->relay_id];
            relay.engaged = true;  // one request per relay per slot, acknowledged or not
            ++relay.acc.inbound_requests;
            relay.obs.inbound_request = true;
            relay.obs.inbound_cost = offer->cost_j;

            if (agent::decide(relay.state, offer->cost_j, w.policies) != 1) continue;  // R-NACK: direct mode fallback

            // R-ACK: relayed delivery plus settlement.
            if (!(relay.state.energy > 0.0) && w.cfg.mode != agent::CoopMode::ObedientInfinite)
                throw InvariantViolation("slot " + std::to_string(w.slot) + ": dead device " + std::to_string(relay.id) + " acknowledged a relay request");
            if (token_mode) {
                if (dest.state.tokens <= 0)
                    throw InvariantViolation("slot " + std::to_string(w.slot) + ": device " + std::to_string(dest.id) + " paid without a token");
                if (!(dest.state.energy > 0.0))
                    throw InvariantViolation("slot " + std::to_string(w.slot) + ": dead device " + std::to_string(dest.id) + " bought relay service");
                dest.state = agent::apply_token_event(dest.state, agent::TokenEvent::Received, 0.0);
                relay.state = agent::apply_token_event(relay.state, agent::TokenEvent::Provided, offer->cost_j);
                ++dest.spent;
                ++relay.earned;
            } else if (w.cfg.mode == agent::CoopMode::ObedientFinite) {
                relay.state.energy = std::max(0.0, relay.state.energy - offer->cost_j);
            }

            dest.acc.actual_bits += r_target_bits;
            ++dest.acc.racks_received;
            dest.acc.utility += w.cfg.grid.benefit;
            ++relay.acc.racks_sent;
            relay.acc.utility -= offer->cost_j;
            dest.obs.outbound_success = true;
            w.transactions.push_back({w.slot, dest.id, relay.id, offer->required_power_w, offer->cost_j});
        }
    }

    for (auto& ue : w.ues) ue.state = agent::update_estimates(ue.state, ue.obs);

    detail::check_invariants(w);
    detail::record_histogram(w);
}

// ---------------------------------------------------------------------------
// Metrics

struct UeReport {
    int id;
    bool high_mobility;
    bool high_budget;
    std::optional<double> ordr;
    std::optional<double> irdr;
    std::optional<double> rre;
    std::optional<double> rack_rate;
    long lifetime;
    std::optional<double> gain;
    std::optional<double> utility;  ///< average per lifetime slot
};

struct Aggregate {
    std::string group;
    std::string metric;
    double mean;
    double p25;
    double p75;
    long n;
};

struct MetricsReport {
    std::vector<UeReport> per_ue;
    std::vector<Aggregate> summary;
    double network_ordr = 0.0;
    double mean_gain = 0.0;
    double negative_utility_fraction = 0.0;
    std::vector<std::vector<int>> token_histogram;
    long invariant_checks = 0;
    long transaction_count = 0;
    int slots = 0;
    int token_supply = 0;
};

namespace detail {

inline double percentile(std::vector<double> values, double q) {
    std::sort(values.begin(), values.end());
    const double rank = q * static_cast<double>(values.size() - 1);
    const std::size_t lo = static_cast<std::size_t>(rank);
    if (lo + 1 >= values.size()) return values.back();
    const double frac = rank - static_cast<double>(lo);
    return values[lo] + frac * (values[lo + 1] - values[lo]);
}

}  // namespace detail

inline MetricsReport compute_metrics(const World& w) {
    MetricsReport report;
    report.token_histogram = w.token_histogram;
    report.invariant_checks = w.invariant_checks;
    report.transaction_count = static_cast<long>(w.transactions.size());
    report.slots = w.slot;
    report.token_supply = w.cfg.token_supply;

    const auto ratio = [](double num, long den) -> std::optional<double> {
        if (den == 0) return std::nullopt;
        return num / static_cast<double>(den);
    };

    long negatives = 0;
    for (const auto& ue : w.ues) {
        UeReport r;
        r.id = ue.id;
        r.high_mobility = ue.high_mobility;
        r.high_budget = ue.high_budget;
        r.ordr = ratio(static_cast<double>(ue.acc.demand_events), ue.acc.dl_slots);
        r.irdr = ratio(static_cast<double>(ue.acc.inbound_requests), ue.acc.lifetime_slots);
        r.rre = ratio(static_cast<double>(ue.acc.racks_received), ue.acc.eligible_demand);
        r.rack_rate = ratio(static_cast<double>(ue.acc.racks_sent), ue.acc.inbound_requests);
        r.lifetime = ue.acc.lifetime_slots;
        r.gain = ue.acc.direct_bits > 0.0 ? std::optional<double>(ue.acc.actual_bits / ue.acc.direct_bits) : std::nullopt;
        r.utility = ratio(ue.acc.utility, ue.acc.lifetime_slots);
        if (r.utility && *r.utility < 0.0) ++negatives;
        report.per_ue.push_back(r);
    }
    report.negative_utility_fraction = w.ues.empty() ? 0.0 : static_cast<double>(negatives) / static_cast<double>(w.ues.size());

    struct Group {
        const char* name;
        bool (*member)(const UeReport&);
    };
    static constexpr Group groups[] = {
        {"all", [](const UeReport&) { return true; }},
        {"mobility-high", [](const UeReport& r) { return r.high_mobility; }},
        {"mobility-low", [](const UeReport& r) { return !r.high_mobility; }},
        {"budget-high", [](const UeReport& r) { return r.high_budget; }},
        {"budget-low", [](const UeReport& r) { return !r.high_budget; }},
    };
    struct Metric {
        const char* name;
        std::optional<double> (*value)(const UeReport&);
    };
    static constexpr Metric metrics[] = {
        {"ordr", [](const UeReport& r) { return r.ordr; }},
        {"irdr", [](const UeReport& r) { return r.irdr; }},
        {"rre", [](const UeReport& r) { return r.rre; }},
        {"rack_rate", [](const UeReport& r) { return r.rack_rate; }},
        {"lifetime", [](const UeReport& r) { return std::optional<double>(static_cast<double>(r.lifetime)); }},
        {"gain", [](const UeReport& r) { return r.gain; }},
        {"utility", [](const UeReport& r) { return r.utility; }},
    };
    for (const auto& g : groups) {
        for (const auto& m : metrics) {
            std::vector<double> values;
            for (const auto& r : report.per_ue)
                if (g.member(r))
                    if (const auto v = m.value(r)) values.push_back(*v);
            if (values.empty()) {
                report.summary.push_back({g.name, m.name, 0.0, 0.0, 0.0, 0});
                continue;
            }
            double total = 0.0;
            for (double v : values) total += v;
            report.summary.push_back({g.name, m.name, total / static_cast<double>(values.size()),
                                      detail::percentile(values, 0.25), detail::percentile(values, 0.75),
                                      static_cast<long>(values.size())});
        }
    }

    const auto find = [&report](const char* metric) {
        for (const auto& a : report.summary)
            if (a.group == std::string("all") && a.metric == metric) return a.mean;
        return 0.0;
    };
    report.network_ordr = find("ordr");
    report.mean_gain = find("gain");
    return report;
}

/// Run a full simulation and report.
inline MetricsReport run(const SimConfig& cfg, const table::PolicyTable& policies) {
    World w = init_world(cfg, policies);
    for (int t = 0; t < cfg.slots; ++t) simulate_slot(w);
    return compute_metrics(w);
}

// ---------------------------------------------------------------------------
// Artifact emission

inline std::string ue_metrics_csv(const MetricsReport& report) {
    std::string out = "id,mobility,budget,ordr,irdr,rre,rack_rate,lifetime,gain,utility\n";
    for (const auto& r : report.per_ue) {
        out += std::to_string(r.id);
        out += r.high_mobility ? ",high" : ",low";
        out += r.high_budget ? ",high" : ",low";
        out += "," + csv::format(r.ordr);
        out += "," + csv::format(r.irdr);
        out += "," + csv::format(r.rre);
        out += "," + csv::format(r.rack_rate);
        out += "," + std::to_string(r.lifetime);
        out += "," + csv::format(r.gain);
        out += "," + csv::format(r.utility);
        out += "\n";
    }
    return out;
}

inline std::string summary_csv(const MetricsReport& report) {
    std::string out = "group,metric,mean,p25,p75,n\n";
    for (const auto& a : report.summary) {
        out += a.group + "," + a.metric;
        out += "," + csv::format(a.mean);
        out += "," + csv::format(a.p25);
        out += "," + csv::format(a.p75);
        out += "," + std::to_string(a.n) + "\n";
    }
    return out;
}

inline std::string tokens_csv(const MetricsReport& report) {
    std::string out = "slot";
    if (!report.token_histogram.empty())
        for (std::size_t k = 0; k < report.token_histogram.front().size(); ++k) out += ",k" + std::to_string(k);
    out += "\n";
    for (std::size_t t = 0; t < report.token_histogram.size(); ++t) {
        out += std::to_string(t);
        for (int count : report.token_histogram[t]) out += "," + std::to_string(count);
        out += "\n";
    }
    return out;
}

inline std::string invariant_log(const MetricsReport& report) {
    std::string out;
    out += "slots = " + std::to_string(report.slots) + "\n";
    out += "invariant_checks = " + std::to_string(report.invariant_checks) + "\n";
    out += "transactions = " + std::to_string(report.transaction_count) + "\n";
    out += "token_supply = " + std::to_string(report.token_supply) + "\n";
    out += "violations = 0\n";  // a violation aborts the run before any artifact is written
    return out;
}

}  // namespace tokenrelay::sim
