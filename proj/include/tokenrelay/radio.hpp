#pragma once

// Physical layer: log-distance path loss with shadow fading, SINR and
// Shannon rate, amplify-and-forward two-hop combining, and minimum-power
// relay selection.

#include <cmath>
#include <optional>
#include <span>
#include <stdexcept>

namespace tokenrelay::radio {

inline double db_to_linear(double db) { return std::pow(10.0, db / 10.0); }
inline double linear_to_db(double x) { return 10.0 * std::log10(x); }
inline double dbm_to_watts(double dbm) { return std::pow(10.0, (dbm - 30.0) / 10.0); }
inline double watts_to_dbm(double w) { return 10.0 * std::log10(w) + 30.0; }

/// Channel model constants. The noise figure is interpreted as the total
/// in-band noise power seen by one allocated link, a calibration choice
/// documented in the README.
struct ChannelParams {
    double eta = 3.0;              ///< path loss exponent
    double d0_m = 100.0;           ///< reference distance (m)
    double pl_d0_db = -5.0;        ///< path loss at the reference distance (dB)
    double shadow_sigma_db = 2.0;  ///< shadow fading standard deviation (dB)
    double noise_dbm = -2.5;       ///< in-band noise power per allocated link (dBm)
    double interference_w = 0.0;   ///< inter-cell interference (W)

    double noise_watts() const { return dbm_to_watts(noise_dbm); }

    void validate() const {
        if (!(eta > 0.0)) throw std::invalid_argument("ChannelParams: eta must be positive");
        if (!(d0_m > 0.0)) throw std::invalid_argument("ChannelParams: d0 must be positive");
        if (!(shadow_sigma_db >= 0.0)) throw std::invalid_argument("ChannelParams: shadow sigma must be non-negative");
        if (!(interference_w >= 0.0)) throw std::invalid_argument("ChannelParams: interference must be non-negative");
    }
};

/// One directed link in a slot.
struct LinkBudget {
    double gain;          ///< linear power gain
    double bandwidth_hz;  ///< allocated bandwidth (Hz)
    double tx_power_w;    ///< transmission power (W)
};

/// Linear channel power gain at a distance, for one shadow fading draw.
/// Distances below the reference distance clamp to it.
inline double link_gain(double distance_m, double shadow_db, const ChannelParams& ch) {
    if (!(distance_m > 0.0)) throw std::invalid_argument("link_gain: distance must be positive");
    const double d = std::max(distance_m, ch.d0_m);
    const double gain_db = -ch.pl_d0_db - 10.0 * ch.eta * std::log10(d / ch.d0_m) - shadow_db;
    return db_to_linear(gain_db);
}

struct SinrRate {
    double sinr;      ///< linear SINR
    double rate_bps;  ///< Shannon rate (bits/s)
};

/// Received SINR and achievable rate for a link budget.
inline SinrRate sinr_and_rate(const LinkBudget& lb, const ChannelParams& ch) {
    const double sinr = lb.gain * lb.tx_power_w / (ch.noise_watts() + ch.interference_w);
    return {sinr, lb.bandwidth_hz * std::log2(1.0 + sinr)};
}

/// End-to-end SINR of an amplify-and-forward two-hop link.
inline double af_sinr(double first_hop_sinr, double second_hop_sinr) {
    if (first_hop_sinr < 0.0 || second_hop_sinr < 0.0) throw std::invalid_argument("af_sinr: SINRs must be non-negative");
    return first_hop_sinr * second_hop_sinr / (first_hop_sinr + second_hop_sinr + 1.0);
}

/// Least relay power that lifts the combined link to the target SINR, or
/// nullopt when no power within the cap can. The combined SINR is capped
/// strictly below the first hop, so the first hop must exceed the target.
inline std::optional<double> min_relay_power(double first_hop_sinr, double relay_dest_gain,
                                             const ChannelParams& ch, double gamma_target, double p_max) {
    if (!(gamma_target > 0.0)) throw std::invalid_argument("min_relay_power: gamma_target must be positive");
    if (first_hop_sinr <= gamma_target) return std::nullopt;
    if (!(relay_dest_gain > 0.0)) return std::nullopt;
    const double second_hop_needed = gamma_target * (first_hop_sinr + 1.0) / (first_hop_sinr - gamma_target);
    const double power = second_hop_needed * (ch.noise_watts() + ch.interference_w) / relay_dest_gain;
    if (power > p_max) return std::nullopt;
    return power;
}

/// Candidate relay with its slot channel realization.
struct RelayCandidate {
    int id;
    double bs_relay_sinr;    ///< linear SINR of the base-station-to-relay hop
    double relay_dest_gain;  ///< linear gain of the relay-to-destination hop
};

/// A feasible relay assignment: who relays, at what power and energy cost.
struct RelayOffer {
    int relay_id;
    double required_power_w;
    double effective_sinr;  ///< combined two-hop SINR at the required power
    double cost_j;          ///< slot duration x required power
};

/// Pick the feasible candidate needing the least power; ties go to the
/// lower id. Candidates must be supplied in ascending id order.
inline std::optional<RelayOffer> select_relay(std::span<const RelayCandidate> candidates,
                                              const ChannelParams& ch, double gamma_target,
                                              double p_max, double slot_duration_s) {
    std::optional<RelayOffer> best;
    for (const auto& c : candidates) {
        const auto power = min_relay_power(c.bs_relay_sinr, c.relay_dest_gain, ch, gamma_target, p_max);
        if (!power) continue;
        if (!best || *power < best->required_power_w) {
            const double second_hop = c.relay_dest_gain * *power / (ch.noise_watts() + ch.interference_w);
            best = RelayOffer{c.id, *power, af_sinr(c.bs_relay_sinr, second_hop), slot_duration_s * *power};
        }
    }
    return best;
}

}  // namespace tokenrelay::radio
