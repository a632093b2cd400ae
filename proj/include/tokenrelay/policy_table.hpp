#pragma once

// Offline phase of the learning scheme: solve the cooperation MDP over a
// representative (pi, mu, cost) grid once, keep only the per-bin thresholds,
// and answer nearest-grid-point lookups online.
//
// Table file format (little-endian):
//   "PTBL"                     magic
//   u16  version               currently 1
//   u32  nx, ny, nz            grid lengths for pi, mu, cost
//   f64  pi[nx], mu[ny], c[nz] grid values
//   f64  beta, benefit
//   u32  max_tokens, energy_bins
//   f64  p_max
//   f64  tolerance             value-iteration tolerance used in the build
//   u32  solver_version
//   i8   thresholds[nx*ny*nz*energy_bins]   row-major (i_pi, i_mu, i_c, e), -1 = never

#include <atomic>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <mutex>
#include <span>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "tokenrelay/mdp.hpp"

namespace tokenrelay::table {

constexpr std::uint16_t kFormatVersion = 1;
constexpr std::uint32_t kSolverVersion = 1;

/// Raised on malformed or truncated table payloads.
struct FormatError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Representative parameter grid for the offline build.
struct ParamGrid {
    std::vector<double> pi;    ///< outbound relay success rates, ascending, within [0, 0.5]
    std::vector<double> mu;    ///< inbound demand rates, ascending, within [0, 1]
    std::vector<double> cost;  ///< relay costs (J), ascending, positive
    double beta = 0.99;
    double benefit = 0.5;
    mdp::StateSpace space;

    void validate() const {
        space.validate();
        if (space.max_tokens > 127) throw std::invalid_argument("ParamGrid: max_tokens must fit a signed byte");
        if (!(beta >= 0.0 && beta < 1.0)) throw std::invalid_argument("ParamGrid: beta must lie in [0, 1)");
        if (!(benefit >= 0.0)) throw std::invalid_argument("ParamGrid: benefit must be non-negative");
        check_axis(pi, 0.0, 0.5, "pi");
        check_axis(mu, 0.0, 1.0, "mu");
        check_axis(cost, 0.0, std::numeric_limits<double>::infinity(), "cost");
        for (double c : cost)
            if (!(c > 0.0)) throw std::invalid_argument("ParamGrid: costs must be positive");
    }

    bool operator==(const ParamGrid&) const = default;

  private:
    static void check_axis(const std::vector<double>& g, double lo, double hi, const char* name) {
        if (g.empty()) throw std::invalid_argument(std::string("ParamGrid: empty ") + name + " grid");
        for (std::size_t i = 0; i < g.size(); ++i) {
            if (!(g[i] >= lo && g[i] <= hi)) throw std::invalid_argument(std::string("ParamGrid: ") + name + " value out of range");
            if (i > 0 && !(g[i] > g[i - 1])) throw std::invalid_argument(std::string("ParamGrid: ") + name + " grid must be strictly increasing");
        }
    }
};

/// Dense collection of threshold policies over the grid.
struct PolicyTable {
    ParamGrid grid;
    double tolerance = 1e-6;
    std::uint32_t solver_version = kSolverVersion;
    std::vector<std::int8_t> thresholds;  // (i_pi, i_mu, i_c, e) row-major

    std::size_t entry_count() const { return grid.pi.size() * grid.mu.size() * grid.cost.size(); }

    int threshold(std::size_t i_pi, std::size_t i_mu, std::size_t i_c, int energy_bin) const {
        const std::size_t bins = static_cast<std::size_t>(grid.space.energy_bins);
        return thresholds[((i_pi * grid.mu.size() + i_mu) * grid.cost.size() + i_c) * bins + static_cast<std::size_t>(energy_bin)];
    }

    mdp::ThresholdPolicy entry(std::size_t i_pi, std::size_t i_mu, std::size_t i_c) const {
        mdp::ThresholdPolicy t;
        t.k_th.resize(grid.space.energy_bins);
        for (int e = 0; e < grid.space.energy_bins; ++e) t.k_th[e] = threshold(i_pi, i_mu, i_c, e);
        return t;
    }

    /// True when this grid corner was solved with mu scaled down to 1 - pi
    /// to keep the transition rows stochastic.
    bool was_scaled(std::size_t i_pi, std::size_t i_mu) const { return grid.pi[i_pi] + grid.mu[i_mu] > 1.0; }

    bool operator==(const PolicyTable&) const = default;
};

/// Index of the grid point closest to a value; exact midpoints round down
/// and out-of-range values clamp to the nearest endpoint.
inline std::size_t nearest(double value, std::span<const double> grid) {
    if (grid.empty()) throw std::invalid_argument("nearest: empty grid");
    const auto it = std::lower_bound(grid.begin(), grid.end(), value);
    if (it == grid.begin()) return 0;
    if (it == grid.end()) return grid.size() - 1;
    const std::size_t hi = static_cast<std::size_t>(it - grid.begin());
    return value - grid[hi - 1] <= grid[hi] - value ? hi - 1 : hi;
}

/// Solve every grid entry and record its thresholds. Entries are
/// independent, so they are solved by a small worker pool.
inline PolicyTable build_table(const ParamGrid& grid, double tol = 1e-6, unsigned jobs = 0) {
    grid.validate();
    if (!(tol > 0.0)) throw std::invalid_argument("build_table: tol must be positive");
    if (jobs == 0) jobs = std::max(1u, std::thread::hardware_concurrency());

    PolicyTable out;
    out.grid = grid;
    out.tolerance = tol;
    const std::size_t bins = static_cast<std::size_t>(grid.space.energy_bins);
    out.thresholds.assign(out.entry_count() * bins, -1);

    const std::size_t n = out.entry_count();
    std::atomic<std::size_t> cursor{0};
    std::mutex fail_mutex;
    std::exception_ptr failure;

    const auto worker = [&] {
        for (std::size_t idx = cursor.fetch_add(1); idx < n; idx = cursor.fetch_add(1)) {
            const std::size_t i_c = idx % grid.cost.size();
            const std::size_t i_mu = idx / grid.cost.size() % grid.mu.size();
            const std::size_t i_pi = idx / grid.cost.size() / grid.mu.size();
            try {
                mdp::EnvParams env;
                env.pi = grid.pi[i_pi];
                env.mu = std::min(grid.mu[i_mu], 1.0 - env.pi);
                env.cost = grid.cost[i_c];
                env.benefit = grid.benefit;
                env.discount = grid.beta;
                const auto vi = mdp::value_iteration(env, grid.space, tol);
                mdp::ThresholdPolicy t;
                try {
                    t = mdp::to_threshold(mdp::greedy_policy(vi.values, env, grid.space));
                } catch (const mdp::NonThresholdPolicy& e) {
                    throw mdp::NonThresholdPolicy("entry (pi=" + std::to_string(env.pi) + ", mu=" + std::to_string(grid.mu[i_mu]) +
                                                  ", c=" + std::to_string(env.cost) + "): " + e.what());
                }
                for (std::size_t e = 0; e < bins; ++e) out.thresholds[idx * bins + e] = static_cast<std::int8_t>(t.k_th[e]);
            } catch (...) {
                std::scoped_lock lock(fail_mutex);
                if (!failure) failure = std::current_exception();
                return;
            }
        }
    };

    if (jobs == 1 || n == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (unsigned i = 0; i < jobs; ++i) pool.emplace_back(worker);
        for (auto& th : pool) th.join();
    }
    if (failure) std::rethrow_exception(failure);
    return out;
}

/// Cooperation action for the current estimates: snap to the nearest grid
/// entry and apply its threshold.
inline int lookup(const PolicyTable& t, double pi_hat, double mu_hat, double cost, int tokens, int energy_bin) {
    if (energy_bin <= 0) return 0;
    const std::size_t i_pi = nearest(pi_hat, t.grid.pi);
    const std::size_t i_mu = nearest(mu_hat, t.grid.mu);
    const std::size_t i_c = nearest(cost, t.grid.cost);
    return tokens <= t.threshold(i_pi, i_mu, i_c, energy_bin) ? 1 : 0;
}

namespace detail {

inline void put_u16(std::vector<std::uint8_t>& buf, std::uint16_t v) {
    buf.push_back(static_cast<std::uint8_t>(v));
    buf.push_back(static_cast<std::uint8_t>(v >> 8));
}

inline void put_u32(std::vector<std::uint8_t>& buf, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf.push_back(static_cast<std::uint8_t>(v >> 8 * i));
}

inline void put_f64(std::vector<std::uint8_t>& buf, double v) {
    const auto bits = std::bit_cast<std::uint64_t>(v);
    for (int i = 0; i < 8; ++i) buf.push_back(static_cast<std::uint8_t>(bits >> 8 * i));
}

struct Reader {
    std::span<const std::uint8_t> data;
    std::size_t pos = 0;

    void need(std::size_t n) const {
        if (pos + n > data.size()) throw FormatError("table payload truncated");
    }
    std::uint16_t u16() {
        need(2);
        const std::uint16_t v = static_cast<std::uint16_t>(data[pos] | data[pos + 1] << 8);
        pos += 2;
        return v;
    }
    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(data[pos + i]) << 8 * i;
        pos += 4;
        return v;
    }
    double f64() {
        need(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(data[pos + i]) << 8 * i;
        pos += 8;
        return std::bit_cast<double>(v);
    }
};

}  // namespace detail

inline std::vector<std::uint8_t> serialize(const PolicyTable& t) {
    std::vector<std::uint8_t> buf;
    buf.insert(buf.end(), {'P', 'T', 'B', 'L'});
    detail::put_u16(buf, kFormatVersion);
    detail::put_u32(buf, static_cast<std::uint32_t>(t.grid.pi.size()));
    detail::put_u32(buf, static_cast<std::uint32_t>(t.grid.mu.size()));
    detail::put_u32(buf, static_cast<std::uint32_t>(t.grid.cost.size()));
    for (double v : t.grid.pi) detail::put_f64(buf, v);
    for (double v : t.grid.mu) detail::put_f64(buf, v);
    for (double v : t.grid.cost) detail::put_f64(buf, v);
    detail::put_f64(buf, t.grid.beta);
    detail::put_f64(buf, t.grid.benefit);
    detail::put_u32(buf, static_cast<std::uint32_t>(t.grid.space.max_tokens));
    detail::put_u32(buf, static_cast<std::uint32_t>(t.grid.space.energy_bins));
    detail::put_f64(buf, t.grid.space.p_max);
    detail::put_f64(buf, t.tolerance);
    detail::put_u32(buf, t.solver_version);
    const std::size_t n = t.entry_count() * static_cast<std::size_t>(t.grid.space.energy_bins);
    if (t.thresholds.size() != n) throw FormatError("table threshold array does not match its grid");
    for (std::int8_t v : t.thresholds) buf.push_back(static_cast<std::uint8_t>(v));
    return buf;
}

inline PolicyTable deserialize(std::span<const std::uint8_t> bytes) {
    detail::Reader r{bytes};
    r.need(4);
    if (std::memcmp(bytes.data(), "PTBL", 4) != 0) throw FormatError("bad magic; not a policy table file");
    r.pos = 4;
    const std::uint16_t version = r.u16();
    if (version != kFormatVersion) throw FormatError("unsupported table format version " + std::to_string(version));

    PolicyTable t;
    const std::uint32_t nx = r.u32(), ny = r.u32(), nz = r.u32();
    if (nx == 0 || ny == 0 || nz == 0) throw FormatError("empty grid axis");
    t.grid.pi.resize(nx);
    t.grid.mu.resize(ny);
    t.grid.cost.resize(nz);
    for (auto& v : t.grid.pi) v = r.f64();
    for (auto& v : t.grid.mu) v = r.f64();
    for (auto& v : t.grid.cost) v = r.f64();
    t.grid.beta = r.f64();
    t.grid.benefit = r.f64();
    t.grid.space.max_tokens = static_cast<int>(r.u32());
    t.grid.space.energy_bins = static_cast<int>(r.u32());
    t.grid.space.p_max = r.f64();
    t.tolerance = r.f64();
    t.solver_version = r.u32();

    try {
        t.grid.validate();
    } catch (const std::invalid_argument& e) {
        throw FormatError(std::string("invalid grid in table payload: ") + e.what());
    }
    const std::size_t n = t.entry_count() * static_cast<std::size_t>(t.grid.space.energy_bins);
    r.need(n);
    t.thresholds.resize(n);
    for (std::size_t i = 0; i < n; ++i) t.thresholds[i] = static_cast<std::int8_t>(bytes[r.pos + i]);
    r.pos += n;
    if (r.pos != bytes.size()) throw FormatError("trailing bytes after table payload");
    for (std::int8_t v : t.thresholds)
        if (v < -1 || v > t.grid.space.max_tokens) throw FormatError("threshold outside the token range");
    return t;
}

inline void save_table(const PolicyTable& t, const std::string& path) {
    const auto bytes = serialize(t);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open " + path + " for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw std::runtime_error("failed writing " + path);
}

inline PolicyTable load_table(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path);
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return deserialize(bytes);
}

}  // namespace tokenrelay::table
