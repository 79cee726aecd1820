#ifndef SIPO_READOUT_HPP
#define SIPO_READOUT_HPP

// Clocked model of the serial-in parallel-out readout: per-chain D flip-flop
// shift registers gate analog switches onto one shared Vout line, which the
// ADC samples once per clock period.

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "sipo/error.hpp"

namespace sipo::readout {

/// Default ADC slot budget: 1/30 kHz, the settle+convert time that caps a 20-unit scan at 1.5 kHz.
inline constexpr double kDefaultSlotBudget = 1.0 / 30000.0;

// Relative slack for comparing slot durations against the budget; keeps
// 1/(1500 Hz * 20) from being rejected against 1/30000 s by rounding.
inline constexpr double kBudgetRelTol = 1e-9;

struct ChainConfig {
    int chain_id = 0;
    std::vector<std::string> unit_labels;

    std::size_t unit_count() const noexcept { return unit_labels.size(); }

    bool operator==(const ChainConfig&) const = default;
};

struct ReadoutConfig {
    std::vector<ChainConfig> chains;
    double vdd = 3.3;
    int adc_bits = 12;
    double adc_slot_budget = kDefaultSlotBudget;
    double sample_phase = 0.5;

    std::size_t total_units() const noexcept
    {
        std::size_t n = 0;
        for (const auto& c : chains) {
            n += c.unit_count();
        }
        return n;
    }

    /// Position of chain `chain_id` in `chains`, or nullopt.
    std::optional<std::size_t> chain_index(int chain_id) const noexcept
    {
        for (std::size_t i = 0; i < chains.size(); ++i) {
            if (chains[i].chain_id == chain_id) {
                return i;
            }
        }
        return std::nullopt;
    }

    /// Flat channel index (config order across all chains) of a unit.
    std::size_t channel_index(std::size_t chain_pos, std::size_t unit) const noexcept
    {
        std::size_t base = 0;
        for (std::size_t i = 0; i < chain_pos; ++i) {
            base += chains[i].unit_count();
        }
        return base + unit;
    }

    std::vector<std::string> channel_labels() const
    {
        std::vector<std::string> out;
        for (const auto& c : chains) {
            out.insert(out.end(), c.unit_labels.begin(), c.unit_labels.end());
        }
        return out;
    }

    void validate() const
    {
        check(!chains.empty(), ErrorCode::InvalidConfig, "readout needs at least one chain");
        check(vdd > 0.0, ErrorCode::InvalidConfig, "vdd must be > 0");
        check(adc_bits >= 1 && adc_bits <= 16, ErrorCode::InvalidConfig,
              "adc_bits must be in [1, 16]");
        check(adc_slot_budget > 0.0, ErrorCode::InvalidConfig, "adc_slot_budget must be > 0");
        check(sample_phase > 0.0 && sample_phase <= 1.0, ErrorCode::InvalidConfig,
              "sample_phase must be in (0, 1]");
        std::set<int> ids;
        std::set<std::string> labels;
        for (const auto& c : chains) {
            check(c.unit_count() >= 1, ErrorCode::InvalidConfig,
                  "chain " + std::to_string(c.chain_id) + " has no units");
            check(ids.insert(c.chain_id).second, ErrorCode::InvalidConfig,
                  "duplicate chain_id " + std::to_string(c.chain_id));
            for (const auto& l : c.unit_labels) {
                check(labels.insert(l).second, ErrorCode::InvalidConfig,
                      "duplicate unit label '" + l + "'");
            }
        }
    }

    bool operator==(const ReadoutConfig&) const = default;
};

/// Flip-flop outputs Q1..Qn of one chain plus the level at the first D input.
struct ChainState {
    std::vector<bool> flip_flop_outputs;
    bool pending_input = false;

    explicit ChainState(std::size_t unit_count = 0) : flip_flop_outputs(unit_count, false) {}
    ChainState(std::initializer_list<bool> q) : flip_flop_outputs(q) {}

    bool operator==(const ChainState&) const = default;
};

/// In-place rising clock edge.
inline void clock_edge(ChainState& state, bool input_bit)
{
    auto& q = state.flip_flop_outputs;
    if (q.empty()) {
        return;
    }
    for (std::size_t k = q.size() - 1; k > 0; --k) {
        q[k] = q[k - 1];
    }
    q[0] = input_bit;
}

/// One rising clock edge: Q1 latches the input, every other output takes its predecessor's value.
inline ChainState step_chain(ChainState state, bool input_bit)
{
    clock_edge(state, input_bit);
    return state;
}

/// Index of the single high output. Throws MultipleActive if the one-hot protocol was violated.
inline std::optional<std::size_t> active_slot(const ChainState& state)
{
    std::optional<std::size_t> found;
    const auto& q = state.flip_flop_outputs;
    for (std::size_t k = 0; k < q.size(); ++k) {
        if (q[k]) {
            if (found) {
                throw Error(ErrorCode::MultipleActive,
                            "outputs " + std::to_string(*found) + " and " + std::to_string(k) +
                                " are both high");
            }
            found = k;
        }
    }
    return found;
}

/// Voltage on the chain's Vout: the active unit's sensor, or 0 V when every switch is open.
inline double mux_output(const ChainState& state, std::span<const double> sensor_voltages)
{
    check(sensor_voltages.size() == state.flip_flop_outputs.size(),
          ErrorCode::ShapeMismatch, "sensor_voltages length must equal unit_count");
    const auto slot = active_slot(state);
    return slot ? sensor_voltages[*slot] : 0.0;
}

struct Slot {
    int chain_id = 0;
    std::size_t unit_index = 0;
    std::string channel_label;
    std::size_t channel_index = 0; // flat index into ReadoutConfig::channel_labels()

    bool operator==(const Slot&) const = default;
};

struct ScanPlan {
    double scan_rate = 0.0;
    double clock_frequency = 0.0;
    double slot_duration = 0.0;
    std::vector<Slot> slots;
    std::vector<int> selected_chains;

    // ADC and chain topology carried from the generating config.
    double vdd = 3.3;
    int adc_bits = 12;
    double sample_phase = 0.5;
    std::vector<std::size_t> chain_units;       // per selected chain
    std::vector<std::size_t> chain_offsets;     // first slot of each selected chain
    std::vector<std::size_t> chain_first_index; // flat channel index of unit 0 per selected chain

    std::size_t slot_count() const noexcept { return slots.size(); }

    /// Time at which the ADC samples slot `i` of a scan starting at `scan_start`.
    double sample_time(double scan_start, std::size_t i) const noexcept
    {
        return scan_start + (static_cast<double>(i) + sample_phase) * slot_duration;
    }
};

namespace detail {

inline std::vector<std::size_t> resolve_chains(const ReadoutConfig& config,
                                               const std::optional<std::vector<int>>& selected)
{
    std::vector<std::size_t> positions;
    if (!selected) {
        for (std::size_t i = 0; i < config.chains.size(); ++i) {
            positions.push_back(i);
        }
        return positions;
    }
    check(!selected->empty(), ErrorCode::InvalidConfig, "selected_chains must be nonempty");
    // Scan order follows configured chain order, whatever order the caller listed them in.
    std::set<int> wanted(selected->begin(), selected->end());
    check(wanted.size() == selected->size(), ErrorCode::InvalidConfig,
          "selected_chains contains duplicates");
    for (int id : wanted) {
        check(config.chain_index(id).has_value(), ErrorCode::InvalidConfig,
              "unknown chain id " + std::to_string(id));
    }
    for (std::size_t i = 0; i < config.chains.size(); ++i) {
        if (wanted.count(config.chains[i].chain_id)) {
            positions.push_back(i);
        }
    }
    return positions;
}

} // namespace detail

inline std::size_t slot_count(const ReadoutConfig& config,
                              const std::optional<std::vector<int>>& selected_chains = std::nullopt)
{
    std::size_t n = 0;
    for (auto pos : detail::resolve_chains(config, selected_chains)) {
        n += config.chains[pos].unit_count();
    }
    return n;
}

/// Fastest full-scan rate the ADC slot budget allows for the selected chains.
inline double max_scan_rate(const ReadoutConfig& config,
                            const std::optional<std::vector<int>>& selected_chains = std::nullopt)
{
    const auto n = slot_count(config, selected_chains);
    return 1.0 / (static_cast<double>(n) * config.adc_slot_budget);
}

inline ScanPlan build_scan_plan(const ReadoutConfig& config, double scan_rate,
                                const std::optional<std::vector<int>>& selected_chains = std::nullopt)
{
    config.validate();
    check(scan_rate > 0.0 && std::isfinite(scan_rate), ErrorCode::InvalidConfig,
          "scan_rate must be > 0");
    const auto positions = detail::resolve_chains(config, selected_chains);

    ScanPlan plan;
    plan.scan_rate = scan_rate;
    plan.vdd = config.vdd;
    plan.adc_bits = config.adc_bits;
    plan.sample_phase = config.sample_phase;
    for (auto pos : positions) {
        const auto& chain = config.chains[pos];
        plan.selected_chains.push_back(chain.chain_id);
        plan.chain_units.push_back(chain.unit_count());
        plan.chain_offsets.push_back(plan.slots.size());
        plan.chain_first_index.push_back(config.channel_index(pos, 0));
        for (std::size_t u = 0; u < chain.unit_count(); ++u) {
            plan.slots.push_back(
                Slot{chain.chain_id, u, chain.unit_labels[u], config.channel_index(pos, u)});
        }
    }
    const auto n = static_cast<double>(plan.slots.size());
    plan.clock_frequency = scan_rate * n;
    plan.slot_duration = 1.0 / plan.clock_frequency;
    if (plan.slot_duration < config.adc_slot_budget * (1.0 - kBudgetRelTol)) {
        throw SlotBudgetExceeded(scan_rate, max_scan_rate(config, selected_chains));
    }
    return plan;
}

struct SampleFrame {
    std::uint64_t sequence = 0;
    std::uint64_t timestamp_us = 0;
    std::vector<std::uint16_t> samples;

    bool operator==(const SampleFrame&) const = default;
};

inline std::uint32_t adc_full_scale(int adc_bits) { return (1u << adc_bits) - 1u; }

/// Round-to-nearest quantizer over [0, vdd]; out-of-range inputs clamp to the rails.
inline std::uint16_t quantize(double volts, double vdd, int adc_bits)
{
    const double full = adc_full_scale(adc_bits);
    const double v = std::clamp(volts, 0.0, vdd);
    return static_cast<std::uint16_t>(std::floor(v / vdd * full + 0.5));
}

/// Anything callable as `source(time_s, flat_channel_index) -> volts`.
template <typename F>
concept VoltageSource = std::invocable<F&, double, std::size_t> &&
    std::convertible_to<std::invoke_result_t<F&, double, std::size_t>, double>;

namespace detail {

/// Clock-by-clock walk over one scan, calling `visit(slot, t_sample, vout)`
/// with the muxed line voltage at each slot's sample instant.
template <VoltageSource Source, typename Visit>
void walk_scan(const ScanPlan& plan, Source& source, double scan_start, Visit&& visit)
{
    const std::size_t chains = plan.chain_units.size();
    std::vector<ChainState> states;
    states.reserve(chains);
    for (auto n : plan.chain_units) {
        states.emplace_back(n);
    }
    std::vector<double> volts;
    for (std::size_t i = 0; i < plan.slot_count(); ++i) {
        // Rising edge i: chain c gets its pulse when the previous chain's pulse leaves.
        for (std::size_t c = 0; c < chains; ++c) {
            clock_edge(states[c], plan.chain_offsets[c] == i);
        }
        const double t = plan.sample_time(scan_start, i);
        std::optional<std::size_t> driving;
        for (std::size_t c = 0; c < chains; ++c) {
            if (active_slot(states[c])) {
                if (driving) {
                    throw Error(ErrorCode::MultipleActive,
                                "two chains drive Vout in slot " + std::to_string(i));
                }
                driving = c;
            }
        }
        double vout = 0.0;
        if (driving) {
            const auto c = *driving;
            volts.resize(plan.chain_units[c]);
            for (std::size_t u = 0; u < volts.size(); ++u) {
                volts[u] = source(t, plan.chain_first_index[c] + u);
            }
            vout = mux_output(states[c], volts);
        }
        visit(i, t, vout);
    }
}

} // namespace detail

/// Simulate one full scan starting at `scan_start` seconds and return the digitized frame.
template <VoltageSource Source>
SampleFrame run_scan(const ScanPlan& plan, Source&& source, double scan_start,
                     std::uint64_t sequence = 0)
{
    SampleFrame frame;
    frame.sequence = sequence;
    frame.timestamp_us = static_cast<std::uint64_t>(std::llround(scan_start * 1e6));
    frame.samples.resize(plan.slot_count());
    detail::walk_scan(plan, source, scan_start, [&](std::size_t i, double, double vout) {
        frame.samples[i] = quantize(vout, plan.vdd, plan.adc_bits);
    });
    return frame;
}

/// One oscilloscope-style point. Two points per slot: the rising edge and mid-period.
struct WaveformPoint {
    double time = 0.0;
    std::size_t slot = 0;
    double vout = 0.0;
    bool clock = false;
    std::vector<bool> pulses; // per selected chain: level at the chain's first D input
};

/// Idealised clock/pulse/Vout trace of one scan. Vout is evaluated at each point's time.
template <VoltageSource Source>
std::vector<WaveformPoint> trace_scan(const ScanPlan& plan, Source&& source, double scan_start)
{
    std::vector<WaveformPoint> out;
    out.reserve(2 * plan.slot_count());
    const std::size_t chains = plan.chain_units.size();
    std::vector<ChainState> states;
    for (auto n : plan.chain_units) {
        states.emplace_back(n);
    }
    std::vector<double> volts;
    for (std::size_t i = 0; i < plan.slot_count(); ++i) {
        for (std::size_t c = 0; c < chains; ++c) {
            clock_edge(states[c], plan.chain_offsets[c] == i);
        }
        for (int half = 0; half < 2; ++half) {
            WaveformPoint p;
            p.time = scan_start + (static_cast<double>(i) + 0.5 * half) * plan.slot_duration;
            p.slot = i;
            p.clock = half == 0;
            p.pulses.resize(chains);
            for (std::size_t c = 0; c < chains; ++c) {
                p.pulses[c] = half == 0 && plan.chain_offsets[c] == i;
                if (auto unit = active_slot(states[c])) {
                    volts.resize(plan.chain_units[c]);
                    for (std::size_t u = 0; u < volts.size(); ++u) {
                        volts[u] = source(p.time, plan.chain_first_index[c] + u);
                    }
                    p.vout = mux_output(states[c], volts);
                }
            }
            out.push_back(std::move(p));
        }
    }
    return out;
}

} // namespace sipo::readout

#endif // SIPO_READOUT_HPP
