#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "sipo/estimation.hpp"
#include "sipo/readout.hpp"
#include "test_support.hpp"

using namespace sipo;
using namespace sipo::readout;

namespace {

ReadoutConfig uniform_config(std::size_t units, double budget = kDefaultSlotBudget)
{
    ReadoutConfig cfg;
    ChainConfig c{0, {}};
    for (std::size_t i = 0; i < units; ++i) {
        c.unit_labels.push_back("u" + std::to_string(i));
    }
    cfg.chains.push_back(c);
    cfg.adc_slot_budget = budget;
    return cfg;
}

} // namespace

TEST(StepChain, PulseEntersAtFirstFlipFlop)
{
    EXPECT_EQ(step_chain(ChainState{false, false, false}, true), (ChainState{true, false, false}));
}

TEST(StepChain, PulseMovesOnePosition)
{
    EXPECT_EQ(step_chain(ChainState{true, false, false}, false), (ChainState{false, true, false}));
}

TEST(StepChain, PulseExitsChain)
{
    EXPECT_EQ(step_chain(ChainState{false, false, true}, false), (ChainState{false, false, false}));
}

TEST(ActiveSlot, Examples)
{
    EXPECT_EQ(active_slot(ChainState{false, true, false}), std::optional<std::size_t>(1));
    EXPECT_EQ(active_slot(ChainState{false, false, false}), std::nullopt);
    try {
        active_slot(ChainState{true, true, false});
        FAIL() << "expected MultipleActive";
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::MultipleActive);
    }
}

TEST(MuxOutput, RoutesActiveUnitOrIdle)
{
    const std::vector<double> v{1.0, 2.0, 3.0};
    EXPECT_EQ(mux_output(ChainState{false, true, false}, v), 2.0);
    EXPECT_EQ(mux_output(ChainState{false, false, false}, v), 0.0);
    EXPECT_EQ(mux_output(ChainState{false, false, true}, std::vector<double>{0.5, 0.5, 3.3}), 3.3);
}

TEST(MuxOutput, PropagatesMultipleActive)
{
    EXPECT_THROW(mux_output(ChainState{true, false, true}, std::vector<double>{1, 2, 3}), Error);
}

TEST(ScanPlan, TwentyUnitsAtOneKilohertz)
{
    const auto plan = build_scan_plan(test::hand_readout(), 1000.0);
    EXPECT_EQ(plan.slot_count(), 20u);
    EXPECT_EQ(plan.clock_frequency, 20000.0);
    EXPECT_DOUBLE_EQ(plan.slot_duration, 50e-6);
}

TEST(ScanPlan, FifteenHundredHertzUsesThirtyKilohertzClock)
{
    auto cfg = test::hand_readout();
    cfg.adc_slot_budget = 33.33e-6;
    const auto plan = build_scan_plan(cfg, 1500.0);
    EXPECT_EQ(plan.clock_frequency, 30000.0);
}

TEST(ScanPlan, TwoKilohertzExceedsBudget)
{
    auto cfg = test::hand_readout();
    cfg.adc_slot_budget = 33.33e-6;
    try {
        build_scan_plan(cfg, 2000.0);
        FAIL() << "expected SlotBudgetExceeded";
    } catch (const SlotBudgetExceeded& e) {
        EXPECT_EQ(e.code(), ErrorCode::SlotBudgetExceeded);
        EXPECT_NEAR(e.max_hz(), 1500.0, 0.2);
    }
}

TEST(ScanPlan, DefaultBudgetGivesExactlyFifteenHundredHertz)
{
    EXPECT_DOUBLE_EQ(max_scan_rate(test::hand_readout()), 1500.0);
    EXPECT_NO_THROW(build_scan_plan(test::hand_readout(), 1500.0));
    EXPECT_THROW(build_scan_plan(test::hand_readout(), 1500.5), SlotBudgetExceeded);
}

TEST(MaxScanRate, Examples)
{
    EXPECT_NEAR(max_scan_rate(uniform_config(20, 33.33e-6)), 1500.15, 0.01);
    EXPECT_NEAR(max_scan_rate(uniform_config(10, 33.33e-6)), 3000.3, 0.01);
    EXPECT_DOUBLE_EQ(max_scan_rate(uniform_config(1, 1.0)), 1.0);
}

TEST(ScanPlan, SelectiveChainsKeepConfiguredOrder)
{
    const auto cfg = test::hand_readout();
    const auto plan = build_scan_plan(cfg, 1000.0, std::vector<int>{4, 2});
    ASSERT_EQ(plan.slot_count(), 6u);
    EXPECT_EQ(plan.selected_chains, (std::vector<int>{2, 4}));
    EXPECT_EQ(plan.slots.front().channel_label, "middle_j1");
    EXPECT_EQ(plan.slots.back().channel_label, "pinky_j3");
    EXPECT_EQ(plan.clock_frequency, 6000.0);
    // fewer slots -> higher ceiling
    EXPECT_DOUBLE_EQ(max_scan_rate(cfg, std::vector<int>{2}), 10000.0);
}

TEST(ScanPlan, RejectsBadSelectionsAndConfigs)
{
    const auto cfg = test::hand_readout();
    EXPECT_THROW(build_scan_plan(cfg, 1000.0, std::vector<int>{}), Error);
    EXPECT_THROW(build_scan_plan(cfg, 1000.0, std::vector<int>{9}), Error);
    EXPECT_THROW(build_scan_plan(cfg, 0.0), Error);
    auto dup = cfg;
    dup.chains[1].unit_labels[0] = "thumb_j1";
    EXPECT_THROW(dup.validate(), Error);
    auto empty = cfg;
    empty.chains[0].unit_labels.clear();
    EXPECT_THROW(empty.validate(), Error);
}

TEST(RunScan, QuantizerExamples)
{
    const auto plan = build_scan_plan(uniform_config(1), 1000.0);
    auto constant = [](double v) { return [v](double, std::size_t) { return v; }; };
    EXPECT_EQ(run_scan(plan, constant(3.3), 0.0).samples[0], 4095);
    EXPECT_EQ(run_scan(plan, constant(0.0), 0.0).samples[0], 0);
    EXPECT_EQ(run_scan(plan, constant(1.65), 0.0).samples[0], 2048);
    // out-of-range inputs clamp to the rails
    EXPECT_EQ(run_scan(plan, constant(5.0), 0.0).samples[0], 4095);
    EXPECT_EQ(run_scan(plan, constant(-1.0), 0.0).samples[0], 0);
}

TEST(RunScan, SamplesMidSlotInSlotOrder)
{
    const auto plan = build_scan_plan(test::hand_readout(), 1000.0);
    std::vector<std::pair<double, std::size_t>> calls;
    auto probe = [&](double t, std::size_t ch) {
        calls.emplace_back(t, ch);
        return 1.0;
    };
    const auto f = run_scan(plan, probe, 0.25, 7);
    EXPECT_EQ(f.sequence, 7u);
    EXPECT_EQ(f.timestamp_us, 250000u);
    // every unit of the active chain is read at each of that chain's slots; the muxed value
    // must come from the slot's own channel
    std::vector<double> seen_times;
    for (auto& [t, ch] : calls) {
        if (seen_times.empty() || seen_times.back() != t) {
            seen_times.push_back(t);
        }
    }
    ASSERT_EQ(seen_times.size(), 20u);
    for (std::size_t i = 0; i < 20; ++i) {
        EXPECT_DOUBLE_EQ(seen_times[i], 0.25 + (i + 0.5) * 50e-6);
    }
}

TEST(RunScan, EachSlotCarriesItsOwnChannel)
{
    const auto cfg = test::hand_readout();
    const auto plan = build_scan_plan(cfg, 1000.0);
    // channel i drives (i + 1) * 0.1 V
    auto src = [](double, std::size_t ch) { return 0.1 * static_cast<double>(ch + 1); };
    const auto f = run_scan(plan, src, 0.0);
    for (std::size_t i = 0; i < plan.slot_count(); ++i) {
        EXPECT_EQ(f.samples[i], quantize(0.1 * static_cast<double>(plan.slots[i].channel_index + 1), 3.3, 12));
    }
}

// Property: a single pulse visits each output once, in order, then leaves.
TEST(ChainProperty, SinglePulseConservation)
{
    std::mt19937_64 rng(1234);
    std::uniform_int_distribution<std::size_t> len(1, 64);
    for (int trial = 0; trial < 1000; ++trial) {
        const auto n = len(rng);
        ChainState s(n);
        for (std::size_t clk = 0; clk < n + 10; ++clk) {
            s = step_chain(s, clk == 0);
            const auto a = active_slot(s);
            if (clk < n) {
                ASSERT_TRUE(a.has_value());
                ASSERT_EQ(*a, clk);
            } else {
                ASSERT_FALSE(a.has_value());
            }
        }
    }
}

TEST(PlanProperty, ClockOverScanRateIsSlotCount)
{
    std::mt19937_64 rng(99);
    std::uniform_int_distribution<std::size_t> units(1, 64);
    std::uniform_real_distribution<double> frac(0.01, 1.0);
    for (int trial = 0; trial < 1000; ++trial) {
        const auto cfg = uniform_config(units(rng));
        const double rate = max_scan_rate(cfg) * frac(rng);
        const auto plan = build_scan_plan(cfg, rate);
        ASSERT_NEAR(plan.clock_frequency / plan.scan_rate, static_cast<double>(plan.slot_count()), 1e-12 * plan.slot_count());
        ASSERT_EQ(plan.slot_duration, 1.0 / plan.clock_frequency);
        ASSERT_GE(plan.slot_duration, cfg.adc_slot_budget * (1.0 - kBudgetRelTol));
    }
}

// Property: mux -> ADC -> demux equals quantising each channel directly. The oracle
// searches every code for the nearest reconstruction level.
TEST(PlanProperty, MuxDemuxMatchesDirectQuantisation)
{
    const auto cfg = test::hand_readout();
    const auto plan = build_scan_plan(cfg, 1000.0);
    std::vector<estimation::ChannelInfo> chans;
    for (const auto& s : plan.slots) {
        chans.push_back({s.channel_label, estimation::ChannelKind::Joint});
    }
    const estimation::ChannelLayout layout{chans};
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> volts(-0.2, 3.5);
    for (int trial = 0; trial < 200; ++trial) {
        std::vector<double> v(cfg.total_units());
        for (auto& x : v) {
            x = volts(rng);
        }
        const auto f = run_scan(plan, [&](double, std::size_t ch) { return v[ch]; }, 0.0);
        const auto out = estimation::demux(f, layout, 3.3, 12);
        for (std::size_t i = 0; i < out.size(); ++i) {
            const double want = test::nearest_level(v[plan.slots[i].channel_index], 3.3, 12);
            ASSERT_EQ(out[i], want) << "slot " << i;
        }
    }
}

TEST(PlanProperty, DeterministicFrames)
{
    const auto plan = build_scan_plan(test::hand_readout(), 1000.0);
    auto make = [&] {
        std::mt19937_64 rng(42);
        std::normal_distribution<double> n(1.6, 0.5);
        std::vector<SampleFrame> frames;
        auto src = [&](double, std::size_t) { return n(rng); };
        for (int k = 0; k < 50; ++k) {
            frames.push_back(run_scan(plan, src, k * 1e-3, static_cast<std::uint64_t>(k)));
        }
        return frames;
    };
    EXPECT_EQ(make(), make());
}

TEST(PlanProperty, ClockScalingScalesSampleTimes)
{
    const auto cfg = test::hand_readout();
    const auto slow = build_scan_plan(cfg, 500.0);
    const auto fast = build_scan_plan(cfg, 1500.0);
    for (std::size_t i = 0; i < slow.slot_count(); ++i) {
        EXPECT_NEAR(fast.sample_time(0.0, i), slow.sample_time(0.0, i) / 3.0, 1e-15);
    }
    auto src = [](double, std::size_t ch) { return 0.137 * static_cast<double>(ch); };
    EXPECT_EQ(run_scan(slow, src, 0.0).samples, run_scan(fast, src, 0.0).samples);
}

TEST(Waveform, TwoPointsPerSlotWithPulsePerChain)
{
    const auto plan = build_scan_plan(test::hand_readout(), 1000.0);
    const auto w = trace_scan(plan, [](double, std::size_t ch) { return 0.1 * (ch + 1.0); }, 0.0);
    ASSERT_EQ(w.size(), 40u);
    std::size_t pulses = 0;
    for (const auto& p : w) {
        for (bool b : p.pulses) {
            pulses += b;
        }
        EXPECT_GT(p.vout, 0.0);
    }
    EXPECT_EQ(pulses, 5u);
    EXPECT_TRUE(w[0].clock);
    EXPECT_FALSE(w[1].clock);
    EXPECT_TRUE(w[0].pulses[0]);
    EXPECT_TRUE(w[8].pulses[1]); // index chain starts after the 4 thumb slots
}
