#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <vector>

#include "sipo/estimation.hpp"

using namespace sipo;
using namespace sipo::estimation;

namespace {

constexpr double kVdd = 3.3;

// Sums in long double, two passes; independent of the library's accumulation order.
long double oracle_slope(const std::vector<double>& x, const std::vector<double>& y)
{
    long double sxy = 0.0L;
    long double sxx = 0.0L;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sxy += static_cast<long double>(x[i]) * y[i];
        sxx += static_cast<long double>(x[i]) * x[i];
    }
    return sxy / sxx;
}

ChannelLayout layout_of(std::size_t n)
{
    ChannelLayout l;
    for (std::size_t i = 0; i < n; ++i) {
        l.channels.push_back({"ch" + std::to_string(i), ChannelKind::Joint});
    }
    return l;
}

} // namespace

TEST(Demux, Examples)
{
    const auto v = demux(readout::SampleFrame{0, 0, {4095, 0, 2048}}, layout_of(3), kVdd, 12);
    EXPECT_DOUBLE_EQ(v[0], 3.3);
    EXPECT_EQ(v[1], 0.0);
    EXPECT_NEAR(v[2], 1.650403, 1e-6);
    EXPECT_DOUBLE_EQ(v[2], 2048.0 * 3.3 / 4095.0);
}

TEST(Demux, LayoutMismatch)
{
    try {
        demux(readout::SampleFrame{0, 0, {1, 2}}, layout_of(3), kVdd, 12);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::LayoutMismatch);
    }
}

TEST(Demux, LayoutFromPlanFollowsSlots)
{
    readout::ReadoutConfig cfg;
    cfg.chains = {{0, {"a", "b"}}, {1, {"h1"}}};
    const auto plan = readout::build_scan_plan(cfg, 100.0);
    const auto layout = ChannelLayout::from_plan(plan, [](const std::string& l) {
        return l[0] == 'h' ? ChannelKind::Hall : ChannelKind::Joint;
    });
    ASSERT_EQ(layout.size(), 3u);
    EXPECT_EQ(layout.channels[2], (ChannelInfo{"h1", ChannelKind::Hall}));
    EXPECT_EQ(layout.index_of("b"), 1u);
    EXPECT_FALSE(layout.index_of("zz").has_value());
}

TEST(ToDelta, Examples)
{
    ChannelSeries s{"x", {0, 1, 2}, {1.0, 1.5, 2.0}, std::nullopt};
    const auto d = to_delta(s);
    EXPECT_EQ(d.values, (std::vector<double>{0.0, 0.5, 1.0}));
    EXPECT_EQ(d.zero_reference, 1.0);

    ChannelSeries c{"c", {0, 1, 2}, {0.7, 0.7, 0.7}, std::nullopt};
    EXPECT_EQ(to_delta(c).values, (std::vector<double>{0.0, 0.0, 0.0}));

    ChannelSeries z{"z", {0, 1}, {3.0, -2.0}, 0.0};
    EXPECT_EQ(to_delta(z).values, z.values);

    ChannelSeries e{"e", {}, {}, std::nullopt};
    EXPECT_THROW(to_delta(e), Error);
}

TEST(AngleFromVoltage, Examples)
{
    EXPECT_NEAR(angle_from_voltage(0.009167, kVdd), 1.0, 1e-4);
    EXPECT_EQ(angle_from_voltage(0.0, kVdd), 0.0);
    EXPECT_NEAR(angle_from_voltage(0.64167, kVdd), 70.0, 1e-3);
    EXPECT_NEAR(reference_slope(kVdd), 0.009167, 5e-7);
}

TEST(FitSlope, Examples)
{
    const std::vector<double> x1{1, 2}, y1{2, 4};
    EXPECT_DOUBLE_EQ(fit_slope_through_origin(x1, y1), 2.0);

    const double a = reference_slope(kVdd);
    std::vector<double> x, y;
    for (int i = -70; i <= 70; ++i) {
        x.push_back(i);
        y.push_back(a * i);
    }
    EXPECT_NEAR(fit_slope_through_origin(x, y), a, 1e-15);

    const std::vector<double> x3{1, 2, 3}, y3{1.1, 1.9, 3.2};
    EXPECT_NEAR(fit_slope_through_origin(x3, y3), 14.5 / 14.0, 1e-15);
    EXPECT_NEAR(fit_slope_through_origin(x3, y3), 1.0357, 5e-5);
}

TEST(FitSlope, Errors)
{
    const std::vector<double> zeros{0, 0, 0}, y{1, 2, 3};
    try {
        fit_slope_through_origin(zeros, y);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::DegenerateInput);
    }
    const std::vector<double> one{1};
    EXPECT_THROW(fit_slope_through_origin(one, one), Error);
    const std::vector<double> two{1, 2};
    EXPECT_THROW(fit_slope_through_origin(two, y), Error);
}

TEST(FitSlope, MatchesExtendedPrecisionOracle)
{
    std::mt19937_64 rng(1);
    std::uniform_real_distribution<double> u(-100.0, 100.0);
    std::uniform_int_distribution<std::size_t> n(2, 500);
    for (int trial = 0; trial < 1000; ++trial) {
        std::vector<double> x(n(rng)), y(x.size());
        for (std::size_t i = 0; i < x.size(); ++i) {
            x[i] = u(rng);
            y[i] = u(rng);
        }
        const double got = fit_slope_through_origin(x, y);
        const auto want = static_cast<double>(oracle_slope(x, y));
        // Cancellation in sum(xy) limits the attainable agreement; scale by sum|xy|/sum(x^2).
        long double sabs = 0.0L, sxx = 0.0L;
        for (std::size_t i = 0; i < x.size(); ++i) {
            sabs += std::abs(static_cast<long double>(x[i]) * y[i]);
            sxx += static_cast<long double>(x[i]) * x[i];
        }
        const double bound = 1e-13 * static_cast<double>(sabs / sxx) + 1e-15;
        ASSERT_NEAR(got, want, bound);
    }
}

TEST(ApeSlope, Examples)
{
    const double a = reference_slope(kVdd);
    EXPECT_EQ(ape_slope(a, a), 0.0);
    EXPECT_NEAR(ape_slope(1.00446 * a, a), 0.446, 1e-10);
    EXPECT_NEAR(ape_slope(0.5 * a, a), 50.0, 1e-12);
}

TEST(ApeSlope, OfExactFitIsRelativeSlopeError)
{
    std::mt19937_64 rng(8);
    std::uniform_real_distribution<double> scale(0.9, 1.1);
    std::uniform_real_distribution<double> u(-70.0, 70.0);
    const double a_ref = reference_slope(kVdd);
    for (int t = 0; t < 1000; ++t) {
        const double a = a_ref * scale(rng);
        std::vector<double> x(50), y(50);
        for (std::size_t i = 0; i < x.size(); ++i) {
            x[i] = u(rng);
            y[i] = a * x[i];
        }
        ASSERT_NEAR(ape_slope(fit_slope_through_origin(x, y), a_ref),
                    std::abs(a - a_ref) / a_ref * 100.0, 1e-11);
    }
}

TEST(RelativeScaleError, Examples)
{
    const double a = reference_slope(kVdd);
    EXPECT_EQ(relative_scale_error(a, a), 0.0);
    EXPECT_NEAR(relative_scale_error(1.00446 * a, a), 0.00446, 1e-14);
    EXPECT_EQ(relative_scale_error(0.0, a), -1.0);
}

// For noiseless data with slope a, every sample's relative angle error equals (a - a_ref)/a_ref.
TEST(RelativeScaleError, IdentityOnLinearData)
{
    const double a_ref = reference_slope(kVdd);
    for (double scale : {0.97, 1.00446, 1.02}) {
        const double a = scale * a_ref;
        double sum = 0.0;
        int n = 0;
        for (int i = -700; i <= 700; ++i) {
            if (i == 0) {
                continue;
            }
            const double theta = i * 0.1;
            const double est = angle_from_voltage(a * theta, kVdd);
            sum += (est - theta) / theta;
            ++n;
        }
        EXPECT_NEAR(sum / n, relative_scale_error(a, a_ref), 1e-13);
    }
}

TEST(EstimationErrors, Examples)
{
    const double a = reference_slope(kVdd);
    std::vector<double> theta, v;
    for (int i = -70; i <= 70; ++i) {
        theta.push_back(i);
        v.push_back(a * i);
    }
    const auto perfect = estimation_errors(v, theta, kVdd);
    EXPECT_NEAR(perfect.rmse, 0.0, 1e-12);
    EXPECT_NEAR(perfect.std_error, 0.0, 1e-12);

    // e = [1, -1]
    const std::vector<double> dv{a * 1.0, a * -1.0}, dt{0.0, 0.0};
    const auto pm = estimation_errors(dv, dt, kVdd);
    EXPECT_NEAR(pm.rmse, 1.0, 1e-12);
    EXPECT_NEAR(pm.std_error, 1.0, 1e-12);
}

TEST(EstimationErrors, WorstCaseAtFullSwing)
{
    const double a_ref = reference_slope(kVdd);
    std::vector<double> theta, v;
    for (int i = 0; i <= 14000; ++i) {
        const double x = -70.0 + i * 0.01;
        theta.push_back(x);
        v.push_back(1.00446 * a_ref * x);
    }
    const auto s = estimation_errors(v, theta, kVdd);
    double worst = 0.0;
    for (double e : s.e) {
        worst = std::max(worst, std::abs(e));
    }
    EXPECT_NEAR(worst, 0.31, 0.005);
    EXPECT_NEAR(std::abs(s.e.front()), worst, 1e-12);
    EXPECT_NEAR(std::abs(s.e.back()), worst, 1e-12);
}

TEST(EstimationErrors, RmseDecomposesIntoStdAndBias)
{
    std::mt19937_64 rng(4);
    std::normal_distribution<double> noise(0.0, 0.002);
    std::uniform_real_distribution<double> bias(-0.01, 0.01);
    const double a_ref = reference_slope(kVdd);
    for (int t = 0; t < 200; ++t) {
        const double b = bias(rng);
        std::vector<double> theta, v;
        for (int i = 0; i < 1000; ++i) {
            const double x = 70.0 * std::sin(i * 0.01);
            theta.push_back(x);
            v.push_back(a_ref * x + b + noise(rng));
        }
        const auto s = estimation_errors(v, theta, kVdd);
        ASSERT_NEAR(s.rmse * s.rmse, s.std_error * s.std_error + s.mean * s.mean, 1e-12);
    }
}

TEST(EstimationErrors, RejectsBadShapes)
{
    const std::vector<double> a{1, 2}, b{1, 2, 3}, c{1};
    EXPECT_THROW(estimation_errors(a, b, kVdd), Error);
    EXPECT_THROW(estimation_errors(c, c, kVdd), Error);
}

TEST(Align, Examples)
{
    const ChannelSeries s{"s", {0.0, 1.0}, {0.0, 2.0}, std::nullopt};
    const std::vector<double> mid{0.5};
    EXPECT_EQ(align(s, mid).values, (std::vector<double>{1.0}));
    EXPECT_EQ(align(s, s.times).values, s.values);
    const std::vector<double> out{1.5};
    try {
        align(s, out);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::OutOfRange);
    }
    const std::vector<double> before{-1e-9};
    EXPECT_THROW(align(s, before), Error);
}

TEST(Align, ExactOnPiecewiseLinear)
{
    // Source knots carry a piecewise-linear function; sampling it anywhere must agree
    // with evaluating the function directly.
    std::mt19937_64 rng(6);
    std::uniform_real_distribution<double> gap(0.001, 0.01);
    std::uniform_real_distribution<double> slope(-5.0, 5.0);
    ChannelSeries s;
    std::vector<double> slopes;
    double t = 0.0, v = 0.0;
    for (int i = 0; i < 500; ++i) {
        s.times.push_back(t);
        s.values.push_back(v);
        slopes.push_back(slope(rng));
        const double dt = gap(rng);
        t += dt;
        v += slopes.back() * dt;
    }
    std::uniform_real_distribution<double> where(s.times.front(), s.times.back());
    std::vector<double> targets;
    for (int i = 0; i < 2000; ++i) {
        targets.push_back(where(rng));
    }
    const auto a = align(s, targets);
    for (std::size_t i = 0; i < targets.size(); ++i) {
        const auto k = static_cast<std::size_t>(
            std::upper_bound(s.times.begin(), s.times.end(), targets[i]) - s.times.begin() - 1);
        const double expect = s.values[k] + slopes[k] * (targets[i] - s.times[k]);
        ASSERT_NEAR(a.values[i], expect, 1e-12);
    }
}

TEST(Aggregate, MeanAndSampleStd)
{
    const std::vector<double> v{1.0, 2.0, 3.0, 4.0};
    const auto a = aggregate(v);
    EXPECT_DOUBLE_EQ(a.mean, 2.5);
    ASSERT_TRUE(a.sample_std.has_value());
    EXPECT_NEAR(*a.sample_std, std::sqrt(5.0 / 3.0), 1e-15);

    const std::vector<double> one{0.3};
    EXPECT_FALSE(aggregate(one).sample_std.has_value());
    EXPECT_THROW(aggregate(std::vector<double>{}), Error);
}

TEST(Aggregate, Overlap)
{
    const Aggregate a{1.0, 0.1};
    const Aggregate b{1.3, 0.05};
    EXPECT_TRUE(a.overlaps(b, 2.0));
    EXPECT_FALSE(a.overlaps(b, 1.0));
    EXPECT_TRUE(b.overlaps(a, 2.0));
}

TEST(Report, Formatting)
{
    EXPECT_EQ(format_mean_std(Aggregate{0.0654, 0.00951}), "0.065 (0.0095)");
    EXPECT_EQ(format_mean_std(Aggregate{0.25, std::nullopt}), "0.250 (n/a)");

    std::vector<TrialMetrics> trials(3);
    for (int i = 0; i < 3; ++i) {
        trials[i].ape_slope_percent = 0.1 * (i + 1);
        trials[i].rmse_ref_deg = 0.3;
        trials[i].std_error_deg = 0.2 + 0.01 * i;
    }
    const auto r = MetricsReport::from_trials(trials);
    EXPECT_NEAR(r.ape_slope_percent.mean, 0.2, 1e-15);
    EXPECT_NEAR(*r.ape_slope_percent.sample_std, 0.1, 1e-15);
    const auto text = format_report(r);
    EXPECT_NE(text.find("trials = 3\n"), std::string::npos);
    EXPECT_NE(text.find("APE_slope_pct = 0.200 (0.1000)\n"), std::string::npos);
    EXPECT_NE(text.find("RMSE_ref_deg.sample_std = 0.000000\n"), std::string::npos);
    EXPECT_NE(text.find("STD_error_deg.mean = 0.210000\n"), std::string::npos);
}

TEST(JointMetrics, NoiselessScaledData)
{
    const double a_ref = reference_slope(kVdd);
    std::vector<double> theta, v;
    for (int i = 0; i < 2001; ++i) {
        const double x = 70.0 * std::sin(i * 0.005);
        theta.push_back(x);
        v.push_back(1.002 * a_ref * x);
    }
    const auto m = joint_metrics(theta, v, kVdd);
    EXPECT_NEAR(m.ape_slope_percent, 0.2, 1e-9);
    EXPECT_NEAR(m.a_fit, 1.002 * a_ref, 1e-15);
    EXPECT_EQ(m.samples, 2001u);
}
