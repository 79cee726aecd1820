#include <gtest/gtest.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <random>
#include <set>

#include "sipo/world.hpp"

using namespace sipo;
using namespace sipo::world;

namespace {

JointSensorParams noiseless_joint()
{
    JointSensorParams p;
    p.noise_sigma = 0.0;
    return p;
}

TactileParams noiseless_tactile()
{
    TactileParams p;
    p.noise_sigma = 0.0;
    return p;
}

std::size_t argmax_deviation(const std::array<double, 4>& v, double quiescent)
{
    std::size_t best = 0;
    for (std::size_t k = 1; k < 4; ++k) {
        if (std::abs(v[k] - quiescent) > std::abs(v[best] - quiescent)) {
            best = k;
        }
    }
    return best;
}

} // namespace

TEST(JointSensor, Examples)
{
    const auto p = noiseless_joint();
    EXPECT_NEAR(joint_sensor_voltage(90.0, p, 0.0), 0.825, 1e-12);
    EXPECT_EQ(joint_sensor_voltage(0.0, p, 0.0), 0.0);
    EXPECT_NEAR(joint_sensor_voltage(1.0, p, 0.0), 0.009167, 5e-7);
}

TEST(JointSensor, OffsetWrapsAndNoiseClamps)
{
    auto p = noiseless_joint();
    p.offset_angle = 180.0;
    EXPECT_NEAR(joint_sensor_voltage(-90.0, p, 0.0), 0.825, 1e-12);
    EXPECT_NEAR(joint_sensor_voltage(270.0, p, 0.0), 0.825, 1e-12);
    p.offset_angle = 0.0;
    p.noise_sigma = 0.01;
    EXPECT_EQ(joint_sensor_voltage(0.0, p, -3.0), 0.0);
    EXPECT_EQ(joint_sensor_voltage(359.99, p, 5.0), p.vdd);
    EXPECT_NEAR(joint_sensor_voltage(90.0, p, 1.0), 0.835, 1e-12);
}

TEST(JointSensor, WrapDegrees)
{
    EXPECT_EQ(wrap_degrees(360.0), 0.0);
    EXPECT_EQ(wrap_degrees(-90.0), 270.0);
    EXPECT_EQ(wrap_degrees(725.0), 5.0);
    EXPECT_EQ(wrap_degrees(-1e-18), 0.0);
}

TEST(JointSensor, LinearAwayFromWrap)
{
    auto p = noiseless_joint();
    p.offset_angle = 180.0;
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> angle(-170.0, 170.0);
    for (int i = 0; i < 1000; ++i) {
        const double a = angle(rng);
        const double b = angle(rng);
        if (std::abs(a - b) < 1.0) {
            continue;
        }
        const double slope =
            (joint_sensor_voltage(a, p, 0.0) - joint_sensor_voltage(b, p, 0.0)) / (a - b);
        ASSERT_NEAR(slope, p.vdd / 360.0, 1e-12);
    }
}

TEST(JointSensor, RejectsBadParams)
{
    auto p = noiseless_joint();
    p.vdd = 0.0;
    EXPECT_THROW(p.validate(), Error);
    p = noiseless_joint();
    p.noise_sigma = -1.0;
    EXPECT_THROW(p.validate(), Error);
}

TEST(Tactile, RestStateIsQuiescent)
{
    const auto p = noiseless_tactile();
    for (double v : tactile_hall_voltages(ContactEvent{}, p)) {
        EXPECT_EQ(v, p.quiescent_voltage);
    }
}

TEST(Tactile, CentredContactIsSymmetric)
{
    const auto p = noiseless_tactile();
    for (double f : {0.5, 1.0, 2.5, 4.0}) {
        const auto v = tactile_hall_voltages(ContactEvent{1, f, {0.0, 0.0}}, p);
        EXPECT_EQ(v[0], v[1]);
        EXPECT_EQ(v[1], v[2]);
        EXPECT_EQ(v[2], v[3]);
    }
}

TEST(Tactile, NearestSensorDeviatesMost)
{
    const auto p = noiseless_tactile();
    for (int loc = 1; loc <= 4; ++loc) {
        const ContactEvent e{loc, 4.0, p.location_point(loc)};
        const auto v = tactile_hall_voltages(e, p);
        EXPECT_EQ(argmax_deviation(v, p.quiescent_voltage), static_cast<std::size_t>(loc - 1))
            << "location " << loc;
        // The four signatures are distinct, which is what makes location learnable.
        EXPECT_GT(v[static_cast<std::size_t>(loc - 1)], p.quiescent_voltage);
    }
}

// Reflection across the x axis swaps sensors 1 and 3; across y = x it swaps 0<->1 and 2<->3.
TEST(Tactile, ReflectionPermutesChannelsExactly)
{
    const auto p = noiseless_tactile();
    std::mt19937_64 rng(11);
    std::uniform_real_distribution<double> coord(-3.0, 3.0);
    std::uniform_real_distribution<double> force(0.0, 4.0);
    for (int i = 0; i < 500; ++i) {
        const Point2 c{coord(rng), coord(rng)};
        const double f = force(rng);
        const auto v = tactile_hall_voltages(ContactEvent{1, f, c}, p);
        const auto vx = tactile_hall_voltages(ContactEvent{1, f, {c.x, -c.y}}, p);
        ASSERT_EQ(vx[0], v[0]);
        ASSERT_EQ(vx[1], v[3]);
        ASSERT_EQ(vx[2], v[2]);
        ASSERT_EQ(vx[3], v[1]);
        const auto vd = tactile_hall_voltages(ContactEvent{1, f, {c.y, c.x}}, p);
        ASSERT_EQ(vd[0], v[1]);
        ASSERT_EQ(vd[1], v[0]);
        ASSERT_EQ(vd[2], v[3]);
        ASSERT_EQ(vd[3], v[2]);
    }
}

TEST(Tactile, NearestFieldIncreasesWithForce)
{
    const auto p = noiseless_tactile();
    for (int loc = 1; loc <= 4; ++loc) {
        double prev = -1e300;
        for (int i = 0; i <= 400; ++i) {
            const double f = 4.0 * i / 400.0;
            const auto b = hall_fields(ContactEvent{loc, f, p.location_point(loc)}, p);
            const double nearest = b[static_cast<std::size_t>(loc - 1)];
            ASSERT_GT(nearest, prev) << "location " << loc << " force " << f;
            prev = nearest;
        }
    }
}

// Independent evaluation of the on-axis dipole field: directly below the magnet
// B_z = 2m / h^3.
TEST(Tactile, DipoleOnAxis)
{
    EXPECT_NEAR(dipole_bz({0.0, 0.0, 4.0}, {0.0, 0.0}, 40.0), 2.0 * 40.0 / 64.0, 1e-15);
    EXPECT_NEAR(dipole_bz({1.0, -2.0, 2.0}, {1.0, -2.0}, 40.0), 2.0 * 40.0 / 8.0, 1e-14);
}

TEST(Tactile, SeededNoiseIsReproducible)
{
    const auto p = TactileParams{};
    const ContactEvent e{2, 1.5, p.location_point(2)};
    GaussianStream a(mix_seed(42, 3));
    GaussianStream b(mix_seed(42, 3));
    GaussianStream c(mix_seed(42, 4));
    bool differs = false;
    for (int i = 0; i < 200; ++i) {
        const std::array<double, 4> na{a(), a(), a(), a()};
        const std::array<double, 4> nb{b(), b(), b(), b()};
        const std::array<double, 4> nc{c(), c(), c(), c()};
        const auto va = tactile_hall_voltages(e, p, std::span<const double, 4>(na));
        const auto vb = tactile_hall_voltages(e, p, std::span<const double, 4>(nb));
        const auto vc = tactile_hall_voltages(e, p, std::span<const double, 4>(nc));
        ASSERT_EQ(va, vb);
        differs = differs || va != vc;
    }
    EXPECT_TRUE(differs);
}

TEST(Tactile, RejectsNegativeForceAndBadGeometry)
{
    const auto p = noiseless_tactile();
    EXPECT_THROW(tactile_hall_voltages(ContactEvent{1, -0.1, {3.0, 0.0}}, p), Error);
    auto q = p;
    q.sensor_positions[1] = {0.0, 2.0};
    EXPECT_THROW(q.validate(), Error);
    q = p;
    q.sensor_positions[1] = {3.0, 0.0};
    EXPECT_THROW(q.validate(), Error);
    q = p;
    q.quiescent_voltage = 4.0;
    EXPECT_THROW(q.validate(), Error);
    EXPECT_NO_THROW(p.validate());
}

TEST(JointTrajectory, Examples)
{
    const auto t = joint_characterization_trajectory();
    ASSERT_EQ(t.joint_angles.size(), 1u);
    EXPECT_EQ(t.sample_times.size(), 100001u);
    EXPECT_EQ(t.sample_times.front(), 0.0);
    EXPECT_DOUBLE_EQ(t.sample_times.back(), 100.0);
    EXPECT_EQ(t.joint_angles[0][0], 0.0);
    EXPECT_NEAR(t.joint_angles[0][5000], 70.0, 1e-12);
    EXPECT_NEAR(t.joint_angles[0][15000], -70.0, 1e-12);
    EXPECT_TRUE(t.contacts.empty());
    EXPECT_TRUE(std::is_sorted(t.sample_times.begin(), t.sample_times.end()));
    EXPECT_THROW(joint_characterization_trajectory(0), Error);
}

TEST(IndentationTrajectory, LabelSequenceFollowsOrder)
{
    const auto p = noiseless_tactile();
    const auto t = indentation_trajectory({1, 2, 3, 4}, 4.0, 0.3, p);
    ASSERT_EQ(t.contacts.size(), t.sample_times.size());
    std::vector<int> visits;
    for (const auto& c : t.contacts) {
        if (visits.empty() || visits.back() != c.location_class) {
            visits.push_back(c.location_class);
        }
        if (c.location_class == 0) {
            ASSERT_EQ(c.force, 0.0);
        } else {
            ASSERT_GT(c.force, 0.0);
            ASSERT_LE(c.force, 4.0 + 1e-12);
        }
    }
    EXPECT_EQ(visits, (std::vector<int>{0, 1, 0, 2, 0, 3, 0, 4, 0}));

    const auto r = indentation_trajectory({3, 1, 4, 2}, 4.0, 0.3, p);
    visits.clear();
    for (const auto& c : r.contacts) {
        if (visits.empty() || visits.back() != c.location_class) {
            visits.push_back(c.location_class);
        }
    }
    EXPECT_EQ(visits, (std::vector<int>{0, 3, 0, 1, 0, 4, 0, 2, 0}));
}

TEST(IndentationTrajectory, RampDurationAndPeak)
{
    const auto p = noiseless_tactile();
    const IndentationProfile prof({1, 2, 3, 4}, 4.0, 0.3, p, 2.0);
    EXPECT_NEAR(prof.ramp_duration(), 4.0 / (0.3 * 2.0), 1e-12);
    EXPECT_NEAR(prof.ramp_duration(), 6.67, 0.005);
    EXPECT_NEAR(prof.duration(), 5 * 2.0 + 4 * 2.0 * prof.ramp_duration(), 1e-9);
    // Peak force is reached at the end of the first ramp.
    const auto peak = prof.event_at(2.0 + prof.ramp_duration());
    EXPECT_EQ(peak.location_class, 1);
    EXPECT_NEAR(peak.force, 4.0, 1e-12);
    // Force slope during loading equals feed * stiffness.
    const auto a = prof.event_at(3.0);
    const auto b = prof.event_at(4.0);
    EXPECT_NEAR(b.force - a.force, 0.3 * 2.0, 1e-12);
    EXPECT_EQ(prof.event_at(1.0).location_class, 0);
    EXPECT_EQ(prof.event_at(prof.duration() + 1.0).location_class, 0);
}

TEST(IndentationTrajectory, RejectsBadArguments)
{
    const auto p = noiseless_tactile();
    EXPECT_THROW(indentation_trajectory({1, 2, 3, 4}, 0.0, 0.3, p), Error);
    EXPECT_THROW(indentation_trajectory({1, 2, 3, 4}, 4.0, 0.0, p), Error);
    EXPECT_THROW(indentation_trajectory({1, 5}, 4.0, 0.3, p), Error);
    try {
        indentation_trajectory({1}, 0.0, 0.3, p);
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::PreconditionViolation);
    }
}

TEST(Seeds, MixSeedSpreadsStreams)
{
    std::set<std::uint64_t> seen;
    for (std::uint64_t s = 0; s < 1000; ++s) {
        seen.insert(mix_seed(7, s));
    }
    EXPECT_EQ(seen.size(), 1000u);
    EXPECT_EQ(mix_seed(7, 3), mix_seed(7, 3));
}
