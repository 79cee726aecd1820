#ifndef SIPO_WORLD_HPP
#define SIPO_WORLD_HPP

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <span>
#include <vector>

#include "sipo/error.hpp"

namespace sipo::world {

struct Point2 {
    double x = 0.0;
    double y = 0.0;

    bool operator==(const Point2&) const = default;
};

struct JointSensorParams {
    double vdd = 3.3;
    double offset_angle = 0.0;  // deg, magnet mounting orientation
    double noise_sigma = 0.0021; // V; 0.23 deg expressed through a_ref
    std::uint64_t seed = 0;
    double slope_scale = 1.0; // specimen-to-specimen sensitivity perturbation, 1 = datasheet

    void validate() const
    {
        check(vdd > 0.0, ErrorCode::InvalidConfig, "joint vdd must be > 0");
        check(noise_sigma >= 0.0, ErrorCode::InvalidConfig,
              "joint noise_sigma must be >= 0");
        check(slope_scale > 0.0, ErrorCode::InvalidConfig,
              "joint slope_scale must be > 0");
    }

    bool operator==(const JointSensorParams&) const = default;
};

inline double wrap_degrees(double angle)
{
    double w = std::fmod(angle, 360.0);
    if (w < 0.0) {
        w += 360.0;
    }
    // fmod of a tiny negative can round up to exactly 360.
    return w >= 360.0 ? 0.0 : w;
}

/// Rotary magnetic encoder with a ratiometric analog output: V = wrap(angle + offset) * vdd / 360.
inline double joint_sensor_voltage(double angle, const JointSensorParams& params, double noise_draw)
{
    const double slope = params.slope_scale * params.vdd / 360.0;
    const double v = wrap_degrees(angle + params.offset_angle) * slope + params.noise_sigma * noise_draw;
    return std::clamp(v, 0.0, params.vdd);
}

struct TactileParams {
    // Sensors on the +x, +y, -x, -y axes so the 4-fold symmetry is exact in floating point.
    std::array<Point2, 4> sensor_positions{{{3.0, 0.0}, {0.0, 3.0}, {-3.0, 0.0}, {0.0, -3.0}}};
    // Press location k (1-based) sits over sensor k-1 at this radius.
    double contact_radius = 3.0;          // mm
    double magnet_rest_height = 4.0;      // mm above the sensor plane
    double min_magnet_height = 0.5;       // mm, skin fully compressed
    double magnet_moment = 40.0;          // field units * mm^3
    double axial_stiffness = 2.0;         // N/mm
    double lateral_compliance = 0.25;     // mm/N
    double quiescent_voltage = 0.6;       // V
    double sensitivity = 1.0;             // V per field unit
    double vdd = 3.3;
    double noise_sigma = 0.002;           // V
    std::uint64_t seed = 0;

    void validate() const
    {
        const double r = std::hypot(sensor_positions[0].x, sensor_positions[0].y);
        check(r > 0.0, ErrorCode::InvalidConfig, "sensor radius must be > 0");
        for (std::size_t k = 0; k < 4; ++k) {
            const auto& p = sensor_positions[k];
            check(std::abs(std::hypot(p.x, p.y) - r) <= 1e-9 * r, ErrorCode::InvalidConfig,
                  "tactile sensors must share one radius");
            const auto& q = sensor_positions[(k + 1) % 4];
            check(std::abs(p.x * q.x + p.y * q.y) <= 1e-9 * r * r, ErrorCode::InvalidConfig,
                  "tactile sensors must be 90 degrees apart");
        }
        check(axial_stiffness > 0.0 && lateral_compliance > 0.0, ErrorCode::InvalidConfig,
              "stiffnesses must be > 0");
        check(magnet_rest_height > min_magnet_height && min_magnet_height > 0.0,
              ErrorCode::InvalidConfig, "need magnet_rest_height > min_magnet_height > 0");
        check(vdd > 0.0 && quiescent_voltage >= 0.0 && quiescent_voltage <= vdd,
              ErrorCode::InvalidConfig, "quiescent_voltage must lie in [0, vdd]");
        check(noise_sigma >= 0.0, ErrorCode::InvalidConfig, "tactile noise_sigma must be >= 0");
        check(contact_radius >= 0.0, ErrorCode::InvalidConfig, "contact_radius must be >= 0");
    }

    /// Indenter position for press location `location` in 1..4.
    Point2 location_point(int location) const
    {
        check(location >= 1 && location <= 4, ErrorCode::PreconditionViolation,
              "contact location must be in 1..4");
        const auto& s = sensor_positions[static_cast<std::size_t>(location - 1)];
        const double r = std::hypot(s.x, s.y);
        return {s.x / r * contact_radius, s.y / r * contact_radius};
    }

    bool operator==(const TactileParams&) const = default;
};

struct ContactEvent {
    int location_class = 0; // 0 = no contact, 1..4 = press location
    double force = 0.0;     // N
    Point2 contact_point{};

    bool operator==(const ContactEvent&) const = default;
};

struct Vec3 {
    double x, y, z;
};

/// Magnet centre after the skin deforms under `event`.
inline Vec3 magnet_position(const ContactEvent& event, const TactileParams& params)
{
    const double f = event.force;
    const double h = std::max(params.magnet_rest_height - f / params.axial_stiffness,
                              params.min_magnet_height);
    Vec3 m{0.0, 0.0, h};
    const double norm = std::hypot(event.contact_point.x, event.contact_point.y);
    if (event.location_class != 0 && norm > 0.0) {
        const double shift = params.lateral_compliance * f;
        m.x = shift * event.contact_point.x / norm;
        m.y = shift * event.contact_point.y / norm;
    }
    return m;
}

/// Axial field of a z-oriented point dipole at `magnet`, observed at (p, 0).
inline double dipole_bz(const Vec3& magnet, Point2 p, double moment)
{
    const double dx = p.x - magnet.x;
    const double dy = p.y - magnet.y;
    const double dz = -magnet.z;
    const double r2 = dx * dx + dy * dy + dz * dz;
    const double r = std::sqrt(r2);
    return moment * (3.0 * dz * dz - r2) / (r2 * r2 * r);
}

inline std::array<double, 4> hall_fields(const ContactEvent& event, const TactileParams& params)
{
    const auto m = magnet_position(event, params);
    std::array<double, 4> b{};
    for (std::size_t k = 0; k < 4; ++k) {
        b[k] = dipole_bz(m, params.sensor_positions[k], params.magnet_moment);
    }
    return b;
}

/// Four Hall outputs. Quiescent voltage is the reading with the magnet at rest, so the
/// output tracks the field change relative to the undeformed skin.
inline std::array<double, 4> tactile_hall_voltages(const ContactEvent& event,
                                                   const TactileParams& params,
                                                   std::span<const double, 4> noise_draws)
{
    check(event.force >= 0.0, ErrorCode::PreconditionViolation, "force must be >= 0");
    const auto rest = hall_fields(ContactEvent{}, params);
    const auto b = hall_fields(event, params);
    std::array<double, 4> v{};
    for (std::size_t k = 0; k < 4; ++k) {
        v[k] = std::clamp(params.quiescent_voltage + params.sensitivity * (b[k] - rest[k]) +
                              params.noise_sigma * noise_draws[k],
                          0.0, params.vdd);
    }
    return v;
}

inline std::array<double, 4> tactile_hall_voltages(const ContactEvent& event,
                                                   const TactileParams& params)
{
    const std::array<double, 4> zeros{};
    return tactile_hall_voltages(event, params, std::span<const double, 4>(zeros));
}

/// Seeded standard-normal stream, one per channel.
class GaussianStream {
public:
    explicit GaussianStream(std::uint64_t seed) : engine_(seed) {}

    double operator()() { return dist_(engine_); }

private:
    std::mt19937_64 engine_;
    std::normal_distribution<double> dist_{0.0, 1.0};
};

/// SplitMix64 finaliser, used to derive independent child seeds.
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream)
{
    std::uint64_t z = seed + 0x9E3779B97F4A7C15ull * (stream + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

struct Trajectory {
    std::vector<double> sample_times;
    std::vector<std::vector<double>> joint_angles; // [joint][sample]
    std::vector<ContactEvent> contacts;             // empty when no tactile channel is driven
};

struct SinusoidProfile {
    int cycles = 5;
    double period = 20.0;    // s
    double amplitude = 70.0; // deg

    double duration() const { return cycles * period; }
    double angle_at(double t) const
    {
        return amplitude * std::sin(2.0 * std::numbers::pi * t / period);
    }
};

/// Sinusoidal sweep sampled at `rate` over cycles * period seconds (end point included).
inline Trajectory joint_characterization_trajectory(int cycles = 5, double period = 20.0,
                                                    double amplitude = 70.0, double rate = 1000.0)
{
    check(cycles > 0 && period > 0.0 && amplitude > 0.0 && rate > 0.0,
          ErrorCode::PreconditionViolation, "trajectory arguments must be positive");
    const SinusoidProfile profile{cycles, period, amplitude};
    const auto n = static_cast<std::size_t>(std::llround(profile.duration() * rate)) + 1;
    Trajectory traj;
    traj.sample_times.resize(n);
    traj.joint_angles.assign(1, std::vector<double>(n));
    for (std::size_t i = 0; i < n; ++i) {
        const double t = static_cast<double>(i) / rate;
        traj.sample_times[i] = t;
        traj.joint_angles[0][i] = profile.angle_at(t);
    }
    return traj;
}

/// Load/unload presses at a constant indenter feed rate, separated by no-contact dwells.
///
/// Layout in time: dwell, press(order[0]), dwell, press(order[1]), ..., dwell.
/// Each press ramps force linearly up to `peak_force` and back to zero.
class IndentationProfile {
public:
    IndentationProfile(std::vector<int> order, double peak_force, double feed_rate,
                       const TactileParams& params, double dwell = 2.0)
        : order_(std::move(order)), peak_(peak_force), dwell_(dwell), params_(params)
    {
        check(peak_force > 0.0, ErrorCode::PreconditionViolation,
              "peak_force must be > 0");
        check(feed_rate > 0.0, ErrorCode::PreconditionViolation,
              "feed_rate must be > 0");
        check(dwell >= 0.0, ErrorCode::PreconditionViolation, "dwell must be >= 0");
        for (int loc : order_) {
            check(loc >= 1 && loc <= 4, ErrorCode::PreconditionViolation,
                  "press locations must be in 1..4");
        }
        ramp_ = peak_force / (feed_rate * params.axial_stiffness);
    }

    double ramp_duration() const { return ramp_; }
    double press_duration() const { return 2.0 * ramp_; }
    double duration() const
    {
        return dwell_ * static_cast<double>(order_.size() + 1) +
               press_duration() * static_cast<double>(order_.size());
    }

    ContactEvent event_at(double t) const
    {
        const double cycle = dwell_ + press_duration();
        if (t < 0.0 || order_.empty()) {
            return {};
        }
        const auto k = static_cast<std::size_t>(std::floor(t / cycle));
        if (k >= order_.size()) {
            return {};
        }
        const double local = t - static_cast<double>(k) * cycle - dwell_;
        if (local <= 0.0 || local >= press_duration()) {
            return {};
        }
        const double force =
            local <= ramp_ ? peak_ * local / ramp_ : peak_ * (press_duration() - local) / ramp_;
        if (force <= 0.0) {
            return {};
        }
        const int loc = order_[k];
        return ContactEvent{loc, force, params_.location_point(loc)};
    }

    const std::vector<int>& order() const { return order_; }

private:
    std::vector<int> order_;
    double peak_;
    double dwell_;
    double ramp_ = 0.0;
    TactileParams params_;
};

inline Trajectory indentation_trajectory(const std::vector<int>& order, double peak_force,
                                         double feed_rate, const TactileParams& params,
                                         double rate = 1000.0, double dwell = 2.0)
{
    check(rate > 0.0, ErrorCode::PreconditionViolation, "rate must be > 0");
    const IndentationProfile profile(order, peak_force, feed_rate, params, dwell);
    const auto n = static_cast<std::size_t>(std::floor(profile.duration() * rate)) + 1;
    Trajectory traj;
    traj.sample_times.resize(n);
    traj.contacts.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double t = static_cast<double>(i) / rate;
        traj.sample_times[i] = t;
        traj.contacts[i] = profile.event_at(t);
    }
    return traj;
}

} // namespace sipo::world

#endif // SIPO_WORLD_HPP
