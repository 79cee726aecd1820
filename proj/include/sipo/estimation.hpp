#ifndef SIPO_ESTIMATION_HPP
#define SIPO_ESTIMATION_HPP

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "sipo/error.hpp"
#include "sipo/readout.hpp"

namespace sipo::estimation {

enum class ChannelKind { Joint, Hall };

inline const char* to_string(ChannelKind k) { return k == ChannelKind::Joint ? "joint" : "hall"; }

struct ChannelInfo {
    std::string label;
    ChannelKind kind = ChannelKind::Joint;

    bool operator==(const ChannelInfo&) const = default;
};

/// Slot index -> channel. One entry per slot of the scan plan, in slot order.
struct ChannelLayout {
    std::vector<ChannelInfo> channels;

    std::size_t size() const noexcept { return channels.size(); }

    std::optional<std::size_t> index_of(const std::string& label) const
    {
        for (std::size_t i = 0; i < channels.size(); ++i) {
            if (channels[i].label == label) {
                return i;
            }
        }
        return std::nullopt;
    }

    /// Layout matching `plan`'s slots. `kind_of(label)` classifies each channel.
    template <typename KindOf>
    static ChannelLayout from_plan(const readout::ScanPlan& plan, KindOf&& kind_of)
    {
        ChannelLayout layout;
        for (const auto& s : plan.slots) {
            layout.channels.push_back({s.channel_label, kind_of(s.channel_label)});
        }
        return layout;
    }
};

/// ADC counts -> volts, in layout order.
inline std::vector<double> demux(const readout::SampleFrame& frame, const ChannelLayout& layout,
                                 double vdd, int adc_bits)
{
    if (frame.samples.size() != layout.size()) {
        throw Error(ErrorCode::LayoutMismatch,
                    "frame has " + std::to_string(frame.samples.size()) + " samples, layout has " +
                        std::to_string(layout.size()) + " channels");
    }
    const double lsb = vdd / static_cast<double>(readout::adc_full_scale(adc_bits));
    std::vector<double> volts(frame.samples.size());
    for (std::size_t i = 0; i < volts.size(); ++i) {
        volts[i] = frame.samples[i] * lsb;
    }
    return volts;
}

struct ChannelSeries {
    std::string label;
    std::vector<double> times;
    std::vector<double> values;
    std::optional<double> zero_reference;

    void validate() const
    {
        check(times.size() == values.size(), ErrorCode::ShapeMismatch,
              "series times/values length differ");
        for (std::size_t i = 1; i < times.size(); ++i) {
            check(times[i] > times[i - 1], ErrorCode::PreconditionViolation,
                  "series times must be strictly increasing");
        }
    }
};

/// Subtract the zero reference; when none was captured, the first sample is used.
inline ChannelSeries to_delta(ChannelSeries series)
{
    if (!series.zero_reference) {
        check(!series.values.empty(), ErrorCode::PreconditionViolation,
              "cannot zero an empty series");
        series.zero_reference = series.values.front();
    }
    const double z = *series.zero_reference;
    for (auto& v : series.values) {
        v -= z;
    }
    return series;
}

/// Datasheet angle-to-voltage slope a_ref = vdd / 360 (V/deg).
inline double reference_slope(double vdd) { return vdd / 360.0; }

inline double angle_from_voltage(double delta_v, double vdd) { return delta_v * 360.0 / vdd; }

/// Least-squares slope of y on x with the intercept pinned at zero.
inline double fit_slope_through_origin(std::span<const double> x, std::span<const double> y)
{
    check(x.size() == y.size(), ErrorCode::ShapeMismatch, "x and y lengths differ");
    check(x.size() >= 2, ErrorCode::PreconditionViolation, "need at least 2 points");
    double sxy = 0.0;
    double sxx = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sxy += x[i] * y[i];
        sxx += x[i] * x[i];
    }
    if (sxx == 0.0) {
        throw Error(ErrorCode::DegenerateInput, "sum of x^2 is zero");
    }
    return sxy / sxx;
}

inline double ape_slope(double a_fit, double a_ref)
{
    return std::abs(a_fit - a_ref) / a_ref * 100.0;
}

inline double relative_scale_error(double a, double a_ref) { return (a - a_ref) / a_ref; }

struct ErrorStats {
    std::vector<double> e; // deg
    double rmse = 0.0;
    double std_error = 0.0; // population
    double mean = 0.0;
};

/// Per-sample angle error using the reference slope, and its RMSE / population std.
inline ErrorStats estimation_errors(std::span<const double> delta_v,
                                    std::span<const double> delta_theta_true, double vdd)
{
    check(delta_v.size() == delta_theta_true.size(), ErrorCode::ShapeMismatch,
          "delta_v and delta_theta_true lengths differ");
    check(delta_v.size() >= 2, ErrorCode::PreconditionViolation,
          "need at least 2 samples");
    const double a_ref = reference_slope(vdd);
    ErrorStats s;
    s.e.resize(delta_v.size());
    double sum = 0.0;
    double sq = 0.0;
    for (std::size_t i = 0; i < delta_v.size(); ++i) {
        s.e[i] = delta_v[i] / a_ref - delta_theta_true[i];
        sum += s.e[i];
        sq += s.e[i] * s.e[i];
    }
    const auto n = static_cast<double>(delta_v.size());
    s.mean = sum / n;
    s.rmse = std::sqrt(sq / n);
    double var = 0.0;
    for (double e : s.e) {
        var += (e - s.mean) * (e - s.mean);
    }
    s.std_error = std::sqrt(var / n);
    return s;
}

/// Linear interpolation of `source` at `target_times`. No extrapolation.
inline ChannelSeries align(const ChannelSeries& source, std::span<const double> target_times)
{
    check(source.times.size() >= 2 && source.values.size() == source.times.size(),
          ErrorCode::PreconditionViolation, "source needs at least 2 samples");
    const double lo = source.times.front();
    const double hi = source.times.back();
    ChannelSeries out;
    out.label = source.label;
    out.zero_reference = std::nullopt;
    out.times.assign(target_times.begin(), target_times.end());
    out.values.resize(target_times.size());
    const auto& ts = source.times;
    for (std::size_t i = 0; i < target_times.size(); ++i) {
        const double t = target_times[i];
        if (!(t >= lo && t <= hi)) {
            throw Error(ErrorCode::OutOfRange,
                        "target time " + std::to_string(t) + " outside [" + std::to_string(lo) +
                            ", " + std::to_string(hi) + "]");
        }
        auto k = static_cast<std::size_t>(std::upper_bound(ts.begin(), ts.end(), t) - ts.begin());
        k = std::clamp<std::size_t>(k, 1, ts.size() - 1) - 1;
        if (t == ts[k]) {
            out.values[i] = source.values[k];
        } else if (t == ts[k + 1]) {
            out.values[i] = source.values[k + 1];
        } else {
            const double w = (t - ts[k]) / (ts[k + 1] - ts[k]);
            out.values[i] = source.values[k] + w * (source.values[k + 1] - source.values[k]);
        }
    }
    return out;
}

/// Mean and sample (n-1) standard deviation of one metric across trials.
struct Aggregate {
    double mean = 0.0;
    std::optional<double> sample_std; // empty with a single trial

    bool overlaps(const Aggregate& other, double k) const
    {
        const double s1 = sample_std.value_or(0.0);
        const double s2 = other.sample_std.value_or(0.0);
        return mean - k * s1 <= other.mean + k * s2 && other.mean - k * s2 <= mean + k * s1;
    }
};

inline Aggregate aggregate(std::span<const double> values)
{
    check(!values.empty(), ErrorCode::PreconditionViolation, "no values to aggregate");
    Aggregate a;
    const auto n = static_cast<double>(values.size());
    a.mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
    if (values.size() >= 2) {
        double ss = 0.0;
        for (double v : values) {
            ss += (v - a.mean) * (v - a.mean);
        }
        a.sample_std = std::sqrt(ss / (n - 1.0));
    }
    return a;
}

struct TrialMetrics {
    double ape_slope_percent = 0.0;
    double rmse_ref_deg = 0.0;
    double std_error_deg = 0.0;
    double mean_error_deg = 0.0;
    double a_fit = 0.0;
    std::size_t samples = 0;
};

struct MetricsReport {
    std::vector<TrialMetrics> trials;
    Aggregate ape_slope_percent;
    Aggregate rmse_ref_deg;
    Aggregate std_error_deg;

    static MetricsReport from_trials(std::vector<TrialMetrics> trials)
    {
        MetricsReport r;
        std::vector<double> ape, rmse, sd;
        for (const auto& t : trials) {
            ape.push_back(t.ape_slope_percent);
            rmse.push_back(t.rmse_ref_deg);
            sd.push_back(t.std_error_deg);
        }
        r.ape_slope_percent = aggregate(ape);
        r.rmse_ref_deg = aggregate(rmse);
        r.std_error_deg = aggregate(sd);
        r.trials = std::move(trials);
        return r;
    }
};

/// "0.065 (0.0095)" style: mean to 3 decimals, sample std to 4, or "n/a" for one trial.
inline std::string format_mean_std(const Aggregate& a)
{
    char buf[64];
    if (a.sample_std) {
        std::snprintf(buf, sizeof buf, "%.3f (%.4f)", a.mean, *a.sample_std);
    } else {
        std::snprintf(buf, sizeof buf, "%.3f (n/a)", a.mean);
    }
    return buf;
}

/// Flat key = value report, one metric group per block.
inline std::string format_report(const MetricsReport& r)
{
    auto num = [](double v) {
        char buf[48];
        std::snprintf(buf, sizeof buf, "%.6f", v);
        return std::string(buf);
    };
    auto std_or_na = [&](const Aggregate& a) {
        return a.sample_std ? num(*a.sample_std) : std::string("n/a");
    };
    std::string s;
    s += "trials = " + std::to_string(r.trials.size()) + "\n";
    s += "APE_slope_pct = " + format_mean_std(r.ape_slope_percent) + "\n";
    s += "RMSE_ref_deg = " + format_mean_std(r.rmse_ref_deg) + "\n";
    s += "STD_error_deg = " + format_mean_std(r.std_error_deg) + "\n";
    s += "APE_slope_pct.mean = " + num(r.ape_slope_percent.mean) + "\n";
    s += "APE_slope_pct.sample_std = " + std_or_na(r.ape_slope_percent) + "\n";
    s += "RMSE_ref_deg.mean = " + num(r.rmse_ref_deg.mean) + "\n";
    s += "RMSE_ref_deg.sample_std = " + std_or_na(r.rmse_ref_deg) + "\n";
    s += "STD_error_deg.mean = " + num(r.std_error_deg.mean) + "\n";
    s += "STD_error_deg.sample_std = " + std_or_na(r.std_error_deg) + "\n";
    return s;
}

/// Characterisation metrics for one trial: `delta_theta` is the zeroed ground truth, `delta_v` the
/// zeroed, aligned sensor output at the same instants.
inline TrialMetrics joint_metrics(std::span<const double> delta_theta,
                                  std::span<const double> delta_v, double vdd)
{
    TrialMetrics m;
    m.a_fit = fit_slope_through_origin(delta_theta, delta_v);
    m.ape_slope_percent = ape_slope(m.a_fit, reference_slope(vdd));
    const auto s = estimation_errors(delta_v, delta_theta, vdd);
    m.rmse_ref_deg = s.rmse;
    m.std_error_deg = s.std_error;
    m.mean_error_deg = s.mean;
    m.samples = delta_v.size();
    return m;
}

} // namespace sipo::estimation

#endif // SIPO_ESTIMATION_HPP
