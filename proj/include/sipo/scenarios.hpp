#ifndef SIPO_SCENARIOS_HPP
#define SIPO_SCENARIOS_HPP

// Experiment presets and the end-to-end pipelines that run them:
// sensor world -> readout -> wire frames -> decoder -> demux -> metrics / datasets.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "sipo/error.hpp"
#include "sipo/estimation.hpp"
#include "sipo/lstm.hpp"
#include "sipo/protocol.hpp"
#include "sipo/readout.hpp"
#include "sipo/world.hpp"

namespace sipo::scenarios {

using estimation::ChannelKind;
using nlohmann::json;

struct ChannelSpec {
    std::string label;
    ChannelKind kind = ChannelKind::Joint;

    bool operator==(const ChannelSpec&) const = default;
};

struct WorldConfig {
    world::JointSensorParams joint;
    world::TactileParams tactile;
    std::vector<ChannelSpec> channels; // hall channels listed in sensor order 0..3

    bool operator==(const WorldConfig&) const = default;
};

struct TrajectorySpec {
    std::string kind = "joint_sinusoid"; // joint_sinusoid | indentation
    // joint_sinusoid
    int cycles = 5;
    double period = 20.0;
    double amplitude = 70.0;
    std::string moving_unit = "middle_j3";
    // indentation
    std::vector<int> order{1, 2, 3, 4};
    double peak_force = 4.0;
    double feed_rate = 0.3;
    double dwell = 2.0;
    // ground-truth sampling rate
    double rate = 1000.0;
    // Relative rate error of the ground-truth logger's clock against the readout clock.
    // The two are not synchronised, so logger ticks drift through the scan phase.
    double gt_clock_skew = 1e-3;

    bool operator==(const TrajectorySpec&) const = default;
};

/// Number of indentation sequences per split; test sequences use seeded random press orders.
struct SplitSpec {
    int train = 6;
    int val = 2;
    int test = 2;
    bool randomize_test = true;

    bool operator==(const SplitSpec&) const = default;
};

/// Optimiser settings for the tactile models. Defaults are desk-scale: each epoch draws a
/// fresh random subset of training windows and scores a fixed evenly spaced validation subset.
struct TrainingSpec {
    double learning_rate = 1e-3;
    std::size_t batch_size = 64;
    std::size_t max_epochs = 100;
    std::size_t patience = 20;
    std::size_t windows_per_epoch = 2048; // 0 = every window
    std::size_t val_windows = 2048;       // 0 = every window

    lstm::TrainConfig train_config(std::uint64_t seed) const
    {
        lstm::TrainConfig t;
        t.learning_rate = learning_rate;
        t.batch_size = batch_size;
        t.max_epochs = max_epochs;
        t.patience = patience;
        t.windows_per_epoch = windows_per_epoch;
        t.val_windows = val_windows;
        t.seed = seed;
        return t;
    }

    bool operator==(const TrainingSpec&) const = default;
};

struct OutputsSpec {
    std::string dir = "out";

    bool operator==(const OutputsSpec&) const = default;
};

struct ScenarioConfig {
    std::string name;
    readout::ReadoutConfig readout;
    WorldConfig world;
    TrajectorySpec trajectory;
    double scan_rate = 1000.0;
    int trials = 5;
    std::uint64_t seed = 1;
    SplitSpec split;
    TrainingSpec training;
    OutputsSpec outputs;

    ChannelKind kind_of(const std::string& label) const
    {
        for (const auto& c : world.channels) {
            if (c.label == label) {
                return c.kind;
            }
        }
        throw Error(ErrorCode::InvalidConfig, "channel '" + label + "' missing from world.channels");
    }

    std::vector<std::string> hall_labels() const
    {
        std::vector<std::string> out;
        for (const auto& c : world.channels) {
            if (c.kind == ChannelKind::Hall) {
                out.push_back(c.label);
            }
        }
        return out;
    }

    void validate() const
    {
        readout.validate();
        world.joint.validate();
        world.tactile.validate();
        check(trials >= 1, ErrorCode::InvalidConfig, "trials must be >= 1");
        check(scan_rate > 0.0, ErrorCode::InvalidConfig, "scan_rate must be > 0");
        std::set<std::string> world_labels;
        for (const auto& c : world.channels) {
            check(world_labels.insert(c.label).second, ErrorCode::InvalidConfig,
                  "duplicate world channel '" + c.label + "'");
        }
        for (const auto& l : readout.channel_labels()) {
            check(world_labels.count(l) == 1, ErrorCode::InvalidConfig,
                  "readout unit '" + l + "' has no world.channels entry");
        }
        const auto halls = hall_labels();
        check(halls.empty() || halls.size() == 4, ErrorCode::InvalidConfig,
              "a tactile module has exactly 4 hall channels");
        check(trajectory.kind == "joint_sinusoid" || trajectory.kind == "indentation",
              ErrorCode::InvalidConfig, "trajectory.kind must be joint_sinusoid or indentation");
        check(trajectory.rate > 0.0, ErrorCode::InvalidConfig, "trajectory.rate must be > 0");
        check(std::abs(trajectory.gt_clock_skew) < 0.01, ErrorCode::InvalidConfig,
              "trajectory.gt_clock_skew must be within +-0.01");
        check(split.train >= 1 && split.val >= 1 && split.test >= 1, ErrorCode::InvalidConfig,
              "each split needs at least one sequence");
        training.train_config(seed).validate();
    }

    bool operator==(const ScenarioConfig&) const = default;
};

// ---------------------------------------------------------------------------
// Presets

namespace detail {

inline std::vector<std::string> labels(const std::string& prefix, int n)
{
    std::vector<std::string> out;
    for (int i = 1; i <= n; ++i) {
        out.push_back(prefix + std::to_string(i));
    }
    return out;
}

inline void add_channels(WorldConfig& w, const std::vector<std::string>& ls, ChannelKind kind)
{
    for (const auto& l : ls) {
        w.channels.push_back({l, kind});
    }
}

} // namespace detail

inline const std::vector<std::string>& preset_names()
{
    static const std::vector<std::string> names{"full_hand", "middle_finger_only", "tactile_bench"};
    return names;
}

/// full_hand: 5 finger chains, 16 joints + 4 Hall units. middle_finger_only: the 3 middle-finger
/// joints. tactile_bench: the 4-channel tactile module alone on an indentation protocol.
inline ScenarioConfig preset(const std::string& name)
{
    using detail::add_channels;
    using detail::labels;
    ScenarioConfig cfg;
    cfg.name = name;
    // The characterised joint sits mid-range so the +-70 deg sweep never crosses the 0/360 wrap.
    cfg.world.joint.offset_angle = 180.0;
    if (name == "full_hand") {
        const auto thumb = labels("thumb_j", 4);
        auto index = labels("index_j", 3);
        const auto hall = labels("index_h", 4);
        index.insert(index.end(), hall.begin(), hall.end());
        const auto middle = labels("middle_j", 3);
        const auto ring = labels("ring_j", 3);
        const auto pinky = labels("pinky_j", 3);
        cfg.readout.chains = {{0, thumb}, {1, index}, {2, middle}, {3, ring}, {4, pinky}};
        add_channels(cfg.world, thumb, ChannelKind::Joint);
        add_channels(cfg.world, labels("index_j", 3), ChannelKind::Joint);
        add_channels(cfg.world, hall, ChannelKind::Hall);
        add_channels(cfg.world, middle, ChannelKind::Joint);
        add_channels(cfg.world, ring, ChannelKind::Joint);
        add_channels(cfg.world, pinky, ChannelKind::Joint);
    } else if (name == "middle_finger_only") {
        const auto middle = labels("middle_j", 3);
        cfg.readout.chains = {{2, middle}};
        add_channels(cfg.world, middle, ChannelKind::Joint);
    } else if (name == "tactile_bench") {
        const auto hall = labels("index_h", 4);
        cfg.readout.chains = {{1, hall}};
        add_channels(cfg.world, hall, ChannelKind::Hall);
        cfg.trajectory.kind = "indentation";
        cfg.trajectory.moving_unit.clear();
    } else {
        throw Error(ErrorCode::UnknownPreset, "unknown preset '" + name + "'");
    }
    return cfg;
}

// ---------------------------------------------------------------------------
// JSON schema. Keys mirror the struct field names; unknown keys are rejected.

namespace detail {

/// Walks a JSON object, remembering the key path for error messages.
class Reader {
public:
    Reader(const json& j, std::string path) : j_(j), path_(std::move(path))
    {
        if (!j_.is_object()) {
            fail("expected an object");
        }
    }

    [[noreturn]] void fail(const std::string& msg) const
    {
        throw Error(ErrorCode::InvalidConfig, "key '" + (path_.empty() ? "/" : path_) + "': " + msg);
    }

    template <typename T>
    void get(const char* key, T& out)
    {
        seen_.insert(key);
        auto it = j_.find(key);
        if (it == j_.end()) {
            return; // defaults stay
        }
        try {
            out = it->template get<T>();
        } catch (const json::exception&) {
            throw Error(ErrorCode::InvalidConfig,
                        "key '" + path_ + "/" + key + "': wrong type (" + it->type_name() + ")");
        }
    }

    std::optional<Reader> child(const char* key)
    {
        seen_.insert(key);
        auto it = j_.find(key);
        if (it == j_.end()) {
            return std::nullopt;
        }
        return Reader(*it, path_ + "/" + key);
    }

    const json* raw(const char* key)
    {
        seen_.insert(key);
        auto it = j_.find(key);
        return it == j_.end() ? nullptr : &*it;
    }

    const std::string& path() const { return path_; }

    void finish() const
    {
        for (auto it = j_.begin(); it != j_.end(); ++it) {
            if (!seen_.count(it.key())) {
                throw Error(ErrorCode::InvalidConfig, "key '" + path_ + "/" + it.key() + "': unknown key");
            }
        }
    }

private:
    const json& j_;
    std::string path_;
    std::set<std::string> seen_;
};

} // namespace detail

inline json to_json(const ScenarioConfig& c)
{
    json chains = json::array();
    for (const auto& ch : c.readout.chains) {
        chains.push_back({{"chain_id", ch.chain_id}, {"unit_labels", ch.unit_labels}});
    }
    json channels = json::array();
    for (const auto& ch : c.world.channels) {
        channels.push_back({{"label", ch.label}, {"kind", estimation::to_string(ch.kind)}});
    }
    const auto& t = c.world.tactile;
    json positions = json::array();
    for (const auto& p : t.sensor_positions) {
        positions.push_back({p.x, p.y});
    }
    const auto& jp = c.world.joint;
    return json{
        {"name", c.name},
        {"readout",
         {{"chains", chains},
          {"vdd", c.readout.vdd},
          {"adc_bits", c.readout.adc_bits},
          {"adc_slot_budget", c.readout.adc_slot_budget},
          {"sample_phase", c.readout.sample_phase}}},
        {"world",
         {{"joint",
           {{"vdd", jp.vdd},
            {"offset_angle", jp.offset_angle},
            {"noise_sigma", jp.noise_sigma},
            {"seed", jp.seed},
            {"slope_scale", jp.slope_scale}}},
          {"tactile",
           {{"sensor_positions", positions},
            {"contact_radius", t.contact_radius},
            {"magnet_rest_height", t.magnet_rest_height},
            {"min_magnet_height", t.min_magnet_height},
            {"magnet_moment", t.magnet_moment},
            {"axial_stiffness", t.axial_stiffness},
            {"lateral_compliance", t.lateral_compliance},
            {"quiescent_voltage", t.quiescent_voltage},
            {"sensitivity", t.sensitivity},
            {"vdd", t.vdd},
            {"noise_sigma", t.noise_sigma},
            {"seed", t.seed}}},
          {"channels", channels}}},
        {"trajectory",
         {{"kind", c.trajectory.kind},
          {"cycles", c.trajectory.cycles},
          {"period", c.trajectory.period},
          {"amplitude", c.trajectory.amplitude},
          {"moving_unit", c.trajectory.moving_unit},
          {"order", c.trajectory.order},
          {"peak_force", c.trajectory.peak_force},
          {"feed_rate", c.trajectory.feed_rate},
          {"dwell", c.trajectory.dwell},
          {"rate", c.trajectory.rate},
          {"gt_clock_skew", c.trajectory.gt_clock_skew}}},
        {"scan_rate", c.scan_rate},
        {"trials", c.trials},
        {"seed", c.seed},
        {"split",
         {{"train", c.split.train},
          {"val", c.split.val},
          {"test", c.split.test},
          {"randomize_test", c.split.randomize_test}}},
        {"training",
         {{"learning_rate", c.training.learning_rate},
          {"batch_size", c.training.batch_size},
          {"max_epochs", c.training.max_epochs},
          {"patience", c.training.patience},
          {"windows_per_epoch", c.training.windows_per_epoch},
          {"val_windows", c.training.val_windows}}},
        {"outputs", {{"dir", c.outputs.dir}}},
    };
}

/// Parse a config. A `"preset"` key seeds the defaults from that preset before applying overrides.
inline ScenarioConfig from_json(const json& j)
{
    detail::Reader r(j, "");
    ScenarioConfig c;
    if (const json* p = r.raw("preset")) {
        if (!p->is_string()) {
            r.fail("'preset' must be a string");
        }
        c = preset(p->get<std::string>());
    }
    r.get("name", c.name);
    if (auto ro = r.child("readout")) {
        if (const json* chains = ro->raw("chains")) {
            if (!chains->is_array()) {
                ro->fail("'chains' must be an array");
            }
            c.readout.chains.clear();
            for (std::size_t i = 0; i < chains->size(); ++i) {
                detail::Reader cr((*chains)[i], ro->path() + "/chains/" + std::to_string(i));
                readout::ChainConfig ch;
                cr.get("chain_id", ch.chain_id);
                cr.get("unit_labels", ch.unit_labels);
                cr.finish();
                c.readout.chains.push_back(ch);
            }
        }
        ro->get("vdd", c.readout.vdd);
        ro->get("adc_bits", c.readout.adc_bits);
        ro->get("adc_slot_budget", c.readout.adc_slot_budget);
        ro->get("sample_phase", c.readout.sample_phase);
        ro->finish();
    }
    if (auto w = r.child("world")) {
        if (auto jr = w->child("joint")) {
            auto& jp = c.world.joint;
            jr->get("vdd", jp.vdd);
            jr->get("offset_angle", jp.offset_angle);
            jr->get("noise_sigma", jp.noise_sigma);
            jr->get("seed", jp.seed);
            jr->get("slope_scale", jp.slope_scale);
            jr->finish();
        }
        if (auto tr = w->child("tactile")) {
            auto& t = c.world.tactile;
            if (const json* pos = tr->raw("sensor_positions")) {
                std::vector<std::array<double, 2>> pts;
                try {
                    pts = pos->get<std::vector<std::array<double, 2>>>();
                } catch (const json::exception&) {
                    tr->fail("'sensor_positions' must be four [x, y] pairs");
                }
                if (pts.size() != 4) {
                    tr->fail("'sensor_positions' must have exactly 4 entries");
                }
                for (std::size_t k = 0; k < 4; ++k) {
                    t.sensor_positions[k] = {pts[k][0], pts[k][1]};
                }
            }
            tr->get("contact_radius", t.contact_radius);
            tr->get("magnet_rest_height", t.magnet_rest_height);
            tr->get("min_magnet_height", t.min_magnet_height);
            tr->get("magnet_moment", t.magnet_moment);
            tr->get("axial_stiffness", t.axial_stiffness);
            tr->get("lateral_compliance", t.lateral_compliance);
            tr->get("quiescent_voltage", t.quiescent_voltage);
            tr->get("sensitivity", t.sensitivity);
            tr->get("vdd", t.vdd);
            tr->get("noise_sigma", t.noise_sigma);
            tr->get("seed", t.seed);
            tr->finish();
        }
        if (const json* chans = w->raw("channels")) {
            if (!chans->is_array()) {
                w->fail("'channels' must be an array");
            }
            c.world.channels.clear();
            for (std::size_t i = 0; i < chans->size(); ++i) {
                detail::Reader cr((*chans)[i], w->path() + "/channels/" + std::to_string(i));
                ChannelSpec spec;
                std::string kind = "joint";
                cr.get("label", spec.label);
                cr.get("kind", kind);
                cr.finish();
                if (kind == "joint") {
                    spec.kind = ChannelKind::Joint;
                } else if (kind == "hall") {
                    spec.kind = ChannelKind::Hall;
                } else {
                    cr.fail("kind must be 'joint' or 'hall'");
                }
                c.world.channels.push_back(spec);
            }
        }
        w->finish();
    }
    if (auto t = r.child("trajectory")) {
        auto& tj = c.trajectory;
        t->get("kind", tj.kind);
        t->get("cycles", tj.cycles);
        t->get("period", tj.period);
        t->get("amplitude", tj.amplitude);
        t->get("moving_unit", tj.moving_unit);
        t->get("order", tj.order);
        t->get("peak_force", tj.peak_force);
        t->get("feed_rate", tj.feed_rate);
        t->get("dwell", tj.dwell);
        t->get("rate", tj.rate);
        t->get("gt_clock_skew", tj.gt_clock_skew);
        t->finish();
    }
    r.get("scan_rate", c.scan_rate);
    r.get("trials", c.trials);
    r.get("seed", c.seed);
    if (auto s = r.child("split")) {
        s->get("train", c.split.train);
        s->get("val", c.split.val);
        s->get("test", c.split.test);
        s->get("randomize_test", c.split.randomize_test);
        s->finish();
    }
    if (auto t = r.child("training")) {
        t->get("learning_rate", c.training.learning_rate);
        t->get("batch_size", c.training.batch_size);
        t->get("max_epochs", c.training.max_epochs);
        t->get("patience", c.training.patience);
        t->get("windows_per_epoch", c.training.windows_per_epoch);
        t->get("val_windows", c.training.val_windows);
        t->finish();
    }
    if (auto o = r.child("outputs")) {
        o->get("dir", c.outputs.dir);
        o->finish();
    }
    r.finish();
    c.validate();
    return c;
}

/// Parse config text; syntax errors report line and column.
inline ScenarioConfig parse_config(const std::string& text)
{
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        std::size_t line = 1, col = 1;
        for (std::size_t i = 0; i + 1 < e.byte && i < text.size(); ++i) {
            if (text[i] == '\n') {
                ++line;
                col = 1;
            } else {
                ++col;
            }
        }
        throw Error(ErrorCode::InvalidConfig, "line " + std::to_string(line) + ", column " +
                                                  std::to_string(col) + ": " + e.what());
    }
    return from_json(j);
}

// ---------------------------------------------------------------------------
// World-to-voltage source for one trial

/// Per-channel analog voltages as a function of time for one seeded trial.
class WorldSource {
public:
    struct Channel {
        ChannelKind kind = ChannelKind::Joint;
        world::JointSensorParams joint;
        bool moving = false;
        int hall_index = -1;
    };

    WorldSource(const ScenarioConfig& cfg, std::uint64_t trial_seed,
                std::optional<world::IndentationProfile> indentation = std::nullopt)
        : tactile_(cfg.world.tactile),
          profile_{cfg.trajectory.cycles, cfg.trajectory.period, cfg.trajectory.amplitude},
          indentation_(std::move(indentation))
    {
        const auto labels = cfg.readout.channel_labels();
        const auto halls = cfg.hall_labels();
        std::mt19937_64 offsets_rng(world::mix_seed(trial_seed, 7));
        std::uniform_real_distribution<double> offset(0.0, 360.0);
        for (std::size_t i = 0; i < labels.size(); ++i) {
            Channel ch;
            ch.kind = cfg.kind_of(labels[i]);
            ch.joint = cfg.world.joint;
            if (ch.kind == ChannelKind::Joint) {
                ch.moving = cfg.trajectory.kind == "joint_sinusoid" &&
                            labels[i] == cfg.trajectory.moving_unit;
                if (!ch.moving) {
                    // Idle joints: magnets at arbitrary fixed orientations, nominal sensitivity.
                    ch.joint.offset_angle = offset(offsets_rng);
                    ch.joint.slope_scale = 1.0;
                }
            } else {
                ch.hall_index = static_cast<int>(
                    std::find(halls.begin(), halls.end(), labels[i]) - halls.begin());
            }
            channels_.push_back(ch);
            noise_.emplace_back(world::mix_seed(trial_seed ^ cfg.world.joint.seed ^
                                                    (cfg.world.tactile.seed << 1),
                                                1000 + i));
        }
    }

    /// Ground-truth angle of the moving joint (0 for idle joints).
    double joint_angle(double t) const { return profile_.angle_at(t); }

    world::ContactEvent contact(double t) const
    {
        return indentation_ ? indentation_->event_at(t) : world::ContactEvent{};
    }

    double operator()(double t, std::size_t ch)
    {
        const auto& c = channels_[ch];
        const double draw = noise_[ch]();
        if (c.kind == ChannelKind::Joint) {
            return world::joint_sensor_voltage(c.moving ? joint_angle(t) : 0.0, c.joint, draw);
        }
        if (!(cached_t_ && *cached_t_ == t)) {
            cached_fields_ = tactile_noiseless(contact(t));
            cached_t_ = t;
        }
        const auto k = static_cast<std::size_t>(c.hall_index);
        return std::clamp(cached_fields_[k] + tactile_.noise_sigma * draw, 0.0, tactile_.vdd);
    }

    const std::vector<Channel>& channels() const { return channels_; }

private:
    std::array<double, 4> tactile_noiseless(const world::ContactEvent& e)
    {
        if (!rest_) {
            rest_ = world::hall_fields(world::ContactEvent{}, tactile_);
        }
        const auto b = world::hall_fields(e, tactile_);
        std::array<double, 4> v{};
        for (std::size_t k = 0; k < 4; ++k) {
            v[k] = tactile_.quiescent_voltage + tactile_.sensitivity * (b[k] - (*rest_)[k]);
        }
        return v;
    }

    world::TactileParams tactile_;
    world::SinusoidProfile profile_;
    std::optional<world::IndentationProfile> indentation_;
    std::vector<Channel> channels_;
    std::vector<world::GaussianStream> noise_;
    std::optional<double> cached_t_;
    std::array<double, 4> cached_fields_{};
    std::optional<std::array<double, 4>> rest_;
};

inline std::uint64_t trial_seed(std::uint64_t scenario_seed, std::uint64_t trial)
{
    return world::mix_seed(scenario_seed, trial);
}

// ---------------------------------------------------------------------------
// Acquisition: run the readout for a span of scans and push the frames over the wire codec.

struct Acquisition {
    std::vector<readout::SampleFrame> frames; // as decoded on the consumer side
    protocol::Diagnostics diagnostics;
    protocol::GapReport gaps;
    std::size_t wire_bytes = 0;
};

/// Simulate `scans` consecutive scans, encode them, and decode the byte stream in chunks.
template <readout::VoltageSource Source>
Acquisition acquire(const readout::ScanPlan& plan, Source& source, std::size_t scans,
                    std::size_t chunk = 4096)
{
    Acquisition acq;
    protocol::FrameDecoder decoder;
    std::vector<std::uint8_t> wire;
    acq.frames.reserve(scans);
    auto flush = [&](bool all) {
        std::size_t off = 0;
        while (wire.size() - off >= chunk || (all && off < wire.size())) {
            const auto n = std::min(chunk, wire.size() - off);
            decoder.feed(std::span<const std::uint8_t>(wire.data() + off, n), acq.frames);
            off += n;
        }
        wire.erase(wire.begin(), wire.begin() + static_cast<std::ptrdiff_t>(off));
    };
    for (std::size_t k = 0; k < scans; ++k) {
        const double start = static_cast<double>(k) / plan.scan_rate;
        const auto frame = readout::run_scan(plan, source, start, k);
        const auto before = wire.size();
        protocol::encode_frame_into(frame, wire);
        acq.wire_bytes += wire.size() - before;
        if (wire.size() >= 8 * chunk) {
            flush(false);
        }
    }
    flush(true);
    decoder.finish();
    acq.diagnostics = decoder.diagnostics();
    acq.gaps = protocol::sequence_gap_check(std::span<const readout::SampleFrame>(acq.frames));
    return acq;
}

inline void require_clean(const Acquisition& acq, std::size_t expected_frames)
{
    if (!acq.diagnostics.clean() || !acq.gaps.ok() || acq.frames.size() != expected_frames) {
        throw Error(ErrorCode::PreconditionViolation,
                    "wire link lost data: " + std::to_string(acq.frames.size()) + "/" +
                        std::to_string(expected_frames) + " frames, " +
                        std::to_string(acq.diagnostics.crc_failures) + " crc failures");
    }
}

// ---------------------------------------------------------------------------
// Joint characterisation

/// Consumer-side sample time of `slot` in a decoded frame.
inline double slot_time(const readout::ScanPlan& plan, const readout::SampleFrame& f,
                        std::size_t slot)
{
    return plan.sample_time(static_cast<double>(f.timestamp_us) * 1e-6, slot);
}

struct JointTrialData {
    std::vector<double> gt_times;
    std::vector<double> delta_theta; // zeroed ground truth
    std::vector<double> delta_v;     // zeroed, aligned sensor output
    estimation::TrialMetrics metrics;
};

/// One seeded trial of the sinusoidal sweep through the complete pipeline.
inline JointTrialData run_joint_trial(const ScenarioConfig& cfg, const std::string& moving_unit,
                                      int trial)
{
    ScenarioConfig c = cfg;
    c.trajectory.kind = "joint_sinusoid";
    c.trajectory.moving_unit = moving_unit;
    c.validate();
    check(c.kind_of(moving_unit) == ChannelKind::Joint, ErrorCode::InvalidConfig,
          "moving unit '" + moving_unit + "' is not a joint channel");
    const auto& tj = c.trajectory;
    const double lo = c.world.joint.offset_angle - tj.amplitude;
    const double hi = c.world.joint.offset_angle + tj.amplitude;
    check(lo > 0.0 && hi < 360.0, ErrorCode::InvalidConfig,
          "offset_angle +- amplitude must stay inside (0, 360) to avoid the output wrap");

    const auto plan = readout::build_scan_plan(c.readout, c.scan_rate);
    const auto layout = estimation::ChannelLayout::from_plan(
        plan, [&](const std::string& l) { return c.kind_of(l); });
    const auto slot = *layout.index_of(moving_unit);

    WorldSource source(c, trial_seed(c.seed, static_cast<std::uint64_t>(trial)));
    const world::SinusoidProfile profile{tj.cycles, tj.period, tj.amplitude};
    const auto scans = static_cast<std::size_t>(std::floor(profile.duration() * c.scan_rate)) + 1;
    const auto acq = acquire(plan, source, scans);
    require_clean(acq, scans);

    estimation::ChannelSeries measured;
    measured.label = moving_unit;
    measured.times.reserve(acq.frames.size());
    measured.values.reserve(acq.frames.size());
    for (const auto& f : acq.frames) {
        const auto volts = estimation::demux(f, layout, c.readout.vdd, c.readout.adc_bits);
        measured.times.push_back(slot_time(plan, f, slot));
        measured.values.push_back(volts[slot]);
    }

    // Logger ticks in readout time: seeded start phase, skewed period.
    std::mt19937_64 phase_rng(world::mix_seed(trial_seed(c.seed, static_cast<std::uint64_t>(trial)), 11));
    const double gt_period = 1.0 / (tj.rate * (1.0 + tj.gt_clock_skew));
    const double phase = std::uniform_real_distribution<double>(0.0, gt_period)(phase_rng);
    JointTrialData out;
    std::vector<double> theta;
    for (std::size_t k = 0;; ++k) {
        const double t = phase + static_cast<double>(k) * gt_period;
        if (t > measured.times.back() || t > profile.duration()) {
            break;
        }
        if (t >= measured.times.front()) {
            out.gt_times.push_back(t);
            theta.push_back(profile.angle_at(t));
        }
    }
    const auto aligned = estimation::align(measured, out.gt_times);
    estimation::ChannelSeries truth{moving_unit, out.gt_times, theta, std::nullopt};
    out.delta_theta = estimation::to_delta(truth).values;
    out.delta_v = estimation::to_delta(aligned).values;
    out.metrics = estimation::joint_metrics(out.delta_theta, out.delta_v, c.readout.vdd);
    return out;
}

/// `trials` independent trials aggregated into one report row.
inline estimation::MetricsReport run_joint_characterization(const ScenarioConfig& cfg,
                                                            const std::string& moving_unit)
{
    std::vector<estimation::TrialMetrics> trials;
    for (int k = 0; k < cfg.trials; ++k) {
        trials.push_back(run_joint_trial(cfg, moving_unit, k).metrics);
    }
    return estimation::MetricsReport::from_trials(std::move(trials));
}

// ---------------------------------------------------------------------------
// Tactile datasets

struct TactileSequence {
    std::string split; // train | val | test
    std::vector<int> order;
    lstm::StreamSegment segment; // raw volts (n x 4), force, labels, times
};

struct TactileStreams {
    std::vector<TactileSequence> train, val, test;
};

/// Press orders for the test split: seeded random permutations of (1, 2, 3, 4).
inline std::vector<std::vector<int>> test_orders(const ScenarioConfig& cfg, int count)
{
    std::mt19937_64 rng(world::mix_seed(cfg.seed, 77));
    std::vector<std::vector<int>> out;
    for (int s = 0; s < count; ++s) {
        std::vector<int> order = cfg.trajectory.order;
        if (cfg.split.randomize_test) {
            std::shuffle(order.begin(), order.end(), rng);
        }
        out.push_back(order);
    }
    return out;
}

/// One indentation sequence through the readout pipeline; ground truth at mid-scan.
inline lstm::StreamSegment acquire_tactile_sequence(const ScenarioConfig& cfg,
                                                    const std::vector<int>& order,
                                                    std::uint64_t seq_seed)
{
    const auto& tj = cfg.trajectory;
    world::IndentationProfile profile(order, tj.peak_force, tj.feed_rate, cfg.world.tactile, tj.dwell);
    const auto plan = readout::build_scan_plan(cfg.readout, cfg.scan_rate);
    const auto layout = estimation::ChannelLayout::from_plan(
        plan, [&](const std::string& l) { return cfg.kind_of(l); });
    const auto halls = cfg.hall_labels();
    check(halls.size() == 4, ErrorCode::InvalidConfig,
          "tactile scenario needs 4 hall channels");
    std::array<std::size_t, 4> slot_of{};
    for (std::size_t k = 0; k < 4; ++k) {
        slot_of[k] = *layout.index_of(halls[k]);
    }
    WorldSource source(cfg, seq_seed, profile);
    const auto scans = static_cast<std::size_t>(std::floor(profile.duration() * cfg.scan_rate)) + 1;
    const auto acq = acquire(plan, source, scans);
    require_clean(acq, scans);

    lstm::StreamSegment seg;
    seg.samples.reserve(scans * 4);
    for (const auto& f : acq.frames) {
        const auto volts = estimation::demux(f, layout, cfg.readout.vdd, cfg.readout.adc_bits);
        for (std::size_t k = 0; k < 4; ++k) {
            seg.samples.push_back(volts[slot_of[k]]);
        }
        const double t = static_cast<double>(f.timestamp_us) * 1e-6 + 0.5 / cfg.scan_rate;
        const auto ev = profile.event_at(t);
        seg.times.push_back(t);
        seg.force.push_back(ev.force);
        seg.labels.push_back(ev.location_class);
    }
    return seg;
}

/// Labelled 4-channel streams for the train/val/test splits.
inline TactileStreams generate_tactile_streams(const ScenarioConfig& cfg)
{
    cfg.validate();
    TactileStreams out;
    std::uint64_t s = 0;
    auto make = [&](const std::string& split, const std::vector<int>& order) {
        TactileSequence seq{split, order, acquire_tactile_sequence(cfg, order, world::mix_seed(cfg.seed, 100 + s))};
        ++s;
        return seq;
    };
    for (int i = 0; i < cfg.split.train; ++i) {
        out.train.push_back(make("train", cfg.trajectory.order));
    }
    for (int i = 0; i < cfg.split.val; ++i) {
        out.val.push_back(make("val", cfg.trajectory.order));
    }
    for (const auto& order : test_orders(cfg, cfg.split.test)) {
        out.test.push_back(make("test", order));
    }
    return out;
}

struct DatasetTriplet {
    lstm::WindowDataset train, val, test;
};

/// Windows for one model; normalisation fitted on the training split only.
inline DatasetTriplet make_datasets(const TactileStreams& streams, std::size_t sequence_length)
{
    auto segs = [](const std::vector<TactileSequence>& v) {
        std::vector<lstm::StreamSegment> out;
        for (const auto& s : v) {
            out.push_back(s.segment);
        }
        return out;
    };
    DatasetTriplet d;
    d.train = lstm::build_windows(segs(streams.train), sequence_length, 4);
    d.val = lstm::build_windows(segs(streams.val), sequence_length, 4, d.train.normalization());
    d.test = lstm::build_windows(segs(streams.test), sequence_length, 4, d.train.normalization());
    return d;
}

inline DatasetTriplet run_tactile_dataset(const ScenarioConfig& cfg, std::size_t sequence_length)
{
    return make_datasets(generate_tactile_streams(cfg), sequence_length);
}

// ---------------------------------------------------------------------------
// Tactile evaluation

struct TactileSummary {
    double rmse_all = 0.0;
    double rmse_above_005 = 0.0; // samples with true force > 0.05 N
    double accuracy = 0.0;
    double accuracy_excl_transitions = 0.0; // +-10 samples around label changes excluded
    std::size_t force_windows = 0;
    std::size_t contact_windows = 0;
};

struct TestRow {
    double time = 0.0;
    double f_true = 0.0;
    double f_est = 0.0;
    int class_true = 0;
    int class_est = 0;
};

struct TactileEvaluation {
    TactileSummary summary;
    std::vector<TestRow> rows; // samples covered by both models' windows
};

inline TactileEvaluation evaluate_tactile(const lstm::LstmModel& force_model,
                                          const lstm::WindowDataset& force_test,
                                          const lstm::LstmModel& contact_model,
                                          const lstm::WindowDataset& contact_test,
                                          std::size_t transition_margin = 10)
{
    TactileEvaluation ev;
    lstm::Workspace ws;
    // keyed by (segment, sample)
    std::map<std::pair<std::size_t, std::size_t>, double> f_est;
    double se = 0.0, se_hi = 0.0;
    std::size_t n_hi = 0;
    for (std::size_t i = 0; i < force_test.size(); ++i) {
        const auto p = lstm::predict(force_model, force_test.window(i), ws);
        const auto t = force_test.target(i);
        const double d = p.force - t.force;
        se += d * d;
        if (t.force > 0.05) {
            se_hi += d * d;
            ++n_hi;
        }
        f_est[force_test.position(i)] = p.force;
    }
    ev.summary.force_windows = force_test.size();
    ev.summary.rmse_all = std::sqrt(se / static_cast<double>(std::max<std::size_t>(force_test.size(), 1)));
    ev.summary.rmse_above_005 = n_hi ? std::sqrt(se_hi / static_cast<double>(n_hi)) : 0.0;

    std::size_t correct = 0, kept = 0, kept_correct = 0;
    for (std::size_t i = 0; i < contact_test.size(); ++i) {
        const auto p = lstm::predict(contact_model, contact_test.window(i), ws);
        const auto t = contact_test.target(i);
        const bool ok = p.label == t.label;
        correct += ok;
        const auto [seg, idx] = contact_test.position(i);
        const auto& labels = contact_test.segments()[seg].labels;
        const std::size_t lo = idx >= transition_margin ? idx - transition_margin : 0;
        const std::size_t hi = std::min(labels.size() - 1, idx + transition_margin);
        bool near = false;
        for (std::size_t k = lo + 1; k <= hi; ++k) {
            near = near || labels[k] != labels[k - 1];
        }
        if (!near) {
            ++kept;
            kept_correct += ok;
        }
        auto it = f_est.find({seg, idx});
        if (it != f_est.end()) {
            const auto& s = contact_test.segments()[seg];
            ev.rows.push_back({s.times[idx], s.force[idx], it->second, t.label, p.label});
        }
    }
    ev.summary.contact_windows = contact_test.size();
    ev.summary.accuracy = contact_test.size() ? static_cast<double>(correct) / static_cast<double>(contact_test.size()) : 0.0;
    ev.summary.accuracy_excl_transitions = kept ? static_cast<double>(kept_correct) / static_cast<double>(kept) : 0.0;
    return ev;
}

} // namespace sipo::scenarios

#endif // SIPO_SCENARIOS_HPP
