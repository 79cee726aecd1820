// sipo: command-line driver for the readout simulator, characterisation runs,
// LSTM training/inference and the wire codec.

#include <sipo/error.hpp>
#include <sipo/estimation.hpp>
#include <sipo/lstm.hpp>
#include <sipo/protocol.hpp>
#include <sipo/readout.hpp>
#include <sipo/scenarios.hpp>
#include <sipo/world.hpp>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <iterator>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#ifndef SIPO_VERSION
#define SIPO_VERSION "dev"
#endif

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace sipo;

namespace {

enum Exit : int {
    kOk = 0,
    kFailure = 1,
    kConfigError = 2,
    kBudgetExceeded = 3,
    kCorruptData = 4,
};

constexpr const char* kColumnsHelp = R"(Output files (CSV: header row, dot decimal, fixed column order):
  simulate              frames.bin        wire-frame stream
                        waveform.csv      time_s,slot,vout_V,clock,pulse_<chain_id>...
  characterize-joint    trials.csv        trial,ape_slope_pct,rmse_ref_deg,std_error_deg
                        report.txt        key = value, mean (sample std)
  characterize-tactile  streams.csv       split,sequence,time_s,h1,h2,h3,h4,force_N,label
                        <task>_history.csv epoch,train_loss,val_loss
                        test.csv          time_s,f_true_N,f_est_N,class_true,class_est
                        summary.txt       rmse_all,rmse_above_0.05N,accuracy,...
  train                 <task>.model, <task>_history.csv
  infer                 predictions.csv   sequence,timestamp_us,force_N
                                          sequence,timestamp_us,class,p0..p4
                        latency.txt
  codec                 CSV side: sequence,timestamp_us,s0,s1,...
Every output directory also gets manifest.json.

Default output directory: --out, else $SIPO_OUT_DIR, else outputs.dir of the config.
Exit codes: 0 ok, 1 failure, 2 config/usage error, 3 budget exceeded, 4 corrupt data.)";

// ---------------------------------------------------------------------------
// Small utilities

std::string num(double v)
{
    char buf[32];
    const auto r = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, r.ptr);
}

double parse_num(const std::string& s)
{
    double v = 0.0;
    const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
    check(r.ec == std::errc() && r.ptr == s.data() + s.size(), ErrorCode::InvalidConfig,
          "not a number: '" + s + "'");
    return v;
}

std::uint64_t parse_uint(const std::string& s)
{
    std::uint64_t v = 0;
    const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
    check(r.ec == std::errc() && r.ptr == s.data() + s.size(), ErrorCode::InvalidConfig,
          "not an unsigned integer: '" + s + "'");
    return v;
}

std::vector<std::string> split_csv(const std::string& line)
{
    std::vector<std::string> out;
    std::string cell;
    std::istringstream is(line);
    while (std::getline(is, cell, ',')) {
        if (!cell.empty() && cell.back() == '\r') {
            cell.pop_back();
        }
        out.push_back(cell);
    }
    if (!line.empty() && line.back() == ',') {
        out.emplace_back();
    }
    return out;
}

std::string read_text(const fs::path& p)
{
    std::ifstream is(p, std::ios::binary);
    check(static_cast<bool>(is), ErrorCode::InvalidConfig, "cannot read " + p.string());
    return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

std::vector<std::uint8_t> read_bytes(const std::string& path)
{
    std::vector<std::uint8_t> out;
    if (path == "-") {
        std::cin >> std::noskipws;
        out.assign(std::istreambuf_iterator<char>(std::cin), std::istreambuf_iterator<char>());
        return out;
    }
    std::ifstream is(path, std::ios::binary);
    if (!is) {
        throw std::runtime_error("cannot read " + path);
    }
    out.assign(std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>());
    return out;
}

std::ofstream open_out(const fs::path& p, std::ios::openmode mode = std::ios::out)
{
    std::ofstream os(p, mode);
    if (!os) {
        throw std::runtime_error("cannot write " + p.string());
    }
    return os;
}

/// 64-bit FNV-1a.
std::uint64_t fnv1a(const std::string& s)
{
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

std::string utc_now()
{
    const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

// ---------------------------------------------------------------------------
// Config loading and run bookkeeping

struct ConfigArgs {
    std::string config_path;
    std::string preset;
    std::optional<std::uint64_t> seed;
    std::optional<double> scan_rate;
    std::string out;

    void add_to(CLI::App* cmd, const std::string& default_preset)
    {
        preset = default_preset;
        auto* c = cmd->add_option("--config", config_path, "Scenario config file (JSON)");
        cmd->add_option("--preset", preset, "Built-in preset when no --config is given")
            ->capture_default_str()
            ->excludes(c);
        cmd->add_option("--seed", seed, "Override the scenario seed");
        cmd->add_option("--scan-rate", scan_rate, "Override the full-scan rate [Hz]");
        cmd->add_option("--out", out, "Output directory");
    }

    scenarios::ScenarioConfig load() const
    {
        auto cfg = config_path.empty() ? scenarios::preset(preset)
                                       : scenarios::parse_config(read_text(config_path));
        if (seed) {
            cfg.seed = *seed;
        }
        if (scan_rate) {
            cfg.scan_rate = *scan_rate;
        }
        return cfg;
    }

    fs::path out_dir(const scenarios::ScenarioConfig& cfg) const
    {
        if (!out.empty()) {
            return out;
        }
        if (const char* env = std::getenv("SIPO_OUT_DIR"); env && *env) {
            return env;
        }
        return cfg.outputs.dir;
    }
};

class Run {
public:
    Run(std::string command, const scenarios::ScenarioConfig& cfg, fs::path dir)
        : command_(std::move(command)), config_(scenarios::to_json(cfg)), seed_(cfg.seed),
          dir_(std::move(dir)), started_(utc_now())
    {
        fs::create_directories(dir_);
    }

    fs::path output(const std::string& name)
    {
        outputs_.push_back(name);
        return dir_ / name;
    }

    void write_manifest() const
    {
        char hash[17];
        std::snprintf(hash, sizeof hash, "%016llx",
                      static_cast<unsigned long long>(fnv1a(config_.dump())));
        json m = {{"command", command_},
                  {"config_hash", std::string("fnv1a64:") + hash},
                  {"seed", seed_},
                  {"start_time", started_},
                  {"tool_version", SIPO_VERSION},
                  {"outputs", outputs_},
                  {"config", config_}};
        open_out(dir_ / "manifest.json") << m.dump(2) << "\n";
    }

    const fs::path& dir() const { return dir_; }

private:
    std::string command_;
    json config_;
    std::uint64_t seed_;
    fs::path dir_;
    std::string started_;
    std::vector<std::string> outputs_;
};

void print_diagnostics(std::ostream& os, std::size_t frames, const protocol::Diagnostics& d,
                       const protocol::GapReport& g)
{
    os << "frames = " << frames << "\n"
       << "crc_failures = " << d.crc_failures << "\n"
       << "bad_versions = " << d.bad_versions << "\n"
       << "resyncs = " << d.resyncs << "\n"
       << "dropped_bytes = " << d.dropped_bytes << "\n"
       << "truncated_bytes = " << d.truncated_bytes << "\n"
       << "gaps = " << g.gaps.size() << "\n"
       << "missing_frames = " << g.total_missing << "\n"
       << "duplicates = " << g.duplicates << "\n";
    for (const auto& gap : g.gaps) {
        os << "gap after " << gap.after << ": " << gap.missing << " missing\n";
    }
}

struct Decoded {
    std::vector<readout::SampleFrame> frames;
    protocol::Diagnostics diagnostics;
    protocol::GapReport gaps;

    bool clean() const { return diagnostics.clean() && gaps.ok(); }
};

Decoded decode_bytes(const std::vector<std::uint8_t>& bytes)
{
    Decoded d;
    protocol::FrameDecoder dec;
    constexpr std::size_t chunk = 4096;
    for (std::size_t off = 0; off < bytes.size(); off += chunk) {
        const auto n = std::min(chunk, bytes.size() - off);
        dec.feed(std::span<const std::uint8_t>(bytes.data() + off, n), d.frames);
    }
    dec.finish();
    d.diagnostics = dec.diagnostics();
    d.gaps = protocol::sequence_gap_check(std::span<const readout::SampleFrame>(d.frames));
    return d;
}

// ---------------------------------------------------------------------------
// simulate

struct SimulateArgs {
    ConfigArgs cfg;
    double duration = 0.001;
};

int cmd_simulate(const SimulateArgs& a)
{
    auto cfg = a.cfg.load();
    cfg.validate();
    check(a.duration >= 0.0, ErrorCode::InvalidConfig, "--duration must be >= 0");
    const auto plan = readout::build_scan_plan(cfg.readout, cfg.scan_rate);
    const auto scans = static_cast<std::size_t>(std::floor(a.duration * cfg.scan_rate + 1e-9));

    std::optional<world::IndentationProfile> profile;
    if (cfg.trajectory.kind == "indentation") {
        const auto& tj = cfg.trajectory;
        profile.emplace(tj.order, tj.peak_force, tj.feed_rate, cfg.world.tactile, tj.dwell);
    }
    const auto seed = scenarios::trial_seed(cfg.seed, 0);
    scenarios::WorldSource source(cfg, seed, profile);
    scenarios::WorldSource scope(cfg, seed, profile); // separate noise draws for the trace

    Run run("simulate", cfg, a.cfg.out_dir(cfg));
    auto frames_os = open_out(run.output("frames.bin"), std::ios::binary);
    auto wave = open_out(run.output("waveform.csv"));
    wave << "time_s,slot,vout_V,clock";
    for (int id : plan.selected_chains) {
        wave << ",pulse_" << id;
    }
    wave << "\n";

    std::vector<std::uint8_t> bytes;
    for (std::size_t k = 0; k < scans; ++k) {
        const double start = static_cast<double>(k) / cfg.scan_rate;
        bytes.clear();
        protocol::encode_frame_into(readout::run_scan(plan, source, start, k), bytes);
        frames_os.write(reinterpret_cast<const char*>(bytes.data()),
                        static_cast<std::streamsize>(bytes.size()));
        for (const auto& p : readout::trace_scan(plan, scope, start)) {
            wave << num(p.time) << ',' << p.slot << ',' << num(p.vout) << ',' << (p.clock ? 1 : 0);
            for (bool b : p.pulses) {
                wave << ',' << (b ? 1 : 0);
            }
            wave << "\n";
        }
    }
    run.write_manifest();
    std::cout << "scans = " << scans << "\nslots_per_scan = " << plan.slot_count()
              << "\nclock_hz = " << num(plan.clock_frequency) << "\n";
    return kOk;
}

// ---------------------------------------------------------------------------
// characterize-joint

struct JointArgs {
    ConfigArgs cfg;
    std::optional<int> trials;
    std::string moving_unit;
    bool noiseless = false;
};

int cmd_characterize_joint(const JointArgs& a)
{
    auto cfg = a.cfg.load();
    if (a.trials) {
        cfg.trials = *a.trials;
    }
    if (!a.moving_unit.empty()) {
        cfg.trajectory.moving_unit = a.moving_unit;
    }
    if (a.noiseless) {
        cfg.world.joint.noise_sigma = 0.0;
        cfg.world.tactile.noise_sigma = 0.0;
    }
    cfg.trajectory.kind = "joint_sinusoid";
    cfg.validate();
    const auto report = scenarios::run_joint_characterization(cfg, cfg.trajectory.moving_unit);

    Run run("characterize-joint", cfg, a.cfg.out_dir(cfg));
    const auto text = estimation::format_report(report);
    open_out(run.output("report.txt")) << "moving_unit = " << cfg.trajectory.moving_unit
                                       << "\nscan_rate_hz = " << num(cfg.scan_rate) << "\n"
                                       << text;
    auto csv = open_out(run.output("trials.csv"));
    csv << "trial,ape_slope_pct,rmse_ref_deg,std_error_deg\n";
    for (std::size_t k = 0; k < report.trials.size(); ++k) {
        const auto& t = report.trials[k];
        csv << k << ',' << num(t.ape_slope_percent) << ',' << num(t.rmse_ref_deg) << ','
            << num(t.std_error_deg) << "\n";
    }
    run.write_manifest();
    std::cout << text;
    return kOk;
}

// ---------------------------------------------------------------------------
// Tactile streams on disk

void write_streams(std::ostream& os, const scenarios::TactileStreams& s)
{
    os << "split,sequence,time_s,h1,h2,h3,h4,force_N,label\n";
    auto dump = [&](const std::vector<scenarios::TactileSequence>& seqs) {
        for (std::size_t q = 0; q < seqs.size(); ++q) {
            const auto& seg = seqs[q].segment;
            for (std::size_t i = 0; i < seg.times.size(); ++i) {
                os << seqs[q].split << ',' << q << ',' << num(seg.times[i]);
                for (std::size_t k = 0; k < 4; ++k) {
                    os << ',' << num(seg.samples[i * 4 + k]);
                }
                os << ',' << num(seg.force[i]) << ',' << seg.labels[i] << "\n";
            }
        }
    };
    dump(s.train);
    dump(s.val);
    dump(s.test);
}

scenarios::TactileStreams read_streams(const std::string& text)
{
    scenarios::TactileStreams s;
    std::istringstream is(text);
    std::string line;
    std::getline(is, line);
    check(split_csv(line) ==
              std::vector<std::string>{"split", "sequence", "time_s", "h1", "h2", "h3", "h4",
                                       "force_N", "label"},
          ErrorCode::InvalidConfig, "streams CSV: unexpected header");
    std::size_t row = 1;
    while (std::getline(is, line)) {
        ++row;
        if (line.empty()) {
            continue;
        }
        const auto c = split_csv(line);
        check(c.size() == 9, ErrorCode::InvalidConfig,
              "streams CSV line " + std::to_string(row) + ": expected 9 columns");
        auto* split = c[0] == "train" ? &s.train : c[0] == "val" ? &s.val : c[0] == "test" ? &s.test : nullptr;
        check(split != nullptr, ErrorCode::InvalidConfig,
              "streams CSV line " + std::to_string(row) + ": unknown split '" + c[0] + "'");
        const auto q = parse_uint(c[1]);
        check(q <= split->size(), ErrorCode::InvalidConfig,
              "streams CSV line " + std::to_string(row) + ": sequences out of order");
        if (q == split->size()) {
            split->push_back({c[0], {}, {}});
        }
        auto& seg = (*split)[q].segment;
        seg.times.push_back(parse_num(c[2]));
        for (std::size_t k = 3; k < 7; ++k) {
            seg.samples.push_back(parse_num(c[k]));
        }
        seg.force.push_back(parse_num(c[7]));
        seg.labels.push_back(static_cast<int>(parse_uint(c[8])));
    }
    return s;
}

std::vector<lstm::StreamSegment> segments(const std::vector<scenarios::TactileSequence>& seqs)
{
    std::vector<lstm::StreamSegment> out;
    for (const auto& s : seqs) {
        out.push_back(s.segment);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Training

lstm::ModelConfig model_config(lstm::Task t)
{
    return t == lstm::Task::Force ? lstm::ModelConfig::force() : lstm::ModelConfig::contact();
}

struct Trained {
    lstm::TrainResult result;
    lstm::WindowDataset train, val;
};

bool report_epoch(const lstm::EpochRecord& r, void* tag)
{
    std::fprintf(stderr, "[%s] epoch %zu train %.6g val %.6g\n", static_cast<const char*>(tag),
                 r.epoch, r.train_loss, r.val_loss);
    return true;
}

Trained train_task(lstm::Task task, const scenarios::TactileStreams& streams,
                   const scenarios::ScenarioConfig& cfg)
{
    const auto mc = model_config(task);
    Trained t;
    t.train = lstm::build_windows(segments(streams.train), mc.sequence_length, 4);
    t.val = lstm::build_windows(segments(streams.val), mc.sequence_length, 4,
                                t.train.normalization());
    const auto tc = cfg.training.train_config(world::mix_seed(cfg.seed, 200 + static_cast<int>(task)));
    t.result = lstm::train(t.train, t.val, mc, tc, report_epoch,
                           const_cast<char*>(lstm::to_string(task)));
    return t;
}

void save_trained(Run& run, lstm::Task task, const lstm::TrainResult& r)
{
    const std::string name = lstm::to_string(task);
    auto model_os = open_out(run.output(name + ".model"));
    lstm::save_model(r.model, model_os);
    auto hist = open_out(run.output(name + "_history.csv"));
    hist << "epoch,train_loss,val_loss\n";
    for (const auto& e : r.history) {
        hist << e.epoch << ',' << num(e.train_loss) << ',' << num(e.val_loss) << "\n";
    }
}

// ---------------------------------------------------------------------------
// characterize-tactile

struct TactileArgs {
    ConfigArgs cfg;
    std::optional<std::size_t> epochs;
    bool skip_training = false;
};

int cmd_characterize_tactile(const TactileArgs& a)
{
    auto cfg = a.cfg.load();
    if (a.epochs) {
        cfg.training.max_epochs = *a.epochs;
    }
    cfg.trajectory.kind = "indentation";
    cfg.validate();
    const auto streams = scenarios::generate_tactile_streams(cfg);

    Run run("characterize-tactile", cfg, a.cfg.out_dir(cfg));
    {
        auto os = open_out(run.output("streams.csv"));
        write_streams(os, streams);
    }
    if (a.skip_training) {
        run.write_manifest();
        return kOk;
    }
    const auto force = train_task(lstm::Task::Force, streams, cfg);
    save_trained(run, lstm::Task::Force, force.result);
    const auto contact = train_task(lstm::Task::Contact, streams, cfg);
    save_trained(run, lstm::Task::Contact, contact.result);

    const auto test_f = lstm::build_windows(segments(streams.test), force.result.model.config.sequence_length,
                                            4, force.train.normalization());
    const auto test_c = lstm::build_windows(segments(streams.test), contact.result.model.config.sequence_length,
                                            4, contact.train.normalization());
    const auto ev = scenarios::evaluate_tactile(force.result.model, test_f, contact.result.model, test_c);

    auto test_os = open_out(run.output("test.csv"));
    test_os << "time_s,f_true_N,f_est_N,class_true,class_est\n";
    for (const auto& r : ev.rows) {
        test_os << num(r.time) << ',' << num(r.f_true) << ',' << num(r.f_est) << ','
                << r.class_true << ',' << r.class_est << "\n";
    }
    std::ostringstream summary;
    const auto& s = ev.summary;
    summary << "rmse_all = " << num(s.rmse_all) << "\n"
            << "rmse_above_0.05N = " << num(s.rmse_above_005) << "\n"
            << "accuracy = " << num(s.accuracy) << "\n"
            << "accuracy_excl_transitions = " << num(s.accuracy_excl_transitions) << "\n"
            << "force_windows = " << s.force_windows << "\n"
            << "contact_windows = " << s.contact_windows << "\n"
            << "force_best_epoch = " << force.result.best_epoch << "\n"
            << "contact_best_epoch = " << contact.result.best_epoch << "\n";
    open_out(run.output("summary.txt")) << summary.str();
    run.write_manifest();
    std::cout << summary.str();
    return kOk;
}

// ---------------------------------------------------------------------------
// train

struct TrainArgs {
    ConfigArgs cfg;
    std::string task;
    std::string data;
    std::optional<std::size_t> epochs;
};

int cmd_train(const TrainArgs& a)
{
    auto cfg = a.cfg.load();
    if (a.epochs) {
        cfg.training.max_epochs = *a.epochs;
    }
    cfg.validate();
    const auto task = lstm::task_from_string(a.task);
    const auto streams = read_streams(read_text(a.data));
    check(!streams.train.empty() && !streams.val.empty(), ErrorCode::InvalidConfig,
          "streams CSV needs train and val sequences");
    const auto t = train_task(task, streams, cfg);
    Run run("train", cfg, a.cfg.out_dir(cfg));
    save_trained(run, task, t.result);
    run.write_manifest();
    std::cout << "best_epoch = " << t.result.best_epoch << "\nepochs = " << t.result.history.size()
              << "\n";
    return kOk;
}

// ---------------------------------------------------------------------------
// infer

struct InferArgs {
    ConfigArgs cfg;
    std::string model;
    std::string task;
    std::string input = "-";
    std::optional<std::size_t> sequence_length;
    double budget_ms = 1.0;
};

int cmd_infer(const InferArgs& a)
{
    auto cfg = a.cfg.load();
    cfg.validate();
    const auto model = lstm::model_from_string(read_text(a.model));
    const auto task = lstm::task_from_string(a.task);
    check(model.config.task == task, ErrorCode::ModelMismatch,
          std::string("model was trained for ") + lstm::to_string(model.config.task) +
              ", not " + lstm::to_string(task));
    check(!a.sequence_length || *a.sequence_length == model.config.sequence_length,
          ErrorCode::ModelMismatch,
          "model sequence length is " + std::to_string(model.config.sequence_length));
    check(model.config.input_features == 4, ErrorCode::ModelMismatch,
          "model expects " + std::to_string(model.config.input_features) + " inputs, stream has 4");
    check(a.budget_ms > 0.0, ErrorCode::InvalidConfig, "--budget-ms must be > 0");

    const auto plan = readout::build_scan_plan(cfg.readout, cfg.scan_rate);
    const auto layout = estimation::ChannelLayout::from_plan(
        plan, [&](const std::string& l) { return cfg.kind_of(l); });
    const auto halls = cfg.hall_labels();
    check(halls.size() == 4, ErrorCode::InvalidConfig, "config has no tactile module");

    const auto decoded = decode_bytes(read_bytes(a.input));
    std::vector<double> stream;
    stream.reserve(decoded.frames.size() * 4);
    for (const auto& f : decoded.frames) {
        const auto volts = estimation::demux(f, layout, cfg.readout.vdd, cfg.readout.adc_bits);
        for (const auto& h : halls) {
            stream.push_back(volts[*layout.index_of(h)]);
        }
    }
    const auto res = lstm::infer_stream(stream, model, a.budget_ms * 1e-3);

    Run run("infer", cfg, a.cfg.out_dir(cfg));
    auto pred = open_out(run.output("predictions.csv"));
    pred << "sequence,timestamp_us";
    if (task == lstm::Task::Force) {
        pred << ",force_N\n";
    } else {
        pred << ",class";
        for (std::size_t k = 0; k < lstm::kContactClasses; ++k) {
            pred << ",p" << k;
        }
        pred << "\n";
    }
    const std::size_t first = model.config.sequence_length - 1;
    for (std::size_t i = 0; i < res.predictions.size(); ++i) {
        const auto& f = decoded.frames[first + i];
        const auto& p = res.predictions[i];
        pred << f.sequence << ',' << f.timestamp_us;
        if (task == lstm::Task::Force) {
            pred << ',' << num(p.force);
        } else {
            pred << ',' << p.label;
            for (double q : p.probabilities) {
                pred << ',' << num(q);
            }
        }
        pred << "\n";
    }
    const auto& t = res.timing;
    std::ostringstream lat;
    lat << "windows = " << t.windows << "\n"
        << "median_ms = " << num(t.median_s * 1e3) << "\n"
        << "p99_ms = " << num(t.p99_s * 1e3) << "\n"
        << "max_ms = " << num(t.max_s * 1e3) << "\n"
        << "budget_ms = " << num(a.budget_ms) << "\n"
        << "over_budget = " << t.over_budget << "\n"
        << "within_budget = " << (t.within_budget() ? "true" : "false") << "\n";
    open_out(run.output("latency.txt")) << lat.str();
    run.write_manifest();
    std::cout << lat.str();
    if (!decoded.clean()) {
        print_diagnostics(std::cerr, decoded.frames.size(), decoded.diagnostics, decoded.gaps);
        return kCorruptData;
    }
    return t.within_budget() ? kOk : kBudgetExceeded;
}

// ---------------------------------------------------------------------------
// codec

struct CodecArgs {
    std::string mode;
    std::string in = "-";
    std::string out = "-";
};

std::ostream& sink(const std::string& path, std::ofstream& file, std::ios::openmode mode)
{
    if (path == "-") {
        return std::cout;
    }
    file = open_out(path, mode);
    return file;
}

int cmd_codec(const CodecArgs& a)
{
    std::ofstream file;
    if (a.mode == "encode") {
        const auto bytes = read_bytes(a.in);
        std::istringstream is(std::string(bytes.begin(), bytes.end()));
        std::string line;
        std::getline(is, line);
        const auto header = split_csv(line);
        check(header.size() >= 2 && header[0] == "sequence" && header[1] == "timestamp_us",
              ErrorCode::InvalidConfig, "codec CSV header must start with sequence,timestamp_us");
        auto& os = sink(a.out, file, std::ios::binary);
        std::vector<std::uint8_t> buf;
        std::size_t row = 1;
        while (std::getline(is, line)) {
            ++row;
            if (line.empty()) {
                continue;
            }
            const auto c = split_csv(line);
            const auto where = "line " + std::to_string(row) + ": ";
            check(c.size() == header.size(), ErrorCode::InvalidConfig, where + "column count differs from header");
            readout::SampleFrame f;
            f.sequence = parse_uint(c[0]);
            f.timestamp_us = parse_uint(c[1]);
            check(f.sequence <= 0xFFFF, ErrorCode::InvalidConfig, where + "sequence exceeds 16 bits");
            check(f.timestamp_us <= 0xFFFFFFFFull, ErrorCode::InvalidConfig, where + "timestamp exceeds 32 bits");
            for (std::size_t k = 2; k < c.size(); ++k) {
                const auto v = parse_uint(c[k]);
                check(v <= 0xFFFF, ErrorCode::InvalidConfig, where + "sample exceeds 16 bits");
                f.samples.push_back(static_cast<std::uint16_t>(v));
            }
            buf.clear();
            protocol::encode_frame_into(f, buf);
            os.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
        }
        return kOk;
    }

    const auto d = decode_bytes(read_bytes(a.in));
    auto& os = sink(a.out, file, std::ios::out);
    os << "sequence,timestamp_us";
    const std::size_t n = d.frames.empty() ? 0 : d.frames.front().samples.size();
    for (std::size_t k = 0; k < n; ++k) {
        os << ",s" << k;
    }
    os << "\n";
    for (const auto& f : d.frames) {
        os << f.sequence << ',' << f.timestamp_us;
        for (auto s : f.samples) {
            os << ',' << s;
        }
        os << "\n";
    }
    os.flush();
    // Diagnostics go to stderr when the CSV itself is on stdout.
    print_diagnostics(a.out == "-" ? std::cerr : std::cout, d.frames.size(), d.diagnostics, d.gaps);
    return d.clean() ? kOk : kCorruptData;
}

int exit_code(const Error& e)
{
    switch (e.code()) {
    case ErrorCode::SlotBudgetExceeded:
        return kBudgetExceeded;
    case ErrorCode::InvalidConfig:
    case ErrorCode::UnknownPreset:
    case ErrorCode::ModelMismatch:
    case ErrorCode::LayoutMismatch:
        return kConfigError;
    default:
        return kFailure;
    }
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"SIPO sensor readout simulator and tactile LSTM toolkit", "sipo"};
    app.footer(kColumnsHelp);
    app.require_subcommand(1);
    app.set_version_flag("--version", SIPO_VERSION);

    std::string preset_name;
    auto* preset_cmd = app.add_subcommand("preset", "Print a built-in scenario config as JSON");
    preset_cmd->add_option("name", preset_name, "full_hand | middle_finger_only | tactile_bench")->required();

    std::string config_path;
    auto* config_cmd = app.add_subcommand("config", "Validate a config file and echo the effective config");
    config_cmd->add_option("path", config_path)->required();

    SimulateArgs sim;
    auto* sim_cmd = app.add_subcommand("simulate", "Run the readout and write frames plus a scope trace");
    sim.cfg.add_to(sim_cmd, "full_hand");
    sim_cmd->add_option("--duration", sim.duration, "Simulated time [s]")->capture_default_str();

    JointArgs joint;
    auto* joint_cmd = app.add_subcommand("characterize-joint", "Joint sensor sweep trials (slope, RMSE, STD)");
    joint.cfg.add_to(joint_cmd, "middle_finger_only");
    joint_cmd->add_option("--trials", joint.trials, "Override the trial count");
    joint_cmd->add_option("--moving-unit", joint.moving_unit, "Joint channel that sweeps");
    joint_cmd->add_flag("--noiseless", joint.noiseless, "Disable sensor noise");

    TactileArgs tac;
    auto* tac_cmd = app.add_subcommand("characterize-tactile", "Tactile datasets, both models, test predictions");
    tac.cfg.add_to(tac_cmd, "tactile_bench");
    tac_cmd->add_option("--epochs", tac.epochs, "Override training.max_epochs");
    tac_cmd->add_flag("--skip-training", tac.skip_training, "Only write streams.csv");

    TrainArgs tr;
    auto* train_cmd = app.add_subcommand("train", "Train one model from a streams CSV");
    tr.cfg.add_to(train_cmd, "tactile_bench");
    train_cmd->add_option("--task", tr.task, "force | contact")->required();
    train_cmd->add_option("--data", tr.data, "streams.csv from characterize-tactile")->required();
    train_cmd->add_option("--epochs", tr.epochs, "Override training.max_epochs");

    InferArgs inf;
    auto* infer_cmd = app.add_subcommand("infer", "Streaming inference over a frame stream");
    inf.cfg.add_to(infer_cmd, "tactile_bench");
    infer_cmd->add_option("--model", inf.model, "Model file")->required();
    infer_cmd->add_option("--task", inf.task, "force | contact (must match the model)")->required();
    infer_cmd->add_option("--input", inf.input, "frames.bin, or - for stdin")->capture_default_str();
    infer_cmd->add_option("--sequence-length", inf.sequence_length, "Expected window length");
    infer_cmd->add_option("--budget-ms", inf.budget_ms, "p99 latency budget per window")->capture_default_str();

    CodecArgs codec;
    auto* codec_cmd = app.add_subcommand("codec", "Convert between frame streams and CSV");
    codec_cmd->add_option("mode", codec.mode, "encode (CSV -> frames) | decode (frames -> CSV)")
        ->required()
        ->check(CLI::IsMember({"encode", "decode"}));
    codec_cmd->add_option("--in", codec.in, "Input file or -")->capture_default_str();
    codec_cmd->add_option("--out", codec.out, "Output file or -")->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? kOk : kConfigError;
    }

    try {
        if (*preset_cmd) {
            std::cout << scenarios::to_json(scenarios::preset(preset_name)).dump(2) << "\n";
            return kOk;
        }
        if (*config_cmd) {
            const auto cfg = scenarios::parse_config(read_text(config_path));
            std::cout << scenarios::to_json(cfg).dump(2) << "\n";
            return kOk;
        }
        if (*sim_cmd) {
            return cmd_simulate(sim);
        }
        if (*joint_cmd) {
            return cmd_characterize_joint(joint);
        }
        if (*tac_cmd) {
            return cmd_characterize_tactile(tac);
        }
        if (*train_cmd) {
            return cmd_train(tr);
        }
        if (*infer_cmd) {
            return cmd_infer(inf);
        }
        if (*codec_cmd) {
            return cmd_codec(codec);
        }
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return exit_code(e);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kFailure;
    }
    return kFailure;
}
