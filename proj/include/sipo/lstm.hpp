#ifndef SIPO_LSTM_HPP
#define SIPO_LSTM_HPP

// Two-layer LSTM sequence models with a rectified force head or a softmax
// contact-location head. Training is full BPTT over each window with Adam,
// in double precision, single-threaded and seeded-deterministic.

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <istream>
#include <limits>
#include <numeric>
#include <optional>
#include <ostream>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "sipo/error.hpp"

namespace sipo::lstm {

enum class Task { Force, Contact };

inline const char* to_string(Task t) { return t == Task::Force ? "force" : "contact"; }

inline Task task_from_string(const std::string& s)
{
    if (s == "force") {
        return Task::Force;
    }
    if (s == "contact") {
        return Task::Contact;
    }
    throw Error(ErrorCode::InvalidConfig, "unknown task '" + s + "' (force|contact)");
}

inline constexpr std::size_t kContactClasses = 5;

struct ModelConfig {
    Task task = Task::Force;
    std::size_t input_features = 4;
    std::size_t sequence_length = 20;
    std::vector<std::size_t> hidden_sizes{32, 12};
    double dropout_rate = 0.2;

    static ModelConfig force() { return ModelConfig{Task::Force, 4, 20, {32, 12}, 0.2}; }
    static ModelConfig contact() { return ModelConfig{Task::Contact, 4, 80, {32, 12}, 0.2}; }

    std::size_t output_size() const { return task == Task::Force ? 1 : kContactClasses; }

    void validate() const
    {
        check(input_features >= 1, ErrorCode::InvalidConfig, "input_features must be >= 1");
        check(sequence_length >= 1, ErrorCode::InvalidConfig, "sequence_length must be >= 1");
        check(!hidden_sizes.empty(), ErrorCode::InvalidConfig, "need at least one LSTM layer");
        for (auto h : hidden_sizes) {
            check(h >= 1, ErrorCode::InvalidConfig, "hidden sizes must be >= 1");
        }
        check(dropout_rate >= 0.0 && dropout_rate < 1.0, ErrorCode::InvalidConfig,
              "dropout_rate must be in [0, 1)");
    }

    bool operator==(const ModelConfig&) const = default;
};

/// Gate blocks are stacked input, forget, cell candidate, output.
/// `weights` is row-major (4*hidden) x (input + hidden), acting on [x_t; h_{t-1}].
struct LstmLayerParams {
    std::size_t input_size = 0;
    std::size_t hidden_size = 0;
    std::vector<double> weights;
    std::vector<double> bias;

    LstmLayerParams() = default;
    LstmLayerParams(std::size_t in, std::size_t hidden)
        : input_size(in), hidden_size(hidden), weights(4 * hidden * (in + hidden), 0.0),
          bias(4 * hidden, 0.0)
    {
    }

    std::size_t cols() const { return input_size + hidden_size; }

    bool operator==(const LstmLayerParams&) const = default;
};

struct HeadParams {
    std::size_t input_size = 0;
    std::size_t output_size = 0;
    std::vector<double> weights; // output x input, row-major
    std::vector<double> bias;

    HeadParams() = default;
    HeadParams(std::size_t in, std::size_t out)
        : input_size(in), output_size(out), weights(in * out, 0.0), bias(out, 0.0)
    {
    }

    bool operator==(const HeadParams&) const = default;
};

/// All trainable tensors. Gradients use the same shape.
struct ModelParams {
    std::vector<LstmLayerParams> layers;
    HeadParams head;

    static ModelParams zeros(const ModelConfig& cfg)
    {
        ModelParams p;
        std::size_t in = cfg.input_features;
        for (auto h : cfg.hidden_sizes) {
            p.layers.emplace_back(in, h);
            in = h;
        }
        p.head = HeadParams(in, cfg.output_size());
        return p;
    }

    template <typename Fn>
    void for_each_block(Fn&& fn)
    {
        for (std::size_t l = 0; l < layers.size(); ++l) {
            fn("lstm" + std::to_string(l) + ".weights", std::span<double>(layers[l].weights),
               4 * layers[l].hidden_size, layers[l].cols());
            fn("lstm" + std::to_string(l) + ".bias", std::span<double>(layers[l].bias),
               4 * layers[l].hidden_size, std::size_t{1});
        }
        fn(std::string("head.weights"), std::span<double>(head.weights), head.output_size,
           head.input_size);
        fn(std::string("head.bias"), std::span<double>(head.bias), head.output_size,
           std::size_t{1});
    }

    std::size_t parameter_count() const
    {
        std::size_t n = head.weights.size() + head.bias.size();
        for (const auto& l : layers) {
            n += l.weights.size() + l.bias.size();
        }
        return n;
    }

    std::vector<double> flatten() const
    {
        std::vector<double> out;
        out.reserve(parameter_count());
        const_cast<ModelParams*>(this)->for_each_block(
            [&](const std::string&, std::span<double> b, std::size_t, std::size_t) {
                out.insert(out.end(), b.begin(), b.end());
            });
        return out;
    }

    void unflatten(std::span<const double> flat)
    {
        check(flat.size() == parameter_count(), ErrorCode::ShapeMismatch,
              "flat parameter vector has the wrong length");
        std::size_t off = 0;
        for_each_block([&](const std::string&, std::span<double> b, std::size_t, std::size_t) {
            std::copy_n(flat.begin() + static_cast<std::ptrdiff_t>(off), b.size(), b.begin());
            off += b.size();
        });
    }

    void set_zero()
    {
        for_each_block([](const std::string&, std::span<double> b, std::size_t, std::size_t) {
            std::fill(b.begin(), b.end(), 0.0);
        });
    }

    bool all_finite() const
    {
        const auto flat = flatten();
        return std::all_of(flat.begin(), flat.end(), [](double v) { return std::isfinite(v); });
    }

    bool operator==(const ModelParams&) const = default;
};

/// Per-channel standardisation, fitted on the training split.
struct Normalization {
    std::vector<double> mean;
    std::vector<double> std;

    static Normalization identity(std::size_t features)
    {
        return {std::vector<double>(features, 0.0), std::vector<double>(features, 1.0)};
    }

    /// Fit on row-major `samples` (n x features).
    static Normalization fit(std::span<const double> samples, std::size_t features)
    {
        check(features > 0 && samples.size() % features == 0 && !samples.empty(),
              ErrorCode::ShapeMismatch, "samples not a whole number of rows");
        const std::size_t n = samples.size() / features;
        Normalization norm{std::vector<double>(features, 0.0), std::vector<double>(features, 0.0)};
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t f = 0; f < features; ++f) {
                norm.mean[f] += samples[i * features + f];
            }
        }
        for (auto& m : norm.mean) {
            m /= static_cast<double>(n);
        }
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t f = 0; f < features; ++f) {
                const double d = samples[i * features + f] - norm.mean[f];
                norm.std[f] += d * d;
            }
        }
        for (auto& s : norm.std) {
            s = std::sqrt(s / static_cast<double>(n));
            if (!(s > 1e-12)) {
                s = 1.0; // constant channel
            }
        }
        return norm;
    }

    void apply(std::span<double> row) const
    {
        for (std::size_t f = 0; f < row.size(); ++f) {
            row[f] = (row[f] - mean[f]) / std[f];
        }
    }

    bool operator==(const Normalization&) const = default;
};

struct LstmModel {
    ModelConfig config;
    ModelParams params;
    Normalization norm;

    bool operator==(const LstmModel&) const = default;
};

/// Uniform(+-1/sqrt(hidden)) weights and biases, forget-gate bias 1; head uniform(+-1/sqrt(in)).
inline LstmModel init_model(const ModelConfig& cfg, std::uint64_t seed)
{
    cfg.validate();
    LstmModel m{cfg, ModelParams::zeros(cfg), Normalization::identity(cfg.input_features)};
    std::mt19937_64 rng(seed);
    for (auto& layer : m.params.layers) {
        const double k = 1.0 / std::sqrt(static_cast<double>(layer.hidden_size));
        std::uniform_real_distribution<double> u(-k, k);
        for (auto& w : layer.weights) {
            w = u(rng);
        }
        for (auto& b : layer.bias) {
            b = u(rng);
        }
        for (std::size_t j = 0; j < layer.hidden_size; ++j) {
            layer.bias[layer.hidden_size + j] = 1.0;
        }
    }
    const double k = 1.0 / std::sqrt(static_cast<double>(m.params.head.input_size));
    std::uniform_real_distribution<double> u(-k, k);
    for (auto& w : m.params.head.weights) {
        w = u(rng);
    }
    for (auto& b : m.params.head.bias) {
        b = u(rng);
    }
    return m;
}

namespace detail {

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

struct LayerCache {
    std::vector<double> z;     // T x (in + hidden): [x_t; h_{t-1}]
    std::vector<double> gates; // T x 4H, activated
    std::vector<double> c;     // (T + 1) x H, c[0] = 0
    std::vector<double> tc;    // T x H, tanh(c_t)
    std::vector<double> h;     // (T + 1) x H, h[0] = 0
    std::vector<double> mask;  // T x H dropout multipliers (empty: dropout off)
    std::vector<double> out;   // T x H layer output after dropout
};

} // namespace detail

/// Scratch buffers for one forward/backward pass; reuse across windows to avoid allocation.
struct Workspace {
    std::vector<detail::LayerCache> layers;
    std::vector<double> head_pre;
    std::vector<double> output; // force (1) or class probabilities (5)
    // backward scratch
    std::vector<double> dout, din, da, dz, dh_next, dc_next;
};

/// Forward pass over one window (T x input_features, row-major). `dropout_rng` null means
/// inference mode. Returns the head output (1 force value or 5 probabilities).
inline std::span<const double> forward(const LstmModel& model, std::span<const double> window,
                                       Workspace& ws, std::mt19937_64* dropout_rng = nullptr)
{
    const auto& cfg = model.config;
    const std::size_t F = cfg.input_features;
    if (window.size() % F != 0 || window.empty()) {
        throw Error(ErrorCode::ShapeMismatch, "window is not T x input_features");
    }
    const std::size_t T = window.size() / F;
    if (T != cfg.sequence_length) {
        throw Error(ErrorCode::ShapeMismatch, "window has " + std::to_string(T) +
                                                  " steps, model expects " +
                                                  std::to_string(cfg.sequence_length));
    }
    const auto& layers = model.params.layers;
    ws.layers.resize(layers.size());

    std::span<const double> in = window;
    std::size_t in_size = F;
    const double keep = 1.0 - cfg.dropout_rate;
    std::uniform_real_distribution<double> unif(0.0, 1.0);

    for (std::size_t l = 0; l < layers.size(); ++l) {
        const auto& p = layers[l];
        if (p.input_size != in_size) {
            throw Error(ErrorCode::ShapeMismatch, "layer input size mismatch");
        }
        const std::size_t H = p.hidden_size;
        const std::size_t C = p.cols();
        auto& lc = ws.layers[l];
        lc.z.resize(T * C);
        lc.gates.resize(T * 4 * H);
        lc.c.assign((T + 1) * H, 0.0);
        lc.tc.resize(T * H);
        lc.h.assign((T + 1) * H, 0.0);
        lc.out.resize(T * H);
        const bool drop = dropout_rng != nullptr && cfg.dropout_rate > 0.0;
        lc.mask.resize(drop ? T * H : 0);

        for (std::size_t t = 0; t < T; ++t) {
            double* z = lc.z.data() + t * C;
            std::copy_n(in.data() + t * in_size, in_size, z);
            std::copy_n(lc.h.data() + t * H, H, z + in_size);
            double* a = lc.gates.data() + t * 4 * H;
            for (std::size_t r = 0; r < 4 * H; ++r) {
                const double* w = p.weights.data() + r * C;
                double acc = p.bias[r];
                for (std::size_t k = 0; k < C; ++k) {
                    acc += w[k] * z[k];
                }
                a[r] = acc;
            }
            const double* c_prev = lc.c.data() + t * H;
            double* c = lc.c.data() + (t + 1) * H;
            double* tc = lc.tc.data() + t * H;
            double* h = lc.h.data() + (t + 1) * H;
            double* o_ut = lc.out.data() + t * H;
            for (std::size_t j = 0; j < H; ++j) {
                const double ig = detail::sigmoid(a[j]);
                const double fg = detail::sigmoid(a[H + j]);
                const double gg = std::tanh(a[2 * H + j]);
                const double og = detail::sigmoid(a[3 * H + j]);
                a[j] = ig;
                a[H + j] = fg;
                a[2 * H + j] = gg;
                a[3 * H + j] = og;
                c[j] = fg * c_prev[j] + ig * gg;
                tc[j] = std::tanh(c[j]);
                h[j] = og * tc[j];
                if (drop) {
                    const double m = unif(*dropout_rng) < keep ? 1.0 / keep : 0.0;
                    lc.mask[t * H + j] = m;
                    o_ut[j] = h[j] * m;
                } else {
                    o_ut[j] = h[j];
                }
            }
        }
        in = lc.out;
        in_size = H;
    }

    const auto& head = model.params.head;
    const double* last = ws.layers.back().out.data() + (T - 1) * in_size;
    ws.head_pre.resize(head.output_size);
    for (std::size_t r = 0; r < head.output_size; ++r) {
        double acc = head.bias[r];
        for (std::size_t k = 0; k < head.input_size; ++k) {
            acc += head.weights[r * head.input_size + k] * last[k];
        }
        ws.head_pre[r] = acc;
    }
    ws.output.resize(head.output_size);
    if (cfg.task == Task::Force) {
        ws.output[0] = std::max(0.0, ws.head_pre[0]);
    } else {
        const double mx = *std::max_element(ws.head_pre.begin(), ws.head_pre.end());
        double sum = 0.0;
        for (std::size_t r = 0; r < ws.output.size(); ++r) {
            ws.output[r] = std::exp(ws.head_pre[r] - mx);
            sum += ws.output[r];
        }
        for (auto& p : ws.output) {
            p /= sum;
        }
    }
    return ws.output;
}

/// Final hidden state of each layer (dropout off).
inline std::vector<std::vector<double>> lstm_forward(const LstmModel& model,
                                                     std::span<const double> window)
{
    Workspace ws;
    forward(model, window, ws);
    const std::size_t T = window.size() / model.config.input_features;
    std::vector<std::vector<double>> finals;
    for (std::size_t l = 0; l < ws.layers.size(); ++l) {
        const auto H = model.params.layers[l].hidden_size;
        const auto* h = ws.layers[l].h.data() + T * H;
        finals.emplace_back(h, h + H);
    }
    return finals;
}

/// Head applied to a top-layer hidden vector: rectified force or softmax probabilities.
inline std::vector<double> head_forward(std::span<const double> hidden, const HeadParams& head,
                                        Task task)
{
    check(hidden.size() == head.input_size, ErrorCode::ShapeMismatch,
          "hidden size does not match head");
    std::vector<double> z(head.output_size);
    for (std::size_t r = 0; r < head.output_size; ++r) {
        double acc = head.bias[r];
        for (std::size_t k = 0; k < head.input_size; ++k) {
            acc += head.weights[r * head.input_size + k] * hidden[k];
        }
        z[r] = acc;
    }
    if (task == Task::Force) {
        return {std::max(0.0, z[0])};
    }
    const double mx = *std::max_element(z.begin(), z.end());
    double sum = 0.0;
    for (auto& v : z) {
        v = std::exp(v - mx);
        sum += v;
    }
    for (auto& v : z) {
        v /= sum;
    }
    return z;
}

/// Target for one window: force in newtons or class label.
struct Target {
    double force = 0.0;
    int label = 0;
};

/// Loss of the last forward pass: squared error (force) or -log p[label] (contact).
inline double sample_loss(const LstmModel& model, const Workspace& ws, const Target& target)
{
    if (model.config.task == Task::Force) {
        const double d = ws.output[0] - target.force;
        return d * d;
    }
    return -std::log(std::max(ws.output[static_cast<std::size_t>(target.label)], 1e-300));
}

/// Accumulate `scale` * d(sample_loss)/d(params) for the last forward pass into `grad`.
inline void backward(const LstmModel& model, Workspace& ws, const Target& target, double scale,
                     ModelParams& grad)
{
    const auto& cfg = model.config;
    const auto& head = model.params.head;
    const auto& layers = model.params.layers;
    const std::size_t L = layers.size();
    const std::size_t Htop = head.input_size;
    const std::size_t T = ws.layers.back().out.size() / Htop;

    // dL/d(head pre-activation)
    ws.da.assign(head.output_size, 0.0);
    if (cfg.task == Task::Force) {
        const double pre = ws.head_pre[0];
        ws.da[0] = pre > 0.0 ? 2.0 * (ws.output[0] - target.force) * scale : 0.0;
    } else {
        for (std::size_t r = 0; r < head.output_size; ++r) {
            ws.da[r] = (ws.output[r] - (static_cast<int>(r) == target.label ? 1.0 : 0.0)) * scale;
        }
    }
    const double* last = ws.layers.back().out.data() + (T - 1) * Htop;
    ws.dout.assign(T * Htop, 0.0);
    double* dlast = ws.dout.data() + (T - 1) * Htop;
    for (std::size_t r = 0; r < head.output_size; ++r) {
        const double d = ws.da[r];
        if (d == 0.0) {
            continue;
        }
        grad.head.bias[r] += d;
        for (std::size_t k = 0; k < Htop; ++k) {
            grad.head.weights[r * Htop + k] += d * last[k];
            dlast[k] += d * head.weights[r * Htop + k];
        }
    }

    for (std::size_t li = L; li-- > 0;) {
        const auto& p = layers[li];
        auto& g = grad.layers[li];
        auto& lc = ws.layers[li];
        const std::size_t H = p.hidden_size;
        const std::size_t I = p.input_size;
        const std::size_t C = p.cols();
        const bool masked = !lc.mask.empty();
        ws.din.assign(T * I, 0.0);
        ws.dh_next.assign(H, 0.0);
        ws.dc_next.assign(H, 0.0);
        ws.da.resize(4 * H);
        ws.dz.resize(C);
        for (std::size_t t = T; t-- > 0;) {
            const double* a = lc.gates.data() + t * 4 * H;
            const double* c_prev = lc.c.data() + t * H;
            const double* tc = lc.tc.data() + t * H;
            const double* dout = ws.dout.data() + t * H;
            for (std::size_t j = 0; j < H; ++j) {
                const double ig = a[j], fg = a[H + j], gg = a[2 * H + j], og = a[3 * H + j];
                const double dh = (masked ? dout[j] * lc.mask[t * H + j] : dout[j]) + ws.dh_next[j];
                const double dog = dh * tc[j];
                const double dc = dh * og * (1.0 - tc[j] * tc[j]) + ws.dc_next[j];
                const double dig = dc * gg;
                const double dgg = dc * ig;
                const double dfg = dc * c_prev[j];
                ws.dc_next[j] = dc * fg;
                ws.da[j] = dig * ig * (1.0 - ig);
                ws.da[H + j] = dfg * fg * (1.0 - fg);
                ws.da[2 * H + j] = dgg * (1.0 - gg * gg);
                ws.da[3 * H + j] = dog * og * (1.0 - og);
            }
            const double* z = lc.z.data() + t * C;
            std::fill(ws.dz.begin(), ws.dz.end(), 0.0);
            for (std::size_t r = 0; r < 4 * H; ++r) {
                const double d = ws.da[r];
                g.bias[r] += d;
                double* gw = g.weights.data() + r * C;
                const double* w = p.weights.data() + r * C;
                for (std::size_t k = 0; k < C; ++k) {
                    gw[k] += d * z[k];
                    ws.dz[k] += d * w[k];
                }
            }
            std::copy_n(ws.dz.data(), I, ws.din.data() + t * I);
            std::copy_n(ws.dz.data() + I, H, ws.dh_next.data());
        }
        if (li > 0) {
            ws.dout.swap(ws.din);
        }
    }
}

// ---------------------------------------------------------------------------
// Windowed datasets

/// One contiguous recording: row-major samples (n x features) with per-sample targets.
struct StreamSegment {
    std::vector<double> samples;
    std::vector<double> force;
    std::vector<int> labels;
    std::vector<double> times;

    std::size_t length(std::size_t features) const { return samples.size() / features; }
};

/// Stride-1 windows over normalised segments. Windows never cross a segment boundary;
/// each window's target is the force/label of its final sample.
class WindowDataset {
public:
    WindowDataset() = default;

    std::size_t size() const { return index_.size(); }
    bool empty() const { return index_.empty(); }
    std::size_t sequence_length() const { return seq_len_; }
    std::size_t features() const { return features_; }
    const Normalization& normalization() const { return norm_; }
    const std::vector<StreamSegment>& segments() const { return segments_; }

    std::span<const double> window(std::size_t i) const
    {
        const auto [seg, end] = index_[i];
        const auto& s = segments_[seg].samples;
        const std::size_t begin = (end + 1 - seq_len_) * features_;
        return {s.data() + begin, seq_len_ * features_};
    }

    Target target(std::size_t i) const
    {
        const auto [seg, end] = index_[i];
        const auto& s = segments_[seg];
        return {s.force.empty() ? 0.0 : s.force[end], s.labels.empty() ? 0 : s.labels[end]};
    }

    /// (segment, final sample index) of window i.
    std::pair<std::size_t, std::size_t> position(std::size_t i) const { return index_[i]; }

    friend WindowDataset build_windows(std::vector<StreamSegment> stream, std::size_t sequence_length,
                                       std::size_t features,
                                       const std::optional<Normalization>& norm);

private:
    std::size_t seq_len_ = 0;
    std::size_t features_ = 0;
    Normalization norm_;
    std::vector<StreamSegment> segments_;
    std::vector<std::pair<std::size_t, std::size_t>> index_;
};

/// Build stride-1 windows. Without `norm`, statistics are fitted on these segments
/// (use that for the training split and pass its stats to val/test).
inline WindowDataset build_windows(std::vector<StreamSegment> stream, std::size_t sequence_length,
                                   std::size_t features,
                                   const std::optional<Normalization>& norm = std::nullopt)
{
    check(sequence_length >= 1 && features >= 1, ErrorCode::InvalidConfig,
          "sequence_length and features must be >= 1");
    WindowDataset ds;
    ds.seq_len_ = sequence_length;
    ds.features_ = features;
    std::vector<double> all;
    for (const auto& seg : stream) {
        check(seg.samples.size() % features == 0, ErrorCode::ShapeMismatch,
              "segment samples not a whole number of rows");
        const auto n = seg.length(features);
        if (n < sequence_length) {
            throw Error(ErrorCode::TooShort, "segment of " + std::to_string(n) +
                                                 " samples is shorter than window " +
                                                 std::to_string(sequence_length));
        }
        check(seg.force.empty() || seg.force.size() == n, ErrorCode::ShapeMismatch,
              "force length differs from samples");
        check(seg.labels.empty() || seg.labels.size() == n, ErrorCode::ShapeMismatch,
              "labels length differs from samples");
        if (!norm) {
            all.insert(all.end(), seg.samples.begin(), seg.samples.end());
        }
    }
    check(!stream.empty(), ErrorCode::TooShort, "no segments");
    ds.norm_ = norm ? *norm : Normalization::fit(all, features);
    for (std::size_t s = 0; s < stream.size(); ++s) {
        auto& seg = stream[s];
        const auto n = seg.length(features);
        for (std::size_t i = 0; i < n; ++i) {
            ds.norm_.apply(std::span<double>(seg.samples.data() + i * features, features));
        }
        for (std::size_t end = sequence_length - 1; end < n; ++end) {
            ds.index_.emplace_back(s, end);
        }
    }
    ds.segments_ = std::move(stream);
    return ds;
}

// ---------------------------------------------------------------------------
// Training

struct TrainConfig {
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    std::size_t batch_size = 64;
    std::size_t max_epochs = 500;
    std::size_t patience = 20;
    std::uint64_t seed = 0;
    // Windows drawn (without replacement, fresh shuffle each epoch) per epoch; 0 = all.
    std::size_t windows_per_epoch = 0;
    // Evenly spaced validation windows scored per epoch; 0 = all.
    std::size_t val_windows = 0;

    void validate() const
    {
        check(patience >= 1, ErrorCode::InvalidConfig, "patience must be >= 1");
        check(learning_rate > 0.0, ErrorCode::InvalidConfig, "learning_rate must be > 0");
        check(batch_size >= 1, ErrorCode::InvalidConfig, "batch_size must be >= 1");
        check(max_epochs >= 1, ErrorCode::InvalidConfig, "max_epochs must be >= 1");
    }
};

/// Tracks the best validation loss; `update` says when to stop.
class EarlyStopping {
public:
    explicit EarlyStopping(std::size_t patience) : patience_(patience) {}

    /// Record the loss of `epoch`; true once `patience` epochs passed without improvement.
    bool update(std::size_t epoch, double loss)
    {
        if (loss < best_) {
            best_ = loss;
            best_epoch_ = epoch;
            since_ = 0;
            return false;
        }
        ++since_;
        return since_ >= patience_;
    }

    bool improved_at(std::size_t epoch) const { return best_epoch_ == epoch; }
    double best_loss() const { return best_; }
    std::size_t best_epoch() const { return best_epoch_; }

private:
    std::size_t patience_;
    double best_ = std::numeric_limits<double>::infinity();
    std::size_t best_epoch_ = 0;
    std::size_t since_ = 0;
};

class Adam {
public:
    Adam(std::size_t n, const TrainConfig& cfg) : m_(n, 0.0), v_(n, 0.0), cfg_(cfg) {}

    void step(std::span<double> params, std::span<const double> grad)
    {
        ++t_;
        const double b1 = cfg_.beta1, b2 = cfg_.beta2;
        const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
        const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
        for (std::size_t i = 0; i < params.size(); ++i) {
            m_[i] = b1 * m_[i] + (1.0 - b1) * grad[i];
            v_[i] = b2 * v_[i] + (1.0 - b2) * grad[i] * grad[i];
            const double mhat = m_[i] / c1;
            const double vhat = v_[i] / c2;
            params[i] -= cfg_.learning_rate * mhat / (std::sqrt(vhat) + cfg_.epsilon);
        }
    }

private:
    std::vector<double> m_, v_;
    TrainConfig cfg_;
    std::uint64_t t_ = 0;
};

struct EpochRecord {
    std::size_t epoch = 0;
    double train_loss = 0.0;
    double val_loss = 0.0;
};

struct TrainResult {
    LstmModel model; // parameters from the best validation epoch
    std::vector<EpochRecord> history;
    std::size_t best_epoch = 0;
    bool early_stopped = false;
};

inline std::vector<std::size_t> evenly_spaced(std::size_t n, std::size_t k)
{
    std::vector<std::size_t> idx;
    if (k == 0 || k >= n) {
        idx.resize(n);
        std::iota(idx.begin(), idx.end(), std::size_t{0});
        return idx;
    }
    idx.reserve(k);
    for (std::size_t i = 0; i < k; ++i) {
        idx.push_back(i * n / k);
    }
    return idx;
}

/// Mean loss over the given windows, dropout off.
inline double evaluate_loss(const LstmModel& model, const WindowDataset& ds,
                            std::span<const std::size_t> indices)
{
    Workspace ws;
    double sum = 0.0;
    for (auto i : indices) {
        forward(model, ds.window(i), ws);
        sum += sample_loss(model, ws, ds.target(i));
    }
    return indices.empty() ? 0.0 : sum / static_cast<double>(indices.size());
}

inline double evaluate_loss(const LstmModel& model, const WindowDataset& ds)
{
    const auto idx = evenly_spaced(ds.size(), 0);
    return evaluate_loss(model, ds, idx);
}

/// Mean loss and its gradient over a batch of windows.
inline double batch_gradient(const LstmModel& model, const WindowDataset& ds,
                             std::span<const std::size_t> batch, ModelParams& grad, Workspace& ws,
                             std::mt19937_64* dropout_rng)
{
    grad.set_zero();
    const double scale = 1.0 / static_cast<double>(batch.size());
    double loss = 0.0;
    for (auto i : batch) {
        forward(model, ds.window(i), ws, dropout_rng);
        const auto target = ds.target(i);
        loss += sample_loss(model, ws, target);
        backward(model, ws, target, scale, grad);
    }
    return loss * scale;
}

/// Hook called after every epoch; return false to stop early (used for progress output).
using EpochCallback = bool (*)(const EpochRecord&, void*);

inline TrainResult train(const WindowDataset& train_set, const WindowDataset& val_set,
                         const ModelConfig& model_config, const TrainConfig& cfg,
                         EpochCallback on_epoch = nullptr, void* user = nullptr)
{
    model_config.validate();
    cfg.validate();
    if (train_set.empty() || val_set.empty()) {
        throw Error(ErrorCode::EmptyDataset, "train and validation splits must be nonempty");
    }
    check(train_set.sequence_length() == model_config.sequence_length &&
          val_set.sequence_length() == model_config.sequence_length &&
          train_set.features() == model_config.input_features,
          ErrorCode::ShapeMismatch, "dataset windows do not match the model config");

    std::mt19937_64 rng(cfg.seed);
    LstmModel model = init_model(model_config, rng());
    model.norm = train_set.normalization();
    std::mt19937_64 shuffle_rng(rng());
    std::mt19937_64 dropout_rng(rng());

    ModelParams grad = ModelParams::zeros(model_config);
    auto flat = model.params.flatten();
    Adam adam(flat.size(), cfg);
    Workspace ws;
    EarlyStopping stopper(cfg.patience);

    std::vector<std::size_t> order(train_set.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    const auto val_idx = evenly_spaced(val_set.size(), cfg.val_windows);
    const std::size_t per_epoch = cfg.windows_per_epoch == 0
                                      ? order.size()
                                      : std::min(cfg.windows_per_epoch, order.size());

    TrainResult result;
    result.model = model;
    for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), shuffle_rng);
        double loss_sum = 0.0;
        std::size_t batches = 0;
        for (std::size_t b = 0; b < per_epoch; b += cfg.batch_size) {
            const auto n = std::min(cfg.batch_size, per_epoch - b);
            std::span<const std::size_t> batch(order.data() + b, n);
            loss_sum += batch_gradient(model, train_set, batch, grad, ws, &dropout_rng);
            ++batches;
            const auto g = grad.flatten();
            adam.step(flat, g);
            model.params.unflatten(flat);
        }
        EpochRecord rec{epoch, loss_sum / static_cast<double>(batches),
                        evaluate_loss(model, val_set, val_idx)};
        result.history.push_back(rec);
        const bool stop = stopper.update(epoch, rec.val_loss);
        if (stopper.improved_at(epoch)) {
            result.model = model;
            result.best_epoch = epoch;
        }
        if (on_epoch && !on_epoch(rec, user)) {
            break;
        }
        if (stop) {
            result.early_stopped = true;
            break;
        }
    }
    return result;
}

// ---------------------------------------------------------------------------
// Gradient verification

/// Random small model and batch; returns the max relative error between analytic and
/// central-difference (h = 1e-5) gradients over every parameter, dropout off.
inline double gradient_check(const ModelConfig& model_config, std::uint64_t seed,
                             std::size_t batch = 2)
{
    model_config.validate();
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(-0.5, 0.5);
    LstmModel model{model_config, ModelParams::zeros(model_config),
                    Normalization::identity(model_config.input_features)};
    model.params.for_each_block([&](const std::string&, std::span<double> b, std::size_t,
                                    std::size_t) {
        for (auto& v : b) {
            v = u(rng);
        }
    });
    if (model_config.task == Task::Force) {
        // keep the rectifier in its linear region so gradients are informative
        model.params.head.bias[0] = 1.0;
    }
    const std::size_t T = model_config.sequence_length;
    const std::size_t F = model_config.input_features;
    std::vector<std::vector<double>> xs(batch, std::vector<double>(T * F));
    std::vector<Target> ys(batch);
    std::uniform_int_distribution<int> cls(0, static_cast<int>(kContactClasses) - 1);
    for (std::size_t b = 0; b < batch; ++b) {
        for (auto& v : xs[b]) {
            v = 2.0 * u(rng);
        }
        ys[b] = {1.0 + u(rng), cls(rng)};
    }

    Workspace ws;
    auto loss_of = [&](const LstmModel& m) {
        double s = 0.0;
        for (std::size_t b = 0; b < batch; ++b) {
            forward(m, xs[b], ws);
            s += sample_loss(m, ws, ys[b]);
        }
        return s / static_cast<double>(batch);
    };

    ModelParams grad = ModelParams::zeros(model_config);
    for (std::size_t b = 0; b < batch; ++b) {
        forward(model, xs[b], ws);
        backward(model, ws, ys[b], 1.0 / static_cast<double>(batch), grad);
    }
    const auto analytic = grad.flatten();
    auto theta = model.params.flatten();
    const double h = 1e-5;
    double worst = 0.0;
    LstmModel probe = model;
    for (std::size_t i = 0; i < theta.size(); ++i) {
        const double saved = theta[i];
        theta[i] = saved + h;
        probe.params.unflatten(theta);
        const double lp = loss_of(probe);
        theta[i] = saved - h;
        probe.params.unflatten(theta);
        const double lm = loss_of(probe);
        theta[i] = saved;
        const double numeric = (lp - lm) / (2.0 * h);
        // Below ~1e-6 the central difference is round-off limited (|loss| * eps / h ~ 1e-11).
        const double denom = std::max({std::abs(analytic[i]), std::abs(numeric), 1e-6});
        worst = std::max(worst, std::abs(analytic[i] - numeric) / denom);
    }
    return worst;
}

// ---------------------------------------------------------------------------
// Inference

struct Prediction {
    double force = 0.0;
    int label = 0;
    std::vector<double> probabilities; // contact task only
};

inline Prediction to_prediction(const LstmModel& model, std::span<const double> out)
{
    Prediction p;
    if (model.config.task == Task::Force) {
        p.force = out[0];
    } else {
        p.probabilities.assign(out.begin(), out.end());
        p.label = static_cast<int>(std::max_element(out.begin(), out.end()) - out.begin());
    }
    return p;
}

inline Prediction predict(const LstmModel& model, std::span<const double> normalized_window,
                          Workspace& ws)
{
    return to_prediction(model, forward(model, normalized_window, ws));
}

struct TimingReport {
    std::size_t windows = 0;
    double median_s = 0.0;
    double p99_s = 0.0;
    double max_s = 0.0;
    double budget_s = 0.0;
    std::size_t over_budget = 0;

    bool within_budget() const { return p99_s <= budget_s; }
};

inline TimingReport summarize_latencies(std::vector<double> lat, double budget_s)
{
    TimingReport r;
    r.windows = lat.size();
    r.budget_s = budget_s;
    if (lat.empty()) {
        return r;
    }
    r.over_budget = static_cast<std::size_t>(
        std::count_if(lat.begin(), lat.end(), [&](double v) { return v > budget_s; }));
    std::sort(lat.begin(), lat.end());
    auto pct = [&](double q) {
        const auto k = static_cast<std::size_t>(std::ceil(q * static_cast<double>(lat.size()))) - 1;
        return lat[std::min(k, lat.size() - 1)];
    };
    r.median_s = pct(0.5);
    r.p99_s = pct(0.99);
    r.max_s = lat.back();
    return r;
}

struct StreamInference {
    std::vector<Prediction> predictions; // one per full window, in arrival order
    std::vector<double> latencies_s;
    TimingReport timing;
};

/// Sample-by-sample inference over a raw (un-normalised) stream, n x features row-major.
/// Once `sequence_length` samples have arrived, every new sample triggers one prediction
/// over the latest window; each tick is timed from sample arrival to prediction.
inline StreamInference infer_stream(std::span<const double> raw_stream, const LstmModel& model,
                                    double budget_s)
{
    const std::size_t F = model.config.input_features;
    const std::size_t T = model.config.sequence_length;
    check(raw_stream.size() % F == 0, ErrorCode::ShapeMismatch,
          "stream not a whole number of rows");
    const std::size_t n = raw_stream.size() / F;
    StreamInference out;
    Workspace ws;
    std::vector<double> ring(T * F, 0.0);
    std::vector<double> window(T * F);
    std::size_t head = 0;
    using clock = std::chrono::steady_clock;
    for (std::size_t i = 0; i < n; ++i) {
        const auto t0 = clock::now();
        double* slot = ring.data() + head * F;
        std::copy_n(raw_stream.data() + i * F, F, slot);
        model.norm.apply(std::span<double>(slot, F));
        head = (head + 1) % T;
        if (i + 1 < T) {
            continue;
        }
        // oldest sample sits at `head`
        const std::size_t first = head * F;
        std::copy(ring.begin() + static_cast<std::ptrdiff_t>(first), ring.end(), window.begin());
        std::copy_n(ring.begin(), first, window.begin() + static_cast<std::ptrdiff_t>(T * F - first));
        out.predictions.push_back(predict(model, window, ws));
        const auto t1 = clock::now();
        out.latencies_s.push_back(std::chrono::duration<double>(t1 - t0).count());
    }
    out.timing = summarize_latencies(out.latencies_s, budget_s);
    return out;
}

// ---------------------------------------------------------------------------
// Serialisation: line-oriented text, shortest round-trip decimal for every double.

inline constexpr int kModelFormatVersion = 1;

namespace detail {

inline std::string fmt_double(double v)
{
    char buf[32];
    auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

inline double parse_double(const std::string& s)
{
    double v = 0.0;
    auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc{} || res.ptr != s.data() + s.size()) {
        throw Error(ErrorCode::InvalidConfig, "bad number '" + s + "' in model file");
    }
    return v;
}

} // namespace detail

inline void save_model(const LstmModel& m, std::ostream& os)
{
    using detail::fmt_double;
    os << "sipo-lstm-model\n";
    os << "format_version " << kModelFormatVersion << "\n";
    os << "task " << to_string(m.config.task) << "\n";
    os << "input_features " << m.config.input_features << "\n";
    os << "sequence_length " << m.config.sequence_length << "\n";
    os << "hidden_sizes " << m.config.hidden_sizes.size();
    for (auto h : m.config.hidden_sizes) {
        os << ' ' << h;
    }
    os << "\n";
    os << "dropout_rate " << fmt_double(m.config.dropout_rate) << "\n";
    auto vec = [&](const char* name, const std::vector<double>& v) {
        os << name << ' ' << v.size();
        for (double x : v) {
            os << ' ' << fmt_double(x);
        }
        os << "\n";
    };
    vec("norm_mean", m.norm.mean);
    vec("norm_std", m.norm.std);
    const_cast<LstmModel&>(m).params.for_each_block(
        [&](const std::string& name, std::span<double> b, std::size_t rows, std::size_t cols) {
            os << "tensor " << name << ' ' << rows << ' ' << cols << "\n";
            for (std::size_t i = 0; i < b.size(); ++i) {
                os << (i ? " " : "") << fmt_double(b[i]);
            }
            os << "\n";
        });
    os << "end\n";
}

inline LstmModel load_model(std::istream& is)
{
    auto expect = [&](const std::string& key) {
        std::string k;
        is >> k;
        if (k != key) {
            throw Error(ErrorCode::ModelMismatch, "model file: expected '" + key + "', got '" + k + "'");
        }
    };
    auto word = [&] {
        std::string w;
        if (!(is >> w)) {
            throw Error(ErrorCode::ModelMismatch, "model file truncated");
        }
        return w;
    };
    auto count = [&] { return static_cast<std::size_t>(std::stoull(word())); };
    expect("sipo-lstm-model");
    expect("format_version");
    const auto version = std::stoi(word());
    if (version != kModelFormatVersion) {
        throw Error(ErrorCode::ModelMismatch, "unsupported model format version " + std::to_string(version));
    }
    ModelConfig cfg;
    expect("task");
    cfg.task = task_from_string(word());
    expect("input_features");
    cfg.input_features = count();
    expect("sequence_length");
    cfg.sequence_length = count();
    expect("hidden_sizes");
    cfg.hidden_sizes.resize(count());
    for (auto& h : cfg.hidden_sizes) {
        h = count();
    }
    expect("dropout_rate");
    cfg.dropout_rate = detail::parse_double(word());
    cfg.validate();
    LstmModel m{cfg, ModelParams::zeros(cfg), {}};
    auto vec = [&](const char* name, std::vector<double>& v) {
        expect(name);
        v.resize(count());
        for (auto& x : v) {
            x = detail::parse_double(word());
        }
        check(v.size() == cfg.input_features, ErrorCode::ShapeMismatch,
              std::string(name) + " length does not match input_features");
    };
    vec("norm_mean", m.norm.mean);
    vec("norm_std", m.norm.std);
    m.params.for_each_block(
        [&](const std::string& name, std::span<double> b, std::size_t rows, std::size_t cols) {
            expect("tensor");
            expect(name);
            const auto r = count();
            const auto c = count();
            if (r != rows || c != cols) {
                throw Error(ErrorCode::ShapeMismatch, "tensor " + name + " has shape " +
                                                          std::to_string(r) + "x" + std::to_string(c));
            }
            for (auto& x : b) {
                x = detail::parse_double(word());
            }
        });
    expect("end");
    return m;
}

inline std::string model_to_string(const LstmModel& m)
{
    std::ostringstream os;
    save_model(m, os);
    return os.str();
}

inline LstmModel model_from_string(const std::string& s)
{
    std::istringstream is(s);
    return load_model(is);
}

} // namespace sipo::lstm

#endif // SIPO_LSTM_HPP
