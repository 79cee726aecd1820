#ifndef SIPO_PROTOCOL_HPP
#define SIPO_PROTOCOL_HPP

// Wire layout (all payload fields little-endian, CRC big-endian):
//
//   off  size  field
//   0    2     sync 0xAA 0x55
//   2    1     version (1)
//   3    2     sequence (mod 2^16)
//   5    4     timestamp_us (mod 2^32)
//   9    1     channel_count
//   10   2*n   samples
//   10+2n 2    CRC-16/CCITT-FALSE over bytes [2, 10+2n)

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "sipo/error.hpp"
#include "sipo/readout.hpp"

namespace sipo::protocol {

using readout::SampleFrame;

inline constexpr std::uint8_t kSync0 = 0xAA;
inline constexpr std::uint8_t kSync1 = 0x55;
inline constexpr std::uint8_t kVersion = 1;
inline constexpr std::size_t kHeaderSize = 10;
inline constexpr std::size_t kCrcSize = 2;
inline constexpr std::size_t kMaxChannels = 255;

inline constexpr std::size_t frame_size(std::size_t channels)
{
    return kHeaderSize + 2 * channels + kCrcSize;
}

namespace detail {

constexpr std::array<std::uint16_t, 256> make_crc_table()
{
    std::array<std::uint16_t, 256> table{};
    for (unsigned i = 0; i < 256; ++i) {
        std::uint16_t crc = static_cast<std::uint16_t>(i << 8);
        for (int b = 0; b < 8; ++b) {
            crc = (crc & 0x8000) ? static_cast<std::uint16_t>((crc << 1) ^ 0x1021)
                                 : static_cast<std::uint16_t>(crc << 1);
        }
        table[i] = crc;
    }
    return table;
}

inline constexpr auto kCrcTable = make_crc_table();

} // namespace detail

/// CRC-16/CCITT-FALSE: poly 0x1021, init 0xFFFF, no reflection, no final xor.
inline std::uint16_t crc16_ccitt_false(std::span<const std::uint8_t> data,
                                       std::uint16_t crc = 0xFFFF)
{
    for (auto byte : data) {
        crc = static_cast<std::uint16_t>((crc << 8) ^ detail::kCrcTable[((crc >> 8) ^ byte) & 0xFF]);
    }
    return crc;
}

inline void encode_frame_into(const SampleFrame& frame, std::vector<std::uint8_t>& out)
{
    if (frame.samples.size() > kMaxChannels) {
        throw Error(ErrorCode::TooManyChannels,
                    std::to_string(frame.samples.size()) + " channels (max 255)");
    }
    const auto start = out.size();
    const auto seq = static_cast<std::uint16_t>(frame.sequence & 0xFFFF);
    const auto ts = static_cast<std::uint32_t>(frame.timestamp_us & 0xFFFFFFFFu);
    out.push_back(kSync0);
    out.push_back(kSync1);
    out.push_back(kVersion);
    out.push_back(static_cast<std::uint8_t>(seq));
    out.push_back(static_cast<std::uint8_t>(seq >> 8));
    for (int i = 0; i < 4; ++i) {
        out.push_back(static_cast<std::uint8_t>(ts >> (8 * i)));
    }
    out.push_back(static_cast<std::uint8_t>(frame.samples.size()));
    for (auto s : frame.samples) {
        out.push_back(static_cast<std::uint8_t>(s));
        out.push_back(static_cast<std::uint8_t>(s >> 8));
    }
    const auto crc = crc16_ccitt_false(
        std::span<const std::uint8_t>(out.data() + start + 2, out.size() - start - 2));
    out.push_back(static_cast<std::uint8_t>(crc >> 8));
    out.push_back(static_cast<std::uint8_t>(crc));
}

inline std::vector<std::uint8_t> encode_frame(const SampleFrame& frame)
{
    std::vector<std::uint8_t> out;
    out.reserve(frame_size(frame.samples.size()));
    encode_frame_into(frame, out);
    return out;
}

struct Diagnostics {
    std::uint64_t crc_failures = 0;
    std::uint64_t bad_versions = 0;
    std::uint64_t resyncs = 0;       // times the parser had to hunt for the next sync
    std::uint64_t dropped_bytes = 0; // bytes discarded outside any emitted frame
    std::uint64_t truncated_bytes = 0; // partial frame left at end of stream (set by finish())

    bool clean() const noexcept
    {
        return crc_failures == 0 && bad_versions == 0 && dropped_bytes == 0 &&
               truncated_bytes == 0;
    }

    bool operator==(const Diagnostics&) const = default;
};

/// Incremental frame parser. Feed arbitrary chunks; frames split across chunk
/// boundaries are reassembled. On a bad frame only the leading sync byte is
/// discarded, so a real frame hiding inside a corrupt one is still found.
class FrameDecoder {
public:
    /// Consume a chunk, appending every complete valid frame to `out`.
    void feed(std::span<const std::uint8_t> bytes, std::vector<SampleFrame>& out)
    {
        buf_.insert(buf_.end(), bytes.begin(), bytes.end());
        parse(out);
        compact();
    }

    std::vector<SampleFrame> feed(std::span<const std::uint8_t> bytes)
    {
        std::vector<SampleFrame> out;
        feed(bytes, out);
        return out;
    }

    /// Declare end of stream: whatever is still buffered is a truncated frame.
    void finish()
    {
        const auto rest = buf_.size() - head_;
        if (rest > 0) {
            diag_.truncated_bytes += rest;
            diag_.dropped_bytes += rest;
        }
        buf_.clear();
        head_ = 0;
        hunting_ = false;
    }

    const Diagnostics& diagnostics() const noexcept { return diag_; }
    std::size_t buffered() const noexcept { return buf_.size() - head_; }

private:
    void discard(std::size_t n)
    {
        if (!hunting_) {
            ++diag_.resyncs;
            hunting_ = true;
        }
        diag_.dropped_bytes += n;
        head_ += n;
    }

    void parse(std::vector<SampleFrame>& out)
    {
        for (;;) {
            const std::size_t avail = buf_.size() - head_;
            const std::uint8_t* p = buf_.data() + head_;
            // Hunt for 0xAA 0x55. A trailing lone 0xAA is kept for the next chunk.
            std::size_t skip = 0;
            while (skip < avail && !(p[skip] == kSync0 && (skip + 1 == avail || p[skip + 1] == kSync1))) {
                ++skip;
            }
            if (skip > 0) {
                discard(skip);
                continue;
            }
            if (avail < kHeaderSize) {
                return;
            }
            if (p[2] != kVersion) {
                ++diag_.bad_versions;
                discard(1);
                continue;
            }
            const std::size_t channels = p[9];
            const std::size_t total = frame_size(channels);
            if (avail < total) {
                return;
            }
            const std::uint16_t want =
                static_cast<std::uint16_t>((p[total - 2] << 8) | p[total - 1]);
            const std::uint16_t got =
                crc16_ccitt_false(std::span<const std::uint8_t>(p + 2, total - 4));
            if (want != got) {
                ++diag_.crc_failures;
                discard(1);
                continue;
            }
            SampleFrame f;
            f.sequence = static_cast<std::uint16_t>(p[3] | (p[4] << 8));
            f.timestamp_us = static_cast<std::uint32_t>(p[5]) |
                             (static_cast<std::uint32_t>(p[6]) << 8) |
                             (static_cast<std::uint32_t>(p[7]) << 16) |
                             (static_cast<std::uint32_t>(p[8]) << 24);
            f.samples.resize(channels);
            for (std::size_t c = 0; c < channels; ++c) {
                f.samples[c] = static_cast<std::uint16_t>(p[10 + 2 * c] | (p[11 + 2 * c] << 8));
            }
            out.push_back(std::move(f));
            head_ += total;
            hunting_ = false;
        }
    }

    void compact()
    {
        if (head_ > 0 && (head_ >= 4096 || head_ == buf_.size())) {
            buf_.erase(buf_.begin(), buf_.begin() + static_cast<std::ptrdiff_t>(head_));
            head_ = 0;
        }
    }

    std::vector<std::uint8_t> buf_;
    std::size_t head_ = 0;
    bool hunting_ = false;
    Diagnostics diag_;
};

/// Functional form: feed one chunk through a caller-owned decoder.
inline std::vector<SampleFrame> decode_stream(std::span<const std::uint8_t> bytes,
                                              FrameDecoder& state)
{
    return state.feed(bytes);
}

struct Gap {
    std::uint16_t after = 0; // last sequence seen before the gap
    std::uint32_t missing = 0;

    bool operator==(const Gap&) const = default;
};

struct GapReport {
    std::vector<Gap> gaps;
    std::uint64_t total_missing = 0;
    std::uint64_t duplicates = 0;

    bool ok() const noexcept { return gaps.empty() && duplicates == 0; }
};

/// Missing-frame accounting over 16-bit wrapping sequence numbers.
inline GapReport sequence_gap_check(std::span<const std::uint16_t> sequences)
{
    GapReport report;
    for (std::size_t i = 1; i < sequences.size(); ++i) {
        const auto step = static_cast<std::uint16_t>(sequences[i] - sequences[i - 1]);
        if (step == 0) {
            ++report.duplicates;
        } else if (step > 1) {
            report.gaps.push_back({sequences[i - 1], static_cast<std::uint32_t>(step - 1)});
            report.total_missing += step - 1u;
        }
    }
    return report;
}

inline GapReport sequence_gap_check(std::span<const SampleFrame> frames)
{
    std::vector<std::uint16_t> seqs;
    seqs.reserve(frames.size());
    for (const auto& f : frames) {
        seqs.push_back(static_cast<std::uint16_t>(f.sequence & 0xFFFF));
    }
    return sequence_gap_check(std::span<const std::uint16_t>(seqs));
}

} // namespace sipo::protocol

#endif // SIPO_PROTOCOL_HPP
