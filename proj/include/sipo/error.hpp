#ifndef SIPO_ERROR_HPP
#define SIPO_ERROR_HPP

#include <stdexcept>
#include <string>

namespace sipo {

enum class ErrorCode {
    InvalidConfig,
    MultipleActive,
    SlotBudgetExceeded,
    TooManyChannels,
    LayoutMismatch,
    DegenerateInput,
    OutOfRange,
    ShapeMismatch,
    EmptyDataset,
    TooShort,
    UnknownPreset,
    PreconditionViolation,
    ModelMismatch,
};

inline const char* to_string(ErrorCode code)
{
    switch (code) {
    case ErrorCode::InvalidConfig: return "InvalidConfig";
    case ErrorCode::MultipleActive: return "MultipleActive";
    case ErrorCode::SlotBudgetExceeded: return "SlotBudgetExceeded";
    case ErrorCode::TooManyChannels: return "TooManyChannels";
    case ErrorCode::LayoutMismatch: return "LayoutMismatch";
    case ErrorCode::DegenerateInput: return "DegenerateInput";
    case ErrorCode::OutOfRange: return "OutOfRange";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::EmptyDataset: return "EmptyDataset";
    case ErrorCode::TooShort: return "TooShort";
    case ErrorCode::UnknownPreset: return "UnknownPreset";
    case ErrorCode::PreconditionViolation: return "PreconditionViolation";
    case ErrorCode::ModelMismatch: return "ModelMismatch";
    }
    return "Unknown";
}

/// Base exception for every library failure; `code()` identifies the contract that was broken.
class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& what)
        : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code)
    {
    }

    ErrorCode code() const noexcept { return code_; }

private:
    ErrorCode code_;
};

/// Raised by the scan scheduler; carries the fastest rate the slot budget allows.
class SlotBudgetExceeded : public Error {
public:
    SlotBudgetExceeded(double requested_hz, double max_hz)
        : Error(ErrorCode::SlotBudgetExceeded,
                "scan rate " + std::to_string(requested_hz) + " Hz exceeds ADC slot budget (max " +
                    std::to_string(max_hz) + " Hz)"),
          requested_hz_(requested_hz), max_hz_(max_hz)
    {
    }

    double requested_hz() const noexcept { return requested_hz_; }
    double max_hz() const noexcept { return max_hz_; }

private:
    double requested_hz_;
    double max_hz_;
};

/// Throws Error(code, what) unless `cond` holds.
inline void check(bool cond, ErrorCode code, const std::string& what)
{
    if (!cond) {
        throw Error(code, what);
    }
}

} // namespace sipo

#endif // SIPO_ERROR_HPP
