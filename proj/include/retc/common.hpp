#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace retc {

// Global scalar type. All model math runs in 64-bit; checkpoint files store
// 32-bit floats, so trained values are kept on the float32 grid (see snap_f32).
using Real = double;

enum class ErrorKind {
    Dimension,
    Usage,
    Vocabulary,
    Io,
    Training,
    Bench,
    Numeric,
};

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& msg)
        : std::runtime_error(msg), kind_(kind) {}

    ErrorKind kind() const { return kind_; }

    const char* kind_name() const {
        switch (kind_) {
            case ErrorKind::Dimension: return "dimension";
            case ErrorKind::Usage: return "usage";
            case ErrorKind::Vocabulary: return "vocabulary";
            case ErrorKind::Io: return "io";
            case ErrorKind::Training: return "training";
            case ErrorKind::Bench: return "bench";
            case ErrorKind::Numeric: return "numeric";
        }
        return "unknown";
    }

private:
    ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& msg) {
    throw Error(kind, msg);
}

#define RETC_CHECK(cond, kind, msg)                    \
    do {                                               \
        if (!(cond)) ::retc::fail((kind), (msg));      \
    } while (0)

// Rounds to the nearest float32-representable value. Parameters and optimizer
// state live on this grid so that 32-bit checkpoints round-trip bit-exactly
// and training can resume from a checkpoint without drift.
inline Real snap_f32(Real x) { return static_cast<Real>(static_cast<float>(x)); }

// When enabled, tensor ops verify that every produced entry is finite.
void set_finite_checks(bool on);
bool finite_checks_enabled();

}  // namespace retc
