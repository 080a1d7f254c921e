#pragma once

#include <stdexcept>
#include <string>

namespace iclnav {

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// map / config loading
struct ParseError final : Error { using Error::Error; };
struct ValidationError final : Error { using Error::Error; };
struct ConfigError final : Error { using Error::Error; };

// simulator
struct TaskMapMismatch final : Error { using Error::Error; };
struct SteppedAfterTerminal final : Error { using Error::Error; };

// instructions
struct UnsatisfiableTemplate final : Error { using Error::Error; };
struct TemplateMismatch final : Error { using Error::Error; };
struct EmptyAfterFiltering final : Error { using Error::Error; };
struct IndexOutOfRange final : Error { using Error::Error; };

// numerics
struct ShapeMismatch final : Error { using Error::Error; };
struct EmptySequence final : Error { using Error::Error; };
struct NoRecordedForward final : Error { using Error::Error; };
struct NonFiniteValue final : Error { using Error::Error; };

// agent
struct BufferTooSmall final : Error { using Error::Error; };
struct ShrinkNotAllowed final : Error { using Error::Error; };
struct CheckpointMismatch final : Error { using Error::Error; };

// metrics / plotting
struct EmptyInput final : Error { using Error::Error; };
struct MixedSchema final : Error { using Error::Error; };

}  // namespace iclnav
