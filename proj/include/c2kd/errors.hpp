#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace c2kd {

// Shape/dimension mismatches between tensors or batches.
struct ShapeError : std::invalid_argument {
    explicit ShapeError(const std::string& msg) : std::invalid_argument(msg) {}
};

// Out-of-range or otherwise invalid scalar parameters (temperatures,
// balance weights, batch sizes, cutoff ranks, ...).
struct ParamError : std::invalid_argument {
    explicit ParamError(const std::string& msg) : std::invalid_argument(msg) {}
};

// Caller-side contract violations on input values: empty sequences,
// non-unit embedding rows, non-stochastic target rows.
struct InputError : std::invalid_argument {
    explicit InputError(const std::string& msg) : std::invalid_argument(msg) {}
};

// Numerical failures at run time: degenerate embedding norms, non-finite
// losses or gradients, failed probe evaluations.
struct NumericError : std::runtime_error {
    explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

// Corpus/record level problems (missing languages, unknown record ids).
struct DataError : std::runtime_error {
    explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

// Binary file format violations. `offset` is the byte position at which
// the problem was detected.
struct FormatError : std::runtime_error {
    FormatError(const std::string& msg, std::uint64_t offset)
        : std::runtime_error(msg + " (at byte " + std::to_string(offset) + ")"),
          offset(offset) {}
    std::uint64_t offset;
};

// Experiment configuration problems. `field` is the JSON path of the
// offending entry when known.
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg, std::string field = {})
        : std::runtime_error(field.empty() ? msg : msg + " (field: " + field + ")"),
          field(std::move(field)) {}
    std::string field;
};

}  // namespace c2kd
