#pragma once

#include <stdexcept>

namespace sll {

// Invalid run configuration or malformed input file.
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// An iteration failed to converge or a non-finite value appeared mid-computation.
struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// A pipeline target (e.g. the required attack success rate after poisoning) was not met.
struct PipelineError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

} // namespace sll
