#pragma once

#include <stdexcept>
#include <string>

namespace gmlm {

// Problems a caller can fix: bad files, bad config, mismatched inputs.
// The CLI maps these to exit code 2; everything else is a runtime failure (1).
class ValidationError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Malformed input file; carries the offending line where applicable.
class ParseError : public ValidationError {
public:
    using ValidationError::ValidationError;
};

// Raised by the gradient-check harness when its own preconditions fail,
// e.g. the closure under test is not deterministic.
class HarnessError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace gmlm
