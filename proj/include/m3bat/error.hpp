#pragma once

#include <stdexcept>
#include <string>

namespace m3bat {

// Error taxonomy shared by the whole library. The CLI maps these onto
// exit codes (I/O -> 2, schema/validation -> 3).
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ShapeError : Error {
    using Error::Error;
};
struct ValidationError : Error {
    using Error::Error;
};
struct SchemaError : Error {
    using Error::Error;
};
struct StateError : Error {
    using Error::Error;
};
struct NumericError : Error {
    using Error::Error;
};
struct IoError : Error {
    using Error::Error;
};
// Pooled SD of zero with unequal means; callers map this to a capped value.
struct DegenerateShiftError : NumericError {
    using NumericError::NumericError;
};
struct DivergenceError : NumericError {
    using NumericError::NumericError;
};
struct UndefinedMetricError : ValidationError {
    using ValidationError::ValidationError;
};

}  // namespace m3bat
