#pragma once

#include <stdexcept>
#include <string>

namespace ttrs {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Index outside a mode's extent.
class CoordinateError : public Error {
public:
    using Error::Error;
};

/// Requested object would exceed a size cap.
class SizeError : public Error {
public:
    using Error::Error;
};

/// Incompatible shapes, ranks or extents.
class ShapeError : public Error {
public:
    using Error::Error;
};

/// Invalid scalar argument.
class ArgumentError : public Error {
public:
    using Error::Error;
};

/// Requested rank is infeasible or inconsistent with the data.
class RankError : public Error {
public:
    using Error::Error;
};

/// Numerically degenerate input (zero matrix, vanishing singular value).
class DegenerateError : public Error {
public:
    using Error::Error;
};

/// Malformed file or JSON payload.
class ParseError : public Error {
public:
    using Error::Error;
};

/// Value outside its admissible range.
class RangeError : public Error {
public:
    using Error::Error;
};

/// Failure of a numerical check that should hold up to round-off.
class NumericalError : public Error {
public:
    using Error::Error;
};

/// Invalid experiment configuration; the message names the offending field.
class ConfigError : public Error {
public:
    using Error::Error;
};

/// Required input file is absent.
class MissingInputError : public Error {
public:
    using Error::Error;
};

}  // namespace ttrs
