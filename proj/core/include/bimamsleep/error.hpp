#pragma once

#include <stdexcept>
#include <string>

namespace bimamsleep {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Bad tensor shapes or argument combinations passed to a kernel.
class ShapeError : public Error {
public:
    using Error::Error;
};

class NumericError : public Error {
public:
    using Error::Error;
};

// Invalid configuration values (maps to CLI exit code 2).
class ConfigError : public Error {
public:
    using Error::Error;
};

// Problems with input data: missing files, malformed recordings (CLI exit code 3).
class DataError : public Error {
public:
    using Error::Error;
};

class EmptyDatasetError : public DataError {
public:
    using DataError::DataError;
};

class FormatError : public DataError {
public:
    using DataError::DataError;
};

class EpbMagicError : public FormatError {
public:
    using FormatError::FormatError;
};

class EpbVersionError : public FormatError {
public:
    using FormatError::FormatError;
};

class EpbTruncatedError : public FormatError {
public:
    using FormatError::FormatError;
};

class EpbNonFiniteError : public FormatError {
public:
    using FormatError::FormatError;
};

} // namespace bimamsleep
