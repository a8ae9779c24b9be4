#pragma once

#include <stdexcept>
#include <string>

namespace cspn {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Structural contract breakage: invalid circuit, violated precondition, bad schema.
class ValidationError : public Error {
public:
    using Error::Error;
};

// A value outside the support of a distribution family.
class DomainError : public Error {
public:
    using Error::Error;
};

// NaN/Inf where a finite value is required; divergence during optimization.
class NumericError : public Error {
public:
    using Error::Error;
};

class IoError : public Error {
public:
    using Error::Error;
};

// Malformed file contents (model file, CSV, schema).
class ParseError : public IoError {
public:
    using IoError::IoError;
};

}  // namespace cspn
