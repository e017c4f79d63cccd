#pragma once

#include <stdexcept>
#include <string>

namespace vtonlab {

// Root of every error the library throws.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class InvalidArgument : public Error {
public:
    using Error::Error;
};

// TryonNet and GarmentNet disagree on site count or token geometry.
class GarmentAlignmentError : public Error {
public:
    using Error::Error;
};

class ConfigurationError : public Error {
public:
    using Error::Error;
};

class TrainingDivergence : public Error {
public:
    using Error::Error;
};

class SamplingDivergence : public Error {
public:
    using Error::Error;
};

class PreprocessingError : public Error {
public:
    using Error::Error;
};

class EmptyGarmentError : public Error {
public:
    using Error::Error;
};

class DegenerateEmbedding : public Error {
public:
    using Error::Error;
};

class InsufficientSamples : public Error {
public:
    using Error::Error;
};

class PairingError : public Error {
public:
    using Error::Error;
};

class IoError : public Error {
public:
    using Error::Error;
};

class ParseError : public Error {
public:
    using Error::Error;
};

class SchemaError : public Error {
public:
    using Error::Error;
};

class DuplicateIdError : public SchemaError {
public:
    using SchemaError::SchemaError;
};

}  // namespace vtonlab
