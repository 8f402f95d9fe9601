#pragma once

#include <stdexcept>
#include <string>

namespace made {

// Every failure raised by the library derives from Error. The CLI maps the
// two families below onto exit codes (validation -> 3, runtime -> 4).
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ValidationError : public Error {
 public:
  using Error::Error;
};

class RuntimeFailure : public Error {
 public:
  using Error::Error;
};

class SchemaError : public ValidationError { using ValidationError::ValidationError; };
class EncodingError : public ValidationError { using ValidationError::ValidationError; };
class AlignmentError : public ValidationError { using ValidationError::ValidationError; };
class ArgumentError : public ValidationError { using ValidationError::ValidationError; };
class ConfigError : public ValidationError { using ValidationError::ValidationError; };
class ShapeError : public ValidationError { using ValidationError::ValidationError; };
class LoadError : public ValidationError { using ValidationError::ValidationError; };
class ParseError : public ValidationError { using ValidationError::ValidationError; };

class LookupError : public RuntimeFailure { using RuntimeFailure::RuntimeFailure; };
class SamplingError : public RuntimeFailure { using RuntimeFailure::RuntimeFailure; };
class MiningError : public RuntimeFailure { using RuntimeFailure::RuntimeFailure; };
class ProtocolError : public RuntimeFailure { using RuntimeFailure::RuntimeFailure; };
class NumericError : public RuntimeFailure { using RuntimeFailure::RuntimeFailure; };
class IoError : public RuntimeFailure { using RuntimeFailure::RuntimeFailure; };

}  // namespace made
