#pragma once

#include <stdexcept>
#include <string>

namespace mgdpr {

// Every failure raised by the library derives from Error so callers can
// catch a single type; the concrete subclass tells the CLI which exit code
// to use.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DimensionError : public Error { public: using Error::Error; };
class DomainError : public Error { public: using Error::Error; };
class NumericError : public Error { public: using Error::Error; };
class UsageError : public Error { public: using Error::Error; };
class ConfigError : public Error { public: using Error::Error; };

// input data problems (CLI exit 2)
class DataError : public Error { public: using Error::Error; };
class FormatError : public DataError { public: using DataError::DataError; };
class EmptyInputError : public DataError { public: using DataError::DataError; };
class CoverageError : public DataError { public: using DataError::DataError; };
class InsufficientDataError : public DataError { public: using DataError::DataError; };

// graph construction (CLI exit 3)
class GraphError : public Error { public: using Error::Error; };
class DegenerateSeriesError : public GraphError { public: using GraphError::GraphError; };

// training (CLI exit 4)
class DivergenceError : public Error { public: using Error::Error; };

// checkpoint (CLI exit 6)
class CheckpointError : public Error { public: using Error::Error; };

}  // namespace mgdpr
