#pragma once

#include <stdexcept>
#include <string>

namespace milk {

// Coarse error classes. The CLI maps them onto process exit codes.
enum class ErrorKind {
  usage = 1,      // bad configuration or contract misuse
  data = 2,       // malformed or inconsistent input data
  numerical = 3,  // divergence, NaN, failed tolerance
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

#define MILK_DEFINE_ERROR(Name, Kind)                               \
  class Name : public Error {                                       \
   public:                                                          \
    explicit Name(const std::string& what) : Error(Kind, what) {}   \
  }

MILK_DEFINE_ERROR(ParseError, ErrorKind::data);
MILK_DEFINE_ERROR(DimensionError, ErrorKind::data);
MILK_DEFINE_ERROR(DataError, ErrorKind::data);
MILK_DEFINE_ERROR(SplitError, ErrorKind::data);
MILK_DEFINE_ERROR(ImputeError, ErrorKind::data);
MILK_DEFINE_ERROR(FitError, ErrorKind::data);
MILK_DEFINE_ERROR(ProtocolError, ErrorKind::usage);
MILK_DEFINE_ERROR(ParameterError, ErrorKind::usage);
MILK_DEFINE_ERROR(ContractError, ErrorKind::usage);
MILK_DEFINE_ERROR(ConfigError, ErrorKind::usage);
MILK_DEFINE_ERROR(NumericalError, ErrorKind::numerical);

#undef MILK_DEFINE_ERROR

}  // namespace milk
