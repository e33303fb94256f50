#pragma once

#include <stdexcept>
#include <string>

namespace seas {

/// Base of every library error. `kind()` is the machine-parsable class the CLI prints.
class Error : public std::runtime_error {
 public:
  Error(std::string kind, const std::string& what) : std::runtime_error(what), kind_(std::move(kind)) {}
  const std::string& kind() const noexcept { return kind_; }

 private:
  std::string kind_;
};

#define SEAS_DEFINE_ERROR(Name, Kind)                                          \
  class Name : public Error {                                                \
   public:                                                                   \
    explicit Name(const std::string& what) : Error(Kind, what) {}            \
  };

SEAS_DEFINE_ERROR(RangeError, "range_error")
SEAS_DEFINE_ERROR(DimensionError, "dimension_error")
SEAS_DEFINE_ERROR(NumericError, "numeric_error")
SEAS_DEFINE_ERROR(OrderingError, "ordering_error")
SEAS_DEFINE_ERROR(LookupError, "lookup_error")
SEAS_DEFINE_ERROR(ValidationError, "validation_error")
SEAS_DEFINE_ERROR(ConfigError, "config_error")
SEAS_DEFINE_ERROR(DataError, "data_error")
SEAS_DEFINE_ERROR(DivergenceError, "divergence_error")
SEAS_DEFINE_ERROR(CompatibilityError, "compatibility_error")
SEAS_DEFINE_ERROR(IoError, "io_error")
SEAS_DEFINE_ERROR(ParseError, "parse_error")
SEAS_DEFINE_ERROR(UndefinedMetricError, "undefined_metric")
SEAS_DEFINE_ERROR(MissingArtifactError, "missing_artifact")

#undef SEAS_DEFINE_ERROR

}  // namespace seas
