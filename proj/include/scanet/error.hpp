#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace scanet {

/// Categories surfaced by the CLI as `error: <kind>: <message>`.
enum class ErrorKind {
  Parse,
  Integrity,
  Lookup,
  Spec,
  Dimension,
  Numeric,
  Domain,
  Estimation,
  Checkpoint,
  Config,
  Io,
  Divergence,
};

inline std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::Parse: return "parse";
    case ErrorKind::Integrity: return "integrity";
    case ErrorKind::Lookup: return "lookup";
    case ErrorKind::Spec: return "spec";
    case ErrorKind::Dimension: return "dimension";
    case ErrorKind::Numeric: return "numeric";
    case ErrorKind::Domain: return "domain";
    case ErrorKind::Estimation: return "estimation";
    case ErrorKind::Checkpoint: return "checkpoint";
    case ErrorKind::Config: return "config";
    case ErrorKind::Io: return "io";
    case ErrorKind::Divergence: return "divergence";
  }
  return "unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

/// Malformed input record. `line` is 1-based; 0 when not line-oriented.
class ParseError : public Error {
 public:
  ParseError(std::size_t line, const std::string& message)
      : Error(ErrorKind::Parse,
              line > 0 ? "line " + std::to_string(line) + ": " + message : message),
        line_(line) {}

  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

#define SCANET_DEFINE_ERROR(Name, Kind)                                \
  class Name : public Error {                                          \
   public:                                                             \
    explicit Name(const std::string& message) : Error(Kind, message) {} \
  };

SCANET_DEFINE_ERROR(IntegrityError, ErrorKind::Integrity)
SCANET_DEFINE_ERROR(LookupError, ErrorKind::Lookup)
SCANET_DEFINE_ERROR(SpecError, ErrorKind::Spec)
SCANET_DEFINE_ERROR(DimensionError, ErrorKind::Dimension)
SCANET_DEFINE_ERROR(NumericError, ErrorKind::Numeric)
SCANET_DEFINE_ERROR(DomainError, ErrorKind::Domain)
SCANET_DEFINE_ERROR(EstimationError, ErrorKind::Estimation)
SCANET_DEFINE_ERROR(CheckpointError, ErrorKind::Checkpoint)
SCANET_DEFINE_ERROR(ConfigError, ErrorKind::Config)
SCANET_DEFINE_ERROR(IoError, ErrorKind::Io)
SCANET_DEFINE_ERROR(DivergenceError, ErrorKind::Divergence)

#undef SCANET_DEFINE_ERROR

}  // namespace scanet
