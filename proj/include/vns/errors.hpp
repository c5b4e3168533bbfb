#pragma once

#include <stdexcept>
#include <string>

namespace vns {

enum class ErrorKind {
  Config,
  CflViolation,
  BlowupDetected,
  NoConvergence,
  FieldUnavailable,
  GrazingUnresolved,
  NoClosedLine,
  NoProgress,
  ScheduleInfeasible,
  DomainGap,
  GridMismatch,
  InsufficientCheckpoints,
  InterpolationOutOfRange,
  Io
};

const char* to_string(ErrorKind k);

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}
  ErrorKind kind() const { return kind_; }

 private:
  ErrorKind kind_;
};

inline const char* to_string(ErrorKind k) {
  switch (k) {
    case ErrorKind::Config: return "ConfigError";
    case ErrorKind::CflViolation: return "CflViolation";
    case ErrorKind::BlowupDetected: return "BlowupDetected";
    case ErrorKind::NoConvergence: return "NoConvergence";
    case ErrorKind::FieldUnavailable: return "FieldUnavailable";
    case ErrorKind::GrazingUnresolved: return "GrazingUnresolved";
    case ErrorKind::NoClosedLine: return "NoClosedLine";
    case ErrorKind::NoProgress: return "NoProgress";
    case ErrorKind::ScheduleInfeasible: return "ScheduleInfeasible";
    case ErrorKind::DomainGap: return "DomainGap";
    case ErrorKind::GridMismatch: return "GridMismatch";
    case ErrorKind::InsufficientCheckpoints: return "InsufficientCheckpoints";
    case ErrorKind::InterpolationOutOfRange: return "InterpolationOutOfRange";
    case ErrorKind::Io: return "IoError";
  }
  return "Error";
}

}  // namespace vns
