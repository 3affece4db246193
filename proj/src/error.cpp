#include "dbo/error.hpp"

namespace dbo {

std::string_view to_string(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::DimMismatch: return "DimMismatch";
    case ErrorKind::NotSPD: return "NotSPD";
    case ErrorKind::NotSymmetric: return "NotSymmetric";
    case ErrorKind::BreakdownDetected: return "BreakdownDetected";
    case ErrorKind::BadParameter: return "BadParameter";
    case ErrorKind::NotDoublyStochastic: return "NotDoublyStochastic";
    case ErrorKind::NotContractive: return "NotContractive";
    case ErrorKind::NoConvergence: return "NoConvergence";
    case ErrorKind::Divergence: return "Divergence";
    case ErrorKind::MissingInput: return "MissingInput";
    case ErrorKind::ParseError: return "ParseError";
    case ErrorKind::ValidationError: return "ValidationError";
    case ErrorKind::IoError: return "IoError";
  }
  return "Error";
}

}  // namespace dbo
