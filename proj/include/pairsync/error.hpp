#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace pairsync {

enum class ErrorCode {
  InvalidArgument,
  // tag files
  BadMagic,
  BadVersion,
  TruncatedHeader,
  TruncatedRecord,
  NonMonotonic,
  BadRecord,
  IoError,
  // config
  BadConfig,
  // correlation / fitting
  EmptyWindow,
  NoPeak,
  NotConverged,
  DegenerateOverlap,
  NormalizationUndefined,
  // analysis
  TrackingFailed,
  RankDeficient,
  SeriesTooShort,
  // wire
  BadLength,
  BadType,
  Truncated,
  AuthFail,
  ParameterMismatch,
  PeerDisconnected,
};

std::string_view to_string(ErrorCode code) noexcept;

/// Every failure raised by the library carries one of the codes above; the CLI
/// maps them onto exit codes.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace pairsync
