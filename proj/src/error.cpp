#include "pairsync/error.hpp"

namespace pairsync {

std::string_view to_string(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::BadMagic: return "BadMagic";
    case ErrorCode::BadVersion: return "BadVersion";
    case ErrorCode::TruncatedHeader: return "TruncatedHeader";
    case ErrorCode::TruncatedRecord: return "TruncatedRecord";
    case ErrorCode::NonMonotonic: return "NonMonotonic";
    case ErrorCode::BadRecord: return "BadRecord";
    case ErrorCode::IoError: return "IoError";
    case ErrorCode::BadConfig: return "BadConfig";
    case ErrorCode::EmptyWindow: return "EmptyWindow";
    case ErrorCode::NoPeak: return "NoPeak";
    case ErrorCode::NotConverged: return "NotConverged";
    case ErrorCode::DegenerateOverlap: return "DegenerateOverlap";
    case ErrorCode::NormalizationUndefined: return "NormalizationUndefined";
    case ErrorCode::TrackingFailed: return "TrackingFailed";
    case ErrorCode::RankDeficient: return "RankDeficient";
    case ErrorCode::SeriesTooShort: return "SeriesTooShort";
    case ErrorCode::BadLength: return "BadLength";
    case ErrorCode::BadType: return "BadType";
    case ErrorCode::Truncated: return "Truncated";
    case ErrorCode::AuthFail: return "AuthFail";
    case ErrorCode::ParameterMismatch: return "ParameterMismatch";
    case ErrorCode::PeerDisconnected: return "PeerDisconnected";
  }
  return "Unknown";
}

}  // namespace pairsync
