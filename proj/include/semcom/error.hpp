#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace semcom {

enum class ErrorCode {
  InvalidSpec,
  ThresholdOrder,
  ClassOutOfRange,
  IoFailure,
  BadMagic,
  ShapeMismatch,
  Diverged,
  BadVersion,
  BadRange,
  StepOutOfRange,
  FeedbackUnresolved,
  BadThreshold,
  DimMismatch,
  PatchGridOverflow,
  MalformedPayload,
  IndexOutOfGrid,
  EmptyLedger,
  FrameCorrupt,
  UnknownType,
  ProtocolViolation,
  EmptyInput,
  ModelMissing,
  UnknownSession,
  NotReady,
  BadConfig,
};

constexpr std::string_view error_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidSpec: return "InvalidSpec";
    case ErrorCode::ThresholdOrder: return "ThresholdOrder";
    case ErrorCode::ClassOutOfRange: return "ClassOutOfRange";
    case ErrorCode::IoFailure: return "IoFailure";
    case ErrorCode::BadMagic: return "BadMagic";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::Diverged: return "Diverged";
    case ErrorCode::BadVersion: return "BadVersion";
    case ErrorCode::BadRange: return "BadRange";
    case ErrorCode::StepOutOfRange: return "StepOutOfRange";
    case ErrorCode::FeedbackUnresolved: return "FeedbackUnresolved";
    case ErrorCode::BadThreshold: return "BadThreshold";
    case ErrorCode::DimMismatch: return "DimMismatch";
    case ErrorCode::PatchGridOverflow: return "PatchGridOverflow";
    case ErrorCode::MalformedPayload: return "MalformedPayload";
    case ErrorCode::IndexOutOfGrid: return "IndexOutOfGrid";
    case ErrorCode::EmptyLedger: return "EmptyLedger";
    case ErrorCode::FrameCorrupt: return "FrameCorrupt";
    case ErrorCode::UnknownType: return "UnknownType";
    case ErrorCode::ProtocolViolation: return "ProtocolViolation";
    case ErrorCode::EmptyInput: return "EmptyInput";
    case ErrorCode::ModelMissing: return "ModelMissing";
    case ErrorCode::UnknownSession: return "UnknownSession";
    case ErrorCode::NotReady: return "NotReady";
    case ErrorCode::BadConfig: return "BadConfig";
  }
  return "Unknown";
}

/// Every failure in the library surfaces as this exception; `code()` carries
/// the machine-readable kind used by the CLI exit path and the HTTP gateway.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(error_name(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }
  std::string_view name() const noexcept { return error_name(code_); }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& what) { throw Error(code, what); }

inline void require(bool cond, ErrorCode code, const std::string& what) {
  if (!cond) fail(code, what);
}

}  // namespace semcom
