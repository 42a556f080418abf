#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace earsr {

enum class ErrorCode {
  BadArgument,
  OutputTooLarge,
  EmptyForeground,
  FormatError,
  MissingManifest,
  PatchTooLarge,
  BadKernel,
  GridMismatch,
  BadConfig,
  ShapeError,
  NonFiniteLoss,
  BadT,
  ZeroMass,
  EmptySet,
  BadSpec,
  SetMismatch,
  UnknownRater,
  UnknownTrial,
  OutOfRange,
  NoData,
  Io,
};

const char* error_code_name(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(what), code_(code) {}
  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

// Raised while decoding on-disk containers; carries the byte offset where
// parsing failed.
class FormatError : public Error {
 public:
  FormatError(const std::string& what, std::uint64_t offset)
      : Error(ErrorCode::FormatError,
              what + " (at byte offset " + std::to_string(offset) + ")"),
        offset_(offset) {}
  std::uint64_t offset() const noexcept { return offset_; }

 private:
  std::uint64_t offset_;
};

}  // namespace earsr
