#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace splitsense {

enum class Errc {
  MissingKey,
  UnsupportedInterleave,
  UnsupportedDataType,
  NonMonotonicWavelengths,
  LengthMismatch,
  SizeMismatch,
  DimensionMismatch,
  WavelengthOutOfRange,
  EmptyBox,
  InsufficientBands,
  PatchOutOfBounds,
  GridMismatch,
  WidthTooLarge,
  ShapeMismatch,
  NonFiniteLoss,
  CorruptCheckpoint,
  NoNormals,
  OneClassOnly,
  EmptyMask,
  IoFailure,
  InvalidArgument,
};

std::string_view errc_name(Errc code) noexcept;

// Every library failure surfaces as this type; `code()` identifies the contract
// that was violated, `what()` carries the human-readable context.
class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& message)
      : std::runtime_error(std::string(errc_name(code)) + ": " + message), code_(code) {}

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

}  // namespace splitsense
