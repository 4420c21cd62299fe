#include "splitsense/error.hpp"

namespace splitsense {

std::string_view errc_name(Errc code) noexcept {
  switch (code) {
    case Errc::MissingKey: return "MissingKey";
    case Errc::UnsupportedInterleave: return "UnsupportedInterleave";
    case Errc::UnsupportedDataType: return "UnsupportedDataType";
    case Errc::NonMonotonicWavelengths: return "NonMonotonicWavelengths";
    case Errc::LengthMismatch: return "LengthMismatch";
    case Errc::SizeMismatch: return "SizeMismatch";
    case Errc::DimensionMismatch: return "DimensionMismatch";
    case Errc::WavelengthOutOfRange: return "WavelengthOutOfRange";
    case Errc::EmptyBox: return "EmptyBox";
    case Errc::InsufficientBands: return "InsufficientBands";
    case Errc::PatchOutOfBounds: return "PatchOutOfBounds";
    case Errc::GridMismatch: return "GridMismatch";
    case Errc::WidthTooLarge: return "WidthTooLarge";
    case Errc::ShapeMismatch: return "ShapeMismatch";
    case Errc::NonFiniteLoss: return "NonFiniteLoss";
    case Errc::CorruptCheckpoint: return "CorruptCheckpoint";
    case Errc::NoNormals: return "NoNormals";
    case Errc::OneClassOnly: return "OneClassOnly";
    case Errc::EmptyMask: return "EmptyMask";
    case Errc::IoFailure: return "IoFailure";
    case Errc::InvalidArgument: return "InvalidArgument";
  }
  return "Unknown";
}

}  // namespace splitsense
