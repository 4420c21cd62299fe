#pragma once

#include <string>
#include <string_view>

#include "splitsense/error.hpp"

namespace splitsense {

enum class Label { normal, anomalous };

inline std::string_view to_string(Label label) noexcept {
  return label == Label::normal ? "normal" : "anomalous";
}

inline Label parse_label(std::string_view text) {
  if (text == "normal") return Label::normal;
  if (text == "anomalous") return Label::anomalous;
  throw Error(Errc::InvalidArgument, "unknown label '" + std::string(text) + "'");
}

}  // namespace splitsense
