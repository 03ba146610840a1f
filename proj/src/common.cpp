#include "ecgdk/common.h"

#include <atomic>
#include <iostream>

namespace ecgdk {

namespace {
std::atomic<bool> g_warnings_enabled{true};
}

std::string_view to_string(ClassLabel label) {
  switch (label) {
    case ClassLabel::Normal:
      return "Normal";
    case ClassLabel::AF:
      return "AF";
    case ClassLabel::PVC:
      return "PVC";
  }
  return "?";
}

std::optional<ClassLabel> parse_label(std::string_view text) {
  if (text.empty() || text == "-") return std::nullopt;
  if (text == "Normal") return ClassLabel::Normal;
  if (text == "AF") return ClassLabel::AF;
  if (text == "PVC") return ClassLabel::PVC;
  throw ContractError("unknown class label '" + std::string(text) + "' (expected Normal, AF, PVC or -)");
}

ParseError::ParseError(std::string file, std::size_t line, std::string field, const std::string& message)
    : std::runtime_error(file + ":" + std::to_string(line) + ": field '" + field + "': " + message),
      file_(std::move(file)),
      line_(line),
      field_(std::move(field)) {}

void log_warning(std::string_view message) {
  if (g_warnings_enabled.load(std::memory_order_relaxed)) std::cerr << "warning: " << message << '\n';
}

void set_warnings_enabled(bool enabled) { g_warnings_enabled.store(enabled, std::memory_order_relaxed); }

}  // namespace ecgdk
