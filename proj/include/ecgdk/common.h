#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

namespace ecgdk {

enum class ClassLabel : int { Normal = 0, AF = 1, PVC = 2 };

inline constexpr std::size_t kNumClasses = 3;
inline constexpr std::array<ClassLabel, kNumClasses> kAllClasses{ClassLabel::Normal, ClassLabel::AF,
                                                                  ClassLabel::PVC};

std::string_view to_string(ClassLabel label);

// "-" and "" parse to nullopt (unlabeled). Unknown names throw ContractError.
std::optional<ClassLabel> parse_label(std::string_view text);

inline int class_index(ClassLabel label) { return static_cast<int>(label); }

// Violated precondition or invariant of a public operation.
class ContractError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Malformed input file. Carries the location of the offending field.
class ParseError : public std::runtime_error {
 public:
  ParseError(std::string file, std::size_t line, std::string field, const std::string& message);

  const std::string& file() const { return file_; }
  std::size_t line() const { return line_; }
  const std::string& field() const { return field_; }

 private:
  std::string file_;
  std::size_t line_;
  std::string field_;
};

// Warnings go to stderr unless silenced (tests silence them).
void log_warning(std::string_view message);
void set_warnings_enabled(bool enabled);

}  // namespace ecgdk
