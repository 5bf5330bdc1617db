#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace langdrive {

/// An LLM response that does not contain what the parser needs.
class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& what, std::string raw)
      : std::runtime_error(what), raw_(std::move(raw)) {}
  const std::string& raw() const { return raw_; }

 private:
  std::string raw_;
};

/// At most three decimals, trailing zeros dropped: 19 -> "19", -0.650 -> "-0.65", -0.0001 -> "0".
std::string format_number(double x);

std::string to_lower(std::string_view s);
std::string trim(std::string_view s);

/// Removes markdown emphasis and code marks (*, `, _ runs used as markup) and
/// collapses whitespace runs to single spaces.
std::string strip_markup(std::string_view s);

/// `s` followed by a period unless it already ends in . ! or ?
std::string as_sentence(std::string_view s);

}  // namespace langdrive
