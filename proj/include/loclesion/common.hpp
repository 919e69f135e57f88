#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>

#include "loclesion/error.hpp"

namespace loclesion {

inline constexpr std::string_view kToolVersion = "0.3.0";

enum class Localizer : std::uint8_t { ToM, MD, None };
enum class StimulusCondition : std::uint8_t { Positive = 0, Negative = 1 };
enum class Selection : std::uint8_t { Top, Bottom, Random };

constexpr std::string_view to_string(Localizer l) {
  switch (l) {
    case Localizer::ToM: return "tom";
    case Localizer::MD: return "md";
    case Localizer::None: return "none";
  }
  return "none";
}

constexpr std::string_view to_string(StimulusCondition c) {
  return c == StimulusCondition::Positive ? "positive" : "negative";
}

constexpr std::string_view to_string(Selection s) {
  switch (s) {
    case Selection::Top: return "top";
    case Selection::Bottom: return "bottom";
    case Selection::Random: return "random";
  }
  return "top";
}

inline Localizer parse_localizer(std::string_view s) {
  if (s == "tom") return Localizer::ToM;
  if (s == "md") return Localizer::MD;
  if (s == "none") return Localizer::None;
  fail(ErrorCode::SchemaError, "unknown localizer '" + std::string(s) + "'");
}

inline StimulusCondition parse_stimulus_condition(std::string_view s) {
  if (s == "positive") return StimulusCondition::Positive;
  if (s == "negative") return StimulusCondition::Negative;
  fail(ErrorCode::SchemaError, "unknown stimulus condition '" + std::string(s) + "'");
}

inline Selection parse_selection(std::string_view s) {
  if (s == "top") return Selection::Top;
  if (s == "bottom") return Selection::Bottom;
  if (s == "random") return Selection::Random;
  fail(ErrorCode::SchemaError, "unknown selection condition '" + std::string(s) + "'");
}

/// A selection percentage held exactly in millionths of a percent, so that
/// unit counts are computed with integer arithmetic.
class Percent {
 public:
  static constexpr std::int64_t kScale = 1'000'000;

  constexpr Percent() = default;

  static constexpr Percent from_micros(std::int64_t micros) { return Percent(micros); }

  static Percent from_double(double percent) {
    if (!std::isfinite(percent)) fail(ErrorCode::SchemaError, "k_percent must be finite");
    return Percent(std::llround(percent * static_cast<double>(kScale)));
  }

  constexpr std::int64_t micros() const { return micros_; }
  constexpr double value() const { return static_cast<double>(micros_) / kScale; }
  constexpr bool valid() const { return micros_ > 0 && micros_ <= 100 * kScale; }

  /// round_half_up(k / 100 * units)
  constexpr std::size_t count_of(std::size_t units) const {
    const auto denom = static_cast<unsigned __int128>(100 * kScale);
    const auto num = static_cast<unsigned __int128>(micros_) * units;
    return static_cast<std::size_t>((2 * num + denom) / (2 * denom));
  }

  friend constexpr bool operator==(Percent, Percent) = default;

 private:
  constexpr explicit Percent(std::int64_t micros) : micros_(micros) {}
  std::int64_t micros_ = 0;
};

/// Text with exactly one "{body}" placeholder.
class PromptTemplate {
 public:
  static constexpr std::string_view kPlaceholder = "{body}";

  explicit PromptTemplate(std::string text) : text_(std::move(text)) {
    const auto first = text_.find(kPlaceholder);
    if (first == std::string::npos)
      fail(ErrorCode::TemplateError, "template has no {body} placeholder");
    if (text_.find(kPlaceholder, first + 1) != std::string::npos)
      fail(ErrorCode::TemplateError, "template has more than one {body} placeholder");
    at_ = first;
  }

  const std::string& text() const { return text_; }

  std::string render(std::string_view body) const {
    std::string out;
    out.reserve(text_.size() + body.size());
    out.append(text_, 0, at_);
    out.append(body);
    out.append(text_, at_ + kPlaceholder.size());
    return out;
  }

  friend bool operator==(const PromptTemplate& a, const PromptTemplate& b) {
    return a.text_ == b.text_;
  }

 private:
  std::string text_;
  std::size_t at_ = 0;
};

}  // namespace loclesion
