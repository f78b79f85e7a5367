#pragma once

#include <compare>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>

namespace itv {

// Nanosecond duration; timestamp arithmetic never goes through floating point.
using Nanos = std::int64_t;

inline Nanos seconds_to_nanos(double seconds) { return static_cast<Nanos>(std::llround(seconds * 1e9)); }

// A non-negative decimal seconds-since-epoch value. The original text is
// preserved verbatim for serialization; ordering uses every fractional digit,
// arithmetic uses nanosecond resolution.
class Timestamp {
 public:
  Timestamp() = default;

  static std::optional<Timestamp> parse(std::string_view s) {
    if (s.empty()) return std::nullopt;
    Timestamp t;
    std::size_t i = 0;
    std::int64_t secs = 0;
    std::size_t int_digits = 0;
    for (; i < s.size() && s[i] >= '0' && s[i] <= '9'; ++i, ++int_digits) {
      if (secs > (INT64_MAX / 1000000000 - 9) / 10) return std::nullopt;
      secs = secs * 10 + (s[i] - '0');
    }
    if (int_digits == 0) return std::nullopt;
    std::string frac;
    if (i < s.size()) {
      if (s[i] != '.') return std::nullopt;
      ++i;
      if (i == s.size()) return std::nullopt;
      for (; i < s.size(); ++i) {
        if (s[i] < '0' || s[i] > '9') return std::nullopt;
        frac.push_back(s[i]);
      }
    }
    while (!frac.empty() && frac.back() == '0') frac.pop_back();
    t.text_ = std::string(s);
    t.seconds_ = secs;
    t.frac_ = frac;
    Nanos sub = 0;
    for (std::size_t k = 0; k < 9; ++k) sub = sub * 10 + (k < frac.size() ? frac[k] - '0' : 0);
    t.nanos_ = secs * 1000000000 + sub;
    return t;
  }

  static Timestamp from_nanos(Nanos n) {
    std::string frac = std::to_string(n % 1000000000);
    frac.insert(0, 9 - frac.size(), '0');
    while (frac.size() > 6 && frac.back() == '0') frac.pop_back();
    return *parse(std::to_string(n / 1000000000) + "." + frac);
  }

  const std::string& text() const noexcept { return text_; }
  Nanos nanos() const noexcept { return nanos_; }
  double seconds() const noexcept { return static_cast<double>(nanos_) / 1e9; }

  friend bool operator==(const Timestamp& a, const Timestamp& b) {
    return a.seconds_ == b.seconds_ && a.frac_ == b.frac_;
  }
  friend std::strong_ordering operator<=>(const Timestamp& a, const Timestamp& b) {
    if (auto c = a.seconds_ <=> b.seconds_; c != 0) return c;
    // Fraction digits carry no trailing zeros, so lexicographic order is numeric order.
    const int c = a.frac_.compare(b.frac_);
    return c < 0 ? std::strong_ordering::less : c > 0 ? std::strong_ordering::greater : std::strong_ordering::equal;
  }

 private:
  std::string text_ = "0";
  std::int64_t seconds_ = 0;
  std::string frac_;
  Nanos nanos_ = 0;
};

}  // namespace itv
