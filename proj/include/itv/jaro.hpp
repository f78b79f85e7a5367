#pragma once

#include <algorithm>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "itv/text.hpp"

namespace itv {

// Jaro similarity over code points: matches within floor(max(|a|,|b|)/2) - 1
// positions, t = half the out-of-order matches,
// J = (m/|a| + m/|b| + (m - t)/m) / 3. Empty vs. empty is 1.
inline double jaro(std::u32string_view a, std::u32string_view b) {
  if (a.empty() && b.empty()) return 1.0;
  if (a.empty() || b.empty()) return 0.0;
  const std::ptrdiff_t la = static_cast<std::ptrdiff_t>(a.size());
  const std::ptrdiff_t lb = static_cast<std::ptrdiff_t>(b.size());
  const std::ptrdiff_t window = std::max<std::ptrdiff_t>(0, std::max(la, lb) / 2 - 1);

  std::vector<std::uint8_t> a_matched(a.size(), 0);
  std::vector<std::uint8_t> b_matched(b.size(), 0);
  std::size_t m = 0;
  for (std::ptrdiff_t i = 0; i < la; ++i) {
    const std::ptrdiff_t lo = std::max<std::ptrdiff_t>(0, i - window);
    const std::ptrdiff_t hi = std::min(lb - 1, i + window);
    for (std::ptrdiff_t k = lo; k <= hi; ++k) {
      if (!b_matched[static_cast<std::size_t>(k)] && a[static_cast<std::size_t>(i)] == b[static_cast<std::size_t>(k)]) {
        a_matched[static_cast<std::size_t>(i)] = b_matched[static_cast<std::size_t>(k)] = 1;
        ++m;
        break;
      }
    }
  }
  if (m == 0) return 0.0;

  std::size_t half_transpositions = 0;
  std::size_t k = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (!a_matched[i]) continue;
    while (!b_matched[k]) ++k;
    if (a[i] != b[k]) ++half_transpositions;
    ++k;
  }
  const double md = static_cast<double>(m);
  const double t = static_cast<double>(half_transpositions) / 2.0;
  return (md / static_cast<double>(a.size()) + md / static_cast<double>(b.size()) + (md - t) / md) / 3.0;
}

inline double jaro(std::string_view a, std::string_view b) { return jaro(text::to_u32(a), text::to_u32(b)); }

}  // namespace itv
