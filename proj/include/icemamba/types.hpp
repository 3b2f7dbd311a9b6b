#pragma once

#include <compare>
#include <cstdint>
#include <cstdio>
#include <span>
#include <string>
#include <vector>

#include "icemamba/error.hpp"

namespace icemamba {

/// Monthly SIC lags in every input stack.
inline constexpr std::size_t kSicLags = 12;

/// Calendar month; `index()` counts months since year 0 so differences are
/// month offsets.
struct Month {
  int year = 1979;
  int month = 1;  // 1..12

  static Month from_index(long index) {
    return {static_cast<int>(index / 12), static_cast<int>(index % 12) + 1};
  }
  static Month parse(const std::string& text) {
    int y = 0, m = 0;
    char dash = 0;
    if (std::sscanf(text.c_str(), "%d%c%d", &y, &dash, &m) != 3 || dash != '-' || m < 1 || m > 12) {
      throw DataError("malformed month '" + text + "' (expected YYYY-MM)");
    }
    return {y, m};
  }

  long index() const { return static_cast<long>(year) * 12 + (month - 1); }
  Month plus(long months) const { return from_index(index() + months); }
  std::string str() const {
    char buf[16];
    std::snprintf(buf, sizeof buf, "%04d-%02d", year, month);
    return buf;
  }
  auto operator<=>(const Month&) const = default;
};

/// Channel-fused model input [channels, H, W].
struct InputStack {
  std::size_t channels = 0;
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<float> values;

  std::span<const float> channel(std::size_t c) const {
    return std::span<const float>(values).subspan(c * height * width, height * width);
  }
  std::span<float> channel(std::size_t c) {
    return std::span<float>(values).subspan(c * height * width, height * width);
  }
};

/// Monthly SIC maps for leads 1..k from one initialization. Lead l targets
/// month init.plus(l - 1).
struct ForecastSet {
  Month init;
  std::size_t leads = 0;
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<float> maps;  // [leads, H, W]

  Month target(std::size_t lead) const { return init.plus(static_cast<long>(lead) - 1); }
  std::span<const float> map(std::size_t lead) const {
    return std::span<const float>(maps).subspan((lead - 1) * height * width, height * width);
  }
  std::span<float> map(std::size_t lead) {
    return std::span<float>(maps).subspan((lead - 1) * height * width, height * width);
  }
};

/// Byte mask over H*W cells; nonzero marks membership.
using Mask = std::vector<std::uint8_t>;

inline Mask invert(const Mask& m) {
  Mask out(m.size());
  for (std::size_t i = 0; i < m.size(); ++i) out[i] = m[i] ? 0 : 1;
  return out;
}

}  // namespace icemamba
