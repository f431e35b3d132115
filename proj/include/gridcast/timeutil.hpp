#pragma once

#include <chrono>
#include <cstdint>
#include <cstdio>
#include <optional>
#include <string>
#include <string_view>

#include "error.hpp"

namespace gridcast {

/// Seconds since the Unix epoch, UTC.
using UtcSeconds = std::int64_t;

inline constexpr UtcSeconds kSecondsPerDay = 86400;
inline constexpr UtcSeconds kSecondsPerBlock = 43200;
inline constexpr int kBlocksPerDay = 2;
inline constexpr int kHoursPerWeek = 168;
inline constexpr int kHoursPerBlock = 12;

inline UtcSeconds days_to_seconds(std::int64_t days) { return days * kSecondsPerDay; }

/// Days since 1970-01-01 of a proleptic Gregorian civil date.
inline std::optional<std::int64_t> civil_days(int y, int m, int d) {
  using namespace std::chrono;
  const year_month_day ymd{year{y}, month{static_cast<unsigned>(m)}, day{static_cast<unsigned>(d)}};
  if (!ymd.ok()) return std::nullopt;
  return sys_days{ymd}.time_since_epoch().count();
}

inline int year_of(UtcSeconds t) {
  using namespace std::chrono;
  const auto days = sys_days{std::chrono::days{t >= 0 ? t / kSecondsPerDay : (t - kSecondsPerDay + 1) / kSecondsPerDay}};
  return static_cast<int>(year_month_day{days}.year());
}

/// Parses `YYYY-MM-DD`.
inline std::optional<UtcSeconds> parse_date(std::string_view s) {
  int y, m, d;
  char tail;
  const std::string buf(s);
  if (std::sscanf(buf.c_str(), "%4d-%2d-%2d%c", &y, &m, &d, &tail) != 3) return std::nullopt;
  const auto days = civil_days(y, m, d);
  if (!days) return std::nullopt;
  return days_to_seconds(*days);
}

/// Parses ISO-8601 `YYYY-MM-DDTHH:MM[:SS]` with an optional `Z` or `±HH:MM`
/// suffix; a space may replace the `T`. Without a suffix the time is UTC.
inline std::optional<UtcSeconds> parse_iso8601(std::string_view s) {
  if (s.size() < 16) return std::nullopt;
  const auto date = parse_date(s.substr(0, 10));
  if (!date || (s[10] != 'T' && s[10] != ' ')) return std::nullopt;
  auto digits = [&](std::size_t pos, int n) -> std::optional<int> {
    if (pos + static_cast<std::size_t>(n) > s.size()) return std::nullopt;
    int v = 0;
    for (int i = 0; i < n; ++i) {
      const char c = s[pos + static_cast<std::size_t>(i)];
      if (c < '0' || c > '9') return std::nullopt;
      v = v * 10 + (c - '0');
    }
    return v;
  };
  const auto hh = digits(11, 2);
  if (!hh || s[13] != ':') return std::nullopt;
  const auto mm = digits(14, 2);
  if (!mm) return std::nullopt;
  std::size_t pos = 16;
  int ss = 0;
  if (pos < s.size() && s[pos] == ':') {
    const auto v = digits(pos + 1, 2);
    if (!v) return std::nullopt;
    ss = *v;
    pos += 3;
    if (pos < s.size() && s[pos] == '.') {
      ++pos;
      while (pos < s.size() && s[pos] >= '0' && s[pos] <= '9') ++pos;
    }
  }
  if (*hh > 23 || *mm > 59 || ss > 60) return std::nullopt;
  UtcSeconds t = *date + *hh * 3600 + *mm * 60 + ss;
  if (pos == s.size()) return t;
  if (s[pos] == 'Z' && pos + 1 == s.size()) return t;
  if ((s[pos] == '+' || s[pos] == '-') && pos + 6 == s.size() && s[pos + 3] == ':') {
    const auto oh = digits(pos + 1, 2);
    const auto om = digits(pos + 4, 2);
    if (!oh || !om) return std::nullopt;
    const UtcSeconds offset = *oh * 3600 + *om * 60;
    return s[pos] == '+' ? t - offset : t + offset;
  }
  return std::nullopt;
}

inline std::string format_iso8601(UtcSeconds t) {
  using namespace std::chrono;
  const std::int64_t day = t >= 0 ? t / kSecondsPerDay : (t - kSecondsPerDay + 1) / kSecondsPerDay;
  const std::int64_t rem = t - day * kSecondsPerDay;
  const year_month_day ymd{sys_days{days{day}}};
  char buf[32];
  std::snprintf(buf, sizeof buf, "%04d-%02u-%02uT%02d:%02d:%02dZ", static_cast<int>(ymd.year()),
                static_cast<unsigned>(ymd.month()), static_cast<unsigned>(ymd.day()), static_cast<int>(rem / 3600),
                static_cast<int>(rem / 60 % 60), static_cast<int>(rem % 60));
  return buf;
}

inline std::string format_date(UtcSeconds t) { return format_iso8601(t).substr(0, 10); }

/// Half-day block timeline. Block k covers [origin + k*12h, origin + (k+1)*12h).
/// The origin is local midnight of the first study day expressed in UTC.
struct BlockClock {
  UtcSeconds origin = 0;
  int n_blocks = 0;

  static BlockClock for_span(UtcSeconds start_date_utc, UtcSeconds end_date_utc_exclusive, int utc_offset_hours) {
    require(end_date_utc_exclusive > start_date_utc, "study span end must come after its start");
    require((end_date_utc_exclusive - start_date_utc) % kSecondsPerDay == 0, "study span must be whole days");
    require(utc_offset_hours >= -14 && utc_offset_hours <= 14, "UTC offset out of range");
    BlockClock clock;
    clock.origin = start_date_utc - static_cast<UtcSeconds>(utc_offset_hours) * 3600;
    clock.n_blocks = static_cast<int>((end_date_utc_exclusive - start_date_utc) / kSecondsPerBlock);
    return clock;
  }

  /// Block index of `t`, or -1 when outside the span.
  int block_of(UtcSeconds t) const {
    if (t < origin) return -1;
    const UtcSeconds k = (t - origin) / kSecondsPerBlock;
    return k < n_blocks ? static_cast<int>(k) : -1;
  }

  UtcSeconds block_start(int k) const { return origin + static_cast<UtcSeconds>(k) * kSecondsPerBlock; }
  UtcSeconds end() const { return block_start(n_blocks); }
};

}  // namespace gridcast
