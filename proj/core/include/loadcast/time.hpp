#pragma once

#include <compare>
#include <cstdint>
#include <string>
#include <string_view>

namespace loadcast {

inline constexpr std::int64_t kSecondsPerHour = 3600;
inline constexpr std::int64_t kSecondsPerDay = 86400;

/// UTC instant with one-second resolution.
struct Timestamp {
  std::int64_t seconds = 0;

  constexpr auto operator<=>(const Timestamp&) const = default;

  constexpr Timestamp plus_hours(std::int64_t h) const {
    return Timestamp{seconds + h * kSecondsPerHour};
  }
  constexpr Timestamp plus_days(std::int64_t d) const {
    return Timestamp{seconds + d * kSecondsPerDay};
  }
};

/// Fixed sampling interval.
struct Duration {
  std::int64_t seconds = kSecondsPerHour;

  constexpr auto operator<=>(const Duration&) const = default;
};

constexpr std::int64_t hours_between(Timestamp from, Timestamp to) {
  return (to.seconds - from.seconds) / kSecondsPerHour;
}

/// Parses RFC 3339 ("2021-01-01T00:00:00Z", offsets like "+02:00" accepted)
/// or a bare date "2021-01-01" (midnight UTC). Throws ParseError.
Timestamp parse_timestamp(std::string_view text);

/// Formats as "YYYY-MM-DDTHH:MM:SSZ".
std::string format_timestamp(Timestamp t);

/// Formats the UTC calendar date "YYYY-MM-DD".
std::string format_date(Timestamp t);

Timestamp floor_to_day(Timestamp t);

struct CalendarFields {
  int hour = 0;         // 0..23
  int day_of_week = 0;  // 0 = Monday .. 6 = Sunday
  int month = 1;        // 1..12
  int day_of_year = 0;  // 0-based
};

/// Calendar fields in a display timezone given as a fixed UTC offset.
CalendarFields calendar_fields(Timestamp t, std::int64_t utc_offset_seconds = 0);

inline bool is_weekend(Timestamp t, std::int64_t utc_offset_seconds = 0) {
  return calendar_fields(t, utc_offset_seconds).day_of_week >= 5;
}

}  // namespace loadcast
