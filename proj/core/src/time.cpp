#include "loadcast/time.hpp"

#include <charconv>
#include <chrono>
#include <cstdio>

#include "loadcast/error.hpp"

namespace loadcast {

namespace {

int parse_int(std::string_view text, std::size_t pos, std::size_t len) {
  if (pos + len > text.size()) {
    fail(ErrorCode::ParseError, "timestamp too short: " + std::string(text));
  }
  int value = 0;
  auto [ptr, ec] = std::from_chars(text.data() + pos, text.data() + pos + len, value);
  if (ec != std::errc{} || ptr != text.data() + pos + len) {
    fail(ErrorCode::ParseError, "bad timestamp field: " + std::string(text));
  }
  return value;
}

void expect(std::string_view text, std::size_t pos, char c) {
  if (pos >= text.size() || text[pos] != c) {
    fail(ErrorCode::ParseError, "malformed timestamp: " + std::string(text));
  }
}

}  // namespace

Timestamp parse_timestamp(std::string_view text) {
  using namespace std::chrono;
  while (!text.empty() && (text.back() == ' ' || text.back() == '\r')) text.remove_suffix(1);
  while (!text.empty() && text.front() == ' ') text.remove_prefix(1);

  const int y = parse_int(text, 0, 4);
  expect(text, 4, '-');
  const int mo = parse_int(text, 5, 2);
  expect(text, 7, '-');
  const int d = parse_int(text, 8, 2);
  const year_month_day ymd{year{y}, month{static_cast<unsigned>(mo)},
                           day{static_cast<unsigned>(d)}};
  if (!ymd.ok()) fail(ErrorCode::ParseError, "invalid date: " + std::string(text));
  std::int64_t secs = sys_days{ymd}.time_since_epoch().count() * kSecondsPerDay;
  if (text.size() == 10) return Timestamp{secs};

  if (text[10] != 'T' && text[10] != 't' && text[10] != ' ') {
    fail(ErrorCode::ParseError, "malformed timestamp: " + std::string(text));
  }
  const int hh = parse_int(text, 11, 2);
  expect(text, 13, ':');
  const int mm = parse_int(text, 14, 2);
  expect(text, 16, ':');
  const int ss = parse_int(text, 17, 2);
  if (hh > 23 || mm > 59 || ss > 60) {
    fail(ErrorCode::ParseError, "invalid time of day: " + std::string(text));
  }
  secs += hh * kSecondsPerHour + mm * 60 + ss;

  std::size_t pos = 19;
  if (pos < text.size() && text[pos] == '.') {
    ++pos;
    while (pos < text.size() && text[pos] >= '0' && text[pos] <= '9') ++pos;
  }
  if (pos >= text.size()) {
    fail(ErrorCode::ParseError, "timestamp lacks zone designator: " + std::string(text));
  }
  if (text[pos] == 'Z' || text[pos] == 'z') {
    if (pos + 1 != text.size()) fail(ErrorCode::ParseError, "trailing characters: " + std::string(text));
    return Timestamp{secs};
  }
  if (text[pos] != '+' && text[pos] != '-') {
    fail(ErrorCode::ParseError, "bad zone designator: " + std::string(text));
  }
  const int sign = text[pos] == '+' ? 1 : -1;
  const int oh = parse_int(text, pos + 1, 2);
  expect(text, pos + 3, ':');
  const int om = parse_int(text, pos + 4, 2);
  if (pos + 6 != text.size()) fail(ErrorCode::ParseError, "trailing characters: " + std::string(text));
  secs -= sign * (oh * kSecondsPerHour + om * 60);
  return Timestamp{secs};
}

Timestamp floor_to_day(Timestamp t) {
  std::int64_t days = t.seconds / kSecondsPerDay;
  if (t.seconds % kSecondsPerDay < 0) --days;
  return Timestamp{days * kSecondsPerDay};
}

std::string format_timestamp(Timestamp t) {
  using namespace std::chrono;
  const Timestamp day0 = floor_to_day(t);
  const year_month_day ymd{sys_days{days{day0.seconds / kSecondsPerDay}}};
  const std::int64_t rem = t.seconds - day0.seconds;
  char buf[32];
  std::snprintf(buf, sizeof buf, "%04d-%02u-%02uT%02d:%02d:%02dZ", static_cast<int>(ymd.year()),
                static_cast<unsigned>(ymd.month()), static_cast<unsigned>(ymd.day()),
                static_cast<int>(rem / 3600), static_cast<int>((rem / 60) % 60),
                static_cast<int>(rem % 60));
  return buf;
}

std::string format_date(Timestamp t) { return format_timestamp(t).substr(0, 10); }

CalendarFields calendar_fields(Timestamp t, std::int64_t utc_offset_seconds) {
  using namespace std::chrono;
  const Timestamp local{t.seconds + utc_offset_seconds};
  const Timestamp day0 = floor_to_day(local);
  const sys_days sd{days{day0.seconds / kSecondsPerDay}};
  const year_month_day ymd{sd};
  CalendarFields f;
  f.hour = static_cast<int>((local.seconds - day0.seconds) / kSecondsPerHour);
  f.day_of_week = static_cast<int>(weekday{sd}.iso_encoding()) - 1;
  f.month = static_cast<int>(static_cast<unsigned>(ymd.month()));
  f.day_of_year = static_cast<int>((sd - sys_days{ymd.year() / January / 1}).count());
  return f;
}

}  // namespace loadcast
