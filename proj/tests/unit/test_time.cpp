#include "doctest.h"
#include "loadcast/error.hpp"
#include "loadcast/time.hpp"

using namespace loadcast;

TEST_CASE("timestamps parse and format as UTC") {
  const Timestamp t = parse_timestamp("2021-01-01T00:00:00Z");
  CHECK(t.seconds == 1609459200);
  CHECK(format_timestamp(t) == "2021-01-01T00:00:00Z");
  CHECK(parse_timestamp("2021-01-01") == t);
  CHECK(parse_timestamp("2021-01-01T02:00:00+02:00") == t);
  CHECK(format_date(t.plus_hours(23)) == "2021-01-01");
  CHECK(floor_to_day(t.plus_hours(30)) == t.plus_days(1));
}

TEST_CASE("malformed timestamps are parse errors") {
  for (const char* bad : {"", "2021-13-01", "yesterday", "2021-01-01T25:00:00Z"}) {
    CAPTURE(bad);
    try {
      parse_timestamp(bad);
      FAIL("accepted");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::ParseError);
    }
  }
}

TEST_CASE("calendar fields use Monday as day zero") {
  // 2021-01-04 was a Monday.
  const Timestamp monday = parse_timestamp("2021-01-04T06:00:00Z");
  const CalendarFields f = calendar_fields(monday);
  CHECK(f.hour == 6);
  CHECK(f.day_of_week == 0);
  CHECK(f.month == 1);
  CHECK(is_weekend(parse_timestamp("2021-01-02T12:00:00Z")));
  CHECK_FALSE(is_weekend(monday));
  CHECK(calendar_fields(monday, 20 * 3600).day_of_week == 1);
}
