#pragma once

#include <cstdint>
#include <cstdio>
#include <string>

#include "episir/errors.hpp"

namespace episir {

// Calendar dates as a serial day count (days since 1970-01-01). The panel
// types only need ordering, daily stepping, and ISO-8601 round trips.
using SerialDay = std::int64_t;

// civil <-> serial conversion, valid across the proleptic Gregorian calendar.
inline SerialDay days_from_civil(int y, unsigned m, unsigned d) {
  y -= m <= 2;
  const int era = (y >= 0 ? y : y - 399) / 400;
  const unsigned yoe = static_cast<unsigned>(y - era * 400);
  const unsigned doy = (153 * (m + (m > 2 ? -3 : 9)) + 2) / 5 + d - 1;
  const unsigned doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
  return static_cast<SerialDay>(era) * 146097 + static_cast<SerialDay>(doe) - 719468;
}

inline void civil_from_days(SerialDay z, int& y, unsigned& m, unsigned& d) {
  z += 719468;
  const SerialDay era = (z >= 0 ? z : z - 146096) / 146097;
  const unsigned doe = static_cast<unsigned>(z - era * 146097);
  const unsigned yoe = (doe - doe / 1460 + doe / 36524 - doe / 146096) / 365;
  const int yr = static_cast<int>(yoe) + static_cast<int>(era) * 400;
  const unsigned doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
  const unsigned mp = (5 * doy + 2) / 153;
  d = doy - (153 * mp + 2) / 5 + 1;
  m = mp + (mp < 10 ? 3 : -9);
  y = yr + (m <= 2);
}

inline SerialDay parse_date(const std::string& iso) {
  int y = 0;
  unsigned m = 0, d = 0;
  char extra = '\0';
  if (std::sscanf(iso.c_str(), "%d-%u-%u%c", &y, &m, &d, &extra) != 3 || m < 1 ||
      m > 12 || d < 1 || d > 31) {
    throw DataError("invalid ISO-8601 date: '" + iso + "'");
  }
  const SerialDay serial = days_from_civil(y, m, d);
  int ry;
  unsigned rm, rd;
  civil_from_days(serial, ry, rm, rd);
  if (ry != y || rm != m || rd != d) {  // e.g. Feb 29 outside leap years
    throw DataError("no such calendar day: '" + iso + "'");
  }
  return serial;
}

inline std::string format_date(SerialDay day) {
  int y;
  unsigned m, d;
  civil_from_days(day, y, m, d);
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%04d-%02u-%02u", y, m, d);
  return buf;
}

}  // namespace episir
