#pragma once

#include <cstdint>
#include <string>

namespace stpatch {

// Calendar timestamps as seconds since the Unix epoch, UTC, no leap seconds.
// Covers parsing dataset metadata and deriving day-of-week / slice-of-day
// indices for the temporal dictionaries.

std::int64_t parse_iso8601(const std::string& text);  // "YYYY-MM-DD HH:MM:SS" or 'T' separator
std::string format_iso8601(std::int64_t epoch_seconds);

// Monday = 0 .. Sunday = 6.
int day_of_week(std::int64_t epoch_seconds);

int seconds_since_midnight(std::int64_t epoch_seconds);

}  // namespace stpatch
