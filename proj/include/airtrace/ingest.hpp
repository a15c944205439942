#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "airtrace/adsb.hpp"

namespace airtrace {

enum class MessageFormat { csv, jsonl };

struct ParseResult {
  std::vector<AdsbMessage> messages;
  size_t skipped = 0;  // records failing schema or range validation
  size_t clamped = 0;  // records kept with altitude clamped to the envelope
};

// Schema (CSV header required): callsign,time_ms,lat,lon,speed_kt,alt_ft,
// heading_deg, optionally followed by anomaly_score. JSONL uses the same
// keys, one object per line. Invalid records are skipped and counted;
// a malformed header or an unreadable stream is fatal.
ParseResult parse_messages(std::istream& in, MessageFormat format);
ParseResult parse_messages_file(const std::string& path, MessageFormat format);

void write_messages_csv(std::ostream& out, const std::vector<AdsbMessage>& msgs);
void write_messages_csv_file(const std::string& path,
                             const std::vector<AdsbMessage>& msgs);

// Keeps messages whose projected position falls inside the region's square
// (the LCC plane is centered on the region); order preserved.
std::vector<AdsbMessage> filter_region(const std::vector<AdsbMessage>& msgs,
                                       const Region& region);

// All messages of one delta-t interval, grouped per aircraft in time order.
struct TimeSlice {
  int64_t start_ms = 0;
  int64_t end_ms = 0;
  std::map<std::string, std::vector<AdsbMessage>> per_aircraft;

  bool empty() const { return per_aircraft.empty(); }
  bool operator==(const TimeSlice&) const = default;
};

// Cuts [first message, last message] into windows of delta_t_s seconds
// whose starts step by delta_t_s*(1-overlap_fraction); a window is emitted
// for every start not after the last message. Input need not be sorted.
std::vector<TimeSlice> slice_time(std::vector<AdsbMessage> msgs,
                                  double delta_t_s, double overlap_fraction);

int64_t slice_stride_ms(double delta_t_s, double overlap_fraction);

}  // namespace airtrace
