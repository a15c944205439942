#include "airtrace/ingest.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "airtrace/errors.hpp"
#include "airtrace/projection.hpp"

namespace airtrace {

namespace {

const char* kCsvHeader = "callsign,time_ms,lat,lon,speed_kt,alt_ft,heading_deg";
const char* kCsvHeaderScored =
    "callsign,time_ms,lat,lon,speed_kt,alt_ft,heading_deg,anomaly_score";

void strip_cr(std::string& line) {
  if (!line.empty() && line.back() == '\r') line.pop_back();
}

std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> out;
  size_t pos = 0;
  while (true) {
    size_t comma = line.find(',', pos);
    if (comma == std::string_view::npos) {
      out.push_back(line.substr(pos));
      break;
    }
    out.push_back(line.substr(pos, comma - pos));
    pos = comma + 1;
  }
  return out;
}

bool parse_f64(std::string_view s, double* out) {
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), *out);
  return ec == std::errc() && p == s.data() + s.size();
}

bool parse_i64(std::string_view s, int64_t* out) {
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), *out);
  return ec == std::errc() && p == s.data() + s.size();
}

void append_f64(std::string& out, double v) {
  char buf[32];
  auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  (void)ec;
  out.append(buf, p);
}

bool callsign_ok(const std::string& cs) {
  if (cs.empty()) return false;
  for (char c : cs) {
    if (c == ',' || c == '\n' || c == '\r' || c == '"') return false;
  }
  return true;
}

ParseResult parse_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw FormatError("csv: missing header");
  strip_cr(line);
  bool scored;
  if (line == kCsvHeader) {
    scored = false;
  } else if (line == kCsvHeaderScored) {
    scored = true;
  } else {
    throw FormatError("csv: unrecognized header: " + line);
  }

  ParseResult res;
  const size_t want = scored ? 8 : 7;
  while (std::getline(in, line)) {
    strip_cr(line);
    if (line.empty()) continue;
    auto f = split_fields(line);
    AdsbMessage m;
    double score = 0.0;
    if (f.size() != want || !parse_i64(f[1], &m.time_ms) ||
        !parse_f64(f[2], &m.lat) || !parse_f64(f[3], &m.lon) ||
        !parse_f64(f[4], &m.speed_kt) || !parse_f64(f[5], &m.alt_ft) ||
        !parse_f64(f[6], &m.heading_deg) ||
        (scored && !parse_f64(f[7], &score))) {
      res.skipped++;
      continue;
    }
    m.callsign.assign(f[0]);
    if (!callsign_ok(m.callsign)) {
      res.skipped++;
      continue;
    }
    if (scored) m.anomaly_score = static_cast<float>(score);
    bool clamped = false;
    if (check_message(m, &clamped) != MessageCheck::ok) {
      res.skipped++;
      continue;
    }
    if (clamped) res.clamped++;
    res.messages.push_back(std::move(m));
  }
  if (in.bad()) throw IoError("csv: read failure");
  return res;
}

ParseResult parse_jsonl(std::istream& in) {
  ParseResult res;
  std::string line;
  while (std::getline(in, line)) {
    strip_cr(line);
    if (line.empty()) continue;
    nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.is_object()) {
      res.skipped++;
      continue;
    }
    AdsbMessage m;
    try {
      m.callsign = j.at("callsign").get<std::string>();
      const auto& t = j.at("time_ms");
      if (t.is_number_integer() || t.is_number_unsigned()) {
        m.time_ms = t.get<int64_t>();
      } else {
        res.skipped++;
        continue;
      }
      m.lat = j.at("lat").get<double>();
      m.lon = j.at("lon").get<double>();
      m.speed_kt = j.at("speed_kt").get<double>();
      m.alt_ft = j.at("alt_ft").get<double>();
      m.heading_deg = j.at("heading_deg").get<double>();
      if (j.contains("anomaly_score")) {
        m.anomaly_score = j.at("anomaly_score").get<float>();
      }
    } catch (const nlohmann::json::exception&) {
      res.skipped++;
      continue;
    }
    if (!callsign_ok(m.callsign)) {
      res.skipped++;
      continue;
    }
    bool clamped = false;
    if (check_message(m, &clamped) != MessageCheck::ok) {
      res.skipped++;
      continue;
    }
    if (clamped) res.clamped++;
    res.messages.push_back(std::move(m));
  }
  if (in.bad()) throw IoError("jsonl: read failure");
  return res;
}

}  // namespace

ParseResult parse_messages(std::istream& in, MessageFormat format) {
  return format == MessageFormat::csv ? parse_csv(in) : parse_jsonl(in);
}

ParseResult parse_messages_file(const std::string& path, MessageFormat format) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  return parse_messages(in, format);
}

void write_messages_csv(std::ostream& out, const std::vector<AdsbMessage>& msgs) {
  bool scored = std::any_of(msgs.begin(), msgs.end(), [](const AdsbMessage& m) {
    return m.anomaly_score.has_value();
  });
  std::string buf = scored ? kCsvHeaderScored : kCsvHeader;
  buf += '\n';
  for (const AdsbMessage& m : msgs) {
    if (!callsign_ok(m.callsign)) {
      throw FormatError("csv: callsign not serializable: " + m.callsign);
    }
    buf += m.callsign;
    buf += ',';
    buf += std::to_string(m.time_ms);
    buf += ',';
    append_f64(buf, m.lat);
    buf += ',';
    append_f64(buf, m.lon);
    buf += ',';
    append_f64(buf, m.speed_kt);
    buf += ',';
    append_f64(buf, m.alt_ft);
    buf += ',';
    append_f64(buf, m.heading_deg);
    if (scored) {
      buf += ',';
      append_f64(buf, m.anomaly_score ? static_cast<double>(*m.anomaly_score) : 0.0);
    }
    buf += '\n';
    if (buf.size() > (1u << 20)) {
      out << buf;
      buf.clear();
    }
  }
  out << buf;
  if (!out) throw IoError("csv: write failure");
}

void write_messages_csv_file(const std::string& path,
                             const std::vector<AdsbMessage>& msgs) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open " + path + " for writing");
  write_messages_csv(out, msgs);
}

std::vector<AdsbMessage> filter_region(const std::vector<AdsbMessage>& msgs,
                                       const Region& region) {
  region.validate();
  auto proj = LccProjection::make(region.center_lat, region.center_lon);
  double half_m = region.half_extent_km * 1000.0;
  std::vector<AdsbMessage> out;
  out.reserve(msgs.size());
  for (const AdsbMessage& m : msgs) {
    double x, y;
    proj.project(m.lat, m.lon, &x, &y);
    if (std::abs(x) <= half_m && std::abs(y) <= half_m) out.push_back(m);
  }
  return out;
}

int64_t slice_stride_ms(double delta_t_s, double overlap_fraction) {
  return std::llround(delta_t_s * (1.0 - overlap_fraction) * 1000.0);
}

std::vector<TimeSlice> slice_time(std::vector<AdsbMessage> msgs,
                                  double delta_t_s, double overlap_fraction) {
  if (delta_t_s <= 0.0) throw DomainError("slice_time: delta_t must be positive");
  if (overlap_fraction < 0.0 || overlap_fraction >= 1.0) {
    throw DomainError("slice_time: overlap must be in [0,1)");
  }
  std::vector<TimeSlice> out;
  if (msgs.empty()) return out;

  std::stable_sort(msgs.begin(), msgs.end(),
                   [](const AdsbMessage& a, const AdsbMessage& b) {
                     return a.time_ms < b.time_ms;
                   });

  const int64_t dt_ms = std::llround(delta_t_s * 1000.0);
  const int64_t stride_ms = slice_stride_ms(delta_t_s, overlap_fraction);
  if (stride_ms <= 0) throw DomainError("slice_time: stride rounds to zero");

  const int64_t t0 = msgs.front().time_ms;
  const int64_t t_last = msgs.back().time_ms;

  // first_idx tracks the earliest message that can still fall into the
  // current or any later window (starts are increasing, so it only moves
  // forward).
  size_t first_idx = 0;
  for (int64_t start = t0; start <= t_last; start += stride_ms) {
    int64_t end = start + dt_ms;
    TimeSlice slice;
    slice.start_ms = start;
    slice.end_ms = end;
    while (first_idx < msgs.size() && msgs[first_idx].time_ms < start) {
      first_idx++;
    }
    for (size_t i = first_idx; i < msgs.size() && msgs[i].time_ms < end; i++) {
      slice.per_aircraft[msgs[i].callsign].push_back(msgs[i]);
    }
    out.push_back(std::move(slice));
  }
  return out;
}

}  // namespace airtrace
