#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>

#include "airtrace/errors.hpp"

namespace airtrace {

constexpr double kMaxSpeedKt = 500.0;
constexpr double kMaxAltitudeFt = 45000.0;

// Headings live on a 1/1024-degree grid, far finer than ADS-B track
// resolution (~0.35 deg). Grid values have short mantissas, so adding or
// subtracting multiples of 180 on the grid is exact in double precision;
// modular heading arithmetic (e.g. a 180-degree flip applied twice) is then
// bit-exact.
constexpr double kHeadingGridPerDeg = 1024.0;

inline double normalize_heading(double deg) {
  double h = std::fmod(deg, 360.0);
  if (h < 0.0) h += 360.0;
  double units = std::nearbyint(h * kHeadingGridPerDeg);
  if (units >= 360.0 * kHeadingGridPerDeg) units -= 360.0 * kHeadingGridPerDeg;
  return units / kHeadingGridPerDeg;
}

// One decoded ADS-B state report. anomaly_score is an optional per-message
// score supplied by an external scorer; it only drives the optional second
// image channel.
struct AdsbMessage {
  std::string callsign;
  int64_t time_ms = 0;
  double lat = 0.0;      // degrees, [-90, 90]
  double lon = 0.0;      // degrees, [-180, 180]
  double speed_kt = 0.0; // [0, 500]
  double alt_ft = 0.0;   // [0, 45000]
  double heading_deg = 0.0;  // [0, 360), on the heading grid
  std::optional<float> anomaly_score;

  bool operator==(const AdsbMessage& o) const {
    return callsign == o.callsign && time_ms == o.time_ms && lat == o.lat &&
           lon == o.lon && speed_kt == o.speed_kt && alt_ft == o.alt_ft &&
           heading_deg == o.heading_deg && anomaly_score == o.anomaly_score;
  }
};

enum class MessageCheck {
  ok,
  bad_time,
  bad_position,
  bad_speed,
  bad_altitude,
  bad_value,
};

// Validates ranges and normalizes the message in place: heading is wrapped
// and snapped to the grid, altitude above the 45 kft cap is clamped (real
// data exceeds the nominal envelope; *clamped is set when that happens).
inline MessageCheck check_message(AdsbMessage& m, bool* clamped = nullptr) {
  if (!std::isfinite(m.lat) || !std::isfinite(m.lon) ||
      !std::isfinite(m.speed_kt) || !std::isfinite(m.alt_ft) ||
      !std::isfinite(m.heading_deg)) {
    return MessageCheck::bad_value;
  }
  if (m.time_ms <= 0) return MessageCheck::bad_time;
  if (m.lat < -90.0 || m.lat > 90.0 || m.lon < -180.0 || m.lon > 180.0) {
    return MessageCheck::bad_position;
  }
  if (m.speed_kt < 0.0 || m.speed_kt > kMaxSpeedKt) return MessageCheck::bad_speed;
  if (m.alt_ft < 0.0) return MessageCheck::bad_altitude;
  if (m.alt_ft > kMaxAltitudeFt) {
    m.alt_ft = kMaxAltitudeFt;
    if (clamped) *clamped = true;
  }
  m.heading_deg = normalize_heading(m.heading_deg);
  return MessageCheck::ok;
}

// Square observation area centered on the receiving entity. The default
// half extent of 50 km gives a 100 km x 100 km (10,000 km^2) box.
struct Region {
  double center_lat = 52.3;
  double center_lon = 4.7;
  double half_extent_km = 50.0;

  void validate() const {
    if (half_extent_km <= 0.0) throw DomainError("region half extent must be positive");
    if (center_lat < -90.0 || center_lat > 90.0 || center_lon < -180.0 ||
        center_lon > 180.0) {
      throw DomainError("region center out of range");
    }
  }
};

}  // namespace airtrace
