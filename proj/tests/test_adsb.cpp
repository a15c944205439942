#include <doctest.h>

#include <limits>

#include "airtrace/adsb.hpp"

using namespace airtrace;

namespace {
AdsbMessage ok_msg() {
  AdsbMessage m;
  m.callsign = "KLM123";
  m.time_ms = 1600000000000;
  m.lat = 52.1;
  m.lon = 4.6;
  m.speed_kt = 250.0;
  m.alt_ft = 30000.0;
  m.heading_deg = 275.0;
  return m;
}
}  // namespace

TEST_SUITE_BEGIN("adsb");

TEST_CASE("valid message passes unchanged") {
  AdsbMessage m = ok_msg();
  bool clamped = false;
  CHECK(check_message(m, &clamped) == MessageCheck::ok);
  CHECK(!clamped);
  CHECK(m.heading_deg == 275.0);
  CHECK(m.alt_ft == 30000.0);
}

TEST_CASE("heading wraps and 360 maps to 0") {
  AdsbMessage m = ok_msg();
  m.heading_deg = 360.0;
  CHECK(check_message(m) == MessageCheck::ok);
  CHECK(m.heading_deg == 0.0);

  m.heading_deg = -90.0;
  CHECK(check_message(m) == MessageCheck::ok);
  CHECK(m.heading_deg == 270.0);

  m.heading_deg = 725.0;
  CHECK(check_message(m) == MessageCheck::ok);
  CHECK(m.heading_deg == 5.0);
}

TEST_CASE("heading grid makes the 180 flip an involution") {
  // Exhaustive over the whole grid: flipping by 180 twice must restore the
  // exact value, which is what makes a reversed-then-reversed track
  // byte-identical.
  for (int64_t u = 0; u < 360 * 1024; u++) {
    double h = static_cast<double>(u) / 1024.0;
    double flipped = h >= 180.0 ? h - 180.0 : h + 180.0;
    double back = flipped >= 180.0 ? flipped - 180.0 : flipped + 180.0;
    REQUIRE(back == h);
    REQUIRE(normalize_heading(h) == h);
  }
}

TEST_CASE("altitude above the envelope clamps with notice") {
  AdsbMessage m = ok_msg();
  m.alt_ft = 51000.0;
  bool clamped = false;
  CHECK(check_message(m, &clamped) == MessageCheck::ok);
  CHECK(clamped);
  CHECK(m.alt_ft == kMaxAltitudeFt);
}

TEST_CASE("range violations are rejected") {
  AdsbMessage m = ok_msg();
  m.time_ms = 0;
  CHECK(check_message(m) == MessageCheck::bad_time);

  m = ok_msg();
  m.lat = 91.0;
  CHECK(check_message(m) == MessageCheck::bad_position);

  m = ok_msg();
  m.lon = -180.5;
  CHECK(check_message(m) == MessageCheck::bad_position);

  m = ok_msg();
  m.speed_kt = 500.5;
  CHECK(check_message(m) == MessageCheck::bad_speed);

  m = ok_msg();
  m.speed_kt = -1.0;
  CHECK(check_message(m) == MessageCheck::bad_speed);

  m = ok_msg();
  m.alt_ft = -10.0;
  CHECK(check_message(m) == MessageCheck::bad_altitude);

  m = ok_msg();
  m.lat = std::numeric_limits<double>::quiet_NaN();
  CHECK(check_message(m) == MessageCheck::bad_value);
}

TEST_CASE("region validates its bounds") {
  Region r;
  CHECK_NOTHROW(r.validate());
  r.half_extent_km = 0.0;
  CHECK_THROWS_AS(r.validate(), DomainError);
  r = Region{};
  r.center_lat = 95.0;
  CHECK_THROWS_AS(r.validate(), DomainError);
}

TEST_SUITE_END();
