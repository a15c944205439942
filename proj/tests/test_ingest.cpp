#include <doctest.h>

#include <sstream>

#include "airtrace/errors.hpp"
#include "airtrace/ingest.hpp"
#include "airtrace/projection.hpp"
#include "airtrace/rng.hpp"

using namespace airtrace;

TEST_SUITE_BEGIN("ingest");

TEST_CASE("csv row parses to the documented fields") {
  std::istringstream in(
      "callsign,time_ms,lat,lon,speed_kt,alt_ft,heading_deg\n"
      "ABC123,1560000000000,51.47,-0.45,210,12000,275\n");
  auto res = parse_messages(in, MessageFormat::csv);
  REQUIRE(res.messages.size() == 1);
  CHECK(res.skipped == 0);
  const auto& m = res.messages[0];
  CHECK(m.callsign == "ABC123");
  CHECK(m.time_ms == 1560000000000);
  CHECK(m.lat == 51.47);
  CHECK(m.lon == -0.45);
  CHECK(m.speed_kt == 210.0);
  CHECK(m.alt_ft == 12000.0);
  CHECK(m.heading_deg == 275.0);
  CHECK(!m.anomaly_score.has_value());
}

TEST_CASE("empty file with valid header gives empty result") {
  std::istringstream in("callsign,time_ms,lat,lon,speed_kt,alt_ft,heading_deg\n");
  auto res = parse_messages(in, MessageFormat::csv);
  CHECK(res.messages.empty());
  CHECK(res.skipped == 0);
  CHECK(res.clamped == 0);
}

TEST_CASE("missing or wrong header is fatal") {
  std::istringstream empty("");
  CHECK_THROWS_AS(parse_messages(empty, MessageFormat::csv), FormatError);
  std::istringstream wrong("time,lat,lon\nX,1,2\n");
  CHECK_THROWS_AS(parse_messages(wrong, MessageFormat::csv), FormatError);
}

TEST_CASE("invalid records are skipped and counted") {
  std::istringstream in(
      "callsign,time_ms,lat,lon,speed_kt,alt_ft,heading_deg\n"
      "OK1,1000,52.0,4.0,100,1000,90\n"
      "BAD,notatime,52.0,4.0,100,1000,90\n"
      "BAD,1000,99.0,4.0,100,1000,90\n"
      "BAD,1000,52.0,4.0,700,1000,90\n"
      "BAD,1000,52.0,4.0,100,1000\n"
      "OK2,2000,52.0,4.0,100,46000,90\n");
  auto res = parse_messages(in, MessageFormat::csv);
  REQUIRE(res.messages.size() == 2);
  CHECK(res.skipped == 4);
  CHECK(res.clamped == 1);
  CHECK(res.messages[1].alt_ft == kMaxAltitudeFt);
}

TEST_CASE("heading 360 normalizes to 0 on parse") {
  std::istringstream in(
      "callsign,time_ms,lat,lon,speed_kt,alt_ft,heading_deg\n"
      "A,1000,52.0,4.0,100,1000,360.0\n");
  auto res = parse_messages(in, MessageFormat::csv);
  REQUIRE(res.messages.size() == 1);
  CHECK(res.messages[0].heading_deg == 0.0);
}

TEST_CASE("jsonl parses the same keys") {
  std::istringstream in(
      R"({"callsign":"KLM1","time_ms":1000,"lat":52.0,"lon":4.0,"speed_kt":210,"alt_ft":12000,"heading_deg":275})"
      "\n"
      "not json\n"
      R"({"callsign":"KLM2","time_ms":2000,"lat":52.1,"lon":4.1,"speed_kt":220,"alt_ft":13000,"heading_deg":90,"anomaly_score":0.25})"
      "\n");
  auto res = parse_messages(in, MessageFormat::jsonl);
  REQUIRE(res.messages.size() == 2);
  CHECK(res.skipped == 1);
  CHECK(res.messages[0].callsign == "KLM1");
  CHECK(res.messages[1].anomaly_score.has_value());
  CHECK(*res.messages[1].anomaly_score == 0.25f);
}

TEST_CASE("parse serialize parse is identity") {
  Rng rng(2024);
  std::vector<AdsbMessage> msgs;
  for (int i = 0; i < 500; i++) {
    AdsbMessage m;
    m.callsign = "RT" + std::to_string(i % 37);
    m.time_ms = 1600000000000 + i * 137;
    m.lat = rng.uniform(-89.0, 89.0);
    m.lon = rng.uniform(-180.0, 180.0);
    m.speed_kt = rng.uniform(0.0, 500.0);
    m.alt_ft = rng.uniform(0.0, 45000.0);
    m.heading_deg = rng.uniform(0.0, 360.0);
    check_message(m);
    msgs.push_back(m);
  }
  std::ostringstream out;
  write_messages_csv(out, msgs);
  std::istringstream in(out.str());
  auto res = parse_messages(in, MessageFormat::csv);
  CHECK(res.skipped == 0);
  REQUIRE(res.messages.size() == msgs.size());
  for (size_t i = 0; i < msgs.size(); i++) REQUIRE(res.messages[i] == msgs[i]);

  // And with anomaly scores present (8-column form).
  msgs[3].anomaly_score = 0.5f;
  std::ostringstream out2;
  write_messages_csv(out2, msgs);
  std::istringstream in2(out2.str());
  auto res2 = parse_messages(in2, MessageFormat::csv);
  REQUIRE(res2.messages.size() == msgs.size());
  CHECK(res2.messages[3].anomaly_score == msgs[3].anomaly_score);
}

TEST_CASE("filter_region keeps the inside in order") {
  Region region;  // center 52.3,4.7, 50 km half extent
  std::vector<AdsbMessage> msgs;
  auto mk = [](double lat, double lon, int64_t t) {
    AdsbMessage m;
    m.callsign = "F";
    m.time_ms = t;
    m.lat = lat;
    m.lon = lon;
    m.speed_kt = 100;
    m.alt_ft = 1000;
    m.heading_deg = 0;
    return m;
  };
  msgs.push_back(mk(52.3, 4.7, 1));    // center: in
  msgs.push_back(mk(52.3, 7.7, 2));    // ~200 km east: out
  msgs.push_back(mk(52.0, 4.5, 3));    // ~36 km away: in
  msgs.push_back(mk(54.0, 4.7, 4));    // ~190 km north: out
  msgs.push_back(mk(52.62, 4.7, 5));   // ~35 km north: in
  auto kept = filter_region(msgs, region);
  REQUIRE(kept.size() == 3);
  CHECK(kept[0].time_ms == 1);
  CHECK(kept[1].time_ms == 3);
  CHECK(kept[2].time_ms == 5);
}

TEST_CASE("filter_region matches a direct point-in-box oracle") {
  Region region;
  auto proj = LccProjection::make(region.center_lat, region.center_lon);
  Rng rng(555);
  std::vector<AdsbMessage> msgs;
  for (int i = 0; i < 2000; i++) {
    AdsbMessage m;
    m.callsign = "R";
    m.time_ms = i + 1;
    m.lat = rng.uniform(51.5, 53.1);
    m.lon = rng.uniform(3.5, 5.9);
    m.speed_kt = 100;
    m.alt_ft = 1000;
    m.heading_deg = 0;
    msgs.push_back(m);
  }
  size_t expected = 0;
  for (const auto& m : msgs) {
    double x, y;
    proj.project(m.lat, m.lon, &x, &y);
    if (std::abs(x) <= 50000.0 && std::abs(y) <= 50000.0) expected++;
  }
  auto kept = filter_region(msgs, region);
  CHECK(kept.size() == expected);
  CHECK(expected > 100);
  CHECK(expected < msgs.size());
}

namespace {
AdsbMessage at_time(int64_t t_ms, const std::string& cs = "A") {
  AdsbMessage m;
  m.callsign = cs;
  m.time_ms = t_ms;
  m.lat = 52.3;
  m.lon = 4.7;
  m.speed_kt = 100;
  m.alt_ft = 1000;
  m.heading_deg = 0;
  return m;
}
}  // namespace

TEST_CASE("slice starts follow the overlap stride") {
  // Messages spanning [0s, 4s) at Δt=2 s, 50% overlap: starts at 0,1,2,3 s.
  std::vector<AdsbMessage> msgs;
  for (int64_t t : {1, 500, 1500, 2500, 3900}) msgs.push_back(at_time(t));
  auto slices = slice_time(msgs, 2.0, 0.5);
  REQUIRE(slices.size() == 4);
  for (size_t i = 0; i < slices.size(); i++) {
    CHECK(slices[i].start_ms == 1 + static_cast<int64_t>(i) * 1000);
    CHECK(slices[i].end_ms == slices[i].start_ms + 2000);
  }
}

TEST_CASE("zero overlap tiles disjointly") {
  std::vector<AdsbMessage> msgs;
  for (int64_t t : {0, 1000, 2000, 3999}) msgs.push_back(at_time(t + 1));
  auto slices = slice_time(msgs, 2.0, 0.0);
  REQUIRE(slices.size() == 2);
  CHECK(slices[0].start_ms == 1);
  CHECK(slices[0].end_ms == 2001);
  CHECK(slices[1].start_ms == 2001);
  CHECK(slices[1].end_ms == 4001);
  CHECK(slices[0].per_aircraft.at("A").size() == 2);  // t=1, 1001
  CHECK(slices[1].per_aircraft.at("A").size() == 2);  // t=2001, 4000
}

TEST_CASE("per-aircraft lists are grouped and time ordered") {
  std::vector<AdsbMessage> msgs;
  msgs.push_back(at_time(1500, "B"));
  msgs.push_back(at_time(100, "A"));
  msgs.push_back(at_time(900, "A"));
  msgs.push_back(at_time(1500, "A"));
  auto slices = slice_time(msgs, 2.0, 0.5);
  REQUIRE(!slices.empty());
  const auto& s0 = slices[0];
  CHECK(s0.start_ms == 100);
  REQUIRE(s0.per_aircraft.count("A") == 1);
  REQUIRE(s0.per_aircraft.count("B") == 1);
  const auto& a = s0.per_aircraft.at("A");
  REQUIRE(a.size() == 3);
  CHECK(a[0].time_ms == 100);
  CHECK(a[1].time_ms == 900);
  CHECK(a[2].time_ms == 1500);
}

TEST_CASE("half-overlap covers interior messages exactly twice") {
  std::vector<AdsbMessage> msgs;
  for (int64_t t = 0; t < 20000; t += 250) msgs.push_back(at_time(t + 5000));
  auto slices = slice_time(msgs, 2.0, 0.5);
  std::map<int64_t, int> seen;
  for (const auto& s : slices) {
    for (const auto& [cs, list] : s.per_aircraft) {
      for (const auto& m : list) seen[m.time_ms]++;
    }
  }
  const int64_t t0 = 5000;
  for (const auto& [t, n] : seen) {
    if (t < t0 + 1000) {
      CHECK(n == 1);  // first half-window territory
    } else if (t <= t0 + 19000) {
      REQUIRE(n == 2);
    }
  }
}

TEST_CASE("empty input and bad parameters") {
  CHECK(slice_time({}, 2.0, 0.5).empty());
  std::vector<AdsbMessage> one{at_time(1000)};
  CHECK_THROWS_AS(slice_time(one, 0.0, 0.5), DomainError);
  CHECK_THROWS_AS(slice_time(one, 2.0, 1.0), DomainError);
  auto s = slice_time(one, 2.0, 0.5);
  REQUIRE(s.size() == 1);
  CHECK(s[0].start_ms == 1000);
}

TEST_SUITE_END();
