#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "airtrace/adsb.hpp"
#include "airtrace/projection.hpp"
#include "airtrace/rng.hpp"

namespace airtrace {

// A straight airway across the region in projected plane coordinates
// (meters east/north of the region center). Descending routes terminate at
// the path point closest to the center (the airport) and ride a glide slope
// down to it; the others cruise through.
struct RouteTemplate {
  double entry_x_m = 0.0, entry_y_m = 0.0;
  double exit_x_m = 0.0, exit_y_m = 0.0;
  double cruise_alt_lo_ft = 20000.0, cruise_alt_hi_ft = 38000.0;
  double speed_lo_kt = 220.0, speed_hi_kt = 480.0;
  bool descend_to_center = false;
  double glide_slope_deg = 3.0;

  void validate() const;  // DomainError on band or geometry violations
};

// Three crossing airways and two descending approaches, scaled to the
// region's half extent.
std::vector<RouteTemplate> default_routes(const Region& region);

// Gaussian sigmas; zero disables a jitter without changing the draw stream.
struct NoiseLevels {
  double position_m = 60.0;       // per-message lateral scatter
  double heading_deg = 2.0;
  double speed_kt = 3.0;
  double altitude_ft = 50.0;
  double route_offset_m = 800.0;  // per-aircraft lateral route displacement
};

struct ScenarioOptions {
  double arrival_rate_per_min = 0.8;
  double duration_s = 3600.0;
  NoiseLevels noise;
  int64_t t0_ms = 1'600'000'000'000;
  uint64_t seed = 1;
};

// One aircraft flying `route` at 1 Hz from spawn_ms until it leaves the route
// (or end_ms). All randomness comes from `rng`; per-message draw order is
// position x, position y, heading, speed, altitude.
std::vector<AdsbMessage> generate_flight(const RouteTemplate& route,
                                         const LccProjection& proj,
                                         std::string callsign,
                                         int64_t spawn_ms, int64_t end_ms,
                                         const NoiseLevels& noise, Rng& rng);

// Poisson arrivals over the duration; each aircraft picks a template
// uniformly and flies it with jitter. Messages come back sorted by
// (time, callsign) with unique SYN%05d callsigns, all passing validation.
std::vector<AdsbMessage> generate_corpus(
    const std::vector<RouteTemplate>& templates, const Region& region,
    const ScenarioOptions& opt);

struct SplitFractions {
  double train = 0.60;
  double validation = 0.25;
  double test = 0.15;
};

struct CorpusSplit {
  std::vector<AdsbMessage> train;
  std::vector<AdsbMessage> validation;
  std::vector<AdsbMessage> test;
};

// Contiguous time-ordered partition: boundaries at cumulative fractions of
// the corpus duration (last message time - first + 1 ms); a message belongs
// to the first window whose end lies beyond its timestamp. Fractions must be
// non-negative and sum to 1.
CorpusSplit split_corpus(std::vector<AdsbMessage> messages,
                         const SplitFractions& fractions = {});

}  // namespace airtrace
