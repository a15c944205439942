#include "airtrace/scenario.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "airtrace/errors.hpp"

namespace airtrace {

namespace {

constexpr double kPi = 3.141592653589793238462643383279502884;
constexpr double kKtToMps = 0.514444;  // knots to meters per second
constexpr double kMToFt = 3.280839895013123;
constexpr double kMinApproachAltFt = 200.0;

}  // namespace

void RouteTemplate::validate() const {
  if (entry_x_m == exit_x_m && entry_y_m == exit_y_m) {
    throw DomainError("route: entry and exit coincide");
  }
  if (cruise_alt_lo_ft < 0.0 || cruise_alt_hi_ft > kMaxAltitudeFt ||
      cruise_alt_lo_ft > cruise_alt_hi_ft) {
    throw DomainError("route: cruise altitude band out of range");
  }
  if (speed_lo_kt < 0.0 || speed_hi_kt > kMaxSpeedKt ||
      speed_lo_kt > speed_hi_kt) {
    throw DomainError("route: speed band out of range");
  }
  if (glide_slope_deg <= 0.0 || glide_slope_deg > 45.0) {
    throw DomainError("route: glide slope out of range");
  }
}

std::vector<RouteTemplate> default_routes(const Region& region) {
  region.validate();
  double h = region.half_extent_km * 1000.0;
  std::vector<RouteTemplate> routes(5);

  // west-east airway north of the field
  routes[0].entry_x_m = -h;
  routes[0].entry_y_m = 0.20 * h;
  routes[0].exit_x_m = h;
  routes[0].exit_y_m = 0.35 * h;
  routes[0].cruise_alt_lo_ft = 28000.0;
  routes[0].cruise_alt_hi_ft = 38000.0;
  routes[0].speed_lo_kt = 380.0;
  routes[0].speed_hi_kt = 470.0;

  // north-south airway west of the field
  routes[1].entry_x_m = 0.10 * h;
  routes[1].entry_y_m = h;
  routes[1].exit_x_m = -0.25 * h;
  routes[1].exit_y_m = -h;
  routes[1].cruise_alt_lo_ft = 30000.0;
  routes[1].cruise_alt_hi_ft = 40000.0;
  routes[1].speed_lo_kt = 400.0;
  routes[1].speed_hi_kt = 480.0;

  // southwest-northeast crossing
  routes[2].entry_x_m = -h;
  routes[2].entry_y_m = -0.60 * h;
  routes[2].exit_x_m = h;
  routes[2].exit_y_m = 0.70 * h;
  routes[2].cruise_alt_lo_ft = 20000.0;
  routes[2].cruise_alt_hi_ft = 30000.0;
  routes[2].speed_lo_kt = 300.0;
  routes[2].speed_hi_kt = 420.0;

  // approach from the east
  routes[3].entry_x_m = h;
  routes[3].entry_y_m = -0.10 * h;
  routes[3].exit_x_m = -h;
  routes[3].exit_y_m = 0.05 * h;
  routes[3].cruise_alt_lo_ft = 6000.0;
  routes[3].cruise_alt_hi_ft = 12000.0;
  routes[3].speed_lo_kt = 180.0;
  routes[3].speed_hi_kt = 280.0;
  routes[3].descend_to_center = true;

  // approach from the northwest
  routes[4].entry_x_m = -h;
  routes[4].entry_y_m = 0.80 * h;
  routes[4].exit_x_m = 0.90 * h;
  routes[4].exit_y_m = -h;
  routes[4].cruise_alt_lo_ft = 7000.0;
  routes[4].cruise_alt_hi_ft = 13000.0;
  routes[4].speed_lo_kt = 170.0;
  routes[4].speed_hi_kt = 260.0;
  routes[4].descend_to_center = true;

  return routes;
}

std::vector<AdsbMessage> generate_flight(const RouteTemplate& route,
                                         const LccProjection& proj,
                                         std::string callsign,
                                         int64_t spawn_ms, int64_t end_ms,
                                         const NoiseLevels& noise, Rng& rng) {
  route.validate();
  double dx = route.exit_x_m - route.entry_x_m;
  double dy = route.exit_y_m - route.entry_y_m;
  double len = std::hypot(dx, dy);
  double ux = dx / len, uy = dy / len;

  // per-aircraft draws: lateral route displacement, cruise altitude, speed
  double off = rng.normal(0.0, noise.route_offset_m);
  double ex = route.entry_x_m - uy * off;
  double ey = route.entry_y_m + ux * off;
  double cruise = rng.uniform(route.cruise_alt_lo_ft, route.cruise_alt_hi_ft);
  double target_kt = rng.uniform(route.speed_lo_kt, route.speed_hi_kt);

  double bearing = normalize_heading(std::atan2(ux, uy) * 180.0 / kPi);
  double v_mps = target_kt * kKtToMps;

  // descending flights stop at the closest approach to the center airport
  double s_end = len;
  if (route.descend_to_center) {
    s_end = std::clamp(-(ex * ux + ey * uy), 0.0, len);
  }
  double glide = std::tan(route.glide_slope_deg * kPi / 180.0) * kMToFt;

  std::vector<AdsbMessage> out;
  for (int64_t k = 0;; k++) {
    double s = static_cast<double>(k) * v_mps;
    int64_t t = spawn_ms + k * 1000;
    if (s > s_end || t >= end_ms) break;

    AdsbMessage m;
    m.callsign = callsign;
    m.time_ms = t;
    double x = ex + ux * s + rng.normal(0.0, noise.position_m);
    double y = ey + uy * s + rng.normal(0.0, noise.position_m);
    proj.inverse(x, y, &m.lat, &m.lon);
    m.heading_deg = normalize_heading(bearing + rng.normal(0.0, noise.heading_deg));
    m.speed_kt = std::clamp(target_kt + rng.normal(0.0, noise.speed_kt), 0.0,
                            kMaxSpeedKt);
    double alt = cruise;
    if (route.descend_to_center) {
      alt = std::min(cruise, std::max(kMinApproachAltFt, glide * (s_end - s)));
    }
    m.alt_ft = std::clamp(alt + rng.normal(0.0, noise.altitude_ft), 0.0,
                          kMaxAltitudeFt);
    out.push_back(std::move(m));
  }
  return out;
}

std::vector<AdsbMessage> generate_corpus(
    const std::vector<RouteTemplate>& templates, const Region& region,
    const ScenarioOptions& opt) {
  if (templates.empty()) {
    throw ConfigError("scenario: at least one route template is required");
  }
  region.validate();
  for (const RouteTemplate& t : templates) t.validate();

  std::vector<AdsbMessage> corpus;
  if (opt.arrival_rate_per_min <= 0.0 || opt.duration_s <= 0.0) return corpus;

  LccProjection proj = LccProjection::make(region.center_lat, region.center_lon);
  Rng arrivals(opt.seed);
  double rate_per_s = opt.arrival_rate_per_min / 60.0;
  int64_t end_ms = opt.t0_ms + std::llround(opt.duration_s * 1000.0);

  double t_s = 0.0;
  size_t idx = 0;
  while (true) {
    t_s += arrivals.exponential(rate_per_s);
    if (t_s >= opt.duration_s) break;
    int64_t spawn_ms = opt.t0_ms + std::llround(t_s * 1000.0);

    char cs[16];
    std::snprintf(cs, sizeof cs, "SYN%05zu", idx);
    Rng craft = arrivals.fork(idx);
    size_t ti = craft.uniform_int(templates.size());
    std::vector<AdsbMessage> flight = generate_flight(
        templates[ti], proj, cs, spawn_ms, end_ms, opt.noise, craft);
    corpus.insert(corpus.end(), std::make_move_iterator(flight.begin()),
                  std::make_move_iterator(flight.end()));
    idx++;
  }

  std::sort(corpus.begin(), corpus.end(),
            [](const AdsbMessage& a, const AdsbMessage& b) {
              if (a.time_ms != b.time_ms) return a.time_ms < b.time_ms;
              return a.callsign < b.callsign;
            });
  return corpus;
}

CorpusSplit split_corpus(std::vector<AdsbMessage> messages,
                         const SplitFractions& fractions) {
  if (fractions.train < 0.0 || fractions.validation < 0.0 ||
      fractions.test < 0.0 ||
      std::abs(fractions.train + fractions.validation + fractions.test - 1.0) >
          1e-9) {
    throw ConfigError("split: fractions must be non-negative and sum to 1");
  }
  CorpusSplit split;
  if (messages.empty()) return split;

  std::sort(messages.begin(), messages.end(),
            [](const AdsbMessage& a, const AdsbMessage& b) {
              if (a.time_ms != b.time_ms) return a.time_ms < b.time_ms;
              return a.callsign < b.callsign;
            });
  double t0 = static_cast<double>(messages.front().time_ms);
  double dur = static_cast<double>(messages.back().time_ms) - t0 + 1.0;
  double b1 = t0 + fractions.train * dur;
  double b2 = t0 + (fractions.train + fractions.validation) * dur;
  for (AdsbMessage& m : messages) {
    double t = static_cast<double>(m.time_ms);
    if (t < b1) {
      split.train.push_back(std::move(m));
    } else if (t < b2) {
      split.validation.push_back(std::move(m));
    } else {
      split.test.push_back(std::move(m));
    }
  }
  return split;
}

}  // namespace airtrace
