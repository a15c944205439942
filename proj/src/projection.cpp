#include "airtrace/projection.hpp"

#include <cmath>

#include "airtrace/errors.hpp"

namespace airtrace {

namespace {

constexpr double kPi = 3.141592653589793238462643383279502884;

double deg2rad(double d) { return d * (kPi / 180.0); }
double rad2deg(double r) { return r * (180.0 / kPi); }

// tan(pi/4 + phi/2), the conformal half-angle factor.
double half_tan(double phi) { return std::tan(kPi / 4.0 + phi / 2.0); }

// Wrap an angle in radians to (-pi, pi].
double wrap_pi(double a) {
  a = std::fmod(a, 2.0 * kPi);
  if (a <= -kPi) a += 2.0 * kPi;
  if (a > kPi) a -= 2.0 * kPi;
  return a;
}

}  // namespace

LccProjection LccProjection::make(double ref_lat_deg, double ref_lon_deg,
                                  double radius_m) {
  // Standard parallels straddle the reference latitude by half a degree,
  // keeping scale distortion below 1e-5 across a ~100 km box.
  return make(ref_lat_deg, ref_lon_deg, ref_lat_deg - 0.5, ref_lat_deg + 0.5,
              radius_m);
}

LccProjection LccProjection::make(double ref_lat_deg, double ref_lon_deg,
                                  double parallel1_deg, double parallel2_deg,
                                  double radius_m) {
  if (std::abs(ref_lat_deg) >= 90.0 || std::abs(parallel1_deg) >= 90.0 ||
      std::abs(parallel2_deg) >= 90.0) {
    throw DomainError("lcc: latitude must satisfy |lat| < 90");
  }
  if (parallel1_deg + parallel2_deg == 0.0) {
    throw DomainError("lcc: standard parallels must not be symmetric about the equator");
  }
  LccProjection p;
  p.ref_lat_deg = ref_lat_deg;
  p.ref_lon_deg = ref_lon_deg;
  p.parallel1_deg = parallel1_deg;
  p.parallel2_deg = parallel2_deg;
  p.radius_m = radius_m;

  double phi1 = deg2rad(parallel1_deg);
  double phi2 = deg2rad(parallel2_deg);
  if (parallel1_deg == parallel2_deg) {
    p.n = std::sin(phi1);
  } else {
    p.n = std::log(std::cos(phi1) / std::cos(phi2)) /
          std::log(half_tan(phi2) / half_tan(phi1));
  }
  if (p.n == 0.0) throw DomainError("lcc: cone constant is zero");
  p.F = std::cos(phi1) * std::pow(half_tan(phi1), p.n) / p.n;
  p.rho0 = radius_m * p.F / std::pow(half_tan(deg2rad(ref_lat_deg)), p.n);
  return p;
}

void LccProjection::project(double lat_deg, double lon_deg, double* x_m,
                            double* y_m) const {
  if (std::abs(lat_deg) >= 90.0) {
    throw DomainError("lcc: cannot project |lat| >= 90");
  }
  double phi = deg2rad(lat_deg);
  double rho = radius_m * F / std::pow(half_tan(phi), n);
  double theta = n * wrap_pi(deg2rad(lon_deg - ref_lon_deg));
  *x_m = rho * std::sin(theta);
  *y_m = rho0 - rho * std::cos(theta);
}

void LccProjection::inverse(double x_m, double y_m, double* lat_deg,
                            double* lon_deg) const {
  // Snyder's inverse flips the working signs when the cone constant is
  // negative (southern cones).
  double s = n > 0.0 ? 1.0 : -1.0;
  double dy = rho0 - y_m;
  double rho = s * std::hypot(x_m, dy);
  double theta = std::atan2(s * x_m, s * dy);
  if (rho == 0.0) {
    *lat_deg = std::copysign(90.0, n);
    *lon_deg = ref_lon_deg;
    return;
  }
  double phi = 2.0 * std::atan(std::pow(radius_m * F / rho, 1.0 / n)) - kPi / 2.0;
  *lat_deg = rad2deg(phi);
  *lon_deg = rad2deg(wrap_pi(deg2rad(ref_lon_deg) + theta / n));
}

Viewport Viewport::make(const Region& region, int side_px) {
  region.validate();
  if (side_px <= 0) throw DomainError("viewport: side must be positive");
  Viewport v;
  double half_m = region.half_extent_km * 1000.0;
  v.width_px = side_px;
  v.height_px = side_px;
  v.meters_per_px = 2.0 * half_m / static_cast<double>(side_px);
  v.origin_x_m = -half_m;
  v.origin_y_m = half_m;
  return v;
}

}  // namespace airtrace
