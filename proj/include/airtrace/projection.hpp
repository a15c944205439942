#pragma once

#include <cstdint>

#include "airtrace/adsb.hpp"

namespace airtrace {

// Spherical Lambert conformal conic with two standard parallels (Snyder,
// "Map Projections: A Working Manual", eqs. 15-1..15-5 and inverses).
// Coordinates are meters east/north of the reference point, which projects
// to (0, 0).
struct LccProjection {
  double ref_lat_deg = 52.3;
  double ref_lon_deg = 4.7;
  double parallel1_deg = 0.0;  // derived from ref_lat when left at 0 in make()
  double parallel2_deg = 0.0;
  double radius_m = 6371000.0;

  // Precomputed constants.
  double n = 0.0;
  double F = 0.0;
  double rho0 = 0.0;

  static LccProjection make(double ref_lat_deg, double ref_lon_deg,
                            double radius_m = 6371000.0);
  static LccProjection make(double ref_lat_deg, double ref_lon_deg,
                            double parallel1_deg, double parallel2_deg,
                            double radius_m = 6371000.0);

  void project(double lat_deg, double lon_deg, double* x_m, double* y_m) const;
  void inverse(double x_m, double y_m, double* lat_deg, double* lon_deg) const;
};

// Maps projected meters to pixel coordinates of a raster over a Region: the
// region's half extent spans half the image side, row 0 is the region's
// north edge. Pixel centers are at integer+0.5 offsets from the north-west
// corner.
struct Viewport {
  int width_px = 0;
  int height_px = 0;
  double meters_per_px = 0.0;
  double origin_x_m = 0.0;  // plane x of pixel (0,0): west edge
  double origin_y_m = 0.0;  // plane y of pixel (0,0): north edge

  static Viewport make(const Region& region, int side_px);

  // Continuous pixel coordinates; col grows east, row grows south.
  void to_pixel(double x_m, double y_m, double* col, double* row) const {
    *col = (x_m - origin_x_m) / meters_per_px;
    *row = (origin_y_m - y_m) / meters_per_px;
  }
  bool contains(double col, double row) const {
    return col >= 0.0 && col < static_cast<double>(width_px) && row >= 0.0 &&
           row < static_cast<double>(height_px);
  }
};

}  // namespace airtrace
