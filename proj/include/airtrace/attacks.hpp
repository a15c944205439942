#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "airtrace/ingest.hpp"
#include "airtrace/projection.hpp"
#include "airtrace/raster.hpp"
#include "airtrace/rng.hpp"

namespace airtrace {

// Test-set segments are 50 images long: the first 35 stay clean, the last 15
// carry the injected anomaly.
constexpr size_t kSegmentImages = 50;
constexpr size_t kCleanImages = 35;
constexpr size_t kAttackImages = kSegmentImages - kCleanImages;

// Minimum presence (images out of the attacked 15) an aircraft needs to be a
// viable jam/reverse/altitude target; below this the injection is skipped.
constexpr size_t kMinTargetPresence = 10;

enum class AttackKind { flood, ghost, jam, reverse, change_altitude };

std::string_view attack_kind_name(AttackKind kind);
AttackKind attack_kind_from_name(std::string_view name);  // ConfigError if unknown

// One 50-slice run of the test set, in stream order.
struct Segment {
  size_t index = 0;               // position within the segmented test set
  std::vector<TimeSlice> slices;  // kSegmentImages entries

  bool operator==(const Segment&) const = default;
};

// Geometry shared by the injectors: where sampled positions live (region),
// how they map to pixels, and how glyphs are drawn (for label boxes).
struct AttackContext {
  Region region;
  LccProjection proj;
  Viewport vp;
  RasterOptions raster;

  static AttackContext make(const Region& region, int side_px,
                            const RasterOptions& opt = {});
};

struct ImageLabel {
  size_t segment_index = 0;
  size_t image_index = 0;  // 0-based within the segment
  bool attacked = false;
  AttackKind kind = AttackKind::flood;  // meaningful only when attacked
  std::vector<std::string> targets;     // callsigns added/removed/modified
  PixelBox bbox;  // pixels the injection touches in this image

  bool operator==(const ImageLabel&) const = default;
};

struct SegmentLabel {
  size_t segment_index = 0;
  bool attacked = false;
  AttackKind kind = AttackKind::flood;
  std::vector<std::string> targets;
  std::vector<ImageLabel> images;  // one per segment image

  bool operator==(const SegmentLabel&) const = default;
};

struct InjectionResult {
  Segment segment;  // the (possibly modified) segment
  SegmentLabel label;
  bool injected = false;
  std::string note;  // reason when the injection was skipped
};

struct FloodOptions {
  bool resample_each_image = false;  // default: positions held static
};

struct AltitudeOptions {
  double threshold_ft = 10000.0;  // descending-for-landing cutoff
  double high_ft = 35000.0;
  double low_ft = 2000.0;
};

// Consecutive disjoint 50-image segments; a trailing remainder is dropped.
std::vector<Segment> segment_test_set(const std::vector<TimeSlice>& slices);

// Adds 3..8 fake aircraft at uniformly random in-region positions, present
// only in the attacked images.
InjectionResult inject_flood(const Segment& seg, const AttackContext& ctx,
                             Rng& rng, const FloodOptions& opt = {});

// Adds one aircraft that follows source_route, translated so the route's
// middle point lands at a uniformly random in-region spot and re-timed onto
// the attacked window. The route must span the window's duration.
InjectionResult inject_ghost(const Segment& seg,
                             const std::vector<AdsbMessage>& source_route,
                             const AttackContext& ctx, Rng& rng);

// Removes every message of the target aircraft from the attacked images.
// Without an explicit target, picks the aircraft present in the most attacked
// images (ties: lexicographically smallest callsign); if the best presence is
// under kMinTargetPresence the injection is skipped with a note.
InjectionResult inject_jam(const Segment& seg, const AttackContext& ctx,
                           Rng& rng,
                           const std::optional<std::string>& target = {});

// Flips the target's heading by 180 degrees in the attacked images. Applying
// it twice with the same target restores the segment bit-exactly.
InjectionResult inject_reverse(const Segment& seg, const AttackContext& ctx,
                               Rng& rng,
                               const std::optional<std::string>& target = {});

// Swaps the target's altitude across the threshold: below it (descending
// profile) jumps to high_ft, at or above it drops to low_ft.
InjectionResult inject_altitude(const Segment& seg, const AttackContext& ctx,
                                Rng& rng, const AltitudeOptions& opt = {},
                                const std::optional<std::string>& target = {});

struct InfectOptions {
  std::vector<AttackKind> kinds{AttackKind::flood, AttackKind::ghost,
                                AttackKind::jam, AttackKind::reverse,
                                AttackKind::change_altitude};
  size_t injections_per_kind = 100;
  FloodOptions flood;
  AltitudeOptions altitude;
  // Ghost source material; one is drawn per ghost injection. Required when
  // kinds includes ghost and injections are requested.
  std::vector<std::vector<AdsbMessage>> ghost_routes;
};

struct InfectedTestset {
  std::vector<Segment> segments;     // same order as the input
  std::vector<SegmentLabel> labels;  // parallel to segments
  size_t requested = 0;  // kinds * injections_per_kind
  size_t planned = 0;    // capped by the number of segments
  size_t injected = 0;   // actually applied
  std::vector<std::string> skip_notes;  // one entry per planned-but-skipped
};

// Assigns attack kinds round-robin over the first `planned` segments and
// injects each with an rng forked from the segment index, so the result only
// depends on (segments, options, rng seed).
InfectedTestset build_infected_testset(const std::vector<Segment>& segments,
                                       const AttackContext& ctx,
                                       const InfectOptions& opt,
                                       const Rng& rng);

// CSV: segment_index,image_index,attacked,kind,target_callsigns,
// bbox_x0,bbox_y0,bbox_x1,bbox_y1 (targets semicolon-joined, kind empty for
// clean rows, bbox 0,0,-1,-1 when empty).
void write_labels_csv(std::ostream& out, const std::vector<SegmentLabel>& labels);
void write_labels_csv_file(const std::string& path,
                           const std::vector<SegmentLabel>& labels);

}  // namespace airtrace
