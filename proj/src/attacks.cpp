#include "airtrace/attacks.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <ostream>
#include <set>
#include <unordered_map>

#include "airtrace/errors.hpp"

namespace airtrace {

namespace {

void check_segment(const Segment& seg) {
  if (seg.slices.size() != kSegmentImages) {
    throw ContractError("attack: segment must contain exactly 50 slices");
  }
}

std::set<std::string> segment_callsigns(const Segment& seg) {
  std::set<std::string> out;
  for (const TimeSlice& sl : seg.slices) {
    for (const auto& [cs, track] : sl.per_aircraft) out.insert(cs);
  }
  return out;
}

std::string unique_callsign(const std::set<std::string>& taken,
                            const char* prefix, int index) {
  std::string cs = prefix;
  cs += static_cast<char>('0' + index / 100 % 10);
  cs += static_cast<char>('0' + index / 10 % 10);
  cs += static_cast<char>('0' + index % 10);
  while (taken.count(cs)) cs += 'X';
  return cs;
}

SegmentLabel clean_label(const Segment& seg) {
  SegmentLabel lab;
  lab.segment_index = seg.index;
  lab.images.resize(seg.slices.size());
  for (size_t i = 0; i < lab.images.size(); i++) {
    lab.images[i].segment_index = seg.index;
    lab.images[i].image_index = i;
  }
  return lab;
}

PixelBox track_box(const std::vector<AdsbMessage>& track,
                   const AttackContext& ctx) {
  if (track.empty()) return PixelBox{};
  ArrowGlyph g = build_glyph(track, ctx.proj, ctx.vp, ctx.raster);
  return glyph_pixel_box(g, ctx.vp.width_px, ctx.vp.height_px, ctx.raster);
}

// Picks the aircraft seen in the most attacked images (ties: smallest
// callsign). An explicit target only needs to appear at all; an automatic one
// must clear kMinTargetPresence. Returns empty + a note when nothing viable.
std::string pick_target(const Segment& seg,
                        const std::optional<std::string>& requested,
                        std::string* note) {
  std::unordered_map<std::string, size_t> presence;
  for (size_t i = kCleanImages; i < seg.slices.size(); i++) {
    for (const auto& [cs, track] : seg.slices[i].per_aircraft) {
      if (!track.empty()) presence[cs]++;
    }
  }
  if (requested) {
    if (presence.count(*requested)) return *requested;
    *note = "target " + *requested + " absent from the attack window";
    return {};
  }
  std::string best;
  size_t best_count = 0;
  for (const auto& [cs, count] : presence) {
    if (count > best_count || (count == best_count && (best.empty() || cs < best))) {
      best = cs;
      best_count = count;
    }
  }
  if (best_count < kMinTargetPresence) {
    *note = "no aircraft present in at least 10 of the 15 attacked images";
    return {};
  }
  return best;
}

InjectionResult skipped(const Segment& seg, std::string note) {
  InjectionResult res;
  res.segment = seg;
  res.label = clean_label(seg);
  res.injected = false;
  res.note = std::move(note);
  return res;
}

void begin_label(SegmentLabel& lab, AttackKind kind,
                 std::vector<std::string> targets) {
  lab.attacked = true;
  lab.kind = kind;
  lab.targets = std::move(targets);
  for (size_t i = kCleanImages; i < lab.images.size(); i++) {
    lab.images[i].attacked = true;
    lab.images[i].kind = kind;
    lab.images[i].targets = lab.targets;
  }
}

void append_u64(std::string& out, uint64_t v) {
  char buf[24];
  auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  (void)ec;
  out.append(buf, p);
}

void append_i32(std::string& out, int v) {
  char buf[16];
  auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  (void)ec;
  out.append(buf, p);
}

}  // namespace

std::string_view attack_kind_name(AttackKind kind) {
  switch (kind) {
    case AttackKind::flood: return "flood";
    case AttackKind::ghost: return "ghost";
    case AttackKind::jam: return "jam";
    case AttackKind::reverse: return "reverse";
    case AttackKind::change_altitude: return "change_altitude";
  }
  throw ContractError("attack: unknown kind value");
}

AttackKind attack_kind_from_name(std::string_view name) {
  for (AttackKind k : {AttackKind::flood, AttackKind::ghost, AttackKind::jam,
                       AttackKind::reverse, AttackKind::change_altitude}) {
    if (name == attack_kind_name(k)) return k;
  }
  throw ConfigError("unknown attack kind: " + std::string(name));
}

AttackContext AttackContext::make(const Region& region, int side_px,
                                  const RasterOptions& opt) {
  region.validate();
  AttackContext ctx;
  ctx.region = region;
  ctx.proj = LccProjection::make(region.center_lat, region.center_lon);
  ctx.vp = Viewport::make(region, side_px);
  ctx.raster = opt;
  return ctx;
}

std::vector<Segment> segment_test_set(const std::vector<TimeSlice>& slices) {
  std::vector<Segment> out;
  size_t n = slices.size() / kSegmentImages;
  out.reserve(n);
  for (size_t g = 0; g < n; g++) {
    Segment seg;
    seg.index = g;
    seg.slices.assign(slices.begin() + g * kSegmentImages,
                      slices.begin() + (g + 1) * kSegmentImages);
    out.push_back(std::move(seg));
  }
  return out;
}

InjectionResult inject_flood(const Segment& seg, const AttackContext& ctx,
                             Rng& rng, const FloodOptions& opt) {
  check_segment(seg);
  InjectionResult res;
  res.segment = seg;
  res.label = clean_label(seg);
  res.injected = true;

  struct Fake {
    std::string cs;
    double lat, lon, heading, speed, alt;
  };
  double half_m = ctx.region.half_extent_km * 1000.0;
  auto sample_position = [&](double* lat, double* lon) {
    double x = rng.uniform(-half_m, half_m);
    double y = rng.uniform(-half_m, half_m);
    ctx.proj.inverse(x, y, lat, lon);
  };

  std::set<std::string> taken = segment_callsigns(seg);
  int count = static_cast<int>(rng.uniform_int(int64_t{3}, int64_t{8}));
  std::vector<Fake> fakes;
  std::vector<std::string> names;
  for (int i = 0; i < count; i++) {
    Fake f;
    f.cs = unique_callsign(taken, "FLD", i);
    taken.insert(f.cs);
    sample_position(&f.lat, &f.lon);
    f.heading = normalize_heading(rng.uniform(0.0, 360.0));
    f.speed = rng.uniform(0.0, kMaxSpeedKt);
    f.alt = rng.uniform(0.0, 40000.0);
    names.push_back(f.cs);
    fakes.push_back(std::move(f));
  }
  begin_label(res.label, AttackKind::flood, names);

  for (size_t img = kCleanImages; img < res.segment.slices.size(); img++) {
    TimeSlice& sl = res.segment.slices[img];
    int64_t t = sl.start_ms + (sl.end_ms - sl.start_ms) / 2;
    PixelBox box;
    for (Fake& f : fakes) {
      if (opt.resample_each_image) sample_position(&f.lat, &f.lon);
      AdsbMessage m{f.cs, t, f.lat, f.lon, f.speed, f.alt, f.heading, {}};
      box.merge(track_box({m}, ctx));
      sl.per_aircraft[f.cs].push_back(std::move(m));
    }
    res.label.images[img].bbox = box;
  }
  return res;
}

InjectionResult inject_ghost(const Segment& seg,
                             const std::vector<AdsbMessage>& source_route,
                             const AttackContext& ctx, Rng& rng) {
  check_segment(seg);
  if (source_route.size() < 2) {
    throw ContractError("ghost: source route needs at least two messages");
  }
  std::vector<AdsbMessage> route = source_route;
  std::stable_sort(route.begin(), route.end(),
                   [](const AdsbMessage& a, const AdsbMessage& b) {
                     return a.time_ms < b.time_ms;
                   });

  int64_t window_start = seg.slices[kCleanImages].start_ms;
  int64_t window_end = seg.slices.back().end_ms;
  int64_t window_dur = window_end - window_start;
  int64_t route_dur = route.back().time_ms - route.front().time_ms;
  if (route_dur < window_dur - 1) {
    throw ContractError("ghost: source route shorter than the attack window");
  }

  // Re-anchor: translate in the projected plane so the route's middle point
  // lands at a uniformly random spot inside the region.
  double half_m = ctx.region.half_extent_km * 1000.0;
  double ax, ay;
  const AdsbMessage& mid = route[route.size() / 2];
  ctx.proj.project(mid.lat, mid.lon, &ax, &ay);
  double dx = rng.uniform(-half_m, half_m) - ax;
  double dy = rng.uniform(-half_m, half_m) - ay;

  int64_t t0 = route.front().time_ms;
  std::vector<AdsbMessage> rebased;
  rebased.reserve(route.size());
  for (const AdsbMessage& m : route) {
    int64_t t = window_start + (m.time_ms - t0);
    if (t >= window_end) break;
    double x, y;
    ctx.proj.project(m.lat, m.lon, &x, &y);
    AdsbMessage g = m;
    g.time_ms = t;
    ctx.proj.inverse(x + dx, y + dy, &g.lat, &g.lon);
    rebased.push_back(std::move(g));
  }

  InjectionResult res;
  res.segment = seg;
  res.label = clean_label(seg);
  res.injected = true;
  std::string cs = unique_callsign(segment_callsigns(seg), "GHO", 0);
  for (AdsbMessage& m : rebased) m.callsign = cs;
  begin_label(res.label, AttackKind::ghost, {cs});

  size_t next = 0;  // rebased messages are time-ordered, slices too
  for (size_t img = kCleanImages; img < res.segment.slices.size(); img++) {
    TimeSlice& sl = res.segment.slices[img];
    while (next < rebased.size() && rebased[next].time_ms < sl.start_ms) next++;
    std::vector<AdsbMessage> track;
    for (size_t j = next; j < rebased.size() && rebased[j].time_ms < sl.end_ms; j++) {
      track.push_back(rebased[j]);
    }
    if (track.empty()) continue;
    res.label.images[img].bbox = track_box(track, ctx);
    sl.per_aircraft[cs] = std::move(track);
  }
  return res;
}

InjectionResult inject_jam(const Segment& seg, const AttackContext& ctx,
                           Rng& /*rng*/,
                           const std::optional<std::string>& target) {
  check_segment(seg);
  std::string note;
  std::string cs = pick_target(seg, target, &note);
  if (cs.empty()) return skipped(seg, std::move(note));

  InjectionResult res;
  res.segment = seg;
  res.label = clean_label(seg);
  res.injected = true;
  begin_label(res.label, AttackKind::jam, {cs});
  for (size_t img = kCleanImages; img < res.segment.slices.size(); img++) {
    TimeSlice& sl = res.segment.slices[img];
    auto it = sl.per_aircraft.find(cs);
    if (it == sl.per_aircraft.end()) continue;
    res.label.images[img].bbox = track_box(it->second, ctx);
    sl.per_aircraft.erase(it);
  }
  return res;
}

InjectionResult inject_reverse(const Segment& seg, const AttackContext& ctx,
                               Rng& /*rng*/,
                               const std::optional<std::string>& target) {
  check_segment(seg);
  std::string note;
  std::string cs = pick_target(seg, target, &note);
  if (cs.empty()) return skipped(seg, std::move(note));

  InjectionResult res;
  res.segment = seg;
  res.label = clean_label(seg);
  res.injected = true;
  begin_label(res.label, AttackKind::reverse, {cs});
  for (size_t img = kCleanImages; img < res.segment.slices.size(); img++) {
    auto it = res.segment.slices[img].per_aircraft.find(cs);
    if (it == res.segment.slices[img].per_aircraft.end()) continue;
    PixelBox box = track_box(it->second, ctx);
    for (AdsbMessage& m : it->second) {
      m.heading_deg = normalize_heading(m.heading_deg + 180.0);
    }
    box.merge(track_box(it->second, ctx));
    res.label.images[img].bbox = box;
  }
  return res;
}

InjectionResult inject_altitude(const Segment& seg, const AttackContext& ctx,
                                Rng& /*rng*/, const AltitudeOptions& opt,
                                const std::optional<std::string>& target) {
  check_segment(seg);
  std::string note;
  std::string cs = pick_target(seg, target, &note);
  if (cs.empty()) return skipped(seg, std::move(note));

  InjectionResult res;
  res.segment = seg;
  res.label = clean_label(seg);
  res.injected = true;
  begin_label(res.label, AttackKind::change_altitude, {cs});
  for (size_t img = kCleanImages; img < res.segment.slices.size(); img++) {
    auto it = res.segment.slices[img].per_aircraft.find(cs);
    if (it == res.segment.slices[img].per_aircraft.end()) continue;
    PixelBox box = track_box(it->second, ctx);
    for (AdsbMessage& m : it->second) {
      m.alt_ft = m.alt_ft < opt.threshold_ft ? opt.high_ft : opt.low_ft;
    }
    box.merge(track_box(it->second, ctx));
    res.label.images[img].bbox = box;
  }
  return res;
}

InfectedTestset build_infected_testset(const std::vector<Segment>& segments,
                                       const AttackContext& ctx,
                                       const InfectOptions& opt,
                                       const Rng& rng) {
  InfectedTestset out;
  out.segments = segments;
  out.labels.reserve(segments.size());
  size_t nk = opt.kinds.size();
  out.requested = nk * opt.injections_per_kind;
  out.planned = std::min(out.requested, segments.size());

  for (size_t i = 0; i < segments.size(); i++) {
    if (i >= out.planned) {
      out.labels.push_back(clean_label(segments[i]));
      continue;
    }
    AttackKind kind = opt.kinds[i % nk];
    Rng seg_rng = rng.fork(segments[i].index);
    InjectionResult r;
    switch (kind) {
      case AttackKind::flood:
        r = inject_flood(segments[i], ctx, seg_rng, opt.flood);
        break;
      case AttackKind::ghost: {
        if (opt.ghost_routes.empty()) {
          throw ConfigError("ghost injections need at least one source route");
        }
        size_t ri = seg_rng.uniform_int(opt.ghost_routes.size());
        r = inject_ghost(segments[i], opt.ghost_routes[ri], ctx, seg_rng);
        break;
      }
      case AttackKind::jam:
        r = inject_jam(segments[i], ctx, seg_rng);
        break;
      case AttackKind::reverse:
        r = inject_reverse(segments[i], ctx, seg_rng);
        break;
      case AttackKind::change_altitude:
        r = inject_altitude(segments[i], ctx, seg_rng, opt.altitude);
        break;
    }
    if (r.injected) {
      out.injected++;
      out.segments[i] = std::move(r.segment);
    } else {
      std::string msg = "segment ";
      append_u64(msg, segments[i].index);
      msg += " (" + std::string(attack_kind_name(kind)) + "): " + r.note;
      out.skip_notes.push_back(std::move(msg));
    }
    out.labels.push_back(std::move(r.label));
  }
  return out;
}

void write_labels_csv(std::ostream& out,
                      const std::vector<SegmentLabel>& labels) {
  std::string buf =
      "segment_index,image_index,attacked,kind,target_callsigns,"
      "bbox_x0,bbox_y0,bbox_x1,bbox_y1\n";
  for (const SegmentLabel& lab : labels) {
    for (const ImageLabel& il : lab.images) {
      append_u64(buf, il.segment_index);
      buf += ',';
      append_u64(buf, il.image_index);
      buf += ',';
      buf += il.attacked ? '1' : '0';
      buf += ',';
      if (il.attacked) buf += attack_kind_name(il.kind);
      buf += ',';
      for (size_t i = 0; i < il.targets.size(); i++) {
        if (i) buf += ';';
        buf += il.targets[i];
      }
      buf += ',';
      append_i32(buf, il.bbox.x0);
      buf += ',';
      append_i32(buf, il.bbox.y0);
      buf += ',';
      append_i32(buf, il.bbox.x1);
      buf += ',';
      append_i32(buf, il.bbox.y1);
      buf += '\n';
      if (buf.size() > 1 << 20) {
        out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
        buf.clear();
      }
    }
  }
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!out) throw IoError("labels: write failed");
}

void write_labels_csv_file(const std::string& path,
                           const std::vector<SegmentLabel>& labels) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("labels: cannot open " + path + " for writing");
  write_labels_csv(out, labels);
}

}  // namespace airtrace
