#include "airtrace/harness.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <set>
#include <utility>

#include "airtrace/explain.hpp"
#include "airtrace/image_io.hpp"

namespace airtrace {

namespace fs = std::filesystem;

namespace {

std::string fmt9(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

double mean_of(const std::vector<double>& v) {
  double acc = 0.0;
  for (double x : v) acc += x;
  return v.empty() ? 0.0 : acc / double(v.size());
}

bool boxes_intersect(const PixelBox& a, const PixelBox& b) {
  return !a.empty() && !b.empty() && a.x0 <= b.x1 && b.x0 <= a.x1 &&
         a.y0 <= b.y1 && b.y0 <= a.y1;
}

uint64_t derive_seed(uint64_t base, uint64_t tag) {
  return Rng(base).fork(tag).seed();
}

}  // namespace

SweepMode sweep_mode_from_name(const std::string& name) {
  if (name == "frame_score") return SweepMode::frame_score;
  if (name == "window_count") return SweepMode::window_count;
  throw ConfigError("harness: unknown roc mode '" + name + "'");
}

double RocCurve::tpr_at_fpr(double max_fpr) const {
  double best = 0.0;
  for (const auto& p : points)
    if (p.fpr <= max_fpr) best = std::max(best, p.tpr);
  return best;
}

RocCurve compute_roc(const std::vector<double>& scores,
                     const std::vector<bool>& labels, SweepMode mode,
                     const std::vector<double>& extra_thresholds) {
  if (scores.size() != labels.size() || scores.empty())
    throw ContractError("roc: scores and labels must match and be non-empty");
  size_t pos = 0;
  for (bool b : labels) pos += b ? 1 : 0;
  const size_t neg = scores.size() - pos;
  if (pos == 0 || neg == 0)
    throw DomainError("roc: need both a positive and a negative label");

  std::set<double> cuts(scores.begin(), scores.end());
  for (double t : extra_thresholds) cuts.insert(t);

  RocCurve curve;
  const double inf = std::numeric_limits<double>::infinity();
  auto add_point = [&](double thr) {
    size_t tp = 0, fp = 0;
    for (size_t i = 0; i < scores.size(); ++i) {
      const bool hit = mode == SweepMode::frame_score ? scores[i] < thr
                                                      : scores[i] > thr;
      if (hit) ++(labels[i] ? tp : fp);
    }
    curve.points.push_back(
        {thr, double(fp) / double(neg), double(tp) / double(pos)});
  };

  if (mode == SweepMode::frame_score) {
    curve.points.push_back({-inf, 0.0, 0.0});
    for (double thr : cuts) add_point(thr);
    curve.points.push_back({inf, 1.0, 1.0});
  } else {
    curve.points.push_back({inf, 0.0, 0.0});
    for (auto it = cuts.rbegin(); it != cuts.rend(); ++it) add_point(*it);
    curve.points.push_back({-inf, 1.0, 1.0});
  }

  double auc = 0.0;
  for (size_t i = 1; i < curve.points.size(); ++i) {
    const RocPoint& a = curve.points[i - 1];
    const RocPoint& b = curve.points[i];
    auc += (b.fpr - a.fpr) * (a.tpr + b.tpr) / 2.0;
  }
  curve.auc = auc;
  return curve;
}

void write_roc_csv(std::ostream& out, const RocCurve& roc) {
  out << "threshold,fpr,tpr\n";
  for (const auto& p : roc.points)
    out << fmt9(p.threshold) << "," << fmt9(p.fpr) << "," << fmt9(p.tpr)
        << "\n";
  if (!out) throw IoError("harness: failed writing roc csv");
}

bool frame_attacked(const SegmentLabel& label, size_t f, int s) {
  const size_t hi = f + size_t(s) - 1;
  for (size_t j = f; j <= hi && j < label.images.size(); ++j)
    if (label.images[j].attacked) return true;
  return false;
}

bool window_attacked(const SegmentLabel& label, size_t e, int w, int s) {
  const size_t first = e + 1 >= size_t(w) ? e + 1 - size_t(w) : 0;
  for (size_t f = first; f <= e; ++f)
    if (frame_attacked(label, f, s)) return true;
  return false;
}

PixelBox window_attack_box(const SegmentLabel& label, size_t e, int w, int s) {
  PixelBox box;
  const size_t first = e + 1 >= size_t(w) ? e + 1 - size_t(w) : 0;
  const size_t hi = e + size_t(s) - 1;
  for (size_t j = first; j <= hi && j < label.images.size(); ++j)
    if (label.images[j].attacked) box.merge(label.images[j].bbox);
  return box;
}

PixelBox tile_rect(int n, int side, int row, int col) {
  const int t = side / n;
  return {col * t, row * t, col * t + t - 1, row * t + t - 1};
}

// ---------------------------------------------------------------------------
// ExperimentConfig

namespace {

DecoderInputMode decoder_mode_from_name(const std::string& name) {
  if (name == "prev_and_current") return DecoderInputMode::prev_and_current;
  if (name == "prev_only") return DecoderInputMode::prev_only;
  if (name == "current_only") return DecoderInputMode::current_only;
  throw ConfigError("config: unknown model.decoder_input '" + name + "'");
}

std::vector<AttackKind> parse_kinds(const std::vector<std::string>& names) {
  std::vector<AttackKind> out;
  out.reserve(names.size());
  for (const auto& n : names) out.push_back(attack_kind_from_name(n));
  return out;
}

const std::set<std::string>& known_keys() {
  static const std::set<std::string> keys = {
      "seed", "out_dir", "input.path", "input.format",
      "region.center_lat", "region.center_lon", "region.half_extent_km",
      "image.side_px", "slices.dt_s", "slices.overlap",
      "model.s", "model.hidden", "model.kernel", "model.layers",
      "model.peephole", "model.decoder_input",
      "train.epochs", "train.batch", "train.lr", "train.max_sequences",
      "valid.max_sequences",
      "detector.w", "detector.t2", "detector.t1_pct", "detector.t1",
      "ssim.window",
      "attacks.kinds", "attacks.per_kind", "attacks.sweep_kinds",
      "attacks.sweep_per_kind", "attacks.clean_segments",
      "attacks.flood.resample", "attacks.altitude.threshold_ft",
      "attacks.altitude.high_ft", "attacks.altitude.low_ft",
      "scenario.rate_per_min", "scenario.duration_s", "scenario.t0_ms",
      "scenario.noise.position_m", "scenario.noise.heading_deg",
      "scenario.noise.speed_kt", "scenario.noise.altitude_ft",
      "scenario.noise.route_offset_m",
      "explain.n", "explain.max_overlays", "frames.max_pngs", "roc.mode",
  };
  return keys;
}

}  // namespace

ExperimentConfig ExperimentConfig::from_config(const Config& file) {
  for (const auto& key : file.keys())
    if (!known_keys().count(key))
      throw ConfigError("config: unknown key '" + key + "'");

  ExperimentConfig cfg;
  cfg.seed = uint64_t(file.get_int("seed", int64_t(cfg.seed)));
  cfg.out_dir = file.get_str("out_dir", cfg.out_dir);
  cfg.input_path = file.get_str("input.path", cfg.input_path);
  const std::string fmt = file.get_str("input.format", "csv");
  if (fmt == "csv") {
    cfg.input_format = MessageFormat::csv;
  } else if (fmt == "jsonl") {
    cfg.input_format = MessageFormat::jsonl;
  } else {
    throw ConfigError("config: input.format must be csv or jsonl");
  }

  cfg.region.center_lat =
      file.get_double("region.center_lat", cfg.region.center_lat);
  cfg.region.center_lon =
      file.get_double("region.center_lon", cfg.region.center_lon);
  cfg.region.half_extent_km =
      file.get_double("region.half_extent_km", cfg.region.half_extent_km);

  cfg.side_px = int(file.get_int("image.side_px", cfg.side_px));
  cfg.dt_list = file.get_doubles("slices.dt_s", cfg.dt_list);
  cfg.overlap = file.get_double("slices.overlap", cfg.overlap);
  cfg.s = int(file.get_int("model.s", cfg.s));
  cfg.hidden = int(file.get_int("model.hidden", cfg.hidden));
  cfg.kernel = int(file.get_int("model.kernel", cfg.kernel));
  cfg.layers = int(file.get_int("model.layers", cfg.layers));
  cfg.peephole = file.get_bool("model.peephole", cfg.peephole);
  cfg.decoder_input = decoder_mode_from_name(
      file.get_str("model.decoder_input", "prev_only"));

  cfg.epochs = int(file.get_int("train.epochs", cfg.epochs));
  cfg.batch = int(file.get_int("train.batch", cfg.batch));
  cfg.lr = file.get_double("train.lr", cfg.lr);
  cfg.train_cap = size_t(file.get_int("train.max_sequences",
                                      int64_t(cfg.train_cap)));
  cfg.val_cap = size_t(file.get_int("valid.max_sequences",
                                    int64_t(cfg.val_cap)));

  cfg.w = int(file.get_int("detector.w", cfg.w));
  cfg.t2 = int(file.get_int("detector.t2", cfg.t2));
  cfg.t1_pct = file.get_double("detector.t1_pct", cfg.t1_pct);
  if (file.has("detector.t1"))
    cfg.t1_override = file.get_double("detector.t1", 0.0);
  cfg.ssim.window = int(file.get_int("ssim.window", cfg.ssim.window));

  if (file.has("attacks.kinds"))
    cfg.kinds = parse_kinds(file.get_strs("attacks.kinds", {}));
  cfg.per_kind = size_t(file.get_int("attacks.per_kind",
                                     int64_t(cfg.per_kind)));
  if (file.has("attacks.sweep_kinds"))
    cfg.sweep_kinds = parse_kinds(file.get_strs("attacks.sweep_kinds", {}));
  cfg.sweep_per_kind = size_t(
      file.get_int("attacks.sweep_per_kind", int64_t(cfg.sweep_per_kind)));
  cfg.clean_segments = size_t(
      file.get_int("attacks.clean_segments", int64_t(cfg.clean_segments)));
  cfg.flood.resample_each_image =
      file.get_bool("attacks.flood.resample", cfg.flood.resample_each_image);
  cfg.altitude.threshold_ft =
      file.get_double("attacks.altitude.threshold_ft",
                      cfg.altitude.threshold_ft);
  cfg.altitude.high_ft =
      file.get_double("attacks.altitude.high_ft", cfg.altitude.high_ft);
  cfg.altitude.low_ft =
      file.get_double("attacks.altitude.low_ft", cfg.altitude.low_ft);

  cfg.rate_per_min =
      file.get_double("scenario.rate_per_min", cfg.rate_per_min);
  cfg.duration_s = file.get_double("scenario.duration_s", cfg.duration_s);
  cfg.t0_ms = file.get_int("scenario.t0_ms", cfg.t0_ms);
  cfg.noise.position_m =
      file.get_double("scenario.noise.position_m", cfg.noise.position_m);
  cfg.noise.heading_deg =
      file.get_double("scenario.noise.heading_deg", cfg.noise.heading_deg);
  cfg.noise.speed_kt =
      file.get_double("scenario.noise.speed_kt", cfg.noise.speed_kt);
  cfg.noise.altitude_ft =
      file.get_double("scenario.noise.altitude_ft", cfg.noise.altitude_ft);
  cfg.noise.route_offset_m = file.get_double("scenario.noise.route_offset_m",
                                             cfg.noise.route_offset_m);

  cfg.explain_n = int(file.get_int("explain.n", cfg.explain_n));
  cfg.max_overlays = size_t(
      file.get_int("explain.max_overlays", int64_t(cfg.max_overlays)));
  cfg.max_frame_pngs =
      size_t(file.get_int("frames.max_pngs", int64_t(cfg.max_frame_pngs)));
  cfg.roc_mode =
      sweep_mode_from_name(file.get_str("roc.mode", "frame_score"));

  const char* root = std::getenv("AIRTRACE_OUT_ROOT");
  if (root && *root && !fs::path(cfg.out_dir).is_absolute())
    cfg.out_dir = (fs::path(root) / cfg.out_dir).string();

  cfg.validate();
  return cfg;
}

void ExperimentConfig::validate() const {
  try {
    region.validate();
  } catch (const Error& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  if (out_dir.empty()) throw ConfigError("config: out_dir must not be empty");
  if (side_px < 8 || side_px > 1024)
    throw ConfigError("config: image.side_px out of range [8, 1024]");
  if (dt_list.empty())
    throw ConfigError("config: slices.dt_s needs at least one value");
  for (double dt : dt_list)
    if (!(dt > 0.0)) throw ConfigError("config: slices.dt_s must be positive");
  for (size_t i = 1; i < dt_list.size(); ++i)
    if (std::count(dt_list.begin(), dt_list.end(), dt_list[i]) > 1)
      throw ConfigError("config: slices.dt_s values must be distinct");
  if (!(overlap >= 0.0 && overlap < 1.0))
    throw ConfigError("config: slices.overlap must be in [0, 1)");
  if (s < 1 || size_t(s) > kSegmentImages)
    throw ConfigError("config: model.s must be in [1, 50]");
  if (w < 1 || size_t(w) + size_t(s) > kSegmentImages + 1)
    throw ConfigError("config: detector.w leaves no full window in a segment");
  if (t2 < 0 || t2 >= w)
    throw ConfigError("config: detector.t2 must be in [0, w)");
  if (!(t1_pct > 0.0 && t1_pct < 1.0))
    throw ConfigError("config: detector.t1_pct must be in (0, 1)");
  if (hidden < 1 || layers < 1 || kernel < 1 || kernel % 2 == 0)
    throw ConfigError("config: bad model geometry");
  if (epochs < 1 || batch < 1 || !(lr > 0.0))
    throw ConfigError("config: bad training settings");
  if (ssim.window < 1 || ssim.window > side_px)
    throw ConfigError("config: ssim.window must fit the image");
  if (explain_n < 1 || side_px % explain_n != 0)
    throw ConfigError("config: explain.n must divide image.side_px");
  if (input_path.empty() && !(rate_per_min > 0.0))
    throw ConfigError("config: scenario.rate_per_min must be positive");
  if (duration_s < 0.0)
    throw ConfigError("config: scenario.duration_s must be non-negative");
  if (t0_ms <= 0) throw ConfigError("config: scenario.t0_ms must be positive");
}

const std::vector<AttackKind>& ExperimentConfig::leg_kinds(
    size_t dt_index) const {
  if (dt_index == 0 || sweep_kinds.empty()) return kinds;
  return sweep_kinds;
}

size_t ExperimentConfig::leg_quota(size_t dt_index) const {
  return dt_index == 0 ? per_kind : sweep_per_kind;
}

double ExperimentConfig::leg_duration_s(size_t dt_index) const {
  if (duration_s > 0.0) return duration_s;
  const double dt = dt_list.at(dt_index);
  const double stride = double(slice_stride_ms(dt, overlap)) / 1000.0;
  const auto& lk = leg_kinds(dt_index);
  size_t segs =
      (lk.empty() ? 0 : lk.size() * leg_quota(dt_index)) + clean_segments;
  segs = std::max<size_t>(segs, 1);
  const double d_test = double(segs) * double(kSegmentImages) * stride + dt;
  const size_t tcap = train_cap ? train_cap : 300;
  const size_t vcap = val_cap ? val_cap : 150;
  const double d_train = double(tcap) * s * stride + dt;
  const double d_val = double(vcap) * s * stride + dt;
  const SplitFractions fr;
  const double need = std::max(
      {d_test / fr.test, d_train / fr.train, d_val / fr.validation});
  return 1.08 * need;
}

// ---------------------------------------------------------------------------
// Metrics

namespace {

std::string cell(double v) { return std::isnan(v) ? "" : fmt9(v); }

}  // namespace

void write_metrics_csv(std::ostream& out, const MetricsReport& report) {
  out << "dt_s,attack,segments,frames_pos,frames_neg,auc,tpr_at_fpr10,"
         "windows_pos,windows_neg,window_tpr,window_fpr,xai_alarms,xai_hits,"
         "t1,val_mean_ssim,clean_windows,clean_window_fpr\n";
  for (const auto& leg : report.per_dt) {
    out << fmt9(leg.dt_s) << ",clean," << leg.segments_total
        << ",,,,,,,,,,," << fmt9(leg.t1) << "," << fmt9(leg.val_mean_ssim)
        << "," << leg.clean_windows << "," << cell(leg.clean_window_fpr)
        << "\n";
    for (const auto& a : leg.attacks) {
      out << fmt9(leg.dt_s) << "," << attack_kind_name(a.kind) << ","
          << a.segments << "," << a.frames_pos << "," << a.frames_neg << ","
          << cell(a.auc) << "," << cell(a.tpr_at_fpr10) << "," << a.windows_pos
          << "," << a.windows_neg << "," << cell(a.window_tpr) << ","
          << cell(a.window_fpr) << "," << a.xai_alarms << "," << a.xai_hits
          << ",,,,\n";
    }
  }
  if (!out) throw IoError("harness: failed writing metrics csv");
}

// ---------------------------------------------------------------------------
// run_experiment

namespace {

class LockFile {
 public:
  explicit LockFile(const fs::path& path) : path_(path) {
    int fd =
        ::open(path.string().c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
    if (fd < 0) {
      if (errno == EEXIST)
        throw ConfigError("harness: output directory is locked (" +
                          path.string() +
                          " exists; remove it if no run is active)");
      throw IoError("harness: cannot create lock file " + path.string());
    }
    const std::string pid = std::to_string(::getpid()) + "\n";
    ssize_t n = ::write(fd, pid.data(), pid.size());
    (void)n;
    ::close(fd);
  }
  ~LockFile() {
    std::error_code ec;
    fs::remove(path_, ec);
  }
  LockFile(const LockFile&) = delete;
  LockFile& operator=(const LockFile&) = delete;

 private:
  fs::path path_;
};

[[noreturn]] void rethrow_tagged(const char* stage_name, const Error& e) {
  const std::string msg = std::string("stage ") + stage_name + ": " + e.what();
  const std::string& k = e.kind();
  if (k == "io") throw IoError(msg);
  if (k == "format") throw FormatError(msg);
  if (k == "domain") throw DomainError(msg);
  if (k == "contract") throw ContractError(msg);
  throw ConfigError(msg);
}

template <typename F>
auto stage(const char* name, F&& fn) -> decltype(fn()) {
  try {
    return fn();
  } catch (const Error& e) {
    rethrow_tagged(name, e);
  }
}

std::ofstream open_out(const fs::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("harness: cannot write " + path.string());
  return out;
}

}  // namespace

LegSeeds leg_seeds(uint64_t seed, size_t dt_index) {
  LegSeeds s;
  s.corpus = derive_seed(seed, 0x100 + dt_index);
  s.ghosts = derive_seed(seed, 0x200 + dt_index);
  s.model_init = derive_seed(seed, 0x300 + dt_index);
  s.train = derive_seed(seed, 0x400 + dt_index);
  s.attacks = derive_seed(seed, 0x500 + dt_index);
  return s;
}

ModelConfig model_config(const ExperimentConfig& cfg) {
  ModelConfig mc;
  mc.in_channels = 1;
  mc.hidden_channels = cfg.hidden;
  mc.kernel = cfg.kernel;
  mc.layers = cfg.layers;
  mc.height = cfg.side_px;
  mc.width = cfg.side_px;
  mc.peephole = cfg.peephole;
  mc.decoder_input = cfg.decoder_input;
  return mc;
}

std::vector<AdsbMessage> acquire_corpus(const ExperimentConfig& cfg,
                                        size_t dt_index) {
  std::vector<AdsbMessage> msgs;
  if (!cfg.input_path.empty()) {
    ParseResult pr = parse_messages_file(cfg.input_path, cfg.input_format);
    msgs = std::move(pr.messages);
  } else {
    ScenarioOptions opt;
    opt.arrival_rate_per_min = cfg.rate_per_min;
    opt.duration_s = cfg.leg_duration_s(dt_index);
    opt.noise = cfg.noise;
    opt.t0_ms = cfg.t0_ms;
    opt.seed = leg_seeds(cfg.seed, dt_index).corpus;
    msgs = generate_corpus(default_routes(cfg.region), cfg.region, opt);
  }
  msgs = filter_region(msgs, cfg.region);
  if (msgs.empty())
    throw DomainError("corpus is empty after region filtering");
  return msgs;
}

namespace {

// Complete 1 Hz tracks from an independently seeded scenario; ghosts get
// re-anchored onto the attack window, so only the span matters.
std::vector<std::vector<AdsbMessage>> make_ghost_routes(
    const ExperimentConfig& cfg, double span_s, uint64_t seed) {
  ScenarioOptions opt;
  opt.arrival_rate_per_min = std::max(2.0, cfg.rate_per_min);
  opt.duration_s = std::max(1800.0, 4.0 * span_s);
  opt.noise = cfg.noise;
  opt.t0_ms = cfg.t0_ms;
  opt.seed = seed;
  auto msgs = generate_corpus(default_routes(cfg.region), cfg.region, opt);
  std::map<std::string, std::vector<AdsbMessage>> by_craft;
  for (auto& m : msgs) by_craft[m.callsign].push_back(std::move(m));
  std::vector<std::vector<AdsbMessage>> routes;
  for (auto& [cs, track] : by_craft) {
    if (track.size() < 2) continue;
    const double span =
        double(track.back().time_ms - track.front().time_ms) / 1000.0;
    if (span >= span_s + 2.0) routes.push_back(std::move(track));
  }
  if (routes.empty())
    throw DomainError("harness: no ghost source route spans the window");
  return routes;
}

}  // namespace

InfectedTestset infect_leg(const ExperimentConfig& cfg, size_t dt_index,
                           const AttackContext& ctx,
                           std::vector<Segment> segments) {
  if (segments.empty())
    throw DomainError("test split yields no full 50-image segment");
  const auto& lk = cfg.leg_kinds(dt_index);
  const size_t quota = cfg.leg_quota(dt_index);
  const size_t needed =
      (lk.empty() ? 0 : lk.size() * quota) + cfg.clean_segments;
  if (needed && segments.size() > needed) segments.resize(needed);

  InfectOptions io;
  io.kinds = lk;
  io.injections_per_kind = quota;
  io.flood = cfg.flood;
  io.altitude = cfg.altitude;
  const bool wants_ghost =
      quota > 0 &&
      std::find(lk.begin(), lk.end(), AttackKind::ghost) != lk.end();
  const LegSeeds seeds = leg_seeds(cfg.seed, dt_index);
  if (wants_ghost) {
    const double dt = cfg.dt_list[dt_index];
    const double stride = double(slice_stride_ms(dt, cfg.overlap)) / 1000.0;
    const double span_s = double(kAttackImages - 1) * stride + dt;
    io.ghost_routes = make_ghost_routes(cfg, span_s, seeds.ghosts);
  }
  return build_infected_testset(segments, ctx, io, Rng(seeds.attacks));
}

std::vector<double> sequence_scores(const ConvLstmModel<float>& model,
                                    const std::vector<FrameSequence>& seqs,
                                    const SsimParams& ssim) {
  std::vector<double> scores;
  scores.reserve(seqs.size());
  for (const auto& seq : seqs) {
    auto out = model.forward(to_tensor_seq(seq));
    std::vector<FrameImage> outi;
    outi.reserve(out.size());
    for (const auto& t : out) outi.push_back(to_image(t));
    scores.push_back(frame_score(seq.images, outi, -1.0, ssim).score);
  }
  return scores;
}

SegmentScores score_segment(const ConvLstmModel<float>& model, double t1,
                            const Segment& seg, const ExperimentConfig& cfg,
                            const AttackContext& ctx) {
  SegmentScores ss;
  ss.images.reserve(seg.slices.size());
  for (const auto& sl : seg.slices)
    ss.images.push_back(render_frame(sl, ctx.proj, ctx.vp, ctx.raster));

  const int F = int(ss.images.size()) - cfg.s + 1;
  if (F < 1)
    throw ContractError("harness: segment shorter than one model sequence");
  ss.outputs.resize(size_t(F));
  ss.frames.reserve(size_t(F));
  for (int f = 0; f < F; ++f) {
    std::vector<Tensor3<float>> in;
    in.reserve(size_t(cfg.s));
    for (int j = 0; j < cfg.s; ++j)
      in.push_back(to_tensor(ss.images[size_t(f + j)]));
    auto out = model.forward(in);
    std::vector<FrameImage> outi;
    outi.reserve(out.size());
    for (const auto& t : out) outi.push_back(to_image(t));
    std::vector<FrameImage> ini(ss.images.begin() + f,
                                ss.images.begin() + f + cfg.s);
    FrameScore fsc = frame_score(ini, outi, t1, cfg.ssim);
    fsc.sequence_index = size_t(f);
    ss.frames.push_back(std::move(fsc));
    ss.outputs[size_t(f)] = std::move(outi);
  }
  ss.verdicts = detect(ss.frames, cfg.w, cfg.t2);
  return ss;
}

WindowExplanation explain_window(const WindowVerdict& v,
                                 const SegmentScores& scores,
                                 const SegmentLabel& label,
                                 const ExperimentConfig& cfg) {
  const size_t wfirst = v.window_end_index + 1 - size_t(cfg.w);
  std::vector<FrameScore> wframes(scores.frames.begin() + wfirst,
                                  scores.frames.begin() +
                                      v.window_end_index + 1);
  const WorstPick pick = worst_image(v, wframes);
  WindowExplanation ex;
  ex.frame = wfirst + pick.frame;
  ex.image = ex.frame + pick.image;
  ex.heat = tile_scores(scores.images[ex.image],
                        scores.outputs[ex.frame][pick.image], cfg.explain_n,
                        cfg.ssim);
  ex.heat.image_index = pick.flat;
  ex.tile = tile_rect(cfg.explain_n, cfg.side_px, ex.heat.worst_row,
                      ex.heat.worst_col);
  ex.hit = boxes_intersect(
      window_attack_box(label, v.window_end_index, cfg.w, cfg.s), ex.tile);
  return ex;
}

namespace {

struct KindPool {
  size_t segments = 0;
  std::vector<double> frame_scores;
  std::vector<bool> frame_labels;
  std::vector<double> win_counts;  // suspicious counts, for window_count mode
  std::vector<bool> win_labels;
  size_t windows_pos = 0, windows_neg = 0;
  size_t win_tp = 0, win_fp = 0;
  size_t xai_alarms = 0, xai_hits = 0;
};

}  // namespace

void score_leg(const ExperimentConfig& cfg, size_t dt_index,
               const AttackContext& ctx, const ConvLstmModel<float>& model,
               const InfectedTestset& infected, const std::string& leg_dir,
               DtReport& rep) {
  const fs::path dir(leg_dir);
  std::map<AttackKind, KindPool> pools;
  for (AttackKind k : cfg.leg_kinds(dt_index)) pools[k];
  std::vector<double> reserve_clean_scores;
  std::vector<double> reserve_clean_counts;

  size_t sample_seg = SIZE_MAX;
  for (size_t i = 0; i < infected.labels.size(); ++i)
    if (infected.labels[i].attacked) {
      sample_seg = i;
      break;
    }
  const fs::path frames_dir = dir / "frames";
  const fs::path explain_dir = dir / "explain";
  fs::create_directories(frames_dir);
  fs::create_directories(explain_dir);
  size_t frames_written = 0, overlays_written = 0;

  for (size_t i = 0; i < infected.segments.size(); ++i) {
    const Segment& seg = infected.segments[i];
    const SegmentLabel& label = infected.labels[i];
    KindPool* pool = label.attacked ? &pools[label.kind] : nullptr;
    if (pool) pool->segments++;

    const SegmentScores ss = score_segment(model, rep.t1, seg, cfg, ctx);

    if (i == sample_seg) {
      for (size_t j = 0;
           j < ss.images.size() && frames_written < cfg.max_frame_pngs;
           ++j) {
        write_png_gray_file(
            (frames_dir / ("seg" + std::to_string(label.segment_index) +
                           "_img" + std::to_string(j) + ".png"))
                .string(),
            ss.images[j]);
        ++frames_written;
      }
    }

    for (size_t f = 0; f < ss.frames.size(); ++f) {
      const bool posf = frame_attacked(label, f, cfg.s);
      if (pool) {
        pool->frame_scores.push_back(ss.frames[f].score);
        pool->frame_labels.push_back(posf);
      } else {
        reserve_clean_scores.push_back(ss.frames[f].score);
      }
    }

    for (const auto& v : ss.verdicts) {
      const bool posw = window_attacked(label, v.window_end_index, cfg.w,
                                        cfg.s);
      if (pool) {
        pool->win_counts.push_back(double(v.suspicious_count));
        pool->win_labels.push_back(posw);
      } else {
        reserve_clean_counts.push_back(double(v.suspicious_count));
      }
      if (posw) {
        pool->windows_pos++;
        if (v.anomalous) pool->win_tp++;
      } else {
        rep.clean_windows++;
        if (v.anomalous) rep.clean_alarms++;
        if (pool) {
          pool->windows_neg++;
          if (v.anomalous) pool->win_fp++;
        }
      }
      if (!(v.anomalous && posw && pool)) continue;

      const WindowExplanation ex = explain_window(v, ss, label, cfg);
      pool->xai_alarms++;
      if (ex.hit) pool->xai_hits++;

      if (overlays_written < cfg.max_overlays) {
        auto canvas = render_heatmap(
            ss.images[ex.image], ss.outputs[ex.frame][ex.image - ex.frame],
            ex.heat);
        const size_t window_id =
            label.segment_index * 100 + v.window_end_index;
        write_png_rgb_file(
            (explain_dir / explain_filename(window_id, ex.image)).string(),
            canvas);
        ++overlays_written;
      }
    }
  }

  rep.clean_window_fpr =
      rep.clean_windows
          ? double(rep.clean_alarms) / double(rep.clean_windows)
          : std::numeric_limits<double>::quiet_NaN();

  for (AttackKind k : cfg.leg_kinds(dt_index)) {
    KindPool& pool = pools[k];
    AttackReport ar;
    ar.kind = k;
    ar.segments = pool.segments;
    for (double sc : reserve_clean_scores) {
      pool.frame_scores.push_back(sc);
      pool.frame_labels.push_back(false);
    }
    for (double sc : reserve_clean_counts) {
      pool.win_counts.push_back(sc);
      pool.win_labels.push_back(false);
    }
    ar.frames_neg = 0;
    ar.frames_pos = 0;
    for (bool b : pool.frame_labels) ++(b ? ar.frames_pos : ar.frames_neg);
    const bool window_mode = cfg.roc_mode == SweepMode::window_count;
    const std::vector<double>& sweep_scores =
        window_mode ? pool.win_counts : pool.frame_scores;
    const std::vector<bool>& sweep_labels =
        window_mode ? pool.win_labels : pool.frame_labels;
    size_t sweep_pos = 0;
    for (bool b : sweep_labels) sweep_pos += b ? 1 : 0;
    if (sweep_pos > 0 && sweep_pos < sweep_labels.size()) {
      const double op = window_mode ? double(cfg.t2) : rep.t1;
      ar.roc = compute_roc(sweep_scores, sweep_labels, cfg.roc_mode, {op});
      ar.auc = ar.roc.auc;
      ar.tpr_at_fpr10 = ar.roc.tpr_at_fpr(0.1);
      auto rf = open_out(dir / ("roc_" +
                                    std::string(attack_kind_name(k)) +
                                    ".csv"));
      write_roc_csv(rf, ar.roc);
    } else {
      ar.auc = std::numeric_limits<double>::quiet_NaN();
      ar.tpr_at_fpr10 = std::numeric_limits<double>::quiet_NaN();
    }
    ar.windows_pos = pool.windows_pos;
    ar.windows_neg = pool.windows_neg;
    ar.window_tpr = pool.windows_pos
                        ? double(pool.win_tp) / double(pool.windows_pos)
                        : std::numeric_limits<double>::quiet_NaN();
    ar.window_fpr = pool.windows_neg
                        ? double(pool.win_fp) / double(pool.windows_neg)
                        : std::numeric_limits<double>::quiet_NaN();
    ar.xai_alarms = pool.xai_alarms;
    ar.xai_hits = pool.xai_hits;
    rep.attacks.push_back(std::move(ar));
  }
}

namespace {

DtReport run_leg(const ExperimentConfig& cfg, size_t dt_index,
                 const fs::path& leg_dir) {
  const auto leg_t0 = std::chrono::steady_clock::now();
  const double dt = cfg.dt_list[dt_index];
  DtReport rep;
  rep.dt_s = dt;

  std::error_code ec;
  fs::create_directories(leg_dir, ec);
  if (ec)
    throw IoError("harness: cannot create leg directory " + leg_dir.string());

  const AttackContext ctx = AttackContext::make(cfg.region, cfg.side_px);

  auto corpus = stage("scenario", [&] { return acquire_corpus(cfg, dt_index); });
  CorpusSplit split =
      stage("split", [&] { return split_corpus(std::move(corpus)); });
  corpus.clear();

  auto slices_train = stage("slices", [&] {
    return slice_time(std::move(split.train), dt, cfg.overlap);
  });
  auto slices_val = stage("slices", [&] {
    return slice_time(std::move(split.validation), dt, cfg.overlap);
  });
  auto slices_test = stage("slices", [&] {
    return slice_time(std::move(split.test), dt, cfg.overlap);
  });

  const LegSeeds seeds = leg_seeds(cfg.seed, dt_index);

  auto train_seqs = stage("render", [&] {
    auto seqs = render_stream(slices_train, cfg.s, ctx.proj, ctx.vp, ctx.raster);
    if (seqs.empty())
      throw DomainError("no full training sequences; corpus too short");
    if (cfg.train_cap && seqs.size() > cfg.train_cap)
      seqs.resize(cfg.train_cap);
    return seqs;
  });
  rep.train_sequences = train_seqs.size();
  slices_train.clear();

  ConvLstmModel<float> model = stage("train", [&] {
    Rng init(seeds.model_init);
    auto m = ConvLstmModel<float>::init(model_config(cfg), init);
    TrainOptions to;
    to.epochs = cfg.epochs;
    to.batch_size = cfg.batch;
    to.adam.lr = cfg.lr;
    to.seed = seeds.train;
    TrainResult tr = train_model(m, train_seqs, to);
    rep.epoch_loss = tr.epoch_loss;
    auto lf = open_out(leg_dir / "loss.csv");
    write_loss_csv(lf, tr.epoch_loss);
    save_model(m, (leg_dir / "model.vadb").string());
    return m;
  });
  train_seqs.clear();
  train_seqs.shrink_to_fit();

  stage("calibrate", [&] {
    auto val_seqs = render_stream(slices_val, cfg.s, ctx.proj, ctx.vp,
                                  ctx.raster);
    if (val_seqs.empty())
      throw DomainError("no validation sequences; corpus too short");
    if (cfg.val_cap && val_seqs.size() > cfg.val_cap)
      val_seqs.resize(cfg.val_cap);
    rep.val_sequences = val_seqs.size();
    const std::vector<double> scores =
        sequence_scores(model, val_seqs, cfg.ssim);
    rep.val_mean_ssim = mean_of(scores);
    rep.t1 = cfg.t1_override ? *cfg.t1_override
                             : calibrate_t1(scores, cfg.t1_pct);
    auto cf = open_out(leg_dir / "calibration.cfg");
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", rep.t1);
    cf << "t1 = " << buf << "\n";
    std::snprintf(buf, sizeof buf, "%.17g", rep.val_mean_ssim);
    cf << "val_mean_ssim = " << buf << "\n";
  });
  slices_val.clear();
  rep.train_wall_s =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - leg_t0)
          .count();

  InfectedTestset infected = stage("inject", [&] {
    auto result = infect_leg(cfg, dt_index, ctx, segment_test_set(slices_test));
    write_labels_csv_file((leg_dir / "labels.csv").string(), result.labels);
    return result;
  });
  slices_test.clear();
  rep.segments_total = infected.segments.size();
  rep.segments_injected = infected.injected;
  rep.skip_notes = infected.skip_notes;

  stage("detect", [&] {
    score_leg(cfg, dt_index, ctx, model, infected, leg_dir.string(), rep);
    return 0;
  });

  return rep;
}

std::string leg_dir_name(double dt) { return "dt_" + fmt9(dt); }

}  // namespace

MetricsReport run_experiment(const ExperimentConfig& cfg) {
  cfg.validate();
  const fs::path out(cfg.out_dir);
  std::error_code ec;
  fs::create_directories(out, ec);
  if (ec)
    throw IoError("harness: cannot create output directory " + out.string());
  LockFile lock(out / ".lock");

  MetricsReport report;
  for (size_t i = 0; i < cfg.dt_list.size(); ++i) {
    const fs::path leg_dir =
        i == 0 ? out : out / leg_dir_name(cfg.dt_list[i]);
    report.per_dt.push_back(run_leg(cfg, i, leg_dir));
    auto mf = open_out(out / "metrics.csv");
    write_metrics_csv(mf, report);
  }
  return report;
}

}  // namespace airtrace
