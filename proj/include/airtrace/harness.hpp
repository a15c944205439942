#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "airtrace/attacks.hpp"
#include "airtrace/config.hpp"
#include "airtrace/convlstm.hpp"
#include "airtrace/detector.hpp"
#include "airtrace/explain.hpp"
#include "airtrace/scenario.hpp"

namespace airtrace {

// What the ROC threshold sweeps over: per-frame SSIM scores (low = alarm,
// matching t1) or per-window suspicious counts (high = alarm, matching t2).
enum class SweepMode { frame_score, window_count };

SweepMode sweep_mode_from_name(const std::string& name);  // ConfigError

struct RocPoint {
  double threshold = 0.0;  // in the original score scale; +-inf at anchors
  double fpr = 0.0;
  double tpr = 0.0;
};

struct RocCurve {
  std::vector<RocPoint> points;  // FPR ascending, anchored at (0,0) and (1,1)
  double auc = 0.0;

  // TPR of the last sweep point whose FPR stays at or under max_fpr.
  double tpr_at_fpr(double max_fpr) const;
};

// labels: true = attacked. frame_score predicts positive when score <
// threshold (the t1 rule); window_count predicts positive when the count
// exceeds the threshold (the t2 rule). Thresholds sweep every distinct score
// plus extra_thresholds. Needs both classes present (DomainError).
RocCurve compute_roc(const std::vector<double>& scores,
                     const std::vector<bool>& labels, SweepMode mode,
                     const std::vector<double>& extra_thresholds = {});

void write_roc_csv(std::ostream& out, const RocCurve& roc);

// Ground-truth helpers for the segment protocol: frame f covers images
// [f, f+s-1] of its segment; the window ending at frame e covers frames
// [e-w+1, e] and therefore images [e-w+1, e+s-1].
bool frame_attacked(const SegmentLabel& label, size_t f, int s);
bool window_attacked(const SegmentLabel& label, size_t e, int w, int s);
PixelBox window_attack_box(const SegmentLabel& label, size_t e, int w, int s);

// Pixel rectangle of tile (row, col) on an n x n grid over a side x side
// image.
PixelBox tile_rect(int n, int side, int row, int col);

struct ExperimentConfig {
  uint64_t seed = 1;
  std::string out_dir = "out";
  std::string input_path;  // empty: synthesize traffic instead of reading
  MessageFormat input_format = MessageFormat::csv;

  Region region;
  int side_px = 64;
  std::vector<double> dt_list{2.0};  // seconds; first entry is the main leg
  double overlap = 0.5;
  int s = 15;  // images per model sequence

  int hidden = 8;
  int kernel = 3;
  int layers = 1;
  bool peephole = false;
  DecoderInputMode decoder_input = DecoderInputMode::prev_only;

  int epochs = 16;
  int batch = 4;
  double lr = 1e-3;
  size_t train_cap = 240;  // sequences used for training (0 = no cap)
  size_t val_cap = 120;    // sequences used for calibration (0 = no cap)

  int w = 10;
  int t2 = 5;
  double t1_pct = 0.05;
  std::optional<double> t1_override;
  SsimParams ssim;

  std::vector<AttackKind> kinds{AttackKind::flood, AttackKind::ghost,
                                AttackKind::jam, AttackKind::reverse,
                                AttackKind::change_altitude};
  size_t per_kind = 50;
  // Non-first dt legs use the sweep schedule (defaults: same kinds, half
  // quota) to keep sweep corpora affordable.
  std::vector<AttackKind> sweep_kinds;  // empty: same as kinds
  size_t sweep_per_kind = 25;
  size_t clean_segments = 10;  // never-injected segments kept for clean FPR
  FloodOptions flood;
  AltitudeOptions altitude;

  double rate_per_min = 0.8;
  double duration_s = 0.0;  // 0: sized per leg from the caps above
  int64_t t0_ms = 1'600'000'000'000;
  NoiseLevels noise;

  int explain_n = 4;
  size_t max_overlays = 16;   // explain/*.png cap
  size_t max_frame_pngs = 60; // frames/*.png cap
  SweepMode roc_mode = SweepMode::frame_score;

  // Reads every known key, rejects unknown ones, applies the
  // AIRTRACE_OUT_ROOT environment override to a relative out_dir, and
  // validates ranges.
  static ExperimentConfig from_config(const Config& file);
  void validate() const;

  const std::vector<AttackKind>& leg_kinds(size_t dt_index) const;
  size_t leg_quota(size_t dt_index) const;
  double leg_duration_s(size_t dt_index) const;  // explicit or auto-sized
};

// Stage seeds forked per dt leg, so legs stay independent of each other yet
// fully determined by the experiment seed.
struct LegSeeds {
  uint64_t corpus = 0;
  uint64_t ghosts = 0;
  uint64_t model_init = 0;
  uint64_t train = 0;
  uint64_t attacks = 0;
};
LegSeeds leg_seeds(uint64_t seed, size_t dt_index);

// Model shape implied by the experiment config.
ModelConfig model_config(const ExperimentConfig& cfg);

// Synthesizes (or reads and region-filters) the leg's traffic.
std::vector<AdsbMessage> acquire_corpus(const ExperimentConfig& cfg,
                                        size_t dt_index);

// Applies the leg's attack schedule to the segmented test split: trims to
// the scheduled segment count, prepares ghost source routes when the
// schedule asks for them, and injects with the leg's attack seed.
InfectedTestset infect_leg(const ExperimentConfig& cfg, size_t dt_index,
                           const AttackContext& ctx,
                           std::vector<Segment> segments);

// Mean frame score of each clean sequence, as used for calibration.
std::vector<double> sequence_scores(const ConvLstmModel<float>& model,
                                    const std::vector<FrameSequence>& seqs,
                                    const SsimParams& ssim);

// One segment under the sliding-frame protocol: all 50 slices rendered,
// F = 50-s+1 frames reconstructed and scored against t1, then windowed
// verdicts over the frame scores.
struct SegmentScores {
  std::vector<FrameImage> images;
  std::vector<std::vector<FrameImage>> outputs;  // per frame: s reconstructions
  std::vector<FrameScore> frames;
  std::vector<WindowVerdict> verdicts;
};
SegmentScores score_segment(const ConvLstmModel<float>& model, double t1,
                            const Segment& seg, const ExperimentConfig& cfg,
                            const AttackContext& ctx);

// Worst-tile localization for one anomalous window: the offending image is
// scores.images[image], its reconstruction scores.outputs[frame][image -
// frame].
struct WindowExplanation {
  size_t frame = 0;  // frame index within the segment
  size_t image = 0;  // image index within the segment
  TileHeatmap heat;
  PixelBox tile;     // pixel rect of the worst tile
  bool hit = false;  // tile intersects the labelled injection box
};
WindowExplanation explain_window(const WindowVerdict& v,
                                 const SegmentScores& scores,
                                 const SegmentLabel& label,
                                 const ExperimentConfig& cfg);

struct AttackReport {
  AttackKind kind = AttackKind::flood;
  size_t segments = 0;  // segments carrying this attack
  size_t frames_pos = 0;
  size_t frames_neg = 0;
  RocCurve roc;         // empty when either class is missing
  double auc = 0.0;     // NaN when the curve is empty
  double tpr_at_fpr10 = 0.0;
  size_t windows_pos = 0;
  size_t windows_neg = 0;
  double window_tpr = 0.0;  // at the calibrated (t1, t2) operating point
  double window_fpr = 0.0;
  size_t xai_alarms = 0;  // alarmed attacked windows examined
  size_t xai_hits = 0;    // worst tile intersected the injection box
};

struct DtReport {
  double dt_s = 0.0;
  double t1 = 0.0;
  double val_mean_ssim = 0.0;
  std::vector<double> epoch_loss;
  size_t train_sequences = 0;  // after the train cap
  size_t val_sequences = 0;    // after the validation cap
  double train_wall_s = 0.0;   // leg start through calibration, seconds
  size_t segments_total = 0;
  size_t segments_injected = 0;
  std::vector<std::string> skip_notes;
  size_t clean_windows = 0;
  size_t clean_alarms = 0;
  double clean_window_fpr = 0.0;
  std::vector<AttackReport> attacks;
};

struct MetricsReport {
  std::vector<DtReport> per_dt;
};

// The detection pass over an infected test set: scores every segment, pools
// frames and windows per attack kind (never-injected segments feed every
// kind's negatives), localizes alarmed attacked windows, writes frames/,
// explain/ and roc_<kind>.csv under leg_dir, and fills the report's
// detection fields. Expects rep.t1 already calibrated.
void score_leg(const ExperimentConfig& cfg, size_t dt_index,
               const AttackContext& ctx, const ConvLstmModel<float>& model,
               const InfectedTestset& infected, const std::string& leg_dir,
               DtReport& rep);

// One row per (dt, attack kind) plus one clean row per dt; inapplicable
// cells stay empty.
void write_metrics_csv(std::ostream& out, const MetricsReport& report);

// The full pipeline: per dt leg, acquire traffic -> split -> slice ->
// render -> train -> calibrate -> inject -> detect -> explain -> metrics.
// Artifacts land under cfg.out_dir (first leg at the root, later legs under
// dt_<value>/); holds a .lock file for the duration. Stage failures abort
// with the stage name prefixed to the error.
MetricsReport run_experiment(const ExperimentConfig& cfg);

}  // namespace airtrace
