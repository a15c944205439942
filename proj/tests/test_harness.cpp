// Harness tests: ROC math, ground-truth helpers, config parsing, metrics
// serialization, and an end-to-end smoke run on a miniature experiment.
#include <doctest.h>

#include <cmath>
#include <cstdlib>
#include <unistd.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "airtrace/harness.hpp"
#include "airtrace/rng.hpp"

using namespace airtrace;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path fresh_dir(const std::string& tag) {
  fs::path dir = fs::temp_directory_path() /
                 ("airtrace_harness_" + tag + "_" + std::to_string(getpid()));
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

SegmentLabel tail_attacked_label(int first_attacked, PixelBox box) {
  SegmentLabel label;
  label.segment_index = 0;
  label.attacked = true;
  label.kind = AttackKind::flood;
  label.images.resize(kSegmentImages);
  for (size_t j = 0; j < kSegmentImages; ++j) {
    label.images[j].segment_index = 0;
    label.images[j].image_index = j;
    if (int(j) >= first_attacked) {
      label.images[j].attacked = true;
      label.images[j].kind = AttackKind::flood;
      label.images[j].bbox = box;
    }
  }
  return label;
}

}  // namespace

TEST_SUITE_BEGIN("harness");

TEST_CASE("roc separable hand case gives auc one") {
  const std::vector<double> scores{0.1, 0.2, 0.8, 0.9};
  const std::vector<bool> labels{true, true, false, false};
  RocCurve roc = compute_roc(scores, labels, SweepMode::frame_score);
  CHECK(roc.auc == doctest::Approx(1.0).epsilon(1e-12));
  REQUIRE(roc.points.size() >= 2);
  CHECK(roc.points.front().fpr == 0.0);
  CHECK(roc.points.front().tpr == 0.0);
  CHECK(std::isinf(roc.points.front().threshold));
  CHECK(roc.points.back().fpr == 1.0);
  CHECK(roc.points.back().tpr == 1.0);
  for (size_t i = 1; i < roc.points.size(); ++i) {
    CHECK(roc.points[i].fpr >= roc.points[i - 1].fpr);
    CHECK(roc.points[i].tpr >= roc.points[i - 1].tpr);
  }
}

TEST_CASE("roc anti separated scores give auc zero") {
  const std::vector<double> scores{0.9, 0.8, 0.1, 0.2};
  const std::vector<bool> labels{true, true, false, false};
  RocCurve roc = compute_roc(scores, labels, SweepMode::frame_score);
  CHECK(roc.auc == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("roc window count mode sweeps high-is-alarm") {
  const std::vector<double> counts{9, 7, 2, 0};
  const std::vector<bool> labels{true, true, false, false};
  RocCurve roc = compute_roc(counts, labels, SweepMode::window_count);
  CHECK(roc.auc == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(roc.points.front().fpr == 0.0);
  CHECK(roc.points.back().tpr == 1.0);
  for (size_t i = 1; i < roc.points.size(); ++i)
    CHECK(roc.points[i].fpr >= roc.points[i - 1].fpr);
}

TEST_CASE("roc on random labels is near one half") {
  Rng rng(123);
  std::vector<double> scores;
  std::vector<bool> labels;
  for (int i = 0; i < 1000; ++i) {
    scores.push_back(rng.uniform());
    labels.push_back(rng.uniform() < 0.5);
  }
  RocCurve roc = compute_roc(scores, labels, SweepMode::frame_score);
  CHECK(std::abs(roc.auc - 0.5) < 0.1);
}

TEST_CASE("roc all-tied scores give auc one half") {
  const std::vector<double> scores{0.7, 0.7, 0.7, 0.7};
  const std::vector<bool> labels{true, false, true, false};
  RocCurve roc = compute_roc(scores, labels, SweepMode::frame_score);
  CHECK(roc.auc == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("roc rejects degenerate inputs") {
  CHECK_THROWS_AS(compute_roc({0.1, 0.2}, {true, true},
                              SweepMode::frame_score),
                  DomainError);
  CHECK_THROWS_AS(compute_roc({0.1, 0.2}, {false, false},
                              SweepMode::frame_score),
                  DomainError);
  CHECK_THROWS_AS(compute_roc({}, {}, SweepMode::frame_score), ContractError);
  CHECK_THROWS_AS(compute_roc({0.1}, {true, false}, SweepMode::frame_score),
                  ContractError);
}

TEST_CASE("roc keeps the operating threshold among sweep points") {
  const std::vector<double> scores{0.1, 0.2, 0.8, 0.9};
  const std::vector<bool> labels{true, true, false, false};
  RocCurve roc =
      compute_roc(scores, labels, SweepMode::frame_score, {0.5});
  bool found = false;
  for (const auto& p : roc.points)
    if (p.threshold == 0.5) {
      found = true;
      CHECK(p.tpr == doctest::Approx(1.0));
      CHECK(p.fpr == doctest::Approx(0.0));
    }
  CHECK(found);
}

TEST_CASE("tpr_at_fpr picks the best point within budget") {
  RocCurve roc;
  const double inf = std::numeric_limits<double>::infinity();
  roc.points = {{-inf, 0.0, 0.0},
                {0.3, 0.0, 0.6},
                {0.5, 0.2, 0.8},
                {inf, 1.0, 1.0}};
  CHECK(roc.tpr_at_fpr(0.1) == doctest::Approx(0.6));
  CHECK(roc.tpr_at_fpr(0.2) == doctest::Approx(0.8));
  CHECK(roc.tpr_at_fpr(1.0) == doctest::Approx(1.0));
}

TEST_CASE("roc csv serializes anchors and points") {
  const std::vector<double> scores{0.25, 0.75};
  const std::vector<bool> labels{true, false};
  RocCurve roc = compute_roc(scores, labels, SweepMode::frame_score);
  std::ostringstream out;
  write_roc_csv(out, roc);
  CHECK(out.str() ==
        "threshold,fpr,tpr\n"
        "-inf,0,0\n"
        "0.25,0,0\n"
        "0.75,0,1\n"
        "inf,1,1\n");
}

TEST_CASE("frame and window ground truth follow image coverage") {
  SegmentLabel label = tail_attacked_label(35, {10, 12, 20, 22});
  const int s = 15, w = 10;

  CHECK_FALSE(frame_attacked(label, 20, s));  // covers 20..34
  CHECK(frame_attacked(label, 21, s));        // covers 21..35
  CHECK(frame_attacked(label, 35, s));
  CHECK_FALSE(frame_attacked(label, 0, 1));
  CHECK(frame_attacked(label, 35, 1));

  CHECK_FALSE(window_attacked(label, 20, w, s));  // frames 11..20, imgs ..34
  CHECK(window_attacked(label, 21, w, s));        // frame 21 reaches img 35
  CHECK(window_attacked(label, 35, w, s));

  PixelBox box = window_attack_box(label, 35, w, s);
  CHECK((box == PixelBox{10, 12, 20, 22}));
  CHECK(window_attack_box(label, 20, w, s).empty());
}

TEST_CASE("window attack box merges disjoint injections") {
  SegmentLabel label;
  label.segment_index = 3;
  label.attacked = true;
  label.kind = AttackKind::ghost;
  label.images.resize(kSegmentImages);
  for (size_t j = 0; j < kSegmentImages; ++j) label.images[j].image_index = j;
  label.images[40].attacked = true;
  label.images[40].bbox = {2, 4, 6, 8};
  label.images[44].attacked = true;
  label.images[44].bbox = {30, 31, 40, 41};

  PixelBox both = window_attack_box(label, 35, 10, 15);  // images 26..49
  CHECK((both == PixelBox{2, 4, 40, 41}));
  CHECK(frame_attacked(label, 36, 5));   // covers 36..40
  CHECK_FALSE(frame_attacked(label, 41, 3));  // covers 41..43
}

TEST_CASE("tile_rect partitions the image") {
  CHECK((tile_rect(4, 64, 0, 0) == PixelBox{0, 0, 15, 15}));
  CHECK((tile_rect(4, 64, 3, 3) == PixelBox{48, 48, 63, 63}));
  CHECK((tile_rect(4, 64, 1, 2) == PixelBox{32, 16, 47, 31}));
  CHECK((tile_rect(2, 32, 1, 0) == PixelBox{0, 16, 15, 31}));
}

TEST_CASE("experiment config defaults and overrides") {
  ExperimentConfig def = ExperimentConfig::from_config(Config{});
  CHECK(def.seed == 1);
  CHECK(def.side_px == 64);
  CHECK(def.s == 15);
  CHECK(def.w == 10);
  CHECK(def.t2 == 5);
  CHECK(def.t1_pct == doctest::Approx(0.05));
  CHECK(def.kinds.size() == 5);
  CHECK(def.decoder_input == DecoderInputMode::prev_only);
  CHECK_FALSE(def.t1_override.has_value());

  Config file = Config::parse(
      "seed = 9\n"
      "image.side_px = 32\n"
      "slices.dt_s = 2, 20\n"
      "model.s = 4\n"
      "detector.w = 3\n"
      "detector.t2 = 1\n"
      "detector.t1 = 0.75\n"
      "attacks.kinds = flood, jam\n"
      "attacks.sweep_kinds = flood\n"
      "attacks.per_kind = 7\n"
      "attacks.sweep_per_kind = 3\n"
      "model.decoder_input = current_only\n"
      "roc.mode = window_count\n"
      "explain.n = 8\n");
  ExperimentConfig cfg = ExperimentConfig::from_config(file);
  CHECK(cfg.seed == 9);
  CHECK((cfg.dt_list == std::vector<double>{2.0, 20.0}));
  CHECK((cfg.kinds ==
         std::vector<AttackKind>{AttackKind::flood, AttackKind::jam}));
  CHECK(cfg.t1_override.has_value());
  CHECK(*cfg.t1_override == doctest::Approx(0.75));
  CHECK(cfg.decoder_input == DecoderInputMode::current_only);
  CHECK(cfg.roc_mode == SweepMode::window_count);

  CHECK(cfg.leg_kinds(0) == cfg.kinds);
  CHECK((cfg.leg_kinds(1) == std::vector<AttackKind>{AttackKind::flood}));
  CHECK(cfg.leg_quota(0) == 7);
  CHECK(cfg.leg_quota(1) == 3);
}

TEST_CASE("experiment config rejects unknown keys and bad values") {
  auto reject = [](const std::string& text) {
    CHECK_THROWS_AS(ExperimentConfig::from_config(Config::parse(text)),
                    ConfigError);
  };
  reject("no.such.key = 1\n");
  reject("image.side_px = 4\n");
  reject("slices.dt_s = 2, 2\n");
  reject("slices.dt_s =\n");
  reject("slices.overlap = 1.0\n");
  reject("model.s = 51\n");
  reject("detector.w = 50\n");          // w + s > 51
  reject("detector.t2 = 10\n");         // t2 >= w
  reject("detector.t1_pct = 0\n");
  reject("model.kernel = 4\n");
  reject("model.decoder_input = sideways\n");
  reject("input.format = xml\n");
  reject("attacks.kinds = flood, gremlin\n");
  reject("explain.n = 5\n");            // 64 % 5 != 0
  reject("scenario.rate_per_min = 0\n");
  reject("roc.mode = banana\n");
}

TEST_CASE("experiment config honors the output root override") {
  setenv("AIRTRACE_OUT_ROOT", "/srv/results", 1);
  Config rel = Config::parse("out_dir = exp1\n");
  ExperimentConfig cfg = ExperimentConfig::from_config(rel);
  CHECK(cfg.out_dir == "/srv/results/exp1");

  Config abs = Config::parse("out_dir = /data/run\n");
  CHECK(ExperimentConfig::from_config(abs).out_dir == "/data/run");
  unsetenv("AIRTRACE_OUT_ROOT");

  CHECK(ExperimentConfig::from_config(rel).out_dir == "exp1");
}

TEST_CASE("leg duration scales with the schedule") {
  ExperimentConfig cfg;
  cfg.duration_s = 0.0;
  const double d0 = cfg.leg_duration_s(0);
  CHECK(d0 > 0.0);

  ExperimentConfig more = cfg;
  more.per_kind = cfg.per_kind * 2;
  CHECK(more.leg_duration_s(0) > d0);

  ExperimentConfig fixed = cfg;
  fixed.duration_s = 1234.0;
  CHECK(fixed.leg_duration_s(0) == doctest::Approx(1234.0));
  CHECK(fixed.leg_duration_s(0) == fixed.leg_duration_s(0));

  // Sweep legs with a one-kind schedule need less traffic.
  ExperimentConfig sweep = cfg;
  sweep.dt_list = {2.0, 2.5};
  sweep.sweep_kinds = {AttackKind::flood};
  sweep.sweep_per_kind = 10;
  CHECK(sweep.leg_duration_s(1) < sweep.leg_duration_s(0));
}

TEST_CASE("metrics csv lays out clean and attack rows") {
  MetricsReport report;
  DtReport leg;
  leg.dt_s = 2.0;
  leg.t1 = 0.875;
  leg.val_mean_ssim = 0.9375;
  leg.segments_total = 12;
  leg.clean_windows = 40;
  leg.clean_alarms = 2;
  leg.clean_window_fpr = 0.05;
  AttackReport a;
  a.kind = AttackKind::flood;
  a.segments = 2;
  a.frames_pos = 30;
  a.frames_neg = 42;
  a.auc = 0.9;
  a.tpr_at_fpr10 = 0.8;
  a.windows_pos = 27;
  a.windows_neg = 24;
  a.window_tpr = 0.5;
  a.window_fpr = 0.125;
  a.xai_alarms = 10;
  a.xai_hits = 9;
  leg.attacks.push_back(a);
  AttackReport empty_kind;
  empty_kind.kind = AttackKind::reverse;
  empty_kind.auc = std::numeric_limits<double>::quiet_NaN();
  empty_kind.tpr_at_fpr10 = std::numeric_limits<double>::quiet_NaN();
  empty_kind.window_tpr = std::numeric_limits<double>::quiet_NaN();
  empty_kind.window_fpr = std::numeric_limits<double>::quiet_NaN();
  leg.attacks.push_back(empty_kind);
  report.per_dt.push_back(leg);

  std::ostringstream out;
  write_metrics_csv(out, report);
  CHECK(out.str() ==
        "dt_s,attack,segments,frames_pos,frames_neg,auc,tpr_at_fpr10,"
        "windows_pos,windows_neg,window_tpr,window_fpr,xai_alarms,xai_hits,"
        "t1,val_mean_ssim,clean_windows,clean_window_fpr\n"
        "2,clean,12,,,,,,,,,,,0.875,0.9375,40,0.05\n"
        "2,flood,2,30,42,0.9,0.8,27,24,0.5,0.125,10,9,,,,\n"
        "2,reverse,0,0,0,,,0,0,,,0,0,,,,\n");
}

TEST_CASE("run_experiment smoke: artifacts, report, determinism") {
  const fs::path base = fresh_dir("smoke");
  auto make_cfg = [&](const std::string& sub) {
    Config file = Config::parse(
        "seed = 7\n"
        "image.side_px = 32\n"
        "slices.dt_s = 3\n"
        "model.s = 4\n"
        "model.hidden = 4\n"
        "train.epochs = 1\n"
        "train.batch = 4\n"
        "train.max_sequences = 20\n"
        "valid.max_sequences = 10\n"
        "detector.w = 3\n"
        "detector.t2 = 1\n"
        "attacks.kinds = flood, change_altitude\n"
        "attacks.per_kind = 2\n"
        "attacks.clean_segments = 1\n"
        "scenario.rate_per_min = 3\n"
        "explain.max_overlays = 4\n"
        "frames.max_pngs = 8\n");
    file.set("out_dir", (base / sub).string());
    return ExperimentConfig::from_config(file);
  };

  ExperimentConfig cfg = make_cfg("run1");
  MetricsReport report = run_experiment(cfg);

  REQUIRE(report.per_dt.size() == 1);
  const DtReport& leg = report.per_dt[0];
  CHECK(leg.dt_s == doctest::Approx(3.0));
  CHECK(leg.segments_total == 5);  // 2 kinds x 2 + 1 clean
  CHECK(leg.t1 >= -1.0);
  CHECK(leg.t1 <= 1.0);
  CHECK(leg.val_mean_ssim >= -1.0);
  CHECK(leg.val_mean_ssim <= 1.0);
  CHECK(leg.epoch_loss.size() == 1);
  CHECK(leg.clean_windows > 0);
  REQUIRE(leg.attacks.size() == 2);
  CHECK(leg.attacks[0].kind == AttackKind::flood);
  CHECK(leg.attacks[1].kind == AttackKind::change_altitude);
  for (const auto& a : leg.attacks) {
    CHECK(a.segments <= 2);
    if (a.segments > 0) {
      CHECK(a.frames_pos > 0);
      CHECK(a.windows_pos > 0);
    }
  }

  const fs::path out(cfg.out_dir);
  CHECK(fs::exists(out / "metrics.csv"));
  CHECK(fs::exists(out / "model.vadb"));
  CHECK(fs::exists(out / "loss.csv"));
  CHECK(fs::exists(out / "calibration.cfg"));
  CHECK(fs::exists(out / "labels.csv"));
  CHECK_FALSE(fs::exists(out / ".lock"));
  size_t frame_pngs = 0;
  if (fs::exists(out / "frames"))
    for (const auto& e : fs::directory_iterator(out / "frames"))
      frame_pngs += e.path().extension() == ".png";
  CHECK(frame_pngs > 0);
  CHECK(frame_pngs <= 8);

  // metrics.csv holds one clean row plus one row per configured kind.
  const std::string metrics1 = slurp(out / "metrics.csv");
  CHECK(std::count(metrics1.begin(), metrics1.end(), '\n') == 4);

  // Same config, fresh directory: byte-identical metrics and model.
  ExperimentConfig cfg2 = make_cfg("run2");
  run_experiment(cfg2);
  CHECK(slurp(fs::path(cfg2.out_dir) / "metrics.csv") == metrics1);
  CHECK(slurp(fs::path(cfg2.out_dir) / "model.vadb") ==
        slurp(out / "model.vadb"));

  fs::remove_all(base);
}

TEST_CASE("run_experiment refuses a locked output directory") {
  const fs::path base = fresh_dir("lock");
  ExperimentConfig cfg;
  cfg.out_dir = (base / "out").string();
  fs::create_directories(cfg.out_dir);
  std::ofstream(fs::path(cfg.out_dir) / ".lock") << "held\n";
  CHECK_THROWS_AS(run_experiment(cfg), ConfigError);
  fs::remove_all(base);
}

TEST_SUITE_END();
