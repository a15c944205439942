// Command-line front end. `run-all` drives the whole experiment; the other
// subcommands run one pipeline stage each, sharing artifacts through the
// output directory so a pipeline can be replayed or resumed piecewise.
// Stage commands always work on the first dt leg, at the directory root.

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <CLI11.hpp>

#include "airtrace/harness.hpp"
#include "airtrace/image_io.hpp"
#include "airtrace/ingest.hpp"

using namespace airtrace;

namespace {

namespace fs = std::filesystem;

struct Overrides {
  std::string config_path;
  uint64_t seed = 0;
  bool seed_set = false;
  std::vector<double> dts;
  std::vector<std::string> kinds;
  std::string out;
  std::string input;
  std::string format;
};

std::string fmt17(double v) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

ExperimentConfig load_config(const Overrides& ov) {
  Config file = ov.config_path.empty() ? Config()
                                       : Config::parse_file(ov.config_path);
  if (ov.seed_set) file.set("seed", std::to_string(ov.seed));
  if (!ov.dts.empty()) {
    std::string joined;
    for (double v : ov.dts) {
      if (!joined.empty()) joined += ", ";
      joined += fmt17(v);
    }
    file.set("slices.dt_s", joined);
  }
  if (!ov.kinds.empty()) {
    std::string joined;
    for (const auto& k : ov.kinds) {
      if (!joined.empty()) joined += ", ";
      joined += k;
    }
    file.set("attacks.kinds", joined);
  }
  if (!ov.out.empty()) file.set("out_dir", ov.out);
  if (!ov.input.empty()) file.set("input.path", ov.input);
  if (!ov.format.empty()) file.set("input.format", ov.format);
  ExperimentConfig cfg = ExperimentConfig::from_config(file);
  cfg.validate();
  return cfg;
}

fs::path out_path(const ExperimentConfig& cfg, const char* name) {
  return fs::path(cfg.out_dir) / name;
}

void ensure_out(const ExperimentConfig& cfg) {
  std::error_code ec;
  fs::create_directories(cfg.out_dir, ec);
  if (ec) throw IoError("cannot create output directory " + cfg.out_dir);
}

std::vector<AdsbMessage> load_corpus(const ExperimentConfig& cfg) {
  const fs::path p = out_path(cfg, "corpus.csv");
  if (!fs::exists(p))
    throw IoError("no corpus at " + p.string() +
                  "; run generate or ingest first");
  return parse_messages_file(p.string(), MessageFormat::csv).messages;
}

ConvLstmModel<float> load_trained_model(const ExperimentConfig& cfg) {
  const fs::path p = out_path(cfg, "model.vadb");
  if (!fs::exists(p))
    throw IoError("no trained model at " + p.string() + "; run train first");
  return load_model(p.string(), model_config(cfg));
}

double load_calibration(const ExperimentConfig& cfg, double* val_ssim) {
  const fs::path p = out_path(cfg, "calibration.cfg");
  if (!fs::exists(p))
    throw IoError("no calibration at " + p.string() + "; run calibrate first");
  Config c = Config::parse_file(p.string());
  if (!c.has("t1"))
    throw FormatError("calibration file lacks t1: " + p.string());
  if (val_ssim) *val_ssim = c.get_double("val_mean_ssim", 0.0);
  return c.get_double("t1", 0.0);
}

std::ofstream open_out(const fs::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  return out;
}

// Test split -> 50-image segments -> scheduled injections, exactly as the
// full runner builds them for the first leg.
InfectedTestset build_testset(const ExperimentConfig& cfg,
                              const AttackContext& ctx,
                              std::vector<AdsbMessage> msgs) {
  CorpusSplit split = split_corpus(std::move(msgs));
  auto slices = slice_time(std::move(split.test), cfg.dt_list[0], cfg.overlap);
  return infect_leg(cfg, 0, ctx, segment_test_set(slices));
}

int cmd_generate(ExperimentConfig cfg) {
  cfg.input_path.clear();
  ensure_out(cfg);
  auto msgs = acquire_corpus(cfg, 0);
  write_messages_csv_file(out_path(cfg, "corpus.csv").string(), msgs);
  auto [lo, hi] = std::minmax_element(
      msgs.begin(), msgs.end(), [](const AdsbMessage& a, const AdsbMessage& b) {
        return a.time_ms < b.time_ms;
      });
  std::cout << "corpus.csv: " << msgs.size() << " messages spanning "
            << double(hi->time_ms - lo->time_ms) / 1000.0 << " s\n";
  return 0;
}

int cmd_ingest(const ExperimentConfig& cfg) {
  if (cfg.input_path.empty())
    throw ConfigError("ingest needs input.path in the config or --input");
  ensure_out(cfg);
  auto msgs = acquire_corpus(cfg, 0);
  write_messages_csv_file(out_path(cfg, "corpus.csv").string(), msgs);
  std::cout << "corpus.csv: " << msgs.size() << " messages kept from "
            << cfg.input_path << "\n";
  return 0;
}

int cmd_render(const ExperimentConfig& cfg) {
  CorpusSplit split = split_corpus(load_corpus(cfg));
  auto slices =
      slice_time(std::move(split.train), cfg.dt_list[0], cfg.overlap);
  if (slices.empty()) throw DomainError("train split yields no slices");
  const AttackContext ctx = AttackContext::make(cfg.region, cfg.side_px);
  const fs::path dir = out_path(cfg, "frames");
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string());
  const size_t n = std::min(cfg.max_frame_pngs, slices.size());
  for (size_t j = 0; j < n; ++j)
    write_png_gray_file((dir / ("img" + std::to_string(j) + ".png")).string(),
                        render_frame(slices[j], ctx.proj, ctx.vp, ctx.raster));
  std::cout << slices.size() << " train slices at dt " << cfg.dt_list[0]
            << " s; wrote " << n << " sample frames\n";
  return 0;
}

int cmd_train(const ExperimentConfig& cfg) {
  CorpusSplit split = split_corpus(load_corpus(cfg));
  auto slices =
      slice_time(std::move(split.train), cfg.dt_list[0], cfg.overlap);
  const AttackContext ctx = AttackContext::make(cfg.region, cfg.side_px);
  auto seqs = render_stream(slices, cfg.s, ctx.proj, ctx.vp, ctx.raster);
  if (seqs.empty())
    throw DomainError("no full training sequences; corpus too short");
  if (cfg.train_cap && seqs.size() > cfg.train_cap) seqs.resize(cfg.train_cap);

  const LegSeeds seeds = leg_seeds(cfg.seed, 0);
  Rng init(seeds.model_init);
  auto model = ConvLstmModel<float>::init(model_config(cfg), init);
  TrainOptions to;
  to.epochs = cfg.epochs;
  to.batch_size = cfg.batch;
  to.adam.lr = cfg.lr;
  to.seed = seeds.train;
  TrainResult tr = train_model(model, seqs, to);

  auto lf = open_out(out_path(cfg, "loss.csv"));
  write_loss_csv(lf, tr.epoch_loss);
  save_model(model, out_path(cfg, "model.vadb").string());
  std::cout << "trained on " << seqs.size() << " sequences for " << cfg.epochs
            << " epochs; final loss " << tr.epoch_loss.back()
            << "; wrote model.vadb\n";
  return 0;
}

int cmd_calibrate(const ExperimentConfig& cfg) {
  auto model = load_trained_model(cfg);
  CorpusSplit split = split_corpus(load_corpus(cfg));
  auto slices =
      slice_time(std::move(split.validation), cfg.dt_list[0], cfg.overlap);
  const AttackContext ctx = AttackContext::make(cfg.region, cfg.side_px);
  auto seqs = render_stream(slices, cfg.s, ctx.proj, ctx.vp, ctx.raster);
  if (seqs.empty())
    throw DomainError("no validation sequences; corpus too short");
  if (cfg.val_cap && seqs.size() > cfg.val_cap) seqs.resize(cfg.val_cap);

  const std::vector<double> scores = sequence_scores(model, seqs, cfg.ssim);
  double mean = 0.0;
  for (double s : scores) mean += s;
  mean /= double(scores.size());
  const double t1 =
      cfg.t1_override ? *cfg.t1_override : calibrate_t1(scores, cfg.t1_pct);

  auto cf = open_out(out_path(cfg, "calibration.cfg"));
  cf << "t1 = " << fmt17(t1) << "\n";
  cf << "val_mean_ssim = " << fmt17(mean) << "\n";
  std::cout << "t1 " << t1 << " (" << scores.size()
            << " validation sequences, mean score " << mean << ")\n";
  return 0;
}

int cmd_inject(const ExperimentConfig& cfg) {
  const AttackContext ctx = AttackContext::make(cfg.region, cfg.side_px);
  InfectedTestset infected = build_testset(cfg, ctx, load_corpus(cfg));
  write_labels_csv_file(out_path(cfg, "labels.csv").string(), infected.labels);
  std::cout << "labels.csv: " << infected.segments.size() << " segments, "
            << infected.injected << " injected\n";
  for (const auto& note : infected.skip_notes)
    std::cout << "note: " << note << "\n";
  return 0;
}

int cmd_detect(const ExperimentConfig& cfg) {
  auto model = load_trained_model(cfg);
  const double t1 = load_calibration(cfg, nullptr);
  const AttackContext ctx = AttackContext::make(cfg.region, cfg.side_px);
  InfectedTestset infected = build_testset(cfg, ctx, load_corpus(cfg));

  const fs::path dir = out_path(cfg, "verdicts");
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string());

  size_t windows = 0, alarms = 0, alarmed_segments = 0;
  for (size_t i = 0; i < infected.segments.size(); ++i) {
    const SegmentScores ss =
        score_segment(model, t1, infected.segments[i], cfg, ctx);
    const size_t idx = infected.labels[i].segment_index;
    auto vf = open_out(dir / ("seg" + std::to_string(idx) + ".csv"));
    write_verdicts_csv(vf, ss.verdicts);
    windows += ss.verdicts.size();
    size_t seg_alarms = 0;
    for (const auto& v : ss.verdicts) seg_alarms += v.anomalous ? 1 : 0;
    alarms += seg_alarms;
    alarmed_segments += seg_alarms ? 1 : 0;
  }
  std::cout << alarms << " of " << windows << " windows anomalous; "
            << alarmed_segments << " of " << infected.segments.size()
            << " segments alarmed (t1 " << t1 << ", t2 " << cfg.t2 << ")\n";
  return 0;
}

int cmd_explain(const ExperimentConfig& cfg) {
  auto model = load_trained_model(cfg);
  const double t1 = load_calibration(cfg, nullptr);
  const AttackContext ctx = AttackContext::make(cfg.region, cfg.side_px);
  InfectedTestset infected = build_testset(cfg, ctx, load_corpus(cfg));

  const fs::path dir = out_path(cfg, "explain");
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string());

  size_t written = 0, alarms = 0, hits = 0;
  for (size_t i = 0; i < infected.segments.size(); ++i) {
    const SegmentLabel& label = infected.labels[i];
    const SegmentScores ss =
        score_segment(model, t1, infected.segments[i], cfg, ctx);
    for (const auto& v : ss.verdicts) {
      if (!v.anomalous) continue;
      ++alarms;
      const WindowExplanation ex = explain_window(v, ss, label, cfg);
      if (ex.hit) ++hits;
      if (written >= cfg.max_overlays) continue;
      auto canvas = render_heatmap(ss.images[ex.image],
                                   ss.outputs[ex.frame][ex.image - ex.frame],
                                   ex.heat);
      const size_t window_id =
          label.segment_index * 100 + v.window_end_index;
      write_png_rgb_file(
          (dir / explain_filename(window_id, ex.image)).string(), canvas);
      ++written;
    }
  }
  std::cout << written << " overlays for " << alarms << " anomalous windows; "
            << hits << " worst tiles hit a labelled injection box\n";
  return 0;
}

int cmd_eval(const ExperimentConfig& cfg) {
  auto model = load_trained_model(cfg);
  DtReport rep;
  rep.dt_s = cfg.dt_list[0];
  rep.t1 = load_calibration(cfg, &rep.val_mean_ssim);
  const AttackContext ctx = AttackContext::make(cfg.region, cfg.side_px);
  InfectedTestset infected = build_testset(cfg, ctx, load_corpus(cfg));
  rep.segments_total = infected.segments.size();
  rep.segments_injected = infected.injected;
  rep.skip_notes = infected.skip_notes;

  score_leg(cfg, 0, ctx, model, infected, cfg.out_dir, rep);

  MetricsReport report;
  report.per_dt.push_back(std::move(rep));
  std::ostringstream os;
  write_metrics_csv(os, report);
  auto mf = open_out(out_path(cfg, "metrics.csv"));
  mf << os.str();
  std::cout << os.str();
  return 0;
}

int cmd_run_all(const ExperimentConfig& cfg) {
  MetricsReport report = run_experiment(cfg);
  std::ostringstream os;
  write_metrics_csv(os, report);
  std::cout << os.str();
  std::cout << "artifacts under " << cfg.out_dir << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"ADS-B traffic image anomaly detection pipeline"};
  app.require_subcommand(1);

  Overrides ov;
  app.add_option("--config", ov.config_path, "key = value config file");
  auto* seed_opt =
      app.add_option("--seed", ov.seed, "override the experiment seed");
  app.add_option("--dt", ov.dts,
                 "override the slice duration list (seconds, repeatable)");
  app.add_option("--attack", ov.kinds,
                 "override the injected attack kinds (repeatable)");
  app.add_option("--out", ov.out, "override the output directory");
  app.add_option("--input", ov.input, "recorded corpus file for ingest");
  app.add_option("--format", ov.format, "input format: csv or jsonl");

  const std::pair<const char*, const char*> cmds[] = {
      {"generate", "synthesize a traffic corpus -> corpus.csv"},
      {"ingest", "normalize a recorded corpus -> corpus.csv"},
      {"render", "rasterize sample slices -> frames/*.png"},
      {"train", "train the reconstruction model -> model.vadb, loss.csv"},
      {"calibrate", "score the validation split -> calibration.cfg"},
      {"inject", "build the attacked test set -> labels.csv"},
      {"detect", "score the attacked test set -> verdicts/seg<k>.csv"},
      {"explain", "overlay worst-tile heatmaps -> explain/*.png"},
      {"eval", "full detection metrics -> metrics.csv, roc_<kind>.csv"},
      {"run-all", "the whole pipeline, every dt leg"},
  };
  for (const auto& [name, desc] : cmds)
    app.add_subcommand(name, desc)->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help
    std::cerr << e.what() << "\n\n" << app.help();
    return 2;
  }
  ov.seed_set = seed_opt->count() > 0;

  const std::string cmd = app.get_subcommands().front()->get_name();
  try {
    const ExperimentConfig cfg = load_config(ov);
    if (cmd == "generate") return cmd_generate(cfg);
    if (cmd == "ingest") return cmd_ingest(cfg);
    if (cmd == "render") return cmd_render(cfg);
    if (cmd == "train") return cmd_train(cfg);
    if (cmd == "calibrate") return cmd_calibrate(cfg);
    if (cmd == "inject") return cmd_inject(cfg);
    if (cmd == "detect") return cmd_detect(cfg);
    if (cmd == "explain") return cmd_explain(cfg);
    if (cmd == "eval") return cmd_eval(cfg);
    if (cmd == "run-all") return cmd_run_all(cfg);
    std::cerr << app.help();
    return 2;
  } catch (const Error& e) {
    std::cerr << "airtrace " << cmd << ": error [" << e.kind()
              << "]: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "airtrace " << cmd << ": error: " << e.what() << "\n";
    return 1;
  }
}
