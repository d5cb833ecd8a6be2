// Command-line front end: simulate, acquire, evaluate, export-frames.
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "ibvs/sim.hpp"

namespace fs = std::filesystem;
using namespace ibvs;

namespace {

Config load_with_env(const std::string& path) {
  Config c = Config::load(path);
  if (const char* seed = std::getenv("SIM_SEED")) c.set("seed", seed);
  return c;
}

int simulate(const std::string& cfg_path) {
  Config c = load_with_env(cfg_path);
  const SimConfig cfg = SimConfig::from(c);
  c.check_unused();
  const fs::path dir(cfg.output_dir);
  fs::create_directories(dir);
  {
    std::ofstream out(dir / "config.cfg");
    out << c.dump();
  }
  SimOutputs out;
  out.log_path = (dir / "log.csv").string();
  if (cfg.frame_every > 0) {
    out.frame_dir = (dir / "frames").string();
    out.frame_every = cfg.frame_every;
  }
  const RunMetrics m = run_simulation(cfg, out);
  std::cerr << "run written to " << dir.string() << " (" << m.wall_seconds << " s)\n";
  std::cout << format_metrics(m);
  return m.aborted ? 3 : 0;
}

int acquire(const std::string& cfg_path) {
  Config c = load_with_env(cfg_path);
  const AcquisitionConfig a = AcquisitionConfig::from(c);
  c.check_unused();
  const AcquisitionReport r = acquire_dataset(a);
  std::cout << "positives=" << r.positives << "\nnegatives=" << r.negatives << "\nroi_rows=" << r.roi_rows
            << "\ncrop_failures=" << r.crop_failures << "\ncrop_failure_rate="
            << (r.positives ? double(r.crop_failures) / r.positives : 0.0) << "\nmean_roi_area=" << r.mean_roi_area
            << "\n";
  return 0;
}

int evaluate(const std::string& dataset, const std::string& cfg_path) {
  Config c = load_with_env(cfg_path);
  const SimConfig s = SimConfig::from(c);
  AcquisitionConfig::from(c);  // the acquisition config may be reused as is
  const std::string kind = c.get_string("vision.detector", "color");
  const double thr = c.get_double("evaluate.iou_threshold", 0.5);
  c.check_unused();
  EvaluationReport r;
  if (kind == "color") {
    r = evaluate_detector(dataset, ColorBlobDetector{s.vision.margin, BlobCriteria{s.vision.min_area}}, thr,
                          s.vision.fuse);
  } else if (kind == "crop") {
    CropDetector d;
    d.config.criteria.min_area = s.vision.min_area;
    r = evaluate_detector(dataset, d, thr, s.vision.fuse);
  } else {
    throw ConfigError("vision.detector must be color or crop");
  }
  std::cout << format_report(r);
  return 0;
}

int export_frames(const std::string& run, int every, const std::string& out_dir) {
  if (every < 1) throw ConfigError("--every must be >= 1");
  const fs::path dir(run);
  const fs::path cfg_file = dir / "config.cfg";
  if (!fs::exists(cfg_file)) throw IoError("no config.cfg in run directory " + run);
  Config c = Config::load(cfg_file.string());
  const SimConfig cfg = SimConfig::from(c);
  c.check_unused();
  SimOutputs out;
  out.frame_dir = out_dir.empty() ? (dir / "frames").string() : out_dir;
  out.frame_every = every;
  const RunMetrics m = run_simulation(cfg, out);
  std::cout << "frames_written=" << (m.frames_total + every - 1) / every << "\nframe_dir=" << out.frame_dir
            << "\n";
  return m.aborted ? 3 : 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Quadrotor visual-servoing simulator"};
  app.require_subcommand(1);

  std::string cfg, dataset, run, out;
  int every = 1;
  auto* sim = app.add_subcommand("simulate", "run the closed-loop simulation");
  sim->add_option("config", cfg, "config file")->required();
  auto* acq = app.add_subcommand("acquire", "render the spherical acquisition dataset");
  acq->add_option("config", cfg, "config file")->required();
  auto* ev = app.add_subcommand("evaluate", "score a detector on a dataset");
  ev->add_option("dataset", dataset, "dataset directory")->required();
  ev->add_option("config", cfg, "config file")->required();
  auto* ex = app.add_subcommand("export-frames", "re-render frames of a finished run");
  ex->add_option("run", run, "run directory")->required();
  ex->add_option("--every", every, "stride between exported frames")->default_val(1);
  ex->add_option("--out", out, "output directory (default <run>/frames)");

  CLI11_PARSE(app, argc, argv);
  try {
    if (sim->parsed()) return simulate(cfg);
    if (acq->parsed()) return acquire(cfg);
    if (ev->parsed()) return evaluate(dataset, cfg);
    if (ex->parsed()) return export_frames(run, every, out);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
