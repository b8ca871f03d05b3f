// dunet — stacked aggregation-topology facial-landmark toolkit.
//
// Subcommands cover the whole pipeline: model inspection, gradient checking,
// synthetic data generation, training, evaluation, CED curve export, and the
// transform-coherence probe.  Every command exits 0 on success; any failure
// prints a one-object JSON error to stderr and exits non-zero.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "dunet/config.hpp"
#include "dunet/data.hpp"
#include "dunet/eval.hpp"
#include "dunet/gradcheck_suite.hpp"
#include "dunet/topology.hpp"
#include "dunet/trainer.hpp"

namespace {

using nlohmann::json;

int fail(const std::string& code, const std::string& message) {
  std::cerr << json{{"error", code}, {"message", message}}.dump() << "\n";
  return 1;
}

// Accepts a manifest file, a directory containing manifest.json, or a
// directory of flat <name>.png / <name>.pts pairs.
dunet::Dataset load_dataset_arg(const std::string& path) {
  namespace fs = std::filesystem;
  if (fs::is_directory(path)) {
    const fs::path manifest = fs::path(path) / "manifest.json";
    if (fs::exists(manifest)) return dunet::load_manifest_dataset(manifest.string());
    return dunet::load_pts_dataset(path);
  }
  return dunet::load_manifest_dataset(path);
}

// --- inspect ---------------------------------------------------------------

struct InspectArgs {
  std::string topology_file;
  std::string dot_out;
};

int run_inspect(const InspectArgs& a) {
  const dunet::StackSpec spec = dunet::stack_from_json(dunet::load_json_file(a.topology_file));
  const auto params = dunet::count_params(spec);
  json out{
      {"kind", dunet::topology_kind_name(spec.topology.kind)},
      {"block", dunet::block_kind_name(spec.topology.block.kind)},
      {"width", spec.topology.block.width},
      {"down_steps", spec.topology.down_steps},
      {"num_stacks", spec.num_stacks},
      {"params",
       {{"conv_kernels", params.conv_kernels},
        {"conv_biases", params.conv_biases},
        {"bn_affine", params.bn_affine},
        {"total", params.total()}}},
      {"size_mb", dunet::estimate_size_mb(spec)},
      {"flops", dunet::estimate_flops(spec)},
  };
  if (!a.dot_out.empty()) {
    const std::string dot = dunet::export_dot(spec.topology);
    if (a.dot_out == "-") {
      std::cout << dot;
    } else {
      std::ofstream os(a.dot_out);
      if (!os) throw dunet::IoError("inspect: cannot write " + a.dot_out);
      os << dot;
      out["dot"] = a.dot_out;
    }
  }
  std::cout << out.dump(2) << "\n";
  return 0;
}

// --- gradcheck -------------------------------------------------------------

struct GradcheckArgs {
  std::string op;
  bool full = false;
  bool list = false;
  double tol = 1e-3;
};

int run_gradcheck(const GradcheckArgs& a) {
  if (a.list) {
    for (const auto& name : dunet::grad_suite_names()) std::cout << name << "\n";
    return 0;
  }
  const auto results = dunet::run_grad_suite(a.op, a.full, a.tol);
  int failures = 0;
  for (const auto& r : results) {
    std::printf("%-18s max rel err %.3e  (tol %.0e, %.2fs)  %s\n", r.name.c_str(),
                r.max_rel_err, r.tol, r.seconds, r.passed ? "PASS" : "FAIL");
    failures += r.passed ? 0 : 1;
  }
  if (failures > 0) {
    return fail("gradcheck", std::to_string(failures) + " of " +
                                 std::to_string(results.size()) +
                                 " gradient checks failed");
  }
  std::printf("all %zu gradient checks passed\n", results.size());
  return 0;
}

// --- gen-data --------------------------------------------------------------

struct GenDataArgs {
  std::string out_dir;
  int count = 100;
  int landmarks = 5;
  std::uint64_t seed = 0;
  double occluder_prob = 0.3;
  double shape_jitter = 1.0;
  double texture_noise = 0.05;
};

int run_gen_data(const GenDataArgs& a) {
  dunet::SynthConfig cfg;
  cfg.n_landmarks = a.landmarks;
  cfg.seed = a.seed;
  cfg.occluder_prob = a.occluder_prob;
  cfg.shape_jitter = a.shape_jitter;
  cfg.texture_noise = a.texture_noise;
  const dunet::Dataset ds = dunet::generate(cfg, a.count);
  const std::string manifest = dunet::save_dataset(ds, a.out_dir);
  std::cout << json{{"manifest", manifest}, {"count", a.count}}.dump(2) << "\n";
  return 0;
}

// --- train -----------------------------------------------------------------

struct TrainArgs {
  std::string config_file;
  std::string checkpoint = "checkpoint.dutc";
  std::string resume;
  bool quiet = false;
};

int run_train(const TrainArgs& a) {
  const auto cfg = dunet::run_from_json(dunet::load_json_file(a.config_file));
  auto [train_ds, heldout] = dunet::load_run_datasets(cfg);

  std::unique_ptr<dunet::TrainSession<float>> session;
  if (a.resume.empty()) {
    session = std::make_unique<dunet::TrainSession<float>>(cfg.model, cfg.train);
  } else {
    session = std::make_unique<dunet::TrainSession<float>>(
        dunet::TrainSession<float>::load(a.resume));
  }
  session->run(train_ds, a.quiet ? nullptr : &std::cerr);
  session->save(a.checkpoint);

  json out{{"checkpoint", a.checkpoint},
           {"steps", session->step_count()},
           {"train_samples", train_ds.size()},
           {"heldout_samples", heldout.size()}};
  if (!heldout.empty()) {
    const auto errs = dunet::model_nmes(session->model(), heldout,
                                        dunet::NmeMode::BboxDiagonal,
                                        session->config().loss_kind);
    double mean = 0.0;
    for (double e : errs) mean += e;
    out["heldout_mean_nme_bbox_diagonal"] = mean / errs.size();
  }
  std::cout << out.dump(2) << "\n";
  return 0;
}

// --- eval ------------------------------------------------------------------

struct EvalArgs {
  std::string checkpoint;
  std::string dataset;
  std::string nme_mode = "bbox-diagonal";
  std::string ced_out;
  double max_threshold = 0.08;
  int bins = 50;
  double failure_cutoff = 0.08;
};

int run_eval(const EvalArgs& a) {
  auto session = dunet::TrainSession<float>::load(a.checkpoint);
  const dunet::Dataset ds = load_dataset_arg(a.dataset);
  const dunet::NmeMode mode = dunet::nme_mode_from_name(a.nme_mode);
  const auto errs =
      dunet::model_nmes(session.model(), ds, mode, session.config().loss_kind);
  double mean = 0.0;
  for (double e : errs) mean += e;
  mean /= errs.size();
  const auto curve =
      dunet::ced(errs, a.max_threshold, a.bins, a.failure_cutoff);
  if (!a.ced_out.empty()) {
    std::ofstream os(a.ced_out);
    if (!os) throw dunet::IoError("eval: cannot write " + a.ced_out);
    if (a.ced_out.size() >= 4 && a.ced_out.substr(a.ced_out.size() - 4) == ".svg") {
      dunet::write_ced_svg(os, curve);
    } else {
      dunet::write_ced_csv(os, curve);
    }
  }
  json out{{"n", errs.size()},
           {"nme_mode", a.nme_mode},
           {"mean_nme", mean},
           {"auc", curve.auc},
           {"failure_rate", curve.failure_rate},
           {"failure_cutoff", a.failure_cutoff}};
  if (!a.ced_out.empty()) out["ced_out"] = a.ced_out;
  std::cout << out.dump(2) << "\n";
  return 0;
}

// --- ced -------------------------------------------------------------------

struct CedArgs {
  std::string errors_file;
  std::string out_file;
  double max_threshold = 0.08;
  int bins = 50;
  double failure_cutoff = 0.08;
};

int run_ced(const CedArgs& a) {
  std::ifstream is(a.errors_file);
  if (!is) throw dunet::IoError("ced: cannot read " + a.errors_file);
  std::vector<double> errors;
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    try {
      std::size_t pos = 0;
      const double v = std::stod(line, &pos);
      while (pos < line.size() && std::isspace(static_cast<unsigned char>(line[pos]))) {
        ++pos;
      }
      if (pos != line.size()) throw std::invalid_argument("trailing characters");
      errors.push_back(v);
    } catch (const std::exception&) {
      throw dunet::ParseError("ced: not a number: '" + line + "'", lineno);
    }
  }
  const auto curve = dunet::ced(errors, a.max_threshold, a.bins, a.failure_cutoff);
  std::ofstream os(a.out_file);
  if (!os) throw dunet::IoError("ced: cannot write " + a.out_file);
  if (a.out_file.size() >= 4 && a.out_file.substr(a.out_file.size() - 4) == ".svg") {
    dunet::write_ced_svg(os, curve);
  } else {
    dunet::write_ced_csv(os, curve);
  }
  std::cout << json{{"n", errors.size()},
                    {"out", a.out_file},
                    {"auc", curve.auc},
                    {"failure_rate", curve.failure_rate}}
                   .dump(2)
            << "\n";
  return 0;
}

// --- probe-coherence -------------------------------------------------------

struct ProbeArgs {
  std::string checkpoint;
  std::string dataset;
  std::uint64_t seed = 1;
  int count = 0;  // 0 = whole dataset
};

int run_probe(const ProbeArgs& a) {
  auto session = dunet::TrainSession<float>::load(a.checkpoint);
  dunet::Dataset ds = load_dataset_arg(a.dataset);
  if (a.count > 0 && static_cast<std::size_t>(a.count) < ds.size()) {
    ds.resize(a.count);
  }
  const auto transforms = dunet::probe_transforms(ds, session.flip_pairs(), a.seed);
  const auto rep = dunet::model_coherence(session.model(), ds, transforms,
                                          session.config().loss_kind);
  std::cout << json{{"n", rep.n},
                    {"map_discrepancy", rep.map_discrepancy},
                    {"landmark_discrepancy_px", rep.landmark_discrepancy}}
                   .dump(2)
            << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"stacked aggregation-topology facial-landmark toolkit"};
  app.require_subcommand(1);
  std::function<int()> action;

  InspectArgs inspect_args;
  auto* inspect = app.add_subcommand("inspect", "model size, flops and graph export");
  inspect->add_option("--topology", inspect_args.topology_file, "model spec JSON file")
      ->required();
  inspect->add_option("--dot", inspect_args.dot_out,
                      "write the topology graph as DOT ('-' for stdout)");
  inspect->callback([&] { action = [&] { return run_inspect(inspect_args); }; });

  GradcheckArgs gc_args;
  auto* gradcheck =
      app.add_subcommand("gradcheck", "finite-difference gradient verification");
  gradcheck->add_option("--op", gc_args.op, "check a single named op");
  gradcheck->add_flag("--full", gc_args.full,
                      "also run the end-to-end stacked-model check");
  gradcheck->add_flag("--list", gc_args.list, "list check names and exit");
  gradcheck->add_option("--tol", gc_args.tol, "max relative error to pass");
  gradcheck->callback([&] { action = [&] { return run_gradcheck(gc_args); }; });

  GenDataArgs gd_args;
  auto* gen = app.add_subcommand("gen-data", "render a synthetic face dataset");
  gen->add_option("--out", gd_args.out_dir, "output directory")->required();
  gen->add_option("--count", gd_args.count, "number of samples");
  gen->add_option("--landmarks", gd_args.landmarks, "5 or 68");
  gen->add_option("--seed", gd_args.seed, "generator seed");
  gen->add_option("--occluder-prob", gd_args.occluder_prob,
                  "probability of random occluding rectangles");
  gen->add_option("--shape-jitter", gd_args.shape_jitter, "geometry variation scale");
  gen->add_option("--texture-noise", gd_args.texture_noise, "pixel noise amplitude");
  gen->callback([&] { action = [&] { return run_gen_data(gd_args); }; });

  TrainArgs tr_args;
  auto* train = app.add_subcommand("train", "train a model from a run config");
  train->add_option("--config", tr_args.config_file, "run config JSON file")
      ->required();
  train->add_option("--out", tr_args.checkpoint, "checkpoint output path");
  train->add_option("--resume", tr_args.resume, "checkpoint to continue from");
  train->add_flag("--quiet", tr_args.quiet, "suppress progress lines");
  train->callback([&] { action = [&] { return run_train(tr_args); }; });

  EvalArgs ev_args;
  auto* eval_cmd = app.add_subcommand("eval", "landmark error metrics on a dataset");
  eval_cmd->add_option("--checkpoint", ev_args.checkpoint, "trained checkpoint")
      ->required();
  eval_cmd->add_option("--dataset", ev_args.dataset,
                       "manifest JSON or directory of PNG/.pts pairs")
      ->required();
  eval_cmd->add_option("--nme-mode", ev_args.nme_mode,
                       "eye-centre | outer-eye-corner | bbox-diagonal | bbox-size");
  eval_cmd->add_option("--ced-out", ev_args.ced_out, "write CED curve (.csv or .svg)");
  eval_cmd->add_option("--max-threshold", ev_args.max_threshold, "CED x-axis limit");
  eval_cmd->add_option("--bins", ev_args.bins, "CED threshold count");
  eval_cmd->add_option("--failure-cutoff", ev_args.failure_cutoff,
                       "NME above this counts as failure");
  eval_cmd->callback([&] { action = [&] { return run_eval(ev_args); }; });

  CedArgs ced_args;
  auto* ced_cmd = app.add_subcommand("ced", "cumulative error curve from an error list");
  ced_cmd->add_option("--errors", ced_args.errors_file, "file with one error per line")
      ->required();
  ced_cmd->add_option("--out", ced_args.out_file, "output file (.csv or .svg)")
      ->required();
  ced_cmd->add_option("--max-threshold", ced_args.max_threshold, "x-axis limit");
  ced_cmd->add_option("--bins", ced_args.bins, "threshold count");
  ced_cmd->add_option("--failure-cutoff", ced_args.failure_cutoff,
                      "NME above this counts as failure");
  ced_cmd->callback([&] { action = [&] { return run_ced(ced_args); }; });

  ProbeArgs pr_args;
  auto* probe = app.add_subcommand("probe-coherence",
                                   "transform-equivariance probe of a checkpoint");
  probe->add_option("--checkpoint", pr_args.checkpoint, "trained checkpoint")
      ->required();
  probe->add_option("--dataset", pr_args.dataset,
                    "manifest JSON or directory of PNG/.pts pairs")
      ->required();
  probe->add_option("--seed", pr_args.seed, "transform draw seed");
  probe->add_option("--count", pr_args.count, "probe only the first N samples");
  probe->callback([&] { action = [&] { return run_probe(pr_args); }; });

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, std::cout, std::cerr);
    std::cerr << json{{"error", "usage"}, {"message", e.what()}}.dump() << "\n";
    return code == 0 ? 1 : code;
  }

  try {
    return action();
  } catch (const dunet::Error& e) {
    return fail(e.code(), e.what());
  } catch (const nlohmann::json::exception& e) {
    return fail("parse", e.what());
  } catch (const std::exception& e) {
    return fail("internal", e.what());
  }
}
