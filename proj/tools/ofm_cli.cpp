// ofm: train, evaluate, check and plot Optimal Flow Matching experiments.
//
//   ofm train --config run.toml [--seed N] [--workers N] [--out DIR]
//   ofm eval  --checkpoint ckpt.json [--task task.json] [--seed N] [--workers N] [--out DIR]
//   ofm check --suite NAME [--seed N] [--workers N]
//   ofm plot  (--run DIR | --checkpoint ckpt.json) --kind {scatter,traj,loss} [--out DIR]
//
// Exit status: 0 success, 1 tolerance breach or failed training/integration,
// 2 usage or configuration error.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "check_suites.hpp"
#include "ofm/ofm.hpp"

namespace fs = std::filesystem;
using namespace ofm;

namespace {

constexpr int kOk = 0, kFailure = 1, kUsage = 2;

struct Options {
  std::string config, checkpoint, task, run, suite, kind, out;
  std::optional<std::uint64_t> seed;
  std::optional<int> workers;
};

std::string read_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// A task descriptor file: either the bare descriptor or any file with a
/// "task" table (such as a config or its snapshot).
TaskDescriptor load_task(const std::string& path) {
  auto ext = fs::path(path).extension().string();
  if (!ext.empty()) ext.erase(0, 1);
  const auto j = parse_config_text(read_file(path), ext, path);
  return (j.is_object() && j.contains("task")) ? j.at("task").get<TaskDescriptor>() : j.get<TaskDescriptor>();
}

int cmd_train(const Options& o) {
  ExperimentConfig cfg = load_config(o.config);
  if (o.seed) cfg.seed = *o.seed;
  if (o.workers) cfg.workers = *o.workers;
  if (!o.out.empty()) cfg.output_dir = o.out;
  cfg.validate();
  std::cerr << "training " << to_string(cfg.method) << " on " << cfg.task.kind << " (D=" << cfg.task.dim << ") -> "
            << cfg.output_dir << '\n';
  const RunResult r = run_experiment(cfg, &std::cerr);
  std::cout << "wrote " << r.trace.size() << " metric rows to " << (r.dir / "metrics.csv").string() << '\n';
  if (r.eval)
    std::cout << "l2_uvp " << detail::format_metric(r.eval->report.l2_uvp) << "  cosine "
              << detail::format_metric(r.eval->report.cosine) << '\n';
  return kOk;
}

int cmd_eval(const Options& o) {
  const Checkpoint ckpt = load_checkpoint(o.checkpoint);
  TaskDescriptor desc;
  if (!o.task.empty())
    desc = load_task(o.task);
  else if (ckpt.task)
    desc = *ckpt.task;
  else
    throw ConfigError("--task: the checkpoint carries no task; pass a task descriptor");
  desc.validate();
  const BenchmarkTask task = make_task(desc);
  if (ckpt.dim() != task.dim())
    throw DimensionError("checkpoint dimension " + std::to_string(ckpt.dim()) + " does not match task dimension " +
                         std::to_string(task.dim()));
  if (!task.ground_truth) throw ConfigError("--task: task kind '" + desc.kind + "' has no ground-truth map to evaluate against");
  const EvalResult r = evaluate_model(ckpt.model, task, o.seed.value_or(1), o.workers.value_or(1));
  std::cout << "l2_uvp " << detail::format_metric(r.report.l2_uvp) << " +- " << detail::format_metric(r.report.l2_uvp_se) << " %\n"
            << "cosine " << (std::isfinite(r.report.cosine) ? detail::format_metric(r.report.cosine) : "undefined") << '\n'
            << "samples " << r.report.samples << '\n';
  if (r.ofm_distance) std::cout << "ofm_distance " << detail::format_metric(*r.ofm_distance) << '\n';
  const fs::path out = o.out.empty() ? fs::path(o.checkpoint).parent_path() : fs::path(o.out);
  if (!out.empty()) fs::create_directories(out);
  write_text((out.empty() ? fs::path(".") : out) / "eval.json", to_json(r).dump(2) + "\n");
  return kOk;
}

int cmd_check(const Options& o) {
  const auto& all = check::suites();
  const auto it = all.find(o.suite);
  if (it == all.end()) {
    std::string names;
    for (const auto& [name, _] : all) names += (names.empty() ? "" : ", ") + name;
    throw ConfigError("--suite: unknown suite '" + o.suite + "' (available: " + names + ")");
  }
  const auto cases = it->second({o.seed.value_or(0), o.workers.value_or(1)});
  std::vector<const check::CaseResult*> failed;
  std::printf("%-32s %14s %10s  %s\n", "case", "residual", "tolerance", "status");
  for (const auto& c : cases) {
    std::printf("%-32s %14.3e %10.1e  %s\n", c.name.c_str(), c.residual, c.tolerance, c.pass() ? "ok" : "FAIL");
    if (!c.pass()) failed.push_back(&c);
  }
  double worst = 0.0;
  for (const auto& c : cases) worst = std::isfinite(c.residual) ? std::max(worst, c.residual) : c.residual;
  std::printf("%s: %zu cases, %zu failed, max residual %.3e\n", o.suite.c_str(), cases.size(), failed.size(), worst);
  for (const auto* c : failed) std::printf("offending: %s (residual %.3e >= %.1e)\n", c->name.c_str(), c->residual, c->tolerance);
  return failed.empty() ? kOk : kFailure;
}

int cmd_plot(const Options& o) {
  const PlotKind kind = parse_plot_kind(o.kind);
  if (o.run.empty() == o.checkpoint.empty()) throw ConfigError("plot: pass exactly one of --run or --checkpoint");
  const fs::path run = o.run;
  const fs::path out = !o.out.empty() ? fs::path(o.out) : !o.run.empty() ? run : fs::path(o.checkpoint).parent_path();
  if (!out.empty()) fs::create_directories(out);
  const fs::path file = (out.empty() ? fs::path(".") : out) / (to_string(kind) + ".svg");

  if (kind == PlotKind::loss) {
    if (o.run.empty()) throw ConfigError("--kind loss: needs --run DIR containing metrics.csv");
    const auto rows = read_metrics_csv((run / "metrics.csv").string());
    write_text(file, loss_svg(rows, run.filename().string() + " loss"));
    std::cout << "wrote " << file.string() << " (" << rows.size() << " rows)\n";
    return kOk;
  }
  const Checkpoint ckpt = load_checkpoint(o.run.empty() ? o.checkpoint : (run / "checkpoint.json").string());
  TaskDescriptor desc;
  if (!o.task.empty())
    desc = load_task(o.task);
  else if (ckpt.task)
    desc = *ckpt.task;
  else
    throw ConfigError("--task: the checkpoint carries no task; pass a task descriptor");
  if (desc.dim != 2)
    throw DimensionError("--kind " + o.kind + ": plots need a 2-dimensional task, got dimension " +
                         std::to_string(desc.dim));
  const BenchmarkTask task = make_task(desc);
  PlotConfig pc;
  write_text(file, plot_model_svg(kind, ckpt.model, task, pc, o.seed.value_or(1), o.workers.value_or(1)));
  std::cout << "wrote " << file.string() << '\n';
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Optimal Flow Matching experiments"};
  app.require_subcommand(1);
  Options o;
  auto common = [&](CLI::App* sub) {
    sub->add_option("--seed", o.seed, "random seed (overrides the config)");
    sub->add_option("--workers", o.workers, "worker threads")->check(CLI::PositiveNumber);
  };

  auto* train = app.add_subcommand("train", "train the method selected by a config file");
  train->add_option("--config", o.config, "TOML or JSON experiment config")->required();
  train->add_option("--out", o.out, "output directory (overrides the config)");
  common(train);

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint against a task's ground truth");
  eval->add_option("--checkpoint", o.checkpoint, "checkpoint file")->required();
  eval->add_option("--task", o.task, "task descriptor (defaults to the task stored in the checkpoint)");
  eval->add_option("--out", o.out, "directory for eval.json");
  common(eval);

  auto* chk = app.add_subcommand("check", "run an identity suite");
  chk->add_option("--suite", o.suite, "lemma2-quadratic | lemma2-icnn | thm1-identity | fenchel-young | gradcheck")
      ->required();
  common(chk);

  auto* plot = app.add_subcommand("plot", "write an SVG plot of a run or checkpoint");
  plot->add_option("--run", o.run, "run directory written by train");
  plot->add_option("--checkpoint", o.checkpoint, "checkpoint file");
  plot->add_option("--task", o.task, "task descriptor (defaults to the task stored in the checkpoint)");
  plot->add_option("--kind", o.kind, "scatter | traj | loss")->required();
  plot->add_option("--out", o.out, "output directory");
  common(plot);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kOk : kUsage;  // help requests exit 0
  }

  try {
    if (*train) return cmd_train(o);
    if (*eval) return cmd_eval(o);
    if (*chk) return cmd_check(o);
    return cmd_plot(o);
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const DimensionError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const TrainingAborted& e) {
    std::cerr << "aborted: " << e.what() << '\n';
    return kFailure;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kFailure;
  }
}
