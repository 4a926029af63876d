#ifndef OFM_EXPERIMENT_HPP
#define OFM_EXPERIMENT_HPP

// Config-driven runs: train the selected method on a benchmark task and write
// the run directory (config snapshot, metrics.csv, timings.csv, checkpoints,
// evaluation report, plots). Also the evaluation and plotting steps that the
// command-line front end exposes on their own.

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <string>
#include <vector>

#include "ofm/baselines.hpp"
#include "ofm/benchmark.hpp"
#include "ofm/checkpoint.hpp"
#include "ofm/config.hpp"
#include "ofm/ofm_trainer.hpp"
#include "ofm/svg.hpp"

namespace ofm {

/// How a model maps p0 samples to p1: gradient of a potential, or the flow of a field.
inline MapFn model_map(const Model& m, int workers = 1, const OdeOptions& ode = {}) {
  return std::visit(
      [&](const auto& model) -> MapFn {
        using M = std::decay_t<decltype(model)>;
        if constexpr (std::is_same_v<M, QuadraticPotential> || std::is_same_v<M, IcnnPotential>) {
          return gradient_map(model, workers);
        } else {
          return [model, workers, ode](const Matrix& x0) {
            const PushResult r = push_rows(model, x0, ode, workers);
            if (r.failures > 0)
              throw OdeError(std::to_string(r.failures) + " of " + std::to_string(x0.rows()) +
                             " trajectories failed to integrate");
            return r.x1;
          };
        }
      },
      m);
}

struct EvalResult {
  MetricsReport report;
  std::optional<double> ofm_distance;  // potentials on tasks with a ground truth
};

/// L2-UVP and cosine on task.eval_samples samples; for potentials also the
/// OFM distance to the ground truth on min(eval_samples, 4096) pairs.
inline EvalResult evaluate_model(const Model& m, const BenchmarkTask& task, std::uint64_t seed, int workers = 1,
                                 const OdeOptions& ode = {}) {
  const int dim = std::visit([](const auto& x) { return x.dim(); }, m);
  if (dim != task.dim())
    throw DimensionError("model dimension " + std::to_string(dim) + " does not match task dimension " +
                         std::to_string(task.dim()));
  EvalResult out;
  out.report = evaluate(model_map(m, workers, ode), task, seed);
  const auto* potential = std::get_if<IcnnPotential>(&m);
  const auto* quadratic = std::get_if<QuadraticPotential>(&m);
  if ((potential || quadratic) && task.ground_truth) {
    Rng rng(seed ^ 0x0f0f0f0fULL);
    const Eigen::Index n = std::min<Eigen::Index>(task.eval_samples, 4096);
    const PairedBatch batch = task.plan().sample_batch(n, rng);
    Vector times(n);
    for (Eigen::Index i = 0; i < n; ++i) times[i] = uniform(rng, 1e-3, 1.0 - 1e-3);
    InversionOptions inv;
    inv.max_iterations = 200;
    out.ofm_distance = potential ? ofm_distance(*potential, *task.ground_truth, batch, times, inv, workers)
                                 : ofm_distance(*quadratic, *task.ground_truth, batch, times, inv, workers);
  }
  return out;
}

inline nlohmann::json to_json(const EvalResult& e) {
  auto num = [](double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); };
  nlohmann::json j{{"l2_uvp", num(e.report.l2_uvp)},
                   {"l2_uvp_se", num(e.report.l2_uvp_se)},
                   {"cosine", num(e.report.cosine)},
                   {"samples", e.report.samples},
                   {"seed", e.report.seed}};
  if (e.ofm_distance) j["ofm_distance"] = num(*e.ofm_distance);
  return j;
}

// ---- plots ---------------------------------------------------------------

/// Sample paths of a model on `ts`: straight segments for potentials, ODE
/// solutions for fields. Rows of each matrix are 2D vertices.
inline std::vector<Matrix> model_paths(const Model& m, const Matrix& x0, const OdeOptions& ode = {}) {
  std::vector<Matrix> out;
  std::visit(
      [&](const auto& model) {
        using M = std::decay_t<decltype(model)>;
        for (Eigen::Index i = 0; i < x0.rows(); ++i) {
          const Vector z0 = x0.row(i).transpose();
          if constexpr (std::is_same_v<M, QuadraticPotential> || std::is_same_v<M, IcnnPotential>) {
            Matrix p(2, z0.size());
            p.row(0) = z0.transpose();
            p.row(1) = transport(model, z0).transpose();
            out.push_back(std::move(p));
          } else {
            std::vector<double> ts;
            for (int k = 1; k < 32; ++k) ts.push_back(k / 32.0);
            try {
              const auto r = integrate_field(model, z0, ode, ts);
              Matrix p(static_cast<Eigen::Index>(ts.size()) + 2, z0.size());
              p.row(0) = z0.transpose();
              for (std::size_t k = 0; k < ts.size(); ++k) p.row(static_cast<Eigen::Index>(k) + 1) = r.samples[k].transpose();
              p.row(p.rows() - 1) = r.final_state.transpose();
              out.push_back(std::move(p));
            } catch (const OdeError&) {
              // a failed trajectory is simply not drawn
            }
          }
        }
      },
      m);
  return out;
}

/// SVG for a 2D plot kind: "scatter" draws p0, target and pushforward
/// samples; "traj" draws p0, pushforward and trajectories of a subsample.
inline std::string plot_model_svg(PlotKind kind, const Model& m, const BenchmarkTask& task, const PlotConfig& pc,
                                  std::uint64_t seed, int workers = 1, const OdeOptions& ode = {}) {
  if (kind == PlotKind::loss) throw std::invalid_argument("plot_model_svg: loss plots are drawn from metrics");
  if (task.dim() != 2)
    throw DimensionError("plot kind '" + to_string(kind) + "' needs a 2-dimensional task, got dimension " +
                         std::to_string(task.dim()));
  Rng rng(seed);
  const Matrix x0 = sample(task.p0, pc.samples, rng);
  const Matrix pushed = model_map(m, workers, ode)(x0);
  std::vector<SvgLayer> layers;
  layers.push_back({"p0", "#1f77b4", x0, {}});
  if (kind == PlotKind::scatter) {
    layers.push_back({"target", "#2ca02c", sample(task.p1, pc.samples, rng), {}});
    layers.push_back({"pushforward", "#d62728", pushed, {}});
  } else {
    layers.push_back({"pushforward", "#d62728", pushed, {}});
    const Eigen::Index n = std::min(pc.trajectories, x0.rows());
    layers.push_back({"trajectories", "#555555", Matrix(), model_paths(m, x0.topRows(n), ode)});
  }
  return scatter_svg(layers, to_string(kind));
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

// ---- training runs -------------------------------------------------------

struct RunResult {
  Checkpoint checkpoint;
  std::vector<MetricsRow> trace;
  std::optional<EvalResult> eval;
  std::vector<PlanCost> round_costs;  // rectified methods
  std::filesystem::path dir;
};

namespace detail {

inline void log_row(std::ostream* log, const MetricsRow& r) {
  if (!log) return;
  *log << std::setw(8) << r.iteration << "  " << r.method << "  loss " << detail::format_metric(r.loss);
  if (std::isfinite(r.l2_uvp)) *log << "  l2_uvp " << detail::format_metric(r.l2_uvp);
  if (std::isfinite(r.cosine)) *log << "  cos " << detail::format_metric(r.cosine);
  *log << '\n';
}

template <class F>
std::vector<RectifyRound<F>> run_rectified(const ExperimentConfig& cfg, const BenchmarkTask& task,
                                           const std::function<F(int)>& make, std::ostream* log) {
  RectifyConfig rc;
  rc.fm = cfg.fm_config();
  rc.ode = cfg.ode;
  rc.pool_size = cfg.pool_size;
  rc.workers = cfg.workers;
  return rectified_flow<F>(make, task.plan(), rc, cfg.rounds, [log](const F&, MetricsRow& r) { log_row(log, r); });
}

}  // namespace detail

/// Run one experiment and write its directory. Throws ConfigError on an
/// invalid config (before any compute) and TrainingAborted / OdeError when
/// training fails.
inline RunResult run_experiment(const ExperimentConfig& cfg, std::ostream* log = nullptr) {
  namespace fs = std::filesystem;
  cfg.validate();
  const fs::path dir = cfg.output_dir;
  fs::create_directories(dir);
  write_text(dir / "config.snapshot.json", to_json(cfg).dump(2) + "\n");

  const BenchmarkTask task = make_task(cfg.task);
  const int dim = task.dim();
  Rng init_rng(cfg.seed ^ 0x6a09e667f3bcc909ULL);
  RunResult res;
  res.dir = dir;
  res.checkpoint.method = to_string(cfg.method);
  res.checkpoint.task = cfg.task;
  std::vector<std::pair<long, double>> timings;

  auto save = [&](const Model& m, long iteration, const std::string& name) {
    Checkpoint c{m, to_string(cfg.method), iteration, cfg.task};
    save_checkpoint(c, (dir / name).string());
  };

  if (cfg.is_ofm()) {
    BenchmarkTask trace_task = task;
    trace_task.eval_samples = cfg.eval.trace_samples;
    const bool trace_metrics = task.ground_truth && cfg.eval.trace_samples > 1;
    EvalHook hook = [&](const IcnnPotential& psi, MetricsRow& row) {
      if (trace_metrics) {
        const auto r = evaluate(gradient_map(psi, cfg.workers), trace_task, cfg.eval.seed);
        row.l2_uvp = r.l2_uvp;
        row.cosine = r.cosine;
      }
      if (cfg.checkpoint_interval > 0 && row.iteration > 0 && row.iteration % cfg.checkpoint_interval == 0)
        save(psi, row.iteration, "checkpoint_" + std::to_string(row.iteration) + ".json");
      detail::log_row(log, row);
    };
    auto psi0 = IcnnPotential::random(dim, cfg.icnn_options(), init_rng);
    OfmTrainResult r = train_ofm(std::move(psi0), task.plan(), cfg.train_config(), hook);
    res.checkpoint.model = std::move(r.potential);
    res.checkpoint.iteration = cfg.iterations;
    res.trace = std::move(r.trace);
    timings = std::move(r.timings);
  } else if (cfg.method == Method::fm || cfg.method == Method::otcfm) {
    auto field = TimeField::random(dim, init_rng, cfg.model.hidden, cfg.model.activation);
    FieldHook<TimeField> hook = [&](const TimeField& f, MetricsRow& row) {
      if (cfg.checkpoint_interval > 0 && row.iteration > 0 && row.iteration % cfg.checkpoint_interval == 0)
        save(f, row.iteration, "checkpoint_" + std::to_string(row.iteration) + ".json");
      detail::log_row(log, row);
    };
    auto r = train_fm(std::move(field), task.plan(), cfg.fm_config(), hook);
    res.checkpoint.model = std::move(r.field);
    res.checkpoint.iteration = cfg.iterations;
    res.trace = std::move(r.trace);
    timings = std::move(r.timings);
  } else {
    // rectified methods: rows of round k are offset by k * iterations
    auto collect = [&](auto rounds) {
      for (std::size_t k = 0; k < rounds.size(); ++k) {
        const long offset = static_cast<long>(k) * cfg.iterations;
        for (auto row : rounds[k].trained.trace) {
          row.iteration += offset;
          res.trace.push_back(row);
        }
        for (auto [it, s] : rounds[k].trained.timings) timings.emplace_back(it + offset, s);
        res.round_costs.push_back(rounds[k].cost);
        save(rounds[k].trained.field, cfg.iterations, "checkpoint_round" + std::to_string(k) + ".json");
        if (log)
          *log << "round " << k << ": plan cost " << detail::format_metric(rounds[k].cost.mean) << " +- "
               << detail::format_metric(rounds[k].cost.std_error) << ", " << rounds[k].failures << " failed integrations\n";
      }
      res.checkpoint.model = std::move(rounds.back().trained.field);
    };
    if (cfg.method == Method::rf) {
      collect(detail::run_rectified<TimeField>(
          cfg, task,
          [&](int k) {
            Rng r(cfg.seed ^ (0x6a09e667f3bcc909ULL + static_cast<std::uint64_t>(k)));
            return TimeField::random(dim, r, cfg.model.hidden, cfg.model.activation);
          },
          log));
    } else {
      collect(detail::run_rectified<ScalarTimeField>(
          cfg, task,
          [&](int k) {
            Rng r(cfg.seed ^ (0x6a09e667f3bcc909ULL + static_cast<std::uint64_t>(k)));
            return ScalarTimeField::random(dim, r, cfg.model.hidden, cfg.model.activation);
          },
          log));
    }
    res.checkpoint.iteration = cfg.iterations;
    std::ofstream rounds(dir / "rounds.csv");
    rounds << "round,transport_cost,std_error,pairs\n";
    for (std::size_t k = 0; k < res.round_costs.size(); ++k)
      rounds << k << ',' << detail::format_metric(res.round_costs[k].mean) << ','
             << detail::format_metric(res.round_costs[k].std_error) << ',' << res.round_costs[k].count << '\n';
  }

  write_metrics_csv((dir / "metrics.csv").string(), res.trace);
  write_timings_csv((dir / "timings.csv").string(), timings);
  save_checkpoint(res.checkpoint, (dir / "checkpoint.json").string());

  if (task.ground_truth) {
    res.eval = evaluate_model(res.checkpoint.model, task, cfg.eval.seed, cfg.workers, cfg.ode);
    write_text(dir / "eval.json", to_json(*res.eval).dump(2) + "\n");
    if (log)
      *log << "final: l2_uvp " << detail::format_metric(res.eval->report.l2_uvp) << "%  cosine "
           << detail::format_metric(res.eval->report.cosine) << '\n';
  }
  for (PlotKind k : cfg.plot.kinds) {
    const std::string svg = k == PlotKind::loss
                                ? loss_svg(res.trace, to_string(cfg.method) + " loss")
                                : plot_model_svg(k, res.checkpoint.model, task, cfg.plot, cfg.eval.seed,
                                                 cfg.workers, cfg.ode);
    write_text(dir / (to_string(k) + ".svg"), svg);
  }
  return res;
}

}  // namespace ofm

#endif  // OFM_EXPERIMENT_HPP
