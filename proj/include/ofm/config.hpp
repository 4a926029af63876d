#ifndef OFM_CONFIG_HPP
#define OFM_CONFIG_HPP

// Experiment configuration: one method, one task, and the trainer settings.
// Files are TOML or JSON (chosen by extension); both are read through the
// same JSON tree, so the validation and error messages are shared. Every
// error names the offending field as "section.key".

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>
#include <toml.hpp>

#include "ofm/baselines.hpp"
#include "ofm/benchmark.hpp"
#include "ofm/ofm_trainer.hpp"

namespace ofm {

inline constexpr int kSchemaVersion = 1;

enum class Method { ofm, fm, otcfm, rf, crf };

inline std::string to_string(Method m) {
  switch (m) {
    case Method::ofm: return "ofm";
    case Method::fm: return "fm";
    case Method::otcfm: return "otcfm";
    case Method::rf: return "rf";
    default: return "crf";
  }
}

inline Method parse_method(std::string_view s) {
  if (s == "ofm") return Method::ofm;
  if (s == "fm") return Method::fm;
  if (s == "otcfm") return Method::otcfm;
  if (s == "rf") return Method::rf;
  if (s == "crf") return Method::crf;
  throw ConfigError("method: unknown method '" + std::string(s) + "' (expected ofm, fm, otcfm, rf or crf)");
}

enum class PlotKind { scatter, traj, loss };

inline std::string to_string(PlotKind k) {
  return k == PlotKind::scatter ? "scatter" : k == PlotKind::traj ? "traj" : "loss";
}

inline PlotKind parse_plot_kind(std::string_view s) {
  if (s == "scatter") return PlotKind::scatter;
  if (s == "traj") return PlotKind::traj;
  if (s == "loss") return PlotKind::loss;
  throw ConfigError("unknown plot kind '" + std::string(s) + "' (expected scatter, traj or loss)");
}

struct ModelConfig {
  std::vector<int> hidden{128, 128, 64};
  Activation activation = Activation::celu;
  int quadratic_rank = 0;  // ofm only
  bool convex = true;      // ofm only
};

struct EvalConfig {
  std::uint64_t seed = 1;
  Eigen::Index trace_samples = 4096;  // metrics logged during OFM training; 0 disables
};

struct PlotConfig {
  std::vector<PlotKind> kinds;  // plots written after training
  Eigen::Index samples = 1024;
  Eigen::Index trajectories = 64;
};

struct ExperimentConfig {
  int schema_version = kSchemaVersion;
  Method method = Method::ofm;
  std::uint64_t seed = 0;
  int workers = 1;
  std::string output_dir = "runs/default";
  TaskDescriptor task;

  // shared training settings
  long iterations = 30000;
  int batch_size = 1024;
  double learning_rate = 1e-3;
  PairingTag plan = PairingTag::independent;
  Eigen::Index minibatch_size = 64;
  long log_interval = 50;
  long checkpoint_interval = 0;  // 0 writes only the final checkpoint

  // ofm
  double ema_decay = 0.999;
  double epsilon = 1e-3;
  HessianSolve hessian_solve = HessianSolve::automatic;
  bool log_dual = false;
  bool amortize = false;
  std::vector<int> amortizer_hidden{128, 128};
  double amortizer_learning_rate = 1e-3;
  double max_failure_rate = 0.1;
  long failure_window = 100;
  InversionOptions subproblem;

  // flow-matching baselines
  OptimizerKind optimizer = OptimizerKind::rmsprop;
  int rounds = 1;
  Eigen::Index pool_size = 16384;
  OdeOptions ode;

  ModelConfig model;
  EvalConfig eval;
  PlotConfig plot;

  bool is_ofm() const { return method == Method::ofm; }
  bool is_rectified() const { return method == Method::rf || method == Method::crf; }

  TrainConfig train_config() const {
    TrainConfig c;
    c.iterations = iterations;
    c.batch_size = batch_size;
    c.learning_rate = learning_rate;
    c.ema_decay = ema_decay;
    c.epsilon = epsilon;
    c.plan = plan;
    c.minibatch_size = minibatch_size;
    c.subproblem = subproblem;
    c.hessian_solve = hessian_solve;
    c.seed = seed;
    c.workers = workers;
    c.log_interval = log_interval;
    c.log_dual = log_dual;
    c.amortize = amortize;
    c.amortizer_hidden = amortizer_hidden;
    c.amortizer_learning_rate = amortizer_learning_rate;
    c.max_failure_rate = max_failure_rate;
    c.failure_window = failure_window;
    return c;
  }

  FmConfig fm_config() const {
    FmConfig c;
    c.iterations = iterations;
    c.batch_size = batch_size;
    c.learning_rate = learning_rate;
    c.optimizer = optimizer;
    c.plan = plan;
    c.minibatch_size = minibatch_size;
    c.seed = seed;
    c.log_interval = log_interval;
    c.method = to_string(method);
    return c;
  }

  IcnnOptions icnn_options() const { return {model.hidden, model.activation, model.quadratic_rank, model.convex}; }

  void validate() const;
};

/// Paper defaults for each method; a file only needs to state what differs.
inline ExperimentConfig method_defaults(Method m, int dim) {
  ExperimentConfig c;
  c.method = m;
  switch (m) {
    case Method::ofm:
      c.iterations = 30000;
      c.learning_rate = 1e-3;
      c.model = {{128, 128, 64}, Activation::celu, 0, true};
      if (dim == 2) {
        c.learning_rate = 1e-2;
        c.model = {{1024, 1024}, Activation::softplus, 0, true};
      }
      break;
    case Method::fm:
      c.iterations = 65000;
      c.learning_rate = 1e-4;
      c.model = {{128, 128, 64}, Activation::relu, 0, true};
      break;
    case Method::otcfm:
      c.iterations = 200000;
      c.learning_rate = 1e-3;
      c.plan = PairingTag::minibatch;
      c.model = {{128, 128, 64}, Activation::relu, 0, true};
      break;
    case Method::rf:
      c.iterations = 65000;
      c.learning_rate = 1e-4;
      c.rounds = 2;
      c.model = {{128, 128, 64}, Activation::relu, 0, true};
      break;
    case Method::crf:
      c.iterations = 100000;
      c.learning_rate = 1e-5;
      c.rounds = 2;
      // the field is an input gradient, so ReLU would make it piecewise constant
      c.model = {{128, 128, 64}, Activation::softplus, 0, true};
      break;
  }
  return c;
}

inline void ExperimentConfig::validate() const {
  auto wrap = [](const std::string& section, auto&& fn) {
    try {
      fn();
    } catch (const ConfigError& e) {
      throw ConfigError(section + ": " + e.what());
    }
  };
  if (schema_version != kSchemaVersion)
    throw ConfigError("schema_version: unsupported version " + std::to_string(schema_version));
  if (workers < 1) throw ConfigError("workers: must be >= 1");
  if (output_dir.empty()) throw ConfigError("output_dir: must not be empty");
  task.validate();
  if (checkpoint_interval < 0) throw ConfigError("train.checkpoint_interval: must be >= 0");
  if (checkpoint_interval > 0 && checkpoint_interval % log_interval != 0)
    throw ConfigError("train.checkpoint_interval: must be a multiple of train.log_interval");
  if (model.hidden.empty()) throw ConfigError("model.hidden: at least one hidden layer required");
  for (int h : model.hidden)
    if (h < 1) throw ConfigError("model.hidden: widths must be >= 1");
  if (is_ofm()) {
    wrap("train", [&] { train_config().validate(); });
    if (model.convex && model.activation == Activation::relu)
      throw ConfigError("model.activation: an input-convex potential needs softplus or celu");
    if (model.quadratic_rank < 0) throw ConfigError("model.quadratic_rank: must be >= 0");
  } else {
    wrap("train", [&] { fm_config().validate(); });
    wrap("ode", [&] { ode.validate(); });
    if (method == Method::fm && plan != PairingTag::independent)
      throw ConfigError("train.plan: method fm uses the independent plan (use otcfm for minibatch OT)");
    if (method == Method::otcfm && plan != PairingTag::minibatch)
      throw ConfigError("train.plan: method otcfm requires the minibatch plan");
    if (is_rectified() && rounds < 1) throw ConfigError("train.rounds: must be >= 1");
    if (is_rectified() && pool_size < 1) throw ConfigError("train.pool_size: must be >= 1");
  }
  if (plan == PairingTag::ground_truth && task.kind == "eight_gaussians")
    throw ConfigError("train.plan: the eight_gaussians task has no ground-truth map");
  if (eval.trace_samples < 0) throw ConfigError("eval.trace_samples: must be >= 0");
  if (plot.samples < 1) throw ConfigError("plot.samples: must be >= 1");
  if (plot.trajectories < 0) throw ConfigError("plot.trajectories: must be >= 0");
  for (auto k : plot.kinds)
    if (k != PlotKind::loss && task.dim != 2)
      throw ConfigError("plot.kinds: '" + to_string(k) + "' plots need a 2-dimensional task (task.dim = " +
                        std::to_string(task.dim) + ")");
}

namespace detail {

/// One object of the config tree; every key must be consumed exactly once.
class Section {
 public:
  Section(const nlohmann::json& j, std::string path, std::string method)
      : j_(j), path_(std::move(path)), method_(std::move(method)) {
    if (!j_.is_object()) throw ConfigError(path_ + ": expected a table/object");
  }

  template <class T>
  bool get(const char* key, T& out) {
    if (!j_.contains(key)) return false;
    used_.insert(key);
    const auto& v = j_.at(key);
    const std::string name = where(key);
    if constexpr (std::is_same_v<T, bool>) {
      if (!v.is_boolean()) throw ConfigError(name + ": expected a boolean");
      out = v.get<bool>();
    } else if constexpr (std::is_integral_v<T>) {
      if (!v.is_number_integer()) throw ConfigError(name + ": expected an integer");
      if constexpr (std::is_unsigned_v<T>) {
        if (v.is_number_unsigned() || v.get<long long>() >= 0) {
          out = v.get<T>();
          return true;
        }
        throw ConfigError(name + ": expected a non-negative integer");
      } else {
        out = v.get<T>();
      }
    } else if constexpr (std::is_floating_point_v<T>) {
      if (!v.is_number()) throw ConfigError(name + ": expected a number");
      out = v.get<T>();
    } else if constexpr (std::is_same_v<T, std::string>) {
      if (!v.is_string()) throw ConfigError(name + ": expected a string");
      out = v.get<std::string>();
    } else if constexpr (std::is_same_v<T, std::vector<int>>) {
      if (!v.is_array()) throw ConfigError(name + ": expected an array of integers");
      out.clear();
      for (const auto& e : v) {
        if (!e.is_number_integer()) throw ConfigError(name + ": expected an array of integers");
        out.push_back(e.get<int>());
      }
    } else {
      static_assert(sizeof(T) == 0, "unsupported config field type");
    }
    return true;
  }

  /// Parse a string field through `parse`, prefixing its error with the field name.
  template <class T, class Parse>
  bool get_enum(const char* key, T& out, Parse parse) {
    std::string s;
    if (!get(key, s)) return false;
    try {
      out = parse(s);
    } catch (const std::exception& e) {
      throw ConfigError(where(key) + ": " + e.what());
    }
    return true;
  }

  const nlohmann::json* child(const char* key) {
    if (!j_.contains(key)) return nullptr;
    used_.insert(key);
    return &j_.at(key);
  }

  std::string where(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  void finish() const {
    for (const auto& [key, _] : j_.items())
      if (!used_.count(key))
        throw ConfigError(where(key) + ": unknown field" + (method_.empty() ? "" : " for method " + method_));
  }

 private:
  const nlohmann::json& j_;
  std::string path_, method_;
  std::set<std::string> used_;
};

inline nlohmann::json toml_to_json(const toml::node& n) {
  if (const auto* t = n.as_table()) {
    nlohmann::json j = nlohmann::json::object();
    for (const auto& [k, v] : *t) j[std::string(k.str())] = toml_to_json(v);
    return j;
  }
  if (const auto* a = n.as_array()) {
    nlohmann::json j = nlohmann::json::array();
    for (const auto& v : *a) j.push_back(toml_to_json(v));
    return j;
  }
  if (const auto* v = n.as_integer()) return v->get();
  if (const auto* v = n.as_floating_point()) return v->get();
  if (const auto* v = n.as_boolean()) return v->get();
  if (const auto* v = n.as_string()) return v->get();
  throw ConfigError("dates and times are not supported in configs");
}

}  // namespace detail

/// Build a config from a JSON tree (the common form of TOML and JSON files).
inline ExperimentConfig config_from_json(const nlohmann::json& j) {
  detail::Section top(j, "", "");
  std::string method_name = "ofm";
  top.get("method", method_name);
  const Method method = parse_method(method_name);

  TaskDescriptor task;
  if (const auto* t = top.child("task")) task = t->get<TaskDescriptor>();

  ExperimentConfig c = method_defaults(method, task.dim);
  c.task = task;
  top.get("schema_version", c.schema_version);
  top.get("seed", c.seed);
  top.get("workers", c.workers);
  top.get("output_dir", c.output_dir);

  const bool ofm = c.is_ofm();
  if (const auto* tj = top.child("train")) {
    detail::Section s(*tj, "train", method_name);
    s.get("iterations", c.iterations);
    s.get("batch_size", c.batch_size);
    s.get("learning_rate", c.learning_rate);
    s.get_enum("plan", c.plan, parse_plan);
    s.get("minibatch_size", c.minibatch_size);
    s.get("log_interval", c.log_interval);
    s.get("checkpoint_interval", c.checkpoint_interval);
    if (ofm) {
      s.get("ema_decay", c.ema_decay);
      s.get("epsilon", c.epsilon);
      s.get_enum("hessian_solve", c.hessian_solve, parse_hessian_solve);
      s.get("log_dual", c.log_dual);
      s.get("amortize", c.amortize);
      s.get("amortizer_hidden", c.amortizer_hidden);
      s.get("amortizer_learning_rate", c.amortizer_learning_rate);
      s.get("max_failure_rate", c.max_failure_rate);
      s.get("failure_window", c.failure_window);
    } else {
      s.get_enum("optimizer", c.optimizer, parse_optimizer);
      if (c.is_rectified()) {
        s.get("rounds", c.rounds);
        s.get("pool_size", c.pool_size);
      }
    }
    s.finish();
  }
  if (const auto* mj = top.child("model")) {
    detail::Section s(*mj, "model", method_name);
    s.get("hidden", c.model.hidden);
    s.get_enum("activation", c.model.activation, parse_activation);
    if (ofm) {
      s.get("quadratic_rank", c.model.quadratic_rank);
      s.get("convex", c.model.convex);
    }
    s.finish();
  }
  if (const auto* sj = top.child("subproblem")) {
    if (!ofm) throw ConfigError("subproblem: only used by method ofm");
    detail::Section s(*sj, "subproblem", method_name);
    s.get("max_iterations", c.subproblem.max_iterations);
    s.get("tol_grad", c.subproblem.tol_grad);
    s.get("memory", c.subproblem.memory);
    s.finish();
  }
  if (const auto* oj = top.child("ode")) {
    if (ofm) throw ConfigError("ode: not used by method ofm (its map is evaluated in closed form)");
    detail::Section s(*oj, "ode", method_name);
    s.get_enum("method", c.ode.method, parse_ode_method);
    s.get("steps", c.ode.steps);
    s.get("atol", c.ode.atol);
    s.get("rtol", c.ode.rtol);
    s.finish();
  }
  if (const auto* ej = top.child("eval")) {
    detail::Section s(*ej, "eval", method_name);
    s.get("seed", c.eval.seed);
    s.get("trace_samples", c.eval.trace_samples);
    s.finish();
  }
  if (const auto* pj = top.child("plot")) {
    detail::Section s(*pj, "plot", method_name);
    if (const auto* kj = s.child("kinds")) {
      if (!kj->is_array()) throw ConfigError("plot.kinds: expected an array of strings");
      for (const auto& k : *kj) {
        if (!k.is_string()) throw ConfigError("plot.kinds: expected an array of strings");
        try {
          c.plot.kinds.push_back(parse_plot_kind(k.get<std::string>()));
        } catch (const ConfigError& e) {
          throw ConfigError(std::string("plot.kinds: ") + e.what());
        }
      }
    }
    s.get("samples", c.plot.samples);
    s.get("trajectories", c.plot.trajectories);
    s.finish();
  }
  top.finish();
  c.validate();
  return c;
}

/// The fully resolved config; reading it back yields an identical config.
inline nlohmann::json to_json(const ExperimentConfig& c) {
  nlohmann::json train{{"iterations", c.iterations},
                       {"batch_size", c.batch_size},
                       {"learning_rate", c.learning_rate},
                       {"plan", to_string(c.plan)},
                       {"minibatch_size", c.minibatch_size},
                       {"log_interval", c.log_interval},
                       {"checkpoint_interval", c.checkpoint_interval}};
  nlohmann::json model{{"hidden", c.model.hidden}, {"activation", to_string(c.model.activation)}};
  nlohmann::json j{{"schema_version", c.schema_version},
                   {"method", to_string(c.method)},
                   {"seed", c.seed},
                   {"workers", c.workers},
                   {"output_dir", c.output_dir},
                   {"task", c.task}};
  if (c.is_ofm()) {
    train["ema_decay"] = c.ema_decay;
    train["epsilon"] = c.epsilon;
    train["hessian_solve"] = to_string(c.hessian_solve);
    train["log_dual"] = c.log_dual;
    train["amortize"] = c.amortize;
    train["amortizer_hidden"] = c.amortizer_hidden;
    train["amortizer_learning_rate"] = c.amortizer_learning_rate;
    train["max_failure_rate"] = c.max_failure_rate;
    train["failure_window"] = c.failure_window;
    model["quadratic_rank"] = c.model.quadratic_rank;
    model["convex"] = c.model.convex;
    j["subproblem"] = {{"max_iterations", c.subproblem.max_iterations},
                       {"tol_grad", c.subproblem.tol_grad},
                       {"memory", c.subproblem.memory}};
  } else {
    train["optimizer"] = to_string(c.optimizer);
    if (c.is_rectified()) {
      train["rounds"] = c.rounds;
      train["pool_size"] = c.pool_size;
    }
    j["ode"] = {{"method", to_string(c.ode.method)}, {"steps", c.ode.steps}, {"atol", c.ode.atol}, {"rtol", c.ode.rtol}};
  }
  j["train"] = train;
  j["model"] = model;
  j["eval"] = {{"seed", c.eval.seed}, {"trace_samples", c.eval.trace_samples}};
  nlohmann::json kinds = nlohmann::json::array();
  for (auto k : c.plot.kinds) kinds.push_back(to_string(k));
  j["plot"] = {{"kinds", kinds}, {"samples", c.plot.samples}, {"trajectories", c.plot.trajectories}};
  return j;
}

/// Parse config text; `format` is "toml" or "json".
inline nlohmann::json parse_config_text(const std::string& text, const std::string& format,
                                        const std::string& origin = "config") {
  if (format == "json") {
    try {
      return nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
      throw ConfigError(origin + ": " + e.what());
    }
  }
  if (format == "toml") {
    try {
      const toml::table t = toml::parse(text, origin);
      return detail::toml_to_json(t);
    } catch (const toml::parse_error& e) {
      std::ostringstream os;
      os << origin << ":" << e.source().begin.line << ":" << e.source().begin.column << ": " << e.description();
      throw ConfigError(os.str());
    }
  }
  throw ConfigError(origin + ": unknown config format '" + format + "' (expected .toml or .json)");
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  auto ext = std::filesystem::path(path).extension().string();
  if (!ext.empty()) ext.erase(0, 1);
  return config_from_json(parse_config_text(ss.str(), ext, path));
}

}  // namespace ofm

#endif  // OFM_CONFIG_HPP
