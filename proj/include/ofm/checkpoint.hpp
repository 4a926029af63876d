#ifndef OFM_CHECKPOINT_HPP
#define OFM_CHECKPOINT_HPP

// JSON checkpoints for every trained model kind. Parameters are written as
// plain arrays of doubles (shortest round-trip form), so save -> load is exact.

#include <fstream>
#include <optional>
#include <string>
#include <variant>

#include <json.hpp>

#include "ofm/baselines.hpp"
#include "ofm/benchmark.hpp"
#include "ofm/potential.hpp"

namespace ofm {

inline constexpr const char* kCheckpointFormat = "ofm-checkpoint";
inline constexpr int kCheckpointVersion = 1;

using Model = std::variant<QuadraticPotential, IcnnPotential, TimeField, ScalarTimeField>;

struct Checkpoint {
  Model model;
  std::string method;                // training method tag, e.g. "ofm" or "rf"
  long iteration = 0;                // iterations completed (per round for rf)
  std::optional<TaskDescriptor> task;

  int dim() const {
    return std::visit([](const auto& m) { return m.dim(); }, model);
  }
  std::string kind() const;
};

namespace detail {

inline nlohmann::json vector_json(const Vector& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

inline nlohmann::json matrix_json(const Matrix& m) {
  nlohmann::json rows = nlohmann::json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) rows.push_back(vector_json(m.row(i).transpose()));
  return rows;
}

inline Vector json_vector(const nlohmann::json& j, const char* what) {
  if (!j.is_array()) throw ConfigError(std::string("checkpoint.") + what + ": expected an array of numbers");
  Vector v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) {
    if (!j[i].is_number()) throw ConfigError(std::string("checkpoint.") + what + ": expected an array of numbers");
    v[static_cast<Eigen::Index>(i)] = j[i].get<double>();
  }
  return v;
}

inline Matrix json_matrix(const nlohmann::json& j, const char* what) {
  if (!j.is_array() || j.empty()) throw ConfigError(std::string("checkpoint.") + what + ": expected rows");
  Matrix m(static_cast<Eigen::Index>(j.size()), static_cast<Eigen::Index>(j[0].size()));
  for (std::size_t i = 0; i < j.size(); ++i) {
    const Vector r = json_vector(j[i], what);
    check_dim(r.size(), m.cols(), "checkpoint matrix row");
    m.row(static_cast<Eigen::Index>(i)) = r.transpose();
  }
  return m;
}

template <class T>
T field(const nlohmann::json& j, const char* key) {
  if (!j.contains(key)) throw ConfigError(std::string("checkpoint.") + key + ": missing");
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ConfigError(std::string("checkpoint.") + key + ": wrong type");
  }
}

inline void set_theta(Vector& dst, const nlohmann::json& j) {
  const Vector theta = json_vector(j.at("theta"), "theta");
  if (theta.size() != dst.size())
    throw ConfigError("checkpoint.theta: expected " + std::to_string(dst.size()) + " parameters, got " +
                      std::to_string(theta.size()));
  dst = theta;
}

}  // namespace detail

inline std::string Checkpoint::kind() const {
  switch (model.index()) {
    case 0: return "quadratic";
    case 1: return "icnn";
    case 2: return "mlp_field";
    default: return "scalar_field";
  }
}

inline nlohmann::json to_json(const Checkpoint& c) {
  nlohmann::json j{{"format", kCheckpointFormat}, {"version", kCheckpointVersion}, {"kind", c.kind()},
                   {"method", c.method},          {"iteration", c.iteration},    {"dim", c.dim()}};
  if (c.task) j["task"] = *c.task;
  std::visit(
      [&](const auto& m) {
        using M = std::decay_t<decltype(m)>;
        if constexpr (std::is_same_v<M, QuadraticPotential>) {
          j["A"] = detail::matrix_json(m.a());
          j["b"] = detail::vector_json(m.b());
          j["c"] = m.c();
        } else if constexpr (std::is_same_v<M, IcnnPotential>) {
          const auto o = m.options();
          j["hidden"] = o.hidden;
          j["activation"] = to_string(o.activation);
          j["quadratic_rank"] = o.quadratic_rank;
          j["convex"] = o.convex;
          j["theta"] = detail::vector_json(m.params());
        } else if constexpr (std::is_same_v<M, TimeField>) {
          j["hidden"] = m.net().hidden();
          j["activation"] = to_string(m.net().activation());
          j["theta"] = detail::vector_json(m.params());
        } else {
          j["hidden"] = m.net().shape().hidden;
          j["activation"] = to_string(m.net().shape().activation);
          j["theta"] = detail::vector_json(m.params());
        }
      },
      c.model);
  return j;
}

inline Checkpoint checkpoint_from_json(const nlohmann::json& j) {
  if (!j.is_object() || j.value("format", "") != kCheckpointFormat)
    throw ConfigError("checkpoint.format: not an ofm checkpoint");
  if (detail::field<int>(j, "version") != kCheckpointVersion)
    throw ConfigError("checkpoint.version: unsupported version");
  Checkpoint c;
  c.method = j.value("method", "");
  c.iteration = j.value("iteration", 0L);
  if (j.contains("task")) c.task = j.at("task").get<TaskDescriptor>();
  const auto kind = detail::field<std::string>(j, "kind");
  const int dim = detail::field<int>(j, "dim");
  if (kind == "quadratic") {
    c.model = QuadraticPotential(detail::json_matrix(j.at("A"), "A"), detail::json_vector(j.at("b"), "b"),
                                 detail::field<double>(j, "c"));
  } else if (kind == "icnn") {
    IcnnOptions o;
    o.hidden = detail::field<std::vector<int>>(j, "hidden");
    o.activation = parse_activation(detail::field<std::string>(j, "activation"));
    o.quadratic_rank = detail::field<int>(j, "quadratic_rank");
    o.convex = detail::field<bool>(j, "convex");
    IcnnPotential p(dim, o);
    detail::set_theta(p.params(), j);
    c.model = std::move(p);
  } else if (kind == "mlp_field") {
    TimeField f(dim, detail::field<std::vector<int>>(j, "hidden"),
                parse_activation(detail::field<std::string>(j, "activation")));
    detail::set_theta(f.params(), j);
    c.model = std::move(f);
  } else if (kind == "scalar_field") {
    ScalarTimeField f(dim, detail::field<std::vector<int>>(j, "hidden"),
                      parse_activation(detail::field<std::string>(j, "activation")));
    detail::set_theta(f.params(), j);
    c.model = std::move(f);
  } else {
    throw ConfigError("checkpoint.kind: unknown model kind '" + kind + "'");
  }
  if (c.dim() != dim) throw ConfigError("checkpoint.dim: does not match the stored parameters");
  return c;
}

inline void save_checkpoint(const Checkpoint& c, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write checkpoint " + path);
  out << to_json(c).dump(1) << '\n';
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open checkpoint " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("checkpoint " + path + ": " + e.what());
  }
  return checkpoint_from_json(j);
}

}  // namespace ofm

#endif  // OFM_CHECKPOINT_HPP
