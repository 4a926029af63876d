#ifndef OFM_METRICS_LOG_HPP
#define OFM_METRICS_LOG_HPP

// Training traces shared by every trainer. Rows carry only quantities that are
// deterministic given the seed; wall-clock time goes to a separate file so two
// identically seeded runs produce byte-identical metric logs.

#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace ofm {

inline constexpr double kMissing = std::numeric_limits<double>::quiet_NaN();

struct MetricsRow {
  long iteration = 0;
  std::string method;
  double loss = kMissing;            // training objective of this step
  double ofm_loss = kMissing;        // batch estimate of the OFM loss
  double dual_ot_loss = kMissing;    // E Psi(x0) + E Psi*(x1)
  double sub_converged = kMissing;   // fraction of converged subproblems
  double sub_iterations = kMissing;  // mean subproblem iterations
  double l2_uvp = kMissing;          // percent, ground-truth tasks only
  double cosine = kMissing;          // ground-truth tasks only
};

inline const char* metrics_header() {
  return "iteration,method,loss,ofm_loss,dual_ot_loss,sub_converged,sub_iterations,l2_uvp,cosine";
}

namespace detail {

inline std::string format_metric(double v) {
  if (std::isnan(v)) return "";
  char buf[32];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);  // shortest round-trip form
  if (ec != std::errc()) throw std::runtime_error("metrics: cannot format value");
  return std::string(buf, end);
}

inline double parse_metric(const std::string& s) {
  if (s.empty()) return kMissing;
  return std::stod(s);
}

}  // namespace detail

inline std::string format_row(const MetricsRow& r) {
  using detail::format_metric;
  std::ostringstream os;
  os << r.iteration << ',' << r.method << ',' << format_metric(r.loss) << ',' << format_metric(r.ofm_loss) << ','
     << format_metric(r.dual_ot_loss) << ',' << format_metric(r.sub_converged) << ','
     << format_metric(r.sub_iterations) << ',' << format_metric(r.l2_uvp) << ',' << format_metric(r.cosine);
  return os.str();
}

inline void write_metrics_csv(const std::string& path, const std::vector<MetricsRow>& rows) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  out << metrics_header() << '\n';
  for (const auto& r : rows) out << format_row(r) << '\n';
}

inline std::vector<MetricsRow> read_metrics_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::string line;
  if (!std::getline(in, line) || line != metrics_header())
    throw std::runtime_error(path + ": not a metrics log (unexpected header)");
  std::vector<MetricsRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) f.push_back(cell);
    if (!line.empty() && line.back() == ',') f.emplace_back();
    if (f.size() != 9) throw std::runtime_error(path + ": malformed row '" + line + "'");
    MetricsRow r;
    r.iteration = std::stol(f[0]);
    r.method = f[1];
    r.loss = detail::parse_metric(f[2]);
    r.ofm_loss = detail::parse_metric(f[3]);
    r.dual_ot_loss = detail::parse_metric(f[4]);
    r.sub_converged = detail::parse_metric(f[5]);
    r.sub_iterations = detail::parse_metric(f[6]);
    r.l2_uvp = detail::parse_metric(f[7]);
    r.cosine = detail::parse_metric(f[8]);
    rows.push_back(std::move(r));
  }
  return rows;
}

/// Wall-clock seconds per logged iteration.
inline void write_timings_csv(const std::string& path, const std::vector<std::pair<long, double>>& timings) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  out << "iteration,wall_seconds\n";
  for (const auto& [it, s] : timings) out << it << ',' << s << '\n';
}

}  // namespace ofm

#endif  // OFM_METRICS_LOG_HPP
