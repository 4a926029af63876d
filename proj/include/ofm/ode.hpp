#ifndef OFM_ODE_HPP
#define OFM_ODE_HPP

// Explicit integrators for dz/dt = u(t, z) on [0, 1]: classic fixed-step RK4
// and adaptive Dormand-Prince 5(4) with embedded error control.

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "ofm/core.hpp"

namespace ofm {

enum class OdeMethod { rk4, dopri5 };

inline std::string to_string(OdeMethod m) { return m == OdeMethod::rk4 ? "rk4" : "dopri5"; }

inline OdeMethod parse_ode_method(std::string_view s) {
  if (s == "rk4") return OdeMethod::rk4;
  if (s == "dopri5" || s == "dormand-prince-45") return OdeMethod::dopri5;
  throw ConfigError("unknown ode method '" + std::string(s) + "'");
}

/// Raised when the adaptive step size underflows or the step budget runs out.
class OdeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct OdeOptions {
  OdeMethod method = OdeMethod::dopri5;
  int steps = 100;  // rk4 only
  double atol = 1e-6;
  double rtol = 1e-6;
  double min_step = 1e-12;
  long max_steps = 1000000;

  void validate() const {
    if (method == OdeMethod::rk4 && steps < 1) throw ConfigError("ode: steps must be >= 1");
    if (method == OdeMethod::dopri5) {
      if (!(atol >= 1e-8 && atol <= 1e-3) || !(rtol >= 1e-8 && rtol <= 1e-3))
        throw ConfigError("ode: tolerances must lie in [1e-8, 1e-3]");
    }
  }
};

struct OdeResult {
  Vector final_state;
  std::vector<double> times;    // requested sample times
  std::vector<Vector> samples;  // states at those times
  long steps = 0;
  long rejected = 0;
};

namespace detail {

template <class F>
Vector rk4_step(F& f, double t, const Vector& z, double h) {
  const Vector k1 = f(t, z);
  const Vector k2 = f(t + 0.5 * h, z + 0.5 * h * k1);
  const Vector k3 = f(t + 0.5 * h, z + 0.5 * h * k2);
  const Vector k4 = f(t + h, z + h * k3);
  return z + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
}

// Integrate from t0 to t1 with Dormand-Prince; h is the running step guess.
template <class F>
Vector dopri_segment(F& f, double t0, double t1, Vector z, double& h, const OdeOptions& opt, OdeResult& res) {
  static constexpr double c2 = 1.0 / 5, c3 = 3.0 / 10, c4 = 4.0 / 5, c5 = 8.0 / 9;
  static constexpr double a21 = 1.0 / 5;
  static constexpr double a31 = 3.0 / 40, a32 = 9.0 / 40;
  static constexpr double a41 = 44.0 / 45, a42 = -56.0 / 15, a43 = 32.0 / 9;
  static constexpr double a51 = 19372.0 / 6561, a52 = -25360.0 / 2187, a53 = 64448.0 / 6561, a54 = -212.0 / 729;
  static constexpr double a61 = 9017.0 / 3168, a62 = -355.0 / 33, a63 = 46732.0 / 5247, a64 = 49.0 / 176,
                          a65 = -5103.0 / 18656;
  static constexpr double b1 = 35.0 / 384, b3 = 500.0 / 1113, b4 = 125.0 / 192, b5 = -2187.0 / 6784, b6 = 11.0 / 84;
  // difference between 5th- and 4th-order weights
  static constexpr double e1 = 71.0 / 57600, e3 = -71.0 / 16695, e4 = 71.0 / 1920, e5 = -17253.0 / 339200,
                          e6 = 22.0 / 525, e7 = -1.0 / 40;
  double t = t0;
  Vector k1 = f(t, z);
  while (t < t1) {
    if (res.steps + res.rejected >= opt.max_steps) {
      std::ostringstream os;
      os << "integrate: step budget " << opt.max_steps << " exhausted at t = " << t;
      throw OdeError(os.str());
    }
    const bool last = t + h >= t1;
    const double step = last ? t1 - t : h;
    const Vector k2 = f(t + c2 * step, z + step * a21 * k1);
    const Vector k3 = f(t + c3 * step, z + step * (a31 * k1 + a32 * k2));
    const Vector k4 = f(t + c4 * step, z + step * (a41 * k1 + a42 * k2 + a43 * k3));
    const Vector k5 = f(t + c5 * step, z + step * (a51 * k1 + a52 * k2 + a53 * k3 + a54 * k4));
    const Vector k6 = f(t + step, z + step * (a61 * k1 + a62 * k2 + a63 * k3 + a64 * k4 + a65 * k5));
    const Vector next = z + step * (b1 * k1 + b3 * k3 + b4 * k4 + b5 * k5 + b6 * k6);
    const Vector k7 = f(t + step, next);
    const Vector err = step * (e1 * k1 + e3 * k3 + e4 * k4 + e5 * k5 + e6 * k6 + e7 * k7);
    const Vector scale = (opt.atol + opt.rtol * z.cwiseAbs().cwiseMax(next.cwiseAbs()).array()).matrix();
    const double en = std::sqrt((err.array() / scale.array()).square().mean());
    if (!std::isfinite(en)) {
      h = 0.25 * step;
      ++res.rejected;
    } else if (en <= 1.0) {
      t = last ? t1 : t + step;
      z = next;
      k1 = k7;  // first-same-as-last
      ++res.steps;
      const double factor = en == 0.0 ? 5.0 : std::clamp(0.9 * std::pow(en, -0.2), 0.2, 5.0);
      if (!last || factor < 1.0) h = step * factor;
    } else {
      h = step * std::max(0.2, 0.9 * std::pow(en, -0.2));
      ++res.rejected;
    }
    if (t < t1 && h < opt.min_step) {
      std::ostringstream os;
      os << "integrate: step size underflow (h = " << h << ") at t = " << t << ", error norm " << en;
      throw OdeError(os.str());
    }
  }
  return z;
}

}  // namespace detail

/// Integrate dz/dt = f(t, z) from t=0 to t=1 starting at x0, recording the
/// state at each time in `sample_times` (sorted, within [0, 1]).
template <class F>
OdeResult integrate(F&& f, const Vector& x0, const OdeOptions& opt = {}, std::vector<double> sample_times = {}) {
  opt.validate();
  for (double s : sample_times)
    if (!(s >= 0.0 && s <= 1.0)) throw std::invalid_argument("integrate: sample times must lie in [0, 1]");
  if (!std::is_sorted(sample_times.begin(), sample_times.end()))
    throw std::invalid_argument("integrate: sample times must be sorted");
  OdeResult res;
  res.times = sample_times;
  Vector z = x0;
  double t = 0.0;
  if (opt.method == OdeMethod::rk4) {
    // uniform grid with the sample times inserted as breakpoints
    std::vector<double> grid;
    for (int i = 0; i <= opt.steps; ++i) grid.push_back(double(i) / opt.steps);
    grid.insert(grid.end(), sample_times.begin(), sample_times.end());
    std::sort(grid.begin(), grid.end());
    std::size_t next_sample = 0;
    for (std::size_t i = 0; i < grid.size(); ++i) {
      if (grid[i] > t) {
        z = detail::rk4_step(f, t, z, grid[i] - t);
        t = grid[i];
        ++res.steps;
      }
      while (next_sample < sample_times.size() && sample_times[next_sample] <= t) {
        res.samples.push_back(z);
        ++next_sample;
      }
    }
  } else {
    double h = 0.01;
    for (double s : sample_times) {
      if (s > t) z = detail::dopri_segment(f, t, s, z, h, opt, res);
      t = std::max(t, s);
      res.samples.push_back(z);
    }
    if (t < 1.0) z = detail::dopri_segment(f, t, 1.0, z, h, opt, res);
  }
  res.final_state = std::move(z);
  return res;
}

}  // namespace ofm

#endif  // OFM_ODE_HPP
