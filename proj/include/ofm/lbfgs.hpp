#ifndef OFM_LBFGS_HPP
#define OFM_LBFGS_HPP

// Limited-memory BFGS with a strong-Wolfe line search (bracketing + zoom with
// cubic interpolation). Written for small smooth strongly convex problems that
// must be driven to gradient norms near machine precision, so the sufficient
// decrease test carries a round-off allowance on the function value.

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>

#include "ofm/core.hpp"

namespace ofm {

struct LbfgsOptions {
  int max_iterations = 50;
  int memory = 10;
  double tol_grad = 1e-8;
  double c1 = 1e-4;
  double c2 = 0.9;
  int max_line_search = 25;
  /// Iterates with norm above this are reported as divergent.
  double divergence_bound = std::numeric_limits<double>::infinity();
};

struct LbfgsResult {
  Vector x;
  double f = 0.0;
  double grad_norm = 0.0;
  int iterations = 0;
  int evaluations = 0;
  bool converged = false;
  bool diverged = false;
};

namespace detail {

// Minimizer of the cubic interpolating (a, fa, ga), (b, fb, gb), safeguarded to [lo, hi].
inline double cubic_step(double a, double fa, double ga, double b, double fb, double gb, double lo,
                         double hi) {
  const double d1 = ga + gb - 3.0 * (fa - fb) / (a - b);
  const double disc = d1 * d1 - ga * gb;
  double t;
  if (disc >= 0.0) {
    const double d2 = std::copysign(std::sqrt(disc), b - a);
    t = b - (b - a) * (gb + d2 - d1) / (gb - ga + 2.0 * d2);
  } else {
    t = 0.5 * (a + b);
  }
  if (!std::isfinite(t)) t = 0.5 * (lo + hi);
  const double margin = 0.1 * (hi - lo);
  return std::clamp(t, lo + margin, hi - margin);
}

}  // namespace detail

/// Minimize f starting from x0. `fg(x, g)` returns f(x) and writes the gradient into g.
template <class ValueGrad>
LbfgsResult lbfgs_minimize(ValueGrad&& fg, Vector x0, const LbfgsOptions& opt = {}) {
  LbfgsResult res;
  const Eigen::Index n = x0.size();
  Vector x = std::move(x0);
  Vector g(n);
  double f = fg(x, g);
  res.evaluations = 1;

  std::deque<Vector> s_hist, y_hist;
  std::deque<double> rho_hist;
  Vector d(n), x_new(n), g_new(n), q(n);
  std::vector<double> alpha_buf(static_cast<std::size_t>(std::max(opt.memory, 1)));

  auto finish = [&](bool converged) {
    res.x = x;
    res.f = f;
    res.grad_norm = g.norm();
    res.converged = converged;
    return res;
  };

  if (!std::isfinite(f) || !g.allFinite()) return finish(false);
  if (g.norm() <= opt.tol_grad) return finish(true);

  for (int it = 0; it < opt.max_iterations; ++it) {
    // two-loop recursion
    q = g;
    const std::size_t m = s_hist.size();
    for (std::size_t k = m; k-- > 0;) {
      alpha_buf[k] = rho_hist[k] * s_hist[k].dot(q);
      q -= alpha_buf[k] * y_hist[k];
    }
    double gamma = 1.0;
    if (m > 0) gamma = s_hist.back().dot(y_hist.back()) / y_hist.back().squaredNorm();
    d = -gamma * q;
    for (std::size_t k = 0; k < m; ++k) {
      const double beta = rho_hist[k] * y_hist[k].dot(d);
      d += s_hist[k] * (-alpha_buf[k] - beta);
    }
    double dg = d.dot(g);
    if (!(dg < 0.0)) {
      // lost descent: restart from steepest descent
      s_hist.clear();
      y_hist.clear();
      rho_hist.clear();
      d = -g;
      dg = -g.squaredNorm();
    }

    double step = 1.0;
    if (m == 0) step = std::min(1.0, 1.0 / std::max(g.lpNorm<Eigen::Infinity>(), 1e-300));

    // strong Wolfe line search
    const double f0 = f, dg0 = dg;
    const double slack = 8.0 * std::numeric_limits<double>::epsilon() * (1.0 + std::abs(f0));
    double a_prev = 0.0, f_prev = f0, dg_prev = dg0;
    double a_lo = 0.0, f_lo = f0, dg_lo = dg0, a_hi = 0.0, f_hi = 0.0, dg_hi = 0.0;
    bool zooming = false, accepted = false;
    double f_acc = f0;
    // best trial with no real increase in f, ranked by gradient norm; used when
    // round-off in f defeats the Wolfe tests close to the minimizer
    double best_gn = g.norm(), best_f = f0;
    Vector x_best, g_best;
    for (int ls = 0; ls < opt.max_line_search; ++ls) {
      if (zooming) {
        const double lo = std::min(a_lo, a_hi), hi = std::max(a_lo, a_hi);
        step = detail::cubic_step(a_lo, f_lo, dg_lo, a_hi, f_hi, dg_hi, lo, hi);
      }
      x_new = x + step * d;
      if (x_new.norm() > opt.divergence_bound) {
        x.swap(x_new);
        f = fg(x, g);
        ++res.evaluations;
        res.iterations = it + 1;
        res.diverged = true;
        return finish(false);
      }
      const double f_new = fg(x_new, g_new);
      ++res.evaluations;
      const double dg_new = g_new.dot(d);
      const bool finite = std::isfinite(f_new) && g_new.allFinite();
      const bool armijo = finite && f_new <= f0 + opt.c1 * step * dg0 + slack;
      if (!finite) {
        // non-finite trial: shrink towards the last good point
        if (zooming) a_hi = step, f_hi = std::numeric_limits<double>::max(), dg_hi = 0.0;
        else step = a_prev + 0.1 * (step - a_prev);
        continue;
      }
      if (f_new <= f0 + slack) {
        const double gn = g_new.norm();
        if (gn < best_gn) {
          best_gn = gn;
          best_f = f_new;
          x_best = x_new;
          g_best = g_new;
        }
      }
      if (!zooming) {
        if (!armijo || (ls > 0 && f_new >= f_prev)) {
          a_lo = a_prev, f_lo = f_prev, dg_lo = dg_prev;
          a_hi = step, f_hi = f_new, dg_hi = dg_new;
          zooming = true;
          continue;
        }
        if (std::abs(dg_new) <= -opt.c2 * dg0) {
          accepted = true;
          f_acc = f_new;
          break;
        }
        if (dg_new >= 0.0) {
          a_lo = step, f_lo = f_new, dg_lo = dg_new;
          a_hi = a_prev, f_hi = f_prev, dg_hi = dg_prev;
          zooming = true;
          continue;
        }
        a_prev = step, f_prev = f_new, dg_prev = dg_new;
        step *= 2.0;
      } else {
        if (!armijo || f_new >= f_lo + slack) {
          a_hi = step, f_hi = f_new, dg_hi = dg_new;
        } else {
          if (std::abs(dg_new) <= -opt.c2 * dg0) {
            accepted = true;
            f_acc = f_new;
            break;
          }
          if (dg_new * (a_hi - a_lo) >= 0.0) {
            a_hi = a_lo, f_hi = f_lo, dg_hi = dg_lo;
          }
          a_lo = step, f_lo = f_new, dg_lo = dg_new;
        }
        if (std::abs(a_hi - a_lo) < 1e-16 * std::max(1.0, std::abs(a_lo))) break;
      }
    }
    if (!accepted) {
      if (x_best.size() == 0) {
        res.iterations = it;
        return finish(g.norm() <= opt.tol_grad);
      }
      x_new = x_best;
      g_new = g_best;
      f_acc = best_f;
    }

    Vector s = x_new - x;
    Vector y = g_new - g;
    x.swap(x_new);
    g.swap(g_new);
    f = f_acc;
    res.iterations = it + 1;

    if (x.norm() > opt.divergence_bound) {
      res.diverged = true;
      return finish(false);
    }
    if (g.norm() <= opt.tol_grad) return finish(true);

    const double sy = s.dot(y);
    if (sy > 1e-300 * std::max(1.0, s.squaredNorm())) {
      if (static_cast<int>(s_hist.size()) == opt.memory) {
        s_hist.pop_front();
        y_hist.pop_front();
        rho_hist.pop_front();
      }
      s_hist.push_back(std::move(s));
      y_hist.push_back(std::move(y));
      rho_hist.push_back(1.0 / sy);
    }
  }
  return finish(g.norm() <= opt.tol_grad);
}

}  // namespace ofm

#endif  // OFM_LBFGS_HPP
