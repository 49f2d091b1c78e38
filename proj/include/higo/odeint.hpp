#pragma once

#include <functional>
#include <vector>

#include "higo/array.hpp"

namespace higo {

struct SolverConfig {
  enum class Method { rk4, dopri5 };
  Method method = Method::rk4;
  int rk4_steps_per_unit = 4;
  double rtol = 1e-3;
  double atol = 1e-4;
  int max_steps = 10000;
};

using DerivFn = std::function<Vec(const Vec&, double)>;

struct OdeResult {
  Vec y;                      // state at t1
  std::vector<Vec> interior;  // states at the requested interior times
  int n_steps = 0;
};

// Fused state updates keep the tape short; Array overloads live in ops.cpp.
Array axpy(const Array& a, const Array& b, double c);
Array rk4_combine(const Array& x, const Array& k1, const Array& k2, const Array& k3,
                  const Array& k4, double h);

template <class State>
State ode_axpy(const State& x, const State& k, double c) {
  return x + c * k;
}
inline Array ode_axpy(const Array& x, const Array& k, double c) { return axpy(x, k, c); }

template <class State>
State ode_combine(const State& x, const State& k1, const State& k2, const State& k3,
                  const State& k4, double h) {
  return x + (h / 6) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
}
inline Array ode_combine(const Array& x, const Array& k1, const Array& k2, const Array& k3,
                         const Array& k4, double h) {
  return rk4_combine(x, k1, k2, k3, k4, h);
}

/// Fixed-step classical RK4 over any state supporting `s + s` and `c * s`.
/// This is the path unrolled onto the autodiff tape during training.
template <class State, class F>
State rk4_integrate(F&& f, State x, double t0, double t1, int n_steps) {
  double h = (t1 - t0) / n_steps;
  double t = t0;
  for (int i = 0; i < n_steps; ++i) {
    State k1 = f(x, t);
    State k2 = f(ode_axpy(x, k1, h / 2), t + h / 2);
    State k3 = f(ode_axpy(x, k2, h / 2), t + h / 2);
    State k4 = f(ode_axpy(x, k3, h), t + h);
    x = ode_combine(x, k1, k2, k3, k4, h);
    t = t0 + (i + 1) * h;
  }
  return x;
}

int rk4_step_count(double t0, double t1, int steps_per_unit);

/// Integrate x' = f(x, t) from t0 to t1. Interior times must lie in
/// [t0, t1]; dopri5 serves them from 4th-order dense output, rk4 from the
/// nearest step boundary.
OdeResult integrate(const DerivFn& f, Vec x0, double t0, double t1, const SolverConfig& cfg,
                    const std::vector<double>& interior_times = {});

/// Empirical RK4 convergence order via Richardson comparison at n and 2n
/// steps against a fine-step reference.
double order_check(const DerivFn& f, const Vec& x0, double t0, double t1, int n);

}  // namespace higo
