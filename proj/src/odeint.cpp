#include "higo/odeint.hpp"

#include <algorithm>
#include <cmath>

namespace higo {

namespace {

Vec checked(const DerivFn& f, const Vec& x, double t) {
  Vec d = f(x, t);
  if (d.size() != x.size()) throw ShapeError("integrate: derivative shape mismatch");
  if (!d.allFinite()) throw ValueError("integrate: NaN in derivative at t=" + std::to_string(t));
  return d;
}

OdeResult rk4_path(const DerivFn& f, Vec x, double t0, double t1, const SolverConfig& cfg,
                   const std::vector<double>& times) {
  int n = rk4_step_count(t0, t1, cfg.rk4_steps_per_unit);
  OdeResult res;
  res.interior.resize(times.size());
  if (n == 0) {
    res.y = std::move(x);
    for (size_t q = 0; q < times.size(); ++q) res.interior[q] = res.y;
    return res;
  }
  double h = (t1 - t0) / n;
  // Snap each query to its nearest step boundary.
  std::vector<std::vector<size_t>> due(static_cast<size_t>(n) + 1);
  for (size_t q = 0; q < times.size(); ++q) {
    int k = static_cast<int>(std::lround((times[q] - t0) / h));
    due[static_cast<size_t>(std::clamp(k, 0, n))].push_back(q);
  }
  for (size_t q : due[0]) res.interior[q] = x;
  for (int i = 0; i < n; ++i) {
    double t = t0 + i * h;
    Vec k1 = checked(f, x, t);
    Vec k2 = checked(f, x + (h / 2) * k1, t + h / 2);
    Vec k3 = checked(f, x + (h / 2) * k2, t + h / 2);
    Vec k4 = checked(f, x + h * k3, t + h);
    x += (h / 6) * (k1 + 2 * k2 + 2 * k3 + k4);
    for (size_t q : due[static_cast<size_t>(i) + 1]) res.interior[q] = x;
  }
  res.y = std::move(x);
  res.n_steps = n;
  return res;
}

// Dormand-Prince 5(4) tableau.
constexpr double a21 = 1.0 / 5;
constexpr double a31 = 3.0 / 40, a32 = 9.0 / 40;
constexpr double a41 = 44.0 / 45, a42 = -56.0 / 15, a43 = 32.0 / 9;
constexpr double a51 = 19372.0 / 6561, a52 = -25360.0 / 2187, a53 = 64448.0 / 6561,
                 a54 = -212.0 / 729;
constexpr double a61 = 9017.0 / 3168, a62 = -355.0 / 33, a63 = 46732.0 / 5247, a64 = 49.0 / 176,
                 a65 = -5103.0 / 18656;
constexpr double b1 = 35.0 / 384, b3 = 500.0 / 1113, b4 = 125.0 / 192, b5 = -2187.0 / 6784,
                 b6 = 11.0 / 84;
constexpr double e1 = 71.0 / 57600, e3 = -71.0 / 16695, e4 = 71.0 / 1920, e5 = -17253.0 / 339200,
                 e6 = 22.0 / 525, e7 = -1.0 / 40;
constexpr double d1 = -12715105075.0 / 11282082432, d3 = 87487479700.0 / 32700410799,
                 d4 = -10690763975.0 / 1880347072, d5 = 701980252875.0 / 199316789632,
                 d6 = -1453857185.0 / 822651844, d7 = 69997945.0 / 29380423;

OdeResult dopri5_path(const DerivFn& f, Vec x, double t0, double t1, const SolverConfig& cfg,
                      const std::vector<double>& times) {
  OdeResult res;
  res.interior.resize(times.size());
  if (t1 == t0) {
    res.y = std::move(x);
    for (size_t q = 0; q < times.size(); ++q) res.interior[q] = res.y;
    return res;
  }
  // Queries sorted by time; consumed as steps pass over them.
  std::vector<size_t> order(times.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(),
            [&](size_t a, size_t b) { return times[a] < times[b]; });
  size_t next_q = 0;

  double t = t0;
  double h = (t1 - t0) / 10.0;
  Vec k1 = checked(f, x, t);
  int steps = 0;
  while (t < t1) {
    if (++steps > cfg.max_steps) throw ValueError("integrate: max_steps exceeded");
    h = std::min(h, t1 - t);
    Vec k2 = checked(f, x + h * (a21 * k1), t + h / 5);
    Vec k3 = checked(f, x + h * (a31 * k1 + a32 * k2), t + 3 * h / 10);
    Vec k4 = checked(f, x + h * (a41 * k1 + a42 * k2 + a43 * k3), t + 4 * h / 5);
    Vec k5 = checked(f, x + h * (a51 * k1 + a52 * k2 + a53 * k3 + a54 * k4), t + 8 * h / 9);
    Vec k6 = checked(f, x + h * (a61 * k1 + a62 * k2 + a63 * k3 + a64 * k4 + a65 * k5), t + h);
    Vec xn = x + h * (b1 * k1 + b3 * k3 + b4 * k4 + b5 * k5 + b6 * k6);
    Vec k7 = checked(f, xn, t + h);
    Vec err = h * (e1 * k1 + e3 * k3 + e4 * k4 + e5 * k5 + e6 * k6 + e7 * k7);
    double norm = 0;
    for (Eigen::Index i = 0; i < x.size(); ++i) {
      double sc = cfg.atol + cfg.rtol * std::max(std::abs(x[i]), std::abs(xn[i]));
      double r = err[i] / sc;
      norm += r * r;
    }
    norm = std::sqrt(norm / static_cast<double>(x.size()));
    if (norm <= 1.0) {
      // Dense output over [t, t+h] for any pending queries.
      if (next_q < order.size()) {
        Vec ydiff = xn - x;
        Vec r3 = h * k1 - ydiff;
        Vec r4 = ydiff - h * k7 - r3;
        Vec r5 = h * (d1 * k1 + d3 * k3 + d4 * k4 + d5 * k5 + d6 * k6 + d7 * k7);
        while (next_q < order.size() && times[order[next_q]] <= t + h + 1e-14) {
          double th = std::clamp((times[order[next_q]] - t) / h, 0.0, 1.0);
          res.interior[order[next_q]] =
              x + th * (ydiff + (1 - th) * (r3 + th * (r4 + (1 - th) * r5)));
          ++next_q;
        }
      }
      t += h;
      x = std::move(xn);
      k1 = std::move(k7);
    }
    double factor = norm == 0 ? 5.0 : std::clamp(0.9 * std::pow(norm, -0.2), 0.2, 5.0);
    h *= factor;
  }
  while (next_q < order.size()) res.interior[order[next_q++]] = x;
  res.y = std::move(x);
  res.n_steps = steps;
  return res;
}

}  // namespace

int rk4_step_count(double t0, double t1, int steps_per_unit) {
  if (t1 < t0) throw ValueError("integrate: t1 < t0");
  if (t1 == t0) return 0;
  return std::max(1, static_cast<int>(std::ceil((t1 - t0) * steps_per_unit)));
}

OdeResult integrate(const DerivFn& f, Vec x0, double t0, double t1, const SolverConfig& cfg,
                    const std::vector<double>& interior_times) {
  if (t1 < t0) throw ValueError("integrate: t1 < t0");
  if (cfg.method == SolverConfig::Method::rk4)
    return rk4_path(f, std::move(x0), t0, t1, cfg, interior_times);
  return dopri5_path(f, std::move(x0), t0, t1, cfg, interior_times);
}

double order_check(const DerivFn& f, const Vec& x0, double t0, double t1, int n) {
  SolverConfig cfg;
  cfg.method = SolverConfig::Method::rk4;
  auto run = [&](int steps) {
    return rk4_integrate([&](const Vec& x, double t) { return f(x, t); }, Vec(x0), t0, t1, steps);
  };
  Vec ref = run(n * 64);
  double err_n = (run(n) - ref).norm();
  double err_2n = (run(2 * n) - ref).norm();
  if (err_n < 1e-14 || err_2n < 1e-14) return std::numeric_limits<double>::infinity();
  return std::log2(err_n / err_2n);
}

}  // namespace higo
