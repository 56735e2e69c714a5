#pragma once

// Reference computations that share no code with the library: an RK4
// integrator with Hermite event location, finite differences, and small
// fixture builders.

#include <cmath>
#include <functional>
#include <vector>

#include "dzlab/dataset.hpp"
#include "dzlab/episode.hpp"
#include "dzlab/rng.hpp"
#include "dzlab/scenario.hpp"

namespace oracle {

struct Motion {
  double s = 0.0;  // distance travelled
  double v = 0.0;
};

// RK4 on ds/dt = v, dv/dt = a(t, s, v) with fixed dt.
inline Motion rk4(const Motion& m, double t, double dt,
                  const std::function<double(double, double, double)>& accel) {
  auto f = [&](double tt, const Motion& y) { return Motion{y.v, accel(tt, y.s, y.v)}; };
  const Motion k1 = f(t, m);
  const Motion k2 = f(t + dt / 2, {m.s + dt / 2 * k1.s, m.v + dt / 2 * k1.v});
  const Motion k3 = f(t + dt / 2, {m.s + dt / 2 * k2.s, m.v + dt / 2 * k2.v});
  const Motion k4 = f(t + dt, {m.s + dt * k3.s, m.v + dt * k3.v});
  return {m.s + dt / 6 * (k1.s + 2 * k2.s + 2 * k3.s + k4.s),
          m.v + dt / 6 * (k1.v + 2 * k2.v + 2 * k3.v + k4.v)};
}

// Cubic Hermite interpolant of s over one step, from end-point values and slopes.
inline double hermite(const Motion& a, const Motion& b, double h, double u) {
  const double u2 = u * u, u3 = u2 * u;
  return (2 * u3 - 3 * u2 + 1) * a.s + (u3 - 2 * u2 + u) * h * a.v +
         (-2 * u3 + 3 * u2) * b.s + (u3 - u2) * h * b.v;
}

// Integrates constant acceleration `a` from speed v0 at step dt until
// `event` changes sign, then locates the event inside the last step by
// bisection on the Hermite interpolant (speed is interpolated linearly).
inline double integrate_until(double v0, double a, double dt,
                              const std::function<double(double s, double v)>& event,
                              double t_max = 200.0) {
  const auto accel = [a](double, double, double) { return a; };
  Motion m{0.0, v0};
  double t = 0.0;
  if (event(m.s, m.v) <= 0.0) return 0.0;
  while (t < t_max) {
    const Motion n = rk4(m, t, dt, accel);
    if (event(n.s, n.v) <= 0.0) {
      double lo = 0.0, hi = 1.0;
      for (int i = 0; i < 200 && hi - lo > 1e-15; ++i) {
        const double mid = 0.5 * (lo + hi);
        const double s = hermite(m, n, dt, mid);
        const double v = m.v + (n.v - m.v) * mid;
        (event(s, v) <= 0.0 ? hi : lo) = mid;
      }
      return t + dt * 0.5 * (lo + hi);
    }
    m = n;
    t += dt;
  }
  return NAN;
}

inline double numeric_time_to_stop(double v0, double b, double dt = 1e-4) {
  return integrate_until(v0, -b, dt, [](double, double v) { return v; });
}

inline double numeric_stop_distance(double v0, double b, double dt = 1e-4) {
  const double t = numeric_time_to_stop(v0, b, dt);
  // Integrate again exactly to t with RK4 steps and one partial step.
  const auto accel = [b](double, double, double) { return -b; };
  Motion m{0.0, v0};
  double tt = 0.0;
  while (tt + dt <= t) {
    m = rk4(m, tt, dt, accel);
    tt += dt;
  }
  return rk4(m, tt, t - tt, accel).s;
}

inline double numeric_time_to_clear(double x, double v0, double a, double dt = 1e-4) {
  return integrate_until(v0, a, dt, [x](double s, double) { return x - s; });
}

// Central difference of f around x[i].
inline double central_difference(const std::function<double()>& f, double& xi, double h) {
  const double keep = xi;
  xi = keep + h;
  const double up = f();
  xi = keep - h;
  const double down = f();
  xi = keep;
  return (up - down) / (2 * h);
}

inline double rel_err(double analytic, double numeric, double floor = 1e-7) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

// Hand-built episode: constant-speed trajectory sampled at dt, with the given outcome fields.
inline dzlab::Episode constant_speed_episode(const std::string& driver, double x0, double v,
                                             double green_s, std::size_t ticks,
                                             std::uint64_t seed = 0) {
  dzlab::Episode e;
  e.driver_id = driver;
  e.scenario.seed = seed;
  e.scenario.initial = {x0, v, 0.0, 0.0};
  e.scenario.timing = {green_s, 3.5, 0.0};
  e.scenario.dt_s = 0.02;
  for (std::size_t i = 0; i <= ticks; ++i) {
    const double t = static_cast<double>(i) * 0.02;
    e.samples.push_back({t, x0 - v * t, v, 0.0, dzlab::phase_at(e.scenario.timing, t)});
  }
  return e;
}

inline dzlab::Sample random_sample(dzlab::Rng& rng, std::size_t window) {
  dzlab::Sample s;
  s.driver_id = "d" + std::to_string(rng.below(4));
  s.episode_seed = rng.next_u64();
  s.label = static_cast<int>(rng.below(2));
  for (auto& p : s.personal) p = rng.uniform(-50.0, 50.0);
  for (std::size_t i = 0; i < window; ++i) {
    s.common_seq.push_back({rng.uniform(0.0, 30.0), rng.uniform(-5.0, 150.0), 0.02 * static_cast<double>(i)});
  }
  return s;
}

// Identity scaler metadata for hand-made samples.
inline dzlab::DatasetMeta identity_meta(std::size_t window) {
  dzlab::DatasetMeta m;
  m.window = window;
  m.common = {std::vector<double>(dzlab::kCommonFeatures, 0.0), std::vector<double>(dzlab::kCommonFeatures, 1.0)};
  m.personal = {std::vector<double>(dzlab::kPersonalFeatures, 0.0), std::vector<double>(dzlab::kPersonalFeatures, 1.0)};
  return m;
}

}  // namespace oracle

namespace oracle {

// Samples whose label follows the kinematic rule "go iff the remaining
// yellow exceeds the time to clear at a_max", observed at yellow onset.
inline std::vector<dzlab::Sample> separable_samples(std::uint64_t seed, std::size_t n,
                                                    double yellow_s = 3.5) {
  dzlab::Rng r(seed);
  const dzlab::KinematicLimits lim;
  std::vector<dzlab::Sample> out;
  for (std::size_t i = 0; i < n; ++i) {
    dzlab::Sample s;
    s.driver_id = "synthetic";
    s.episode_seed = i;
    const double v = r.uniform(40.0 / 3.6, 100.0 / 3.6);
    const double x = r.uniform(10.0, 150.0);
    s.label = yellow_s > dzlab::time_to_clear(x, v, lim) ? 1 : 0;
    s.common_seq.push_back({v, x, 0.0});
    out.push_back(s);
  }
  return out;
}

}  // namespace oracle
