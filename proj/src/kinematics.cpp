#include "dzlab/kinematics.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "dzlab/errors.hpp"

namespace dzlab {

void KinematicLimits::validate() const {
  if (!(a_max > 0.0) || !(b_max > 0.0)) {
    throw ConfigError("kinematic limits must be positive magnitudes");
  }
  if (!(comfort_decel > 0.0) || comfort_decel > b_max) {
    throw ConfigError("comfort_decel must lie in (0, b_max]");
  }
}

std::string_view to_string(ZoneClass z) {
  switch (z) {
    case ZoneClass::BeforeZone: return "before_zone";
    case ZoneClass::TypeII: return "type_ii";
    case ZoneClass::PastZone: return "past_zone";
    case ZoneClass::TypeI: return "type_i";
    case ZoneClass::Clear: return "clear";
  }
  return "unknown";
}

double time_to_stop(double v0, const KinematicLimits& limits) {
  if (v0 < 0.0) throw DomainError("time_to_stop: negative speed");
  return v0 / limits.b_max;
}

double stop_distance(double v0, const KinematicLimits& limits) {
  if (v0 < 0.0) throw DomainError("stop_distance: negative speed");
  return v0 * v0 / (2.0 * limits.b_max);
}

double time_to_clear(double x, double v0, const KinematicLimits& limits) {
  if (x < 0.0) throw DomainError("time_to_clear: negative distance");
  if (v0 < 0.0) throw DomainError("time_to_clear: negative speed");
  if (x == 0.0) return 0.0;
  const double a = limits.a_max;
  if (a <= 0.0) {
    if (v0 == 0.0) throw DomainError("time_to_clear: stop-line unreachable");
    return x / v0;
  }
  // 2x / (v0 + sqrt(v0^2 + 2ax)) is the same root without cancellation.
  return 2.0 * x / (v0 + std::sqrt(v0 * v0 + 2.0 * a * x));
}

std::optional<double> time_to_travel(double distance, double v, double accel) {
  if (distance <= 0.0) return 0.0;
  const double disc = v * v + 2.0 * accel * distance;
  if (accel == 0.0) {
    if (v <= 0.0) return std::nullopt;
    return distance / v;
  }
  if (disc < 0.0) return std::nullopt;
  const double denom = v + std::sqrt(disc);
  if (denom <= 0.0) return std::nullopt;
  return 2.0 * distance / denom;
}

ZoneBounds dz_bounds(double v0, double t_far, double t_near) {
  if (!(t_far > t_near) || !(t_near > 0.0)) {
    throw ConfigError("dz_bounds: require t_far > t_near > 0");
  }
  if (v0 < 0.0) throw DomainError("dz_bounds: negative speed");
  return {t_far * v0, t_near * v0};
}

ZoneClass classify_zone(const VehicleState& state, double yellow_remaining,
                        const KinematicLimits& limits, double t_far,
                        double t_near) {
  if (yellow_remaining < 0.0) {
    throw DomainError("classify_zone: negative yellow_remaining");
  }
  const double x = state.position_m;
  const double v = state.speed_mps;
  if (x <= 0.0) return ZoneClass::Clear;
  if (stop_distance(v, limits) > x &&
      time_to_clear(x, v, limits) > yellow_remaining) {
    return ZoneClass::TypeI;
  }
  const ZoneBounds zone = dz_bounds(v, t_far, t_near);
  if (x > zone.start_m) return ZoneClass::BeforeZone;
  if (x >= zone.end_m) return ZoneClass::TypeII;
  return ZoneClass::PastZone;
}

VehicleState step(const VehicleState& state, double accel_cmd, double dt,
                  const KinematicLimits& limits) {
  if (!(dt > 0.0)) throw DomainError("step: dt must be positive");
  const double a = std::clamp(accel_cmd, -limits.b_max, limits.a_max);
  const double v = state.speed_mps;
  VehicleState next;
  next.t_s = state.t_s + dt;
  next.accel_mps2 = a;

  double traveled;
  if (v == 0.0 && a <= 0.0) {
    traveled = 0.0;
    next.speed_mps = 0.0;
    next.accel_mps2 = 0.0;
  } else if (a < 0.0 && v + a * dt <= 0.0) {
    // Reaches standstill at tau = v / |a| inside the tick.
    traveled = v * v / (-2.0 * a);
    next.speed_mps = 0.0;
  } else {
    traveled = v * dt + 0.5 * a * dt * dt;
    next.speed_mps = v + a * dt;
  }
  next.position_m = state.position_m - traveled;
  return next;
}

}  // namespace dzlab
