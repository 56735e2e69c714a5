#pragma once

#include <optional>
#include <string_view>

namespace dzlab {

// Longitudinal state of the ego vehicle. position_m is measured upstream of
// the stop-line: positive before the line, negative once past it.
struct VehicleState {
  double position_m = 0.0;
  double speed_mps = 0.0;
  double accel_mps2 = 0.0;
  double t_s = 0.0;

  friend bool operator==(const VehicleState&, const VehicleState&) = default;
};

// Both limits are stored as positive magnitudes.
struct KinematicLimits {
  double a_max = 3.0;
  double b_max = 3.0;
  // Exposed for configuration only; zone classification uses b_max.
  double comfort_decel = 3.0;

  void validate() const;
  friend bool operator==(const KinematicLimits&, const KinematicLimits&) = default;
};

enum class ZoneClass { BeforeZone, TypeII, PastZone, TypeI, Clear };

std::string_view to_string(ZoneClass z);

struct ZoneBounds {
  double start_m;  // far edge, t_far * v0
  double end_m;    // near edge, t_near * v0
};

inline constexpr double kZoneFarS = 5.5;
inline constexpr double kZoneNearS = 2.5;

// Time to decelerate to standstill at maximum braking: t_b = v0 / b_max.
double time_to_stop(double v0, const KinematicLimits& limits);

// Braking distance at maximum deceleration: v0^2 / (2 b_max).
double stop_distance(double v0, const KinematicLimits& limits);

// Positive root of x = v0 t + a_max t^2 / 2.
double time_to_clear(double x, double v0, const KinematicLimits& limits);

// Time to cover `distance` starting at speed v under constant acceleration
// `accel` (any sign), or nullopt if the vehicle stops first.
std::optional<double> time_to_travel(double distance, double v, double accel);

ZoneBounds dz_bounds(double v0, double t_far = kZoneFarS,
                     double t_near = kZoneNearS);

ZoneClass classify_zone(const VehicleState& state, double yellow_remaining,
                        const KinematicLimits& limits,
                        double t_far = kZoneFarS, double t_near = kZoneNearS);

// Exact constant-acceleration update over one tick. The command is clamped to
// [-b_max, a_max]; if the vehicle reaches standstill inside the tick it stays
// there for the remainder.
VehicleState step(const VehicleState& state, double accel_cmd, double dt,
                  const KinematicLimits& limits);

}  // namespace dzlab
