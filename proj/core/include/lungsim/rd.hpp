#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "lungsim/airway.hpp"
#include "lungsim/tree.hpp"
#include "lungsim/units.hpp"

namespace lungsim::rd {

// A closed collapsible airway eliminates airflow through a very large
// resistance rather than a structural change.
inline constexpr double kClosedResistance = 1e16;  // Pa s/m3 (= kg/(s m4))

// Closing threshold sits a fixed pressure offset below the opening threshold.
inline constexpr double kClosingOffset = 4.0 * units::pa_per_cmh2o;  // Pa

// Recruitment state of one collapsible airway. The trajectory variable x
// lives in [0, 1]; hitting 1 while closed opens the airway, hitting 0 while
// open closes it. Velocity constants are per-airway samples with a fixed
// 10:1 opening/closing ratio.
struct RdState {
  double x = 1.0;
  bool open = true;
  double p_open = 0;   // Pa, critical opening pressure
  double p_close = 0;  // Pa, critical closing pressure
  double s_open = 0;   // 1/(Pa s)
  double s_close = 0;  // 1/(Pa s)
};

struct RdConfig {
  double gamma = 100.0;  // dyn/cm, lining-fluid surface tension
  // Distribution minima of the velocity constants, in the clinical unit
  // they are usually quoted in.
  double s_open_scale = 0.04;    // 1/(cmH2O s)
  double s_close_scale = 0.004;  // 1/(cmH2O s)
  std::uint64_t seed = 0;
  double initial_closed_threshold = 24.0;  // mbar: collapsible airways with a
                                           // higher opening pressure start closed

  double gamma_si() const { return units::dyncm_to_npm(gamma); }
  double s_open_scale_si() const { return s_open_scale / units::pa_per_cmh2o; }
  double s_close_scale_si() const { return s_close_scale / units::pa_per_cmh2o; }
  double initial_closed_threshold_si() const {
    return units::mbar_to_pa(initial_closed_threshold);
  }
};

// Critical opening pressure from the lining-fluid surface tension and the
// airway radius: P_o = 8.3 gamma / r (SI in, Pa out).
double opening_pressure(double gamma_si, double radius);

// Draws (s_open, s_close) from the quasi-hyperbolic distribution
// scale / unif(0,1], coupled so s_open = 10 s_close. Requires the scales to
// respect that ratio.
std::pair<double, double> sample_velocity_constants(double s_open_scale_si,
                                                    double s_close_scale_si, double u);
std::pair<double, double> sample_velocity_constants(const RdConfig& cfg, std::uint64_t airway_id);

// Advances the virtual trajectory by one explicit step. State switches take
// effect from the caller's next solver step.
RdState step_trajectory(RdState state, double p_in, double dt);

// Closed airways get the blocking resistance and lose wall storage; open
// airways pass through unchanged.
airway::AirwayCoeffs apply_closure(airway::AirwayCoeffs coeffs, bool open);

// Per-element states for a marked tree. Non-collapsible airways keep the
// default permanently-open state and are never consulted.
std::vector<RdState> initialize_states(const AirwayTree& tree, const RdConfig& cfg);

// True for every unit whose path to the root crosses a closed airway.
std::vector<bool> trapped_units(const AirwayTree& tree, const std::vector<RdState>& states);

}  // namespace lungsim::rd
