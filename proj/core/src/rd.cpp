#include "lungsim/rd.hpp"

#include <algorithm>
#include <cmath>

#include "lungsim/errors.hpp"
#include "lungsim/rng.hpp"

namespace lungsim::rd {

double opening_pressure(double gamma_si, double radius) {
  if (!(radius > 0)) throw ConfigError("opening_pressure: radius must be positive");
  if (!(gamma_si > 0)) throw ConfigError("opening_pressure: surface tension must be positive");
  return 8.3 * gamma_si / radius;
}

std::pair<double, double> sample_velocity_constants(double s_open_scale_si,
                                                    double s_close_scale_si, double u) {
  if (!(s_open_scale_si > 0 && s_close_scale_si > 0))
    throw ConfigError("velocity-constant scales must be positive");
  if (std::abs(s_open_scale_si - 10.0 * s_close_scale_si) > 1e-12 * s_open_scale_si)
    throw ConfigError("velocity-constant scales must satisfy s_open = 10 s_close");
  if (!(u > 0 && u <= 1)) throw ConfigError("velocity-constant draw must lie in (0, 1]");
  double s_open = s_open_scale_si / u;
  return {s_open, s_open / 10.0};
}

std::pair<double, double> sample_velocity_constants(const RdConfig& cfg, std::uint64_t airway_id) {
  rng::Stream s(cfg.seed, airway_id, /*tag=*/3);
  return sample_velocity_constants(cfg.s_open_scale_si(), cfg.s_close_scale_si(),
                                   s.uniform01_open_low());
}

RdState step_trajectory(RdState state, double p_in, double dt) {
  double rate = 0;
  if (p_in > state.p_open)
    rate = state.s_open * (p_in - state.p_open);
  else if (p_in < state.p_close)
    rate = state.s_close * (p_in - state.p_close);
  state.x = std::clamp(state.x + dt * rate, 0.0, 1.0);
  if (!state.open && state.x >= 1.0) state.open = true;
  else if (state.open && state.x <= 0.0) state.open = false;
  return state;
}

airway::AirwayCoeffs apply_closure(airway::AirwayCoeffs coeffs, bool open) {
  if (!open) {
    coeffs.r_mu = kClosedResistance;
    coeffs.cap = 0.0;
  }
  return coeffs;
}

std::vector<RdState> initialize_states(const AirwayTree& tree, const RdConfig& cfg) {
  std::vector<RdState> states(static_cast<std::size_t>(tree.n_elements()));
  const double threshold = cfg.initial_closed_threshold_si();
  for (int e = 0; e < tree.n_elements(); ++e) {
    const AirwayGeom& g = tree.geom(e);
    if (!g.collapsible) continue;
    RdState s;
    s.p_open = opening_pressure(cfg.gamma_si(), g.radius);
    s.p_close = s.p_open - kClosingOffset;
    std::tie(s.s_open, s.s_close) =
        sample_velocity_constants(cfg, static_cast<std::uint64_t>(e));
    s.open = !(s.p_open > threshold);
    s.x = s.open ? 1.0 : 0.0;
    states[static_cast<std::size_t>(e)] = s;
  }
  return states;
}

std::vector<bool> trapped_units(const AirwayTree& tree, const std::vector<RdState>& states) {
  std::vector<bool> blocked(static_cast<std::size_t>(tree.n_elements()), false);
  for (int e = 0; e < tree.n_elements(); ++e) {
    bool closed = tree.geom(e).collapsible && !states[static_cast<std::size_t>(e)].open;
    int pa = tree.parent(e);
    blocked[static_cast<std::size_t>(e)] =
        closed || (pa >= 0 && blocked[static_cast<std::size_t>(pa)]);
  }
  std::vector<bool> trapped(static_cast<std::size_t>(tree.n_units()));
  for (int u = 0; u < tree.n_units(); ++u)
    trapped[static_cast<std::size_t>(u)] = blocked[static_cast<std::size_t>(tree.leaf_of_unit(u))];
  return trapped;
}

}  // namespace lungsim::rd
