#pragma once

#include "lungsim/tree.hpp"

namespace lungsim::airway {

// Shared fluid/wall constants. Air viscosity and density are standard values;
// nu, phi_w and t_w govern the wall model; alpha is the momentum-flux
// correction factor of the convective term (configurable, default 1.1).
struct AirPhysics {
  double rho = 1.18;      // kg/m3
  double mu = 1.79e-5;    // Pa s
  double nu = 0.45;       // wall Poisson ratio
  double phi_w = 0.13;    // rad, wall viscous phase shift
  double t_w = 2.0;       // s, wall time constant
  double alpha = 1.1;     // momentum-flux correction
};

// Lumped coefficients of one 0D element at its current operating point.
struct AirwayCoeffs {
  double r_mu = 0;    // Pa s/m3, viscous/turbulent resistance
  double r_visc = 0;  // Pa s/m3, wall visco-elastic resistance
  double r_conv = 0;  // Pa s/m3, signed convective term
  double cap = 0;     // m3/Pa, wall capacitance
  double inert = 0;   // Pa s2/m3, inductance
  double area = 0;    // m2, current cross-section
  double area0 = 0;   // m2, unstretched cross-section
};

struct AirwayDynState {
  double p_in = 0;   // Pa
  double p_out = 0;  // Pa
  double q_in = 0;   // m3/s
  double q_out = 0;  // m3/s
  double p_ext = 0;  // Pa, internal pressure of the nearest terminal unit
};

// Re = 2 rho |Q_out| / (mu sqrt(pi A)).
double reynolds(double q_out, double area, double rho, double mu);

// Generation-dependent turbulence prefactor; generations beyond 7 share one
// value. Negative generations are rejected.
double delta_prefactor(int generation);

// Poiseuille-like base resistance with a turbulent multiplier above the
// critical Reynolds number. The two branches agree exactly at the switch.
double resistance_mu(double length, double area, int generation, double q_out,
                     const AirPhysics& phys);

// Lumped wall stiffness eta_w = E h sqrt(pi) / ((1 - nu^2) A0).
double wall_eta(double wall_modulus, double wall_thickness, double nu, double area0);

double capacitance(double area, double length, double eta_w);
double inertance(double length, double area0, double rho);
double resistance_visc(double eta_w, double area0, double length, const AirPhysics& phys);
double resistance_conv(double area, double q_in, double q_out, const AirPhysics& phys);

AirwayCoeffs compute_coeffs(const AirwayGeom& geom, double area, double q_in, double q_out,
                            const AirPhysics& phys);

// Time-derivative estimates the caller supplies when evaluating the
// continuous-time residuals outside the integrator.
struct TimeDerivs {
  double d_wall_pressure = 0;  // d/dt ( (p_in + p_out)/2 - p_ext )
  double d_flow_diff = 0;      // d/dt ( q_out - q_in )
  double d_flow_sum = 0;       // d/dt ( q_in + q_out )
};

// (mass, momentum) residuals of the 0D element; both vanish at a converged
// solution.
struct ElementResiduals {
  double mass = 0;
  double momentum = 0;
};

ElementResiduals element_residuals(const AirwayDynState& state, const AirwayCoeffs& coeffs,
                                   const TimeDerivs& derivs);

}  // namespace lungsim::airway
