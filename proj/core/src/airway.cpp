#include "lungsim/airway.hpp"

#include <array>
#include <cmath>
#include <numbers>
#include <stdexcept>

#include "lungsim/errors.hpp"

namespace lungsim::airway {

namespace {
constexpr double pi = std::numbers::pi;
constexpr std::array<double, 8> kDelta{0.162, 0.239, 0.244, 0.295, 0.175, 0.303, 0.356, 0.566};
constexpr double kDeltaDeep = 0.327;
}  // namespace

double reynolds(double q_out, double area, double rho, double mu) {
  return 2.0 * rho * std::abs(q_out) / (mu * std::sqrt(pi * area));
}

double delta_prefactor(int generation) {
  if (generation < 0) throw ConfigError("airway generation must be >= 0");
  return generation < static_cast<int>(kDelta.size())
             ? kDelta[static_cast<std::size_t>(generation)]
             : kDeltaDeep;
}

double resistance_mu(double length, double area, int generation, double q_out,
                     const AirPhysics& phys) {
  double delta = delta_prefactor(generation);
  double base = 8.0 * pi * phys.mu * length / (area * area);
  double re = reynolds(q_out, area, phys.rho, phys.mu);
  double re_crit = length / (2.0 * delta * delta) * std::sqrt(pi / area);
  if (re >= re_crit)
    base *= delta * std::sqrt(2.0 * re / length * std::sqrt(area / pi));
  return base;
}

double wall_eta(double wall_modulus, double wall_thickness, double nu, double area0) {
  return wall_modulus * wall_thickness * std::sqrt(pi) / ((1.0 - nu * nu) * area0);
}

double capacitance(double area, double length, double eta_w) {
  return 2.0 * std::sqrt(area) * length / eta_w;
}

double inertance(double length, double area0, double rho) { return rho * length / area0; }

double resistance_visc(double eta_w, double area0, double length, const AirPhysics& phys) {
  return 4.0 * pi * eta_w * phys.t_w * std::tan(phys.phi_w) / (std::sqrt(area0) * length);
}

double resistance_conv(double area, double q_in, double q_out, const AirPhysics& phys) {
  return 2.0 * phys.alpha * phys.rho * (q_out - q_in) / (area * area);
}

AirwayCoeffs compute_coeffs(const AirwayGeom& geom, double area, double q_in, double q_out,
                            const AirPhysics& phys) {
  double area0 = pi * geom.radius * geom.radius;
  double eta = wall_eta(geom.wall_modulus, geom.wall_thickness, phys.nu, area0);
  AirwayCoeffs c;
  c.area = area;
  c.area0 = area0;
  c.r_mu = resistance_mu(geom.length, area, geom.generation, q_out, phys);
  c.r_visc = resistance_visc(eta, area0, geom.length, phys);
  c.r_conv = resistance_conv(area, q_in, q_out, phys);
  c.cap = capacitance(area, geom.length, eta);
  c.inert = inertance(geom.length, area0, phys.rho);
  return c;
}

ElementResiduals element_residuals(const AirwayDynState& s, const AirwayCoeffs& c,
                                   const TimeDerivs& d) {
  ElementResiduals r;
  r.mass = c.cap * d.d_wall_pressure + (s.q_out - s.q_in) + c.cap * c.r_visc * d.d_flow_diff;
  r.momentum = 0.5 * c.inert * d.d_flow_sum +
               0.5 * (c.r_mu + c.r_conv) * (s.q_in + s.q_out) + s.p_out - s.p_in;
  return r;
}

}  // namespace lungsim::airway
