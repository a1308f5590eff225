#pragma once

#include <array>
#include <optional>
#include <vector>

#include "lungsim/tree.hpp"
#include "lungsim/units.hpp"

namespace lungsim::tissue {

// Volumetric Ogden spring in parallel with one Maxwell branch (spring of
// modulus visc_modulus in series with a dashpot of time constant visc_tau),
// acting on the volumetric strain of a terminal unit. visc_modulus = 0
// removes the branch exactly.
struct TissueParams {
  double kappa = units::mbar_to_pa(3.7);  // Pa
  double beta = -2.4;
  double visc_modulus = 0.0;  // Pa
  double visc_tau = 4.0;      // s

  void validate() const;  // throws ConfigError
};

// Transmural pressure P_alv - P_pl of the elastic branch at volume v with
// stress-free reference v0.
double elastic_pressure(double v, double v0, const TissueParams& p);

// Analytic dP/dV of the elastic branch.
double elastic_pressure_dv(double v, double v0, const TissueParams& p);

// Inverts the elastic law for the volume at a given transmural pressure.
// Empty when no solution exists (possible for beta in (-1, 0) at high
// pressure) or the iteration fails.
std::optional<double> solve_volume(double v0, double p_tm, const TissueParams& p);

// Inverts for the stress-free reference volume given (v, p_tm).
std::optional<double> solve_reference_volume(double v, double p_tm, const TissueParams& p);

// Volumetric strain measure used by the Maxwell branch.
inline double volumetric_strain(double v, double v0) { return v / v0 - 1.0; }

// One theta-discretized step of the Maxwell branch: over a step the branch
// pressure is affine in the end-of-step strain, P_m = gain * eps' + hist,
// and the dashpot state updates to eps_d' = a + b * eps'.
struct MaxwellStep {
  double gain = 0;
  double hist = 0;
  double a = 0;
  double b = 0;
};
MaxwellStep maxwell_step(const TissueParams& p, double dt, double theta, double eps_prev,
                         double eps_d_prev);

// Instantaneous unit pressure (elastic + Maxwell branch at the current
// dashpot state).
double unit_pressure(double v, double v0, double eps_d, const TissueParams& p);

// Residual of the unit's pressure balance: zero when the node pressure,
// pleural pressure and material response agree.
double unit_residual(double p_alv, double p_pl, double v, double v0, double eps_d,
                     const TissueParams& p);

double unit_strain(double v, double v_ref);

// Threshold above which a regional strain is conventionally flagged as
// potentially harmful.
inline constexpr double kHarmfulStrain = 1.5;

struct LobeVolumes {
  double air = 0;     // m3
  double tissue = 0;  // m3
};

// Splits a lobe's total volume into air and tissue from its mean CT-style
// density (-1000 pure air, 0 pure tissue).
LobeVolumes lobe_volumes_from_density(double total_volume, double mean_density);

// Air fraction of a unit's volume mix at a given density.
double air_fraction(double density);

struct VolumeInit {
  std::vector<double> v_ct;      // unit volume under the imaging load
  std::vector<double> v_tissue;  // tissue part of v_ct
  std::vector<double> v0;        // stress-free reference volume
};

// Distributes lobar tissue volume across units in proportion to supplied
// area, assigns air so per-unit densities are recreated (rescaled to match
// the lobar air total exactly), and solves the elastic law for each open
// unit's reference volume under the imaging-load transmural pressure.
// Trapped units are taken as stress-free at their imaged volume.
VolumeInit initialize_volumes(const AirwayTree& tree,
                              const std::array<LobeVolumes, kNumLobes>& lobes,
                              std::span<const double> unit_density,
                              std::span<const double> unit_p_tm_ct,
                              const std::vector<bool>& trapped, const TissueParams& params);

}  // namespace lungsim::tissue
