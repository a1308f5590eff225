#pragma once

#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "lungsim/units.hpp"

namespace lungsim::boundary {

// Pleural boundary condition: chest-wall recoil linear in total terminal-unit
// volume, plus a gravitational component quadratic in the ventral-to-dorsal
// height. The gravitational part vanishes at the esophageal-balloon height,
// the clinical reference point.
struct PleuralModel {
  double p_pl0 = units::mbar_to_pa(10.15);    // Pa, recoil at the reference volume
  double p_pl_lin = units::mbar_to_pa(9.35);  // Pa, recoil gain over the maneuver range
  double v_peep = 0;                          // m3, lung volume at the imaging load
  double v_max = 0;                           // m3, end-inspiration of the calibration maneuver
  double h_balloon = 0.05;                    // m, balloon height
  // Height coefficients are defined in cm / cmH2O, the form they are
  // reported in; conversion happens inside the evaluation.
  double grav_a = 0.541;  // cmH2O per cm
  double grav_b = 0.015;  // cmH2O per cm^2

  void validate() const;
};

// Gravitational component at height z (Pa).
double pleural_weight(double z, const PleuralModel& m);

// Full pleural pressure at total unit volume v_total and height z (Pa).
double pleural_pressure(double v_total, double z, const PleuralModel& m);

// Airway-opening pressure driver. Built-in generators cover pressure-held
// ventilation cycles, one-way and triangular quasi-static ramps, a sustained
// inflation followed by ventilation at elevated PEEP, and sampled CSV
// waveforms with linear interpolation. Evaluation outside the waveform's
// domain throws.
class Waveform {
 public:
  static Waveform constant(double p_pa);
  // Trapezoid cycles: rise from PEEP to PEEP + drive over ramp_s, hold for
  // the rest of inspiration, fall back over ramp_s, hold PEEP.
  static Waveform cycles(double peep_pa, double drive_pa, double rate_per_min, double ie_ratio,
                         double ramp_s = 0.15);
  // Linear p0 -> p1 over [0, duration], holding p1 afterwards.
  static Waveform ramp(double p0_pa, double p1_pa, double duration_s);
  // p0 -> p1 -> p0 over [0, duration], holding p0 afterwards.
  static Waveform triangle(double p0_pa, double p1_pa, double duration_s);
  // Hold p_hold for t_hold, then ventilate at peep_after.
  static Waveform sustained_inflation(double p_hold_pa, double t_hold_s, double peep_after_pa,
                                      double drive_after_pa, double rate_per_min, double ie_ratio,
                                      double ramp_s = 0.15);
  // Sequential composition; each segment's clock restarts at zero.
  static Waveform segments(std::vector<std::pair<double, Waveform>> parts);
  // Sampled waveform `t_s,p_ao_mbar`, linear interpolation, domain
  // [t_first, t_last].
  static Waveform from_csv(const std::string& path);
  static Waveform from_samples(std::vector<double> t_s, std::vector<double> p_pa);

  double eval(double t) const;  // Pa
  double t_end() const;         // inf for unbounded generators
  std::optional<double> breath_period() const { return period_; }

 private:
  Waveform() = default;
  std::function<double(double)> fn_;
  double t_begin_ = 0;
  double t_end_ = 0;
  std::optional<double> period_;
};

}  // namespace lungsim::boundary
