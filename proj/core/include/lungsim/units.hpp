#pragma once

// All internal quantities are SI (Pa, m, m3, m3/s, s, kg). Clinical units
// (mbar, cmH2O, dyn/cm, liters) appear only at I/O boundaries.

namespace lungsim::units {

inline constexpr double pa_per_mbar = 100.0;
inline constexpr double pa_per_cmh2o = 98.0665;
inline constexpr double npm_per_dyncm = 1e-3;  // surface tension, N/m per dyn/cm
inline constexpr double m3_per_liter = 1e-3;

constexpr double mbar_to_pa(double p) { return p * pa_per_mbar; }
constexpr double pa_to_mbar(double p) { return p / pa_per_mbar; }
constexpr double cmh2o_to_pa(double p) { return p * pa_per_cmh2o; }
constexpr double pa_to_cmh2o(double p) { return p / pa_per_cmh2o; }
constexpr double dyncm_to_npm(double g) { return g * npm_per_dyncm; }
constexpr double liter_to_m3(double v) { return v * m3_per_liter; }
constexpr double m3_to_liter(double v) { return v / m3_per_liter; }

}  // namespace lungsim::units
