#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "lungsim/boundary.hpp"
#include "lungsim/solver.hpp"
#include "lungsim/tissue.hpp"
#include "lungsim/tree.hpp"

namespace lungsim {

enum class StrainRef { V0, EndExpiratory };

struct ScenarioConfig {
  rd::RdConfig rd;
  tissue::TissueParams tissue;
  airway::AirPhysics air;
  SolverConfig solver;

  // Pleural model; the volume anchors are filled from the initialization.
  double p_pl0_mbar = 10.15;
  double p_pl_lin_mbar = 9.35;
  double h_balloon = 0.05;          // m
  double grav_a = 0.541;            // cmH2O/cm
  double grav_b = 0.015;            // cmH2O/cm2
  double v_max_above_peep_l = 1.5;  // liters above the imaged volume

  // Volume initialization. Densities come from a per-unit table when given,
  // otherwise from the synthetic ventral-dorsal gradient.
  double total_air_volume_l = 3.21;
  double total_tissue_volume_l = 0.9;
  double p_ao_ct_mbar = 10.0;  // airway pressure under the imaging load
  std::vector<double> unit_density;
  double density_fraction = 0.3;  // synthetic gradient steering
  std::uint64_t density_seed = 0;
  double height_extent = 0.25;  // m

  double duration = 60.0;  // s of recorded simulation
  double warmup = 0.0;     // s simulated before recording starts
  int record_every = 1;    // steps per metrics sample
  std::vector<double> snapshot_times;  // s, relative to recording start
  StrainRef strain_ref = StrainRef::V0;
};

struct StrainSnapshotRow {
  int unit_id;
  double z;
  double v;
  double v0;
  double strain;
  bool trapped_init;
  bool open_path;
};

struct StrainSnapshot {
  double t = 0;
  std::vector<StrainSnapshotRow> rows;
  int count_above(double threshold) const;
};

struct BreathStats {
  double t_start = 0, t_end = 0;
  double tidal = 0;        // m3
  double eelv = 0;         // m3, volume at end of expiration
  double p_pl_swing = 0;   // mbar
  double pct_open_min = 0, pct_open_max = 0;
};

struct ScenarioResult {
  std::vector<double> t, v_total, q_ao, p_ao_mbar, p_pl_mbar, pct_open, pct_open_collapsible;
  std::vector<BreathStats> breaths;
  std::vector<StrainSnapshot> snapshots;

  double max_junction_residual = 0;
  double volume_closure_rel_error = 0;  // |dV_model - integral(q_ao)| / |integral|
  long steps = 0;
  long newton_iterations = 0;
  long rejections = 0;

  void write_metrics_csv(const std::string& path) const;
  static void write_snapshot_csv(const StrainSnapshot& snap, const std::string& path);
  std::string summary() const;
};

// Recomputes the per-breath statistics from a recorded metric series, given
// the breath period. Used both internally and to verify that summaries can
// be reproduced from the emitted CSV alone.
std::vector<BreathStats> breath_stats_from_series(const std::vector<double>& t,
                                                  const std::vector<double>& v_total,
                                                  const std::vector<double>& p_pl_mbar,
                                                  const std::vector<double>& pct_open,
                                                  double period, double t0 = 0.0);

// Full pipeline: recruitment states, trapped flags, volume initialization,
// pleural anchoring, equilibrium start, then the recorded time loop.
ScenarioResult run_scenario(const AirwayTree& tree, const ScenarioConfig& cfg,
                            const boundary::Waveform& waveform);

// The initialized network without running it, for tests that drive stepping
// manually.
struct PreparedScenario {
  Network network;
  std::vector<double> unit_density;
};
PreparedScenario prepare_scenario(const AirwayTree& tree, const ScenarioConfig& cfg,
                                  double p_ao_start);

ScenarioResult run_prepared(Network& net, const ScenarioConfig& cfg,
                            const boundary::Waveform& waveform);

}  // namespace lungsim
