#include "lungsim/scenario.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "lungsim/csv.hpp"
#include "lungsim/errors.hpp"

namespace lungsim {

int StrainSnapshot::count_above(double threshold) const {
  int c = 0;
  for (const auto& r : rows) c += r.strain > threshold ? 1 : 0;
  return c;
}

PreparedScenario prepare_scenario(const AirwayTree& tree, const ScenarioConfig& cfg,
                                  double p_ao_start) {
  std::vector<rd::RdState> states = rd::initialize_states(tree, cfg.rd);
  std::vector<bool> trapped = rd::trapped_units(tree, states);

  std::vector<double> density = cfg.unit_density;
  if (density.empty()) {
    density = synthetic_unit_densities(tree, cfg.density_fraction, cfg.density_seed,
                                       cfg.height_extent);
  } else if (static_cast<int>(density.size()) != tree.n_units()) {
    throw ConfigError("unit density table must hold one value per terminal unit");
  }

  // Lobar air/tissue totals proportional to each lobe's supplied area.
  std::array<double, kNumLobes> lobe_area{};
  double area_all = 0;
  for (int u = 0; u < tree.n_units(); ++u) {
    const AirwayGeom& leaf = tree.geom(tree.leaf_of_unit(u));
    lobe_area[static_cast<std::size_t>(leaf.lobe)] += leaf.supplied_area;
    area_all += leaf.supplied_area;
  }
  std::array<tissue::LobeVolumes, kNumLobes> lobes{};
  for (int li = 0; li < kNumLobes; ++li) {
    double share = lobe_area[static_cast<std::size_t>(li)] / area_all;
    lobes[static_cast<std::size_t>(li)].air =
        units::liter_to_m3(cfg.total_air_volume_l) * share;
    lobes[static_cast<std::size_t>(li)].tissue =
        units::liter_to_m3(cfg.total_tissue_volume_l) * share;
  }

  boundary::PleuralModel pleural;
  pleural.p_pl0 = units::mbar_to_pa(cfg.p_pl0_mbar);
  pleural.p_pl_lin = units::mbar_to_pa(cfg.p_pl_lin_mbar);
  pleural.h_balloon = cfg.h_balloon;
  pleural.grav_a = cfg.grav_a;
  pleural.grav_b = cfg.grav_b;

  // Transmural pressure of each unit under the imaging load: the chest-wall
  // recoil sits at its reference value there, plus the unit's gravitational
  // component.
  double p_ao_ct = units::mbar_to_pa(cfg.p_ao_ct_mbar);
  std::vector<double> p_tm(static_cast<std::size_t>(tree.n_units()));
  for (int u = 0; u < tree.n_units(); ++u) {
    double z = tree.geom(tree.leaf_of_unit(u)).height;
    p_tm[static_cast<std::size_t>(u)] =
        p_ao_ct - (pleural.p_pl0 + boundary::pleural_weight(z, pleural));
  }

  tissue::VolumeInit vols =
      tissue::initialize_volumes(tree, lobes, density, p_tm, trapped, cfg.tissue);

  double v_peep = 0;
  for (double v : vols.v_ct) v_peep += v;
  pleural.v_peep = v_peep;
  pleural.v_max = v_peep + units::liter_to_m3(cfg.v_max_above_peep_l);

  Network net(tree, cfg.tissue, pleural, cfg.air, cfg.solver);
  net.set_rd_states(std::move(states));
  net.set_unit_volumes(std::move(vols.v_ct), std::move(vols.v0), std::move(trapped));
  net.initialize_equilibrium(p_ao_start);
  return PreparedScenario{std::move(net), std::move(density)};
}

std::vector<BreathStats> breath_stats_from_series(const std::vector<double>& t,
                                                  const std::vector<double>& v_total,
                                                  const std::vector<double>& p_pl_mbar,
                                                  const std::vector<double>& pct_open,
                                                  double period, double t0) {
  std::vector<BreathStats> out;
  if (t.empty() || !(period > 0)) return out;
  std::size_t i = 0;
  while (i < t.size() && t[i] < t0) ++i;
  while (i < t.size()) {
    double t_end = t0 + (out.size() + 1) * period;
    BreathStats b;
    b.t_start = t0 + out.size() * period;
    b.t_end = t_end;
    double v_lo = v_total[i], v_hi = v_total[i];
    double p_lo = p_pl_mbar[i], p_hi = p_pl_mbar[i];
    double o_lo = pct_open[i], o_hi = pct_open[i];
    std::size_t last = i;
    for (; i < t.size() && t[i] <= t_end + 1e-12; ++i) {
      v_lo = std::min(v_lo, v_total[i]);
      v_hi = std::max(v_hi, v_total[i]);
      p_lo = std::min(p_lo, p_pl_mbar[i]);
      p_hi = std::max(p_hi, p_pl_mbar[i]);
      o_lo = std::min(o_lo, pct_open[i]);
      o_hi = std::max(o_hi, pct_open[i]);
      last = i;
    }
    b.tidal = v_hi - v_lo;
    b.eelv = v_total[last];
    b.p_pl_swing = p_hi - p_lo;
    b.pct_open_min = o_lo;
    b.pct_open_max = o_hi;
    if (t[last] + 1e-12 >= t_end) out.push_back(b);  // keep complete breaths only
    if (i >= t.size()) break;
  }
  return out;
}

ScenarioResult run_prepared(Network& net, const ScenarioConfig& cfg,
                            const boundary::Waveform& waveform) {
  ScenarioResult res;
  const double dt = cfg.solver.dt;
  const long warm_steps = std::lround(cfg.warmup / dt);
  const long main_steps = std::lround(cfg.duration / dt);

  for (long s = 0; s < warm_steps; ++s) {
    StepStats st = net.step(waveform);
    res.newton_iterations += st.newton_iterations;
    res.rejections += st.rejections;
    ++res.steps;
  }

  const double t_record0 = net.t();
  double v_begin = net.v_total_units() + net.wall_storage();
  double q_int_begin = net.opening_flow_integral();

  // End-expiratory unit volumes for the optional strain reference; refreshed
  // at each completed breath boundary.
  std::vector<double> eelv_units(static_cast<std::size_t>(net.tree().n_units()));
  for (int u = 0; u < net.tree().n_units(); ++u)
    eelv_units[static_cast<std::size_t>(u)] = net.unit_volume(u);
  std::optional<double> period = waveform.breath_period();
  long next_breath = 1;

  auto record = [&]() {
    res.t.push_back(net.t() - t_record0);
    res.v_total.push_back(net.v_total_units());
    res.q_ao.push_back(net.q_opening());
    res.p_ao_mbar.push_back(units::pa_to_mbar(waveform.eval(net.t())));
    // At the balloon height the gravitational component vanishes.
    res.p_pl_mbar.push_back(units::pa_to_mbar(net.pleural_at(cfg.h_balloon)));
    res.pct_open.push_back(net.pct_open());
    res.pct_open_collapsible.push_back(net.pct_open_collapsible());
  };

  auto snapshot = [&](double t_rel) {
    StrainSnapshot snap;
    snap.t = t_rel;
    const AirwayTree& tree = net.tree();
    snap.rows.reserve(static_cast<std::size_t>(tree.n_units()));
    for (int u = 0; u < tree.n_units(); ++u) {
      StrainSnapshotRow row;
      row.unit_id = u;
      row.z = tree.geom(tree.leaf_of_unit(u)).height;
      row.v = net.unit_volume(u);
      row.v0 = net.unit_v0(u);
      double ref = cfg.strain_ref == StrainRef::V0 ? row.v0
                                                   : eelv_units[static_cast<std::size_t>(u)];
      row.strain = tissue::unit_strain(row.v, ref);
      row.trapped_init = net.unit_trapped_init(u);
      row.open_path = !net.unit_trapped_now(u);
      snap.rows.push_back(row);
    }
    res.snapshots.push_back(std::move(snap));
  };

  std::vector<double> snap_times = cfg.snapshot_times;
  std::sort(snap_times.begin(), snap_times.end());
  std::size_t next_snap = 0;

  record();
  while (next_snap < snap_times.size() && snap_times[next_snap] <= 1e-12) {
    snapshot(snap_times[next_snap]);
    ++next_snap;
  }

  for (long s = 1; s <= main_steps; ++s) {
    StepStats st = net.step(waveform);
    res.newton_iterations += st.newton_iterations;
    res.rejections += st.rejections;
    ++res.steps;
    double t_rel = net.t() - t_record0;
    if (s % cfg.record_every == 0 || s == main_steps) record();
    while (next_snap < snap_times.size() && snap_times[next_snap] <= t_rel + 1e-12) {
      snapshot(snap_times[next_snap]);
      ++next_snap;
    }
    if (period && t_rel + 1e-12 >= next_breath * *period) {
      for (int u = 0; u < net.tree().n_units(); ++u)
        eelv_units[static_cast<std::size_t>(u)] = net.unit_volume(u);
      ++next_breath;
    }
  }

  if (period)
    res.breaths = breath_stats_from_series(res.t, res.v_total, res.p_pl_mbar, res.pct_open,
                                           *period);

  res.max_junction_residual = net.max_junction_residual();
  double dv_model = net.v_total_units() + net.wall_storage() - v_begin;
  double q_int = net.opening_flow_integral() - q_int_begin;
  res.volume_closure_rel_error =
      std::abs(dv_model - q_int) / std::max(std::abs(q_int), 1e-9);
  return res;
}

ScenarioResult run_scenario(const AirwayTree& tree, const ScenarioConfig& cfg,
                            const boundary::Waveform& waveform) {
  PreparedScenario prep = prepare_scenario(tree, cfg, waveform.eval(0.0));
  return run_prepared(prep.network, cfg, waveform);
}

void ScenarioResult::write_metrics_csv(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw ParseError(path + ": cannot open for writing");
  out << "t_s,v_total_m3,q_ao_m3s,p_ao_mbar,p_pl_mbar,pct_open\n";
  for (std::size_t i = 0; i < t.size(); ++i) {
    out << csv::format_double(t[i]) << ',' << csv::format_double(v_total[i]) << ','
        << csv::format_double(q_ao[i]) << ',' << csv::format_double(p_ao_mbar[i]) << ','
        << csv::format_double(p_pl_mbar[i]) << ',' << csv::format_double(pct_open[i]) << '\n';
  }
  if (!out) throw ParseError(path + ": write failed");
}

void ScenarioResult::write_snapshot_csv(const StrainSnapshot& snap, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ParseError(path + ": cannot open for writing");
  out << "unit_id,z_m,V_m3,V0_m3,strain,trapped,open_path\n";
  for (const auto& r : snap.rows) {
    out << r.unit_id << ',' << csv::format_double(r.z) << ',' << csv::format_double(r.v) << ','
        << csv::format_double(r.v0) << ',' << csv::format_double(r.strain) << ','
        << (r.trapped_init ? 1 : 0) << ',' << (r.open_path ? 1 : 0) << '\n';
  }
  if (!out) throw ParseError(path + ": write failed");
}

std::string ScenarioResult::summary() const {
  std::ostringstream os;
  os << "steps " << steps << ", newton iterations " << newton_iterations << ", rejections "
     << rejections << '\n';
  os << "max junction residual " << max_junction_residual << '\n';
  os << "volume closure error " << volume_closure_rel_error << '\n';
  if (!breaths.empty()) {
    os << "breaths (t_start tidal_ml eelv_ml dppl_mbar pct_open_min pct_open_max):\n";
    for (const auto& b : breaths) {
      os << "  " << b.t_start << "  " << 1e6 * b.tidal << "  " << 1e6 * b.eelv << "  "
         << b.p_pl_swing << "  " << b.pct_open_min << "  " << b.pct_open_max << '\n';
    }
  }
  for (const auto& s : snapshots)
    os << "snapshot t=" << s.t << ": units with strain > " << tissue::kHarmfulStrain << ": "
       << s.count_above(tissue::kHarmfulStrain) << '\n';
  return os.str();
}

}  // namespace lungsim
