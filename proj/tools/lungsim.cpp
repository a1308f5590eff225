// Command-line front end: tree generation, PV calibration, scenario
// simulation and surface-tension sweeps. Configuration precedence is
// CLI flag > config file > built-in default; the resolved configuration is
// echoed into the output directory next to the results.

#include <CLI11.hpp>
#include <atomic>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <thread>

#include "lungsim/calibrate.hpp"
#include "lungsim/config.hpp"
#include "lungsim/csv.hpp"
#include "lungsim/errors.hpp"
#include "lungsim/rng.hpp"
#include "lungsim/scenario.hpp"
#include "lungsim/tree.hpp"
#include "lungsim/units.hpp"

namespace fs = std::filesystem;
using namespace lungsim;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitIo = 3;
constexpr int kExitSolver = 4;

Config default_config() {
  Config c = Config::from_string(R"(
tree.length_ratio = 0.83
tree.diameter_ratio_major = 0.88
tree.diameter_ratio_minor = 0.70
tree.root_length_m = 0.1
tree.root_radius_m = 0.009
tree.min_length_m = 1.2e-3
tree.min_diameter_m = 0.4e-3
tree.max_generation = 17
tree.seed = 1
tree.collapsible_fraction = 0.3
tree.height_extent_m = 0.25
tree.wall_modulus_pa = 6e4
tree.wall_thickness_fraction = 0.1

rd.gamma_dyn_cm = 100
rd.seed = 1
rd.s_open_per_cmh2o_s = 0.04
rd.s_close_per_cmh2o_s = 0.004
rd.initial_closed_threshold_mbar = 24

tissue.kappa_mbar = 3.7
tissue.beta = -2.4
tissue.visc_modulus_mbar = 0.4
tissue.visc_tau_s = 4.0

pleural.p_pl0_mbar = 10.15
pleural.p_pl_lin_mbar = 9.35
pleural.h_balloon_m = 0.05
pleural.grav_a_cmh2o_per_cm = 0.541
pleural.grav_b_cmh2o_per_cm2 = 0.015
pleural.v_max_above_peep_l = 1.5

init.air_volume_l = 3.21
init.tissue_volume_l = 0.9
init.p_ao_ct_mbar = 10
init.density_csv =

solver.dt_s = 1e-3
solver.newton_tol = 1e-8
solver.newton_max_iter = 30
solver.theta = 1.0

waveform.kind = cycles
waveform.peep_mbar = 10
waveform.drive_mbar = 22
waveform.rate_per_min = 15
waveform.ie_ratio = 0.5
waveform.ramp_s = 0.15
waveform.p0_mbar = 0
waveform.p1_mbar = 40
waveform.rise_s = 60
waveform.hold_mbar = 40
waveform.hold_s = 32
waveform.peep_after_mbar = 19
waveform.csv =

run.duration_s = 60
run.warmup_s = 0
run.record_every = 10
run.snapshot_times_s =
run.strain_ref = v0
)");
  return c;
}

TreeConfig tree_config_from(const Config& c) {
  TreeConfig t;
  t.length_ratio = c.get_double("tree.length_ratio", t.length_ratio);
  t.diameter_ratio_major = c.get_double("tree.diameter_ratio_major", t.diameter_ratio_major);
  t.diameter_ratio_minor = c.get_double("tree.diameter_ratio_minor", t.diameter_ratio_minor);
  t.root_length = c.get_double("tree.root_length_m", t.root_length);
  t.root_radius = c.get_double("tree.root_radius_m", t.root_radius);
  t.min_length = c.get_double("tree.min_length_m", t.min_length);
  t.min_diameter = c.get_double("tree.min_diameter_m", t.min_diameter);
  t.max_generation = static_cast<int>(c.get_long("tree.max_generation", t.max_generation));
  t.asymmetry_seed = static_cast<std::uint64_t>(c.get_long("tree.seed", 1));
  t.collapsible_fraction = c.get_double("tree.collapsible_fraction", t.collapsible_fraction);
  t.height_extent = c.get_double("tree.height_extent_m", t.height_extent);
  t.wall_modulus = c.get_double("tree.wall_modulus_pa", t.wall_modulus);
  t.wall_thickness_fraction =
      c.get_double("tree.wall_thickness_fraction", t.wall_thickness_fraction);
  t.wall_modulus_by_generation = c.get_double_list("tree.wall_modulus_by_generation");
  return t;
}

ScenarioConfig scenario_config_from(const Config& c) {
  ScenarioConfig s;
  s.rd.gamma = c.get_double("rd.gamma_dyn_cm", s.rd.gamma);
  s.rd.seed = static_cast<std::uint64_t>(c.get_long("rd.seed", 1));
  s.rd.s_open_scale = c.get_double("rd.s_open_per_cmh2o_s", s.rd.s_open_scale);
  s.rd.s_close_scale = c.get_double("rd.s_close_per_cmh2o_s", s.rd.s_close_scale);
  s.rd.initial_closed_threshold =
      c.get_double("rd.initial_closed_threshold_mbar", s.rd.initial_closed_threshold);

  s.tissue.kappa = units::mbar_to_pa(c.get_double("tissue.kappa_mbar", 3.7));
  s.tissue.beta = c.get_double("tissue.beta", -2.4);
  s.tissue.visc_modulus = units::mbar_to_pa(c.get_double("tissue.visc_modulus_mbar", 0.4));
  s.tissue.visc_tau = c.get_double("tissue.visc_tau_s", 4.0);

  s.p_pl0_mbar = c.get_double("pleural.p_pl0_mbar", s.p_pl0_mbar);
  s.p_pl_lin_mbar = c.get_double("pleural.p_pl_lin_mbar", s.p_pl_lin_mbar);
  s.h_balloon = c.get_double("pleural.h_balloon_m", s.h_balloon);
  s.grav_a = c.get_double("pleural.grav_a_cmh2o_per_cm", s.grav_a);
  s.grav_b = c.get_double("pleural.grav_b_cmh2o_per_cm2", s.grav_b);
  s.v_max_above_peep_l = c.get_double("pleural.v_max_above_peep_l", s.v_max_above_peep_l);

  s.total_air_volume_l = c.get_double("init.air_volume_l", s.total_air_volume_l);
  s.total_tissue_volume_l = c.get_double("init.tissue_volume_l", s.total_tissue_volume_l);
  s.p_ao_ct_mbar = c.get_double("init.p_ao_ct_mbar", s.p_ao_ct_mbar);
  s.density_fraction = c.get_double("tree.collapsible_fraction", s.density_fraction);
  s.density_seed = static_cast<std::uint64_t>(c.get_long("tree.seed", 1));
  s.height_extent = c.get_double("tree.height_extent_m", s.height_extent);

  s.solver.dt = c.get_double("solver.dt_s", s.solver.dt);
  s.solver.newton_tol = c.get_double("solver.newton_tol", s.solver.newton_tol);
  s.solver.newton_max_iter =
      static_cast<int>(c.get_long("solver.newton_max_iter", s.solver.newton_max_iter));
  s.solver.theta = c.get_double("solver.theta", s.solver.theta);

  s.duration = c.get_double("run.duration_s", s.duration);
  s.warmup = c.get_double("run.warmup_s", s.warmup);
  s.record_every = static_cast<int>(c.get_long("run.record_every", s.record_every));
  s.snapshot_times = c.get_double_list("run.snapshot_times_s");
  std::string ref = c.get_string("run.strain_ref", "v0");
  if (ref == "v0")
    s.strain_ref = StrainRef::V0;
  else if (ref == "eelv")
    s.strain_ref = StrainRef::EndExpiratory;
  else
    throw ConfigError("run.strain_ref must be 'v0' or 'eelv'");

  std::string density_csv = c.get_string("init.density_csv", "");
  if (!density_csv.empty()) {
    csv::Table t = csv::read_table(density_csv, {"unit_id", "density_hu"});
    std::vector<double> density;
    for (const auto& r : t.rows) {
      long id = csv::parse_long(t, r, 0, "unit_id");
      if (id != static_cast<long>(density.size()))
        throw ParseError(density_csv + ":" + std::to_string(r.line) +
                         ": unit ids must be dense and ordered");
      density.push_back(csv::parse_double(t, r, 1, "density_hu"));
    }
    s.unit_density = std::move(density);
  }
  return s;
}

boundary::Waveform waveform_from(const Config& c) {
  std::string kind = c.get_string("waveform.kind", "cycles");
  auto mb = [&](const char* key, double fb) { return units::mbar_to_pa(c.get_double(key, fb)); };
  if (kind == "constant") return boundary::Waveform::constant(mb("waveform.peep_mbar", 10));
  if (kind == "cycles")
    return boundary::Waveform::cycles(mb("waveform.peep_mbar", 10), mb("waveform.drive_mbar", 22),
                                      c.get_double("waveform.rate_per_min", 15),
                                      c.get_double("waveform.ie_ratio", 0.5),
                                      c.get_double("waveform.ramp_s", 0.15));
  if (kind == "ramp")
    return boundary::Waveform::ramp(mb("waveform.p0_mbar", 0), mb("waveform.p1_mbar", 40),
                                    c.get_double("waveform.rise_s", 60));
  if (kind == "triangle")
    return boundary::Waveform::triangle(mb("waveform.p0_mbar", 0), mb("waveform.p1_mbar", 40),
                                        c.get_double("waveform.rise_s", 60));
  if (kind == "sustained-inflation")
    return boundary::Waveform::sustained_inflation(
        mb("waveform.hold_mbar", 40), c.get_double("waveform.hold_s", 32),
        mb("waveform.peep_after_mbar", 19), mb("waveform.drive_mbar", 22),
        c.get_double("waveform.rate_per_min", 15), c.get_double("waveform.ie_ratio", 0.5),
        c.get_double("waveform.ramp_s", 0.15));
  if (kind == "csv") {
    std::string path = c.get_string("waveform.csv", "");
    if (path.empty()) throw ConfigError("waveform.kind = csv requires waveform.csv = <path>");
    return boundary::Waveform::from_csv(path);
  }
  throw ConfigError("unknown waveform kind '" + kind +
                    "' (expected constant|cycles|ramp|triangle|sustained-inflation|csv)");
}

// CLI option values land in a Config overlay only when actually passed, so
// the file/default precedence stays intact.
struct Overlay {
  Config cfg;
  CLI::App* app;

  void opt(const std::string& flag, const std::string& key, const std::string& help) {
    app->add_option_function<std::string>(
           flag, [this, key](const std::string& v) { cfg.set(key, v); }, help)
        ->expected(1);
  }
};

AirwayTree obtain_tree(const Config& c, const std::string& tree_file, bool generate) {
  if (!tree_file.empty() && !generate) return load_tree(tree_file);
  TreeConfig tc = tree_config_from(c);
  AirwayTree t = build_tree(tc);
  if (tc.collapsible_fraction > 0)
    t = mark_collapsible_synthetic(t, tc.collapsible_fraction, tc.asymmetry_seed,
                                   tc.height_extent);
  return t;
}

void write_outputs(const ScenarioResult& res, const fs::path& outdir, const Config& resolved) {
  fs::create_directories(outdir);
  res.write_metrics_csv((outdir / "metrics.csv").string());
  for (const auto& snap : res.snapshots) {
    std::ostringstream name;
    name << "snapshot_t" << snap.t << ".csv";
    ScenarioResult::write_snapshot_csv(snap, (outdir / name.str()).string());
  }
  std::ofstream summary(outdir / "summary.txt");
  summary << res.summary();
  resolved.write((outdir / "resolved_config.txt").string());
}

int cmd_generate(const Config& c, const std::string& out) {
  TreeConfig tc = tree_config_from(c);
  AirwayTree t = build_tree(tc);
  if (tc.collapsible_fraction > 0)
    t = mark_collapsible_synthetic(t, tc.collapsible_fraction, tc.asymmetry_seed,
                                   tc.height_extent);
  save_tree(t, out);
  std::printf("wrote %s: %d elements, %d terminal units, %d collapsible, max generation %d\n",
              out.c_str(), t.n_elements(), t.n_units(), t.count_collapsible(),
              t.max_generation());
  return kExitOk;
}

int cmd_calibrate(const std::string& pv_path, const std::string& out,
                  std::optional<double> cutoff_mbar, std::optional<double> v0_l,
                  bool noise_study) {
  std::optional<double> cutoff_pa;
  if (cutoff_mbar) cutoff_pa = units::mbar_to_pa(*cutoff_mbar);
  calibrate::PvRecord pv = calibrate::PvRecord::from_csv(pv_path, cutoff_pa);
  calibrate::TissueFitOptions opts;
  if (v0_l) opts.fixed_v0 = units::liter_to_m3(*v0_l);
  calibrate::TissueFit tf = calibrate::fit_tissue(pv, opts);
  calibrate::ChestWallFit cw = calibrate::fit_chest_wall(pv);

  std::printf("tissue:     kappa = %.6g mbar, beta = %.6g (v0 = %.6g L, residual %.3g, %d iters)\n",
              units::pa_to_mbar(tf.kappa), tf.beta, units::m3_to_liter(tf.v0), tf.residual_norm,
              tf.iterations);
  std::printf("chest wall: p_pl0 = %.6g mbar, p_pl_lin = %.6g mbar (R^2 = %.6f)\n",
              units::pa_to_mbar(cw.p_pl0), units::pa_to_mbar(cw.p_pl_lin), cw.r_squared);

  if (noise_study) {
    // Monte Carlo sensitivity of the recovered parameters to 1% multiplicative
    // volume noise, reusing the fit's own model as ground truth.
    double k_max = 0, b_max = 0;
    int failures = 0;
    for (std::uint64_t seed = 1; seed <= 20; ++seed) {
      rng::Stream s(seed, 0, 0);
      std::vector<calibrate::PvSample> noisy = pv.fit_samples();
      for (auto& smp : noisy) {
        double u1 = s.uniform01_open_low(), u2 = s.uniform01();
        double gauss = std::sqrt(-2.0 * std::log(u1)) * std::cos(2 * M_PI * u2);
        smp.v *= 1.0 + 0.01 * gauss;
      }
      std::sort(noisy.begin(), noisy.end(),
                [](const auto& a, const auto& b) { return a.t < b.t; });
      for (std::size_t i = 1; i < noisy.size(); ++i)
        if (noisy[i].v <= noisy[i - 1].v) noisy[i].v = noisy[i - 1].v * (1 + 1e-9);
      try {
        calibrate::TissueFitOptions o2 = opts;
        o2.fixed_v0 = tf.v0;
        calibrate::TissueFit f2 =
            calibrate::fit_tissue(calibrate::PvRecord(noisy, cutoff_pa), o2);
        k_max = std::max(k_max, std::abs(f2.kappa - tf.kappa) / tf.kappa);
        b_max = std::max(b_max, std::abs(f2.beta - tf.beta) / std::abs(tf.beta));
      } catch (const std::exception&) {
        ++failures;
      }
    }
    std::printf("noise study (20 seeds, 1%% volume noise): max |dkappa|/kappa = %.3g, "
                "max |dbeta|/|beta| = %.3g, failures = %d\n",
                k_max, b_max, failures);
  }

  if (!out.empty()) {
    Config params;
    params.set_double("tissue.kappa_mbar", units::pa_to_mbar(tf.kappa));
    params.set_double("tissue.beta", tf.beta);
    params.set_double("pleural.p_pl0_mbar", units::pa_to_mbar(cw.p_pl0));
    params.set_double("pleural.p_pl_lin_mbar", units::pa_to_mbar(cw.p_pl_lin));
    params.write(out);
    std::printf("wrote %s\n", out.c_str());
  }
  return kExitOk;
}

int cmd_simulate(const Config& c, const std::string& tree_file, bool generate,
                 const std::string& outdir) {
  AirwayTree tree = obtain_tree(c, tree_file, generate);
  ScenarioConfig cfg = scenario_config_from(c);
  boundary::Waveform wf = waveform_from(c);
  ScenarioResult res = run_scenario(tree, cfg, wf);
  write_outputs(res, outdir, c);
  std::printf("%s", res.summary().c_str());
  std::printf("wrote %s\n", (fs::path(outdir) / "metrics.csv").c_str());
  return kExitOk;
}

int cmd_sweep(const Config& c, const std::string& tree_file, bool generate,
              const std::string& outdir, std::vector<double> gammas) {
  if (gammas.empty()) gammas = {70.0, 100.0, 130.0};
  AirwayTree tree = obtain_tree(c, tree_file, generate);
  ScenarioConfig base = scenario_config_from(c);
  boundary::Waveform wf = waveform_from(c);

  // one worker per scenario; the tree is shared read-only
  std::vector<ScenarioResult> results(gammas.size());
  std::vector<std::string> errors(gammas.size());
  std::vector<std::thread> workers;
  for (std::size_t i = 0; i < gammas.size(); ++i) {
    workers.emplace_back([&, i] {
      try {
        ScenarioConfig cfg = base;
        cfg.rd.gamma = gammas[i];
        results[i] = run_scenario(tree, cfg, wf);
      } catch (const std::exception& e) {
        errors[i] = e.what();
      }
    });
  }
  for (auto& w : workers) w.join();
  for (std::size_t i = 0; i < gammas.size(); ++i)
    if (!errors[i].empty())
      throw SolverError("gamma = " + std::to_string(gammas[i]) + ": " + errors[i]);

  fs::create_directories(outdir);
  std::printf(
      "gamma_dyn_cm  pct_open_final  pct_open_min  pct_open_max  mean_tidal_ml  last_eelv_ml\n");
  for (std::size_t i = 0; i < gammas.size(); ++i) {
    const ScenarioResult& r = results[i];
    std::ostringstream sub;
    sub << "gamma_" << gammas[i];
    Config resolved = c;
    resolved.set_double("rd.gamma_dyn_cm", gammas[i]);
    write_outputs(r, fs::path(outdir) / sub.str(), resolved);
    double open_min = r.pct_open.empty() ? 0 : r.pct_open[0];
    double open_max = open_min;
    for (double p : r.pct_open) {
      open_min = std::min(open_min, p);
      open_max = std::max(open_max, p);
    }
    double tidal = 0;
    for (const auto& b : r.breaths) tidal += b.tidal;
    if (!r.breaths.empty()) tidal /= static_cast<double>(r.breaths.size());
    double eelv = r.breaths.empty() ? 0 : r.breaths.back().eelv;
    std::printf("%12g  %14.4f  %12.4f  %12.4f  %13.3f  %12.2f\n", gammas[i], r.pct_open.back(),
                open_min, open_max, 1e6 * tidal, 1e6 * eelv);
  }
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Reduced-dimensional lung ventilation simulator"};
  app.require_subcommand(1);

  auto add_tree_options = [&](Overlay& ov) {
    ov.opt("--length-ratio", "tree.length_ratio", "Daughter/parent length ratio");
    ov.opt("--diameter-ratio-major", "tree.diameter_ratio_major",
           "Major daughter diameter ratio");
    ov.opt("--diameter-ratio-minor", "tree.diameter_ratio_minor",
           "Minor daughter diameter ratio");
    ov.opt("--root-length-m", "tree.root_length_m", "Root airway length [m]");
    ov.opt("--root-radius-m", "tree.root_radius_m", "Root airway radius [m]");
    ov.opt("--min-length-m", "tree.min_length_m", "Termination length [m]");
    ov.opt("--min-diameter-m", "tree.min_diameter_m", "Termination diameter [m]");
    ov.opt("--max-generation", "tree.max_generation", "Generation budget");
    ov.opt("--tree-seed", "tree.seed", "Generation seed");
    ov.opt("--collapsible-fraction", "tree.collapsible_fraction",
           "Synthetic dorsal collapsible fraction (0 disables marking)");
    ov.opt("--height-extent-m", "tree.height_extent_m", "Ventral-dorsal extent [m]");
  };

  auto* gen = app.add_subcommand("generate", "Generate a morphometric airway tree file");
  std::string gen_out = "tree.csv";
  std::string gen_config;
  gen->add_option("--out", gen_out, "Output tree file");
  gen->add_option("--config", gen_config, "Config file with tree.* keys");
  Overlay gen_overlay{Config{}, gen};
  add_tree_options(gen_overlay);
  gen_overlay.opt("--seed", "tree.seed", "Generation seed (alias of --tree-seed)");

  auto* cal = app.add_subcommand("calibrate", "Fit tissue and chest-wall parameters to PV data");
  std::string cal_pv, cal_out;
  double cal_cutoff = -1e300, cal_v0 = -1;
  bool cal_noise = false;
  cal->add_option("--pv", cal_pv, "PV record CSV (t_s,p_tp_mbar,p_pl_mbar,v_m3)")->required();
  cal->add_option("--out", cal_out, "Parameter file to write");
  cal->add_option("--cutoff-mbar", cal_cutoff,
                  "Lower-inflection cutoff [mbar]; autodetected if omitted");
  cal->add_option("--v0-liters", cal_v0, "Fix the lumped reference volume [L]");
  cal->add_flag("--noise-study", cal_noise, "Print a 20-seed noisy-recovery summary");

  auto add_sim_options = [&](CLI::App* cmd, Overlay& ov, std::string& tree_file, bool& generate,
                             std::string& config_file, std::string& outdir) {
    cmd->add_option("--tree", tree_file, "Tree file produced by 'generate'");
    cmd->add_flag("--generate", generate, "Generate the tree in-process from tree.* keys");
    cmd->add_option("--config", config_file, "Flat key = value config file");
    cmd->add_option("--outdir", outdir, "Output directory");
    add_tree_options(ov);
    ov.opt("--gamma", "rd.gamma_dyn_cm", "Lining-fluid surface tension [dyn/cm]");
    ov.opt("--seed", "rd.seed", "Recruitment sampling seed");
    ov.opt("--initial-closed-threshold-mbar", "rd.initial_closed_threshold_mbar",
           "Opening pressure above which collapsible airways start closed");
    ov.opt("--kappa-mbar", "tissue.kappa_mbar", "Tissue stiffness [mbar]");
    ov.opt("--beta", "tissue.beta", "Tissue shape parameter");
    ov.opt("--visc-modulus-mbar", "tissue.visc_modulus_mbar",
           "Maxwell branch modulus [mbar], 0 disables");
    ov.opt("--visc-tau-s", "tissue.visc_tau_s", "Maxwell branch time constant [s]");
    ov.opt("--air-volume-l", "init.air_volume_l", "Total air volume under the imaging load [L]");
    ov.opt("--tissue-volume-l", "init.tissue_volume_l", "Total tissue volume [L]");
    ov.opt("--density-csv", "init.density_csv", "Per-unit density table (unit_id,density_hu)");
    ov.opt("--dt", "solver.dt_s", "Base time step [s]");
    ov.opt("--theta", "solver.theta", "Time integration blend in [0.5, 1]");
    ov.opt("--duration", "run.duration_s", "Recorded duration [s]");
    ov.opt("--warmup", "run.warmup_s", "Unrecorded warmup [s]");
    ov.opt("--record-every", "run.record_every", "Steps per metrics sample");
    ov.opt("--snapshots", "run.snapshot_times_s", "Comma-separated strain snapshot times [s]");
    ov.opt("--strain-ref", "run.strain_ref", "Strain reference: v0 | eelv");
    ov.opt("--waveform", "waveform.kind", "constant|cycles|ramp|triangle|sustained-inflation|csv");
    ov.opt("--waveform-csv", "waveform.csv", "Sampled waveform file (t_s,p_ao_mbar)");
    ov.opt("--peep-mbar", "waveform.peep_mbar", "Baseline pressure [mbar]");
    ov.opt("--drive-mbar", "waveform.drive_mbar", "Driving pressure [mbar]");
    ov.opt("--rate", "waveform.rate_per_min", "Breaths per minute");
    ov.opt("--ie", "waveform.ie_ratio", "Inspiration:expiration ratio");
    ov.opt("--hold-mbar", "waveform.hold_mbar", "Sustained-inflation hold pressure [mbar]");
    ov.opt("--hold-s", "waveform.hold_s", "Sustained-inflation hold time [s]");
    ov.opt("--peep-after-mbar", "waveform.peep_after_mbar",
           "PEEP after sustained inflation [mbar]");
    ov.opt("--p0-mbar", "waveform.p0_mbar", "Ramp/triangle start pressure [mbar]");
    ov.opt("--p1-mbar", "waveform.p1_mbar", "Ramp/triangle end pressure [mbar]");
    ov.opt("--rise-s", "waveform.rise_s", "Ramp duration / triangle total time [s]");
  };

  auto* sim = app.add_subcommand("simulate", "Run one ventilation scenario");
  std::string sim_tree, sim_config, sim_outdir = "out";
  bool sim_generate = false;
  Overlay sim_overlay{Config{}, sim};
  add_sim_options(sim, sim_overlay, sim_tree, sim_generate, sim_config, sim_outdir);

  auto* swp = app.add_subcommand("sweep", "Run the same scenario across surface tensions");
  std::string swp_tree, swp_config, swp_outdir = "sweep_out", swp_gammas = "70,100,130";
  bool swp_generate = false;
  Overlay swp_overlay{Config{}, swp};
  add_sim_options(swp, swp_overlay, swp_tree, swp_generate, swp_config, swp_outdir);
  swp->add_option("--gammas", swp_gammas, "Comma-separated surface tensions [dyn/cm]");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitConfig;
  }

  try {
    if (gen->parsed()) {
      Config c = default_config();
      if (!gen_config.empty()) c.merge(Config::from_file(gen_config));
      c.merge(gen_overlay.cfg);
      return cmd_generate(c, gen_out);
    }
    if (cal->parsed()) {
      std::optional<double> cutoff;
      if (cal_cutoff > -1e299) cutoff = cal_cutoff;
      std::optional<double> v0;
      if (cal_v0 > 0) v0 = cal_v0;
      return cmd_calibrate(cal_pv, cal_out, cutoff, v0, cal_noise);
    }
    if (sim->parsed()) {
      Config c = default_config();
      if (!sim_config.empty()) c.merge(Config::from_file(sim_config));
      c.merge(sim_overlay.cfg);
      if (sim_tree.empty() && !sim_generate)
        throw ConfigError("simulate needs --tree FILE or --generate");
      return cmd_simulate(c, sim_tree, sim_generate, sim_outdir);
    }
    if (swp->parsed()) {
      Config c = default_config();
      if (!swp_config.empty()) c.merge(Config::from_file(swp_config));
      c.merge(swp_overlay.cfg);
      if (swp_tree.empty() && !swp_generate)
        throw ConfigError("sweep needs --tree FILE or --generate");
      std::vector<double> gammas;
      for (const auto& part : csv::split(swp_gammas)) gammas.push_back(std::stod(part));
      return cmd_sweep(c, swp_tree, swp_generate, swp_outdir, gammas);
    }
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kExitConfig;
  } catch (const ParseError& e) {
    std::fprintf(stderr, "input error: %s\n", e.what());
    return kExitIo;
  } catch (const SolverError& e) {
    std::fprintf(stderr, "solver error: %s\n", e.what());
    return kExitSolver;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitConfig;
  }
  return kExitOk;
}
