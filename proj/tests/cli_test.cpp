#include <doctest.h>

#include <cstdlib>
#include <unistd.h>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "lungsim/config.hpp"
#include "lungsim/csv.hpp"
#include "lungsim/scenario.hpp"
#include "lungsim/tissue.hpp"
#include "lungsim/tree.hpp"
#include "lungsim/units.hpp"

namespace fs = std::filesystem;
using namespace lungsim;

namespace {

const char* cli = LUNGSIM_CLI_PATH;

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() / ("lungsim_cli_" + std::to_string(::getpid()));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

int run(const std::string& args, const fs::path& log) {
  std::string cmd = std::string(cli) + " " + args + " >" + log.string() + " 2>&1";
  int rc = std::system(cmd.c_str());
  return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("help exits cleanly") {
  TempDir tmp;
  CHECK(run("--help", tmp.path / "log") == 0);
  CHECK(run("simulate --help", tmp.path / "log") == 0);
}

TEST_CASE("usage errors use the config exit code") {
  TempDir tmp;
  CHECK(run("frobnicate", tmp.path / "log") == 2);
  CHECK(run("simulate", tmp.path / "log") == 2);  // neither --tree nor --generate
  CHECK(run("calibrate", tmp.path / "log") == 2); // missing required --pv
}

TEST_CASE("missing input files use the I/O exit code") {
  TempDir tmp;
  CHECK(run("simulate --tree /nonexistent/tree.csv --duration 0.1", tmp.path / "log") == 3);
  CHECK(run("calibrate --pv /nonexistent/pv.csv", tmp.path / "log") == 3);
}

TEST_CASE("generate then simulate produces the documented outputs") {
  TempDir tmp;
  fs::path tree = tmp.path / "tree.csv";
  int rc = run("generate --max-generation 6 --seed 4 --collapsible-fraction 0.4 --out " +
                   tree.string(),
               tmp.path / "gen.log");
  REQUIRE(rc == 0);
  AirwayTree t = load_tree(tree.string());
  CHECK(t.count_collapsible() > 0);

  fs::path outdir = tmp.path / "out";
  rc = run("simulate --tree " + tree.string() +
               " --duration 2 --record-every 5 --rate 30 --snapshots 0.5,1.5 --outdir " +
               outdir.string(),
           tmp.path / "sim.log");
  REQUIRE(rc == 0);
  CHECK(fs::exists(outdir / "metrics.csv"));
  CHECK(fs::exists(outdir / "snapshot_t0.5.csv"));
  CHECK(fs::exists(outdir / "snapshot_t1.5.csv"));
  CHECK(fs::exists(outdir / "summary.txt"));
  CHECK(fs::exists(outdir / "resolved_config.txt"));

  // the echoed config carries the CLI override
  std::string resolved = slurp(outdir / "resolved_config.txt");
  CHECK(resolved.find("run.duration_s = 2") != std::string::npos);

  // metrics CSV parses with the documented schema and plausible values
  csv::Table m = csv::read_table((outdir / "metrics.csv").string(),
                                 {"t_s", "v_total_m3", "q_ao_m3s", "p_ao_mbar", "p_pl_mbar",
                                  "pct_open"});
  CHECK(m.rows.size() > 10);
  for (const auto& r : m.rows) {
    double pct = csv::parse_double(m, r, 5, "pct_open");
    CHECK(pct >= 0.0);
    CHECK(pct <= 100.0);
  }

  // summary numbers equal an independent recomputation from the CSV
  std::vector<double> ts, vs, ppl, pct;
  for (const auto& r : m.rows) {
    ts.push_back(csv::parse_double(m, r, 0, "t_s"));
    vs.push_back(csv::parse_double(m, r, 1, "v_total_m3"));
    ppl.push_back(csv::parse_double(m, r, 4, "p_pl_mbar"));
    pct.push_back(csv::parse_double(m, r, 5, "pct_open"));
  }
  std::vector<BreathStats> breaths = breath_stats_from_series(ts, vs, ppl, pct, 2.0);
  std::string summary = slurp(outdir / "summary.txt");
  REQUIRE(!breaths.empty());
  std::ostringstream tidal_ml;
  tidal_ml << 1e6 * breaths.front().tidal;
  CHECK(summary.find(tidal_ml.str().substr(0, 6)) != std::string::npos);

  // snapshot CSV round-trips through the documented schema
  csv::Table snap = csv::read_table((outdir / "snapshot_t0.5.csv").string(),
                                    {"unit_id", "z_m", "V_m3", "V0_m3", "strain", "trapped",
                                     "open_path"});
  CHECK(static_cast<int>(snap.rows.size()) == t.n_units());
}

TEST_CASE("calibrate recovers parameters from a synthetic PV file") {
  TempDir tmp;
  fs::path pv = tmp.path / "pv.csv";
  {
    tissue::TissueParams p;
    p.kappa = units::mbar_to_pa(3.7);
    p.beta = -2.4;
    std::ofstream out(pv);
    out << "t_s,p_tp_mbar,p_pl_mbar,v_m3\n";
    double v0 = 2.0e-3;
    double v_peep = *tissue::solve_volume(v0, units::mbar_to_pa(1.0), p);
    double v_max = *tissue::solve_volume(v0, units::mbar_to_pa(22.0), p);
    for (int i = 0; i < 30; ++i) {
      double p_tp = 1.0 + 21.0 * i / 29.0;
      double v = *tissue::solve_volume(v0, units::mbar_to_pa(p_tp), p);
      double v_frac = (v - v_peep) / (v_max - v_peep);
      out << i << ',' << p_tp << ',' << 10.15 + 9.35 * v_frac << ',' << csv::format_double(v)
          << '\n';
    }
  }
  fs::path params = tmp.path / "params.txt";
  int rc = run("calibrate --pv " + pv.string() + " --cutoff-mbar 0.5 --out " + params.string(),
               tmp.path / "cal.log");
  REQUIRE(rc == 0);
  Config fit = Config::from_file(params.string());
  CHECK(fit.get_double("tissue.kappa_mbar", 0) == doctest::Approx(3.7).epsilon(1e-5));
  CHECK(fit.get_double("tissue.beta", 0) == doctest::Approx(-2.4).epsilon(1e-5));
  CHECK(fit.get_double("pleural.p_pl0_mbar", 0) == doctest::Approx(10.15).epsilon(1e-6));
  CHECK(fit.get_double("pleural.p_pl_lin_mbar", 0) == doctest::Approx(9.35).epsilon(1e-6));

  // the parameter file is directly loadable as a simulate config
  fs::path tree = tmp.path / "tree.csv";
  REQUIRE(run("generate --max-generation 5 --out " + tree.string(), tmp.path / "gen.log") == 0);
  CHECK(run("simulate --tree " + tree.string() + " --config " + params.string() +
                " --duration 0.5 --outdir " + (tmp.path / "out2").string(),
            tmp.path / "sim2.log") == 0);
}

TEST_CASE("sweep emits one result set per surface tension and a comparison table") {
  TempDir tmp;
  fs::path outdir = tmp.path / "sweep";
  int rc = run("sweep --generate --max-generation 6 --seed 2 --collapsible-fraction 0.5"
               " --gammas 70,130 --duration 1 --rate 30 --outdir " +
                   outdir.string(),
               tmp.path / "sweep.log");
  REQUIRE(rc == 0);
  CHECK(fs::exists(outdir / "gamma_70" / "metrics.csv"));
  CHECK(fs::exists(outdir / "gamma_130" / "metrics.csv"));
  std::string log = slurp(tmp.path / "sweep.log");
  CHECK(log.find("gamma_dyn_cm") != std::string::npos);
}
