#include <doctest.h>

#include <Eigen/Dense>
#include <cmath>
#include <vector>

#include "lungsim/errors.hpp"
#include "lungsim/scenario.hpp"
#include "lungsim/solver.hpp"
#include "lungsim/units.hpp"

using namespace lungsim;

namespace {

AirwayGeom element(int id, int parent, int gen, double radius, double length,
                   double supplied_area = 0) {
  AirwayGeom g;
  g.id = id;
  g.parent = parent;
  g.generation = gen;
  g.length = length;
  g.radius = radius;
  g.wall_thickness = 0.15 * radius;
  g.wall_modulus = 6e4;
  g.supplied_area = supplied_area;
  g.height = 0.1;
  return g;
}

AirwayTree single_airway_tree() {
  return AirwayTree({element(0, -1, 0, 0.005, 0.05, 1e-4)});
}

AirwayTree y_tree(bool collapsible_daughter = false) {
  std::vector<AirwayGeom> elems;
  elems.push_back(element(0, -1, 0, 0.006, 0.06));
  elems.push_back(element(1, 0, 1, 0.004, 0.04, 8e-5));
  elems.push_back(element(2, 0, 1, 0.004, 0.04, 8e-5));
  if (collapsible_daughter) {
    // narrow collapsible daughter whose opening pressure (~21 mbar at
    // gamma = 100) stays above the ventilation pressures used below
    elems[1].collapsible = true;
    elems[1].radius = 0.0004;
  }
  return AirwayTree(std::move(elems));
}

ScenarioConfig base_config() {
  ScenarioConfig cfg;
  cfg.rd.gamma = 100.0;
  cfg.rd.seed = 3;
  cfg.tissue.visc_modulus = 0;
  cfg.solver.dt = 1e-3;
  cfg.total_air_volume_l = 3.2;
  cfg.total_tissue_volume_l = 0.9;
  cfg.v_max_above_peep_l = 1.5;
  return cfg;
}

}  // namespace

TEST_CASE("one Newton linearization matches a dense reference") {
  for (int variant = 0; variant < 3; ++variant) {
    TreeConfig tc;
    tc.max_generation = 4;
    tc.asymmetry_seed = 11 + static_cast<std::uint64_t>(variant);
    AirwayTree tree = build_tree(tc);
    if (variant > 0) {
      std::vector<double> density(static_cast<std::size_t>(tree.n_units()), -1000.0);
      for (std::size_t u = 0; u < density.size(); u += 2) density[u] = -100.0;
      tree = mark_collapsible(tree, density);
    }
    ScenarioConfig cfg = base_config();
    // force some initial closures in variant 2 through a high threshold
    cfg.rd.initial_closed_threshold = variant == 2 ? 0.1 : 24.0;
    cfg.tissue.visc_modulus = variant == 1 ? units::mbar_to_pa(0.5) : 0.0;
    PreparedScenario prep = prepare_scenario(tree, cfg, units::mbar_to_pa(10.0));
    Network& net = prep.network;

    DebugLinearization lin = net.linearize(units::mbar_to_pa(13.0), 1e-3);
    const int n = lin.n_nodes + lin.n_units;
    Eigen::MatrixXd a = Eigen::MatrixXd::Zero(n, n);
    for (const auto& e : lin.jacobian) a(e.row, e.col) += e.value;
    Eigen::VectorXd u(n), v(n), r(n), delta(n);
    for (int i = 0; i < n; ++i) {
      u(i) = lin.rank1_u[static_cast<std::size_t>(i)];
      v(i) = lin.rank1_v[static_cast<std::size_t>(i)];
      r(i) = lin.residual[static_cast<std::size_t>(i)];
      delta(i) = lin.delta[static_cast<std::size_t>(i)];
    }
    Eigen::MatrixXd jac = a + u * v.transpose();

    // Componentwise backward error against the dense assembly; a normwise
    // comparison with a dense solve would be dominated by the blocking
    // resistance's conditioning in the closed variants.
    Eigen::VectorXd lhs = jac * delta + r;
    Eigen::VectorXd rowscale = jac.cwiseAbs() * delta.cwiseAbs() + r.cwiseAbs();
    for (int i = 0; i < n; ++i)
      CHECK(std::abs(lhs(i)) <= 1e-8 * rowscale(i) + 1e-300);

    if (variant == 0) {  // well conditioned: the dense solution must agree
      Eigen::VectorXd delta_ref = jac.fullPivLu().solve(-r);
      CHECK((delta - delta_ref).norm() <= 1e-9 * std::max(delta_ref.norm(), 1e-30));
    }
  }
}

TEST_CASE("transmural equilibrium converges immediately with zero flow") {
  ScenarioConfig cfg = base_config();
  PreparedScenario prep = prepare_scenario(single_airway_tree(), cfg, units::mbar_to_pa(10.0));
  Network& net = prep.network;
  boundary::Waveform wf = boundary::Waveform::constant(units::mbar_to_pa(10.0));
  StepStats st = net.step(wf);
  CHECK(st.newton_iterations <= 1);
  CHECK(st.rejections == 0);
  CHECK(std::abs(net.q_opening()) < 1e-15);
}

TEST_CASE("an equilibrium state does not drift over 1000 steps") {
  ScenarioConfig cfg = base_config();
  TreeConfig tc;
  tc.max_generation = 5;
  AirwayTree tree = build_tree(tc);
  PreparedScenario prep = prepare_scenario(tree, cfg, units::mbar_to_pa(10.0));
  Network& net = prep.network;
  double v0 = net.v_total_units();
  std::vector<double> p0(static_cast<std::size_t>(tree.n_elements()));
  for (int e = 0; e < tree.n_elements(); ++e) p0[static_cast<std::size_t>(e)] = net.node_pressure(e);
  boundary::Waveform wf = boundary::Waveform::constant(units::mbar_to_pa(10.0));
  for (int i = 0; i < 1000; ++i) net.step(wf);
  CHECK(std::abs(net.v_total_units() - v0) <= 1e-10 * v0);
  for (int e = 0; e < tree.n_elements(); ++e)
    CHECK(std::abs(net.node_pressure(e) - p0[static_cast<std::size_t>(e)]) <=
          1e-10 * std::max(std::abs(p0[static_cast<std::size_t>(e)]), 1.0));
}

TEST_CASE("junction conservation holds at every accepted step of a Y-tree run") {
  ScenarioConfig cfg = base_config();
  PreparedScenario prep = prepare_scenario(y_tree(), cfg, units::mbar_to_pa(10.0));
  Network& net = prep.network;
  boundary::Waveform wf =
      boundary::Waveform::cycles(units::mbar_to_pa(10.0), units::mbar_to_pa(22.0), 20.0, 0.5);
  for (int i = 0; i < 3000; ++i) {
    net.step(wf);
    SystemState s = net.state();
    double parent_out = s.q_out[0];
    double children_in = s.q_in[1] + s.q_in[2];
    CHECK(std::abs(parent_out - children_in) <=
          1e-11 * std::max({std::abs(parent_out), std::abs(children_in), 1e-6}));
  }
  CHECK(net.max_junction_residual() < 1e-10);
}

TEST_CASE("closing one daughter reroutes the flow to its sibling") {
  ScenarioConfig cfg = base_config();
  cfg.rd.gamma = 100.0;
  cfg.rd.initial_closed_threshold = 0.1;  // daughter 1 starts closed
  PreparedScenario prep = prepare_scenario(y_tree(true), cfg, units::mbar_to_pa(10.0));
  Network& net = prep.network;
  CHECK_FALSE(net.element_open(1));
  CHECK(net.unit_trapped_now(0));

  boundary::Waveform wf =
      boundary::Waveform::cycles(units::mbar_to_pa(10.0), units::mbar_to_pa(5.0), 20.0, 0.5);
  for (int i = 0; i < 2000; ++i) {
    net.step(wf);
    REQUIRE_FALSE(net.element_open(1));
    SystemState s = net.state();
    // two-resistor picture: everything the parent carries goes to the open
    // sibling, up to the closed daughter's leakage
    CHECK(std::abs(s.q_out[0] - s.q_in[2]) <=
          std::abs(s.q_in[1]) + 1e-11 * std::max(std::abs(s.q_out[0]), 1e-6));
    CHECK(std::abs(s.q_in[1]) <= 1e-11);  // leakage through the blocking resistance
  }
}

TEST_CASE("trapped units hold their volume through ventilation") {
  ScenarioConfig cfg = base_config();
  cfg.rd.initial_closed_threshold = 0.1;
  PreparedScenario prep = prepare_scenario(y_tree(true), cfg, units::mbar_to_pa(10.0));
  Network& net = prep.network;
  REQUIRE(net.unit_trapped_now(0));
  double frozen = net.unit_volume(0);
  boundary::Waveform wf =
      boundary::Waveform::cycles(units::mbar_to_pa(10.0), units::mbar_to_pa(5.0), 20.0, 0.5);
  double v_min = frozen, v_max = frozen;
  for (int i = 0; i < 3000; ++i) {
    net.step(wf);
    v_min = std::min(v_min, net.unit_volume(0));
    v_max = std::max(v_max, net.unit_volume(0));
  }
  CHECK((v_max - v_min) / frozen < 1e-9);
  // strain of the trapped unit is constant over the whole cycle
  CHECK(tissue::unit_strain(v_max, net.unit_v0(0)) ==
        doctest::Approx(tissue::unit_strain(v_min, net.unit_v0(0))).epsilon(1e-9));
}

TEST_CASE("theta = 0.5 refines monotonically and far below 0.1% on a smooth segment") {
  auto run = [&](double dt) {
    ScenarioConfig cfg = base_config();
    cfg.solver.dt = dt;
    cfg.solver.theta = 0.5;
    TreeConfig tc;
    tc.max_generation = 3;
    AirwayTree tree = build_tree(tc);
    PreparedScenario prep = prepare_scenario(tree, cfg, units::mbar_to_pa(10.0));
    Network& net = prep.network;
    // smooth pressure rise (no events, healthy tree)
    boundary::Waveform wf = boundary::Waveform::ramp(units::mbar_to_pa(10.0),
                                                     units::mbar_to_pa(25.0), 2.0);
    long steps = std::lround(2.0 / dt);
    for (long i = 0; i < steps; ++i) net.step(wf);
    return net.v_total_units();
  };
  double v1 = run(4e-3);
  double v2 = run(2e-3);
  double v3 = run(1e-3);
  double e1 = std::abs(v1 - v3);
  double e2 = std::abs(v2 - v3);
  CHECK(e2 < e1);                          // refinement shrinks the error
  CHECK(std::abs(v1 - v2) / v2 < 1e-3);    // halving changes far less than 0.1%
  CHECK(std::abs(v2 - v3) / v3 < 2.5e-4);  // and keeps shrinking
}

TEST_CASE("metric streams are bit-identical across reruns with a fixed seed") {
  auto run = [&]() {
    TreeConfig tc;
    tc.max_generation = 6;
    tc.asymmetry_seed = 21;
    AirwayTree tree = build_tree(tc);
    tree = mark_collapsible_synthetic(tree, 0.5, 13, tc.height_extent);
    ScenarioConfig cfg = base_config();
    cfg.rd.seed = 17;
    cfg.rd.gamma = 100.0;
    cfg.duration = 3.0;
    cfg.tissue.visc_modulus = units::mbar_to_pa(0.4);
    boundary::Waveform wf =
        boundary::Waveform::cycles(units::mbar_to_pa(10.0), units::mbar_to_pa(22.0), 20.0, 0.5);
    return run_scenario(tree, cfg, wf);
  };
  ScenarioResult a = run();
  ScenarioResult b = run();
  REQUIRE(a.t.size() == b.t.size());
  for (std::size_t i = 0; i < a.t.size(); ++i) {
    CHECK(a.v_total[i] == b.v_total[i]);
    CHECK(a.q_ao[i] == b.q_ao[i]);
    CHECK(a.pct_open[i] == b.pct_open[i]);
    CHECK(a.p_pl_mbar[i] == b.p_pl_mbar[i]);
  }
}

TEST_CASE("healthy trees report a constant 100 percent open fraction") {
  TreeConfig tc;
  tc.max_generation = 4;
  AirwayTree tree = build_tree(tc);
  ScenarioConfig cfg = base_config();
  cfg.duration = 2.0;
  boundary::Waveform wf =
      boundary::Waveform::cycles(units::mbar_to_pa(10.0), units::mbar_to_pa(22.0), 30.0, 0.5);
  ScenarioResult res = run_scenario(tree, cfg, wf);
  for (double p : res.pct_open) CHECK(p == 100.0);
  for (double p : res.pct_open_collapsible) CHECK(p == 100.0);
}

TEST_CASE("total volume change equals the integrated opening flow") {
  TreeConfig tc;
  tc.max_generation = 7;
  AirwayTree tree = build_tree(tc);
  ScenarioConfig cfg = base_config();
  cfg.duration = 4.0;
  boundary::Waveform wf =
      boundary::Waveform::cycles(units::mbar_to_pa(10.0), units::mbar_to_pa(22.0), 15.0, 0.5);
  ScenarioResult res = run_scenario(tree, cfg, wf);
  CHECK(res.volume_closure_rel_error < 1e-3);
  CHECK(res.max_junction_residual < 1e-10);
}

TEST_CASE("breath statistics can be recomputed from the emitted series") {
  TreeConfig tc;
  tc.max_generation = 5;
  AirwayTree tree = build_tree(tc);
  ScenarioConfig cfg = base_config();
  cfg.duration = 8.0;
  boundary::Waveform wf =
      boundary::Waveform::cycles(units::mbar_to_pa(10.0), units::mbar_to_pa(22.0), 15.0, 0.5);
  ScenarioResult res = run_scenario(tree, cfg, wf);
  REQUIRE(res.breaths.size() == 2);
  std::vector<BreathStats> again = breath_stats_from_series(res.t, res.v_total, res.p_pl_mbar,
                                                            res.pct_open, 4.0);
  REQUIRE(again.size() == res.breaths.size());
  for (std::size_t i = 0; i < again.size(); ++i) {
    CHECK(again[i].tidal == res.breaths[i].tidal);
    CHECK(again[i].eelv == res.breaths[i].eelv);
    CHECK(again[i].p_pl_swing == res.breaths[i].p_pl_swing);
  }
}
