#include <doctest.h>

#include <cmath>

#include "lungsim/errors.hpp"
#include "lungsim/rd.hpp"
#include "lungsim/rng.hpp"
#include "lungsim/tree.hpp"
#include "lungsim/units.hpp"

using namespace lungsim;
using namespace lungsim::rd;

TEST_CASE("opening pressure matches the direct CGS evaluation") {
  // 8.3 * 70 dyn/cm / 0.04 cm = 14525 dyn/cm^2 = 1452.5 Pa
  double p70 = opening_pressure(units::dyncm_to_npm(70.0), 0.4e-3);
  CHECK(std::abs(p70 - 1452.5) <= 1e-9 * 1452.5);
  double p130 = opening_pressure(units::dyncm_to_npm(130.0), 0.4e-3);
  CHECK(std::abs(p130 - 2697.5) <= 1e-9 * 2697.5);
}

TEST_CASE("opening pressure is homogeneous in its arguments") {
  rng::Stream s(1, 0, 0);
  for (int i = 0; i < 50; ++i) {
    double gamma = s.uniform(0.01, 0.2);
    double r = s.uniform(1e-4, 5e-3);
    double k = s.uniform(0.5, 3.0);
    CHECK(opening_pressure(gamma, 2 * r) ==
          doctest::Approx(opening_pressure(gamma, r) / 2).epsilon(1e-14));
    CHECK(opening_pressure(k * gamma, r) ==
          doctest::Approx(k * opening_pressure(gamma, r)).epsilon(1e-14));
  }
  CHECK_THROWS_AS(opening_pressure(0.07, 0.0), ConfigError);
}

TEST_CASE("velocity-constant sampling maps u through the scale") {
  double s_o = 0.04 / units::pa_per_cmh2o;
  double s_c = 0.004 / units::pa_per_cmh2o;
  auto [a1, c1] = sample_velocity_constants(s_o, s_c, 1.0);
  CHECK(a1 == doctest::Approx(s_o).epsilon(1e-14));  // distribution minimum
  CHECK(c1 == doctest::Approx(s_c).epsilon(1e-14));
  auto [a2, c2] = sample_velocity_constants(s_o, s_c, 0.5);
  CHECK(a2 == doctest::Approx(2 * s_o).epsilon(1e-14));
  CHECK(c2 == doctest::Approx(a2 / 10).epsilon(1e-14));
  CHECK_THROWS_AS(sample_velocity_constants(s_o, s_o, 0.5), ConfigError);  // ratio violated
  CHECK_THROWS_AS(sample_velocity_constants(s_o, s_c, 0.0), ConfigError);
}

TEST_CASE("hyperbolic sampling matches its closed-form CDF over many draws") {
  // P(s_o <= 2 S_o) = P(u >= 1/2) = 1/2
  RdConfig cfg;
  cfg.seed = 123;
  const int n = 1000000;
  int below = 0;
  double s_o_scale = cfg.s_open_scale_si();
  for (int i = 0; i < n; ++i) {
    auto [so, sc] = sample_velocity_constants(cfg, static_cast<std::uint64_t>(i));
    if (so <= 2 * s_o_scale) ++below;
    CHECK(so == doctest::Approx(10 * sc).epsilon(1e-12));
  }
  double frac = static_cast<double>(below) / n;
  CHECK(std::abs(frac - 0.5) < 0.002);
}

TEST_CASE("sampling is reproducible and id-keyed") {
  RdConfig cfg;
  cfg.seed = 77;
  auto a = sample_velocity_constants(cfg, 5);
  auto b = sample_velocity_constants(cfg, 5);
  auto c = sample_velocity_constants(cfg, 6);
  CHECK(a.first == b.first);
  CHECK(a.first != c.first);
}

TEST_CASE("trajectory holds still between the critical pressures") {
  RdState s;
  s.x = 0.37;
  s.open = true;
  s.p_open = 2000;
  s.p_close = 2000 - kClosingOffset;
  s.s_open = 4e-4;
  s.s_close = 4e-5;
  RdState after = step_trajectory(s, 1800.0, 0.01);
  CHECK(after.x == s.x);
  CHECK(after.open == s.open);
}

TEST_CASE("constant overpressure of 1 cmH2O opens a closed airway at 25 s") {
  RdState s;
  s.x = 0.0;
  s.open = false;
  s.p_open = units::mbar_to_pa(20.0);
  s.p_close = s.p_open - kClosingOffset;
  s.s_open = 0.04 / units::pa_per_cmh2o;
  s.s_close = s.s_open / 10;
  double p_in = s.p_open + units::cmh2o_to_pa(1.0);
  double dt = 1e-3;
  double t = 0;
  while (!s.open && t < 60.0) {
    s = step_trajectory(s, p_in, dt);
    t += dt;
  }
  // dx/dt = 0.04 /s, so x reaches 1 at t = 25 s
  CHECK(s.open);
  CHECK(std::abs(t - 25.0) <= 2 * dt);
}

TEST_CASE("constant underpressure of 10 cmH2O closes an open airway at 25 s") {
  RdState s;
  s.x = 1.0;
  s.open = true;
  s.p_open = units::mbar_to_pa(20.0);
  s.p_close = s.p_open - kClosingOffset;
  s.s_open = 0.04 / units::pa_per_cmh2o;
  s.s_close = s.s_open / 10;
  double p_in = s.p_close - units::cmh2o_to_pa(10.0);
  double dt = 1e-3;
  double t = 0;
  while (s.open && t < 60.0) {
    s = step_trajectory(s, p_in, dt);
    t += dt;
  }
  // dx/dt = -0.004 * 10 /s -> 25 s from x = 1 to 0
  CHECK_FALSE(s.open);
  CHECK(std::abs(t - 25.0) <= 2 * dt);
}

TEST_CASE("trajectory is clamped and monotone under sustained pressure") {
  RdState s;
  s.x = 0.0;
  s.open = false;
  s.p_open = 1000;
  s.p_close = s.p_open - kClosingOffset;
  s.s_open = 1e-3;
  s.s_close = 1e-4;
  double prev = 0;
  for (int i = 0; i < 100000; ++i) {
    s = step_trajectory(s, 1500.0, 1e-2);
    CHECK(s.x >= prev);
    CHECK(s.x <= 1.0);
    prev = s.x;
  }
  CHECK(s.x == 1.0);
  CHECK(s.open);
}

TEST_CASE("closure swaps in the blocking resistance and removes wall storage") {
  airway::AirwayCoeffs c;
  c.r_mu = 1234.5;
  c.cap = 3e-9;
  c.inert = 100;
  airway::AirwayCoeffs open = apply_closure(c, true);
  CHECK(open.r_mu == c.r_mu);
  CHECK(open.cap == c.cap);
  airway::AirwayCoeffs closed = apply_closure(c, false);
  CHECK(closed.r_mu == kClosedResistance);
  CHECK(closed.cap == 0.0);
  CHECK(closed.inert == c.inert);
  // reopening restores the untouched coefficient set
  airway::AirwayCoeffs again = apply_closure(c, true);
  CHECK(again.r_mu == c.r_mu);
  // Ohmic bound under a 40 mbar drop
  CHECK(units::mbar_to_pa(40.0) / closed.r_mu <= 4.0e-13);
}

namespace {
AirwayTree collapsible_tree(int max_gen, std::uint64_t seed) {
  TreeConfig c;
  c.max_generation = max_gen;
  c.asymmetry_seed = seed;
  c.diameter_ratio_major = 0.85;
  c.diameter_ratio_minor = 0.7;
  AirwayTree t = build_tree(c);
  std::vector<double> density(static_cast<std::size_t>(t.n_units()), -100.0);
  return mark_collapsible(t, density);  // everything collapsible
}
}  // namespace

TEST_CASE("initial closure follows the radius threshold") {
  AirwayTree t = collapsible_tree(9, 4);
  RdConfig cfg;
  cfg.gamma = 70.0;
  cfg.seed = 5;
  std::vector<RdState> states = initialize_states(t, cfg);
  // P_o > 24 mbar iff r < 8.3 gamma / 2400 Pa
  double r_threshold = 8.3 * cfg.gamma_si() / units::mbar_to_pa(24.0);
  CHECK(r_threshold == doctest::Approx(0.242e-3).epsilon(1e-3));
  for (int e = 0; e < t.n_elements(); ++e) {
    const RdState& s = states[static_cast<std::size_t>(e)];
    CHECK(s.p_close == doctest::Approx(s.p_open - 392.266).epsilon(1e-14));
    bool expect_closed = t.geom(e).radius < r_threshold;
    CHECK(s.open == !expect_closed);
    CHECK(s.x == (s.open ? 1.0 : 0.0));
  }
}

TEST_CASE("non-collapsible airways carry no recruitment dynamics") {
  TreeConfig c;
  c.max_generation = 5;
  AirwayTree t = build_tree(c);  // nothing marked
  RdConfig cfg;
  std::vector<RdState> states = initialize_states(t, cfg);
  for (const auto& s : states) {
    CHECK(s.open);
    CHECK(s.p_open == 0.0);  // untouched default
  }
  CHECK(trapped_units(t, states) == std::vector<bool>(static_cast<std::size_t>(t.n_units()), false));
}

TEST_CASE("raising surface tension closes a superset of airways") {
  AirwayTree t = collapsible_tree(10, 6);
  RdConfig lo, hi;
  lo.gamma = 70.0;
  hi.gamma = 130.0;
  lo.seed = hi.seed = 9;
  std::vector<RdState> a = initialize_states(t, lo);
  std::vector<RdState> b = initialize_states(t, hi);
  int closed_lo = 0, closed_hi = 0;
  for (int e = 0; e < t.n_elements(); ++e) {
    if (!t.geom(e).collapsible) continue;
    bool ca = !a[static_cast<std::size_t>(e)].open;
    bool cb = !b[static_cast<std::size_t>(e)].open;
    closed_lo += ca;
    closed_hi += cb;
    if (ca) CHECK(cb);  // superset
  }
  CHECK(closed_hi >= closed_lo);
  CHECK(closed_hi > 0);
}

TEST_CASE("trapped units are exactly those behind a closed airway") {
  AirwayTree t = collapsible_tree(6, 8);
  RdConfig cfg;
  cfg.gamma = 100.0;
  std::vector<RdState> states = initialize_states(t, cfg);
  std::vector<bool> trapped = trapped_units(t, states);
  for (int u = 0; u < t.n_units(); ++u) {
    bool expect = false;
    for (int e = t.leaf_of_unit(u); e >= 0; e = t.parent(e))
      if (t.geom(e).collapsible && !states[static_cast<std::size_t>(e)].open) expect = true;
    CHECK(trapped[static_cast<std::size_t>(u)] == expect);
  }
}
