#include "lungsim/solver.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>

#include "lungsim/errors.hpp"

namespace lungsim {

void SolverConfig::validate() const {
  if (!(dt > 0)) throw ConfigError("solver dt must be positive");
  if (!(newton_tol > 0)) throw ConfigError("solver newton_tol must be positive");
  if (newton_max_iter < 1) throw ConfigError("solver newton_max_iter must be >= 1");
  if (!(theta >= 0.5 && theta <= 1.0)) throw ConfigError("solver theta must lie in [0.5, 1]");
  if (max_halvings < 0) throw ConfigError("solver max_halvings must be >= 0");
}

namespace {
// Scale floors for the relative residual norms. The flow floor sits well
// above the roundoff floor of the affine flow evaluation (conductance times
// pressure times machine epsilon), and well below any physiological flow.
constexpr double kFlowFloor = 1e-6;      // m3/s
constexpr double kPressureFloor = 100.0; // Pa
constexpr double kVolumeFloor = 1e-12;   // m3
}  // namespace

Network::Network(AirwayTree tree, tissue::TissueParams tissue, boundary::PleuralModel pleural,
                 airway::AirPhysics air, SolverConfig solver)
    : tree_(std::move(tree)),
      tissue_(tissue),
      pleural_(pleural),
      air_(air),
      cfg_(solver),
      lin_([&] {
        std::vector<int> parents(static_cast<std::size_t>(tree_.n_elements()));
        for (int e = 0; e < tree_.n_elements(); ++e) parents[static_cast<std::size_t>(e)] = tree_.parent(e);
        return TreeLinearSolver(parents, tree_.post_order());
      }()) {
  cfg_.validate();
  tissue_.validate();
  pleural_.validate();
  n_ = tree_.n_elements();
  u_ = tree_.n_units();
  c_pl_ = pleural_.p_pl_lin / (pleural_.v_max - pleural_.v_peep);

  const auto nz = static_cast<std::size_t>(n_);
  const auto uz = static_cast<std::size_t>(u_);
  parent_.resize(nz);
  child0_.assign(nz, -1);
  child1_.assign(nz, -1);
  length_.resize(nz);
  area0_.resize(nz);
  eta_w_.resize(nz);
  inert_.resize(nz);
  rvisc_.resize(nz);
  generation_.resize(nz);
  collapsible_.resize(nz);
  is_leaf_.resize(nz);
  leaf_unit_.assign(nz, -1);
  rep_leaf_.resize(nz);
  for (int e = 0; e < n_; ++e) {
    const std::size_t k = static_cast<std::size_t>(e);
    const AirwayGeom& g = tree_.geom(e);
    parent_[k] = g.parent;
    child0_[k] = tree_.children(e)[0];
    child1_[k] = tree_.children(e)[1];
    length_[k] = g.length;
    area0_[k] = std::numbers::pi * g.radius * g.radius;
    eta_w_[k] = airway::wall_eta(g.wall_modulus, g.wall_thickness, air_.nu, area0_[k]);
    inert_[k] = airway::inertance(g.length, area0_[k], air_.rho);
    rvisc_[k] = airway::resistance_visc(eta_w_[k], area0_[k], g.length, air_);
    generation_[k] = g.generation;
    collapsible_[k] = g.collapsible ? 1 : 0;
    is_leaf_[k] = tree_.is_leaf(e) ? 1 : 0;
    leaf_unit_[k] = tree_.is_leaf(e) ? tree_.unit_of_leaf(e) : -1;
    rep_leaf_[k] = tree_.leaf_of_unit(tree_.nearest_unit(e));
  }

  unit_leaf_.resize(uz);
  z_unit_.resize(uz);
  wt_unit_.resize(uz);
  for (int u = 0; u < u_; ++u) {
    unit_leaf_[static_cast<std::size_t>(u)] = tree_.leaf_of_unit(u);
    z_unit_[static_cast<std::size_t>(u)] = tree_.geom(tree_.leaf_of_unit(u)).height;
    wt_unit_[static_cast<std::size_t>(u)] = boundary::pleural_weight(
        z_unit_[static_cast<std::size_t>(u)], pleural_);
  }
  v0_.assign(uz, 0.0);
  v_ct_.assign(uz, 0.0);
  trapped_init_.assign(uz, 0);

  p_node_.assign(nz, 0.0);
  q_in_.assign(nz, 0.0);
  q_out_.assign(nz, 0.0);
  area_ = area0_;
  p_ext_.assign(nz, 0.0);
  dpext_.assign(nz, 0.0);
  vol_.assign(uz, 0.0);
  eps_d_.assign(uz, 0.0);
  rd_.assign(nz, rd::RdState{});
  open_eff_.assign(nz, 1);
  trapped_now_.assign(uz, 0);

  cap_.assign(nz, 0.0);
  rsum_.assign(nz, 0.0);
  g_s_.assign(nz, 0.0);
  g_d_.assign(nz, 0.0);
  a_in_.assign(nz, 0.0);
  a_out_.assign(nz, 0.0);
  pext_new_.assign(nz, 0.0);
  m_prev_.assign(nz, 0.0);
  mx_gain_.assign(uz, 0.0);
  mx_hist_.assign(uz, 0.0);
  mx_a_.assign(uz, 0.0);
  mx_b_.assign(uz, 0.0);

  p_it_.assign(nz, 0.0);
  vol_it_.assign(uz, 0.0);
  qi_it_.assign(nz, 0.0);
  qo_it_.assign(nz, 0.0);
  fp_.assign(uz, 0.0);
  row_d_.assign(nz, 0.0);
  row_o_.assign(nz, 0.0);
  row_m_.assign(nz, 0.0);
  rhs_.assign(nz, 0.0);
  x_r_.assign(nz, 0.0);
  x_u_.assign(nz, 0.0);
  dv_r_.assign(uz, 0.0);
  dv_u_.assign(uz, 0.0);
  res_node_.assign(nz, 0.0);
  res_unit_.assign(uz, 0.0);
}

void Network::set_rd_states(std::vector<rd::RdState> states) {
  if (static_cast<int>(states.size()) != n_)
    throw ConfigError("rd state vector size must match element count");
  rd_ = std::move(states);
  refresh_topology();
}

void Network::set_unit_volumes(std::vector<double> v_ct, std::vector<double> v0,
                               std::vector<bool> trapped_init) {
  if (static_cast<int>(v_ct.size()) != u_ || static_cast<int>(v0.size()) != u_ ||
      static_cast<int>(trapped_init.size()) != u_)
    throw ConfigError("unit volume vectors must match unit count");
  v_ct_ = std::move(v_ct);
  v0_ = std::move(v0);
  vol_ = v_ct_;
  for (int u = 0; u < u_; ++u)
    trapped_init_[static_cast<std::size_t>(u)] = trapped_init[static_cast<std::size_t>(u)] ? 1 : 0;
}

bool Network::element_open(int e) const {
  const std::size_t k = static_cast<std::size_t>(e);
  return !collapsible_[k] || rd_[k].open;
}

void Network::refresh_topology() {
  // Ids are parents-first, so one forward sweep propagates blockage.
  for (int e = 0; e < n_; ++e) {
    const std::size_t k = static_cast<std::size_t>(e);
    open_eff_[k] = element_open(e) ? 1 : 0;
  }
  blocked_.assign(static_cast<std::size_t>(n_), 0);
  for (int e = 0; e < n_; ++e) {
    const std::size_t k = static_cast<std::size_t>(e);
    int pa = parent_[k];
    blocked_[k] = (!open_eff_[k] || (pa >= 0 && blocked_[static_cast<std::size_t>(pa)])) ? 1 : 0;
  }
  for (int u = 0; u < u_; ++u)
    trapped_now_[static_cast<std::size_t>(u)] =
        blocked_[static_cast<std::size_t>(unit_leaf_[static_cast<std::size_t>(u)])];
}

void Network::initialize_equilibrium(double p_ao) {
  refresh_topology();
  double trapped_sum = 0;
  for (int u = 0; u < u_; ++u)
    if (trapped_now_[static_cast<std::size_t>(u)]) {
      vol_[static_cast<std::size_t>(u)] = v_ct_[static_cast<std::size_t>(u)];
      trapped_sum += v_ct_[static_cast<std::size_t>(u)];
    }

  auto open_volume = [&](double v_total, bool& ok) {
    double sum = 0;
    double p_vol = pleural_.p_pl0 + c_pl_ * (v_total - pleural_.v_peep);
    for (int u = 0; u < u_; ++u) {
      const std::size_t k = static_cast<std::size_t>(u);
      if (trapped_now_[k]) continue;
      double p_tm = p_ao - (p_vol + wt_unit_[k]);
      auto v = tissue::solve_volume(v0_[k], p_tm, tissue_);
      if (!v) {
        ok = false;
        return 0.0;
      }
      sum += *v;
    }
    ok = true;
    return sum;
  };

  // F(V) = trapped + open(V) - V is strictly decreasing; bisect a bracket.
  double lo = 1e-9, hi = 1.0;
  for (int it = 0; it < 200; ++it) {
    double mid = 0.5 * (lo + hi);
    bool ok = true;
    double f = trapped_sum + open_volume(mid, ok) - mid;
    if (!ok)
      throw SolverError("equilibrium initialization: elastic law not invertible at v_total = " +
                        std::to_string(mid));
    (f > 0 ? lo : hi) = mid;
    if (hi - lo < 1e-16 * hi) break;
  }
  double v_total = 0.5 * (lo + hi);
  double p_vol = pleural_.p_pl0 + c_pl_ * (v_total - pleural_.v_peep);
  for (int u = 0; u < u_; ++u) {
    const std::size_t k = static_cast<std::size_t>(u);
    if (trapped_now_[k]) continue;
    double p_tm = p_ao - (p_vol + wt_unit_[k]);
    auto v = tissue::solve_volume(v0_[k], p_tm, tissue_);
    if (!v)
      throw SolverError("equilibrium initialization failed for unit " + std::to_string(u));
    vol_[k] = *v;
  }

  for (int u = 0; u < u_; ++u) {
    const std::size_t k = static_cast<std::size_t>(u);
    eps_d_[k] = tissue::volumetric_strain(vol_[k], v0_[k]);
  }
  std::fill(p_node_.begin(), p_node_.end(), p_ao);
  std::fill(q_in_.begin(), q_in_.end(), 0.0);
  std::fill(q_out_.begin(), q_out_.end(), 0.0);
  area_ = area0_;
  std::fill(p_ext_.begin(), p_ext_.end(), p_ao);
  std::fill(dpext_.begin(), dpext_.end(), 0.0);
  // Trapped alveolar pressure follows the material law at the frozen volume.
  for (int u = 0; u < u_; ++u) {
    const std::size_t k = static_cast<std::size_t>(u);
    if (!trapped_now_[k]) continue;
    double p_pl = p_vol + wt_unit_[k];
    p_node_[static_cast<std::size_t>(unit_leaf_[k])] =
        p_pl + tissue::unit_pressure(vol_[k], v0_[k], eps_d_[k], tissue_);
  }
  for (int e = 0; e < n_; ++e) {
    const std::size_t k = static_cast<std::size_t>(e);
    p_ext_[k] = p_node_[static_cast<std::size_t>(rep_leaf_[k])];
  }
  p_ao_prev_ = p_ao;
  wall_stored_ = 0;
  q_ao_integral_ = 0;
  max_junction_rel_ = 0;
  t_ = 0;
}

void Network::prepare_step(double h, double p_ao_old) {
  h_ = h;
  const double theta = cfg_.theta;
  refresh_topology();
  for (int e = 0; e < n_; ++e) {
    const std::size_t k = static_cast<std::size_t>(e);
    double p_u = parent_[k] < 0 ? p_ao_old : p_node_[static_cast<std::size_t>(parent_[k])];
    double p_w = p_node_[k];
    double m_n = 0.5 * (p_u + p_w) - p_ext_[k];
    m_prev_[k] = m_n;
    bool open = open_eff_[k] != 0;

    // Quasi-static wall distension: area follows the previous transmural
    // pressure through the compliance relation, frozen while closed.
    if (open && cap_[k] > 0) {
      double a = area0_[k] + cap_[k] * m_n / length_[k];
      area_[k] = std::clamp(a, 0.2 * area0_[k], 5.0 * area0_[k]);
    }
    double cap_raw = airway::capacitance(area_[k], length_[k], eta_w_[k]);
    double r_mu = airway::resistance_mu(length_[k], area_[k], generation_[k], q_out_[k], air_);
    double r_conv = airway::resistance_conv(area_[k], q_in_[k], q_out_[k], air_);
    double cap = open ? cap_raw : 0.0;
    double rsum = (open ? r_mu : rd::kClosedResistance) + r_conv;
    cap_[k] = cap;
    rsum_[k] = rsum;

    // Leaf elements see their own unit's alveolar pressure as the external
    // load; that node is part of the unknowns, so the transmural term is
    // implicit there. Elsewhere the nearest unit's pressure is lagged with a
    // first-order predictor.
    pext_new_[k] = p_ext_[k] + dpext_[k] * h;
    double d_n = q_out_[k] - q_in_[k];
    double s_n = q_out_[k] + q_in_[k];

    double denom_d = theta + cap * rvisc_[k] / h;
    double beta_d = -(cap / (2 * h)) / denom_d;
    double alpha_d;
    if (is_leaf_[k])
      alpha_d = ((cap * rvisc_[k] / h - (1 - theta)) * d_n + (cap / h) * m_n) / denom_d;
    else
      alpha_d =
          ((cap * rvisc_[k] / h - (1 - theta)) * d_n + (cap / h) * (pext_new_[k] + m_n)) / denom_d;
    double denom_s = inert_[k] / (2 * h) + theta * rsum / 2;
    double beta_s = theta / denom_s;
    double alpha_s =
        ((inert_[k] / (2 * h) - (1 - theta) * rsum / 2) * s_n - (1 - theta) * (p_w - p_u)) /
        denom_s;

    g_s_[k] = beta_s / 2;
    g_d_[k] = beta_d / 2;
    a_in_[k] = (alpha_s - alpha_d) / 2;
    a_out_[k] = (alpha_s + alpha_d) / 2;
  }
  for (int u = 0; u < u_; ++u) {
    const std::size_t k = static_cast<std::size_t>(u);
    double eps_n = tissue::volumetric_strain(vol_[k], v0_[k]);
    tissue::MaxwellStep ms = tissue::maxwell_step(tissue_, h, theta, eps_n, eps_d_[k]);
    mx_gain_[k] = ms.gain;
    mx_hist_[k] = ms.hist;
    mx_a_[k] = ms.a;
    mx_b_[k] = ms.b;
  }
}

void Network::compute_flows(double p_ao_new) {
  for (int e = 0; e < n_; ++e) {
    const std::size_t k = static_cast<std::size_t>(e);
    double p_u = parent_[k] < 0 ? p_ao_new : p_it_[static_cast<std::size_t>(parent_[k])];
    double p_w = p_it_[k];
    double gs = g_s_[k], gd = g_d_[k];
    if (is_leaf_[k]) {
      // implicit transmural term: both flows driven by the local drop
      qi_it_[k] = a_in_[k] + (gs - gd) * (p_u - p_w);
      qo_it_[k] = a_out_[k] + (gs + gd) * (p_u - p_w);
    } else {
      qi_it_[k] = a_in_[k] + (gs - gd) * p_u - (gs + gd) * p_w;
      qo_it_[k] = a_out_[k] + (gs + gd) * p_u - (gs - gd) * p_w;
    }
  }
}

double Network::residual_norm(double p_ao_new) {
  const double theta = cfg_.theta;
  double v_sum = 0;
  for (int u = 0; u < u_; ++u) v_sum += vol_it_[static_cast<std::size_t>(u)];
  double p_vol = pleural_.p_pl0 + c_pl_ * (v_sum - pleural_.v_peep);

  double s_q = kFlowFloor, s_p = kPressureFloor, s_v = kVolumeFloor;
  for (int e = 0; e < n_; ++e) {
    const std::size_t k = static_cast<std::size_t>(e);
    s_q = std::max({s_q, std::abs(qi_it_[k]), std::abs(qo_it_[k])});
    s_p = std::max(s_p, std::abs(p_it_[k]));
  }
  s_p = std::max(s_p, std::abs(p_ao_new));
  for (int u = 0; u < u_; ++u) s_v = std::max(s_v, std::abs(vol_it_[static_cast<std::size_t>(u)]));

  double norm = 0;
  for (int e = 0; e < n_; ++e) {
    const std::size_t k = static_cast<std::size_t>(e);
    if (!is_leaf_[k]) {
      double f = qo_it_[k] - qi_it_[static_cast<std::size_t>(child0_[k])] -
                 qi_it_[static_cast<std::size_t>(child1_[k])];
      res_node_[k] = f;
      norm = std::max(norm, std::abs(f) / s_q);
    } else {
      const int u = leaf_unit_[k];
      const std::size_t uk = static_cast<std::size_t>(u);
      double v = vol_it_[uk];
      double r_c;
      if (trapped_now_[uk]) {
        r_c = v - vol_[uk];
        norm = std::max(norm, std::abs(r_c) / s_v);
      } else {
        r_c = (v - vol_[uk]) / h_ - theta * qo_it_[k] - (1 - theta) * q_out_[k];
        norm = std::max(norm, std::abs(r_c) / s_q);
      }
      res_node_[k] = r_c;
      double p_pl = p_vol + wt_unit_[uk];
      double f_mat = tissue::elastic_pressure(v, v0_[uk], tissue_) +
                     mx_gain_[uk] * tissue::volumetric_strain(v, v0_[uk]) + mx_hist_[uk];
      double r_m = p_it_[k] - p_pl - f_mat;
      res_unit_[uk] = r_m;
      norm = std::max(norm, std::abs(r_m) / s_p);
    }
  }
  return norm;
}

void Network::build_rows(std::vector<double>& d, std::vector<double>& o,
                         std::vector<double>& m) const {
  const double theta = cfg_.theta;
  for (int e = 0; e < n_; ++e) {
    const std::size_t k = static_cast<std::size_t>(e);
    double gs = g_s_[k], gd = g_d_[k];
    if (!is_leaf_[k]) {
      m[k] = gs + gd;
      double diag = -(gs - gd);
      diag -= g_s_[static_cast<std::size_t>(child0_[k])] - g_d_[static_cast<std::size_t>(child0_[k])];
      diag -= g_s_[static_cast<std::size_t>(child1_[k])] - g_d_[static_cast<std::size_t>(child1_[k])];
      d[k] = diag;
      o[k] = gs + gd;
    } else {
      m[k] = gs - gd;  // the leaf's inflow depends on the local drop only
      const std::size_t uk = static_cast<std::size_t>(leaf_unit_[k]);
      if (trapped_now_[uk]) {
        d[k] = 1.0;
        o[k] = 0.0;
      } else {
        d[k] = theta * (gs + gd) + 1.0 / (h_ * fp_[uk]);
        o[k] = -theta * (gs + gd);
      }
    }
  }
}

void Network::solve_increment(double p_ao_new, std::vector<double>& dp, std::vector<double>& dv) {
  (void)p_ao_new;
  // Material-law slopes at the current iterate.
  for (int u = 0; u < u_; ++u) {
    const std::size_t k = static_cast<std::size_t>(u);
    double fp = tissue::elastic_pressure_dv(vol_it_[k], v0_[k], tissue_) + mx_gain_[k] / v0_[k];
    if (!(fp > 0) || !std::isfinite(fp))
      throw SolverError("non-monotone material response at unit " + std::to_string(u));
    fp_[k] = fp;
  }
  build_rows(row_d_, row_o_, row_m_);
  lin_.factor(row_d_, row_o_, row_m_);

  // Residual solve: b = -R with the unit pair condensed into the leaf row.
  for (int e = 0; e < n_; ++e) {
    const std::size_t k = static_cast<std::size_t>(e);
    if (!is_leaf_[k]) {
      rhs_[k] = -res_node_[k];
    } else {
      const std::size_t uk = static_cast<std::size_t>(leaf_unit_[k]);
      if (trapped_now_[uk])
        rhs_[k] = -res_unit_[uk] - fp_[uk] * res_node_[k];
      else
        rhs_[k] = -res_node_[k] - res_unit_[uk] / (h_ * fp_[uk]);
    }
  }
  lin_.solve(rhs_, x_r_);

  // Rank-one solve: b = u (unit sources on the material rows).
  for (int e = 0; e < n_; ++e) {
    const std::size_t k = static_cast<std::size_t>(e);
    if (!is_leaf_[k]) {
      rhs_[k] = 0.0;
    } else {
      const std::size_t uk = static_cast<std::size_t>(leaf_unit_[k]);
      rhs_[k] = trapped_now_[uk] ? 1.0 : 1.0 / (h_ * fp_[uk]);
    }
  }
  lin_.solve(rhs_, x_u_);

  double vr = 0, vu = 0;
  for (int u = 0; u < u_; ++u) {
    const std::size_t k = static_cast<std::size_t>(u);
    const std::size_t leaf = static_cast<std::size_t>(unit_leaf_[k]);
    if (trapped_now_[k]) {
      dv_r_[k] = -res_node_[leaf];  // continuity residual of the trapped pair
      dv_u_[k] = 0.0;
    } else {
      dv_r_[k] = (x_r_[leaf] + res_unit_[k]) / fp_[k];
      dv_u_[k] = (x_u_[leaf] - 1.0) / fp_[k];
    }
    vr += dv_r_[k];
    vu += dv_u_[k];
  }
  double denom = 1.0 - c_pl_ * vu;
  if (!(std::abs(denom) > 1e-14))
    throw SolverError("pleural volume coupling is singular");
  double ratio = -c_pl_ * vr / denom;
  for (int e = 0; e < n_; ++e) {
    const std::size_t k = static_cast<std::size_t>(e);
    dp[k] = x_r_[k] - ratio * x_u_[k];
  }
  for (int u = 0; u < u_; ++u) {
    const std::size_t k = static_cast<std::size_t>(u);
    dv[k] = dv_r_[k] - ratio * dv_u_[k];
  }
}

Network::NewtonOutcome Network::newton(double p_ao_new) {
  NewtonOutcome out;
  p_it_ = p_node_;
  vol_it_ = vol_;
  std::vector<double>& dp = dp_;
  std::vector<double>& dv = dvol_;
  dp.assign(static_cast<std::size_t>(n_), 0.0);
  dv.assign(static_cast<std::size_t>(u_), 0.0);

  for (int solves = 0;; ++solves) {
    compute_flows(p_ao_new);
    double norm = residual_norm(p_ao_new);
    if (!std::isfinite(norm)) return out;
    if (norm < cfg_.newton_tol) {
      out.converged = true;
      out.iterations = solves;
      return out;
    }
    if (solves >= cfg_.newton_max_iter) return out;
    try {
      solve_increment(p_ao_new, dp, dv);
    } catch (const SolverError&) {
      return out;
    }
    // Keep volumes positive; halve the update if an overshoot would leave
    // the material law's domain.
    double lambda = 1.0;
    for (int back = 0; back < 60; ++back) {
      bool ok = true;
      for (int u = 0; u < u_; ++u) {
        const std::size_t k = static_cast<std::size_t>(u);
        if (vol_it_[k] + lambda * dv[k] <= 0) {
          ok = false;
          break;
        }
      }
      if (ok) break;
      lambda *= 0.5;
    }
    for (int e = 0; e < n_; ++e) p_it_[static_cast<std::size_t>(e)] += lambda * dp[static_cast<std::size_t>(e)];
    for (int u = 0; u < u_; ++u) vol_it_[static_cast<std::size_t>(u)] += lambda * dv[static_cast<std::size_t>(u)];
  }
}

void Network::commit(double h, double p_ao_new) {
  const double theta = cfg_.theta;
  // Flows are affine in the node pressures, so the junction equations are
  // satisfied to rounding at the converged iterate; track the worst case.
  for (int e = 0; e < n_; ++e) {
    const std::size_t k = static_cast<std::size_t>(e);
    if (is_leaf_[k]) continue;
    double f = qo_it_[k] - qi_it_[static_cast<std::size_t>(child0_[k])] -
               qi_it_[static_cast<std::size_t>(child1_[k])];
    double scale = std::max(std::abs(qo_it_[k]), kFlowFloor);
    max_junction_rel_ = std::max(max_junction_rel_, std::abs(f) / scale);
  }

  for (int e = 0; e < n_; ++e) {
    const std::size_t k = static_cast<std::size_t>(e);
    if (cap_[k] <= 0) continue;
    double p_u = parent_[k] < 0 ? p_ao_new : p_it_[static_cast<std::size_t>(parent_[k])];
    double p_ext = is_leaf_[k] ? p_it_[k] : pext_new_[k];
    double m_new = 0.5 * (p_u + p_it_[k]) - p_ext;
    double d_new = qo_it_[k] - qi_it_[k];
    double d_old = q_out_[k] - q_in_[k];
    wall_stored_ += cap_[k] * (m_new - m_prev_[k]) + cap_[k] * rvisc_[k] * (d_new - d_old);
  }
  const std::size_t root = static_cast<std::size_t>(tree_.root());
  q_ao_integral_ += h * (theta * qi_it_[root] + (1 - theta) * q_in_[root]);

  for (int u = 0; u < u_; ++u) {
    const std::size_t k = static_cast<std::size_t>(u);
    double eps = tissue::volumetric_strain(vol_it_[k], v0_[k]);
    eps_d_[k] = tissue_.visc_modulus > 0 ? mx_a_[k] + mx_b_[k] * eps : eps;
  }
  for (int e = 0; e < n_; ++e) {
    const std::size_t k = static_cast<std::size_t>(e);
    if (!collapsible_[k]) continue;
    double p_in = parent_[k] < 0 ? p_ao_new : p_it_[static_cast<std::size_t>(parent_[k])];
    rd_[k] = rd::step_trajectory(rd_[k], p_in, h);
  }
  for (int e = 0; e < n_; ++e) {
    const std::size_t k = static_cast<std::size_t>(e);
    double pe = p_it_[static_cast<std::size_t>(rep_leaf_[k])];
    dpext_[k] = (pe - p_ext_[k]) / h;
    p_ext_[k] = pe;
  }

  p_node_.swap(p_it_);
  q_in_.swap(qi_it_);
  q_out_.swap(qo_it_);
  vol_.swap(vol_it_);
  p_ao_prev_ = p_ao_new;
  t_ += h;
}

bool Network::try_step(double t0, double h, int depth, const boundary::Waveform& wf,
                       StepStats& stats) {
  double p_ao_new = wf.eval(t0 + h);
  prepare_step(h, p_ao_prev_);
  NewtonOutcome out = newton(p_ao_new);
  if (out.converged) {
    stats.newton_iterations += out.iterations;
    commit(h, p_ao_new);
    return true;
  }
  if (depth >= cfg_.max_halvings) return false;
  ++stats.rejections;
  return try_step(t0, h / 2, depth + 1, wf, stats) &&
         try_step(t0 + h / 2, h / 2, depth + 1, wf, stats);
}

StepStats Network::step(const boundary::Waveform& p_ao) {
  StepStats stats;
  if (!try_step(t_, cfg_.dt, 0, p_ao, stats))
    throw SolverError("time step failed at t = " + std::to_string(t_) +
                      " s: Newton did not converge even at dt = " +
                      std::to_string(cfg_.dt / (1 << cfg_.max_halvings)) + " s");
  return stats;
}

double Network::v_total_units() const {
  double s = 0;
  for (double v : vol_) s += v;
  return s;
}

double Network::pct_open() const {
  int open = 0;
  for (int e = 0; e < n_; ++e) open += element_open(e) ? 1 : 0;
  return 100.0 * open / n_;
}

double Network::pct_open_collapsible() const {
  int open = 0, coll = 0;
  for (int e = 0; e < n_; ++e) {
    if (!collapsible_[static_cast<std::size_t>(e)]) continue;
    ++coll;
    open += rd_[static_cast<std::size_t>(e)].open ? 1 : 0;
  }
  return coll == 0 ? 100.0 : 100.0 * open / coll;
}

double Network::pleural_at(double z) const {
  return boundary::pleural_pressure(v_total_units(), z, pleural_);
}

SystemState Network::state() const {
  SystemState s;
  s.t = t_;
  s.node_pressure = p_node_;
  s.q_in = q_in_;
  s.q_out = q_out_;
  s.unit_volume = vol_;
  s.rd = rd_;
  return s;
}

DebugLinearization Network::linearize(double p_ao_new, double h) {
  prepare_step(h, p_ao_prev_);
  p_it_ = p_node_;
  vol_it_ = vol_;
  compute_flows(p_ao_new);
  residual_norm(p_ao_new);

  std::vector<double> dp(static_cast<std::size_t>(n_)), dv(static_cast<std::size_t>(u_));
  solve_increment(p_ao_new, dp, dv);

  DebugLinearization out;
  out.n_nodes = n_;
  out.n_units = u_;
  const double theta = cfg_.theta;
  out.rank1_u.assign(static_cast<std::size_t>(n_ + u_), 0.0);
  out.rank1_v.assign(static_cast<std::size_t>(n_ + u_), 0.0);
  out.residual.assign(static_cast<std::size_t>(n_ + u_), 0.0);
  out.delta.assign(static_cast<std::size_t>(n_ + u_), 0.0);
  auto add = [&](int r, int c, double v) { out.jacobian.push_back({r, c, v}); };
  auto child_coupling = [&](int c) {
    const std::size_t ck = static_cast<std::size_t>(c);
    return is_leaf_[ck] ? g_s_[ck] - g_d_[ck] : g_s_[ck] + g_d_[ck];
  };
  for (int e = 0; e < n_; ++e) {
    const std::size_t k = static_cast<std::size_t>(e);
    double gs = g_s_[k], gd = g_d_[k];
    out.residual[k] = res_node_[k];
    out.delta[k] = dp[k];
    if (!is_leaf_[k]) {
      add(e, e, -(gs - gd) - (g_s_[static_cast<std::size_t>(child0_[k])] - g_d_[static_cast<std::size_t>(child0_[k])]) -
                    (g_s_[static_cast<std::size_t>(child1_[k])] - g_d_[static_cast<std::size_t>(child1_[k])]));
      if (parent_[k] >= 0) add(e, parent_[k], gs + gd);
      add(e, child0_[k], child_coupling(child0_[k]));
      add(e, child1_[k], child_coupling(child1_[k]));
    } else {
      const int u = leaf_unit_[k];
      const std::size_t uk = static_cast<std::size_t>(u);
      if (trapped_now_[uk]) {
        add(e, n_ + u, 1.0);
      } else {
        add(e, n_ + u, 1.0 / h_);
        add(e, e, theta * (gs + gd));
        if (parent_[k] >= 0) add(e, parent_[k], -theta * (gs + gd));
      }
      add(n_ + u, e, 1.0);
      add(n_ + u, n_ + u, -fp_[uk]);
      out.rank1_u[static_cast<std::size_t>(n_ + u)] = 1.0;
      out.rank1_v[static_cast<std::size_t>(n_ + u)] = -c_pl_;
      out.residual[static_cast<std::size_t>(n_ + u)] = res_unit_[uk];
      out.delta[static_cast<std::size_t>(n_ + u)] = dv[uk];
    }
  }
  return out;
}

}  // namespace lungsim
