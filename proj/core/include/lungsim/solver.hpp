#pragma once

#include <cstdint>
#include <vector>

#include "lungsim/airway.hpp"
#include "lungsim/boundary.hpp"
#include "lungsim/rd.hpp"
#include "lungsim/tissue.hpp"
#include "lungsim/tree.hpp"
#include "lungsim/treesolve.hpp"

namespace lungsim {

struct SolverConfig {
  double dt = 1e-3;        // s, base time step
  double newton_tol = 1e-8;
  int newton_max_iter = 30;
  double theta = 1.0;      // time-integration blend; 1 = implicit Euler
  int max_halvings = 6;    // dt may shrink to dt / 2^max_halvings on rejection

  void validate() const;
};

// Snapshot of the full unknown vector, mainly for tests and diagnostics.
struct SystemState {
  double t = 0;
  std::vector<double> node_pressure;  // per element: pressure of its distal node
  std::vector<double> q_in, q_out;    // per element
  std::vector<double> unit_volume;    // per unit
  std::vector<rd::RdState> rd;        // per element; meaningful on collapsible ones
};

struct StepStats {
  int newton_iterations = 0;
  int rejections = 0;
};

// Sparse linearization of the reduced system (node pressures + unit volumes)
// at the committed state, plus the rank-one pleural-volume coupling and the
// Newton increment the solver would take. Exposed for cross-checking the
// tree factorization against a dense reference on small networks.
struct DebugLinearization {
  int n_nodes = 0;
  int n_units = 0;
  struct Entry {
    int row, col;
    double value;
  };
  std::vector<Entry> jacobian;   // without the rank-one part
  std::vector<double> rank1_u;   // J = jacobian + u v^T
  std::vector<double> rank1_v;
  std::vector<double> residual;
  std::vector<double> delta;     // increment computed by the internal solver
};

// Coupled airway/tissue network advanced with a theta-method and Newton
// iterations. Within a step the airway coefficients are frozen at the
// previous state, so the only per-iteration nonlinearity is the terminal
// units' material law. Flows are eliminated element-locally, the pleural
// volume coupling is a rank-one update handled by two tree solves per
// iteration (Sherman-Morrison), and the remaining pressure system is solved
// directly on the tree.
class Network {
 public:
  Network(AirwayTree tree, tissue::TissueParams tissue, boundary::PleuralModel pleural,
          airway::AirPhysics air, SolverConfig solver);

  void set_rd_states(std::vector<rd::RdState> states);
  void set_unit_volumes(std::vector<double> v_ct, std::vector<double> v0,
                        std::vector<bool> trapped_init);

  // Static no-flow solution at a constant opening pressure: trapped units
  // hold their imaged volume, open units equilibrate against the pleural
  // pressure at the self-consistent total volume.
  void initialize_equilibrium(double p_ao);

  // Advance by one base step; rejected steps recurse on halved substeps.
  StepStats step(const boundary::Waveform& p_ao);

  double t() const { return t_; }
  const AirwayTree& tree() const { return tree_; }

  double v_total_units() const;
  double wall_storage() const { return wall_stored_; }
  double opening_flow_integral() const { return q_ao_integral_; }
  double q_opening() const { return q_in_[static_cast<std::size_t>(tree_.root())]; }
  double max_junction_residual() const { return max_junction_rel_; }

  double pct_open() const;              // open airways / all airways
  double pct_open_collapsible() const;  // open collapsible / collapsible

  double node_pressure(int e) const { return p_node_[static_cast<std::size_t>(e)]; }
  double unit_volume(int u) const { return vol_[static_cast<std::size_t>(u)]; }
  double unit_v0(int u) const { return v0_[static_cast<std::size_t>(u)]; }
  bool unit_trapped_now(int u) const { return trapped_now_[static_cast<std::size_t>(u)] != 0; }
  bool unit_trapped_init(int u) const { return trapped_init_[static_cast<std::size_t>(u)] != 0; }
  const rd::RdState& rd_state(int e) const { return rd_[static_cast<std::size_t>(e)]; }
  bool element_open(int e) const;
  double pleural_at(double z) const;  // at the current total volume

  SystemState state() const;

  DebugLinearization linearize(double p_ao_new, double h);

 private:
  struct NewtonOutcome {
    bool converged = false;
    int iterations = 0;
  };

  void prepare_step(double h, double p_ao_old);
  void compute_flows(double p_ao_new);
  double residual_norm(double p_ao_new);
  void build_rows(std::vector<double>& d, std::vector<double>& o, std::vector<double>& m) const;
  void solve_increment(double p_ao_new, std::vector<double>& dp, std::vector<double>& dv);
  NewtonOutcome newton(double p_ao_new);
  bool try_step(double t0, double h, int depth, const boundary::Waveform& wf, StepStats& stats);
  void commit(double h, double p_ao_new);
  void refresh_topology();

  AirwayTree tree_;
  tissue::TissueParams tissue_;
  boundary::PleuralModel pleural_;
  airway::AirPhysics air_;
  SolverConfig cfg_;
  TreeLinearSolver lin_;

  int n_ = 0;  // elements / nodes
  int u_ = 0;  // units
  double c_pl_ = 0;

  // static per-element data
  std::vector<int> parent_, child0_, child1_;
  std::vector<double> length_, area0_, eta_w_, inert_, rvisc_;
  std::vector<int> generation_;
  std::vector<std::uint8_t> collapsible_, is_leaf_;
  std::vector<int> leaf_unit_;     // unit id for leaves, -1 otherwise
  std::vector<int> rep_leaf_;      // leaf element whose unit loads this element
  // static per-unit data
  std::vector<int> unit_leaf_;
  std::vector<double> z_unit_, wt_unit_, v0_, v_ct_;
  std::vector<std::uint8_t> trapped_init_;

  // committed dynamic state
  double t_ = 0;
  double p_ao_prev_ = 0;
  std::vector<double> p_node_, q_in_, q_out_, area_, p_ext_, dpext_;
  std::vector<double> vol_, eps_d_;
  std::vector<rd::RdState> rd_;
  std::vector<std::uint8_t> open_eff_;     // flags applied to the current step
  std::vector<std::uint8_t> trapped_now_;  // per unit
  double wall_stored_ = 0;
  double q_ao_integral_ = 0;
  double max_junction_rel_ = 0;

  // per-step frozen coefficients and stencils
  double h_ = 0;
  std::vector<double> cap_, rsum_, g_s_, g_d_, a_in_, a_out_, pext_new_, m_prev_;
  std::vector<double> mx_gain_, mx_hist_, mx_a_, mx_b_;

  // Newton iterate and scratch
  std::vector<double> p_it_, vol_it_, qi_it_, qo_it_;
  std::vector<double> fp_, res_node_, res_unit_;
  std::vector<double> row_d_, row_o_, row_m_, rhs_, x_r_, x_u_, dv_r_, dv_u_;
  std::vector<double> dp_, dvol_;
  std::vector<std::uint8_t> blocked_;
};

}  // namespace lungsim
