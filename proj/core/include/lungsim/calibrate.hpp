#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "lungsim/tissue.hpp"

namespace lungsim::calibrate {

struct PvSample {
  double t = 0;     // s
  double p_tp = 0;  // Pa, transpulmonary pressure
  double p_pl = 0;  // Pa, pleural pressure
  double v = 0;     // m3
};

// Quasi-static PV recording restricted to its inspiratory segment. Samples
// below the lower inflection pressure are excluded from tissue fitting
// because that part of the curve mixes recruitment into the elastic
// response.
class PvRecord {
 public:
  PvRecord(std::vector<PvSample> samples, std::optional<double> cutoff_pa = std::nullopt);
  static PvRecord from_csv(const std::string& path,
                           std::optional<double> cutoff_pa = std::nullopt);

  const std::vector<PvSample>& all() const { return samples_; }
  // Inspiratory samples at or above the cutoff, ordered by pressure.
  const std::vector<PvSample>& fit_samples() const { return fit_; }
  double cutoff() const { return cutoff_; }
  double v_peep() const { return v_peep_; }  // first inspiratory volume
  double v_max() const { return v_max_; }    // last inspiratory volume

 private:
  std::vector<PvSample> samples_;
  std::vector<PvSample> fit_;
  double cutoff_ = 0;
  double v_peep_ = 0;
  double v_max_ = 0;
};

// Detects the lower inflection pressure as the last sign change of the
// smoothed second derivative of V(P) from convex to concave. Returns nothing
// when the curve shows no such change.
std::optional<double> detect_lower_inflection(const std::vector<PvSample>& inspiratory);

struct TissueFitOptions {
  int max_iterations = 200;
  double param_tol = 1e-8;  // relative parameter change
  // Multi-start grid, in clinical units to match how the bounds are usually
  // quoted.
  std::array<double, 5> kappa_starts_mbar{0.5, 2.0, 5.0, 10.0, 20.0};
  std::array<double, 5> beta_starts{-6.0, -4.0, -2.0, -1.0, -0.5};
  // When the lumped reference volume is known (from the volume
  // initialization), fixing it makes the fit a well-conditioned
  // two-parameter problem; otherwise v0 is estimated alongside.
  std::optional<double> fixed_v0;
};

struct TissueFit {
  double kappa = 0;  // Pa
  double beta = 0;
  double v0 = 0;  // m3, lumped reference volume (nuisance parameter)
  double residual_norm = 0;                       // sqrt(sum of squared volume residuals)
  std::array<std::array<double, 2>, 2> covariance{};  // (kappa, beta) block
  int iterations = 0;
  int best_start = -1;
  bool converged = false;
};

// Least-squares fit of the lumped elastic law to (P_tp, V); the residual is
// defined on volume (the law is inverted per sample). Damped Gauss-Newton
// over (kappa, beta, v0) from a deterministic multi-start grid; the winner
// is the converged start with the smallest residual, ties broken by start
// index. Throws SolverError when no start converges.
TissueFit fit_tissue(const PvRecord& pv, const TissueFitOptions& opts = {});

struct ChestWallFit {
  double p_pl0 = 0;     // Pa
  double p_pl_lin = 0;  // Pa
  double r_squared = 0;
};

// Ordinary least squares of P_pl against the volume fraction of the
// maneuver. The volume anchors are the first and last inspiratory samples.
ChestWallFit fit_chest_wall(const PvRecord& pv);

}  // namespace lungsim::calibrate
