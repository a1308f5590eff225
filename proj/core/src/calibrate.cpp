#include "lungsim/calibrate.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "lungsim/csv.hpp"
#include "lungsim/errors.hpp"
#include "lungsim/units.hpp"

namespace lungsim::calibrate {

namespace {

std::vector<PvSample> inspiratory_segment(const std::vector<PvSample>& samples) {
  // Longest run of strictly increasing volume; quasi-static recordings hold
  // exactly one such maneuver.
  std::size_t best_begin = 0, best_len = 1, begin = 0;
  for (std::size_t i = 1; i <= samples.size(); ++i) {
    if (i == samples.size() || !(samples[i].v > samples[i - 1].v)) {
      if (i - begin > best_len) {
        best_len = i - begin;
        best_begin = begin;
      }
      begin = i;
    }
  }
  return {samples.begin() + static_cast<std::ptrdiff_t>(best_begin),
          samples.begin() + static_cast<std::ptrdiff_t>(best_begin + best_len)};
}

}  // namespace

std::optional<double> detect_lower_inflection(const std::vector<PvSample>& insp) {
  if (insp.size() < 5) return std::nullopt;
  // Three-point moving average of V, then discrete second derivative in P.
  std::vector<double> p(insp.size()), v(insp.size());
  for (std::size_t i = 0; i < insp.size(); ++i) {
    p[i] = insp[i].p_tp;
    v[i] = insp[i].v;
  }
  std::vector<double> vs(v);
  for (std::size_t i = 1; i + 1 < v.size(); ++i) vs[i] = (v[i - 1] + v[i] + v[i + 1]) / 3.0;
  std::optional<double> cutoff;
  double prev = 0;
  bool have_prev = false;
  for (std::size_t i = 1; i + 1 < vs.size(); ++i) {
    double h1 = p[i] - p[i - 1], h2 = p[i + 1] - p[i];
    if (!(h1 > 0 && h2 > 0)) continue;
    double d2 = 2.0 * (vs[i + 1] * h1 - vs[i] * (h1 + h2) + vs[i - 1] * h2) /
                (h1 * h2 * (h1 + h2));
    if (have_prev && prev > 0 && d2 <= 0) cutoff = p[i];
    prev = d2;
    have_prev = true;
  }
  return cutoff;
}

PvRecord::PvRecord(std::vector<PvSample> samples, std::optional<double> cutoff_pa)
    : samples_(std::move(samples)) {
  if (samples_.size() < 2) throw ConfigError("PV record needs at least two samples");
  // Segment extraction relies on recording order; restore it by time so the
  // result is independent of how the rows were handed over.
  std::stable_sort(samples_.begin(), samples_.end(),
                   [](const PvSample& a, const PvSample& b) { return a.t < b.t; });
  std::vector<PvSample> insp = inspiratory_segment(samples_);
  if (insp.size() < 2) throw ConfigError("PV record has no inspiratory segment");
  v_peep_ = insp.front().v;
  v_max_ = insp.back().v;
  cutoff_ = cutoff_pa ? *cutoff_pa
                      : detect_lower_inflection(insp).value_or(-std::numeric_limits<double>::infinity());
  for (const PvSample& s : insp)
    if (s.p_tp >= cutoff_) fit_.push_back(s);
  std::sort(fit_.begin(), fit_.end(), [](const PvSample& a, const PvSample& b) {
    return a.p_tp < b.p_tp;
  });
  if (fit_.size() < 8)
    throw ConfigError("PV record keeps only " + std::to_string(fit_.size()) +
                      " samples above the inflection cutoff; at least 8 are required");
  for (std::size_t i = 1; i < fit_.size(); ++i)
    if (!(fit_[i].v > fit_[i - 1].v))
      throw ConfigError("PV record: volume must be strictly increasing on the inspiratory segment");
}

PvRecord PvRecord::from_csv(const std::string& path, std::optional<double> cutoff_pa) {
  csv::Table t = csv::read_table(path, {"t_s", "p_tp_mbar", "p_pl_mbar", "v_m3"});
  std::vector<PvSample> samples;
  for (const auto& r : t.rows) {
    PvSample s;
    s.t = csv::parse_double(t, r, 0, "t_s");
    s.p_tp = units::mbar_to_pa(csv::parse_double(t, r, 1, "p_tp_mbar"));
    s.p_pl = units::mbar_to_pa(csv::parse_double(t, r, 2, "p_pl_mbar"));
    s.v = csv::parse_double(t, r, 3, "v_m3");
    samples.push_back(s);
  }
  return PvRecord(std::move(samples), cutoff_pa);
}

namespace {

struct Residuals {
  bool valid = false;
  double ssr = 0;
  std::vector<double> r;                  // model - data, volume
  std::vector<std::array<double, 3>> jac;  // d r / d (kappa, beta, v0)
};

Residuals evaluate(const std::vector<PvSample>& data, double kappa, double beta, double v0,
                   bool with_jacobian) {
  Residuals out;
  if (!(kappa > 0) || beta == 0 || beta > -1e-6 || !(v0 > 0)) return out;
  tissue::TissueParams params;
  params.kappa = kappa;
  params.beta = beta;
  out.r.resize(data.size());
  if (with_jacobian) out.jac.resize(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) {
    double p = data[i].p_tp;
    auto v_model = tissue::solve_volume(v0, p, params);
    if (!v_model || !(*v_model > 0)) return out;
    double w = v0 / *v_model;
    out.r[i] = *v_model - data[i].v;
    out.ssr += out.r[i] * out.r[i];
    if (with_jacobian) {
      // Implicit differentiation of g(w) = (kappa/beta)(w - w^(1+beta)) - p.
      double wb = std::pow(w, beta);
      double g = kappa / beta * (w - w * wb);
      double dg_dw = kappa / beta * (1.0 - (1.0 + beta) * wb);
      double dg_dk = g / kappa;
      double dg_db = -g / beta - kappa / beta * w * wb * std::log(w);
      if (!(std::abs(dg_dw) > 0)) return out;
      double dw_dk = -dg_dk / dg_dw;
      double dw_db = -dg_db / dg_dw;
      double dv_dw = -v0 / (w * w);
      out.jac[i] = {dv_dw * dw_dk, dv_dw * dw_db, 1.0 / w};
    }
  }
  out.valid = true;
  return out;
}

// Cholesky solve of the np x np normal equations with Levenberg damping.
bool solve_normal(const std::array<std::array<double, 3>, 3>& a, const std::array<double, 3>& b,
                  std::array<double, 3>& x, int np) {
  std::array<std::array<double, 3>, 3> l{};
  for (int i = 0; i < np; ++i) {
    for (int j = 0; j <= i; ++j) {
      double s = a[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
      for (int k = 0; k < j; ++k)
        s -= l[static_cast<std::size_t>(i)][static_cast<std::size_t>(k)] *
             l[static_cast<std::size_t>(j)][static_cast<std::size_t>(k)];
      if (i == j) {
        if (!(s > 0)) return false;
        l[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] = std::sqrt(s);
      } else {
        l[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] =
            s / l[static_cast<std::size_t>(j)][static_cast<std::size_t>(j)];
      }
    }
  }
  std::array<double, 3> y{};
  for (int i = 0; i < np; ++i) {
    double s = b[static_cast<std::size_t>(i)];
    for (int k = 0; k < i; ++k)
      s -= l[static_cast<std::size_t>(i)][static_cast<std::size_t>(k)] * y[static_cast<std::size_t>(k)];
    y[static_cast<std::size_t>(i)] = s / l[static_cast<std::size_t>(i)][static_cast<std::size_t>(i)];
  }
  x = {0.0, 0.0, 0.0};
  for (int i = np - 1; i >= 0; --i) {
    double s = y[static_cast<std::size_t>(i)];
    for (int k = i + 1; k < np; ++k)
      s -= l[static_cast<std::size_t>(k)][static_cast<std::size_t>(i)] * x[static_cast<std::size_t>(k)];
    x[static_cast<std::size_t>(i)] = s / l[static_cast<std::size_t>(i)][static_cast<std::size_t>(i)];
  }
  return true;
}

struct StartResult {
  bool converged = false;
  double kappa = 0, beta = 0, v0 = 0;
  double ssr = std::numeric_limits<double>::infinity();
  int iterations = 0;
};

StartResult run_start(const std::vector<PvSample>& data, double kappa, double beta, double v0,
                      const TissueFitOptions& opts) {
  const int np = opts.fixed_v0 ? 2 : 3;
  StartResult res;
  Residuals cur = evaluate(data, kappa, beta, v0, true);
  if (!cur.valid) return res;
  double lambda = 1e-3;
  for (int it = 0; it < opts.max_iterations; ++it) {
    std::array<std::array<double, 3>, 3> jtj{};
    std::array<double, 3> jtr{};
    for (std::size_t i = 0; i < data.size(); ++i) {
      for (int a = 0; a < np; ++a) {
        jtr[static_cast<std::size_t>(a)] +=
            cur.jac[i][static_cast<std::size_t>(a)] * cur.r[i];
        for (int b = a; b < np; ++b)
          jtj[static_cast<std::size_t>(a)][static_cast<std::size_t>(b)] +=
              cur.jac[i][static_cast<std::size_t>(a)] * cur.jac[i][static_cast<std::size_t>(b)];
      }
    }
    for (int a = 0; a < np; ++a)
      for (int b = 0; b < a; ++b)
        jtj[static_cast<std::size_t>(a)][static_cast<std::size_t>(b)] =
            jtj[static_cast<std::size_t>(b)][static_cast<std::size_t>(a)];

    bool stepped = false;
    for (int attempt = 0; attempt < 40 && !stepped; ++attempt) {
      auto damped = jtj;
      for (int a = 0; a < np; ++a)
        damped[static_cast<std::size_t>(a)][static_cast<std::size_t>(a)] *= 1.0 + lambda;
      std::array<double, 3> step{};
      std::array<double, 3> rhs{-jtr[0], -jtr[1], -jtr[2]};
      if (solve_normal(damped, rhs, step, np)) {
        double k_new = kappa + step[0];
        double b_new = beta + step[1];
        double v_new = v0 + step[2];
        Residuals trial = evaluate(data, k_new, b_new, v_new, true);
        if (trial.valid && trial.ssr <= cur.ssr) {
          double rel = std::max({std::abs(step[0]) / std::max(std::abs(kappa), 1e-30),
                                 std::abs(step[1]) / std::max(std::abs(beta), 1e-30),
                                 std::abs(step[2]) / std::max(std::abs(v0), 1e-30)});
          kappa = k_new;
          beta = b_new;
          v0 = v_new;
          cur = std::move(trial);
          lambda = std::max(lambda * 0.25, 1e-12);
          stepped = true;
          res.iterations = it + 1;
          if (rel < opts.param_tol) {
            res.converged = true;
            res.kappa = kappa;
            res.beta = beta;
            res.v0 = v0;
            res.ssr = cur.ssr;
            return res;
          }
          break;
        }
      }
      lambda *= 10.0;
    }
    if (!stepped) break;  // damping exhausted
  }
  // Out of iterations: report the best point reached, unconverged.
  res.kappa = kappa;
  res.beta = beta;
  res.v0 = v0;
  res.ssr = cur.ssr;
  return res;
}

}  // namespace

TissueFit fit_tissue(const PvRecord& pv, const TissueFitOptions& opts) {
  const std::vector<PvSample>& data = pv.fit_samples();
  TissueFit best;
  double best_ssr = std::numeric_limits<double>::infinity();
  StartResult best_any;  // best-so-far diagnostics if nothing converges
  int start_index = 0;
  for (double k_mbar : opts.kappa_starts_mbar) {
    for (double beta0 : opts.beta_starts) {
      // The reference volume start assumes mild distension at the lowest
      // fitted pressure.
      double v0_start = opts.fixed_v0 ? *opts.fixed_v0 : 0.5 * data.front().v;
      StartResult r = run_start(data, units::mbar_to_pa(k_mbar), beta0, v0_start, opts);
      if (r.ssr < best_any.ssr) best_any = r;
      if (r.converged && r.ssr < best_ssr) {
        best.converged = true;
        best.kappa = r.kappa;
        best.beta = r.beta;
        best.v0 = r.v0;
        best.residual_norm = std::sqrt(r.ssr);
        best.iterations = r.iterations;
        best.best_start = start_index;
        best_ssr = r.ssr;
      }
      ++start_index;
    }
  }
  if (!best.converged)
    throw SolverError("tissue fit did not converge from any start; best residual " +
                      std::to_string(std::sqrt(best_any.ssr)) + " at kappa = " +
                      std::to_string(units::pa_to_mbar(best_any.kappa)) + " mbar, beta = " +
                      std::to_string(best_any.beta));

  // Covariance of (kappa, beta) from the Jacobian at the solution.
  Residuals fin = evaluate(data, best.kappa, best.beta, best.v0, true);
  if (fin.valid && data.size() > 3) {
    double s2 = fin.ssr / static_cast<double>(data.size() - 3);
    double a00 = 0, a01 = 0, a11 = 0;
    for (std::size_t i = 0; i < data.size(); ++i) {
      a00 += fin.jac[i][0] * fin.jac[i][0];
      a01 += fin.jac[i][0] * fin.jac[i][1];
      a11 += fin.jac[i][1] * fin.jac[i][1];
    }
    double det = a00 * a11 - a01 * a01;
    if (std::abs(det) > 0) {
      best.covariance[0][0] = s2 * a11 / det;
      best.covariance[0][1] = best.covariance[1][0] = -s2 * a01 / det;
      best.covariance[1][1] = s2 * a00 / det;
    }
  }
  return best;
}

ChestWallFit fit_chest_wall(const PvRecord& pv) {
  const std::vector<PvSample>& insp = pv.fit_samples();
  double v_peep = pv.v_peep(), v_max = pv.v_max();
  if (!(v_max > v_peep) || (v_max - v_peep) < 1e-12 * std::max(std::abs(v_max), 1.0))
    throw ConfigError("chest-wall fit: degenerate volume range in the maneuver");
  double sx = 0, sy = 0, sxx = 0, sxy = 0, syy = 0;
  const double n = static_cast<double>(insp.size());
  for (const PvSample& s : insp) {
    double x = (s.v - v_peep) / (v_max - v_peep);
    double y = s.p_pl;
    sx += x;
    sy += y;
    sxx += x * x;
    sxy += x * y;
    syy += y * y;
  }
  double denom = n * sxx - sx * sx;
  ChestWallFit fit;
  if (std::abs(denom) < 1e-30) throw ConfigError("chest-wall fit: volume fraction is constant");
  fit.p_pl_lin = (n * sxy - sx * sy) / denom;
  fit.p_pl0 = (sy - fit.p_pl_lin * sx) / n;
  double ss_tot = syy - sy * sy / n;
  double ss_res = 0;
  for (const PvSample& s : insp) {
    double x = (s.v - v_peep) / (v_max - v_peep);
    double e = s.p_pl - (fit.p_pl0 + fit.p_pl_lin * x);
    ss_res += e * e;
  }
  fit.r_squared = ss_tot > 0 ? 1.0 - ss_res / ss_tot : 1.0;
  return fit;
}

}  // namespace lungsim::calibrate
