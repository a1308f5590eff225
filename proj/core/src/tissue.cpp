#include "lungsim/tissue.hpp"

#include <algorithm>
#include <cmath>

#include "lungsim/errors.hpp"

namespace lungsim::tissue {

void TissueParams::validate() const {
  if (!(kappa > 0)) throw ConfigError("tissue kappa must be positive");
  if (beta == 0) throw ConfigError("tissue beta must be nonzero");
  if (visc_modulus < 0) throw ConfigError("tissue visc_modulus must be >= 0");
  if (!(visc_tau > 0)) throw ConfigError("tissue visc_tau must be positive");
}

double elastic_pressure(double v, double v0, const TissueParams& p) {
  if (!(v > 0 && v0 > 0)) throw ConfigError("elastic_pressure: volumes must be positive");
  double w = v0 / v;
  return p.kappa / p.beta * w * (1.0 - std::pow(w, p.beta));
}

double elastic_pressure_dv(double v, double v0, const TissueParams& p) {
  if (!(v > 0 && v0 > 0)) throw ConfigError("elastic_pressure_dv: volumes must be positive");
  double w = v0 / v;
  return -p.kappa / p.beta * (1.0 - (1.0 + p.beta) * std::pow(w, p.beta)) * w / v;
}

namespace {

// Solves (kappa/beta) (w - w^(1+beta)) = p_tm for w = v0/v. The map is
// strictly decreasing and spans all of R for beta <= -1; for beta in (-1, 0)
// it is bounded above and a solution may not exist. Newton with bisection
// safeguard on a sign-changing bracket.
std::optional<double> solve_w(double p_tm, const TissueParams& p) {
  auto g = [&](double w) { return p.kappa / p.beta * (w - std::pow(w, 1.0 + p.beta)) - p_tm; };
  double lo = 1e-9, hi = 1e9;
  double glo = g(lo), ghi = g(hi);
  if (!std::isfinite(glo) || !std::isfinite(ghi) || glo * ghi > 0) return std::nullopt;
  // g(lo) > 0 > g(hi) in the usual (beta < 0) orientation; keep it generic.
  bool decreasing = glo > 0;
  double w = 1.0;
  for (int it = 0; it < 100; ++it) {
    double gw = g(w);
    if (std::abs(gw) < 1e-13 * std::max(1.0, std::abs(p_tm))) return w;
    if ((gw > 0) == decreasing)
      lo = w;
    else
      hi = w;
    double dg = p.kappa / p.beta * (1.0 - (1.0 + p.beta) * std::pow(w, p.beta));
    double w_next = (dg != 0 && std::isfinite(dg)) ? w - gw / dg : 0.5 * (lo + hi);
    if (!(w_next > lo && w_next < hi)) w_next = 0.5 * (lo + hi);
    if (std::abs(w_next - w) < 1e-15 * w) return w_next;
    w = w_next;
  }
  return std::abs(g(w)) < 1e-9 * std::max(1.0, std::abs(p_tm)) ? std::optional<double>(w)
                                                               : std::nullopt;
}

}  // namespace

std::optional<double> solve_volume(double v0, double p_tm, const TissueParams& p) {
  auto w = solve_w(p_tm, p);
  if (!w) return std::nullopt;
  return v0 / *w;
}

std::optional<double> solve_reference_volume(double v, double p_tm, const TissueParams& p) {
  auto w = solve_w(p_tm, p);
  if (!w) return std::nullopt;
  return v * *w;
}

MaxwellStep maxwell_step(const TissueParams& p, double dt, double theta, double eps_prev,
                         double eps_d_prev) {
  MaxwellStep m;
  if (p.visc_modulus == 0) return m;  // all zero: branch absent
  double r = dt / p.visc_tau;
  double denom = 1.0 + theta * r;
  m.b = theta * r / denom;
  m.a = (eps_d_prev * (1.0 - (1.0 - theta) * r) + r * (1.0 - theta) * eps_prev) / denom;
  m.gain = p.visc_modulus * (1.0 - m.b);
  m.hist = -p.visc_modulus * m.a;
  return m;
}

double unit_pressure(double v, double v0, double eps_d, const TissueParams& p) {
  double pe = elastic_pressure(v, v0, p);
  if (p.visc_modulus == 0) return pe;
  return pe + p.visc_modulus * (volumetric_strain(v, v0) - eps_d);
}

double unit_residual(double p_alv, double p_pl, double v, double v0, double eps_d,
                     const TissueParams& p) {
  return p_alv - p_pl - unit_pressure(v, v0, eps_d, p);
}

double unit_strain(double v, double v_ref) { return v / v_ref; }

double air_fraction(double density) { return std::clamp(-density / 1000.0, 0.0, 1.0); }

LobeVolumes lobe_volumes_from_density(double total_volume, double mean_density) {
  double f = air_fraction(mean_density);
  return {total_volume * f, total_volume * (1.0 - f)};
}

VolumeInit initialize_volumes(const AirwayTree& tree,
                              const std::array<LobeVolumes, kNumLobes>& lobes,
                              std::span<const double> unit_density,
                              std::span<const double> unit_p_tm_ct,
                              const std::vector<bool>& trapped, const TissueParams& params) {
  params.validate();
  const int n_units = tree.n_units();
  if (static_cast<int>(unit_density.size()) != n_units ||
      static_cast<int>(unit_p_tm_ct.size()) != n_units ||
      static_cast<int>(trapped.size()) != n_units)
    throw ConfigError("initialize_volumes: per-unit inputs must match the unit count");

  VolumeInit out;
  out.v_ct.assign(static_cast<std::size_t>(n_units), 0.0);
  out.v_tissue.assign(static_cast<std::size_t>(n_units), 0.0);
  out.v0.assign(static_cast<std::size_t>(n_units), 0.0);

  // Air fraction is capped just below one so a pure-air unit keeps a finite
  // volume demand; the lobar rescale below restores the exact air total.
  constexpr double f_cap = 0.9999;

  for (int li = 0; li < kNumLobes; ++li) {
    const LobeVolumes& lv = lobes[static_cast<std::size_t>(li)];
    std::vector<int> units;
    double area_sum = 0;
    for (int u = 0; u < n_units; ++u) {
      const AirwayGeom& leaf = tree.geom(tree.leaf_of_unit(u));
      if (static_cast<int>(leaf.lobe) != li) continue;
      units.push_back(u);
      area_sum += leaf.supplied_area;
    }
    if (units.empty()) {
      if (lv.air > 0 || lv.tissue > 0)
        throw ConfigError(std::string("lobe ") + lobe_label(static_cast<Lobe>(li)) +
                          " has volume assigned but no terminal units");
      continue;
    }

    double demand_sum = 0;
    std::vector<double> demand(units.size());
    for (std::size_t k = 0; k < units.size(); ++k) {
      int u = units[k];
      const AirwayGeom& leaf = tree.geom(tree.leaf_of_unit(u));
      double vt = lv.tissue * leaf.supplied_area / area_sum;
      out.v_tissue[static_cast<std::size_t>(u)] = vt;
      double f = std::min(air_fraction(unit_density[static_cast<std::size_t>(u)]), f_cap);
      demand[k] = vt > 0 ? vt * f / (1.0 - f) : leaf.supplied_area;
      demand_sum += demand[k];
    }
    double scale = demand_sum > 0 ? lv.air / demand_sum : 0.0;
    for (std::size_t k = 0; k < units.size(); ++k) {
      int u = units[k];
      double v_air = scale * demand[k];
      out.v_ct[static_cast<std::size_t>(u)] = out.v_tissue[static_cast<std::size_t>(u)] + v_air;
      if (!(out.v_ct[static_cast<std::size_t>(u)] > 0))
        throw ConfigError("unit " + std::to_string(u) + ": zero imaged volume; lobe " +
                          lobe_label(static_cast<Lobe>(li)) + " needs positive air or tissue");
    }
  }

  for (int u = 0; u < n_units; ++u) {
    double vct = out.v_ct[static_cast<std::size_t>(u)];
    if (trapped[static_cast<std::size_t>(u)]) {
      out.v0[static_cast<std::size_t>(u)] = vct;
      continue;
    }
    auto v0 = solve_reference_volume(vct, unit_p_tm_ct[static_cast<std::size_t>(u)], params);
    if (!v0)
      throw SolverError("unit " + std::to_string(u) +
                        ": cannot invert the elastic law for the reference volume (p_tm = " +
                        std::to_string(unit_p_tm_ct[static_cast<std::size_t>(u)]) + " Pa)");
    out.v0[static_cast<std::size_t>(u)] = *v0;
  }
  return out;
}

}  // namespace lungsim::tissue
