#include "lungsim/boundary.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <utility>

#include "lungsim/csv.hpp"
#include "lungsim/errors.hpp"

namespace lungsim::boundary {

void PleuralModel::validate() const {
  if (!(v_max > v_peep))
    throw ConfigError("pleural model: v_max must exceed v_peep");
  if (!std::isfinite(p_pl0) || !std::isfinite(p_pl_lin))
    throw ConfigError("pleural model: coefficients must be finite");
}

double pleural_weight(double z, const PleuralModel& m) {
  double z_cm = z * 100.0;
  double h_cm = m.h_balloon * 100.0;
  double w_cmh2o = m.grav_a * (z_cm - h_cm) + m.grav_b * (z_cm * z_cm - h_cm * h_cm);
  return units::cmh2o_to_pa(w_cmh2o);
}

double pleural_pressure(double v_total, double z, const PleuralModel& m) {
  double v_frac = (v_total - m.v_peep) / (m.v_max - m.v_peep);
  return m.p_pl0 + m.p_pl_lin * v_frac + pleural_weight(z, m);
}

namespace {
constexpr double kInf = std::numeric_limits<double>::infinity();
}

double Waveform::eval(double t) const {
  if (t < t_begin_ - 1e-12 || t > t_end_ + 1e-12)
    throw ConfigError("waveform evaluated at t = " + std::to_string(t) +
                      " outside its domain [" + std::to_string(t_begin_) + ", " +
                      std::to_string(t_end_) + "]");
  return fn_(t);
}

double Waveform::t_end() const { return t_end_; }

Waveform Waveform::constant(double p_pa) {
  Waveform w;
  w.fn_ = [p_pa](double) { return p_pa; };
  w.t_end_ = kInf;
  return w;
}

Waveform Waveform::cycles(double peep_pa, double drive_pa, double rate_per_min, double ie_ratio,
                          double ramp_s) {
  if (!(rate_per_min > 0) || !(ie_ratio > 0))
    throw ConfigError("ventilation cycles need positive rate and I:E ratio");
  double period = 60.0 / rate_per_min;
  double t_insp = period * ie_ratio / (1.0 + ie_ratio);
  double ramp = std::min(ramp_s, 0.4 * std::min(t_insp, period - t_insp));
  Waveform w;
  w.fn_ = [=](double t) {
    double tau = std::fmod(t, period);
    if (tau < 0) tau += period;
    if (tau < ramp) return peep_pa + drive_pa * (tau / ramp);
    if (tau < t_insp) return peep_pa + drive_pa;
    if (tau < t_insp + ramp) return peep_pa + drive_pa * (1.0 - (tau - t_insp) / ramp);
    return peep_pa;
  };
  w.t_end_ = kInf;
  w.period_ = period;
  return w;
}

Waveform Waveform::ramp(double p0_pa, double p1_pa, double duration_s) {
  if (!(duration_s > 0)) throw ConfigError("ramp duration must be positive");
  Waveform w;
  w.fn_ = [=](double t) {
    if (t >= duration_s) return p1_pa;
    return p0_pa + (p1_pa - p0_pa) * (t / duration_s);
  };
  w.t_end_ = kInf;
  return w;
}

Waveform Waveform::triangle(double p0_pa, double p1_pa, double duration_s) {
  if (!(duration_s > 0)) throw ConfigError("triangle duration must be positive");
  double half = duration_s / 2;
  Waveform w;
  w.fn_ = [=](double t) {
    if (t >= duration_s) return p0_pa;
    if (t < half) return p0_pa + (p1_pa - p0_pa) * (t / half);
    return p1_pa + (p0_pa - p1_pa) * ((t - half) / half);
  };
  w.t_end_ = kInf;
  return w;
}

Waveform Waveform::sustained_inflation(double p_hold_pa, double t_hold_s, double peep_after_pa,
                                       double drive_after_pa, double rate_per_min, double ie_ratio,
                                       double ramp_s) {
  Waveform after = cycles(peep_after_pa, drive_after_pa, rate_per_min, ie_ratio, ramp_s);
  return segments({{t_hold_s, constant(p_hold_pa)}, {kInf, after}});
}

Waveform Waveform::segments(std::vector<std::pair<double, Waveform>> parts) {
  if (parts.empty()) throw ConfigError("waveform composition needs at least one segment");
  std::vector<double> starts;
  double t0 = 0;
  for (auto& [dur, part] : parts) {
    if (!(dur > 0)) throw ConfigError("waveform segment durations must be positive");
    starts.push_back(t0);
    t0 += dur;
  }
  auto shared = std::make_shared<std::vector<std::pair<double, Waveform>>>(std::move(parts));
  auto starts_shared = std::make_shared<std::vector<double>>(std::move(starts));
  Waveform w;
  w.t_end_ = t0;  // inf if the last segment is unbounded
  w.fn_ = [shared, starts_shared](double t) {
    std::size_t i = shared->size() - 1;
    while (i > 0 && t < (*starts_shared)[i]) --i;
    return (*shared)[i].second.eval(t - (*starts_shared)[i]);
  };
  return w;
}

Waveform Waveform::from_samples(std::vector<double> t_s, std::vector<double> p_pa) {
  if (t_s.size() != p_pa.size() || t_s.size() < 2)
    throw ConfigError("sampled waveform needs at least two (t, p) pairs");
  for (std::size_t i = 1; i < t_s.size(); ++i)
    if (!(t_s[i] > t_s[i - 1]))
      throw ConfigError("sampled waveform times must be strictly increasing");
  auto ts = std::make_shared<std::vector<double>>(std::move(t_s));
  auto ps = std::make_shared<std::vector<double>>(std::move(p_pa));
  Waveform w;
  w.t_begin_ = ts->front();
  w.t_end_ = ts->back();
  w.fn_ = [ts, ps](double t) {
    t = std::clamp(t, ts->front(), ts->back());
    auto it = std::upper_bound(ts->begin(), ts->end(), t);
    std::size_t hi = std::min(static_cast<std::size_t>(it - ts->begin()), ts->size() - 1);
    if (hi == 0) hi = 1;
    std::size_t lo = hi - 1;
    double f = ((*ts)[hi] - (*ts)[lo]) > 0 ? (t - (*ts)[lo]) / ((*ts)[hi] - (*ts)[lo]) : 0.0;
    return (*ps)[lo] + f * ((*ps)[hi] - (*ps)[lo]);
  };
  return w;
}

Waveform Waveform::from_csv(const std::string& path) {
  csv::Table t = csv::read_table(path, {"t_s", "p_ao_mbar"});
  std::vector<double> ts, ps;
  for (const auto& r : t.rows) {
    ts.push_back(csv::parse_double(t, r, 0, "t_s"));
    ps.push_back(units::mbar_to_pa(csv::parse_double(t, r, 1, "p_ao_mbar")));
  }
  return from_samples(std::move(ts), std::move(ps));
}

}  // namespace lungsim::boundary
