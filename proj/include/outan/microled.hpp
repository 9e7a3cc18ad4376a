#pragma once

// Electrical and optical model of a single probe-integrated μLED.
//
// Electrically the device is a diode in series with a resistor:
//
//   V(I) = n_vt * ln(1 + I / i_sat) + I * r_series
//
// strictly increasing in I, inverted numerically by bisection. Optically the
// output is flat at zero below a dead current and linear above it:
//
//   P(I) = eta * max(0, I - i_dead)    [P in uW, eta in uW/mA]
//
// The calibration layer absorbs any residual curve shape, so nothing finer
// is modeled here. Failure states follow the hardware failure modes: a
// broken shank trace is an open circuit, a burnt-out μLED is a short.

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <utility>
#include <vector>

#include "outan/common.hpp"

namespace outan {

enum class LedState { ok, open_circuit, short_circuit };

inline const char* to_string(LedState s) {
  switch (s) {
    case LedState::ok: return "ok";
    case LedState::open_circuit: return "open";
    case LedState::short_circuit: return "short";
  }
  return "?";
}

inline LedState led_state_from_string(std::string_view s) {
  if (s == "ok") return LedState::ok;
  if (s == "open") return LedState::open_circuit;
  if (s == "short") return LedState::short_circuit;
  throw ValidationError("unknown led state: '" + std::string(s) + "'");
}

struct MicroLedModel {
  double i_sat_a = 1e-10;      // diode saturation current
  double n_vt_v = 0.27;        // ideality factor x thermal voltage
  double r_series_ohm = 0.0;
  double eta_uw_per_ma = 20.0; // optical slope efficiency
  double i_dead_a = 1e-5;      // no light below this current
  LedState state = LedState::ok;

  void validate() const {
    if (!(i_sat_a > 0)) throw ValidationError("i_sat must be > 0");
    if (!(n_vt_v > 0)) throw ValidationError("n_vt must be > 0");
    if (r_series_ohm < 0) throw ValidationError("r_series must be >= 0");
    if (eta_uw_per_ma < 0) throw ValidationError("eta must be >= 0");
    if (i_dead_a < 0) throw ValidationError("i_dead must be >= 0");
  }
};

inline double led_voltage(const MicroLedModel& led, double i_a) {
  if (led.state == LedState::open_circuit)
    throw ModelError("open circuit: voltage unbounded at any current");
  if (led.state == LedState::short_circuit) return 0.0;
  if (i_a < 0) throw ValidationError("led_voltage: negative current");
  return led.n_vt_v * std::log1p(i_a / led.i_sat_a) + i_a * led.r_series_ohm;
}

// Inverse of led_voltage by bisection, relative tolerance 1e-9 on current.
inline double led_current(const MicroLedModel& led, double v_v) {
  if (led.state == LedState::short_circuit)
    throw ModelError("short circuit: current unbounded at any voltage");
  if (led.state == LedState::open_circuit) return 0.0;
  if (v_v < 0) throw ValidationError("led_current: negative voltage");
  if (v_v == 0.0) return 0.0;

  double lo = 0.0;
  double hi = 1e-3;
  while (led_voltage(led, hi) < v_v) {
    hi *= 2.0;
    if (hi > 1e3) throw ModelError("led_current: voltage unreachable");
  }
  for (int iter = 0; iter < 200 && (hi - lo) > 1e-9 * hi; ++iter) {
    double mid = 0.5 * (lo + hi);
    (led_voltage(led, mid) < v_v ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

inline double led_power_uw(const MicroLedModel& led, double i_a) {
  if (led.state != LedState::ok) return 0.0;
  return led.eta_uw_per_ma * std::max(0.0, i_a - led.i_dead_a) * 1e3;
}

inline MicroLedModel make_failed(MicroLedModel led, LedState kind) {
  led.state = kind;
  return led;
}

// Fixes r_series so the forward curve passes exactly through (i_a, v_v).
inline MicroLedModel led_from_forward_anchor(double i_a, double v_v, double i_sat_a = 1e-10,
                                             double n_vt_v = 0.27, double eta_uw_per_ma = 20.0,
                                             double i_dead_a = 1e-5) {
  if (!(i_a > 0)) throw ValidationError("anchor current must be > 0");
  MicroLedModel led;
  led.i_sat_a = i_sat_a;
  led.n_vt_v = n_vt_v;
  led.eta_uw_per_ma = eta_uw_per_ma;
  led.i_dead_a = i_dead_a;
  double diode_v = n_vt_v * std::log1p(i_a / i_sat_a);
  if (v_v <= diode_v)
    throw ValidationError("anchor voltage below the pure-diode drop; no series resistance fits");
  led.r_series_ohm = (v_v - diode_v) / i_a;
  led.validate();
  return led;
}

// Nominal device: the high-forward-voltage corner that needs 5 V for 1 mA.
inline MicroLedModel reference_led() { return led_from_forward_anchor(1e-3, 5.0); }

struct IvFit {
  double i_sat_a = 0;
  double n_vt_v = 0;
  double r_series_ohm = 0;
  double rms_v = 0;  // RMS of voltage residuals
};

namespace detail {

// Least squares over (n_vt, r_series) for a fixed i_sat; V is linear in both.
inline double iv_sse_at(double i_sat, std::span<const std::pair<double, double>> pts, double* n_vt,
                        double* r_series) {
  double s11 = 0, s12 = 0, s22 = 0, b1 = 0, b2 = 0;
  for (auto [v, i] : pts) {
    double x1 = std::log1p(i / i_sat);
    double x2 = i;
    s11 += x1 * x1;
    s12 += x1 * x2;
    s22 += x2 * x2;
    b1 += x1 * v;
    b2 += x2 * v;
  }
  double det = s11 * s22 - s12 * s12;
  double a, r;
  if (std::abs(det) > 1e-30 * s11 * s22) {
    a = (b1 * s22 - b2 * s12) / det;
    r = (s11 * b2 - s12 * b1) / det;
  } else {
    a = s11 > 0 ? b1 / s11 : 0;
    r = 0;
  }
  if (r < 0) {  // resistance cannot be negative; refit the diode term alone
    r = 0;
    a = s11 > 0 ? b1 / s11 : 0;
  }
  if (a <= 0) return std::numeric_limits<double>::infinity();
  double sse = 0;
  for (auto [v, i] : pts) {
    double res = v - (a * std::log1p(i / i_sat) + r * i);
    sse += res * res;
  }
  *n_vt = a;
  *r_series = r;
  return sse;
}

}  // namespace detail

// Fits (i_sat, n_vt, r_series) to measured (V, I) points by least squares on
// voltage residuals: coarse scan over log10(i_sat), then golden-section
// refinement. Requires at least 3 points with positive, distinct currents
// and a monotone V-I relation.
inline IvFit fit_iv(std::span<const std::pair<double, double>> v_i_points) {
  if (v_i_points.size() < 3) throw ValidationError("fit_iv: need at least 3 points");
  std::vector<std::pair<double, double>> pts(v_i_points.begin(), v_i_points.end());
  for (auto [v, i] : pts)
    if (!(i > 0)) throw ValidationError("fit_iv: currents must be positive");
  std::sort(pts.begin(), pts.end(), [](auto& a, auto& b) { return a.second < b.second; });
  for (size_t k = 1; k < pts.size(); ++k) {
    if (pts[k].second == pts[k - 1].second)
      throw ValidationError("fit_iv: currents must be distinct");
    if (pts[k].first <= pts[k - 1].first)
      throw ValidationError("fit_iv: non-monotone I-V points, degenerate fit");
  }

  double best_log = -10, best_sse = std::numeric_limits<double>::infinity();
  double nv = 0, rs = 0;
  for (double lg = -14.0; lg <= -6.0 + 1e-9; lg += 0.1) {
    double sse = detail::iv_sse_at(std::pow(10.0, lg), pts, &nv, &rs);
    if (sse < best_sse) {
      best_sse = sse;
      best_log = lg;
    }
  }
  // Golden-section refinement around the best grid point.
  const double gr = 0.61803398874989484820;
  double a = best_log - 0.1, b = best_log + 0.1;
  double c = b - gr * (b - a), d = a + gr * (b - a);
  double fc = detail::iv_sse_at(std::pow(10.0, c), pts, &nv, &rs);
  double fd = detail::iv_sse_at(std::pow(10.0, d), pts, &nv, &rs);
  while (b - a > 1e-7) {
    if (fc < fd) {
      b = d;
      d = c;
      fd = fc;
      c = b - gr * (b - a);
      fc = detail::iv_sse_at(std::pow(10.0, c), pts, &nv, &rs);
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + gr * (b - a);
      fd = detail::iv_sse_at(std::pow(10.0, d), pts, &nv, &rs);
    }
  }
  IvFit fit;
  fit.i_sat_a = std::pow(10.0, 0.5 * (a + b));
  double sse = detail::iv_sse_at(fit.i_sat_a, pts, &fit.n_vt_v, &fit.r_series_ohm);
  if (!std::isfinite(sse)) throw ValidationError("fit_iv: degenerate fit");
  fit.rms_v = std::sqrt(sse / double(pts.size()));
  return fit;
}

}  // namespace outan
