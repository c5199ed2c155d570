#include "maser/analytics.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "maser/spectrum.hpp"

namespace maser {

namespace {

double threshold_value(const SystemParams& params, double eta_in_lambda,
                       ThresholdForm form, bool* reachable, double* nc_out) {
  SystemParams p = params;
  p.eta = eta_in_lambda;
  const DerivedRates d = derive_rates(p);
  const double nc = p.n_spins * d.cooperativity;
  if (nc_out) *nc_out = nc;
  if (!(nc > 1.0)) {
    *reachable = false;
    return 0.0;
  }
  *reachable = true;
  switch (form) {
    case ThresholdForm::exact:
      return params.gamma * (2.0 * d.n_k_th + 1.0 + nc) / (nc - 1.0);
    case ThresholdForm::large_ensemble:
      return params.gamma * ((2.0 * d.n_k_th + 1.0) / nc + 1.0);
  }
  return 0.0;
}

}  // namespace

ThresholdResult masing_threshold(const SystemParams& params, ThresholdForm form,
                                 bool self_consistent) {
  params.validate();
  ThresholdResult out;
  out.self_consistent = self_consistent;

  double eta_in_lambda = 0.0;
  double thr = threshold_value(params, eta_in_lambda, form, &out.reachable,
                               &out.n_cooperativity);
  if (!out.reachable) return out;

  if (self_consistent) {
    // The pump broadens the spin line, which weakens the cooperativity and
    // raises the threshold; iterate the fixed point eta = thr(lambda(eta)).
    for (int it = 0; it < 200; ++it) {
      eta_in_lambda = thr;
      const double next = threshold_value(params, eta_in_lambda, form,
                                          &out.reachable, &out.n_cooperativity);
      if (!out.reachable) return out;
      if (std::fabs(next - thr) <= 1e-14 * std::fabs(next)) {
        thr = next;
        break;
      }
      thr = next;
    }
  }
  out.eta = thr;
  return out;
}

PeakPair peak_frequencies_offset(const SystemParams& params, double inversion) {
  params.validate();
  const DerivedRates d = derive_rates(params);
  // Coherence poles measured from omega_c, so the 1e10 rad/s carrier never
  // meets the sub-rad/s structure in one addition.
  const std::complex<double> pole_spin(params.omega_s - params.omega_c,
                                       d.lambda_s);
  const std::complex<double> pole_cav(0.0, params.kappa_c / 2.0);
  const std::complex<double> diff = pole_spin - pole_cav;
  const std::complex<double> disc =
      diff * diff - 4.0 * params.n_spins * params.g * params.g * inversion;
  // Principal square root: nonnegative real part breaks the branch tie.
  const std::complex<double> root = std::sqrt(disc);
  PeakPair out;
  out.plus = 0.5 * (pole_spin + pole_cav + root);
  out.minus = 0.5 * (pole_spin + pole_cav - root);
  return out;
}

PeakPair peak_frequencies(const SystemParams& params, double inversion) {
  PeakPair out = peak_frequencies_offset(params, inversion);
  out.plus += params.omega_c;
  out.minus += params.omega_c;
  return out;
}

double resonant_r(const SystemParams& params, double inversion,
                  bool* detuned_flag) {
  params.validate();
  const DerivedRates d = derive_rates(params);
  if (detuned_flag) *detuned_flag = params.omega_s != params.omega_c;
  const double asym = d.lambda_s - params.kappa_c / 2.0;
  return asym * asym + 4.0 * params.n_spins * params.g * params.g * inversion;
}

double resonant_r_from_m(const SystemParams& params, double m_projection,
                         bool* detuned_flag) {
  params.validate();
  const DerivedRates d = derive_rates(params);
  if (detuned_flag) *detuned_flag = params.omega_s != params.omega_c;
  const double asym = d.lambda_s - params.kappa_c / 2.0;
  return asym * asym + 8.0 * params.g * params.g * m_projection;
}

DickeNumbers dicke_numbers(double inversion, std::complex<double> spin_spin,
                           double n_spins) {
  if (!(n_spins >= 1.0))
    throw std::invalid_argument("dicke_numbers: need at least one spin");
  DickeNumbers out;
  out.m = 0.5 * n_spins * inversion;
  out.imag_warning = std::fabs(spin_spin.imag()) > 1e-6;

  double radicand = 0.75 * n_spins +
                    n_spins * (n_spins - 1.0) *
                        (spin_spin.real() + 0.25 * inversion * inversion);
  if (radicand < -1e-9 * n_spins * n_spins)
    throw std::domain_error(
        "dicke_numbers: J^2 negative beyond roundoff; moments are not a "
        "physical state");
  if (radicand < 0.0) {
    radicand = 0.0;
    out.radicand_clipped = true;
  }
  out.j = std::sqrt(radicand);
  return out;
}

std::pair<double, double> dressed_frequencies(double j, double g,
                                              double omega_c, double omega_s) {
  if (j < 0.0) throw std::invalid_argument("dressed_frequencies: J < 0");
  const double split = std::sqrt(8.0 * j * g * g +
                                 (omega_c - omega_s) * (omega_c - omega_s));
  return {0.5 * (omega_c + omega_s + split), 0.5 * (omega_c + omega_s - split)};
}

const char* regime_name(Regime regime) {
  switch (regime) {
    case Regime::superradiant_maser:
      return "superradiant_maser";
    case Regime::thermal:
      return "thermal";
    case Regime::superradiance:
      return "superradiance";
  }
  return "unknown";
}

Regime classify_regime(const SystemParams& params, const MeanFieldState& steady) {
  params.validate();
  const DerivedRates d = derive_rates(params);
  const ThresholdResult thr = masing_threshold(params, ThresholdForm::exact);
  const double n = steady.photon_number;

  const bool pumped_past_threshold = thr.reachable && params.eta >= thr.eta;
  if (pumped_past_threshold && n > std::max(1.0, 2.0 * d.n_c_th))
    return Regime::superradiant_maser;
  if (n > 1.0 && d.n_c_th >= 1.0 && !pumped_past_threshold)
    return Regime::thermal;
  return Regime::superradiance;
}

PullingFit pulling_factor(const SystemParams& params,
                          const std::vector<double>& detunings) {
  params.validate();
  PullingFit fit;

  for (const double delta : detunings) {
    SystemParams p = params;
    p.omega_s = params.omega_c + delta;

    const SteadyStateResult steady = steady_state(p);
    if (!steady.converged ||
        classify_regime(p, steady.state) != Regime::superradiant_maser) {
      fit.excluded.push_back(delta);
      continue;
    }

    // The maser line sits between the resonator and the spins; a window a
    // few collective widths past both captures it together with any broad
    // companion peak.
    const DerivedRates d = derive_rates(p);
    const double wide = d.lambda_s + p.kappa_c / 2.0;
    const double lo = std::min(0.0, delta) - 4.0 * wide;
    const double hi = std::max(0.0, delta) + 4.0 * wide;
    const SpectrumResult spec = scan_spectrum(p, steady.state, lo, hi);

    const SpectrumPeak* narrow = nullptr;
    for (const SpectrumPeak& pk : spec.peaks) {
      if (!pk.resolved) continue;
      if (!narrow || pk.fwhm < narrow->fwhm) narrow = &pk;
    }
    if (!narrow) {
      fit.excluded.push_back(delta);
      continue;
    }
    fit.detunings.push_back(delta);
    fit.shifts.push_back(narrow->center_offset);
  }

  fit.warning = !fit.excluded.empty();
  const std::size_t m = fit.detunings.size();
  if (m >= 2) {
    // Ordinary least squares of shift on detuning.
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    for (std::size_t i = 0; i < m; ++i) {
      sx += fit.detunings[i];
      sy += fit.shifts[i];
      sxx += fit.detunings[i] * fit.detunings[i];
      sxy += fit.detunings[i] * fit.shifts[i];
    }
    const double denom = m * sxx - sx * sx;
    if (denom > 0.0) {
      fit.slope = (m * sxy - sx * sy) / denom;
      fit.intercept = (sy - fit.slope * sx) / m;
    } else {
      fit.warning = true;
    }
  } else {
    fit.warning = true;
  }
  return fit;
}

}  // namespace maser
