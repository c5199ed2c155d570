// Acceptance gate: ten end-to-end checks of the library against its
// published operating points, one PASS/FAIL line each with the measured
// values.  Exit code is the number of failed checks.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <complex>
#include <cstdio>
#include <functional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "maser/analytics.hpp"
#include "maser/exact.hpp"
#include "maser/meanfield.hpp"
#include "maser/params.hpp"
#include "maser/spectrum.hpp"
#include "maser/subensemble.hpp"
#include "maser/units.hpp"

using namespace maser;
using Mat = Eigen::MatrixXcd;
using std::complex;

namespace {

struct Criterion {
  bool pass = false;
  std::string detail;
};

bool within(double value, double target, double rel) {
  return std::isfinite(value) &&
         std::fabs(value - target) <= rel * std::fabs(target);
}

std::string num(double v, const char* f = "%.4g") {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

// Room-temperature operating point quoted throughout: resonant ensemble of
// 4e13 spins with g = 0.7 rad/s in a kappa_c = 1.9e6 rad/s resonator at
// 9.22 GHz, gamma = 0.157 1/s, chi = 4e6 rad/s.
SystemParams room_reference() {
  SystemParams p;
  p.omega_c = two_pi * 9.22e9;
  p.omega_s = p.omega_c;
  p.kappa_c = 1.9e6;
  p.n_spins = 4e13;
  p.g = 0.7;
  p.gamma = 0.157;
  p.chi = 4e6;
  p.eta = 0.0;
  p.temperature = 293.0;
  return p;
}

// The tabulated hardware parameters cooled to 25 mK with the homogeneous
// dephasing pinned at 4e6 rad/s: the configuration of the narrow-line
// studies.
SystemParams cold_reference() {
  SystemParams p = load_preset("breeze2018").params;
  p.temperature = 0.025;
  p.chi = 4e6;
  return p;
}

const SpectrumPeak* narrowest_resolved(const SpectrumResult& spec) {
  const SpectrumPeak* best = nullptr;
  for (const SpectrumPeak& pk : spec.peaks)
    if (pk.resolved && (!best || pk.fwhm < best->fwhm)) best = &pk;
  return best;
}

// Peaks tall enough to count as features of the lineshape rather than
// numerical shoulders of a dominant line.
std::vector<const SpectrumPeak*> visible_peaks(const SpectrumResult& spec) {
  double tallest = 0.0;
  for (const SpectrumPeak& pk : spec.peaks)
    tallest = std::max(tallest, pk.height);
  std::vector<const SpectrumPeak*> out;
  for (const SpectrumPeak& pk : spec.peaks)
    if (pk.height >= 0.01 * tallest) out.push_back(&pk);
  return out;
}

// Worst distance between measured peak centers and the two analytic peak
// frequencies, in units of the analytic separation.
double center_mismatch(const SystemParams& p, double inversion,
                       const std::vector<const SpectrumPeak*>& peaks) {
  const PeakPair pp = peak_frequencies_offset(p, inversion);
  const double c_plus = pp.plus.real();
  const double c_minus = pp.minus.real();
  const double sep = std::fabs(c_plus - c_minus);
  double worst = 0.0;
  for (const SpectrumPeak* pk : peaks) {
    const double d = std::min(std::fabs(pk->center_offset - c_plus),
                              std::fabs(pk->center_offset - c_minus));
    worst = std::max(worst, d / sep);
  }
  return worst;
}

Mat kron2(const Mat& a, const Mat& b) {
  Mat out(a.rows() * b.rows(), a.cols() * b.cols());
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    for (Eigen::Index j = 0; j < a.cols(); ++j)
      out.block(i * b.rows(), j * b.cols(), b.rows(), b.cols()) = a(i, j) * b;
  return out;
}

// ---------------------------------------------------------------------
// 1. Derived rates at the room-temperature operating point.
Criterion c1_derived_rates() {
  const SystemParams p = room_reference();
  const DerivedRates d = derive_rates(p);
  const double nth = d.n_c_th;
  const double purcell = d.gamma_purcell;
  const double coll = collective_coupling(p);
  Criterion c;
  c.pass = within(nth, 662.0, 0.01) && within(purcell, 1.03e-6, 0.01) &&
           within(coll, 4.42e6, 0.01);
  c.detail = "n_th=" + num(nth, "%.6g") + " (662 +-1%), purcell=" +
             num(purcell) + " (1.03e-6 +-1%), sqrtN*g=" + num(coll) +
             " (4.42e6 +-1%)";
  return c;
}

// 2. Masing threshold: the large-ensemble form lands on the quoted
// room-temperature value, and the exact form approaches gamma in the cold
// high-cooperativity limit.
Criterion c2_threshold() {
  const SystemParams p = load_preset("breeze2018").params;
  const ThresholdResult large =
      masing_threshold(p, ThresholdForm::large_ensemble);
  const ThresholdResult exact = masing_threshold(p, ThresholdForm::exact);
  const double r_large = large.eta / p.gamma;
  const double r_exact = exact.eta / p.gamma;

  SystemParams cold = p;
  cold.temperature = 0.025;
  cold.n_spins = 4e15;
  const ThresholdResult limit = masing_threshold(cold, ThresholdForm::exact);
  const double r_limit = limit.eta / p.gamma;

  Criterion c;
  c.pass = large.reachable && within(r_large, 160.0, 0.10) &&
           limit.reachable && limit.n_cooperativity > 100.0 &&
           within(r_limit, 1.0, 0.10);
  c.detail = "room threshold " + num(r_large) +
             "*gamma (large-ensemble form; 160 +-10%), exact form " +
             num(r_exact) + "*gamma; cold limit " + num(r_limit) +
             "*gamma at NC=" + num(limit.n_cooperativity) + " (1 +-10%)";
  return c;
}

// 3. Narrow maser line at eta = 1e3 gamma, 25 mK: numeric FWHM below a
// millihertz and at least eight orders of magnitude under both the
// resonator linewidth and the dephasing rate.
Criterion c3_linewidth() {
  SystemParams p = cold_reference();
  p.eta = 1e3 * p.gamma;
  const SteadyStateResult ss = steady_state(p);
  Criterion c;
  if (!ss.converged) {
    c.detail = "steady state failed: " + ss.message;
    return c;
  }
  const DerivedRates d = derive_rates(p);
  const double w = 4.0 * (d.lambda_s + 0.5 * p.kappa_c);
  const SpectrumResult spec = scan_spectrum(p, ss.state, -w, w);
  const SpectrumPeak* pk = narrowest_resolved(spec);
  if (!pk) {
    c.detail = "no resolved peak";
    return c;
  }
  const double fw_hz = pk->fwhm / two_pi;
  const double vs_kappa = p.kappa_c / pk->fwhm;
  const double vs_chi = p.chi / pk->fwhm;
  c.pass = fw_hz < 1e-3 && vs_kappa >= 1e8 && vs_chi >= 1e8;
  c.detail = "fwhm=" + num(fw_hz) + " Hz (<1e-3), kappa_c/fwhm=" +
             num(vs_kappa) + ", chi/fwhm=" + num(vs_chi) + " (both >=1e8)";
  return c;
}

// 4. Fifty-class Gaussian ensemble: hard pumping collapses the broadened
// line to a single millihertz-decade peak; weak pumping shows exactly two
// resolved peaks.  The absolute shift of the hard-pumped peak is reported
// as a soft quantity: a frequency grid symmetric about the resonator
// leaves no direction for the line to move.
Criterion c4_broadened_ensemble() {
  SystemParams base = load_preset("breeze2018").params;
  base.temperature = 0.025;
  const double chi_inh = 4e6;
  const double w =
      4.0 * std::max({chi_inh, collective_coupling(base), base.kappa_c});
  Criterion c;
  std::ostringstream oss;
  bool ok = true;

  SystemParams hard = base;
  hard.eta = 1e5 * hard.gamma;
  const SubEnsembleModel model_hard = discretize_gaussian(hard, chi_inh, 50);
  const SubEnsembleSteadyResult s_hard = steady_state_subensembles(model_hard);
  if (!s_hard.converged) {
    c.detail = "hard-pump steady state failed: " + s_hard.message;
    return c;
  }
  const SpectrumResult spec_hard =
      scan_spectrum_subensemble(model_hard, s_hard.state, -w, w);
  const std::vector<const SpectrumPeak*> vis_hard = visible_peaks(spec_hard);
  const SpectrumPeak* pk = narrowest_resolved(spec_hard);
  if (vis_hard.size() != 1 || !pk) {
    ok = false;
    oss << "hard pump: " << vis_hard.size() << " visible peaks; ";
  } else {
    const double fw_hz = pk->fwhm / two_pi;
    const double shift_hz = std::fabs(pk->center_offset) / two_pi;
    if (!(fw_hz >= 1e-3 && fw_hz < 1e-2)) ok = false;
    oss << "hard pump: single peak, fwhm=" << num(fw_hz)
        << " Hz (decade [1e-3,1e-2)), SOFT shift=" << num(shift_hz)
        << " Hz (symmetric grid pins the line to the resonator); ";
  }

  SystemParams weak = base;
  weak.eta = 1e-3 * weak.gamma;
  const SubEnsembleModel model_weak = discretize_gaussian(weak, chi_inh, 50);
  const SubEnsembleSteadyResult s_weak = steady_state_subensembles(model_weak);
  if (!s_weak.converged) {
    c.detail = oss.str() + "weak-pump steady state failed";
    return c;
  }
  const SpectrumResult spec_weak =
      scan_spectrum_subensemble(model_weak, s_weak.state, -w, w);
  int resolved = 0;
  for (const SpectrumPeak* q : visible_peaks(spec_weak))
    if (q->resolved) ++resolved;
  if (resolved != 2) ok = false;
  oss << "weak pump: " << resolved << " resolved peaks (want 2)";

  c.pass = ok;
  c.detail = oss.str();
  return c;
}

// 5. Spectral shape transitions: pump sweep merges two peaks into one
// narrow line, ensemble-size sweep splits one peak into two, and resolved
// peak centers sit on the analytic peak frequencies.
Criterion c5_transitions() {
  Criterion c;
  std::ostringstream oss;
  bool ok = true;

  SystemParams p = cold_reference();

  p.eta = 1e-3 * p.gamma;
  SteadyStateResult lo = steady_state(p);
  if (!lo.converged) {
    c.detail = "weak-pump steady state failed";
    return c;
  }
  double r = resonant_r(p, lo.state.inversion);
  double w = 4.0 * std::max(derive_rates(p).lambda_s + 0.5 * p.kappa_c,
                            r < 0 ? std::sqrt(-r) : 0.0);
  const SpectrumResult spec_lo = scan_spectrum(p, lo.state, -w, w);
  std::vector<const SpectrumPeak*> vis = visible_peaks(spec_lo);
  double doublet_fwhm = 0.0;
  if (vis.size() != 2) {
    ok = false;
    oss << "pump sweep low end: " << vis.size() << " peaks (want 2); ";
  } else {
    const double mism = center_mismatch(p, lo.state.inversion, vis);
    if (mism > 0.02) ok = false;
    doublet_fwhm = vis[0]->fwhm;
    oss << "two peaks at weak pump (centers off by "
        << num(100.0 * mism, "%.2f") << "% of separation); ";
  }

  p.eta = 1e3 * p.gamma;
  SteadyStateResult hi = steady_state(p);
  const SpectrumResult spec_hi =
      hi.converged ? scan_spectrum(p, hi.state, -w, w) : SpectrumResult{};
  vis = visible_peaks(spec_hi);
  const SpectrumPeak* narrow = narrowest_resolved(spec_hi);
  if (!hi.converged || vis.size() != 1 || !narrow ||
      !(narrow->fwhm < 0.01 * doublet_fwhm)) {
    ok = false;
    oss << "pump sweep high end: expected one narrow peak; ";
  } else {
    oss << "one narrow peak at strong pump (fwhm "
        << num(narrow->fwhm / two_pi) << " Hz); ";
  }

  p = cold_reference();
  p.eta = 0.01 * p.gamma;
  for (double n : {1e12, 1e14}) {
    p.n_spins = n;
    SteadyStateResult s = steady_state(p);
    if (!s.converged) {
      ok = false;
      oss << "N=" << num(n) << ": steady state failed; ";
      continue;
    }
    r = resonant_r(p, s.state.inversion);
    w = 4.0 * std::max(derive_rates(p).lambda_s + 0.5 * p.kappa_c,
                       r < 0 ? std::sqrt(-r) : 0.0);
    const SpectrumResult spec = scan_spectrum(p, s.state, -w, w);
    vis = visible_peaks(spec);
    const std::size_t want = (n > 5e12) ? 2 : 1;
    if (vis.size() != want) {
      ok = false;
      oss << "N=" << num(n) << ": " << vis.size() << " peaks (want " << want
          << "); ";
      continue;
    }
    if (want == 2) {
      const double mism = center_mismatch(p, s.state.inversion, vis);
      if (mism > 0.02) ok = false;
      oss << "N=" << num(n) << ": split into two (centers off by "
          << num(100.0 * mism, "%.2f") << "%); ";
    } else {
      oss << "N=" << num(n) << ": one peak; ";
    }
  }

  c.pass = ok;
  c.detail = oss.str();
  return c;
}

// 6. Frequency pulling of the maser line over detunings up to twice the
// dephasing rate.
Criterion c6_pulling() {
  SystemParams p = cold_reference();
  p.eta = 10.0 * p.gamma;
  std::vector<double> detunings;
  for (int k = 0; k <= 4; ++k) detunings.push_back(0.5 * k * p.chi);
  const PullingFit fit = pulling_factor(p, detunings);
  Criterion c;
  c.pass = std::isfinite(fit.slope) && std::fabs(fit.slope - 0.25) <= 0.10 &&
           fit.excluded.empty();
  c.detail = "slope=" + num(fit.slope, "%.4f") + " (0.25 +-0.10), " +
             std::to_string(fit.detunings.size()) + " points used, " +
             std::to_string(fit.excluded.size()) + " excluded";
  return c;
}

// 7. Thermal regime boundary: in the pump-temperature plane the bright
// region at weak pumping coincides with a thermal resonator occupation of
// one, to within a grid cell.
Criterion c7_thermal_boundary() {
  const SystemParams base = load_preset("breeze2018").params;
  const int n_temp = 25;
  std::vector<double> temps(n_temp);
  for (int i = 0; i < n_temp; ++i)
    temps[i] = 0.025 * std::pow(293.0 / 0.025, double(i) / (n_temp - 1));

  int model_boundary = n_temp;
  for (int i = 0; i < n_temp; ++i) {
    SystemParams q = base;
    q.temperature = temps[i];
    if (derive_rates(q).n_c_th >= 1.0) {
      model_boundary = i;
      break;
    }
  }

  Criterion c;
  std::ostringstream oss;
  bool ok = model_boundary < n_temp;
  oss << "n_th crosses 1 at cell " << model_boundary << " (T="
      << num(temps[model_boundary]) << " K); measured bright boundary at ";
  for (double mult : {1e-4, 1e-3, 1e-2}) {
    int measured = n_temp;
    for (int i = 0; i < n_temp; ++i) {
      SystemParams q = base;
      q.temperature = temps[i];
      q.eta = mult * base.gamma;
      const SteadyStateResult s = steady_state(q);
      if (!s.converged) {
        ok = false;
        break;
      }
      if (s.state.photon_number > 1.0) {
        measured = i;
        break;
      }
    }
    if (std::abs(measured - model_boundary) > 1) ok = false;
    oss << "cell " << measured << " (eta=" << num(mult) << "*gamma) ";
  }
  c.pass = ok;
  c.detail = oss.str();
  return c;
}

// 8. Exact-oracle suite: every dissipator reproduces its closed-form
// single-subsystem decay, the moment equations are exact for decoupled
// spins, and the closure tracks two strongly dephased spins to a few
// percent.
Criterion c8_oracle() {
  std::ostringstream oss;
  bool ok = true;
  SystemParams base;
  base.omega_c = two_pi * 9.22e9;
  base.omega_s = base.omega_c;

  {  // resonator relaxation toward the thermal occupation
    ExactModel m;
    m.params = base;
    m.params.kappa_c = 2.0;
    m.params.temperature = 0.3;
    m.fock_cutoff = 14;
    const DerivedRates d = derive_rates(m.params);
    const ExactTrajectory t = exact_evolve(m, exact_ground_state(m), 1.5, 1e-10);
    double worst = 0.0;
    for (std::size_t k = 0; k < t.times.size(); ++k) {
      const double want = d.n_c_th * (1.0 - std::exp(-2.0 * t.times[k]));
      worst = std::max(
          worst, std::fabs(t.observables[k].photon_number - want) / d.n_c_th);
    }
    if (worst >= 1e-6) ok = false;
    oss << "resonator relax err=" << num(worst) << "; ";
  }
  {  // spin decay at zero temperature
    ExactModel m;
    m.params = base;
    m.params.gamma = 1.0;
    m.fock_cutoff = 1;
    const ExactTrajectory t = exact_evolve(m, exact_excited_state(m), 3.0, 1e-10);
    double worst = 0.0;
    for (std::size_t k = 0; k < t.times.size(); ++k) {
      const double want = -1.0 + 2.0 * std::exp(-t.times[k]);
      worst = std::max(worst, std::fabs(t.observables[k].inversion[0] - want));
    }
    if (worst >= 1e-6) ok = false;
    oss << "spin decay err=" << num(worst) << "; ";
  }
  {  // balance of thermal excitation against the incoherent pump
    ExactModel m;
    m.params = base;
    m.params.gamma = 1.0;
    m.params.eta = 0.7;
    m.params.temperature = 0.3;
    m.fock_cutoff = 1;
    const DerivedRates d = derive_rates(m.params);
    const double rate = m.params.gamma * (2.0 * d.n_k_th + 1.0) + m.params.eta;
    const double sz_inf = (m.params.eta - m.params.gamma) / rate;
    const ExactTrajectory t =
        exact_evolve(m, exact_excited_state(m), 4.0 / rate, 1e-10);
    double worst = 0.0;
    for (std::size_t k = 0; k < t.times.size(); ++k) {
      const double want =
          sz_inf + (1.0 - sz_inf) * std::exp(-rate * t.times[k]);
      worst = std::max(worst, std::fabs(t.observables[k].inversion[0] - want));
    }
    if (worst >= 1e-6) ok = false;
    oss << "pump balance err=" << num(worst) << "; ";
  }
  {  // pure dephasing of a spin superposition
    ExactModel m;
    m.params = base;
    m.params.chi = 0.8;
    m.fock_cutoff = 1;
    Mat vac = Mat::Zero(2, 2);
    vac(0, 0) = 1.0;
    Eigen::Vector2cd psi(1.0 / std::sqrt(2.0), 1.0 / std::sqrt(2.0));
    const Mat rho0 = kron2(vac, psi * psi.adjoint());
    const double t_end = 1.0;
    const ExactTrajectory t = exact_evolve(m, rho0, t_end, 1e-10);
    Mat sm = Mat::Zero(2, 2);
    sm(0, 1) = 1.0;
    const Mat op = kron2(Mat::Identity(2, 2), sm);
    const double got = std::abs((op * t.final_rho).trace());
    const double want = 0.5 * std::exp(-m.params.chi * t_end);
    const double err = std::fabs(got - want) / 0.5;
    if (err >= 1e-6) ok = false;
    oss << "dephasing err=" << num(err) << "; ";
  }
  {  // decoupled limit: the closure is exact
    ExactModel m;
    m.params = base;
    m.params.kappa_c = 2.0;
    m.params.gamma = 1.0;
    m.params.chi = 0.7;
    m.params.eta = 0.4;
    m.params.temperature = 0.3;
    m.params.n_spins = 2;
    m.n_spins = 2;
    m.fock_cutoff = 14;
    const MomentComparison cmp = compare_meanfield(m, 2.5);
    double worst = 0.0;
    for (const auto& e : cmp.entries) worst = std::max(worst, e.max_rel_diff);
    if (worst >= 1e-5 || cmp.linear_growth_flag) ok = false;
    oss << "decoupled worst=" << num(worst) << " (<1e-5); ";
  }
  {  // two dephased spins: closure error stays below ten percent
    ExactModel m;
    m.params = base;
    m.params.kappa_c = 20.0;
    m.params.g = 2.0;
    m.params.gamma = 1.0;
    m.params.chi = 50.0;
    m.params.eta = 0.5;
    m.params.n_spins = 2;
    m.n_spins = 2;
    m.fock_cutoff = 8;
    const MomentComparison cmp = compare_meanfield(m, 5.0 / m.params.kappa_c);
    double worst = 0.0;
    for (const auto& e : cmp.entries) worst = std::max(worst, e.max_rel_diff);
    if (worst >= 0.10 || cmp.linear_growth_flag) ok = false;
    oss << "closure worst=" << num(worst) << " (<0.10)";
  }

  Criterion c;
  c.pass = ok;
  c.detail = oss.str();
  return c;
}

// 9. Invariants across every bundled preset: steady-state bounds, Dicke
// bounds, determinism, probe insensitivity of extracted linewidths,
// Hermiticity of the cross-class correlation matrix, and positivity of a
// two-spin exact miniature built from the preset rates.
Criterion c9_invariants() {
  std::ostringstream bad;
  for (const ExperimentPreset& preset : preset_catalog()) {
    const SystemParams base = preset.params;

    for (double mult : {0.0, 1000.0}) {
      SystemParams p = base;
      p.eta = mult * p.gamma;
      const SteadyStateResult a = steady_state(p);
      const SteadyStateResult b = steady_state(p);
      if (!a.converged) {
        bad << preset.name << ": no steady state at eta=" << num(mult)
            << "*gamma; ";
        continue;
      }
      const MeanFieldState& s = a.state;
      if (!(s.photon_number >= 0.0))
        bad << preset.name << ": negative photon number; ";
      if (!(std::fabs(s.inversion) <= 1.0 + 1e-12))
        bad << preset.name << ": inversion out of bounds; ";
      if (!(std::abs(s.spin_spin) <= 1.0 + 1e-12))
        bad << preset.name << ": spin-spin correlation out of bounds; ";
      const DickeNumbers dk =
          dicke_numbers(s.inversion, s.spin_spin, p.n_spins);
      if (!(std::fabs(dk.m) <= (dk.j + 0.5) * (1.0 + 1e-12)))
        bad << preset.name << ": |M| exceeds J+1/2; ";
      if (!(dk.j <= (0.5 * p.n_spins + 1.0) * (1.0 + 1e-12)))
        bad << preset.name << ": J exceeds N/2+1; ";
      const bool identical = a.state.photon_number == b.state.photon_number &&
                             a.state.spin_photon == b.state.spin_photon &&
                             a.state.inversion == b.state.inversion &&
                             a.state.spin_spin == b.state.spin_spin;
      if (!identical) bad << preset.name << ": repeat solve differs; ";
    }

    {  // probe insensitivity on the unpumped spectrum
      const SystemParams p = base;
      const SteadyStateResult s = steady_state(p);
      const DerivedRates d = derive_rates(p);
      const double w = 4.0 * (d.lambda_s + 0.5 * p.kappa_c);
      const SpectrumResult s1 = scan_spectrum(p, s.state, -w, w);
      const SpectrumPeak* pk = narrowest_resolved(s1);
      if (!pk) {
        bad << preset.name << ": no resolved thermal peak; ";
      } else {
        ScanSettings half;
        half.kappa_f = 0.5 * pk->kappa_f_used;
        const SpectrumResult s2 = scan_spectrum(p, s.state, -w, w, half);
        const SpectrumPeak* pk2 = narrowest_resolved(s2);
        if (!pk2 || std::fabs(pk2->fwhm - pk->fwhm) >= pk->kappa_f_used)
          bad << preset.name << ": kappa_f sensitivity; ";
        SystemParams fp = p;
        fp.filter_kappa = pk->kappa_f_used;
        fp.filter_G = pk->g_used;
        const double v1 =
            filter_photon_number_identical(pk->center_offset, s.state, fp);
        fp.filter_G *= 0.5;
        const double v2 =
            filter_photon_number_identical(pk->center_offset, s.state, fp);
        if (!within(v1 / v2, 4.0, 0.01))
          bad << preset.name << ": probe backaction; ";
      }
    }

    {  // cross-class correlations stay Hermitian
      SystemParams p = base;
      p.eta = 10.0 * p.gamma;
      const SubEnsembleModel model =
          discretize_gaussian(p, std::max(p.chi, p.kappa_c), 5);
      const SubEnsembleSteadyResult r = steady_state_subensembles(model);
      if (!r.converged) {
        bad << preset.name << ": subensemble steady state failed; ";
      } else {
        const Mat gap = r.state.spin_spin -
                        Mat(r.state.spin_spin.adjoint());
        if (gap.cwiseAbs().maxCoeff() > 1e-9)
          bad << preset.name << ": correlation matrix not Hermitian; ";
        for (double sz : r.state.inversion)
          if (!(std::fabs(sz) <= 1.0 + 1e-12))
            bad << preset.name << ": class inversion out of bounds; ";
      }
    }

    {  // exact two-spin miniature with the preset rates
      ExactModel m;
      m.params = base;
      m.params.n_spins = 2;
      m.params.temperature = std::min(base.temperature, 0.2);
      m.params.g = std::max(base.g, 0.25 * base.kappa_c);
      m.params.eta = base.gamma;
      m.n_spins = 2;
      m.fock_cutoff = 8;
      const ExactTrajectory t =
          exact_evolve(m, exact_excited_state(m), 3.0 / base.kappa_c, 1e-10);
      if (t.max_trace_drift > 1e-8) bad << preset.name << ": trace drift; ";
      if (t.min_eigenvalue < -1e-9) bad << preset.name << ": positivity; ";
      const Mat gap = t.final_rho - Mat(t.final_rho.adjoint());
      if (gap.cwiseAbs().maxCoeff() > 1e-10)
        bad << preset.name << ": density matrix not Hermitian; ";
    }
  }

  Criterion c;
  c.pass = bad.str().empty();
  c.detail = c.pass ? "6 presets x {steady bounds, Dicke bounds, determinism, "
                      "probe insensitivity, Hermiticity, exact positivity} "
                      "all hold"
                    : bad.str();
  return c;
}

// 10. Robustness of the masing line against splitting the resonant class
// into five subclasses spread over 20 mHz.
Criterion c10_splitting() {
  SystemParams base = load_preset("breeze2018").params;
  base.n_spins = 8e13;
  base.temperature = 0.025;
  base.eta = 1e3 * base.gamma;
  const double chi_inh = 4e6;
  const double w =
      4.0 * std::max({chi_inh, collective_coupling(base), base.kappa_c});

  Criterion c;
  const SubEnsembleModel model = discretize_gaussian(base, chi_inh, 50);
  const SubEnsembleSteadyResult s = steady_state_subensembles(model);
  if (!s.converged) {
    c.detail = "baseline steady state failed: " + s.message;
    return c;
  }
  const SpectrumResult spec = scan_spectrum_subensemble(model, s.state, -w, w);
  const SpectrumPeak* pk = narrowest_resolved(spec);
  if (!pk) {
    c.detail = "baseline peak unresolved";
    return c;
  }

  const SubEnsembleModel split = split_central_class(model, 5, two_pi * 0.02);
  const SubEnsembleSteadyResult s2 = steady_state_subensembles(split);
  if (!s2.converged) {
    c.detail = "split steady state failed: " + s2.message;
    return c;
  }
  const SpectrumResult spec2 =
      scan_spectrum_subensemble(split, s2.state, -w, w);
  const SpectrumPeak* pk2 = narrowest_resolved(spec2);
  if (!pk2) {
    c.detail = "split peak unresolved";
    return c;
  }

  const double change = std::fabs(pk2->fwhm / pk->fwhm - 1.0);
  c.pass = change < 0.10;
  c.detail = "fwhm " + num(pk->fwhm / two_pi) + " Hz -> " +
             num(pk2->fwhm / two_pi) + " Hz after 5-way 20 mHz split (" +
             num(100.0 * change, "%.2f") + "% change, <10%)";
  return c;
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<Criterion()>>> gate =
      {
          {"derived rates at the reference point", c1_derived_rates},
          {"masing threshold forms", c2_threshold},
          {"sub-millihertz masing linewidth", c3_linewidth},
          {"broadened-ensemble spectra across pumps", c4_broadened_ensemble},
          {"spectral shape transitions", c5_transitions},
          {"frequency pulling slope", c6_pulling},
          {"thermal regime boundary", c7_thermal_boundary},
          {"exact-oracle agreement suite", c8_oracle},
          {"invariants across presets", c9_invariants},
          {"linewidth robustness under class splitting", c10_splitting},
      };

  int failures = 0;
  for (std::size_t k = 0; k < gate.size(); ++k) {
    Criterion result;
    const auto start = std::chrono::steady_clock::now();
    try {
      result = gate[k].second();
    } catch (const std::exception& e) {
      result.pass = false;
      result.detail = std::string("exception: ") + e.what();
    }
    const double seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start)
            .count();
    if (!result.pass) ++failures;
    std::printf("[%2zu] %s  %s | %s (%.1f s)\n", k + 1,
                result.pass ? "PASS" : "FAIL", gate[k].first.c_str(),
                result.detail.c_str(), seconds);
  }
  std::printf("%d/%zu criteria passed\n", int(gate.size()) - failures,
              gate.size());
  return failures;
}
