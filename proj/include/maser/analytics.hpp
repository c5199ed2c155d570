#ifndef MASER_ANALYTICS_HPP
#define MASER_ANALYTICS_HPP

#include <complex>
#include <string>
#include <utility>
#include <vector>

#include "maser/meanfield.hpp"
#include "maser/params.hpp"

namespace maser {

// Two algebraic forms of the pump threshold for masing.
//   exact:            eta >= gamma (2 n_k_th + 1 + N C) / (N C - 1)
//   large_ensemble:   eta >= gamma ((2 n_k_th + 1) / (N C) + 1)
// The second drops the -1 against N C in the denominator and is the form
// behind the usual "threshold of a few hundred gamma at room temperature"
// estimates; both are reported by the acceptance checks.
enum class ThresholdForm { exact, large_ensemble };

struct ThresholdResult {
  bool reachable = false;   // requires N C > 1
  double eta = 0.0;         // rad/s, meaningful only when reachable
  double n_cooperativity = 0.0;  // N C evaluated at the pump used for lambda_s
  bool self_consistent = false;  // lambda_s iterated with eta at threshold
};

// Pump rate above which the ensemble collectively exceeds the losses.  By
// default lambda_s is evaluated at eta = 0; with self_consistent the pump
// entering lambda_s is iterated to the returned threshold.
ThresholdResult masing_threshold(const SystemParams& params,
                                 ThresholdForm form = ThresholdForm::exact,
                                 bool self_consistent = false);

// Complex emission-peak frequencies: roots of the quadratic formed by the
// spin and resonator coherence poles hybridized by the collective coupling,
//   w_pm = [wtk* + wtc* +- sqrt((wtk* - wtc*)^2 - 4 N g^2 sz)] / 2
// with wtc* = omega_c + i kappa_c/2 and wtk* = omega_s + i lambda_s.  The
// square root takes the branch with nonnegative real part.  Real parts are
// peak centers, imaginary parts half-widths (FWHM = 2 Im).
struct PeakPair {
  std::complex<double> plus;
  std::complex<double> minus;
};

PeakPair peak_frequencies(const SystemParams& params, double inversion);

// Same roots measured from omega_c; this loses no precision to the 1e10
// rad/s carrier and is what the spectrum machinery consumes.
PeakPair peak_frequencies_offset(const SystemParams& params, double inversion);

// Discriminant R = (lambda_s - kappa_c/2)^2 + 4 N g^2 sz of the resonant
// peak structure.  R < 0: two peaks split by sqrt(|R|) with common width
// lambda_s + kappa_c/2.  R > 0: both peaks at omega_c with widths
// (lambda_s + kappa_c/2 -+ sqrt(R)); the narrow branch is the maser line.
// detuned_flag, when given, is set if omega_s != omega_c.
double resonant_r(const SystemParams& params, double inversion,
                  bool* detuned_flag = nullptr);
// Same quantity from the collective spin projection M = N sz / 2, using
// 4 N g^2 sz = 8 g^2 M.
double resonant_r_from_m(const SystemParams& params, double m_projection,
                         bool* detuned_flag = nullptr);

// Collective Dicke quantum numbers from the second moments:
//   M = N sz / 2
//   J = sqrt(3 N / 4 + N (N - 1) (Re ss + sz^2 / 4))
struct DickeNumbers {
  double j = 0.0;
  double m = 0.0;
  bool radicand_clipped = false;  // tiny negative radicand clipped to zero
  bool imag_warning = false;      // |Im ss| exceeded 1e-6
};

DickeNumbers dicke_numbers(double inversion, std::complex<double> spin_spin,
                           double n_spins);

// Emission frequencies of the Dicke-state dressed doublet,
//   w_pm = [omega_c + omega_s +- sqrt(8 J g^2 + (omega_c - omega_s)^2)] / 2.
std::pair<double, double> dressed_frequencies(double j, double g,
                                              double omega_c, double omega_s);

enum class Regime { superradiant_maser, thermal, superradiance };

const char* regime_name(Regime regime);

// Classifies an operating point: masing needs the pump at or above the
// exact threshold together with a bright resonator, a hot resonator below
// threshold is thermal, and everything else is plain superradiance.
Regime classify_regime(const SystemParams& params, const MeanFieldState& steady);

struct PullingFit {
  double slope = 0.0;      // d(peak shift)/d(detuning), dimensionless
  double intercept = 0.0;  // rad/s
  std::vector<double> detunings;  // points actually used in the fit
  std::vector<double> shifts;     // masing-peak center minus omega_c, rad/s
  std::vector<double> excluded;   // detunings dropped because not masing
  bool warning = false;           // set when any point was excluded
};

// Frequency pulling of the maser line: solves the steady state and locates
// the narrow emission peak for each spin-resonator detuning in `detunings`,
// then fits peak shift versus detuning.  Non-masing points are excluded.
PullingFit pulling_factor(const SystemParams& params,
                          const std::vector<double>& detunings);

}  // namespace maser

#endif
