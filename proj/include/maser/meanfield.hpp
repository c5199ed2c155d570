#ifndef MASER_MEANFIELD_HPP
#define MASER_MEANFIELD_HPP

#include <complex>
#include <limits>
#include <string>
#include <vector>

#include "maser/ode.hpp"
#include "maser/params.hpp"

namespace maser {

// Second-order moments of the collective spin-resonator system when all
// spins share one frequency, coupling and set of rates.  Permutation
// symmetry reduces the full moment hierarchy to four quantities:
//   photon_number  <a^dag a>
//   spin_photon    <sigma^dag a>   (same for every spin)
//   inversion      <sigma_z>
//   spin_spin      <sigma^dag sigma'>  for any pair of distinct spins
struct MeanFieldState {
  double photon_number = 0.0;
  std::complex<double> spin_photon{0.0, 0.0};
  double inversion = -1.0;
  std::complex<double> spin_spin{0.0, 0.0};
};

// Rate bundle used by the right-hand side.  Everything is angular (rad/s).
// delta is the spin-resonator detuning omega_s - omega_c; lambda_big is the
// decay rate of <sigma^dag a>, lambda_s + kappa_c/2.
struct MeanFieldRates {
  double kappa_c = 0.0;
  double n_c_th = 0.0;
  double delta = 0.0;
  double lambda_s = 0.0;
  double g = 0.0;
  double n_spins = 1.0;
  double gamma = 0.0;
  double n_k_th = 0.0;
  double eta = 0.0;
};

MeanFieldRates meanfield_rates(const SystemParams& params);

// Time derivatives of the packed state [n, Re c, Im c, sz, Re ss, Im ss]
// where c = <sigma^dag a> and ss = <sigma^dag sigma'>.  Templated so the
// steady-state refinement can evaluate the same expressions in long double.
template <typename Real>
void meanfield_rhs_packed(const MeanFieldRates& r, const Real* y, Real* f) {
  const Real n = y[0];
  const Real cr = y[1];
  const Real ci = y[2];
  const Real sz = y[3];
  const Real sr = y[4];
  const Real si = y[5];

  const Real kappa = static_cast<Real>(r.kappa_c);
  const Real nc = static_cast<Real>(r.n_c_th);
  const Real delta = static_cast<Real>(r.delta);
  const Real lam = static_cast<Real>(r.lambda_s);
  const Real g = static_cast<Real>(r.g);
  const Real nsp = static_cast<Real>(r.n_spins);
  const Real gam = static_cast<Real>(r.gamma);
  const Real nk = static_cast<Real>(r.n_k_th);
  const Real eta = static_cast<Real>(r.eta);

  // Total decay rate of the spin-photon coherence: spin dephasing plus half
  // the resonator linewidth.
  const Real lam_big = lam + kappa / Real(2);

  // Resonator occupation relaxes to the thermal value while the ensemble
  // pumps it through the collective part of the coherence, i N g (c - c*).
  f[0] = -kappa * (n - nc) - Real(2) * nsp * g * ci;

  // Spin-photon coherence: free rotation at the detuning, damping at
  // lambda_s + kappa_c/2, stimulated term g n sz, spontaneous seed
  // g (sz + 1)/2, and the feedback of the other N-1 spins through ss.
  f[1] = -lam_big * cr - delta * ci + (nsp - Real(1)) * g * si;
  f[2] = delta * cr - lam_big * ci - g * n * sz - (g / Real(2)) * (sz + Real(1)) -
         (nsp - Real(1)) * g * sr;

  // Inversion: exchange with the resonator (4 g Im c), thermal relaxation at
  // gamma (2 n_k_th + 1) toward the thermal value, and pumping at eta toward
  // full inversion.
  f[3] = Real(4) * g * ci - gam * ((Real(2) * nk + Real(1)) * sz + Real(1)) -
         eta * (sz - Real(1));

  // Spin-spin correlation: for identical spins the oscillation cancels and
  // only the 2 lambda_s decay and the real drive -2 g sz Im c remain.
  f[4] = -Real(2) * lam * sr - Real(2) * g * sz * ci;
  f[5] = -Real(2) * lam * si;
}

// Time derivative of the state, as a state-shaped object.
MeanFieldState rhs_identical(const MeanFieldState& state, const SystemParams& params);

struct Trajectory {
  std::vector<double> times;
  std::vector<MeanFieldState> states;
  // Set when the stepper hit step-size underflow; the trajectory then ends at
  // the last accepted point instead of t_end.
  bool stiffness_failure = false;
  std::string message;
  OdeStats stats;

  const MeanFieldState& final_state() const { return states.back(); }
  double final_time() const { return times.back(); }
};

// Integrates the moment equations from `initial` over [0, t_end] with a
// stiffness-safe adaptive stepper.  tol must lie in (0, 1e-2].
Trajectory evolve(const MeanFieldState& initial, const SystemParams& params,
                  double t_end, double tol = 1e-8);

struct SteadyStateResult {
  MeanFieldState state;
  bool converged = false;
  int newton_iterations = 0;
  // Largest component of the right-hand side divided by the characteristic
  // rate and magnitude of its equation.
  double residual = std::numeric_limits<double>::infinity();
  bool used_integration_fallback = false;
  std::string message;
};

// Damped Newton solve of rhs = 0 with an analytic zero-coupling initial
// guess, continuation in the pump rate when the direct solve stalls, and a
// long-time integration fallback.  The converged root is polished in long
// double so that the inversion is accurate at the 1e-12 level, which the
// narrow masing linewidth is directly sensitive to.
SteadyStateResult steady_state(const SystemParams& params);
SteadyStateResult steady_state(const SystemParams& params, const MeanFieldState& guess);

struct EtaSweepPoint {
  double eta = 0.0;
  MeanFieldState state;
  bool converged = false;
};

struct EtaSweepResult {
  std::vector<EtaSweepPoint> ascending;
  std::vector<EtaSweepPoint> descending;
  // Indices (into the eta grid) where ascending and descending photon numbers
  // disagree by more than 1%; empty when the branch is unique.
  std::vector<int> hysteresis;
};

// Warm-started sweep over pump rates, run in both directions so bistable
// windows show up as hysteresis instead of silently depending on the start.
EtaSweepResult sweep_eta(const SystemParams& params, const std::vector<double>& etas);

}  // namespace maser

#endif
