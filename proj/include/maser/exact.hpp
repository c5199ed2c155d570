#ifndef MASER_EXACT_HPP
#define MASER_EXACT_HPP

#include <Eigen/Dense>
#include <complex>
#include <string>
#include <vector>

#include "maser/meanfield.hpp"
#include "maser/ode.hpp"
#include "maser/params.hpp"

namespace maser {

// Small exact master-equation solver used to validate the moment equations.
// It propagates the full density matrix of a truncated resonator coupled to
// a handful of spins (optionally plus a truncated filter resonator), in the
// frame rotating at omega_c where all dissipators keep their form and the
// Hamiltonian only carries detunings.  Deliberately brute force: dense
// matrices, no symmetry tricks, so its correctness is easy to audit.
struct ExactModel {
  SystemParams params;  // rates and frequencies; n_spins is taken from below
  int n_spins = 1;      // 1..4
  int fock_cutoff = 10;  // resonator truncated to 0..fock_cutoff, at most 30
  int filter_cutoff = -1;  // -1 disables the filter mode; otherwise 1..5
  double filter_omega = 0.0;  // absolute filter frequency when enabled
  // Guard against accidentally huge Hilbert spaces; may be raised to 1<<14.
  int max_dimension = 1 << 10;

  std::size_t dimension() const;
  void validate() const;
};

// Product states used as fixtures.
Eigen::MatrixXcd exact_thermal_state(const ExactModel& model);  // Gibbs x Gibbs, filter vacuum
Eigen::MatrixXcd exact_ground_state(const ExactModel& model);   // vacuum, all spins down
Eigen::MatrixXcd exact_excited_state(const ExactModel& model);  // vacuum, all spins up

struct ExactObservables {
  double trace = 0.0;
  double photon_number = 0.0;
  double filter_photon = 0.0;
  std::complex<double> field{0.0, 0.0};  // <a>
  std::vector<double> inversion;         // per spin
  std::vector<std::complex<double>> spin_photon;  // per spin, <sigma^dag a>
  double mean_inversion = 0.0;
  std::complex<double> mean_spin_photon{0.0, 0.0};
  // Average over distinct spin pairs; zero when only one spin is present.
  std::complex<double> spin_spin{0.0, 0.0};
  double purity = 0.0;
};

ExactObservables exact_observables(const Eigen::MatrixXcd& rho,
                                   const ExactModel& model);

struct ExactTrajectory {
  std::vector<double> times;
  std::vector<ExactObservables> observables;
  Eigen::MatrixXcd final_rho;
  OdeStats stats;
  double max_trace_drift = 0.0;   // largest |tr rho - 1| seen at checkpoints
  double min_eigenvalue = 0.0;    // most negative eigenvalue at checkpoints
};

// Integrates the master equation with an explicit adaptive stepper,
// hermitizing and checking trace and positivity at n_checkpoints evenly
// spaced times.  A negative eigenvalue beyond 1e-6 aborts with
// solver_error: the state has outgrown the Fock truncation.
ExactTrajectory exact_evolve(const ExactModel& model,
                             const Eigen::MatrixXcd& rho0, double t_end,
                             double tol = 1e-9, int n_checkpoints = 20);

struct MomentComparison {
  struct Entry {
    std::string name;
    double scale = 0.0;          // running magnitude used for relative errors
    double max_abs_diff = 0.0;
    double final_abs_diff = 0.0;
    double max_rel_diff = 0.0;
  };
  std::vector<Entry> entries;
  double horizon = 0.0;
  // Early-time discrepancy growing linearly from t = 0 points at a sign or
  // rate error in the moment equations; the second-order closure itself
  // builds up quadratically before saturating.
  bool linear_growth_flag = false;
  std::string note;
};

// Runs the exact solver and the identical-spins moment equations side by
// side from the same (product) initial state and reports per-moment
// discrepancies.  Diagnostic only: it never throws on disagreement.
MomentComparison compare_meanfield(const ExactModel& model, double t_end,
                                   double tol = 1e-9, int n_checkpoints = 40);
MomentComparison compare_meanfield(const ExactModel& model,
                                   const Eigen::MatrixXcd& rho0, double t_end,
                                   double tol = 1e-9, int n_checkpoints = 40);

}  // namespace maser

#endif
