#ifndef MASER_SUBENSEMBLE_HPP
#define MASER_SUBENSEMBLE_HPP

#include <Eigen/Dense>
#include <complex>
#include <limits>
#include <string>
#include <vector>

#include "maser/analytics.hpp"
#include "maser/ode.hpp"
#include "maser/params.hpp"

namespace maser {

// One frequency class: count spins sharing a transition frequency, coupling
// and set of rates.  Counts are integral values carried as double so that
// ensembles of 1e13 spins fit without a wide-integer type.
struct SpinClass {
  double count = 0.0;
  double omega = 0.0;  // rad/s
  double g = 0.0;
  double gamma = 0.0;
  double chi = 0.0;
  double eta = 0.0;
};

// Resonator plus a list of frequency classes, ordered by omega.
struct SubEnsembleModel {
  double omega_c = 0.0;
  double kappa_c = 0.0;
  double temperature = 0.0;
  double filter_G = 0.0;      // 0 = pick automatically when scanning
  double filter_kappa = 0.0;  // 0 = pick automatically when scanning
  double declared_total = 0.0;
  std::vector<SpinClass> classes;

  std::size_t n_classes() const { return classes.size(); }
  double n_total() const;
  // Throws config_error on unordered frequencies, nonpositive counts, or a
  // class sum that disagrees with the declared total.
  void validate() const;

  // Resonator and thermal settings from `base`, classes as given.
  static SubEnsembleModel from_params(const SystemParams& base,
                                      std::vector<SpinClass> classes);
};

// Splits an inhomogeneous Gaussian line of FWHM-scale width chi_inh
// (rad/s) into n_classes uniformly spaced frequencies spanning +-2.5 sigma
// around `center` (default: the spin frequency of `base`).  Class counts
// follow the Gaussian weight, rounded by largest remainder so they sum to
// base.n_spins exactly.  Each class keeps the coupling and rates of `base`
// except for the dephasing, which is reduced to chi = 2 chi_inh / n_classes
// so that neighboring classes just tile the line.
SubEnsembleModel discretize_gaussian(
    const SystemParams& base, double chi_inh, int n_classes,
    double center = std::numeric_limits<double>::quiet_NaN());

// Replaces the class nearest to the resonator by n_sub classes spread
// uniformly over +-spread/2 around its frequency, splitting its count by
// largest remainder.  Used to probe how robust the narrow emission line is
// to structure inside the central class.
SubEnsembleModel split_central_class(const SubEnsembleModel& model, int n_sub,
                                     double spread);

// Second-order moments per class:
//   photon_number            <a^dag a>
//   spin_photon[alpha]       <sigma_alpha^dag a>
//   inversion[alpha]         <sigma_alpha^z>
//   spin_spin(alpha, beta)   <sigma_alpha^dag sigma_beta'>, Hermitian with a
//                            real diagonal (same-class distinct-spin pairs).
struct SubEnsembleState {
  double photon_number = 0.0;
  std::vector<std::complex<double>> spin_photon;
  std::vector<double> inversion;
  Eigen::MatrixXcd spin_spin;

  static SubEnsembleState zero(std::size_t n_classes);
};

// Time derivative of the full O(n^2) moment set.
SubEnsembleState rhs_subensembles(const SubEnsembleState& state,
                                  const SubEnsembleModel& model);

struct SubEnsembleTrajectory {
  std::vector<double> times;
  std::vector<double> photon_number;
  std::vector<double> mean_inversion;  // count-weighted
  SubEnsembleState final_state;
  bool stiffness_failure = false;
  std::string message;
  OdeStats stats;
};

SubEnsembleTrajectory evolve_subensembles(const SubEnsembleState& initial,
                                          const SubEnsembleModel& model,
                                          double t_end, double tol = 1e-8);

struct SubEnsembleSteadyResult {
  SubEnsembleState state;
  bool converged = false;
  int newton_iterations = 0;
  double residual = std::numeric_limits<double>::infinity();  // scaled
  bool used_integration_fallback = false;
  std::string message;
};

// Steady state via elimination: the photon number, inversions and spin-spin
// correlations all follow algebraically from the spin-photon coherences, so
// Newton runs on the 2 n_classes real unknowns (Re c_alpha, Im c_alpha)
// with continuation in the pump rate and a long double polish at the end.
SubEnsembleSteadyResult steady_state_subensembles(const SubEnsembleModel& model);
SubEnsembleSteadyResult steady_state_subensembles(const SubEnsembleModel& model,
                                                  const SubEnsembleState& guess);

struct ClassDicke {
  double count = 0.0;
  double omega = 0.0;
  DickeNumbers dicke;
};

// Per-class Dicke coordinates (M_alpha, J_alpha) from the class inversion
// and the same-class correlation on the spin_spin diagonal.
std::vector<ClassDicke> dicke_per_class(const SubEnsembleState& state,
                                        const SubEnsembleModel& model);

}  // namespace maser

#endif
