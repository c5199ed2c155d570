#include <cmath>
#include <complex>
#include <vector>

#include <Eigen/Dense>

#include "doctest.h"
#include "maser/exact.hpp"
#include "maser/meanfield.hpp"
#include "maser/params.hpp"
#include "maser/spectrum.hpp"
#include "maser/units.hpp"

using namespace maser;
using Mat = Eigen::MatrixXcd;
using std::complex;

namespace {

// O(1) rates riding on a physical microwave carrier so that thermal
// occupations come out of real temperatures.
SystemParams unit_rate_params() {
  SystemParams p;
  p.omega_c = two_pi * 9.22e9;
  p.omega_s = p.omega_c;
  p.kappa_c = 2.0;
  p.n_spins = 1;
  p.g = 0.0;
  p.gamma = 0.0;
  p.chi = 0.0;
  p.eta = 0.0;
  p.temperature = 0.0;
  return p;
}

// Test-local tensor product helpers, independent of the library's own
// operator plumbing, used to prepare states and measure <sigma->.
Mat kron2(const Mat& a, const Mat& b) {
  Mat out(a.rows() * b.rows(), a.cols() * b.cols());
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    for (Eigen::Index j = 0; j < a.cols(); ++j)
      out.block(i * b.rows(), j * b.cols(), b.rows(), b.cols()) = a(i, j) * b;
  return out;
}

Mat fock_vacuum(int cutoff) {
  Mat m = Mat::Zero(cutoff + 1, cutoff + 1);
  m(0, 0) = 1.0;
  return m;
}

// (|0> + |1>)/sqrt(2) of the resonator: carries <a> = 1/2
Mat fock_superposition(int cutoff) {
  Eigen::VectorXcd psi = Eigen::VectorXcd::Zero(cutoff + 1);
  psi[0] = psi[1] = 1.0 / std::sqrt(2.0);
  return psi * psi.adjoint();
}

// (|g> + |e>)/sqrt(2): carries <sigma-> = 1/2  (basis: 0 = ground)
Mat spin_superposition() {
  Eigen::Vector2cd psi(1.0 / std::sqrt(2.0), 1.0 / std::sqrt(2.0));
  return psi * psi.adjoint();
}

// <sigma_1^-> for a model with the resonator in slot 0
complex<double> sigma_minus_expectation(const Mat& rho, const ExactModel& m) {
  Mat sm = Mat::Zero(2, 2);
  sm(0, 1) = 1.0;  // |g><e|
  Mat op = kron2(Mat::Identity(m.fock_cutoff + 1, m.fock_cutoff + 1), sm);
  for (int k = 1; k < m.n_spins; ++k) op = kron2(op, Mat::Identity(2, 2));
  if (m.filter_cutoff >= 0)
    op = kron2(op, Mat::Identity(m.filter_cutoff + 1, m.filter_cutoff + 1));
  return (op * rho).trace();
}

double trace_distance(const Mat& a, const Mat& b) {
  Eigen::SelfAdjointEigenSolver<Mat> es(a - b);
  return 0.5 * es.eigenvalues().cwiseAbs().sum();
}

}  // namespace

TEST_CASE("resonator relaxes to the thermal occupation at rate kappa") {
  ExactModel m;
  m.params = unit_rate_params();
  m.params.temperature = 0.3;
  m.fock_cutoff = 14;
  const DerivedRates d = derive_rates(m.params);
  REQUIRE(d.n_c_th > 0.2);  // the fixture needs real thermal photons

  const double t_end = 3.0 / m.params.kappa_c;
  const ExactTrajectory traj =
      exact_evolve(m, exact_ground_state(m), t_end, 1e-10);
  for (std::size_t k = 0; k < traj.times.size(); ++k) {
    const double want =
        d.n_c_th * (1.0 - std::exp(-m.params.kappa_c * traj.times[k]));
    CHECK(traj.observables[k].photon_number ==
          doctest::Approx(want).epsilon(1e-6));
  }
}

TEST_CASE("spin relaxation, thermal balance and incoherent pumping") {
  // zero temperature: sz = -1 + 2 exp(-gamma t) from the excited state
  {
    ExactModel m;
    m.params = unit_rate_params();
    m.params.gamma = 1.0;
    m.fock_cutoff = 1;
    const ExactTrajectory traj =
        exact_evolve(m, exact_excited_state(m), 3.0, 1e-10);
    for (std::size_t k = 0; k < traj.times.size(); ++k)
      CHECK(traj.observables[k].inversion[0] ==
            doctest::Approx(-1.0 + 2.0 * std::exp(-traj.times[k]))
                .epsilon(1e-6));
  }
  // finite temperature plus pump: rate gamma(2 n_k + 1) + eta toward the
  // balance point (eta - gamma) / rate
  {
    ExactModel m;
    m.params = unit_rate_params();
    m.params.gamma = 1.0;
    m.params.eta = 0.7;
    m.params.temperature = 0.3;
    m.fock_cutoff = 1;
    const DerivedRates d = derive_rates(m.params);
    const double rate = m.params.gamma * (2.0 * d.n_k_th + 1.0) + m.params.eta;
    const double sz_inf = (m.params.eta - m.params.gamma) / rate;
    const double t_end = 4.0 / rate;
    const ExactTrajectory traj =
        exact_evolve(m, exact_excited_state(m), t_end, 1e-10);
    const double sz_want = sz_inf + (1.0 - sz_inf) * std::exp(-rate * t_end);
    CHECK(traj.observables.back().inversion[0] ==
          doctest::Approx(sz_want).epsilon(1e-6));
  }
}

TEST_CASE("pure dephasing kills the spin coherence at chi") {
  ExactModel m;
  m.params = unit_rate_params();
  m.params.chi = 0.8;
  m.fock_cutoff = 1;
  const Mat rho0 = kron2(fock_vacuum(m.fock_cutoff), spin_superposition());
  const double t_end = 2.0;
  const ExactTrajectory traj = exact_evolve(m, rho0, t_end, 1e-10);
  const complex<double> sm = sigma_minus_expectation(traj.final_rho, m);
  CHECK(std::abs(sm) ==
        doctest::Approx(0.5 * std::exp(-m.params.chi * t_end)).epsilon(1e-6));
}

TEST_CASE("all spin dissipators together decay the coherence at lambda_s") {
  ExactModel m;
  m.params = unit_rate_params();
  m.params.gamma = 1.0;
  m.params.chi = 0.8;
  m.params.eta = 0.4;
  m.params.temperature = 0.3;
  m.fock_cutoff = 1;
  const DerivedRates d = derive_rates(m.params);
  const Mat rho0 = kron2(fock_vacuum(m.fock_cutoff), spin_superposition());
  const double t_end = 1.5;
  const ExactTrajectory traj = exact_evolve(m, rho0, t_end, 1e-10);
  const complex<double> sm = sigma_minus_expectation(traj.final_rho, m);
  CHECK(std::abs(sm) ==
        doctest::Approx(0.5 * std::exp(-d.lambda_s * t_end)).epsilon(1e-6));
}

TEST_CASE("spin-photon coherence rotates at the detuning and decays at lambda_s + kappa/2") {
  ExactModel m;
  m.params = unit_rate_params();
  m.params.kappa_c = 2.0;
  m.params.gamma = 0.5;
  m.params.chi = 0.3;
  m.params.omega_s = m.params.omega_c + 0.7;
  m.fock_cutoff = 4;
  const DerivedRates d = derive_rates(m.params);

  const Mat rho0 = kron2(fock_superposition(m.fock_cutoff), spin_superposition());
  const double t_end = 1.2;
  const ExactTrajectory traj = exact_evolve(m, rho0, t_end, 1e-10);

  const complex<double> got = traj.observables.back().spin_photon[0];
  const complex<double> rate(-d.lambda_s - 0.5 * m.params.kappa_c,
                             m.params.omega_s - m.params.omega_c);
  const complex<double> want = 0.25 * std::exp(rate * t_end);
  CHECK(std::abs(got - want) < 1e-5 * 0.25);
  // the rotation must actually have happened
  CHECK(std::fabs(std::arg(got) - 0.7 * t_end) < 1e-4);
}

TEST_CASE("the joint Gibbs state is stationary") {
  ExactModel m;
  m.params = unit_rate_params();
  m.params.gamma = 1.0;
  m.params.chi = 0.7;  // dephasing leaves the diagonal Gibbs state alone
  m.params.temperature = 0.3;
  m.fock_cutoff = 16;
  const Mat rho0 = exact_thermal_state(m);
  const ExactTrajectory traj = exact_evolve(m, rho0, 2.0, 1e-11);
  CHECK(trace_distance(traj.final_rho, rho0) < 1e-8);
}

TEST_CASE("closed Tavis-Cummings dynamics conserves excitation and purity") {
  ExactModel m;
  m.params = unit_rate_params();
  m.params.kappa_c = 0.0;
  m.params.g = 2.0;
  m.params.n_spins = 2;
  m.n_spins = 2;
  m.fock_cutoff = 3;
  const ExactTrajectory traj =
      exact_evolve(m, exact_excited_state(m), 3.0, 1e-11);

  double max_photon = 0.0;
  for (const ExactObservables& o : traj.observables) {
    const double n_exc =
        o.photon_number + (o.inversion[0] + 1.0) / 2.0 +
        (o.inversion[1] + 1.0) / 2.0;
    CHECK(n_exc == doctest::Approx(2.0).epsilon(1e-7));
    CHECK(o.purity == doctest::Approx(1.0).epsilon(1e-7));
    max_photon = std::max(max_photon, o.photon_number);
  }
  // the excitation really visits the resonator
  CHECK(max_photon > 0.2);
}

TEST_CASE("trajectory bookkeeping: hermiticity and trace drift") {
  ExactModel m;
  m.params = unit_rate_params();
  m.params.gamma = 1.0;
  m.params.g = 1.0;
  m.params.eta = 0.5;
  m.fock_cutoff = 6;
  const ExactTrajectory traj =
      exact_evolve(m, exact_ground_state(m), 3.0, 1e-11);
  CHECK(traj.max_trace_drift < 1e-8);
  CHECK(traj.min_eigenvalue > -1e-8);
  const Mat herm_gap = traj.final_rho - traj.final_rho.adjoint();
  CHECK(herm_gap.cwiseAbs().maxCoeff() < 1e-12);
  CHECK(traj.final_rho.trace().real() == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("model validation guards") {
  ExactModel m;
  m.params = unit_rate_params();
  ExactModel bad = m;
  bad.n_spins = 0;
  CHECK_THROWS_AS(bad.validate(), config_error);
  bad = m;
  bad.n_spins = 5;
  CHECK_THROWS_AS(bad.validate(), config_error);
  bad = m;
  bad.fock_cutoff = 0;
  CHECK_THROWS_AS(bad.validate(), config_error);
  bad = m;
  bad.fock_cutoff = 31;
  CHECK_THROWS_AS(bad.validate(), config_error);
  bad = m;
  bad.filter_cutoff = 2;  // filter mode without probe settings
  CHECK_THROWS_AS(bad.validate(), config_error);
  bad = m;
  bad.fock_cutoff = 30;
  bad.n_spins = 4;
  bad.max_dimension = 256;
  CHECK_THROWS_AS(bad.validate(), config_error);
}

TEST_CASE("moment equations are exact for decoupled spins") {
  ExactModel m;
  m.params = unit_rate_params();
  m.params.kappa_c = 2.0;
  m.params.gamma = 1.0;
  m.params.chi = 0.7;
  m.params.eta = 0.4;
  m.params.temperature = 0.3;
  m.params.n_spins = 2;
  m.n_spins = 2;
  m.fock_cutoff = 14;
  const MomentComparison cmp = compare_meanfield(m, 5.0 / m.params.kappa_c);
  REQUIRE(!cmp.entries.empty());
  for (const auto& e : cmp.entries) {
    INFO(e.name);
    CHECK(e.max_rel_diff < 1e-5);
  }
  CHECK_FALSE(cmp.linear_growth_flag);
}

TEST_CASE("second-order closure tracks two strongly dephased spins to a few percent") {
  ExactModel m;
  m.params = unit_rate_params();
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
  CHECK(worst < 0.10);
  CHECK_FALSE(cmp.linear_growth_flag);
}

TEST_CASE("filter-resonator readout matches the closed-form spectrum formula") {
  // Reference system without the probe
  ExactModel base;
  base.params = unit_rate_params();
  base.params.kappa_c = 2.0;
  base.params.g = 0.4;
  base.params.gamma = 1.0;
  base.params.chi = 3.0;
  base.params.eta = 2.0;
  base.fock_cutoff = 6;
  const ExactTrajectory settle =
      exact_evolve(base, exact_ground_state(base), 14.0, 1e-10);
  const ExactObservables steady = settle.observables.back();

  // Same system with a weak filter attached at a small offset
  const double offset = 0.3, kappa_f = 0.5, g_probe = 0.05;
  ExactModel probe = base;
  probe.filter_cutoff = 2;
  probe.filter_omega = base.params.omega_c + offset;
  probe.params.filter_G = g_probe;
  probe.params.filter_kappa = kappa_f;
  const Mat rho0 =
      kron2(settle.final_rho, fock_vacuum(probe.filter_cutoff));
  const ExactTrajectory probed = exact_evolve(probe, rho0, 30.0, 1e-10);
  const double exact_filter = probed.observables.back().filter_photon;
  REQUIRE(exact_filter > 0.0);

  MeanFieldState mf;
  mf.photon_number = steady.photon_number;
  mf.spin_photon = steady.spin_photon[0];
  mf.inversion = steady.inversion[0];
  mf.spin_spin = {0.0, 0.0};
  SystemParams fp = base.params;
  fp.filter_G = g_probe;
  fp.filter_kappa = kappa_f;
  const double predicted = filter_photon_number_identical(offset, mf, fp);
  CHECK(predicted == doctest::Approx(exact_filter).epsilon(0.05));
}
