#include "maser/exact.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace maser {

namespace {

using Mat = Eigen::MatrixXcd;
using Cplx = std::complex<double>;

Mat kron(const Mat& a, const Mat& b) {
  Mat out(a.rows() * b.rows(), a.cols() * b.cols());
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    for (Eigen::Index j = 0; j < a.cols(); ++j)
      out.block(i * b.rows(), j * b.cols(), b.rows(), b.cols()) = a(i, j) * b;
  return out;
}

Mat annihilation(int dim) {
  Mat a = Mat::Zero(dim, dim);
  for (int n = 1; n < dim; ++n) a(n - 1, n) = std::sqrt(double(n));
  return a;
}

// Spin basis: index 0 = ground, 1 = excited.
Mat sigma_minus_2x2() {
  Mat s = Mat::Zero(2, 2);
  s(0, 1) = 1.0;
  return s;
}

Mat sigma_z_2x2() {
  Mat s = Mat::Zero(2, 2);
  s(0, 0) = -1.0;
  s(1, 1) = 1.0;
  return s;
}

// Operator acting on one subsystem, padded with identities elsewhere.
Mat lift(const std::vector<int>& dims, std::size_t slot, const Mat& op) {
  Mat out = Mat::Identity(1, 1);
  for (std::size_t k = 0; k < dims.size(); ++k) {
    if (k == slot)
      out = kron(out, op);
    else
      out = kron(out, Mat::Identity(dims[k], dims[k]));
  }
  return out;
}

struct Collapse {
  Mat op;
  Mat op_dag;
  Mat op_dag_op;
  double rate = 0.0;
};

// All operators of the model, built once per call chain.
struct Workspace {
  std::vector<int> dims;  // resonator, spins..., filter?
  std::size_t dim = 0;
  Mat hamiltonian;
  std::vector<Collapse> collapses;
  Mat a_op;
  Mat b_op;  // empty when no filter
  std::vector<Mat> sminus;
  std::vector<Mat> sz;
  bool has_filter = false;
};

Workspace build(const ExactModel& model) {
  model.validate();
  const SystemParams& p = model.params;
  const DerivedRates d = derive_rates(p);

  Workspace ws;
  ws.has_filter = model.filter_cutoff >= 0;
  ws.dims.push_back(model.fock_cutoff + 1);
  for (int k = 0; k < model.n_spins; ++k) ws.dims.push_back(2);
  if (ws.has_filter) ws.dims.push_back(model.filter_cutoff + 1);
  ws.dim = model.dimension();

  ws.a_op = lift(ws.dims, 0, annihilation(model.fock_cutoff + 1));
  for (int k = 0; k < model.n_spins; ++k) {
    ws.sminus.push_back(lift(ws.dims, 1 + k, sigma_minus_2x2()));
    ws.sz.push_back(lift(ws.dims, 1 + k, sigma_z_2x2()));
  }
  if (ws.has_filter)
    ws.b_op = lift(ws.dims, 1 + model.n_spins,
                   annihilation(model.filter_cutoff + 1));

  // Rotating frame at omega_c: the drive-free Hamiltonian keeps only the
  // detunings, the exchange couplings are unchanged, and every dissipator
  // is invariant under the rotation.
  const double delta_s = p.omega_s - p.omega_c;
  Mat h = Mat::Zero(ws.dim, ws.dim);
  for (int k = 0; k < model.n_spins; ++k) {
    h += (delta_s / 2.0) * ws.sz[k];
    const Mat sdag_a = ws.sminus[k].adjoint() * ws.a_op;
    h += p.g * (sdag_a + sdag_a.adjoint());
  }
  if (ws.has_filter) {
    const double delta_f = model.filter_omega - p.omega_c;
    h += delta_f * (ws.b_op.adjoint() * ws.b_op);
    const Mat adag_b = ws.a_op.adjoint() * ws.b_op;
    h += p.filter_G * (adag_b + adag_b.adjoint());
  }
  ws.hamiltonian = h;

  auto add = [&ws](const Mat& op, double rate) {
    if (rate <= 0.0) return;
    Collapse c;
    c.op = op;
    c.op_dag = op.adjoint();
    c.op_dag_op = c.op_dag * op;
    c.rate = rate;
    ws.collapses.push_back(std::move(c));
  };

  add(ws.a_op, p.kappa_c * (d.n_c_th + 1.0));
  add(ws.a_op.adjoint(), p.kappa_c * d.n_c_th);
  for (int k = 0; k < model.n_spins; ++k) {
    add(ws.sminus[k], p.gamma * (d.n_k_th + 1.0));
    add(ws.sminus[k].adjoint(), p.gamma * d.n_k_th);
    add(ws.sminus[k].adjoint(), p.eta);  // incoherent pump
    add(ws.sz[k], p.chi / 2.0);          // pure dephasing
  }
  if (ws.has_filter) add(ws.b_op, p.filter_kappa);  // filter at T = 0
  return ws;
}

// Lindblad right-hand side on the density matrix.
void lindblad_rhs(const Workspace& ws, const Mat& rho, Mat& out) {
  const Cplx minus_i(0.0, -1.0);
  out.noalias() = minus_i * (ws.hamiltonian * rho - rho * ws.hamiltonian);
  for (const Collapse& c : ws.collapses) {
    out.noalias() += c.rate * (c.op * rho * c.op_dag);
    out.noalias() -= (0.5 * c.rate) * (c.op_dag_op * rho);
    out.noalias() -= (0.5 * c.rate) * (rho * c.op_dag_op);
  }
}

Eigen::VectorXd to_vector(const Mat& rho) {
  Eigen::VectorXd y(2 * rho.size());
  Eigen::Map<Mat>(reinterpret_cast<Cplx*>(y.data()), rho.rows(), rho.cols()) =
      rho;
  return y;
}

Mat to_matrix(const Eigen::VectorXd& y, std::size_t dim) {
  return Eigen::Map<const Mat>(reinterpret_cast<const Cplx*>(y.data()), dim,
                               dim);
}

Mat thermal_single(int dim, double nbar) {
  Mat rho = Mat::Zero(dim, dim);
  if (nbar <= 0.0) {
    rho(0, 0) = 1.0;
    return rho;
  }
  const double ratio = nbar / (nbar + 1.0);
  double w = 1.0, sum = 0.0;
  for (int n = 0; n < dim; ++n, w *= ratio) {
    rho(n, n) = w;
    sum += w;
  }
  rho /= sum;
  return rho;
}

Mat spin_thermal(double n_th) {
  // Populations with p_e / p_g = n_th / (n_th + 1), i.e. sz = -1/(2 n_th + 1).
  Mat rho = Mat::Zero(2, 2);
  rho(0, 0) = (n_th + 1.0) / (2.0 * n_th + 1.0);
  rho(1, 1) = n_th / (2.0 * n_th + 1.0);
  return rho;
}

Mat product_state(const ExactModel& model, const Mat& resonator,
                  const Mat& spin) {
  Mat rho = resonator;
  for (int k = 0; k < model.n_spins; ++k) rho = kron(rho, spin);
  if (model.filter_cutoff >= 0) {
    Mat vac = Mat::Zero(model.filter_cutoff + 1, model.filter_cutoff + 1);
    vac(0, 0) = 1.0;
    rho = kron(rho, vac);
  }
  return rho;
}

ExactObservables observables_from(const Workspace& ws, const Mat& rho,
                                  int n_spins) {
  ExactObservables obs;
  obs.trace = rho.trace().real();
  obs.photon_number = (ws.a_op.adjoint() * ws.a_op * rho).trace().real();
  obs.field = (ws.a_op * rho).trace();
  if (ws.has_filter)
    obs.filter_photon = (ws.b_op.adjoint() * ws.b_op * rho).trace().real();
  obs.purity = (rho * rho).trace().real();

  for (int k = 0; k < n_spins; ++k) {
    obs.inversion.push_back((ws.sz[k] * rho).trace().real());
    obs.spin_photon.push_back(
        (ws.sminus[k].adjoint() * ws.a_op * rho).trace());
    obs.mean_inversion += obs.inversion.back();
    obs.mean_spin_photon += obs.spin_photon.back();
  }
  obs.mean_inversion /= n_spins;
  obs.mean_spin_photon /= double(n_spins);

  if (n_spins >= 2) {
    Cplx acc = 0.0;
    int pairs = 0;
    for (int j = 0; j < n_spins; ++j)
      for (int k = 0; k < n_spins; ++k) {
        if (j == k) continue;
        acc += (ws.sminus[j].adjoint() * ws.sminus[k] * rho).trace();
        ++pairs;
      }
    obs.spin_spin = acc / double(pairs);
  }
  return obs;
}

}  // namespace

std::size_t ExactModel::dimension() const {
  std::size_t d = static_cast<std::size_t>(fock_cutoff) + 1;
  for (int k = 0; k < n_spins; ++k) d *= 2;
  if (filter_cutoff >= 0) d *= static_cast<std::size_t>(filter_cutoff) + 1;
  return d;
}

void ExactModel::validate() const {
  params.validate();
  if (n_spins < 1 || n_spins > 4)
    throw config_error("exact model: n_spins must lie in [1, 4]");
  if (fock_cutoff < 1 || fock_cutoff > 30)
    throw config_error("exact model: fock_cutoff must lie in [1, 30]");
  if (filter_cutoff == 0 || filter_cutoff > 5 || filter_cutoff < -1)
    throw config_error("exact model: filter_cutoff must be -1 (off) or 1..5");
  if (filter_cutoff >= 0) {
    if (!(params.filter_G > 0.0) || !(params.filter_kappa > 0.0))
      throw config_error(
          "exact model: filter mode needs filter_G and filter_kappa > 0");
    if (!(filter_omega > 0.0))
      throw config_error("exact model: filter mode needs filter_omega > 0");
  }
  if (max_dimension > (1 << 14))
    throw config_error("exact model: max_dimension cap is 2^14");
  if (dimension() > static_cast<std::size_t>(max_dimension))
    throw config_error(
        "exact model: Hilbert-space dimension exceeds max_dimension");
}

Eigen::MatrixXcd exact_thermal_state(const ExactModel& model) {
  model.validate();
  const DerivedRates d = derive_rates(model.params);
  return product_state(model,
                       thermal_single(model.fock_cutoff + 1, d.n_c_th),
                       spin_thermal(d.n_k_th));
}

Eigen::MatrixXcd exact_ground_state(const ExactModel& model) {
  model.validate();
  Mat vac = Mat::Zero(model.fock_cutoff + 1, model.fock_cutoff + 1);
  vac(0, 0) = 1.0;
  Mat down = Mat::Zero(2, 2);
  down(0, 0) = 1.0;
  return product_state(model, vac, down);
}

Eigen::MatrixXcd exact_excited_state(const ExactModel& model) {
  model.validate();
  Mat vac = Mat::Zero(model.fock_cutoff + 1, model.fock_cutoff + 1);
  vac(0, 0) = 1.0;
  Mat up = Mat::Zero(2, 2);
  up(1, 1) = 1.0;
  return product_state(model, vac, up);
}

ExactObservables exact_observables(const Eigen::MatrixXcd& rho,
                                   const ExactModel& model) {
  const Workspace ws = build(model);
  if (rho.rows() != Eigen::Index(ws.dim) || rho.cols() != Eigen::Index(ws.dim))
    throw std::invalid_argument("exact_observables: density matrix size "
                                "does not match the model");
  return observables_from(ws, rho, model.n_spins);
}

ExactTrajectory exact_evolve(const ExactModel& model,
                             const Eigen::MatrixXcd& rho0, double t_end,
                             double tol, int n_checkpoints) {
  if (!(tol > 0.0) || tol > 1e-2)
    throw std::invalid_argument("exact_evolve: tol must lie in (0, 1e-2]");
  if (!(t_end >= 0.0) || !std::isfinite(t_end))
    throw std::invalid_argument("exact_evolve: t_end must be finite");
  if (n_checkpoints < 1) n_checkpoints = 1;

  const Workspace ws = build(model);
  if (rho0.rows() != Eigen::Index(ws.dim) || rho0.cols() != Eigen::Index(ws.dim))
    throw std::invalid_argument("exact_evolve: initial state size mismatch");

  ExactTrajectory traj;
  Mat rho = 0.5 * (rho0 + rho0.adjoint());
  traj.times.push_back(0.0);
  traj.observables.push_back(observables_from(ws, rho, model.n_spins));

  OdeOptions opt;
  opt.rel_tol = tol;
  opt.abs_tol = tol * 1e-4;

  Mat scratch(ws.dim, ws.dim);
  OdeRhs rhs = [&](double, const Eigen::VectorXd& y, Eigen::VectorXd& f) {
    const Mat r = to_matrix(y, ws.dim);
    lindblad_rhs(ws, r, scratch);
    f = to_vector(scratch);
  };

  double min_eig = 1.0;
  for (int seg = 1; seg <= n_checkpoints && t_end > 0.0; ++seg) {
    const double t0 = t_end * (seg - 1) / n_checkpoints;
    const double t1 = t_end * seg / n_checkpoints;
    OdeStats stats;
    Eigen::VectorXd y = integrate_dopri5(rhs, t0, t1, to_vector(rho), opt,
                                         OdeObserver(), &stats);
    traj.stats.n_steps += stats.n_steps;
    traj.stats.n_rhs += stats.n_rhs;
    traj.stats.n_rejected += stats.n_rejected;

    rho = to_matrix(y, ws.dim);
    // The exact flow keeps rho Hermitian and trace one; the integrator only
    // approximately so.  Symmetrize, audit the drift, and renormalize.
    rho = 0.5 * (rho + rho.adjoint());
    const double drift = std::fabs(rho.trace().real() - 1.0);
    traj.max_trace_drift = std::max(traj.max_trace_drift, drift);
    if (drift > 1e-6)
      throw solver_error("exact_evolve: trace drifted beyond 1e-6; tighten tol");
    rho /= rho.trace().real();

    if (ws.dim <= 1024) {
      Eigen::SelfAdjointEigenSolver<Mat> eig(rho, Eigen::EigenvaluesOnly);
      min_eig = std::min(min_eig, eig.eigenvalues().minCoeff());
    } else {
      min_eig = std::min(min_eig, rho.diagonal().real().minCoeff());
    }
    if (min_eig < -1e-6)
      throw solver_error(
          "exact_evolve: negative population beyond 1e-6; the Fock cutoff is "
          "too small for this state");

    traj.times.push_back(t1);
    traj.observables.push_back(observables_from(ws, rho, model.n_spins));
  }
  traj.min_eigenvalue = min_eig == 1.0 ? 0.0 : min_eig;
  traj.final_rho = rho;
  return traj;
}

MomentComparison compare_meanfield(const ExactModel& model, double t_end,
                                   double tol, int n_checkpoints) {
  return compare_meanfield(model, exact_thermal_state(model), t_end, tol,
                           n_checkpoints);
}

MomentComparison compare_meanfield(const ExactModel& model,
                                   const Eigen::MatrixXcd& rho0, double t_end,
                                   double tol, int n_checkpoints) {
  model.validate();
  ExactTrajectory exact = exact_evolve(model, rho0, t_end, tol, n_checkpoints);

  // The moment equations start from exactly the same first and second
  // moments as the density matrix.
  SystemParams p = model.params;
  p.n_spins = model.n_spins;
  MeanFieldState mf;
  {
    const ExactObservables obs = exact.observables.front();
    mf.photon_number = obs.photon_number;
    mf.spin_photon = obs.mean_spin_photon;
    mf.inversion = obs.mean_inversion;
    mf.spin_spin = obs.spin_spin;
  }

  MomentComparison cmp;
  cmp.horizon = t_end;
  cmp.entries = {MomentComparison::Entry{"photon_number", 0, 0, 0, 0},
                 MomentComparison::Entry{"spin_photon", 0, 0, 0, 0},
                 MomentComparison::Entry{"inversion", 0, 0, 0, 0},
                 MomentComparison::Entry{"spin_spin", 0, 0, 0, 0}};

  std::vector<double> worst_diff(exact.times.size(), 0.0);
  for (std::size_t k = 1; k < exact.times.size(); ++k) {
    const double dt = exact.times[k] - exact.times[k - 1];
    const Trajectory leg = evolve(mf, p, dt, tol);
    mf = leg.final_state();

    const ExactObservables& obs = exact.observables[k];
    const double diffs[4] = {
        std::fabs(mf.photon_number - obs.photon_number),
        std::abs(mf.spin_photon - obs.mean_spin_photon),
        std::fabs(mf.inversion - obs.mean_inversion),
        model.n_spins >= 2 ? std::abs(mf.spin_spin - obs.spin_spin) : 0.0};
    const double scales[4] = {std::fabs(obs.photon_number),
                              std::abs(obs.mean_spin_photon),
                              std::fabs(obs.mean_inversion),
                              std::abs(obs.spin_spin)};
    for (int i = 0; i < 4; ++i) {
      MomentComparison::Entry& e = cmp.entries[i];
      e.scale = std::max(e.scale, scales[i]);
      e.max_abs_diff = std::max(e.max_abs_diff, diffs[i]);
      e.final_abs_diff = diffs[i];
      worst_diff[k] = std::max(worst_diff[k], diffs[i]);
    }
  }
  for (MomentComparison::Entry& e : cmp.entries) {
    const double floor = std::max(e.scale, 1e-12);
    e.max_rel_diff = e.max_abs_diff / floor;
  }

  // Growth order of the early discrepancy: the closure error builds up at
  // least quadratically before saturating, while a sign or rate error in a
  // moment equation shows up linearly from t = 0.
  double max_diff = 0.0;
  for (const double d : worst_diff) max_diff = std::max(max_diff, d);
  if (max_diff > 0.0) {
    std::vector<double> lt, ld;
    for (std::size_t k = 1; k < worst_diff.size() && lt.size() < 8; ++k) {
      if (worst_diff[k] > 1e-14 && worst_diff[k] > 1e-6 * max_diff) {
        lt.push_back(std::log(exact.times[k]));
        ld.push_back(std::log(worst_diff[k]));
      }
    }
    if (lt.size() >= 3) {
      double sx = 0, sy = 0, sxx = 0, sxy = 0;
      for (std::size_t i = 0; i < lt.size(); ++i) {
        sx += lt[i];
        sy += ld[i];
        sxx += lt[i] * lt[i];
        sxy += lt[i] * ld[i];
      }
      const double n = double(lt.size());
      const double slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
      if (slope < 1.5 && max_diff > 50.0 * tol) {
        cmp.linear_growth_flag = true;
        cmp.note = "discrepancy grows linearly from t = 0; check equation "
                   "signs and rates";
      }
    }
  }
  return cmp;
}

}  // namespace maser
