#include "maser/meanfield.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace maser {

namespace {

constexpr int kDim = 6;     // n, Re c, Im c, sz, Re ss, Im ss
constexpr int kUnknowns = 5;  // Im ss decays on its own and vanishes in steady state

void pack(const MeanFieldState& s, double* y) {
  y[0] = s.photon_number;
  y[1] = s.spin_photon.real();
  y[2] = s.spin_photon.imag();
  y[3] = s.inversion;
  y[4] = s.spin_spin.real();
  y[5] = s.spin_spin.imag();
}

MeanFieldState unpack(const double* y) {
  MeanFieldState s;
  s.photon_number = y[0];
  s.spin_photon = {y[1], y[2]};
  s.inversion = y[3];
  s.spin_spin = {y[4], y[5]};
  return s;
}

// Steady-state residual on the five real unknowns (n, Re c, Im c, sz, Re ss).
// The imaginary part of the spin-spin correlation obeys d(Im ss)/dt =
// -2 lambda_s Im ss for identical spins, so it is identically zero at the
// fixed point and is dropped from the unknown vector.
template <typename Real>
void eval_residual(const MeanFieldRates& r, const Real* x, Real* f) {
  Real y[kDim] = {x[0], x[1], x[2], x[3], x[4], Real(0)};
  Real g[kDim];
  meanfield_rhs_packed(r, y, g);
  for (int i = 0; i < kUnknowns; ++i) f[i] = g[i];
}

// Residual scaled per equation by the summed magnitudes of that equation's
// constituent terms, so "1e-10" means the terms cancel to ten digits.  A
// relaxation-rate scale would be far too forgiving here: the spin-spin
// correlation sits at ~1e-13 below threshold yet is multiplied by N g ~ 1e13
// in the coherence equation, so its residual must balance in absolute terms
// down to what double precision permits or the photon number inherits a
// percent-level error.
template <typename Real>
Real scaled_norm(const MeanFieldRates& r, const Real* x, const Real* f) {
  using std::fabs;
  const Real n = x[0], cr = x[1], ci = x[2], sz = x[3], sr = x[4];
  const Real kappa = static_cast<Real>(r.kappa_c);
  const Real lam = static_cast<Real>(r.lambda_s);
  const Real lam_big = lam + kappa / Real(2);
  const Real del = fabs(static_cast<Real>(r.delta));
  const Real g = static_cast<Real>(r.g);
  const Real nsp = static_cast<Real>(r.n_spins);
  const Real gam = static_cast<Real>(r.gamma);
  const Real nk = static_cast<Real>(r.n_k_th);
  const Real eta = static_cast<Real>(r.eta);
  const Real tiny = std::numeric_limits<Real>::min();

  Real scale[kUnknowns];
  scale[0] = kappa * (fabs(n) + static_cast<Real>(r.n_c_th)) +
             Real(2) * nsp * g * fabs(ci);
  // the coherence is complex; both rows share the combined term budget
  scale[1] = (lam_big + del) * (fabs(cr) + fabs(ci)) + g * fabs(n * sz) +
             (g / Real(2)) * (fabs(sz) + Real(1)) +
             (nsp - Real(1)) * g * fabs(sr);
  scale[2] = scale[1];
  scale[3] = Real(4) * g * fabs(ci) +
             gam * ((Real(2) * nk + Real(1)) * fabs(sz) + Real(1)) +
             eta * (fabs(sz) + Real(1));
  scale[4] = Real(2) * lam * fabs(sr) + Real(2) * g * fabs(sz * ci);

  Real worst = Real(0);
  for (int i = 0; i < kUnknowns; ++i)
    worst = std::max(worst, fabs(f[i]) / std::max(scale[i], tiny));
  return worst;
}

template <typename Real>
struct NewtonOutcome {
  bool converged = false;
  int iterations = 0;
  Real residual = std::numeric_limits<Real>::infinity();
};

// Damped Newton iteration with a finite-difference Jacobian and a halving
// line search on the scaled residual norm.  Works in double for the main
// solve and in long double for the final polish; the masing linewidth is
// proportional to the distance of sz from its clamped value, a difference
// of order 1e-10, so the root must be located well beyond plain double
// Newton accuracy.
template <typename Real>
NewtonOutcome<Real> newton_solve(const MeanFieldRates& r, Real* x, Real tol,
                                 int max_iter) {
  using Mat = Eigen::Matrix<Real, kUnknowns, kUnknowns>;
  using Vec = Eigen::Matrix<Real, kUnknowns, 1>;
  const Real sqrt_eps = std::sqrt(std::numeric_limits<Real>::epsilon());
  // Typical magnitudes used to pick difference increments for components
  // that sit at zero in the initial guess.
  const Real typ[kUnknowns] = {static_cast<Real>(r.n_c_th) + Real(1), Real(1),
                               Real(1), Real(1), Real(1)};

  NewtonOutcome<Real> out;
  Real f[kUnknowns];
  eval_residual(r, x, f);
  out.residual = scaled_norm(r, x, f);

  for (out.iterations = 0; out.iterations < max_iter; ++out.iterations) {
    if (out.residual <= tol) break;

    Mat jac;
    for (int j = 0; j < kUnknowns; ++j) {
      Real h = sqrt_eps * std::max(std::fabs(x[j]), typ[j]);
      const Real saved = x[j];
      x[j] = saved + h;
      h = x[j] - saved;  // remove increment roundoff
      Real fp[kUnknowns];
      eval_residual(r, x, fp);
      x[j] = saved;
      for (int i = 0; i < kUnknowns; ++i) jac(i, j) = (fp[i] - f[i]) / h;
    }

    Vec rhs;
    for (int i = 0; i < kUnknowns; ++i) rhs(i) = -f[i];
    // Equilibrate before factoring: the columns span the photon number
    // (~1e3) down to the spin-spin correlation (~1e-13) while the rows mix
    // kappa_c with N g ~ 1e13, and plain LU loses the direction to that
    // spread long before the residual target is reached.
    Vec rs, cs;
    for (int i = 0; i < kUnknowns; ++i) {
      const Real m = jac.row(i).cwiseAbs().maxCoeff();
      rs(i) = m > Real(0) ? Real(1) / m : Real(1);
    }
    jac = rs.asDiagonal() * jac;
    rhs = rs.asDiagonal() * rhs;
    for (int j = 0; j < kUnknowns; ++j) {
      const Real m = jac.col(j).cwiseAbs().maxCoeff();
      cs(j) = m > Real(0) ? Real(1) / m : Real(1);
    }
    jac = jac * cs.asDiagonal();
    Vec dx = jac.fullPivLu().solve(rhs);
    dx = cs.asDiagonal() * dx;
    if (!dx.allFinite()) break;

    bool improved = false;
    Real t = Real(1);
    for (int ls = 0; ls < 30; ++ls) {
      Real xt[kUnknowns];
      for (int i = 0; i < kUnknowns; ++i) xt[i] = x[i] + t * dx(i);
      Real ft[kUnknowns];
      eval_residual(r, xt, ft);
      const Real res_t = scaled_norm(r, xt, ft);
      if (std::isfinite(static_cast<double>(res_t)) && res_t < out.residual) {
        for (int i = 0; i < kUnknowns; ++i) x[i] = xt[i];
        for (int i = 0; i < kUnknowns; ++i) f[i] = ft[i];
        out.residual = res_t;
        improved = true;
        break;
      }
      t /= Real(2);
    }
    if (!improved) break;  // stalled; caller decides what to try next
  }
  out.converged = out.residual <= tol;
  return out;
}

// Zero-coupling fixed point: thermal resonator, pump-balanced inversion,
// no coherences.  This is exact at g = 0 and a serviceable Newton seed
// elsewhere below threshold.
void analytic_guess(const MeanFieldRates& r, double* x) {
  const double gamma_tot = r.gamma * (2.0 * r.n_k_th + 1.0) + r.eta;
  x[0] = r.n_c_th;
  x[1] = 0.0;
  x[2] = 0.0;
  x[3] = gamma_tot > 0.0 ? (r.eta - r.gamma) / gamma_tot : -1.0;
  x[4] = 0.0;
}

// Above threshold the inversion is clamped just below kappa_c lambda_s /
// (2 N g^2) by the collective emission; seeding there lets Newton land on
// the masing branch without walking the pump up from zero.
bool masing_guess(const MeanFieldRates& r, double* x) {
  if (r.g <= 0.0 || r.n_spins < 1.0) return false;
  const double sz_clamp = r.kappa_c * r.lambda_s / (2.0 * r.n_spins * r.g * r.g);
  if (sz_clamp <= 0.0 || sz_clamp >= 1.0) return false;
  const double gamma_tot = r.gamma * (2.0 * r.n_k_th + 1.0) + r.eta;
  const double sz_free = gamma_tot > 0.0 ? (r.eta - r.gamma) / gamma_tot : -1.0;
  if (sz_free <= sz_clamp) return false;  // pump cannot reach the clamp

  const double sz = 0.999 * sz_clamp;
  // Photon number from the inversion balance, coherence from the photon
  // balance; both follow once sz is pinned.
  const double im_c =
      (r.gamma * ((2.0 * r.n_k_th + 1.0) * sz + 1.0) + r.eta * (sz - 1.0)) /
      (4.0 * r.g);
  const double n = r.n_c_th - 2.0 * r.n_spins * r.g * im_c / r.kappa_c;
  if (!(n > 0.0)) return false;
  x[0] = n;
  x[1] = 0.0;
  x[2] = im_c;
  x[3] = sz;
  x[4] = -r.g * sz * im_c / std::max(r.lambda_s, 1e-12 * r.kappa_c);
  return true;
}

bool physical(const MeanFieldRates& r, const double* x) {
  if (!std::isfinite(x[0]) || !std::isfinite(x[3])) return false;
  if (x[0] < -1e-6 * (r.n_c_th + 1.0)) return false;
  if (std::fabs(x[3]) > 1.0 + 1e-9) return false;
  return true;
}

// Linear stability of a fixed point. Above threshold the free-inversion root
// survives as an algebraic solution but carries a strongly positive gain
// eigenvalue; Newton happily converges to it, so stability is what selects
// the branch the dynamics actually reaches. The masing root's slowest mode is
// the linewidth scale, orders of magnitude below kappa_c, hence the relative
// allowance instead of a strict sign test.
bool stable_root(const MeanFieldRates& r, const double* x) {
  double y[kDim] = {x[0], x[1], x[2], x[3], x[4], 0.0};
  double f0[kDim];
  meanfield_rhs_packed(r, y, f0);
  Eigen::Matrix<double, kDim, kDim> jac;
  const double sqrt_eps = std::sqrt(std::numeric_limits<double>::epsilon());
  const double typ[kDim] = {r.n_c_th + 1.0, 1.0, 1.0, 1.0, 1.0, 1.0};
  for (int j = 0; j < kDim; ++j) {
    double h = sqrt_eps * std::max(std::fabs(y[j]), typ[j]);
    const double saved = y[j];
    y[j] = saved + h;
    h = y[j] - saved;
    double fp[kDim];
    meanfield_rhs_packed(r, y, fp);
    y[j] = saved;
    for (int i = 0; i < kDim; ++i) jac(i, j) = (fp[i] - f0[i]) / h;
  }
  const Eigen::EigenSolver<Eigen::Matrix<double, kDim, kDim>> eig(jac, false);
  const double allow = 1e-4 * (0.5 * r.kappa_c + r.lambda_s);
  return eig.eigenvalues().real().maxCoeff() <= allow;
}

SteadyStateResult finish(const MeanFieldRates& r, double* x, int iters,
                         bool used_fallback, const std::string& message) {
  SteadyStateResult out;
  // Polish in long double: the double root is accurate to ~1e-10 in the
  // scaled norm, while the linewidth needs the inversion at the 1e-12 level.
  long double xl[kUnknowns];
  for (int i = 0; i < kUnknowns; ++i) xl[i] = x[i];
  const auto fine = newton_solve<long double>(r, xl, 1e-16L, 8);
  long double fl[kUnknowns];
  eval_residual(r, xl, fl);
  const long double res_l = scaled_norm(r, xl, fl);
  if (std::isfinite(static_cast<double>(res_l))) {
    for (int i = 0; i < kUnknowns; ++i) x[i] = static_cast<double>(xl[i]);
  }
  (void)fine;

  double y[kDim] = {x[0], x[1], x[2], x[3], x[4], 0.0};
  out.state = unpack(y);
  out.newton_iterations = iters;
  out.residual = static_cast<double>(res_l);
  out.converged = out.residual <= 1e-10 && physical(r, x);
  out.used_integration_fallback = used_fallback;
  out.message = message;
  if (!physical(r, x)) out.message += " (root failed physicality checks)";
  return out;
}

}  // namespace

MeanFieldRates meanfield_rates(const SystemParams& params) {
  params.validate();
  const DerivedRates d = derive_rates(params);
  MeanFieldRates r;
  r.kappa_c = params.kappa_c;
  r.n_c_th = d.n_c_th;
  r.delta = params.omega_s - params.omega_c;
  r.lambda_s = d.lambda_s;
  r.g = params.g;
  r.n_spins = params.n_spins;
  r.gamma = params.gamma;
  r.n_k_th = d.n_k_th;
  r.eta = params.eta;
  return r;
}

MeanFieldState rhs_identical(const MeanFieldState& state, const SystemParams& params) {
  const MeanFieldRates r = meanfield_rates(params);
  double y[kDim], f[kDim];
  pack(state, y);
  meanfield_rhs_packed(r, y, f);
  return unpack(f);
}

Trajectory evolve(const MeanFieldState& initial, const SystemParams& params,
                  double t_end, double tol) {
  if (!(tol > 0.0) || tol > 1e-2)
    throw std::invalid_argument("evolve: tol must lie in (0, 1e-2]");
  if (!(t_end >= 0.0) || !std::isfinite(t_end))
    throw std::invalid_argument("evolve: t_end must be finite and nonnegative");

  const MeanFieldRates r = meanfield_rates(params);

  Trajectory traj;
  Eigen::VectorXd y0(kDim);
  pack(initial, y0.data());
  traj.times.push_back(0.0);
  traj.states.push_back(initial);
  if (t_end == 0.0) return traj;

  OdeOptions opt;
  opt.rel_tol = tol;
  opt.abs_tol = tol * 1e-6;
  // Absolute floor per component: the photon number lives on the thermal
  // scale while the spin moments are order one.
  opt.scale = Eigen::VectorXd::Ones(kDim);
  opt.scale(0) = r.n_c_th + 1.0;

  OdeRhs rhs = [&r](double, const Eigen::VectorXd& y, Eigen::VectorXd& f) {
    meanfield_rhs_packed(r, y.data(), f.data());
  };

  // Keep the stored trajectory bounded; when it overflows, thin by dropping
  // every other retained sample and doubling the keep stride.
  std::size_t stride = 1, since_kept = 0;
  OdeObserver observer = [&](double t, const Eigen::VectorXd& y) {
    if (t == 0.0) return;
    if (++since_kept < stride) return;
    since_kept = 0;
    traj.times.push_back(t);
    traj.states.push_back(unpack(y.data()));
    if (traj.times.size() > 40000) {
      std::size_t w = 1;
      for (std::size_t i = 2; i < traj.times.size(); i += 2, ++w) {
        traj.times[w] = traj.times[i];
        traj.states[w] = traj.states[i];
      }
      traj.times.resize(w);
      traj.states.resize(w);
      stride *= 2;
    }
  };

  try {
    Eigen::VectorXd yf = integrate_rosenbrock(rhs, 0.0, t_end, y0, opt,
                                              observer, &traj.stats);
    if (traj.times.back() != t_end) {
      traj.times.push_back(t_end);
      traj.states.push_back(unpack(yf.data()));
    } else {
      traj.states.back() = unpack(yf.data());
    }
  } catch (const solver_error& err) {
    traj.stiffness_failure = true;
    traj.message = err.what();
  }
  return traj;
}

SteadyStateResult steady_state(const SystemParams& params) {
  const MeanFieldRates r = meanfield_rates(params);
  double x[kUnknowns];
  analytic_guess(r, x);

  // A converged physical root that fails the stability gate is kept in
  // reserve: strong pumping can Hopf-destabilize the masing fixed point
  // (the relaxation oscillation undamps and the output self-pulses), and
  // then the unstable root is still the answer to the steady-state
  // equations, with nothing better available.
  bool have_unstable = false;
  double xu[kUnknowns];
  std::string unstable_msg;
  auto consider = [&](const double* cand, const char* msg) {
    if (have_unstable) return;
    for (int i = 0; i < kUnknowns; ++i) xu[i] = cand[i];
    unstable_msg = msg;
    have_unstable = true;
  };

  auto first = newton_solve<double>(r, x, 1e-10, 60);
  int iters = first.iterations;
  if (first.converged && physical(r, x)) {
    if (stable_root(r, x))
      return finish(r, x, iters, false, "direct solve from thermal guess");
    consider(x, "direct solve from thermal guess");
  }

  // Second attempt from the clamped-inversion seed (masing branch).
  double xm[kUnknowns];
  if (masing_guess(r, xm)) {
    auto second = newton_solve<double>(r, xm, 1e-10, 60);
    iters += second.iterations;
    if (second.converged && physical(r, xm)) {
      if (stable_root(r, xm))
        return finish(r, xm, iters, false, "direct solve from masing guess");
      consider(xm, "direct solve from masing guess");
    }
  }

  // Continuation in the pump rate: walk eta up from (nearly) zero, warm
  // starting each solve at the previous fixed point.
  {
    MeanFieldRates rc = r;
    rc.eta = 0.0;
    double xc[kUnknowns];
    analytic_guess(rc, xc);
    auto base = newton_solve<double>(rc, xc, 1e-10, 60);
    iters += base.iterations;
    if (base.converged) {
      const double eta_lo = std::max(r.eta * 1e-6, r.gamma > 0.0 ? 1e-3 * r.gamma : r.eta * 1e-6);
      bool ok = true;
      if (r.eta > 0.0) {
        const int steps = 24;
        for (int k = 0; k <= steps; ++k) {
          rc.eta = (eta_lo <= 0.0 || eta_lo >= r.eta)
                       ? r.eta * (k + 1.0) / (steps + 1.0)
                       : eta_lo * std::pow(r.eta / eta_lo, double(k) / steps);
          if (k == steps) rc.eta = r.eta;
          auto step = newton_solve<double>(rc, xc, 1e-10, 60);
          iters += step.iterations;
          if (!step.converged) {
            ok = false;
            break;
          }
        }
      }
      if (ok && physical(r, xc)) {
        if (stable_root(r, xc))
          return finish(r, xc, iters, false, "continuation in pump rate");
        consider(xc, "continuation in pump rate");
      }
    }
  }

  if (have_unstable) {
    SteadyStateResult out = finish(r, xu, iters, false, unstable_msg);
    out.message +=
        " (root is linearly unstable; the flow self-pulses around it)";
    return out;
  }

  // Last resort: ride the dynamics toward the attractor, then polish.
  {
    MeanFieldState start;
    start.photon_number = r.n_c_th;
    const double gamma_tot = r.gamma * (2.0 * r.n_k_th + 1.0) + r.eta;
    start.inversion = gamma_tot > 0.0 ? (r.eta - r.gamma) / gamma_tot : -1.0;
    double slow = r.kappa_c;
    if (gamma_tot > 0.0) slow = std::min(slow, gamma_tot);
    if (r.lambda_s > 0.0) slow = std::min(slow, 2.0 * r.lambda_s);
    const double horizon = 60.0 / slow;
    Trajectory traj = evolve(start, params, horizon, 1e-10);
    double xf[kUnknowns];
    double yf[kDim];
    pack(traj.final_state(), yf);
    for (int i = 0; i < kUnknowns; ++i) xf[i] = yf[i];
    auto polish = newton_solve<double>(r, xf, 1e-10, 60);
    iters += polish.iterations;
    SteadyStateResult out = finish(r, xf, iters, true, "long-time integration fallback");
    if (!polish.converged) {
      out.converged = false;
      out.message = "no convergence: Newton, continuation and integration all stalled";
    }
    return out;
  }
}

SteadyStateResult steady_state(const SystemParams& params, const MeanFieldState& guess) {
  const MeanFieldRates r = meanfield_rates(params);
  double y[kDim];
  pack(guess, y);
  double x[kUnknowns];
  for (int i = 0; i < kUnknowns; ++i) x[i] = y[i];
  auto run = newton_solve<double>(r, x, 1e-10, 80);
  if (run.converged && physical(r, x) && stable_root(r, x))
    return finish(r, x, run.iterations, false, "direct solve from supplied guess");
  // Fall back to the full strategy if the supplied guess was not in the
  // basin of the physical root.
  SteadyStateResult out = steady_state(params);
  out.newton_iterations += run.iterations;
  return out;
}

EtaSweepResult sweep_eta(const SystemParams& params, const std::vector<double>& etas) {
  EtaSweepResult out;
  out.ascending.resize(etas.size());
  out.descending.resize(etas.size());

  auto run_direction = [&](bool up) {
    SystemParams p = params;
    bool have_prev = false;
    MeanFieldState prev;
    for (std::size_t k = 0; k < etas.size(); ++k) {
      const std::size_t idx = up ? k : etas.size() - 1 - k;
      p.eta = etas[idx];
      SteadyStateResult res =
          have_prev ? steady_state(p, prev) : steady_state(p);
      EtaSweepPoint pt;
      pt.eta = etas[idx];
      pt.state = res.state;
      pt.converged = res.converged;
      (up ? out.ascending : out.descending)[idx] = pt;
      if (res.converged) {
        prev = res.state;
        have_prev = true;
      }
    }
  };
  run_direction(true);
  run_direction(false);

  for (std::size_t k = 0; k < etas.size(); ++k) {
    const double na = out.ascending[k].state.photon_number;
    const double nd = out.descending[k].state.photon_number;
    const double ref = std::max({std::fabs(na), std::fabs(nd), 1.0});
    if (out.ascending[k].converged && out.descending[k].converged &&
        std::fabs(na - nd) > 0.01 * ref)
      out.hysteresis.push_back(static_cast<int>(k));
  }
  return out;
}

}  // namespace maser
