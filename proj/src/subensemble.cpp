#include "maser/subensemble.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "maser/meanfield.hpp"

namespace maser {

namespace {

// Per-class rates entering the moment equations.  detuning is measured from
// the resonator so the carrier frequency never mixes with linewidth-scale
// differences; lambda is the single-spin coherence decay
// (gamma (2 n_th + 1) + eta)/2 + chi.
struct ClassRates {
  double count = 0.0;
  double g = 0.0;
  double detuning = 0.0;
  double lambda = 0.0;
  double gamma_tot = 0.0;  // gamma (2 n_th + 1) + eta
  double gamma = 0.0;
  double eta = 0.0;
  double n_th = 0.0;
};

struct Ctx {
  double kappa_c = 0.0;
  double n_c_th = 0.0;
  double rate_floor = 0.0;
  std::vector<ClassRates> cls;
};

Ctx make_ctx(const SubEnsembleModel& model) {
  model.validate();
  Ctx ctx;
  ctx.kappa_c = model.kappa_c;
  ctx.n_c_th = thermal_occupation(model.omega_c, model.temperature);
  ctx.rate_floor = 1e-12 * model.kappa_c;
  ctx.cls.reserve(model.classes.size());
  for (const SpinClass& sc : model.classes) {
    ClassRates r;
    r.count = sc.count;
    r.g = sc.g;
    r.detuning = sc.omega - model.omega_c;
    r.n_th = thermal_occupation(sc.omega, model.temperature);
    r.gamma_tot = sc.gamma * (2.0 * r.n_th + 1.0) + sc.eta;
    r.lambda = 0.5 * r.gamma_tot + sc.chi;
    r.gamma = sc.gamma;
    r.eta = sc.eta;
    ctx.cls.push_back(r);
  }
  return ctx;
}

// Packed layout for time evolution:
//   [0]                 photon number
//   [1 + 2a], [2 + 2a]  Re/Im c_a
//   [1 + 2n + a]        sz_a
//   [1 + 3n + a]        ss_aa (real diagonal)
//   then (Re, Im) pairs of ss_ab for a < b, row-major
std::size_t pair_slot(std::size_t n, std::size_t a, std::size_t b) {
  return 1 + 4 * n + 2 * (a * (2 * n - a - 1) / 2 + (b - a - 1));
}

std::size_t packed_dim(std::size_t n) { return 1 + 3 * n + n * n; }

void pack_state(const SubEnsembleState& s, Eigen::VectorXd& y) {
  const std::size_t n = s.inversion.size();
  y.resize(packed_dim(n));
  y(0) = s.photon_number;
  for (std::size_t a = 0; a < n; ++a) {
    y(1 + 2 * a) = s.spin_photon[a].real();
    y(2 + 2 * a) = s.spin_photon[a].imag();
    y(1 + 2 * n + a) = s.inversion[a];
    y(1 + 3 * n + a) = s.spin_spin(a, a).real();
    for (std::size_t b = a + 1; b < n; ++b) {
      const std::size_t k = pair_slot(n, a, b);
      y(k) = s.spin_spin(a, b).real();
      y(k + 1) = s.spin_spin(a, b).imag();
    }
  }
}

SubEnsembleState unpack_state(const Eigen::VectorXd& y, std::size_t n) {
  SubEnsembleState s = SubEnsembleState::zero(n);
  s.photon_number = y(0);
  for (std::size_t a = 0; a < n; ++a) {
    s.spin_photon[a] = {y(1 + 2 * a), y(2 + 2 * a)};
    s.inversion[a] = y(1 + 2 * n + a);
    s.spin_spin(a, a) = y(1 + 3 * n + a);
    for (std::size_t b = a + 1; b < n; ++b) {
      const std::size_t k = pair_slot(n, a, b);
      s.spin_spin(a, b) = {y(k), y(k + 1)};
      s.spin_spin(b, a) = std::conj(s.spin_spin(a, b));
    }
  }
  return s;
}

void packed_rhs(const Ctx& ctx, const Eigen::VectorXd& y, Eigen::VectorXd& f) {
  const std::size_t n = ctx.cls.size();
  f.resize(y.size());
  const double photon = y(0);

  // Collective feed of each coherence: S_a = sum_b N_b g_b ss_ab.
  static thread_local std::vector<std::complex<double>> sum_row;
  sum_row.assign(n, {0.0, 0.0});
  for (std::size_t a = 0; a < n; ++a) {
    for (std::size_t b = 0; b < n; ++b) {
      std::complex<double> ss;
      if (a == b)
        ss = y(1 + 3 * n + a);
      else if (a < b) {
        const std::size_t k = pair_slot(n, a, b);
        ss = {y(k), y(k + 1)};
      } else {
        const std::size_t k = pair_slot(n, b, a);
        ss = {y(k), -y(k + 1)};
      }
      sum_row[a] += ctx.cls[b].count * ctx.cls[b].g * ss;
    }
  }

  double photon_feed = 0.0;
  for (std::size_t a = 0; a < n; ++a) {
    const ClassRates& r = ctx.cls[a];
    const std::complex<double> c{y(1 + 2 * a), y(2 + 2 * a)};
    const double sz = y(1 + 2 * n + a);
    const double ss_diag = y(1 + 3 * n + a);

    photon_feed += r.count * r.g * c.imag();

    // Coherence: free rotation at the class detuning, damping at
    // lambda_a + kappa_c/2, stimulated and spontaneous terms, and the
    // feedback of all other spins.  The explicit +i g ss_aa removes the
    // self-pair this class contributes to S_a.
    const std::complex<double> dc =
        std::complex<double>(0.0, r.detuning) * c -
        (r.lambda + ctx.kappa_c / 2.0) * c +
        std::complex<double>(0.0, -r.g * photon * sz) +
        std::complex<double>(0.0, -(r.g / 2.0) * (sz + 1.0)) +
        std::complex<double>(0.0, r.g * ss_diag) +
        std::complex<double>(0.0, -1.0) * sum_row[a];
    f(1 + 2 * a) = dc.real();
    f(2 + 2 * a) = dc.imag();

    f(1 + 2 * n + a) = 4.0 * r.g * c.imag() -
                       r.gamma * ((2.0 * r.n_th + 1.0) * sz + 1.0) -
                       r.eta * (sz - 1.0);

    f(1 + 3 * n + a) = -2.0 * r.lambda * ss_diag - 2.0 * r.g * sz * c.imag();

    for (std::size_t b = a + 1; b < n; ++b) {
      const ClassRates& rb = ctx.cls[b];
      const std::size_t k = pair_slot(n, a, b);
      const std::complex<double> ss{y(k), y(k + 1)};
      const std::complex<double> cb{y(1 + 2 * b), y(2 + 2 * b)};
      const double szb = y(1 + 2 * n + b);
      // Cross correlation rotates at the class frequency difference and
      // decays with both coherence rates; the drive exchanges excitation
      // through the common resonator.
      const std::complex<double> wt{r.detuning - rb.detuning,
                                    r.lambda + rb.lambda};
      const std::complex<double> dss =
          std::complex<double>(0.0, 1.0) *
          (wt * ss + rb.g * c * szb - r.g * sz * std::conj(cb));
      f(k) = dss.real();
      f(k + 1) = dss.imag();
    }
  }

  f(0) = -ctx.kappa_c * (photon - ctx.n_c_th) - 2.0 * photon_feed;
}

// ----- steady state on the coherences only -----------------------------
//
// With the time derivatives of the photon number, the inversions and the
// correlations set to zero, all of them follow algebraically from the
// coherences:
//   n      = n_c_th - (2/kappa_c) sum_a N_a g_a Im c_a
//   sz_a   = (4 g_a Im c_a + eta_a - gamma_a) / gamma_tot_a
//   ss_ab  = (g_a sz_a conj(c_b) - g_b c_a sz_b) / wt_ab
//   ss_aa  = -g_a sz_a Im c_a / lambda_a
// leaving one complex residual per class.

template <typename RT>
struct Eliminated {
  RT photon = RT(0);
  std::vector<RT> sz;
  std::vector<RT> ss_diag;
};

template <typename RT>
void eliminate(const Ctx& ctx, const std::complex<RT>* c, Eliminated<RT>& el) {
  const std::size_t n = ctx.cls.size();
  el.sz.resize(n);
  el.ss_diag.resize(n);
  RT feed = RT(0);
  for (std::size_t a = 0; a < n; ++a) {
    const ClassRates& r = ctx.cls[a];
    feed += static_cast<RT>(r.count) * static_cast<RT>(r.g) * c[a].imag();
    const RT gt = std::max(static_cast<RT>(r.gamma_tot),
                           static_cast<RT>(ctx.rate_floor));
    el.sz[a] = (RT(4) * static_cast<RT>(r.g) * c[a].imag() +
                static_cast<RT>(r.eta - r.gamma)) /
               gt;
    const RT lam = std::max(static_cast<RT>(r.lambda),
                            static_cast<RT>(ctx.rate_floor));
    el.ss_diag[a] = -static_cast<RT>(r.g) * el.sz[a] * c[a].imag() / lam;
  }
  el.photon = static_cast<RT>(ctx.n_c_th) -
              RT(2) / static_cast<RT>(ctx.kappa_c) * feed;
}

template <typename RT>
void residual(const Ctx& ctx, const std::complex<RT>* c,
              std::complex<RT>* out, Eliminated<RT>& el, RT* scale = nullptr) {
  using C = std::complex<RT>;
  const std::size_t n = ctx.cls.size();
  eliminate(ctx, c, el);

  for (std::size_t a = 0; a < n; ++a) {
    const ClassRates& r = ctx.cls[a];
    const RT ga = static_cast<RT>(r.g);
    C sum{RT(0), RT(0)};
    RT sum_mag = RT(0);
    for (std::size_t b = 0; b < n; ++b) {
      const ClassRates& rb = ctx.cls[b];
      C ss;
      if (a == b) {
        ss = C(el.ss_diag[a], RT(0));
      } else {
        const C wt(static_cast<RT>(r.detuning - rb.detuning),
                   static_cast<RT>(r.lambda + rb.lambda));
        ss = (ga * el.sz[a] * std::conj(c[b]) -
              static_cast<RT>(rb.g) * c[a] * el.sz[b]) /
             wt;
      }
      const RT w = static_cast<RT>(rb.count) * static_cast<RT>(rb.g);
      sum += w * ss;
      if (scale) sum_mag += w * std::abs(ss);
    }
    const C pole(static_cast<RT>(r.detuning),
                 static_cast<RT>(r.lambda) + static_cast<RT>(ctx.kappa_c) / RT(2));
    out[a] = C(RT(0), RT(1)) * pole * c[a] +
             C(RT(0), RT(-1)) * (ga * el.photon * el.sz[a] +
                                 (ga / RT(2)) * (el.sz[a] + RT(1)) -
                                 ga * el.ss_diag[a]) +
             C(RT(0), RT(-1)) * sum;
    // Convergence has to be judged against the terms the balance is built
    // from: the correlation feed carries N_b g_b ~ 1e13, so a residual that
    // looks tiny next to the decay rates can still shift the photon number
    // at the percent level.
    if (scale)
      scale[a] = std::abs(pole) * std::abs(c[a]) +
                 ga * (std::abs(el.photon) * std::abs(el.sz[a]) +
                       (std::abs(el.sz[a]) + RT(1)) / RT(2) +
                       std::abs(el.ss_diag[a])) +
                 sum_mag;
  }
}

template <typename RT>
RT scaled_norm(const Ctx& ctx, const std::complex<RT>* f, const RT* scale) {
  RT worst = RT(0);
  for (std::size_t a = 0; a < ctx.cls.size(); ++a) {
    const RT s = std::max(scale[a], std::numeric_limits<RT>::min());
    worst = std::max(worst, std::abs(f[a]) / s);
  }
  return worst;
}

template <typename RT>
struct NewtonOutcome {
  bool converged = false;
  int iterations = 0;
  RT residual_norm = std::numeric_limits<RT>::infinity();
};

template <typename RT>
NewtonOutcome<RT> newton_coherences(const Ctx& ctx, std::vector<std::complex<RT>>& c,
                                    RT tol, int max_iter) {
  using Mat = Eigen::Matrix<RT, Eigen::Dynamic, Eigen::Dynamic>;
  using Vec = Eigen::Matrix<RT, Eigen::Dynamic, 1>;
  const std::size_t n = ctx.cls.size();
  const std::size_t m = 2 * n;
  const RT sqrt_eps = std::sqrt(std::numeric_limits<RT>::epsilon());

  std::vector<std::complex<RT>> f(n), ftmp(n);
  std::vector<RT> sc(n), sct(n);
  Eliminated<RT> el;
  residual(ctx, c.data(), f.data(), el, sc.data());

  NewtonOutcome<RT> out;
  out.residual_norm = scaled_norm(ctx, f.data(), sc.data());

  Mat jac(m, m);
  std::vector<std::complex<RT>> ct(n);
  for (out.iterations = 0; out.iterations < max_iter; ++out.iterations) {
    if (out.residual_norm <= tol) break;

    for (std::size_t j = 0; j < m; ++j) {
      ct = c;
      const std::size_t a = j / 2;
      const bool im = j % 2;
      const RT base = im ? ct[a].imag() : ct[a].real();
      RT h = sqrt_eps * std::max(std::abs(base), RT(1));
      const RT bumped = base + h;
      h = bumped - base;
      if (im)
        ct[a] = {ct[a].real(), bumped};
      else
        ct[a] = {bumped, ct[a].imag()};
      Eliminated<RT> el_t;
      residual(ctx, ct.data(), ftmp.data(), el_t);
      for (std::size_t i = 0; i < n; ++i) {
        jac(2 * i, j) = (ftmp[i].real() - f[i].real()) / h;
        jac(2 * i + 1, j) = (ftmp[i].imag() - f[i].imag()) / h;
      }
    }

    Vec rhs(m);
    for (std::size_t i = 0; i < n; ++i) {
      rhs(2 * i) = -f[i].real();
      rhs(2 * i + 1) = -f[i].imag();
    }
    // Row and column equilibration: the raw Jacobian mixes decay-rate rows
    // with rows amplified by N g, and an unscaled LU loses the small rows
    // to roundoff.
    Vec rs(m), cs(m);
    for (std::size_t i = 0; i < m; ++i) {
      const RT mx = jac.row(i).cwiseAbs().maxCoeff();
      rs(i) = mx > RT(0) ? RT(1) / mx : RT(1);
    }
    jac = rs.asDiagonal() * jac;
    rhs = rs.asDiagonal() * rhs;
    for (std::size_t jc = 0; jc < m; ++jc) {
      const RT mx = jac.col(jc).cwiseAbs().maxCoeff();
      cs(jc) = mx > RT(0) ? RT(1) / mx : RT(1);
    }
    jac = jac * cs.asDiagonal();
    Vec dx = Eigen::FullPivLU<Mat>(jac).solve(rhs);
    dx = cs.asDiagonal() * dx;
    if (!dx.allFinite()) break;

    bool improved = false;
    RT t = RT(1);
    for (int ls = 0; ls < 30; ++ls) {
      for (std::size_t i = 0; i < n; ++i)
        ct[i] = c[i] + std::complex<RT>(t * dx(2 * i), t * dx(2 * i + 1));
      Eliminated<RT> el_t;
      residual(ctx, ct.data(), ftmp.data(), el_t, sct.data());
      const RT res_t = scaled_norm(ctx, ftmp.data(), sct.data());
      if (std::isfinite(static_cast<double>(res_t)) &&
          res_t < out.residual_norm) {
        c = ct;
        f = ftmp;
        sc = sct;
        out.residual_norm = res_t;
        improved = true;
        break;
      }
      t /= RT(2);
    }
    if (!improved) break;
  }
  out.converged = out.residual_norm <= tol;
  return out;
}

// Full state from converged coherences; the off-diagonal correlations come
// from the same elimination formulas, so Hermiticity holds by construction.
SubEnsembleState rebuild_state(const Ctx& ctx,
                               const std::vector<std::complex<double>>& c) {
  const std::size_t n = ctx.cls.size();
  Eliminated<double> el;
  std::vector<std::complex<double>> f(n);
  residual(ctx, c.data(), f.data(), el);

  SubEnsembleState s = SubEnsembleState::zero(n);
  s.photon_number = el.photon;
  for (std::size_t a = 0; a < n; ++a) {
    s.spin_photon[a] = c[a];
    s.inversion[a] = el.sz[a];
    s.spin_spin(a, a) = el.ss_diag[a];
    for (std::size_t b = a + 1; b < n; ++b) {
      const ClassRates& ra = ctx.cls[a];
      const ClassRates& rb = ctx.cls[b];
      const std::complex<double> wt(ra.detuning - rb.detuning,
                                    ra.lambda + rb.lambda);
      const std::complex<double> ss =
          (ra.g * el.sz[a] * std::conj(c[b]) - rb.g * c[a] * el.sz[b]) / wt;
      s.spin_spin(a, b) = ss;
      s.spin_spin(b, a) = std::conj(ss);
    }
  }
  return s;
}

bool physical(const Ctx& ctx, const std::vector<std::complex<double>>& c) {
  Eliminated<double> el;
  std::vector<std::complex<double>> f(ctx.cls.size());
  residual(ctx, c.data(), f.data(), el);
  if (!std::isfinite(el.photon) || el.photon < -1e-6 * (ctx.n_c_th + 1.0))
    return false;
  for (const double sz : el.sz)
    if (!std::isfinite(sz) || std::fabs(sz) > 1.0 + 1e-9) return false;
  return true;
}

// The eliminated equations keep every root of the flow, including the
// incoherent branch continued past the pump where it loses stability.  A
// root is dynamically reachable only when the linear (a, <sigma_a^->) block
// decays; the correlations grow at twice the amplitude rate, so the same
// criterion governs the cumulant flow.
bool stable_root(const Ctx& ctx, const std::vector<std::complex<double>>& c) {
  const std::size_t n = ctx.cls.size();
  Eliminated<double> el;
  std::vector<std::complex<double>> f(n);
  residual(ctx, c.data(), f.data(), el);

  Eigen::MatrixXcd m = Eigen::MatrixXcd::Zero(n + 1, n + 1);
  m(0, 0) = std::complex<double>(-0.5 * ctx.kappa_c, 0.0);
  double rate = 0.5 * ctx.kappa_c;
  for (std::size_t a = 0; a < n; ++a) {
    const ClassRates& r = ctx.cls[a];
    m(0, a + 1) = std::complex<double>(0.0, -r.count * r.g);
    m(a + 1, 0) = std::complex<double>(0.0, r.g * el.sz[a]);
    m(a + 1, a + 1) = std::complex<double>(-r.lambda, -r.detuning);
    rate = std::max(rate, r.lambda);
  }
  const Eigen::ComplexEigenSolver<Eigen::MatrixXcd> eig(m);
  // the pumped root sits at marginal stability (gain clamped to loss), so
  // leave room at the linewidth scale
  return eig.eigenvalues().real().maxCoeff() <= 1e-4 * rate;
}

// Root tracking from the collapsed model.  With every class placed at the
// count-weighted mean parameters the system is exactly the identical-spins
// model, whose root is known and puts the same per-spin coherence in every
// class.  From there the detunings and rates are morphed linearly to the
// requested model, with a warm-started Newton solve tracking the root at
// each step; the pole-by-pole structure develops gradually, so each solve
// starts inside the basin.
bool masing_branch(const SubEnsembleModel& model, const Ctx& target,
                   std::vector<std::complex<double>>& c, int& iters) {
  const std::size_t n = target.cls.size();
  long double num = 0.0L, g2 = 0.0L, g2w = 0.0L;
  long double gam = 0.0L, eta = 0.0L, chi = 0.0L;
  for (std::size_t a = 0; a < n; ++a) {
    const ClassRates& r = target.cls[a];
    const long double cnt = static_cast<long double>(r.count);
    num += cnt;
    g2 += cnt * r.g * r.g;
    g2w += cnt * r.g * r.g * (model.omega_c + r.detuning);
    gam += cnt * r.gamma;
    eta += cnt * r.eta;
    chi += cnt * (r.lambda - 0.5L * r.gamma_tot);
  }
  if (!(num > 0.0L) || !(g2 > 0.0L)) return false;

  SystemParams p;
  p.omega_c = model.omega_c;
  p.kappa_c = model.kappa_c;
  p.temperature = model.temperature;
  p.n_spins = static_cast<double>(num);
  p.g = static_cast<double>(std::sqrt(g2 / num));
  p.omega_s = static_cast<double>(g2w / g2);
  p.gamma = static_cast<double>(gam / num);
  p.chi = static_cast<double>(chi / num);
  p.eta = static_cast<double>(eta / num);

  SteadyStateResult agg;
  try {
    agg = steady_state(p);
  } catch (const config_error&) {
    return false;
  }
  if (!agg.converged) return false;

  const double nth0 = thermal_occupation(p.omega_s, model.temperature);
  const double det0 = p.omega_s - model.omega_c;
  c.assign(n, agg.state.spin_photon);

  const int steps = 12;
  Ctx mix = target;
  for (int k = 1; k <= steps; ++k) {
    if (k == steps) {
      mix.cls = target.cls;
    } else {
      const double tau = double(k) / steps;
      for (std::size_t a = 0; a < n; ++a) {
        const ClassRates& r1 = target.cls[a];
        ClassRates& rm = mix.cls[a];
        const double chi1 = r1.lambda - 0.5 * r1.gamma_tot;
        rm.g = p.g + tau * (r1.g - p.g);
        rm.detuning = det0 + tau * (r1.detuning - det0);
        rm.gamma = p.gamma + tau * (r1.gamma - p.gamma);
        rm.eta = p.eta + tau * (r1.eta - p.eta);
        rm.n_th = nth0 + tau * (r1.n_th - nth0);
        rm.gamma_tot = rm.gamma * (2.0 * rm.n_th + 1.0) + rm.eta;
        rm.lambda = 0.5 * rm.gamma_tot + (p.chi + tau * (chi1 - p.chi));
      }
    }
    auto step = newton_coherences<double>(mix, c, 1e-9, 40);
    iters += step.iterations;
    if (!step.converged) return false;
  }
  return true;
}

SubEnsembleSteadyResult finish(const Ctx& ctx,
                               std::vector<std::complex<double>>& c, int iters,
                               bool fallback, const std::string& message) {
  const std::size_t n = ctx.cls.size();
  // Long double polish: the narrow emission line rides on inversions that
  // sit within ~1e-10 of their clamped values, beyond plain double Newton.
  std::vector<std::complex<long double>> cl(n);
  for (std::size_t a = 0; a < n; ++a) cl[a] = c[a];
  newton_coherences<long double>(ctx, cl, 1e-15L, 8);
  std::vector<std::complex<long double>> fl(n);
  std::vector<long double> sl(n);
  Eliminated<long double> ell;
  residual(ctx, cl.data(), fl.data(), ell, sl.data());
  const long double res_l = scaled_norm(ctx, fl.data(), sl.data());
  if (std::isfinite(static_cast<double>(res_l)))
    for (std::size_t a = 0; a < n; ++a)
      c[a] = {static_cast<double>(cl[a].real()),
              static_cast<double>(cl[a].imag())};

  SubEnsembleSteadyResult out;
  out.state = rebuild_state(ctx, c);
  out.newton_iterations = iters;
  out.residual = static_cast<double>(res_l);
  out.converged = out.residual <= 1e-9 && physical(ctx, c);
  out.used_integration_fallback = fallback;
  out.message = message;
  if (!physical(ctx, c)) out.message += " (root failed physicality checks)";
  return out;
}

SubEnsembleSteadyResult solve_steady(const SubEnsembleModel& model,
                                     const std::vector<std::complex<double>>* guess) {
  const Ctx ctx = make_ctx(model);
  const std::size_t n = ctx.cls.size();

  // A converged physical root that fails the stability gate is kept in
  // reserve: strong pumping can Hopf-destabilize the masing fixed point (the
  // relaxation oscillation undamps and the output self-pulses), and then the
  // unstable root is still the answer to the steady-state equations, with
  // nothing better available.
  bool have_unstable = false;
  std::vector<std::complex<double>> cu;
  std::string unstable_msg;
  auto consider = [&](const std::vector<std::complex<double>>& cand,
                      const char* msg) {
    if (have_unstable) return;
    cu = cand;
    unstable_msg = msg;
    have_unstable = true;
  };

  std::vector<std::complex<double>> c(n, {0.0, 0.0});
  if (guess) c = *guess;
  auto first = newton_coherences<double>(ctx, c, 1e-9, 80);
  int iters = first.iterations;
  if (first.converged && physical(ctx, c)) {
    const char* msg = guess ? "direct solve from supplied guess"
                            : "direct solve from dark guess";
    if (stable_root(ctx, c)) return finish(ctx, c, iters, false, msg);
    consider(c, msg);
  }

  // Above threshold the dark guess lands on the unstable incoherent root;
  // restart on the pumped branch.
  {
    std::vector<std::complex<double>> cm;
    if (masing_branch(model, ctx, cm, iters) && physical(ctx, cm)) {
      const char* msg = "pumped-branch continuation from the collapsed model";
      if (stable_root(ctx, cm)) return finish(ctx, cm, iters, false, msg);
      consider(cm, msg);
    }
  }

  // Continuation: scale every pump rate jointly from near zero up to the
  // target, warm starting each solve.
  {
    double eta_max = 0.0;
    for (const ClassRates& r : ctx.cls) eta_max = std::max(eta_max, r.eta);
    SubEnsembleModel scaled = model;
    std::vector<std::complex<double>> cc(n, {0.0, 0.0});
    bool ok = true;
    const int steps = 24;
    for (int k = 0; k <= steps && ok; ++k) {
      const double s =
          eta_max > 0.0 ? std::pow(1e-6, 1.0 - double(k) / steps) : 1.0;
      for (std::size_t a = 0; a < model.classes.size(); ++a)
        scaled.classes[a].eta = model.classes[a].eta * s;
      const Ctx cs = make_ctx(scaled);
      auto step = newton_coherences<double>(cs, cc, 1e-9, 80);
      iters += step.iterations;
      ok = step.converged;
      if (eta_max == 0.0) break;
    }
    if (ok && physical(ctx, cc)) {
      if (stable_root(ctx, cc))
        return finish(ctx, cc, iters, false, "continuation in pump rate");
      consider(cc, "continuation in pump rate");
    }
    if (ok) c = cc;
  }

  if (have_unstable) {
    SubEnsembleSteadyResult out = finish(ctx, cu, iters, false, unstable_msg);
    out.message +=
        " (root is linearly unstable; the flow self-pulses around it)";
    return out;
  }

  // Integration fallback, skipped when the packed system is so large that a
  // dense Rosenbrock factorization is slower than useful.  The step budget
  // is finite for a reason: a flow without a stable fixed point orbits a
  // limit cycle forever, and an uncapped integration would never return.
  if (packed_dim(n) <= 1500) {
    double slow = ctx.kappa_c;
    for (const ClassRates& r : ctx.cls) {
      if (r.gamma_tot > 0.0) slow = std::min(slow, r.gamma_tot);
      if (r.lambda > 0.0) slow = std::min(slow, 2.0 * r.lambda);
    }
    SubEnsembleState start = SubEnsembleState::zero(n);
    start.photon_number = ctx.n_c_th;
    for (std::size_t a = 0; a < n; ++a) {
      const ClassRates& r = ctx.cls[a];
      start.inversion[a] =
          r.gamma_tot > 0.0 ? (r.eta - r.gamma) / r.gamma_tot : -1.0;
    }
    Eigen::VectorXd y0;
    pack_state(start, y0);
    OdeOptions opt;
    opt.rel_tol = 1e-9;
    opt.abs_tol = 1e-15;
    opt.max_steps = 20000;
    opt.scale = Eigen::VectorXd::Ones(y0.size());
    opt.scale(0) = ctx.n_c_th + 1.0;
    OdeRhs rhsf = [&ctx](double, const Eigen::VectorXd& y,
                         Eigen::VectorXd& f) { packed_rhs(ctx, y, f); };
    Eigen::VectorXd yl = y0;
    OdeObserver obs = [&yl](double, const Eigen::VectorXd& y) { yl = y; };
    try {
      yl = integrate_rosenbrock(rhsf, 0.0, 60.0 / slow, y0, opt, obs, nullptr);
    } catch (const solver_error&) {
      // keep the last accepted point; the polish decides if it is close
      // enough to a root
    }
    const SubEnsembleState fin = unpack_state(yl, n);
    for (std::size_t a = 0; a < n; ++a) c[a] = fin.spin_photon[a];
    auto polish = newton_coherences<double>(ctx, c, 1e-9, 80);
    iters += polish.iterations;
    SubEnsembleSteadyResult out =
        finish(ctx, c, iters, true, "long-time integration fallback");
    if (!polish.converged) {
      out.converged = false;
      out.message = "no convergence: Newton, continuation and integration all stalled";
    }
    return out;
  }

  SubEnsembleSteadyResult out = finish(ctx, c, iters, false, "");
  out.converged = false;
  out.message = "no convergence: Newton and continuation stalled";
  return out;
}

}  // namespace

double SubEnsembleModel::n_total() const {
  long double sum = 0.0L;
  for (const SpinClass& sc : classes) sum += static_cast<long double>(sc.count);
  return static_cast<double>(sum);
}

void SubEnsembleModel::validate() const {
  if (!(omega_c > 0.0) || !std::isfinite(omega_c))
    throw config_error("sub-ensemble model: omega_c must be positive");
  if (!(kappa_c > 0.0) || !std::isfinite(kappa_c))
    throw config_error("sub-ensemble model: kappa_c must be positive");
  if (!(temperature >= 0.0) || !std::isfinite(temperature))
    throw config_error("sub-ensemble model: temperature must be nonnegative");
  if (classes.empty())
    throw config_error("sub-ensemble model: needs at least one class");
  for (std::size_t a = 0; a < classes.size(); ++a) {
    const SpinClass& sc = classes[a];
    if (!(sc.count > 0.0))
      throw config_error("sub-ensemble model: class counts must be positive");
    if (!(sc.omega > 0.0))
      throw config_error("sub-ensemble model: class frequencies must be positive");
    if (sc.g < 0.0 || sc.gamma < 0.0 || sc.chi < 0.0 || sc.eta < 0.0)
      throw config_error("sub-ensemble model: class rates must be nonnegative");
    if (a > 0 && !(classes[a - 1].omega < sc.omega))
      throw config_error(
          "sub-ensemble model: class frequencies must be strictly increasing");
  }
  if (declared_total > 0.0) {
    const double sum = n_total();
    if (std::fabs(sum - declared_total) >
        1e3 * std::numeric_limits<double>::epsilon() * declared_total)
      throw config_error(
          "sub-ensemble model: class counts do not sum to the declared total");
  }
}

SubEnsembleModel SubEnsembleModel::from_params(const SystemParams& base,
                                               std::vector<SpinClass> classes) {
  base.validate();
  SubEnsembleModel m;
  m.omega_c = base.omega_c;
  m.kappa_c = base.kappa_c;
  m.temperature = base.temperature;
  m.filter_G = base.filter_G;
  m.filter_kappa = base.filter_kappa;
  m.classes = std::move(classes);
  std::sort(m.classes.begin(), m.classes.end(),
            [](const SpinClass& x, const SpinClass& y) { return x.omega < y.omega; });
  m.declared_total = m.n_total();
  m.validate();
  return m;
}

SubEnsembleModel discretize_gaussian(const SystemParams& base, double chi_inh,
                                     int n_classes, double center) {
  base.validate();
  if (!(chi_inh > 0.0) || !std::isfinite(chi_inh))
    throw config_error("discretize_gaussian: chi_inh must be positive");
  if (n_classes < 1 || n_classes > 100)
    throw config_error("discretize_gaussian: n_classes must lie in [1, 100]");
  if (base.n_spins < n_classes)
    throw config_error("discretize_gaussian: fewer spins than classes");
  if (std::isnan(center)) center = base.omega_s;

  // chi_inh is the FWHM of the inhomogeneous line; the grid covers
  // +-2.5 sigma, which holds 98.8% of the distribution.
  const double sigma = chi_inh / (2.0 * std::sqrt(2.0 * std::log(2.0)));
  const double half_span = 2.5 * sigma;

  // The grid is built from mirrored offsets so partner classes carry
  // bit-for-bit equal weights; otherwise rounding in the ideal counts breaks
  // the reflection symmetry of the line by one spin here and there.
  std::vector<double> omega(n_classes), weight(n_classes);
  long double wsum = 0.0L;
  for (int i = 0; i < n_classes; ++i) {
    const int ir = n_classes - 1 - i;
    const int j = std::min(i, ir);
    const double x =
        n_classes == 1 ? 0.0
                       : half_span - 2.0 * half_span * j / (n_classes - 1);
    const double off = i < ir ? -x : (i > ir ? x : 0.0);
    omega[i] = center + off;
    weight[i] = std::exp(-x * x / (2.0 * sigma * sigma));
    wsum += weight[i];
  }

  // Largest-remainder rounding keeps the class counts integral while the
  // total matches base.n_spins exactly; leftovers go out in mirror pairs so
  // the symmetry survives, with odd units parked on the center class.
  const long double total = static_cast<long double>(base.n_spins);
  std::vector<long double> count(n_classes);
  std::vector<long double> frac(n_classes);
  long double assigned = 0.0L;
  for (int i = 0; i < n_classes; ++i) {
    const long double ideal = total * static_cast<long double>(weight[i]) / wsum;
    count[i] = std::floor(ideal);
    frac[i] = ideal - count[i];
    assigned += count[i];
  }
  long double leftover = total - assigned;
  std::vector<int> order(n_classes);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return frac[a] > frac[b]; });
  std::vector<char> topped(n_classes, 0);
  for (int k = 0; leftover > 0.5L && k < n_classes; ++k) {
    const int i = order[k];
    const int ir = n_classes - 1 - i;
    if (topped[i]) continue;
    if (i == ir) {
      count[i] += 1.0L;
      leftover -= 1.0L;
    } else if (leftover >= 1.5L) {
      count[i] += 1.0L;
      count[ir] += 1.0L;
      topped[ir] = 1;
      leftover -= 2.0L;
    } else if (n_classes % 2 == 1) {
      count[(n_classes - 1) / 2] += 1.0L;
      leftover -= 1.0L;
    } else {
      // an odd total over an even grid cannot stay symmetric
      count[i] += 1.0L;
      leftover -= 1.0L;
    }
    topped[i] = 1;
  }
  // Tails rounded to zero would leave empty classes; refill them in mirror
  // pairs from the best-endowed donor pair (the center donates two).
  for (int i = 0; i < n_classes; ++i) {
    if (count[i] >= 0.5L) continue;
    const int ir = n_classes - 1 - i;
    int donor = -1;
    long double spare = 0.0L;
    for (int d = 0; d < n_classes; ++d) {
      const int dr = n_classes - 1 - d;
      if (d == i || d == ir) continue;
      const long double avail =
          d == dr ? (count[d] - 1.0L) / 2.0L
                  : std::min(count[d], count[dr]) - 1.0L;
      if (avail > spare) {
        spare = avail;
        donor = d;
      }
    }
    if (donor < 0) break;  // nothing to redistribute; validate() will object
    const int dr = n_classes - 1 - donor;
    if (donor == dr) {
      count[donor] -= 2.0L;
    } else {
      count[donor] -= 1.0L;
      count[dr] -= 1.0L;
    }
    if (i == ir) {
      count[i] += 2.0L;
    } else {
      count[i] += 1.0L;
      count[ir] += 1.0L;
    }
  }

  SubEnsembleModel m;
  m.omega_c = base.omega_c;
  m.kappa_c = base.kappa_c;
  m.temperature = base.temperature;
  m.filter_G = base.filter_G;
  m.filter_kappa = base.filter_kappa;
  m.declared_total = base.n_spins;
  m.classes.resize(n_classes);
  for (int i = 0; i < n_classes; ++i) {
    SpinClass& sc = m.classes[i];
    sc.count = static_cast<double>(count[i]);
    sc.omega = omega[i];
    sc.g = base.g;
    sc.gamma = base.gamma;
    // Each class stands in for a frequency interval of the line, so it
    // keeps a residual dephasing of the interval width.
    sc.chi = 2.0 * chi_inh / n_classes;
    sc.eta = base.eta;
  }
  m.validate();
  return m;
}

SubEnsembleModel split_central_class(const SubEnsembleModel& model, int n_sub,
                                     double spread) {
  model.validate();
  if (n_sub < 1) throw config_error("split_central_class: n_sub must be >= 1");
  if (!(spread > 0.0) && n_sub > 1)
    throw config_error("split_central_class: spread must be positive");
  if (n_sub == 1) return model;

  std::size_t central = 0;
  for (std::size_t a = 1; a < model.classes.size(); ++a)
    if (std::fabs(model.classes[a].omega - model.omega_c) <
        std::fabs(model.classes[central].omega - model.omega_c))
      central = a;

  const SpinClass src = model.classes[central];
  if (src.count < n_sub)
    throw config_error("split_central_class: class holds fewer spins than n_sub");

  std::vector<SpinClass> pieces(n_sub, src);
  // Equal ideal shares; largest remainder keeps the split count exact.
  const long double share = static_cast<long double>(src.count) / n_sub;
  long double assigned = 0.0L;
  for (int i = 0; i < n_sub; ++i) {
    pieces[i].count = static_cast<double>(std::floor(share));
    assigned += std::floor(share);
  }
  for (int i = 0; assigned < static_cast<long double>(src.count) - 0.5L;
       ++i, assigned += 1.0L)
    pieces[i % n_sub].count += 1.0;
  for (int i = 0; i < n_sub; ++i)
    pieces[i].omega =
        src.omega - spread / 2.0 + spread * (n_sub == 1 ? 0.5 : double(i) / (n_sub - 1));

  SubEnsembleModel out = model;
  out.classes.erase(out.classes.begin() + central);
  out.classes.insert(out.classes.begin() + central, pieces.begin(), pieces.end());
  out.validate();
  return out;
}

SubEnsembleState SubEnsembleState::zero(std::size_t n_classes) {
  SubEnsembleState s;
  s.photon_number = 0.0;
  s.spin_photon.assign(n_classes, {0.0, 0.0});
  s.inversion.assign(n_classes, -1.0);
  s.spin_spin = Eigen::MatrixXcd::Zero(n_classes, n_classes);
  return s;
}

SubEnsembleState rhs_subensembles(const SubEnsembleState& state,
                                  const SubEnsembleModel& model) {
  const Ctx ctx = make_ctx(model);
  Eigen::VectorXd y, f;
  pack_state(state, y);
  packed_rhs(ctx, y, f);
  return unpack_state(f, model.classes.size());
}

SubEnsembleTrajectory evolve_subensembles(const SubEnsembleState& initial,
                                          const SubEnsembleModel& model,
                                          double t_end, double tol) {
  if (!(tol > 0.0) || tol > 1e-2)
    throw std::invalid_argument("evolve_subensembles: tol must lie in (0, 1e-2]");
  if (!(t_end >= 0.0) || !std::isfinite(t_end))
    throw std::invalid_argument("evolve_subensembles: t_end must be finite");
  const Ctx ctx = make_ctx(model);
  const std::size_t n = ctx.cls.size();

  SubEnsembleTrajectory traj;
  Eigen::VectorXd y0;
  pack_state(initial, y0);

  const double total = model.n_total();
  auto record = [&](double t, const Eigen::VectorXd& y) {
    traj.times.push_back(t);
    traj.photon_number.push_back(y(0));
    long double acc = 0.0L;
    for (std::size_t a = 0; a < n; ++a)
      acc += static_cast<long double>(ctx.cls[a].count) * y(1 + 2 * n + a);
    traj.mean_inversion.push_back(static_cast<double>(acc / total));
  };
  record(0.0, y0);
  if (t_end == 0.0) {
    traj.final_state = initial;
    return traj;
  }

  OdeOptions opt;
  opt.rel_tol = tol;
  opt.abs_tol = tol * 1e-6;
  opt.scale = Eigen::VectorXd::Ones(y0.size());
  opt.scale(0) = ctx.n_c_th + 1.0;

  OdeRhs rhs = [&ctx](double, const Eigen::VectorXd& y, Eigen::VectorXd& f) {
    packed_rhs(ctx, y, f);
  };
  Eigen::VectorXd last_accepted = y0;
  OdeObserver observer = [&](double t, const Eigen::VectorXd& y) {
    if (t == 0.0) return;
    last_accepted = y;
    record(t, y);
    if (traj.times.size() > 40000) {
      std::size_t w = 1;
      for (std::size_t i = 2; i < traj.times.size(); i += 2, ++w) {
        traj.times[w] = traj.times[i];
        traj.photon_number[w] = traj.photon_number[i];
        traj.mean_inversion[w] = traj.mean_inversion[i];
      }
      traj.times.resize(w);
      traj.photon_number.resize(w);
      traj.mean_inversion.resize(w);
    }
  };

  try {
    Eigen::VectorXd yf =
        integrate_rosenbrock(rhs, 0.0, t_end, y0, opt, observer, &traj.stats);
    traj.final_state = unpack_state(yf, n);
    if (traj.times.back() != t_end) record(t_end, yf);
  } catch (const solver_error& err) {
    traj.stiffness_failure = true;
    traj.message = err.what();
    traj.final_state = unpack_state(last_accepted, n);
  }
  return traj;
}

SubEnsembleSteadyResult steady_state_subensembles(const SubEnsembleModel& model) {
  return solve_steady(model, nullptr);
}

SubEnsembleSteadyResult steady_state_subensembles(const SubEnsembleModel& model,
                                                  const SubEnsembleState& guess) {
  std::vector<std::complex<double>> c = guess.spin_photon;
  if (c.size() != model.classes.size())
    throw std::invalid_argument(
        "steady_state_subensembles: guess has the wrong number of classes");
  return solve_steady(model, &c);
}

std::vector<ClassDicke> dicke_per_class(const SubEnsembleState& state,
                                        const SubEnsembleModel& model) {
  model.validate();
  if (state.inversion.size() != model.classes.size())
    throw std::invalid_argument("dicke_per_class: state/model size mismatch");
  std::vector<ClassDicke> out;
  out.reserve(model.classes.size());
  for (std::size_t a = 0; a < model.classes.size(); ++a) {
    ClassDicke cd;
    cd.count = model.classes[a].count;
    cd.omega = model.classes[a].omega;
    cd.dicke = dicke_numbers(state.inversion[a], state.spin_spin(a, a),
                             model.classes[a].count);
    out.push_back(cd);
  }
  return out;
}

}  // namespace maser
