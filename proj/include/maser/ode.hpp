// Adaptive ODE integrators on real state vectors: an explicit Dormand-Prince
// 5(4) pair for non-stiff work and the RODAS 4(3) Rosenbrock scheme of Hairer
// and Wanner (stiffly accurate, L-stable) for the stiff moment systems whose
// rates span thirteen decades.
#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <functional>
#include <limits>
#include <stdexcept>
#include <string>

namespace maser {

class solver_error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct OdeOptions {
  double rel_tol = 1e-8;
  double abs_tol = 1e-12;
  double initial_step = 0;  // 0 = choose from the first derivative
  double max_step = std::numeric_limits<double>::infinity();
  long max_steps = 50'000'000;
  // per-component magnitude scale; abs tolerance becomes abs_tol * scale_i
  Eigen::VectorXd scale;
};

struct OdeStats {
  long n_steps = 0;
  long n_rhs = 0;
  long n_rejected = 0;
  long n_jacobians = 0;
};

// f(t, y, dydt); observer(t, y) after each accepted step (may be empty)
using OdeRhs =
    std::function<void(double, const Eigen::VectorXd&, Eigen::VectorXd&)>;
using OdeObserver = std::function<void(double, const Eigen::VectorXd&)>;

namespace detail {

inline double error_norm(const Eigen::VectorXd& err, const Eigen::VectorXd& y0,
                         const Eigen::VectorXd& y1, const OdeOptions& opt) {
  double acc = 0;
  const long n = err.size();
  for (long i = 0; i < n; ++i) {
    double s = opt.scale.size() == n ? opt.scale[i] : 1.0;
    double tol = opt.abs_tol * s +
                 opt.rel_tol * std::max(std::abs(y0[i]), std::abs(y1[i]));
    double r = err[i] / tol;
    acc += r * r;
  }
  return std::sqrt(acc / static_cast<double>(n));
}

inline double initial_step_guess(double t0, double t1,
                                 const Eigen::VectorXd& y0,
                                 const Eigen::VectorXd& f0,
                                 const OdeOptions& opt, int order) {
  double d0 = y0.norm(), d1 = f0.norm();
  double h = (d0 > 1e-10 && d1 > 1e-10) ? 0.01 * d0 / d1 : 1e-6 * (t1 - t0);
  h = std::min({h, 0.1 * (t1 - t0), opt.max_step});
  (void)order;
  return std::max(h, 1e-300);
}

}  // namespace detail

template <class Rhs>
Eigen::VectorXd integrate_dopri5(Rhs&& f, double t0, double t1,
                                 Eigen::VectorXd y, const OdeOptions& opt = {},
                                 const OdeObserver& observer = {},
                                 OdeStats* stats = nullptr) {
  if (!(t1 > t0)) return y;
  const long n = y.size();
  // Dormand-Prince tableau
  static const double c[7] = {0, 1.0 / 5, 3.0 / 10, 4.0 / 5, 8.0 / 9, 1, 1};
  static const double a[7][6] = {
      {},
      {1.0 / 5},
      {3.0 / 40, 9.0 / 40},
      {44.0 / 45, -56.0 / 15, 32.0 / 9},
      {19372.0 / 6561, -25360.0 / 2187, 64448.0 / 6561, -212.0 / 729},
      {9017.0 / 3168, -355.0 / 33, 46732.0 / 5247, 49.0 / 176,
       -5103.0 / 18656},
      {35.0 / 384, 0, 500.0 / 1113, 125.0 / 192, -2187.0 / 6784, 11.0 / 84}};
  static const double b4[7] = {5179.0 / 57600, 0,           7571.0 / 16695,
                               393.0 / 640,    -92097.0 / 339200,
                               187.0 / 2100,   1.0 / 40};

  Eigen::VectorXd k[7];
  for (auto& v : k) v.resize(n);
  Eigen::VectorXd ytmp(n), y1(n), err(n);
  OdeStats local;
  OdeStats& st = stats ? *stats : local;

  double t = t0;
  f(t, y, k[0]);
  ++st.n_rhs;
  double h = opt.initial_step > 0
                 ? opt.initial_step
                 : detail::initial_step_guess(t0, t1, y, k[0], opt, 5);

  while (t < t1) {
    if (st.n_steps >= opt.max_steps)
      throw solver_error("dopri5: step limit reached at t=" +
                         std::to_string(t));
    h = std::min({h, t1 - t, opt.max_step});
    for (int s = 1; s < 7; ++s) {
      ytmp = y;
      for (int j = 0; j < s; ++j) ytmp += (h * a[s][j]) * k[j];
      f(t + c[s] * h, ytmp, k[s]);
      ++st.n_rhs;
    }
    y1 = ytmp;  // stage 7 state equals the 5th-order solution (FSAL)
    // error = h * sum_s (b5_s - b4_s) k_s; the 5th-order weights are the
    // a[6] row plus a zero 7th entry
    err.setZero();
    for (int s = 0; s < 6; ++s) err += (h * a[6][s]) * k[s];
    for (int s = 0; s < 7; ++s) err -= (h * b4[s]) * k[s];

    double e = detail::error_norm(err, y, y1, opt);
    if (e <= 1.0 || h <= 1e-14 * std::abs(t1 - t0)) {
      t += h;
      y.swap(y1);
      k[0] = k[6];  // FSAL
      ++st.n_steps;
      if (observer) observer(t, y);
    } else {
      ++st.n_rejected;
    }
    double fac = 0.9 * std::pow(std::max(e, 1e-10), -0.2);
    h *= std::min(5.0, std::max(0.2, fac));
    if (!(h > 0) || !std::isfinite(h))
      throw solver_error("dopri5: step size underflow");
  }
  return y;
}

// Numerical Jacobian by forward differences with per-component increments.
template <class Rhs>
void numerical_jacobian(Rhs&& f, double t, const Eigen::VectorXd& y,
                        const Eigen::VectorXd& f0, const OdeOptions& opt,
                        Eigen::MatrixXd& jac, OdeStats& st) {
  const long n = y.size();
  jac.resize(n, n);
  Eigen::VectorXd yp = y, fp(n);
  const double sqrt_eps = std::sqrt(std::numeric_limits<double>::epsilon());
  for (long j = 0; j < n; ++j) {
    double s = opt.scale.size() == n ? opt.scale[j] : 1.0;
    double dy = sqrt_eps * std::max(std::abs(y[j]), 1e-3 * s);
    if (dy == 0) dy = sqrt_eps * s;
    yp[j] = y[j] + dy;
    dy = yp[j] - y[j];  // kill roundoff in the increment
    f(t, yp, fp);
    ++st.n_rhs;
    jac.col(j) = (fp - f0) / dy;
    yp[j] = y[j];
  }
  ++st.n_jacobians;
}

// RODAS, the 4(3) Rosenbrock method of Hairer and Wanner (Solving ODEs II).
// Six stages sharing one LU factorization per step, stiffly accurate and
// L-stable, with the df/dt terms needed for non-autonomous problems. The
// embedded 3rd-order solution drives step control while the 4th-order one is
// propagated, so the achieved accuracy sits well below the tolerance. A
// Rosenbrock scheme needs the current Jacobian for its order, so it is
// refreshed every step.
template <class Rhs>
Eigen::VectorXd integrate_rosenbrock(Rhs&& f, double t0, double t1,
                                     Eigen::VectorXd y,
                                     const OdeOptions& opt = {},
                                     const OdeObserver& observer = {},
                                     OdeStats* stats = nullptr) {
  if (!(t1 > t0)) return y;
  const long n = y.size();

  static const double gam = 0.25;
  static const double c2 = 0.386, c3 = 0.21, c4 = 0.63;
  static const double d1 = 0.25, d2 = -0.1043, d3 = 0.1035,
                      d4 = -0.03620000000000023;
  static const double a21 = 1.544;
  static const double a31 = 0.9466785280815826, a32 = 0.2557011698983284;
  static const double a41 = 3.314825187068521, a42 = 2.896124015972201,
                      a43 = 0.9986419139977817;
  static const double a51 = 1.221224509226641, a52 = 6.019134481288629,
                      a53 = 12.53708332932087, a54 = -0.6878860361058950;
  static const double c21 = -5.6688;
  static const double c31 = -2.430093356833875, c32 = -0.2063599157091915;
  static const double c41 = -0.1073529058151375, c42 = -9.594562251023355,
                      c43 = -20.47028614809616;
  static const double c51 = 7.496443313967647, c52 = -10.24680431464352,
                      c53 = -33.99990352819905, c54 = 11.70890893206160;
  static const double c61 = 8.083246795921522, c62 = -7.981132988064893,
                      c63 = -31.52159432874371, c64 = 16.31930543123136,
                      c65 = -6.058818238834054;

  OdeStats local;
  OdeStats& st = stats ? *stats : local;

  Eigen::VectorXd f0(n), fs(n), dfdt(n), g1(n), g2(n), g3(n), g4(n), g5(n),
      g6(n), ytmp(n), yhat(n);
  Eigen::MatrixXd jac, w;
  Eigen::PartialPivLU<Eigen::MatrixXd> lu;

  double t = t0;
  f(t, y, f0);
  ++st.n_rhs;
  double h = opt.initial_step > 0
                 ? opt.initial_step
                 : detail::initial_step_guess(t0, t1, y, f0, opt, 4);
  bool state_fresh = true;  // jacobian/dfdt match the current (t, y)

  while (t < t1) {
    if (st.n_steps >= opt.max_steps)
      throw solver_error("rosenbrock: step limit reached at t=" +
                         std::to_string(t));
    h = std::min({h, t1 - t, opt.max_step});

    if (state_fresh) {
      numerical_jacobian(f, t, y, f0, opt, jac, st);
      const double dt =
          std::sqrt(std::numeric_limits<double>::epsilon() *
                    std::max(1e-5, std::abs(t)));
      f(t + dt, y, fs);
      ++st.n_rhs;
      dfdt = (fs - f0) / dt;
      state_fresh = false;
    }
    w = -jac;
    w.diagonal().array() += 1.0 / (gam * h);
    lu.compute(w);

    g1 = lu.solve(f0 + (h * d1) * dfdt);
    ytmp = y + a21 * g1;
    f(t + c2 * h, ytmp, fs);
    g2 = lu.solve(fs + (h * d2) * dfdt + (c21 / h) * g1);
    ytmp = y + a31 * g1 + a32 * g2;
    f(t + c3 * h, ytmp, fs);
    g3 = lu.solve(fs + (h * d3) * dfdt + (c31 / h) * g1 + (c32 / h) * g2);
    ytmp = y + a41 * g1 + a42 * g2 + a43 * g3;
    f(t + c4 * h, ytmp, fs);
    g4 = lu.solve(fs + (h * d4) * dfdt + (c41 / h) * g1 + (c42 / h) * g2 +
                  (c43 / h) * g3);
    ytmp = y + a51 * g1 + a52 * g2 + a53 * g3 + a54 * g4;
    f(t + h, ytmp, fs);
    g5 = lu.solve(fs + (c51 / h) * g1 + (c52 / h) * g2 + (c53 / h) * g3 +
                  (c54 / h) * g4);
    yhat = ytmp + g5;  // embedded 3rd-order solution
    f(t + h, yhat, fs);
    g6 = lu.solve(fs + (c61 / h) * g1 + (c62 / h) * g2 + (c63 / h) * g3 +
                  (c64 / h) * g4 + (c65 / h) * g5);
    st.n_rhs += 5;
    ytmp = yhat + g6;  // 4th-order solution; g6 is the embedded difference

    double e = detail::error_norm(g6, y, ytmp, opt);
    if (e <= 1.0 || h <= 1e-14 * std::abs(t1 - t0)) {
      t += h;
      y.swap(ytmp);
      f(t, y, f0);
      ++st.n_rhs;
      ++st.n_steps;
      if (observer) observer(t, y);
      state_fresh = true;
    } else {
      ++st.n_rejected;
    }
    double fac = 0.9 * std::pow(std::max(e, 1e-10), -0.25);
    h *= std::min(6.0, std::max(0.2, fac));
    if (!(h > 0) || !std::isfinite(h))
      throw solver_error("rosenbrock: step size underflow");
  }
  return y;
}

}  // namespace maser
