#include "maser/spectrum.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <limits>
#include <stdexcept>

namespace maser {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

// The filter photon number depends on the maser state only through the
// photon number and one (detuning, lambda, N g c, N g^2 sz) tuple per
// frequency class, so both the identical-spin and the sub-ensemble spectra
// share one evaluator.
struct ProbeClass {
  double detuning = 0.0;  // class frequency minus omega_c
  double lambda = 0.0;    // single-spin coherence decay
  std::complex<double> w1{0.0, 0.0};  // N g <sigma^dag a>
  double w2 = 0.0;                    // N g^2 <sigma_z>
};

struct ProbeInput {
  double kappa_c = 0.0;
  double photon = 0.0;
  std::vector<ProbeClass> cls;
};

ProbeInput probe_identical(const MeanFieldState& steady,
                           const SystemParams& params) {
  params.validate();
  const DerivedRates d = derive_rates(params);
  ProbeInput in;
  in.kappa_c = params.kappa_c;
  in.photon = steady.photon_number;
  ProbeClass pc;
  pc.detuning = params.omega_s - params.omega_c;
  pc.lambda = d.lambda_s;
  pc.w1 = params.n_spins * params.g * steady.spin_photon;
  pc.w2 = params.n_spins * params.g * params.g * steady.inversion;
  in.cls.push_back(pc);
  return in;
}

ProbeInput probe_subensemble(const SubEnsembleState& steady,
                             const SubEnsembleModel& model) {
  model.validate();
  if (steady.inversion.size() != model.classes.size())
    throw std::invalid_argument("spectrum: state/model class count mismatch");
  ProbeInput in;
  in.kappa_c = model.kappa_c;
  in.photon = steady.photon_number;
  in.cls.reserve(model.classes.size());
  for (std::size_t a = 0; a < model.classes.size(); ++a) {
    const SpinClass& sc = model.classes[a];
    const double n_th = thermal_occupation(sc.omega, model.temperature);
    ProbeClass pc;
    pc.detuning = sc.omega - model.omega_c;
    pc.lambda = 0.5 * (sc.gamma * (2.0 * n_th + 1.0) + sc.eta) + sc.chi;
    pc.w1 = sc.count * sc.g * steady.spin_photon[a];
    pc.w2 = sc.count * sc.g * sc.g * steady.inversion[a];
    in.cls.push_back(pc);
  }
  return in;
}

// Filter photon number at probe offset delta = omega_f - omega_c.  The
// filter mode and all spin coherences have been eliminated from the steady
// equations, leaving
//   <b^dag b> = 2 G^2 Im(X/D) / (2 G^2 Im(1/D) - kappa_f)
// with X = n - sum_a w1_a / wt_a,  D = wt_cf + sum_a w2_a / wt_a,
// wt_a = (d_a - delta) + i (lambda_a + kappa_f/2) and
// wt_cf = -delta + i (kappa_c + kappa_f)/2.  The filter itself is taken at
// zero temperature: it reads the emission without feeding noise back.
double eval_probe(const ProbeInput& in, double delta, double g_probe,
                  double kappa_f) {
  std::complex<double> x(in.photon, 0.0);
  std::complex<double> den(-delta, 0.5 * (in.kappa_c + kappa_f));
  for (const ProbeClass& pc : in.cls) {
    const std::complex<double> wt(pc.detuning - delta,
                                  pc.lambda + 0.5 * kappa_f);
    x -= pc.w1 / wt;
    den += pc.w2 / wt;
  }
  const std::complex<double> inv_den = 1.0 / den;
  const double response = 2.0 * g_probe * g_probe * inv_den.imag() - kappa_f;
  if (std::fabs(response) <
      1e3 * std::numeric_limits<double>::epsilon() * kappa_f)
    return kNaN;  // probe backaction cancels its own linewidth: no reading
  const double value = 2.0 * g_probe * g_probe * (x * inv_den).imag() / response;
  if (!std::isfinite(value)) return kNaN;
  return value < 0.0 ? 0.0 : value;  // roundoff guard at the noise floor
}

// ----- adaptive scan -----------------------------------------------------

// A seed carries the basin of its coarse maximum: the stretch between the
// flanking coarse minima.  Refinement never leaves the basin, so two humps
// sharing a valley are measured separately instead of the window sliding
// onto whichever of them carries the taller sample.
struct Seed {
  double center = 0.0;
  double width = 0.0;
  double lo = -std::numeric_limits<double>::infinity();
  double hi = std::numeric_limits<double>::infinity();
};

double sample_pass(const ProbeInput& in, double lo, double hi, int n_points,
                   double g_probe, double kappa_f,
                   std::vector<SpectrumSample>& pass) {
  pass.resize(n_points);
  double best = -1.0;
  for (int i = 0; i < n_points; ++i) {
    const double delta =
        n_points == 1 ? lo : lo + (hi - lo) * double(i) / (n_points - 1);
    SpectrumSample& s = pass[i];
    s.omega_f_offset = delta;
    s.value = eval_probe(in, delta, g_probe, kappa_f);
    s.kappa_f = kappa_f;
    s.g_probe = g_probe;
    if (std::isfinite(s.value)) best = std::max(best, s.value);
  }
  return best;
}

std::size_t apex_of(const std::vector<SpectrumSample>& pass) {
  std::size_t apex = 0;
  double best = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < pass.size(); ++i) {
    if (std::isfinite(pass[i].value) && pass[i].value > best) {
      best = pass[i].value;
      apex = i;
    }
  }
  return apex;
}

// Local maxima above `threshold`, demanding strict growth on at least one
// side so flat stretches at the noise floor do not seed peaks.
std::vector<std::size_t> local_maxima(const std::vector<SpectrumSample>& pass,
                                      double threshold) {
  std::vector<std::size_t> out;
  const std::size_t n = pass.size();
  auto v = [&](std::size_t i) {
    return std::isfinite(pass[i].value) ? pass[i].value : 0.0;
  };
  for (std::size_t i = 0; i < n; ++i) {
    const double vi = v(i);
    if (vi <= threshold) continue;
    const bool left_ok = i == 0 || vi >= v(i - 1);
    const bool right_ok = i + 1 == n || vi >= v(i + 1);
    const bool strict =
        (i > 0 && vi > v(i - 1)) || (i + 1 < n && vi > v(i + 1));
    if (left_ok && right_ok && strict) out.push_back(i);
  }
  return out;
}

// Seed for the maximum at index i: walk down both flanks to the nearest
// sample-level minima to bound the basin, then take the half-maximum extent
// inside the basin as the width guess.  Using extract_linewidth here would
// hand back the width of the whole envelope when two humps share a skirt,
// and every window sized from that number spans both humps.
Seed make_seed(const std::vector<SpectrumSample>& pass, std::size_t i,
               double lo_cap, double hi_cap) {
  auto v = [&](std::size_t k) {
    return std::isfinite(pass[k].value) ? pass[k].value : 0.0;
  };
  std::size_t il = i, ir = i;
  while (il > 0 && v(il - 1) <= v(il)) --il;
  while (ir + 1 < pass.size() && v(ir + 1) <= v(ir)) ++ir;
  Seed s;
  s.center = pass[i].omega_f_offset;
  s.lo = std::max(pass[il].omega_f_offset, lo_cap);
  s.hi = std::min(pass[ir].omega_f_offset, hi_cap);
  const double half = 0.5 * v(i);
  std::size_t l = i, r = i;
  while (l > il && v(l - 1) >= half) --l;
  while (r < ir && v(r + 1) >= half) ++r;
  const double spacing = pass.size() > 1
                             ? (pass.back().omega_f_offset -
                                pass.front().omega_f_offset) /
                                   double(pass.size() - 1)
                             : 1.0;
  s.width = std::max(pass[r].omega_f_offset - pass[l].omega_f_offset, spacing);
  return s;
}

// Width scale to report for a peak whose half-maximum contour leaks out of
// its basin: the extent of the contiguous samples at or above half the apex.
double half_extent(const std::vector<SpectrumSample>& pass, std::size_t apex) {
  auto v = [&](std::size_t i) {
    return std::isfinite(pass[i].value) ? pass[i].value : 0.0;
  };
  const double half = 0.5 * v(apex);
  std::size_t l = apex, r = apex;
  while (l > 0 && v(l - 1) >= half) --l;
  while (r + 1 < pass.size() && v(r + 1) >= half) ++r;
  double w = pass[r].omega_f_offset - pass[l].omega_f_offset;
  if (!(w > 0.0) && pass.size() > 1)
    w = (pass.back().omega_f_offset - pass.front().omega_f_offset) /
        double(pass.size() - 1);
  return w;
}

struct RefineOutcome {
  SpectrumPeak peak;
  std::vector<SpectrumSample> final_pass;
};

RefineOutcome refine_peak(const ProbeInput& in, Seed seed, double kf_cap,
                          const ScanSettings& st) {
  RefineOutcome out;
  double center = seed.center;
  double width = std::max(seed.width, 1e-300);
  const int n_points = 8 * std::max(st.min_samples_per_fwhm, 4) + 1;

  std::vector<SpectrumSample> pass;
  bool stable = false;
  for (int round = 0; round < st.max_rounds && !stable; ++round) {
    const double kf = std::min(kf_cap, width / 10.0);
    const double g = kf / 100.0;
    const double lo = std::max(center - 4.0 * width, seed.lo);
    const double hi = std::min(center + 4.0 * width, seed.hi);
    if (!(hi > lo)) break;
    sample_pass(in, lo, hi, n_points, g, kf, pass);
    const std::size_t apex = apex_of(pass);
    if (!(pass[apex].value > 0.0)) break;  // nothing to lock onto
    const LinewidthEstimate est = extract_linewidth(pass, apex);
    if (!est.resolved) {
      // The half-maximum contour is not contained in the window.  Recenter
      // on the apex and widen while the basin has room; once the window
      // covers the whole basin the flanks genuinely never reach half
      // maximum before the neighbouring feature takes over, so the peak
      // stays unresolved at any resolution.
      center = pass[apex].omega_f_offset;
      if (lo <= seed.lo && hi >= seed.hi) {
        // Size the verification probe from the feature, not from the
        // blown-up window guess, or a marginal valley stays smeared.
        width = half_extent(pass, apex);
        break;
      }
      width *= 4.0;
      continue;
    }
    stable = std::fabs(est.fwhm - width) <= 0.02 * est.fwhm &&
             kf <= est.fwhm / 10.0 * (1.0 + 1e-9);
    center = est.center;
    width = est.fwhm;
  }

  // Verification pass with the probe linewidth well below the measured
  // width, so the probe adds under two percent to the reported FWHM.
  const double kf = std::min(kf_cap, width / 64.0);
  const double g = kf / 100.0;
  const double lo = std::max(center - 4.0 * width, seed.lo);
  const double hi = std::min(center + 4.0 * width, seed.hi);
  sample_pass(in, lo, std::max(hi, std::nextafter(lo, 1e308)), n_points, g, kf,
              out.final_pass);
  const std::size_t apex = apex_of(out.final_pass);
  const LinewidthEstimate est = extract_linewidth(out.final_pass, apex);

  out.peak.center_offset = std::isfinite(est.center)
                               ? est.center
                               : out.final_pass[apex].omega_f_offset;
  out.peak.height = est.height;
  out.peak.fwhm =
      est.resolved ? est.fwhm : half_extent(out.final_pass, apex);
  out.peak.resolved = est.resolved && stable;
  out.peak.kappa_f_used = kf;
  out.peak.g_used = g;
  return out;
}

SpectrumResult run_scan(const ProbeInput& in, double window_lo,
                        double window_hi, const ScanSettings& st,
                        double model_kappa_f) {
  if (!(window_hi > window_lo) || !std::isfinite(window_hi - window_lo))
    throw std::invalid_argument("scan_spectrum: need window_hi > window_lo");
  if (st.coarse_points < 16)
    throw std::invalid_argument("scan_spectrum: coarse_points too small");

  SpectrumResult out;
  const double span = window_hi - window_lo;
  const double kf_cap =
      st.kappa_f > 0.0
          ? st.kappa_f
          : (model_kappa_f > 0.0 ? model_kappa_f
                                 : std::numeric_limits<double>::infinity());
  out.coarse_kappa_f = std::min(kf_cap, span / 20.0);
  out.coarse_g = out.coarse_kappa_f / 100.0;

  std::vector<SpectrumSample> coarse;
  const double coarse_max = sample_pass(in, window_lo, window_hi,
                                        st.coarse_points, out.coarse_g,
                                        out.coarse_kappa_f, coarse);
  out.samples = coarse;
  out.max_value = std::max(coarse_max, 0.0);
  if (!(coarse_max > 0.0)) {
    out.empty = true;
    return out;
  }
  const double threshold = st.noise_floor * coarse_max;

  std::vector<Seed> queue;
  {
    std::vector<std::size_t> maxima = local_maxima(coarse, threshold);
    // Tallest first, so the peak budget cannot be eaten by a string of
    // minor ripples before the strong lines get their turn.
    std::sort(maxima.begin(), maxima.end(),
              [&](std::size_t a, std::size_t b) {
                return coarse[a].value > coarse[b].value;
              });
    for (const std::size_t i : maxima)
      queue.push_back(make_seed(coarse, i, window_lo, window_hi));
  }

  std::size_t processed = 0;
  while (processed < queue.size() && out.peaks.size() < 16 &&
         processed < 32) {
    const Seed seed = queue[processed++];
    // Skip seeds that landed inside an already measured peak.
    bool duplicate = false;
    for (const SpectrumPeak& pk : out.peaks)
      if (std::fabs(seed.center - pk.center_offset) <
          0.5 * std::max(pk.fwhm, seed.width))
        duplicate = true;
    if (duplicate) continue;

    RefineOutcome ref = refine_peak(in, seed, kf_cap, st);
    if (!(ref.peak.height > threshold)) continue;

    // A coarse maximum can hide a cluster; look for further maxima in the
    // refined pass and queue the ones away from the measured center.
    const double pass_max = out.max_value > 0.0 ? ref.peak.height : 0.0;
    for (const std::size_t i :
         local_maxima(ref.final_pass, std::max(threshold, 0.02 * pass_max))) {
      const double cand = ref.final_pass[i].omega_f_offset;
      if (std::fabs(cand - ref.peak.center_offset) <
          std::max(ref.peak.fwhm, seed.width))
        continue;
      bool known = false;
      for (const SpectrumPeak& pk : out.peaks)
        if (std::fabs(cand - pk.center_offset) < std::max(pk.fwhm, 1e-300))
          known = true;
      for (std::size_t q = processed; q < queue.size(); ++q)
        if (std::fabs(cand - queue[q].center) < std::max(queue[q].width, 1e-300))
          known = true;
      if (!known)
        queue.push_back(make_seed(ref.final_pass, i, seed.lo, seed.hi));
    }

    out.peaks.push_back(ref.peak);
    out.samples.insert(out.samples.end(), ref.final_pass.begin(),
                       ref.final_pass.end());
    for (const SpectrumSample& s : ref.final_pass)
      if (std::isfinite(s.value)) out.max_value = std::max(out.max_value, s.value);
  }

  // Merge double detections of one line.
  std::sort(out.peaks.begin(), out.peaks.end(),
            [](const SpectrumPeak& a, const SpectrumPeak& b) {
              return a.center_offset < b.center_offset;
            });
  std::vector<SpectrumPeak> merged;
  for (const SpectrumPeak& pk : out.peaks) {
    if (!merged.empty() &&
        std::fabs(pk.center_offset - merged.back().center_offset) <
            0.5 * std::max(pk.fwhm, merged.back().fwhm)) {
      if (pk.height > merged.back().height) merged.back() = pk;
      continue;
    }
    merged.push_back(pk);
  }
  out.peaks = std::move(merged);

  std::sort(out.samples.begin(), out.samples.end(),
            [](const SpectrumSample& a, const SpectrumSample& b) {
              if (a.omega_f_offset != b.omega_f_offset)
                return a.omega_f_offset < b.omega_f_offset;
              return a.kappa_f > b.kappa_f;
            });
  return out;
}

}  // namespace

double filter_photon_number_identical(double omega_f_offset,
                                      const MeanFieldState& steady,
                                      const SystemParams& params) {
  if (!(params.filter_G > 0.0) || !(params.filter_kappa > 0.0))
    throw config_error(
        "filter photon number: filter_G and filter_kappa must be positive "
        "(scan_spectrum picks them automatically)");
  const ProbeInput in = probe_identical(steady, params);
  return eval_probe(in, omega_f_offset, params.filter_G, params.filter_kappa);
}

double filter_photon_number_subensemble(double omega_f_offset,
                                        const SubEnsembleState& steady,
                                        const SubEnsembleModel& model) {
  if (!(model.filter_G > 0.0) || !(model.filter_kappa > 0.0))
    throw config_error(
        "filter photon number: filter_G and filter_kappa must be positive "
        "(scan_spectrum picks them automatically)");
  const ProbeInput in = probe_subensemble(steady, model);
  return eval_probe(in, omega_f_offset, model.filter_G, model.filter_kappa);
}

SpectrumResult scan_spectrum(const SystemParams& params,
                             const MeanFieldState& steady, double window_lo,
                             double window_hi, const ScanSettings& settings) {
  const ProbeInput in = probe_identical(steady, params);
  return run_scan(in, window_lo, window_hi, settings, params.filter_kappa);
}

SpectrumResult scan_spectrum_subensemble(const SubEnsembleModel& model,
                                         const SubEnsembleState& steady,
                                         double window_lo, double window_hi,
                                         const ScanSettings& settings) {
  const ProbeInput in = probe_subensemble(steady, model);
  return run_scan(in, window_lo, window_hi, settings, model.filter_kappa);
}

LinewidthEstimate extract_linewidth(const std::vector<SpectrumSample>& samples,
                                    std::size_t apex_index) {
  LinewidthEstimate out;
  const std::size_t n = samples.size();
  if (n < 3 || apex_index >= n) return out;

  auto value = [&](std::size_t i) {
    return std::isfinite(samples[i].value) ? samples[i].value : 0.0;
  };
  const double x0 = samples[apex_index].omega_f_offset;
  const double v0 = value(apex_index);
  out.center = x0;
  out.height = v0;
  if (!(v0 > 0.0)) return out;

  // Parabola through the apex and its neighbors sharpens the center and
  // height beyond the sample spacing.
  if (apex_index > 0 && apex_index + 1 < n) {
    const double u1 = samples[apex_index - 1].omega_f_offset - x0;
    const double u2 = samples[apex_index + 1].omega_f_offset - x0;
    const double d1 = value(apex_index - 1) - v0;
    const double d2 = value(apex_index + 1) - v0;
    const double det = u1 * u2 * (u1 - u2);
    if (det != 0.0) {
      const double a = (d1 * u2 - d2 * u1) / det;
      const double b = (u1 * u1 * d2 - u2 * u2 * d1) / det;
      if (a < 0.0) {
        out.center = x0 - b / (2.0 * a);
        out.height = v0 - b * b / (4.0 * a);
      }
    }
  }

  // Half-maximum crossings by linear interpolation on the monotone flanks.
  const double half = out.height / 2.0;
  double left = kNaN, right = kNaN;
  for (std::size_t i = apex_index; i-- > 0;) {
    if (value(i) <= half) {
      const double run = samples[i + 1].omega_f_offset - samples[i].omega_f_offset;
      const double rise = value(i + 1) - value(i);
      left = samples[i].omega_f_offset +
             (rise != 0.0 ? (half - value(i)) / rise * run : 0.0);
      break;
    }
  }
  for (std::size_t i = apex_index + 1; i < n; ++i) {
    if (value(i) <= half) {
      const double run = samples[i].omega_f_offset - samples[i - 1].omega_f_offset;
      const double rise = value(i) - value(i - 1);
      right = samples[i - 1].omega_f_offset +
              (rise != 0.0 ? (half - value(i - 1)) / rise * run : 0.0);
      break;
    }
  }

  if (std::isfinite(left) && std::isfinite(right) && right > left) {
    out.fwhm = right - left;
    out.resolved = true;
  }
  return out;
}

}  // namespace maser
