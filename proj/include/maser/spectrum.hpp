#ifndef MASER_SPECTRUM_HPP
#define MASER_SPECTRUM_HPP

#include <cstddef>
#include <vector>

#include "maser/meanfield.hpp"
#include "maser/params.hpp"
#include "maser/subensemble.hpp"

namespace maser {

// Steady photon number of a weakly coupled readout resonator tuned to
// omega_c + omega_f_offset.  Sweeping the offset traces out the emission
// spectrum; a small probe coupling G and filter linewidth kappa_f keep the
// backaction on the maser negligible.  Frequencies are handled as offsets
// from omega_c throughout so that sub-mHz structure survives in double
// precision next to a 1e10 rad/s carrier.
//
// Both functions take the probe settings from the params/model (filter_G,
// filter_kappa) and throw config_error unless both are positive.  A
// denominator within 1e3 machine epsilons of zero means the probe is too
// strong to read the spectrum at that offset; the value returned is NaN.
double filter_photon_number_identical(double omega_f_offset,
                                      const MeanFieldState& steady,
                                      const SystemParams& params);
double filter_photon_number_subensemble(double omega_f_offset,
                                        const SubEnsembleState& steady,
                                        const SubEnsembleModel& model);

struct SpectrumSample {
  double omega_f_offset = 0.0;  // rad/s from omega_c
  double value = 0.0;           // filter photon number
  double kappa_f = 0.0;         // probe linewidth used for this sample
  double g_probe = 0.0;         // probe coupling used for this sample
};

struct SpectrumPeak {
  double center_offset = 0.0;  // rad/s from omega_c
  double height = 0.0;         // value at the apex in the final pass
  double fwhm = 0.0;           // rad/s, measured with kappa_f << fwhm
  bool resolved = false;       // both half-maximum crossings located
  double kappa_f_used = 0.0;
  double g_used = 0.0;
};

struct ScanSettings {
  int coarse_points = 801;
  int min_samples_per_fwhm = 20;
  // Peaks below noise_floor times the tallest coarse sample are ignored.
  double noise_floor = 1e-12;
  int max_rounds = 40;
  // Upper bound on the probe linewidth; 0 picks it from the params/model,
  // falling back to window/20.
  double kappa_f = 0.0;
};

struct SpectrumResult {
  std::vector<SpectrumSample> samples;  // all passes, sorted by offset
  std::vector<SpectrumPeak> peaks;      // sorted by center
  double coarse_kappa_f = 0.0;
  double coarse_g = 0.0;
  double max_value = 0.0;  // tallest sample over all passes
  bool empty = false;      // nothing rose above the noise floor
};

// Adaptive spectrum scan over [window_lo, window_hi] (offsets from
// omega_c): a uniform coarse pass locates candidate maxima, then each one
// is re-sampled on shrinking windows with the probe linewidth tied to a
// tenth of the current width estimate until the FWHM is stable and covered
// by at least min_samples_per_fwhm points, with a final verification pass
// at kappa_f = fwhm/64 so the probe contributes under 2% of the reported
// width.
SpectrumResult scan_spectrum(const SystemParams& params,
                             const MeanFieldState& steady, double window_lo,
                             double window_hi, const ScanSettings& settings = {});
SpectrumResult scan_spectrum_subensemble(const SubEnsembleModel& model,
                                         const SubEnsembleState& steady,
                                         double window_lo, double window_hi,
                                         const ScanSettings& settings = {});

struct LinewidthEstimate {
  double center = 0.0;
  double fwhm = 0.0;
  double height = 0.0;
  bool resolved = false;
};

// Peak center and FWHM from a single sorted pass of samples: parabolic fit
// through the apex for the center, linear interpolation of the half-maximum
// crossings on the monotone flanks for the width.  An unresolved peak (a
// flank never crosses half maximum inside the sampled window) is returned
// flagged rather than dropped.
LinewidthEstimate extract_linewidth(const std::vector<SpectrumSample>& samples,
                                    std::size_t apex_index);

}  // namespace maser

#endif
