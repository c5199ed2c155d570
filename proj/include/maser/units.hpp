// Physical constants and unit helpers. Everything in the library is kept in
// angular units (rad/s); config files may declare ordinary frequencies (Hz)
// and are converted once at load time.
#pragma once

namespace maser {

inline constexpr double two_pi = 6.283185307179586476925286766559;

// SI values
inline constexpr double hbar = 1.054571817e-34;        // J s
inline constexpr double k_boltzmann = 1.380649e-23;    // J / K

// NV / nitrogen constants
inline constexpr double g_electron = 2.0;
inline constexpr double mu_electron = 9.274e-24;       // J / T (Bohr magneton)
inline constexpr double mu_nuclear = mu_electron / 1837.0;  // J / T
inline constexpr double g_nitrogen = 0.4038;           // 14N nuclear g factor
inline constexpr double nv_zero_field_split = two_pi * 2.87e9;  // rad/s

inline constexpr double hz_to_angular(double f) { return two_pi * f; }
inline constexpr double angular_to_hz(double w) { return w / two_pi; }

}  // namespace maser
