// System parameters, derived rates, experimental presets, NV level structure
// and the plain-text config format.
#pragma once

#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace maser {

class config_error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// All frequencies and rates in rad/s.
struct SystemParams {
  double omega_c = 0;       // resonator frequency
  double kappa_c = 0;       // resonator energy decay rate
  double n_spins = 1;       // ensemble size; stored as double since values up
                            // to 1e17 occur and N only enters multiplicatively
                            // (<= 1 ulp effect)
  double omega_s = 0;       // spin transition frequency
  double g = 0;             // single spin-resonator coupling
  double gamma = 0;         // single-spin thermal relaxation rate
  double chi = 0;           // single-spin pure dephasing rate
  double eta = 0;           // incoherent pump rate
  double temperature = 0;   // kelvin
  double filter_G = 0;      // filter-resonator coupling; 0 = pick automatically
  double filter_kappa = 0;  // filter decay rate; 0 = pick automatically

  void validate() const;    // throws config_error on bad values
};

struct DerivedRates {
  double n_c_th;         // thermal occupation at omega_c
  double n_k_th;         // thermal occupation at omega_s
  double lambda_s;       // total spin decoherence rate
  double gamma_purcell;  // resonator-induced spin decay 4 g^2 / kappa_c
  double k_eet;          // spin-resonator energy exchange rate
  double cooperativity;  // 2 k_eet / kappa_c
};

double thermal_occupation(double omega, double temperature);
DerivedRates derive_rates(const SystemParams& p);
double collective_coupling(const SystemParams& p);  // sqrt(N) g

enum class CouplingRegime { strong, weak };

struct ExperimentPreset {
  std::string name;
  SystemParams params;
  CouplingRegime regime;
  bool chi_assumed = false;    // dephasing not reported; typical value used
  bool gamma_assumed = false;  // relaxation not reported; default 0.157 rad/s
  // Published combined values kept for cross-checking the transcription.
  double ref_gamma_purcell = 0;       // as printed
  bool ref_gamma_purcell_angular = false;  // printed value is the angular rate
  double ref_collective_2pi = 0;      // collective coupling / 2pi, Hz
  bool ref_consistent = true;  // false when the published combined value does
                               // not follow from the published (N, g) pair
};

const std::vector<ExperimentPreset>& preset_catalog();
ExperimentPreset load_preset(const std::string& name);

// NV- ground-state level structure for a field along the defect axis.
struct LevelStructure {
  double omega_0;      // m_s = 0 electron level
  double omega_plus;   // m_s = +1
  double omega_minus;  // m_s = -1
  // nuclear-dressed levels; index 0,1,2 <-> m_I = -1, 0, +1
  double omega_0_mI[3];
  double omega_m1_mI[3];
  struct Transition {
    std::string label;
    double frequency;
  };
  std::vector<Transition> transitions;  // |0,m_I> -> |-1,m_I>, m_I conserved
  bool ordering_inverted = false;       // omega_minus fell below omega_0
};
LevelStructure nv_level_structure(double b_field);

// hyperfine constants, stored as printed (ordinary Hz)
inline constexpr double hyperfine_a_parallel_hz = -2.1e6;
inline constexpr double hyperfine_a_perp_hz = -2.7e6;

enum class UnitsConvention { angular, hertz };

// Plain-text config: one `key = value` per line, `#` comments, an explicit
// `units = angular|hertz` line, optional `preset = <name>` base.
SystemParams params_from_config_text(const std::string& text);
// Same, but starting from `base` instead of default-constructed params; a
// `preset` line inside the text still wins over `base`.
SystemParams params_from_config_text(const std::string& text,
                                     const SystemParams& base);
SystemParams params_from_config_file(const std::string& path);
std::string config_text_from_params(const SystemParams& p);  // canonical, angular
void apply_override(SystemParams& p, const std::string& key, double value,
                    UnitsConvention units);
bool key_is_frequency(const std::string& key);

}  // namespace maser
