// Command line front end: steady states, spectra and analytic overlays for
// the spin-ensemble maser model, with deterministic CSV/JSON output.
#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <limits>
#include <map>
#include <mutex>
#include <sstream>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "maser/analytics.hpp"
#include "maser/exact.hpp"
#include "maser/io.hpp"
#include "maser/meanfield.hpp"
#include "maser/params.hpp"
#include "maser/spectrum.hpp"
#include "maser/subensemble.hpp"
#include "maser/units.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace maser;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitSolver = 3;
constexpr int kExitSweepFailures = 4;

struct CommonOpts {
  std::string config;
  std::string out = "out";
  std::string preset;
  std::vector<std::string> overrides;
  int workers = 0;
};

void add_common(CLI::App* cmd, CommonOpts& opts) {
  cmd->add_option("--config", opts.config, "plain-text key=value config file");
  cmd->add_option("--out", opts.out, "output directory (created if needed)");
  cmd->add_option("--preset", opts.preset, "experiment preset name");
  cmd->add_option("--override", opts.overrides,
                  "key=value override, angular units (repeatable)")
      ->take_all();
  cmd->add_option("--workers", opts.workers, "worker threads (default: cores)");
}

int worker_count(const CommonOpts& opts) {
  if (opts.workers > 0) return opts.workers;
  const unsigned hw = std::thread::hardware_concurrency();
  return hw > 0 ? static_cast<int>(hw) : 1;
}

// Runs fn(0..n-1) on a small thread pool.  Tasks write to disjoint slots, so
// scheduling order never shows in the output.
void parallel_for(int n, int workers, const std::function<void(int)>& fn) {
  workers = std::max(1, std::min(workers, n));
  if (workers == 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<int> next{0};
  std::exception_ptr first_error;
  std::mutex error_mutex;
  std::vector<std::thread> pool;
  for (int w = 0; w < workers; ++w)
    pool.emplace_back([&] {
      for (int i; (i = next.fetch_add(1)) < n;) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(error_mutex);
          if (!first_error) first_error = std::current_exception();
        }
      }
    });
  for (std::thread& t : pool) t.join();
  if (first_error) std::rethrow_exception(first_error);
}

std::string read_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw config_error("cannot open config file: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

double parse_number(const std::string& key, const std::string& value) {
  char* end = nullptr;
  const double v = std::strtod(value.c_str(), &end);
  if (end == value.c_str() || *end != '\0')
    throw config_error("cannot parse number for " + key + ": " + value);
  return v;
}

void apply_override_text(SystemParams& p, const std::string& ov) {
  const auto eq = ov.find('=');
  if (eq == std::string::npos)
    throw config_error("override must look like key=value: " + ov);
  const std::string key = ov.substr(0, eq);
  apply_override(p, key, parse_number(key, ov.substr(eq + 1)),
                 UnitsConvention::angular);
}

// Params from preset/config/overrides, in that order.  Overrides are always
// angular (rad/s); config files declare their own units.
SystemParams build_params(const CommonOpts& opts) {
  SystemParams p;
  bool have_base = false;
  if (!opts.preset.empty()) {
    p = load_preset(opts.preset).params;
    have_base = true;
  }
  if (!opts.config.empty()) {
    if (have_base)
      p = params_from_config_text(read_file(opts.config), p);
    else
      p = params_from_config_text(read_file(opts.config));
    have_base = true;
  }
  if (!have_base)
    throw config_error("need --preset and/or --config to define the system");
  for (const std::string& ov : opts.overrides) apply_override_text(p, ov);
  p.validate();
  return p;
}

json params_to_json(const SystemParams& p) {
  return json{{"omega_c", p.omega_c},
              {"kappa_c", p.kappa_c},
              {"n_spins", p.n_spins},
              {"omega_s", p.omega_s},
              {"g", p.g},
              {"gamma", p.gamma},
              {"chi", p.chi},
              {"eta", p.eta},
              {"temperature", p.temperature},
              {"filter_G", p.filter_G},
              {"filter_kappa", p.filter_kappa}};
}

json state_to_json(const MeanFieldState& s) {
  return json{{"photon_number", s.photon_number},
              {"spin_photon_re", s.spin_photon.real()},
              {"spin_photon_im", s.spin_photon.imag()},
              {"inversion", s.inversion},
              {"spin_spin_re", s.spin_spin.real()},
              {"spin_spin_im", s.spin_spin.imag()}};
}

json peaks_to_json(const std::vector<SpectrumPeak>& peaks) {
  json arr = json::array();
  for (const SpectrumPeak& pk : peaks)
    arr.push_back(json{{"center_offset", pk.center_offset},
                       {"height", pk.height},
                       {"fwhm", pk.fwhm},
                       {"fwhm_hz", pk.fwhm / two_pi},
                       {"resolved", pk.resolved},
                       {"kappa_f_used", pk.kappa_f_used},
                       {"g_used", pk.g_used}});
  return arr;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

void write_spectrum_csv(const fs::path& path, const std::string& hash,
                        const SpectrumResult& spec,
                        const std::vector<std::pair<std::string, std::string>>&
                            extra_columns = {}) {
  std::vector<std::string> header{"config_hash", "units", "omega_f_offset",
                                  "value", "normalized", "kappa_f", "g_probe"};
  for (const auto& kv : extra_columns) header.insert(header.begin() + 2, kv.first);
  std::ostringstream text;
  CsvWriter csv(text, header);
  const double norm = spec.max_value > 0.0 ? spec.max_value : 1.0;
  for (const SpectrumSample& s : spec.samples) {
    std::vector<std::string> row{hash, "angular"};
    for (const auto& kv : extra_columns) row.insert(row.begin() + 2, kv.second);
    row.push_back(format_g17(s.omega_f_offset));
    row.push_back(format_g17(s.value));
    row.push_back(format_g17(s.value / norm));
    row.push_back(format_g17(s.kappa_f));
    row.push_back(format_g17(s.g_probe));
    csv.row(row);
  }
  write_text(path, text.str());
}

// Window wide enough for both hybridized peaks plus their tails.
std::pair<double, double> spectrum_window(const SystemParams& p,
                                          const MeanFieldState& steady) {
  const DerivedRates d = derive_rates(p);
  const double wide = d.lambda_s + p.kappa_c / 2.0;
  const double r = resonant_r(p, steady.inversion);
  double half = std::max(wide, std::fabs(p.omega_s - p.omega_c));
  if (r < 0.0) half = std::max(half, std::sqrt(-r));
  half *= 4.0;
  const double lo = std::min(0.0, p.omega_s - p.omega_c) - half;
  const double hi = std::max(0.0, p.omega_s - p.omega_c) + half;
  return {lo, hi};
}

// ----- single ------------------------------------------------------------

int run_single(const CommonOpts& opts) {
  const SystemParams p = build_params(opts);
  const std::string hash = config_hash_hex(p);
  fs::create_directories(opts.out);

  const SteadyStateResult steady = steady_state(p);
  if (!steady.converged) {
    std::cerr << "steady-state solve failed: " << steady.message << "\n";
    return kExitSolver;
  }

  const DerivedRates d = derive_rates(p);
  const ThresholdResult thr_exact = masing_threshold(p, ThresholdForm::exact);
  const ThresholdResult thr_large =
      masing_threshold(p, ThresholdForm::large_ensemble);
  const Regime regime = classify_regime(p, steady.state);
  const DickeNumbers dicke =
      dicke_numbers(steady.state.inversion, steady.state.spin_spin, p.n_spins);
  const PeakPair peaks = peak_frequencies_offset(p, steady.state.inversion);
  const double r = resonant_r(p, steady.state.inversion);

  const auto window = spectrum_window(p, steady.state);
  const SpectrumResult spec =
      scan_spectrum(p, steady.state, window.first, window.second);

  json out;
  out["config_hash"] = hash;
  out["units"] = "angular";
  out["params"] = params_to_json(p);
  out["derived"] = json{{"n_c_th", d.n_c_th},
                        {"n_k_th", d.n_k_th},
                        {"lambda_s", d.lambda_s},
                        {"gamma_purcell", d.gamma_purcell},
                        {"k_eet", d.k_eet},
                        {"cooperativity", d.cooperativity}};
  out["steady"] = state_to_json(steady.state);
  out["solver"] = json{{"converged", steady.converged},
                       {"newton_iterations", steady.newton_iterations},
                       {"residual", steady.residual},
                       {"integration_fallback", steady.used_integration_fallback},
                       {"message", steady.message}};
  out["analytics"] =
      json{{"threshold_exact",
            json{{"reachable", thr_exact.reachable},
                 {"eta", thr_exact.eta},
                 {"n_cooperativity", thr_exact.n_cooperativity}}},
           {"threshold_large_ensemble",
            json{{"reachable", thr_large.reachable}, {"eta", thr_large.eta}}},
           {"regime", regime_name(regime)},
           {"resonant_r", r},
           {"dicke", json{{"j", dicke.j},
                          {"m", dicke.m},
                          {"j_over_n", dicke.j / p.n_spins},
                          {"m_over_n", dicke.m / p.n_spins}}},
           {"peak_plus",
            json{{"center_offset", peaks.plus.real()},
                 {"half_width", peaks.plus.imag()}}},
           {"peak_minus",
            json{{"center_offset", peaks.minus.real()},
                 {"half_width", peaks.minus.imag()}}}};
  write_text(fs::path(opts.out) / "steady.json", out.dump(2) + "\n");

  write_spectrum_csv(fs::path(opts.out) / "spectrum.csv", hash, spec);
  json pk;
  pk["config_hash"] = hash;
  pk["units"] = "angular";
  pk["peaks"] = peaks_to_json(spec.peaks);
  write_text(fs::path(opts.out) / "peaks.json", pk.dump(2) + "\n");

  const SpectrumPeak* narrow = nullptr;
  for (const SpectrumPeak& q : spec.peaks)
    if (q.resolved && (!narrow || q.fwhm < narrow->fwhm)) narrow = &q;

  std::cout << "regime: " << regime_name(regime) << "\n";
  std::cout << "photon_number: " << format_g17(steady.state.photon_number)
            << "\n";
  std::cout << "inversion: " << format_g17(steady.state.inversion) << "\n";
  if (narrow)
    std::cout << "narrowest_peak_fwhm_rad_s: " << format_g17(narrow->fwhm)
              << " (" << format_g17(narrow->fwhm / two_pi) << " Hz)\n";
  std::cout << "outputs: " << opts.out << "\n";
  return kExitOk;
}

// ----- sweep ---------------------------------------------------------------

struct SweepAxis {
  std::string param;
  bool log = false;
  double min = 0.0;
  double max = 0.0;
  int points = 0;
};

struct SweepSpec {
  SweepAxis axis1;
  bool has_axis2 = false;
  SweepAxis axis2;
  std::vector<std::string> outputs{"photon_number", "inversion", "regime"};
};

const std::map<std::string, double SystemParams::*>& param_fields() {
  static const std::map<std::string, double SystemParams::*> fields{
      {"omega_c", &SystemParams::omega_c},
      {"kappa_c", &SystemParams::kappa_c},
      {"n_spins", &SystemParams::n_spins},
      {"omega_s", &SystemParams::omega_s},
      {"g", &SystemParams::g},
      {"gamma", &SystemParams::gamma},
      {"chi", &SystemParams::chi},
      {"eta", &SystemParams::eta},
      {"temperature", &SystemParams::temperature},
      {"filter_G", &SystemParams::filter_G},
      {"filter_kappa", &SystemParams::filter_kappa}};
  return fields;
}

// Splits a config file into the sweep block and the plain params block, so
// one file can carry both.
SweepSpec parse_sweep_config(const std::string& text, std::string& params_text,
                             bool& units_hertz) {
  SweepSpec spec;
  std::map<std::string, std::string> kv;
  std::ostringstream params;
  std::istringstream in(text);
  std::string line;
  units_hertz = false;
  while (std::getline(in, line)) {
    std::string s = line;
    const auto hashpos = s.find('#');
    if (hashpos != std::string::npos) s = s.substr(0, hashpos);
    const auto eq = s.find('=');
    std::string key;
    if (eq != std::string::npos) {
      key = s.substr(0, eq);
      key.erase(0, key.find_first_not_of(" \t"));
      key.erase(key.find_last_not_of(" \t") + 1);
    }
    if (key.rfind("sweep_", 0) == 0 || key == "outputs") {
      std::string value = s.substr(eq + 1);
      value.erase(0, value.find_first_not_of(" \t"));
      value.erase(value.find_last_not_of(" \t\r") + 1);
      kv[key] = value;
    } else {
      if (key == "units") {
        std::string value = s.substr(eq + 1);
        units_hertz = value.find("hertz") != std::string::npos;
      }
      params << line << "\n";
    }
  }
  params_text = params.str();

  auto need = [&kv](const std::string& key) {
    const auto it = kv.find(key);
    if (it == kv.end()) throw config_error("sweep: missing key " + key);
    return it->second;
  };
  auto parse_axis = [&](const std::string& suffix, SweepAxis& ax) {
    ax.param = need("sweep_param" + suffix);
    if (param_fields().find(ax.param) == param_fields().end())
      throw config_error("sweep: unknown parameter " + ax.param);
    const std::string scale = need("sweep_scale" + suffix);
    if (scale == "log")
      ax.log = true;
    else if (scale == "linear")
      ax.log = false;
    else
      throw config_error("sweep: scale must be linear or log, got " + scale);
    ax.min = parse_number("sweep_min" + suffix,
                          need("sweep_min" + suffix));
    ax.max = parse_number("sweep_max" + suffix,
                          need("sweep_max" + suffix));
    ax.points = static_cast<int>(
        parse_number("sweep_points" + suffix, need("sweep_points" + suffix)));
    if (ax.points < 2) throw config_error("sweep: need at least 2 points");
    if (ax.log && (ax.min <= 0.0 || ax.max <= 0.0))
      throw config_error("sweep: log scale needs positive bounds");
    if (!(ax.max > ax.min))
      throw config_error("sweep: need max > min");
  };
  parse_axis("1", spec.axis1);
  if (kv.count("sweep_param2")) {
    parse_axis("2", spec.axis2);
    spec.has_axis2 = true;
  }
  if (kv.count("outputs")) {
    spec.outputs.clear();
    std::istringstream os(kv["outputs"]);
    std::string item;
    while (std::getline(os, item, ',')) {
      item.erase(0, item.find_first_not_of(" \t"));
      item.erase(item.find_last_not_of(" \t") + 1);
      if (item.empty()) continue;
      static const std::vector<std::string> known{
          "photon_number", "inversion", "linewidth", "dicke", "regime"};
      if (std::find(known.begin(), known.end(), item) == known.end())
        throw config_error("sweep: unknown output " + item);
      spec.outputs.push_back(item);
    }
    if (spec.outputs.empty())
      throw config_error("sweep: outputs list is empty");
  }
  return spec;
}

std::vector<double> axis_grid(const SweepAxis& ax, bool to_angular) {
  std::vector<double> grid(ax.points);
  for (int i = 0; i < ax.points; ++i) {
    const double t = double(i) / (ax.points - 1);
    double v = ax.log ? ax.min * std::pow(ax.max / ax.min, t)
                      : ax.min + (ax.max - ax.min) * t;
    if (to_angular) v *= two_pi;
    grid[i] = v;
  }
  return grid;
}

struct SweepCell {
  SteadyStateResult ascending;
  SteadyStateResult descending;
  bool hysteresis = false;
  double linewidth = std::numeric_limits<double>::quiet_NaN();
  double linewidth_center = std::numeric_limits<double>::quiet_NaN();
};

int run_sweep(const CommonOpts& opts) {
  if (opts.config.empty()) throw config_error("sweep: --config is required");
  std::string params_text;
  bool units_hertz = false;
  const SweepSpec spec =
      parse_sweep_config(read_file(opts.config), params_text, units_hertz);

  SystemParams base;
  if (!opts.preset.empty()) {
    base = params_from_config_text(params_text, load_preset(opts.preset).params);
  } else {
    base = params_from_config_text(params_text);
  }
  for (const std::string& ov : opts.overrides) apply_override_text(base, ov);

  const bool a1_freq = units_hertz && key_is_frequency(spec.axis1.param);
  const bool a2_freq = units_hertz && key_is_frequency(spec.axis2.param);
  const std::vector<double> grid1 = axis_grid(spec.axis1, a1_freq);
  const std::vector<double> grid2 =
      spec.has_axis2 ? axis_grid(spec.axis2, a2_freq) : std::vector<double>{0.0};

  const bool want_linewidth =
      std::find(spec.outputs.begin(), spec.outputs.end(), "linewidth") !=
      spec.outputs.end();
  const bool want_dicke =
      std::find(spec.outputs.begin(), spec.outputs.end(), "dicke") !=
      spec.outputs.end();

  const int n1 = static_cast<int>(grid1.size());
  const int n2 = static_cast<int>(grid2.size());
  std::vector<SweepCell> cells(std::size_t(n1) * n2);
  auto cell = [&](int i1, int i2) -> SweepCell& {
    return cells[std::size_t(i2) * n1 + i1];
  };
  auto point_params = [&](int i1, int i2) {
    SystemParams p = base;
    p.*(param_fields().at(spec.axis1.param)) = grid1[i1];
    if (spec.has_axis2) p.*(param_fields().at(spec.axis2.param)) = grid2[i2];
    return p;
  };

  // Phase 1: steady states, warm started along axis1 in both directions.
  parallel_for(n2, worker_count(opts), [&](int i2) {
    for (int dir = 0; dir < 2; ++dir) {
      bool have_prev = false;
      MeanFieldState prev;
      for (int k = 0; k < n1; ++k) {
        const int i1 = dir == 0 ? k : n1 - 1 - k;
        const SystemParams p = point_params(i1, i2);
        SteadyStateResult res =
            have_prev ? steady_state(p, prev) : steady_state(p);
        if (res.converged) {
          prev = res.state;
          have_prev = true;
        }
        (dir == 0 ? cell(i1, i2).ascending : cell(i1, i2).descending) =
            std::move(res);
      }
    }
    for (int i1 = 0; i1 < n1; ++i1) {
      SweepCell& c = cell(i1, i2);
      if (c.ascending.converged && c.descending.converged) {
        const double na = c.ascending.state.photon_number;
        const double nd = c.descending.state.photon_number;
        c.hysteresis =
            std::fabs(na - nd) > 0.01 * std::max({na, nd, 1.0});
      }
    }
  });

  // Phase 2: optional per-point linewidth scans.
  if (want_linewidth) {
    std::vector<std::pair<int, int>> tasks;
    for (int i2 = 0; i2 < n2; ++i2)
      for (int i1 = 0; i1 < n1; ++i1)
        if (cell(i1, i2).ascending.converged) tasks.push_back({i1, i2});
    parallel_for(static_cast<int>(tasks.size()), worker_count(opts),
                 [&](int t) {
                   const auto [i1, i2] = tasks[t];
                   SweepCell& c = cell(i1, i2);
                   const SystemParams p = point_params(i1, i2);
                   const auto window = spectrum_window(p, c.ascending.state);
                   const SpectrumResult spec_res = scan_spectrum(
                       p, c.ascending.state, window.first, window.second);
                   const SpectrumPeak* narrow = nullptr;
                   for (const SpectrumPeak& q : spec_res.peaks)
                     if (q.resolved && (!narrow || q.fwhm < narrow->fwhm))
                       narrow = &q;
                   if (narrow) {
                     c.linewidth = narrow->fwhm;
                     c.linewidth_center = narrow->center_offset;
                   }
                 });
  }

  // Assemble the CSV: one row per grid point in fixed order.
  std::vector<std::string> header{"config_hash", "units", spec.axis1.param};
  if (spec.has_axis2) header.push_back(spec.axis2.param);
  header.insert(header.end(),
                {"photon_number", "spin_photon_re", "spin_photon_im",
                 "inversion", "spin_spin_re", "converged", "regime",
                 "eta_threshold", "peak_plus_center_offset",
                 "peak_plus_half_width", "peak_minus_center_offset",
                 "peak_minus_half_width", "photon_number_descending",
                 "hysteresis"});
  if (want_linewidth) {
    header.push_back("linewidth_fwhm");
    header.push_back("linewidth_center_offset");
  }
  if (want_dicke) {
    header.push_back("dicke_j");
    header.push_back("dicke_m");
  }
  std::ostringstream csv_text;
  CsvWriter csv(csv_text, header);

  int failures = 0;
  for (int i2 = 0; i2 < n2; ++i2)
    for (int i1 = 0; i1 < n1; ++i1) {
      const SweepCell& c = cell(i1, i2);
      const SystemParams p = point_params(i1, i2);
      const std::string hash = config_hash_hex(p);
      if (!c.ascending.converged) ++failures;

      const MeanFieldState& s = c.ascending.state;
      const ThresholdResult thr = masing_threshold(p, ThresholdForm::exact);
      const PeakPair pk = peak_frequencies_offset(p, s.inversion);

      std::vector<std::string> row{hash, "angular", format_g17(grid1[i1])};
      if (spec.has_axis2) row.push_back(format_g17(grid2[i2]));
      row.insert(row.end(),
                 {format_g17(s.photon_number), format_g17(s.spin_photon.real()),
                  format_g17(s.spin_photon.imag()), format_g17(s.inversion),
                  format_g17(s.spin_spin.real()),
                  c.ascending.converged ? "1" : "0",
                  regime_name(classify_regime(p, s)),
                  thr.reachable ? format_g17(thr.eta) : "unreachable",
                  format_g17(pk.plus.real()), format_g17(pk.plus.imag()),
                  format_g17(pk.minus.real()), format_g17(pk.minus.imag()),
                  format_g17(c.descending.state.photon_number),
                  c.hysteresis ? "1" : "0"});
      if (want_linewidth) {
        row.push_back(format_g17(c.linewidth));
        row.push_back(format_g17(c.linewidth_center));
      }
      if (want_dicke) {
        const DickeNumbers dk = dicke_numbers(s.inversion, s.spin_spin, p.n_spins);
        row.push_back(format_g17(dk.j));
        row.push_back(format_g17(dk.m));
      }
      csv.row(row);
    }

  fs::create_directories(opts.out);
  write_text(fs::path(opts.out) / "sweep.csv", csv_text.str());

  const int total = n1 * n2;
  std::cout << "sweep: " << total << " points, " << failures << " failed\n";
  std::cout << "outputs: " << opts.out << "\n";
  if (failures * 5 > total) return kExitSweepFailures;
  return kExitOk;
}

// ----- fig2 ----------------------------------------------------------------

int run_fig2(const CommonOpts& opts, int n_classes, double chi_inh,
             double center_offset, int eta_points, int split_central,
             double split_spread) {
  CommonOpts base_opts = opts;
  if (base_opts.preset.empty() && base_opts.config.empty())
    base_opts.preset = "breeze2018";
  SystemParams base = build_params(base_opts);
  if (opts.preset.empty() && opts.config.empty()) {
    // Reference configuration: the strong-ensemble preset cooled to the
    // dilution-refrigerator regime.
    base.temperature = 0.025;
  }

  fs::create_directories(opts.out);
  const std::string hash = config_hash_hex(base);

  std::vector<double> etas(eta_points);
  for (int i = 0; i < eta_points; ++i)
    etas[i] = base.gamma *
              std::pow(10.0, -3.0 + 8.0 * double(i) /
                                        std::max(1, eta_points - 1));

  // Steady states warm started up the pump ladder.
  std::vector<SubEnsembleModel> models;
  std::vector<SubEnsembleSteadyResult> steads(etas.size());
  for (std::size_t k = 0; k < etas.size(); ++k) {
    SystemParams p = base;
    p.eta = etas[k];
    models.push_back(discretize_gaussian(p, chi_inh, n_classes,
                                         p.omega_s + center_offset));
  }
  for (std::size_t k = 0; k < etas.size(); ++k) {
    steads[k] = k > 0 && steads[k - 1].converged
                    ? steady_state_subensembles(models[k], steads[k - 1].state)
                    : steady_state_subensembles(models[k]);
    if (!steads[k].converged)
      std::cerr << "fig2: eta = " << format_g17(etas[k])
                << " failed: " << steads[k].message << "\n";
  }

  const double collective =
      base.g * std::sqrt(std::max(1.0, base.n_spins));
  const double half = 4.0 * std::max({chi_inh, collective, base.kappa_c});

  std::vector<SpectrumResult> spectra(etas.size());
  parallel_for(static_cast<int>(etas.size()), worker_count(opts), [&](int k) {
    if (!steads[k].converged) return;
    spectra[k] =
        scan_spectrum_subensemble(models[k], steads[k].state, -half, half);
  });

  json summary;
  summary["config_hash"] = hash;
  summary["units"] = "angular";
  summary["chi_inh"] = chi_inh;
  summary["n_classes"] = n_classes;
  summary["center_offset"] = center_offset;
  summary["rows"] = json::array();

  int failures = 0;
  for (std::size_t k = 0; k < etas.size(); ++k) {
    if (!steads[k].converged) {
      ++failures;
      continue;
    }
    char name[64];
    std::snprintf(name, sizeof name, "spectrum_eta_%02zu.csv", k);
    write_spectrum_csv(fs::path(opts.out) / name, hash, spectra[k],
                       {{"eta", format_g17(etas[k])}});

    const SpectrumPeak* narrow = nullptr;
    for (const SpectrumPeak& q : spectra[k].peaks)
      if (q.resolved && (!narrow || q.fwhm < narrow->fwhm)) narrow = &q;

    json row;
    row["eta"] = etas[k];
    row["eta_over_gamma"] = etas[k] / base.gamma;
    row["photon_number"] = steads[k].state.photon_number;
    row["n_peaks"] = spectra[k].peaks.size();
    row["peaks"] = peaks_to_json(spectra[k].peaks);
    if (narrow) {
      row["narrow_fwhm"] = narrow->fwhm;
      row["narrow_fwhm_hz"] = narrow->fwhm / two_pi;
      row["narrow_center_offset"] = narrow->center_offset;
    }
    json dicke = json::array();
    for (const ClassDicke& cd : dicke_per_class(steads[k].state, models[k]))
      dicke.push_back(json{{"omega_offset", cd.omega - base.omega_c},
                           {"count", cd.count},
                           {"j", cd.dicke.j},
                           {"m", cd.dicke.m},
                           {"m_over_count", cd.dicke.m / cd.count}});
    row["dicke_per_class"] = dicke;
    summary["rows"].push_back(row);
  }

  // Optional robustness study: substructure inside the central class.
  if (split_central > 1) {
    const std::size_t k = etas.size() - 1;
    if (steads[k].converged) {
      const SubEnsembleModel split =
          split_central_class(models[k], split_central, split_spread);
      const SubEnsembleSteadyResult split_steady =
          steady_state_subensembles(split);
      if (split_steady.converged) {
        const SpectrumResult spec = scan_spectrum_subensemble(
            split, split_steady.state, -half, half);
        write_spectrum_csv(fs::path(opts.out) / "spectrum_split.csv", hash,
                           spec, {{"eta", format_g17(etas[k])}});
        summary["split_study"] =
            json{{"n_sub", split_central},
                 {"spread", split_spread},
                 {"photon_number", split_steady.state.photon_number},
                 {"peaks", peaks_to_json(spec.peaks)}};
      } else {
        summary["split_study"] = json{{"error", split_steady.message}};
      }
    }
  }

  write_text(fs::path(opts.out) / "fig2_summary.json", summary.dump(2) + "\n");
  std::cout << "fig2: " << etas.size() - failures << "/" << etas.size()
            << " pump values converged\n";
  std::cout << "outputs: " << opts.out << "\n";
  return failures == 0 ? kExitOk : kExitSolver;
}

// ----- presets ---------------------------------------------------------------

int run_presets() {
  std::printf("%-12s %10s %10s %9s %8s %9s %9s %7s %-7s %s\n", "name",
              "omega_c/2pi", "kappa_c/2pi", "n_spins", "g/2pi", "chi/2pi",
              "gamma", "T", "regime", "notes");
  for (const ExperimentPreset& pr : preset_catalog()) {
    const SystemParams& p = pr.params;
    std::string notes;
    if (pr.chi_assumed) notes += "chi assumed; ";
    if (pr.gamma_assumed) notes += "gamma assumed; ";
    if (!pr.ref_consistent) notes += "published figures inconsistent; ";
    std::printf("%-12s %10.4g %10.4g %9.3g %8.3g %9.4g %9.3g %7.3g %-7s %s\n",
                pr.name.c_str(), p.omega_c / two_pi, p.kappa_c / two_pi,
                p.n_spins, p.g / two_pi, p.chi / two_pi, p.gamma,
                p.temperature,
                pr.regime == CouplingRegime::strong ? "strong" : "weak",
                notes.c_str());
  }
  return kExitOk;
}

// ----- oracle-check ----------------------------------------------------------

json comparison_to_json(const MomentComparison& cmp) {
  json entries = json::array();
  for (const auto& e : cmp.entries)
    entries.push_back(json{{"name", e.name},
                           {"scale", e.scale},
                           {"max_abs_diff", e.max_abs_diff},
                           {"final_abs_diff", e.final_abs_diff},
                           {"max_rel_diff", e.max_rel_diff}});
  return json{{"horizon", cmp.horizon},
              {"entries", entries},
              {"linear_growth_flag", cmp.linear_growth_flag},
              {"note", cmp.note}};
}

int run_oracle_check(const CommonOpts& opts) {
  fs::create_directories(opts.out);
  json report;
  bool hard_failure = false;

  // Decoupled ensemble: with g = 0 the moment equations are exact, so any
  // disagreement is integration error.
  {
    ExactModel m;
    m.params.omega_c = two_pi * 9.22e9;
    m.params.omega_s = m.params.omega_c;
    m.params.kappa_c = 2.0;
    m.params.g = 0.0;
    m.params.gamma = 1.0;
    m.params.chi = 0.7;
    m.params.eta = 0.4;
    m.params.temperature = 0.3;
    m.n_spins = 2;
    m.fock_cutoff = 14;
    try {
      const MomentComparison cmp = compare_meanfield(m, 5.0 / m.params.kappa_c);
      report["decoupled"] = comparison_to_json(cmp);
      double worst = 0.0;
      for (const auto& e : cmp.entries) worst = std::max(worst, e.max_rel_diff);
      report["decoupled"]["pass"] = worst < 1e-5;
      if (!(worst < 1e-5)) hard_failure = true;
    } catch (const std::exception& err) {
      report["decoupled"] = json{{"error", err.what()}};
      hard_failure = true;
    }
  }

  // Two spins with strong dephasing and weak pump: the second-order closure
  // should track the exact solution to a few percent.
  {
    ExactModel m;
    m.params.omega_c = two_pi * 9.22e9;
    m.params.omega_s = m.params.omega_c;
    m.params.kappa_c = 20.0;
    m.params.g = 2.0;
    m.params.gamma = 1.0;
    m.params.chi = 50.0;
    m.params.eta = 0.5;
    m.params.temperature = 0.0;
    m.n_spins = 2;
    m.fock_cutoff = 8;
    try {
      const MomentComparison cmp = compare_meanfield(m, 5.0 / m.params.kappa_c);
      report["closure"] = comparison_to_json(cmp);
      double worst = 0.0;
      for (const auto& e : cmp.entries) worst = std::max(worst, e.max_rel_diff);
      report["closure"]["pass"] = worst < 0.10 && !cmp.linear_growth_flag;
    } catch (const std::exception& err) {
      report["closure"] = json{{"error", err.what()}};
      hard_failure = true;
    }
  }

  write_text(fs::path(opts.out) / "oracle_report.json", report.dump(2) + "\n");
  std::cout << report.dump(2) << "\n";
  return hard_failure ? kExitSolver : kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"incoherently pumped spin-ensemble maser: steady states, "
               "spectra and diagnostics"};
  app.require_subcommand(1);

  CommonOpts single_opts, sweep_opts, fig2_opts, oracle_opts;
  int fig2_classes = 50;
  double fig2_chi_inh = 4e6;
  double fig2_center_offset = 0.0;
  int fig2_eta_points = 9;
  int fig2_split = 0;
  double fig2_spread = 0.0;

  CLI::App* c_single = app.add_subcommand(
      "single", "steady state, spectrum and analytics for one configuration");
  add_common(c_single, single_opts);

  CLI::App* c_sweep = app.add_subcommand(
      "sweep", "1D/2D parameter sweep with analytic overlay columns");
  add_common(c_sweep, sweep_opts);

  CLI::App* c_fig2 = app.add_subcommand(
      "fig2", "emission spectra of a Gaussian-broadened ensemble across pump "
              "rates");
  add_common(c_fig2, fig2_opts);
  c_fig2->add_option("--classes", fig2_classes, "number of frequency classes");
  c_fig2->add_option("--chi-inh", fig2_chi_inh,
                     "inhomogeneous FWHM, rad/s (angular)");
  c_fig2->add_option("--center-offset", fig2_center_offset,
                     "Gaussian center minus omega_s, rad/s");
  c_fig2->add_option("--eta-points", fig2_eta_points,
                     "pump values, log spaced over 1e-3..1e5 gamma");
  c_fig2->add_option("--split-central", fig2_split,
                     "split the central class into this many sub-classes");
  c_fig2->add_option("--split-spread", fig2_spread,
                     "frequency spread of the split, rad/s");

  app.add_subcommand("presets", "list the bundled experiment presets");

  CLI::App* c_oracle = app.add_subcommand(
      "oracle-check", "compare the moment equations against the exact "
                      "master equation on bundled fixtures");
  add_common(c_oracle, oracle_opts);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitConfig;
  }

  try {
    if (c_single->parsed()) return run_single(single_opts);
    if (c_sweep->parsed()) return run_sweep(sweep_opts);
    if (c_fig2->parsed())
      return run_fig2(fig2_opts, fig2_classes, fig2_chi_inh,
                      fig2_center_offset, fig2_eta_points, fig2_split,
                      fig2_spread);
    if (app.get_subcommand("presets")->parsed()) return run_presets();
    if (c_oracle->parsed()) return run_oracle_check(oracle_opts);
  } catch (const config_error& err) {
    std::cerr << "config error: " << err.what() << "\n";
    return kExitConfig;
  } catch (const std::invalid_argument& err) {
    std::cerr << "config error: " << err.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& err) {
    std::cerr << "error: " << err.what() << "\n";
    return kExitSolver;
  }
  return kExitOk;
}
