// emlab: command-line front end for the emitter photophysics workbench.

#include <chrono>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "emlab/correlate.hpp"
#include "emlab/emitter_sim.hpp"
#include "emlab/errors.hpp"
#include "emlab/fit.hpp"
#include "emlab/json_io.hpp"
#include "emlab/lineshape.hpp"
#include "emlab/manifest.hpp"
#include "emlab/pipeline.hpp"
#include "emlab/plmap.hpp"
#include "emlab/spectro.hpp"
#include "emlab/spectrum.hpp"
#include "emlab/timetag.hpp"

namespace fs = std::filesystem;
using namespace emlab;

namespace {

constexpr const char* kOutDirEnv = "EMLAB_OUT_DIR";

struct Globals {
  std::optional<std::uint64_t> seed;
  unsigned threads = 1;
};

// Relative output paths land in $EMLAB_OUT_DIR when it is set.
fs::path output_path(const std::string& p) {
  fs::path path(p);
  if (path.is_absolute()) return path;
  if (const char* dir = std::getenv(kOutDirEnv); dir && *dir) return fs::path(dir) / path;
  return path;
}

void ensure_parent(const fs::path& p) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
}

bool is_csv(const fs::path& p) { return p.extension() == ".csv"; }

TimeTagStream read_timetags(const fs::path& p, std::uint64_t rep_period_ps) {
  if (is_csv(p)) {
    std::ifstream in(p);
    if (!in) throw FormatError("cannot read " + p.string());
    AcquisitionMeta meta;
    meta.repetition_period_ps = rep_period_ps;
    return read_csv(in, meta);
  }
  return read_binary(p);
}

void write_timetags(const TimeTagStream& s, const fs::path& p) {
  ensure_parent(p);
  if (is_csv(p)) {
    std::ofstream out(p);
    write_csv(s, out);
    if (!out) throw FormatError("cannot write " + p.string());
  } else {
    write_binary(s, p);
  }
}

Spectrum read_spectrum(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw FormatError("cannot read " + p.string());
  return read_spectrum_csv(in);
}

void write_spectrum(const Spectrum& s, const fs::path& p) {
  ensure_parent(p);
  std::ofstream out(p);
  write_csv(s, out);
  if (!out) throw FormatError("cannot write " + p.string());
}

// Emits JSON to a file (returned for the manifest) or to stdout.
std::optional<fs::path> emit_json(const Json& j, const std::string& out) {
  if (out.empty()) {
    std::cout << j.dump(2) << "\n";
    return std::nullopt;
  }
  const auto p = output_path(out);
  ensure_parent(p);
  write_text(p, j.dump(2) + "\n");
  return p;
}

// Numeric rows of a CSV with a header line.
std::vector<std::vector<double>> read_numeric_csv(const fs::path& p, std::size_t min_cols) {
  std::ifstream in(p);
  if (!in) throw FormatError("cannot read " + p.string());
  std::string line;
  if (!std::getline(in, line)) throw FormatError(p.string() + ": empty file");
  std::vector<std::vector<double>> rows;
  while (std::getline(in, line)) {
    if (line.empty() || line == "\r") continue;
    std::vector<double> row;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
      try {
        row.push_back(std::stod(cell));
      } catch (const std::exception&) {
        throw FormatError(p.string() + ": not a number: '" + cell + "'");
      }
    }
    if (row.size() < min_cols) throw FormatError(p.string() + ": expected at least " + std::to_string(min_cols) + " columns");
    rows.push_back(std::move(row));
  }
  return rows;
}

// Writes a manifest next to the primary output.
void finish_manifest(RunManifest& m, const std::vector<fs::path>& outputs, const Json& params,
                     std::chrono::steady_clock::time_point start) {
  if (outputs.empty()) return;
  m.parameters_json = params.dump();
  for (const auto& o : outputs) m.add_output(o);
  m.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  m.write(fs::path(outputs.front().string() + ".manifest.json"));
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"emlab: single-photon emitter photophysics workbench"};
  app.require_subcommand(1);
  app.fallthrough();
  app.set_version_flag("--version", kToolVersion);
  Globals g;
  app.add_option("--seed", g.seed, "Global RNG seed for stochastic subcommands");
  app.add_option("--threads", g.threads, "Worker threads (results do not depend on it)")->check(CLI::PositiveNumber);
  app.footer(std::string("Relative output paths are resolved against $") + kOutDirEnv + " when it is set.");

  const auto start = std::chrono::steady_clock::now();
  std::function<void()> action;

  // --- simulate ------------------------------------------------------------
  auto* sim = app.add_subcommand("simulate", "Monte Carlo time-tag stream of identical emitters");
  EmitterModel em;
  AcquisitionConfig acq;
  std::size_t n_emitters = 1;
  bool hbt = false;
  double transmittance = 0.5;
  std::string sim_out;
  sim->add_option("--emitters", n_emitters, "Number of identical emitters")->capture_default_str();
  sim->add_option("--lifetime-ns", em.lifetime_ns, "Excited-state lifetime")->capture_default_str();
  sim->add_option("--p-max", em.p_max, "Peak excitation probability per pulse")->capture_default_str();
  sim->add_option("--p-sat-uw", em.p_sat_uw, "Saturation power")->capture_default_str();
  sim->add_option("--efficiency", em.efficiency, "Detection efficiency")->capture_default_str();
  sim->add_option("--rep-rate-mhz", acq.rep_rate_mhz, "Laser repetition rate")->capture_default_str();
  sim->add_option("--power-uw", acq.power_uw, "Excitation power")->capture_default_str();
  sim->add_option("--duration-s", acq.duration_s, "Acquisition time")->capture_default_str();
  sim->add_option("--irf-sigma-ps", acq.irf_sigma_ps, "Gaussian IRF standard deviation")->capture_default_str();
  sim->add_option("--dark-hz", acq.dark_rate_hz, "Detector dark count rate")->capture_default_str();
  sim->add_option("--background-hz", acq.background_rate_hz, "Uncorrelated background rate")->capture_default_str();
  sim->add_flag("--hbt", hbt, "Split onto two detectors through a beamsplitter");
  sim->add_option("--transmittance", transmittance, "Beamsplitter transmittance for --hbt")->capture_default_str();
  sim->add_option("--out", sim_out, "Output time-tag file (.csv for text, binary otherwise)")->required();
  sim->callback([&] {
    action = [&] {
      acq.seed = g.seed.value_or(1);
      acq.threads = g.threads;
      const std::vector<EmitterModel> models(n_emitters, em);
      const auto stream = hbt ? simulate_hbt(models, acq, transmittance) : simulate_stream(models, acq);
      const auto out = output_path(sim_out);
      write_timetags(stream, out);
      RunManifest m;
      m.subcommand = "simulate";
      m.seed = acq.seed;
      Json params = {{"emitters", n_emitters},      {"lifetime_ns", em.lifetime_ns}, {"p_max", em.p_max},
                     {"p_sat_uw", em.p_sat_uw},     {"efficiency", em.efficiency},   {"rep_rate_mhz", acq.rep_rate_mhz},
                     {"power_uw", acq.power_uw},    {"duration_s", acq.duration_s},  {"irf_sigma_ps", acq.irf_sigma_ps},
                     {"dark_hz", acq.dark_rate_hz}, {"background_hz", acq.background_rate_hz},
                     {"hbt", hbt},                  {"transmittance", transmittance}};
      finish_manifest(m, {out}, params, start);
      std::cerr << "wrote " << stream.size() << " tags to " << out.string() << "\n";
    };
  });

  // --- correlate -----------------------------------------------------------
  auto* cor = app.add_subcommand("correlate", "Coincidence histogram and pulsed g2(0) of a two-channel stream");
  std::string cor_in, cor_json, cor_csv;
  std::int64_t cor_bin = 256;
  int cor_periods = 10, cor_side = 10;
  std::uint64_t cor_period = 50'000;
  cor->add_option("--in", cor_in, "Time-tag file (.csv or binary)")->required()->check(CLI::ExistingFile);
  cor->add_option("--bin-ps", cor_bin, "Histogram bin width")->capture_default_str()->check(CLI::PositiveNumber);
  cor->add_option("--window-periods", cor_periods, "Half window in repetition periods")->capture_default_str();
  cor->add_option("--side-peaks", cor_side, "Side peaks on each side used for normalization")->capture_default_str();
  cor->add_option("--rep-period-ps", cor_period, "Repetition period for CSV input")->capture_default_str();
  cor->add_option("--out-json", cor_json, "G2 result JSON (stdout if omitted)");
  cor->add_option("--out-csv", cor_csv, "Histogram CSV (delay_ps,counts)");
  cor->callback([&] {
    action = [&] {
      const auto s = read_timetags(cor_in, cor_period);
      const auto window = window_for_side_peaks(s.meta().repetition_period_ps, cor_periods, cor_bin);
      const auto h = correlation_histogram(s.channel(0), s.channel(1), cor_bin, window, g.threads);
      std::vector<fs::path> outs;
      Json result = to_json(g2_zero_pulsed(h, cor_side));
      result["tags"] = s.size();
      result["bin_ps"] = cor_bin;
      result["window_ps"] = window;
      if (!cor_csv.empty()) {
        const auto p = output_path(cor_csv);
        ensure_parent(p);
        std::ofstream out(p);
        write_histogram_csv(h, out);
        outs.push_back(p);
      }
      if (auto p = emit_json(result, cor_json)) outs.insert(outs.begin(), *p);
      RunManifest m;
      m.subcommand = "correlate";
      m.add_input(cor_in);
      finish_manifest(m, outs, {{"in", cor_in}, {"bin_ps", cor_bin}, {"window_periods", cor_periods}, {"side_peaks", cor_side}}, start);
    };
  });

  // --- fit-lifetime --------------------------------------------------------
  auto* flt = app.add_subcommand("fit-lifetime", "Fit the fluorescence decay");
  std::string flt_in, flt_out, flt_mode = "convolved";
  double flt_irf = 100.0;
  std::int64_t flt_bin = 100;
  std::uint64_t flt_phase = 5000, flt_period = 50'000;
  flt->add_option("--in", flt_in, "Decay CSV (time_ps,counts) or time-tag file (.ett/.bin)")->required()->check(CLI::ExistingFile);
  flt->add_option("--irf-sigma-ps", flt_irf, "Gaussian IRF standard deviation")->capture_default_str();
  flt->add_option("--mode", flt_mode, "convolved or tail")->capture_default_str()->check(CLI::IsMember({"convolved", "tail"}));
  flt->add_option("--bin-ps", flt_bin, "Decay bin width for time-tag input")->capture_default_str();
  flt->add_option("--phase-offset-ps", flt_phase, "Shift applied before folding time tags")->capture_default_str();
  flt->add_option("--rep-period-ps", flt_period, "Repetition period for CSV time tags")->capture_default_str();
  flt->add_option("--out", flt_out, "FitResult JSON (stdout if omitted)");
  flt->callback([&] {
    action = [&] {
      DecayHistogram h;
      std::string header;
      {
        std::ifstream probe(flt_in);
        std::getline(probe, header);
      }
      if (header.rfind("t_ps", 0) == 0 || !is_csv(flt_in)) {
        h = decay_histogram(read_timetags(flt_in, flt_period), flt_bin, flt_phase);
      } else {
        std::ifstream in(flt_in);
        h = read_decay_csv(in);
      }
      const auto mode = flt_mode == "tail" ? LifetimeMode::Tail : LifetimeMode::Convolved;
      const auto r = fit_lifetime(h, flt_irf, mode);
      RunManifest m;
      m.subcommand = "fit-lifetime";
      m.add_input(flt_in);
      std::vector<fs::path> outs;
      if (auto p = emit_json(to_json(r), flt_out)) outs.push_back(*p);
      finish_manifest(m, outs, {{"in", flt_in}, {"irf_sigma_ps", flt_irf}, {"mode", flt_mode}}, start);
    };
  });

  // --- fit-saturation ------------------------------------------------------
  auto* fsat = app.add_subcommand("fit-saturation", "Fit I(P) = I_sat P / (P + P_sat) + I_d");
  std::string fsat_in, fsat_out;
  fsat->add_option("--in", fsat_in, "CSV power_uw,rate_hz[,weight]")->required()->check(CLI::ExistingFile);
  fsat->add_option("--out", fsat_out, "FitResult JSON (stdout if omitted)");
  fsat->callback([&] {
    action = [&] {
      std::vector<SaturationPoint> pts;
      std::vector<double> w;
      const auto rows = read_numeric_csv(fsat_in, 2);
      for (const auto& r : rows) {
        pts.push_back({r[0], r[1]});
        if (r.size() > 2) w.push_back(r[2]);
      }
      if (!w.empty() && w.size() != pts.size()) throw FormatError("fit-saturation: weight column incomplete");
      const auto r = fit_saturation(pts, w);
      RunManifest m;
      m.subcommand = "fit-saturation";
      m.add_input(fsat_in);
      std::vector<fs::path> outs;
      if (auto p = emit_json(to_json(r), fsat_out)) outs.push_back(*p);
      finish_manifest(m, outs, {{"in", fsat_in}}, start);
    };
  });

  // --- fit-spectrum --------------------------------------------------------
  auto* fsp = app.add_subcommand("fit-spectrum", "Fit a Gaussian peak to a spectrum");
  std::string fsp_in, fsp_out;
  fsp->add_option("--in", fsp_in, "Spectrum CSV (wavelength_nm or energy_ev, intensity)")->required()->check(CLI::ExistingFile);
  fsp->add_option("--out", fsp_out, "FitResult JSON (stdout if omitted)");
  fsp->callback([&] {
    action = [&] {
      const auto r = fit_gaussian_peak(read_spectrum(fsp_in));
      RunManifest m;
      m.subcommand = "fit-spectrum";
      m.add_input(fsp_in);
      std::vector<fs::path> outs;
      if (auto p = emit_json(to_json(r), fsp_out)) outs.push_back(*p);
      finish_manifest(m, outs, {{"in", fsp_in}}, start);
    };
  });

  // --- plmap-render --------------------------------------------------------
  auto* pr = app.add_subcommand("plmap-render", "Render a Poisson PL map from point sources");
  std::string pr_in, pr_out, pr_format = "csv";
  MapGrid grid;
  PSFModel psf;
  double pr_exposure = 1.0, pr_bg = 0.0, pr_wavelength = 530.0;
  pr->add_option("--sources", pr_in, "CSV x_um,y_um,rate_hz")->required()->check(CLI::ExistingFile);
  pr->add_option("--nx", grid.nx, "Pixels along x")->capture_default_str();
  pr->add_option("--ny", grid.ny, "Pixels along y")->capture_default_str();
  pr->add_option("--pixel-um", grid.pixel_size_um, "Pixel size")->capture_default_str();
  pr->add_option("--origin-x-um", grid.origin_um.x, "Centre of pixel (0, 0)")->capture_default_str();
  pr->add_option("--origin-y-um", grid.origin_um.y, "Centre of pixel (0, 0)")->capture_default_str();
  pr->add_option("--psf-fwhm-um", psf.fwhm_um, "Gaussian PSF FWHM")->capture_default_str();
  pr->add_option("--exposure-s", pr_exposure, "Exposure")->capture_default_str();
  pr->add_option("--background-hz", pr_bg, "Background per pixel")->capture_default_str();
  pr->add_option("--excitation-nm", pr_wavelength, "Excitation wavelength recorded in the sidecar")->capture_default_str();
  pr->add_option("--format", pr_format, "csv or f32")->capture_default_str()->check(CLI::IsMember({"csv", "f32"}));
  pr->add_option("--out", pr_out, "Output raster (sidecar written to <out>.json)")->required();
  pr->callback([&] {
    action = [&] {
      std::vector<MapSource> sources;
      for (const auto& r : read_numeric_csv(pr_in, 3)) sources.push_back({{r[0], r[1]}, r[2]});
      const auto seed = g.seed.value_or(1);
      auto map = render_plmap(sources, psf, grid, pr_exposure, seed, pr_bg, g.threads);
      map.excitation_wavelength_nm = pr_wavelength;
      const auto out = output_path(pr_out);
      ensure_parent(out);
      write_plmap(map, out, pr_format == "f32" ? RasterFormat::Float32 : RasterFormat::Csv);
      RunManifest m;
      m.subcommand = "plmap-render";
      m.seed = seed;
      m.add_input(pr_in);
      finish_manifest(m, {out, fs::path(out.string() + ".json")},
                      {{"sources", pr_in}, {"nx", grid.nx}, {"ny", grid.ny}, {"pixel_um", grid.pixel_size_um},
                       {"psf_fwhm_um", psf.fwhm_um}, {"exposure_s", pr_exposure}, {"background_hz", pr_bg},
                       {"format", pr_format}},
                      start);
    };
  });

  // --- plmap-detect --------------------------------------------------------
  auto* pd = app.add_subcommand("plmap-detect", "Detect emitters in a PL map and integrate their spots");
  std::string pd_in, pd_out, pd_records;
  DetectOptions dopt;
  double pd_box = 3.0, pd_exposure = 1.0;
  pd->add_option("--in", pd_in, "PL map raster with JSON sidecar")->required()->check(CLI::ExistingFile);
  pd->add_option("--threshold-sigma", dopt.threshold_sigma, "Detection threshold above background")->capture_default_str();
  pd->add_option("--psf-fwhm-um", dopt.psf_fwhm_um, "PSF FWHM")->capture_default_str();
  pd->add_option("--psf-consistency", dopt.psf_consistency, "Required neighbour fraction of the PSF")->capture_default_str();
  pd->add_option("--box-fwhm", pd_box, "Integration box side in PSF FWHM")->capture_default_str();
  pd->add_option("--exposure-s", pd_exposure, "Exposure used to convert counts to Hz")->capture_default_str();
  pd->add_option("--out", pd_out, "Detections CSV")->required();
  pd->add_option("--records", pd_records, "Also write an emitter records CSV with brightness");
  pd->callback([&] {
    action = [&] {
      const auto map = read_plmap(pd_in);
      const auto det = detect_emitters(map, dopt);
      std::ostringstream csv;
      csv << "x_um,y_um,peak_counts,brightness_counts,blended\n";
      std::vector<EmitterRecord> records;
      for (const auto& d : det) {
        EmitterRecord rec;
        rec.position_um = d.position_um;
        std::string bright = "", blended = "";
        try {
          const auto s = integrate_spot(map, d.position_um, pd_box * dopt.psf_fwhm_um, det);
          bright = format_number(s.brightness_counts);
          blended = s.blended ? "1" : "0";
          rec.brightness_hz = std::max(0.0, s.brightness_counts) / pd_exposure;
        } catch (const OutOfBounds&) {
        }
        csv << format_number(d.position_um.x) << ',' << format_number(d.position_um.y) << ','
            << format_number(d.peak_counts) << ',' << bright << ',' << blended << '\n';
        records.push_back(rec);
      }
      const auto out = output_path(pd_out);
      ensure_parent(out);
      write_text(out, csv.str());
      std::vector<fs::path> outs{out};
      if (!pd_records.empty()) {
        const auto rp = output_path(pd_records);
        ensure_parent(rp);
        std::ofstream rs(rp);
        write_records_csv(records, rs);
        rs.close();
        outs.push_back(rp);
      }
      RunManifest m;
      m.subcommand = "plmap-detect";
      m.add_input(pd_in);
      finish_manifest(m, outs,
                      {{"in", pd_in}, {"threshold_sigma", dopt.threshold_sigma}, {"psf_fwhm_um", dopt.psf_fwhm_um},
                       {"box_fwhm", pd_box}},
                      start);
      std::cerr << det.size() << " detections\n";
    };
  });

  // --- plmap-stats ---------------------------------------------------------
  auto* ps = app.add_subcommand("plmap-stats", "Histogram, mean and spread of one quantity over emitter records");
  std::string ps_in, ps_out, ps_quantity = "lifetime_ns";
  std::vector<double> ps_edges;
  std::size_t ps_bins = 20;
  ps->add_option("--in", ps_in, "Records CSV")->required()->check(CLI::ExistingFile);
  ps->add_option("--quantity", ps_quantity, "g2_zero, lifetime_ns, brightness_hz, peak_wavelength_nm or fwhm_nm")
      ->capture_default_str();
  ps->add_option("--edges", ps_edges, "Explicit bin edges (comma separated)")->delimiter(',');
  ps->add_option("--bins", ps_bins, "Number of equal bins over the data range")->capture_default_str()->check(CLI::PositiveNumber);
  ps->add_option("--out", ps_out, "EnsembleStats JSON (stdout if omitted)");
  ps->callback([&] {
    action = [&] {
      std::ifstream in(ps_in);
      const auto records = read_records_csv(in);
      const auto q = quantity_from_string(ps_quantity);
      auto edges = ps_edges;
      if (edges.empty()) {
        // equal bins over the values that survive the selection
        double lo = 1e300, hi = -1e300;
        for (const auto& r : records) {
          std::optional<double> v;
          switch (q) {
            case Quantity::G2Zero: v = r.g2_zero; break;
            case Quantity::Lifetime: v = (r.g2_zero && *r.g2_zero <= 0.5) ? r.lifetime_ns : std::nullopt; break;
            case Quantity::Brightness: v = r.brightness_hz; break;
            case Quantity::PeakWavelength: v = r.peak_wavelength_nm; break;
            case Quantity::Fwhm: v = r.fwhm_nm; break;
          }
          if (v) lo = std::min(lo, *v), hi = std::max(hi, *v);
        }
        if (lo > hi) lo = 0.0, hi = 1.0;
        if (hi <= lo) lo -= 0.5, hi += 0.5;
        for (std::size_t i = 0; i <= ps_bins; ++i)
          edges.push_back(lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(std::max<std::size_t>(ps_bins, 1)));
      }
      const auto stats = aggregate_stats(records, q, edges);
      const Json j{{"quantity", ps_quantity}, {"n", stats.n}, {"mean", stats.mean}, {"stddev", stats.stddev},
               {"edges", stats.edges}, {"counts", stats.counts}};
      RunManifest m;
      m.subcommand = "plmap-stats";
      m.add_input(ps_in);
      std::vector<fs::path> outs;
      if (auto p = emit_json(j, ps_out)) outs.push_back(*p);
      finish_manifest(m, outs, {{"in", ps_in}, {"quantity", ps_quantity}, {"edges", edges}}, start);
    };
  });

  // --- convert -------------------------------------------------------------
  auto* cv = app.add_subcommand("convert", "Wavelength <-> energy conversion of a value or a spectrum");
  std::optional<double> cv_value;
  std::string cv_in, cv_out, cv_to;
  bool cv_jacobian = false;
  cv->add_option("--value", cv_value, "Single value (nm or eV)");
  cv->add_option("--in", cv_in, "Spectrum CSV")->check(CLI::ExistingFile);
  cv->add_option("--to", cv_to, "Target unit: ev or nm")->required()->check(CLI::IsMember({"ev", "nm"}));
  cv->add_flag("--jacobian", cv_jacobian, "Reweight intensities so the integral is preserved");
  cv->add_option("--out", cv_out, "Converted spectrum CSV (stdout if omitted)");
  cv->callback([&] {
    action = [&] {
      if (cv_value.has_value() == !cv_in.empty()) throw ConfigError("convert: give exactly one of --value and --in");
      if (cv_value) {
        const auto dir = cv_to == "ev" ? ConvertDirection::NanometerToElectronVolt : ConvertDirection::ElectronVoltToNanometer;
        std::cout << format_number(wavelength_energy_convert(*cv_value, dir)) << "\n";
        return;
      }
      const auto mode = cv_jacobian ? Reweighting::Jacobian : Reweighting::None;
      const auto in = read_spectrum(cv_in);
      const auto s = cv_to == "ev" ? to_energy_axis(in, mode) : to_wavelength_axis(in, mode);
      if (cv_out.empty()) {
        write_csv(s, std::cout);
        return;
      }
      const auto out = output_path(cv_out);
      write_spectrum(s, out);
      RunManifest m;
      m.subcommand = "convert";
      m.add_input(cv_in);
      finish_manifest(m, {out}, {{"in", cv_in}, {"to", cv_to}, {"jacobian", cv_jacobian}}, start);
    };
  });

  // --- raman ---------------------------------------------------------------
  auto* rm = app.add_subcommand("raman", "Wavelength of a Stokes Raman line");
  double rm_exc = 530.0, rm_shift = 1360.0;
  rm->add_option("--excitation-nm", rm_exc, "Excitation wavelength")->capture_default_str();
  rm->add_option("--shift-cm", rm_shift, "Raman shift in cm^-1")->capture_default_str();
  rm->callback([&] {
    action = [&] { std::cout << format_number(raman_shifted_wavelength(rm_exc, rm_shift)) << "\n"; };
  });

  // --- mirror --------------------------------------------------------------
  auto* mi = app.add_subcommand("mirror", "Mirror a spectrum about the zero-phonon line on the energy axis");
  std::string mi_in, mi_out;
  std::optional<double> mi_ev, mi_nm;
  mi->add_option("--in", mi_in, "Spectrum CSV")->required()->check(CLI::ExistingFile);
  mi->add_option("--zpl-ev", mi_ev, "Zero-phonon line energy");
  mi->add_option("--zpl-nm", mi_nm, "Zero-phonon line wavelength");
  mi->add_option("--out", mi_out, "Mirrored spectrum CSV (stdout if omitted)");
  mi->callback([&] {
    action = [&] {
      if (mi_ev.has_value() == mi_nm.has_value()) throw ConfigError("mirror: give exactly one of --zpl-ev and --zpl-nm");
      const double zpl = mi_ev ? *mi_ev : wavelength_energy_convert(*mi_nm, ConvertDirection::NanometerToElectronVolt);
      const auto s = mirror_spectrum(read_spectrum(mi_in), zpl);
      if (mi_out.empty()) {
        write_csv(s, std::cout);
        return;
      }
      const auto out = output_path(mi_out);
      write_spectrum(s, out);
      RunManifest m;
      m.subcommand = "mirror";
      m.add_input(mi_in);
      finish_manifest(m, {out}, {{"in", mi_in}, {"zpl_ev", zpl}}, start);
    };
  });

  // --- lineshape -----------------------------------------------------------
  auto* ls = app.add_subcommand("lineshape", "Franck-Condon or generating-function PL lineshape");
  std::string ls_model, ls_density, ls_out;
  int ls_nmax = 40;
  double ls_zpl = 2.156, ls_broad = 5.0;
  EnergyGrid ls_grid;
  ls->add_option("--model", ls_model, "VibronicModel JSON (single effective mode)")->check(CLI::ExistingFile);
  ls->add_option("--density", ls_density, "SpectralDensity JSON (generating-function path)")->check(CLI::ExistingFile);
  ls->add_option("--n-max", ls_nmax, "Highest phonon order for --model")->capture_default_str();
  ls->add_option("--e-zpl-ev", ls_zpl, "Zero-phonon energy for --density")->capture_default_str();
  ls->add_option("--broadening-mev", ls_broad, "Gaussian line width for --density")->capture_default_str();
  ls->add_option("--step-mev", ls_grid.step_mev, "Grid step for --density")->capture_default_str();
  ls->add_option("--below-mev", ls_grid.below_zpl_mev, "Grid span below the ZPL for --density")->capture_default_str();
  ls->add_option("--above-mev", ls_grid.above_zpl_mev, "Grid span above the ZPL for --density")->capture_default_str();
  ls->add_option("--out", ls_out, "Lineshape CSV (energy_ev,intensity)")->required();
  ls->callback([&] {
    action = [&] {
      if (ls_model.empty() == ls_density.empty()) throw ConfigError("lineshape: give exactly one of --model and --density");
      Lineshape shape;
      RunManifest m;
      m.subcommand = "lineshape";
      Json params;
      if (!ls_model.empty()) {
        Json j;
        try {
          j = Json::parse(read_text(ls_model));
        } catch (const nlohmann::json::exception& e) {
          throw ConfigError(std::string("lineshape: ") + e.what());
        }
        shape = fc_lineshape(vibronic_model_from_json(j), ls_nmax);
        m.add_input(ls_model);
        params = {{"model", ls_model}, {"n_max", ls_nmax}};
      } else {
        Json j;
        try {
          j = Json::parse(read_text(ls_density));
        } catch (const nlohmann::json::exception& e) {
          throw ConfigError(std::string("lineshape: ") + e.what());
        }
        shape = psb_from_spectral_density(spectral_density_from_json(j), ls_zpl, ls_grid, ls_broad);
        m.add_input(ls_density);
        params = {{"density", ls_density},          {"e_zpl_ev", ls_zpl},
                  {"broadening_mev", ls_broad},     {"step_mev", ls_grid.step_mev},
                  {"below_mev", ls_grid.below_zpl_mev}, {"above_mev", ls_grid.above_zpl_mev}};
      }
      const auto out = output_path(ls_out);
      write_spectrum(shape.spectrum, out);
      finish_manifest(m, {out}, params, start);
      std::cout << Json{{"zpl_weight", shape.zpl_weight},
                        {"captured_mass", shape.captured_mass},
                        {"area", integrate(shape.spectrum)},
                        {"lines", shape.lines.size()}}
                       .dump(2)
                << "\n";
    };
  });

  // --- pipeline ------------------------------------------------------------
  auto* pl = app.add_subcommand("pipeline", "End-to-end scenario: map, detect, g2, lifetime, spectra, statistics");
  std::string pl_scenario, pl_out;
  pl->add_option("--scenario", pl_scenario, "Scenario JSON")->required()->check(CLI::ExistingFile);
  pl->add_option("--out-dir", pl_out, "Output directory (default $EMLAB_OUT_DIR/pipeline or ./emlab-out)");
  pl->callback([&] {
    action = [&] {
      auto scenario = load_scenario(pl_scenario);
      auto params = Json::parse(scenario_to_json(scenario));
      if (g.seed) scenario.seed = *g.seed;
      if (pl->get_parent()->get_option("--threads")->count() > 0) scenario.threads = g.threads;
      fs::path out;
      if (!pl_out.empty())
        out = output_path(pl_out);
      else if (const char* dir = std::getenv(kOutDirEnv); dir && *dir)
        out = fs::path(dir) / "pipeline";
      else
        out = "emlab-out";
      PipelineOptions opt;
      opt.inputs = {pl_scenario};
      const auto report = run_pipeline(scenario, out, opt);
      std::cout << report.summary;
      std::cerr << "outputs in " << out.string() << "\n";
    };
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }
  try {
    if (action) action();
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
