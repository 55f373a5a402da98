#include "emlab/json_io.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include "emlab/errors.hpp"

namespace emlab {

std::string format_number(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return {buf, res.ptr};
}

Json to_json(const FitResult& r) {
  Json j;
  Json params = Json::object();
  for (const auto& p : r.params) params[p.name] = {{"value", p.value}, {"sigma", p.sigma}};
  j["params"] = params;
  j["reduced_chi2"] = r.reduced_chi2;
  j["n_iterations"] = r.n_iterations;
  j["converged"] = r.converged;
  j["relative_gradient"] = r.relative_gradient;
  j["n_points"] = r.n_points;
  return j;
}

Json to_json(const G2Result& g) {
  Json j;
  j["g2_zero"] = g.g2_zero;
  j["uncertainty"] = g.uncertainty;
  j["center_area"] = g.center_area;
  j["mean_side_area"] = g.mean_side_area;
  j["n_side_peaks"] = g.n_side_peaks_used;
  j["class"] = to_string(classify_emitter(g));
  return j;
}

Json to_json(const EnsembleStats& s) {
  Json j;
  j["n"] = s.n;
  j["mean"] = s.mean;
  j["stddev"] = s.stddev;
  j["edges"] = s.edges;
  j["counts"] = s.counts;
  return j;
}

Json to_json(const Stability& s) {
  return Json{{"mean_hz", s.mean_hz}, {"std_hz", s.std_hz}, {"relative_percent", s.relative_percent}};
}

Json to_json(const Detection& d) {
  return Json{{"x_um", d.position_um.x}, {"y_um", d.position_um.y}, {"peak_counts", d.peak_counts}};
}

void write_histogram_csv(const CorrelationHistogram& h, std::ostream& out) {
  out << "delay_ps,counts\n";
  const auto d = h.delays_ps();
  for (std::size_t k = 0; k < h.size(); ++k) out << format_number(d[k]) << ',' << h.counts[k] << '\n';
}

void write_decay_csv(const DecayHistogram& h, std::ostream& out) {
  out << "time_ps,counts\n";
  for (std::size_t i = 0; i < h.counts.size(); ++i)
    out << format_number(h.time_ps(i)) << ',' << format_number(h.counts[i]) << '\n';
}

DecayHistogram read_decay_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw FormatError("decay csv: empty input");
  std::vector<double> t, c;
  while (std::getline(in, line)) {
    if (line.empty() || line == "\r") continue;
    const auto comma = line.find(',');
    if (comma == std::string::npos) throw FormatError("decay csv: expected two columns: " + line);
    try {
      t.push_back(std::stod(line.substr(0, comma)));
      c.push_back(std::stod(line.substr(comma + 1)));
    } catch (const std::exception&) {
      throw FormatError("decay csv: not a number: " + line);
    }
  }
  if (t.size() < 2) throw FormatError("decay csv: need at least two rows");
  const double w = t[1] - t[0];
  if (!(w > 0.0)) throw FormatError("decay csv: times must increase");
  for (std::size_t i = 1; i < t.size(); ++i)
    if (std::abs(t[i] - t[i - 1] - w) > 1e-6 * w) throw FormatError("decay csv: bins must be uniform");
  DecayHistogram h;
  h.bin_width_ps = w;
  h.origin_ps = t[0] - 0.5 * w;
  h.counts = std::move(c);
  return h;
}

VibronicModel vibronic_model_from_json(const Json& j) {
  VibronicModel m;
  try {
    for (const auto& [key, value] : j.items()) {
      if (key == "e_zpl_ev")
        m.e_zpl_ev = value.get<double>();
      else if (key == "hr_factor")
        m.hr_factor = value.get<double>();
      else if (key == "delta_q")
        m.delta_q = value.get<double>();
      else if (key == "phonon_energy_mev")
        m.phonon_energy_mev = value.get<double>();
      else if (key == "broadening_mev")
        m.broadening_mev = value.get<double>();
      else
        throw ConfigError("vibronic model: unknown key '" + key + "'");
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("vibronic model: ") + e.what());
  }
  check(m);
  return m;
}

SpectralDensity spectral_density_from_json(const Json& j) {
  SpectralDensity d;
  try {
    for (const auto& [key, value] : j.items()) {
      if (key == "phonon_energies_mev")
        d.phonon_energies_mev = value.get<std::vector<double>>();
      else if (key == "partial_hr")
        d.partial_hr = value.get<std::vector<double>>();
      else
        throw ConfigError("spectral density: unknown key '" + key + "'");
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("spectral density: ") + e.what());
  }
  check(d);
  return d;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
  if (!out) throw FormatError("cannot write " + path.string());
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace emlab
