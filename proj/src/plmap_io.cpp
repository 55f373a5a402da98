#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>

#include <json.hpp>

#include "emlab/errors.hpp"
#include "emlab/plmap.hpp"

namespace emlab {

namespace {

std::filesystem::path sidecar(const std::filesystem::path& p) {
  auto s = p;
  s += ".json";
  return s;
}

std::string field(const std::optional<double>& v) {
  if (!v) return {};
  std::ostringstream o;
  o.precision(12);
  o << *v;
  return o.str();
}

std::optional<double> parse_field(const std::string& s) {
  if (s.empty() || s == "\r") return std::nullopt;
  std::size_t used = 0;
  const double v = std::stod(s, &used);
  return v;
}

}  // namespace

void write_plmap(const PLMap& map, const std::filesystem::path& path, RasterFormat format) {
  check(map);
  nlohmann::json meta = {{"format", format == RasterFormat::Csv ? "csv" : "float32"},
                         {"nx", map.nx},
                         {"ny", map.ny},
                         {"pixel_size_um", map.pixel_size_um},
                         {"origin_um", {map.origin_um.x, map.origin_um.y}},
                         {"excitation_wavelength_nm", map.excitation_wavelength_nm},
                         {"normalization", map.normalization}};
  {
    std::ofstream out(sidecar(path));
    if (!out) throw FormatError("cannot write " + sidecar(path).string());
    out << meta.dump(2) << '\n';
  }
  if (format == RasterFormat::Csv) {
    std::ofstream out(path);
    if (!out) throw FormatError("cannot write " + path.string());
    out.precision(10);
    for (std::size_t j = 0; j < map.ny; ++j) {
      for (std::size_t i = 0; i < map.nx; ++i) out << (i ? "," : "") << map.at(i, j);
      out << '\n';
    }
  } else {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw FormatError("cannot write " + path.string());
    for (double v : map.pixels) {
      const auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(v));
      unsigned char b[4];
      for (int k = 0; k < 4; ++k) b[k] = static_cast<unsigned char>(bits >> (8 * k));
      out.write(reinterpret_cast<const char*>(b), 4);
    }
  }
}

PLMap read_plmap(const std::filesystem::path& path) {
  std::ifstream side(sidecar(path));
  if (!side) throw FormatError("missing map sidecar " + sidecar(path).string());
  nlohmann::json meta;
  try {
    side >> meta;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("map sidecar: ") + e.what());
  }
  PLMap map;
  map.nx = meta.at("nx").get<std::size_t>();
  map.ny = meta.at("ny").get<std::size_t>();
  map.pixel_size_um = meta.at("pixel_size_um").get<double>();
  map.origin_um = {meta.at("origin_um").at(0).get<double>(), meta.at("origin_um").at(1).get<double>()};
  map.excitation_wavelength_nm = meta.value("excitation_wavelength_nm", 530.0);
  map.normalization = meta.value("normalization", 1.0);
  map.pixels.reserve(map.nx * map.ny);

  if (meta.value("format", "csv") == "csv") {
    std::ifstream in(path);
    if (!in) throw FormatError("cannot open " + path.string());
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty() || line == "\r") continue;
      std::istringstream row(line);
      std::string cell;
      while (std::getline(row, cell, ',')) map.pixels.push_back(std::stod(cell));
    }
  } else {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open " + path.string());
    unsigned char b[4];
    while (in.read(reinterpret_cast<char*>(b), 4)) {
      std::uint32_t bits = 0;
      for (int k = 0; k < 4; ++k) bits |= std::uint32_t{b[k]} << (8 * k);
      map.pixels.push_back(std::bit_cast<float>(bits));
    }
  }
  if (map.pixels.size() != map.nx * map.ny) throw FormatError("map raster size does not match sidecar");
  check(map);
  return map;
}

void write_records_csv(std::span<const EmitterRecord> records, std::ostream& out) {
  out << "x_um,y_um,g2_zero,lifetime_ns,brightness_hz,peak_wavelength_nm,fwhm_nm\n";
  for (const auto& r : records) {
    out << field(r.position_um.x) << ',' << field(r.position_um.y) << ',' << field(r.g2_zero) << ','
        << field(r.lifetime_ns) << ',' << field(r.brightness_hz) << ',' << field(r.peak_wavelength_nm) << ','
        << field(r.fwhm_nm) << '\n';
  }
}

std::vector<EmitterRecord> read_records_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line.rfind("x_um,y_um", 0) != 0)
    throw FormatError("records CSV: expected header x_um,y_um,...");
  std::vector<EmitterRecord> records;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line == "\r") continue;
    std::vector<std::string> cells;
    std::istringstream row(line);
    std::string cell;
    while (std::getline(row, cell, ',')) cells.push_back(cell);
    cells.resize(7);
    try {
      EmitterRecord r;
      r.position_um = {parse_field(cells[0]).value_or(0.0), parse_field(cells[1]).value_or(0.0)};
      r.g2_zero = parse_field(cells[2]);
      r.lifetime_ns = parse_field(cells[3]);
      r.brightness_hz = parse_field(cells[4]);
      r.peak_wavelength_nm = parse_field(cells[5]);
      r.fwhm_nm = parse_field(cells[6]);
      records.push_back(r);
    } catch (const std::exception&) {
      throw FormatError("records CSV: malformed line " + std::to_string(lineno));
    }
  }
  return records;
}

}  // namespace emlab
