#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>

#include <json.hpp>

#include "emlab/correlate.hpp"
#include "emlab/fit.hpp"
#include "emlab/lineshape.hpp"
#include "emlab/plmap.hpp"

namespace emlab {

using Json = nlohmann::ordered_json;

Json to_json(const FitResult& r);
Json to_json(const G2Result& g);
Json to_json(const EnsembleStats& s);
Json to_json(const Stability& s);
Json to_json(const Detection& d);

/// "delay_ps,counts" rows.
void write_histogram_csv(const CorrelationHistogram& h, std::ostream& out);
/// "time_ps,counts" rows at bin centres.
void write_decay_csv(const DecayHistogram& h, std::ostream& out);
/// Reads "time_ps,counts" (or any two numeric columns with a header) into
/// a histogram with uniform bins. Throws FormatError on irregular spacing.
DecayHistogram read_decay_csv(std::istream& in);

VibronicModel vibronic_model_from_json(const Json& j);
SpectralDensity spectral_density_from_json(const Json& j);

/// Writes text to a file, throwing FormatError on failure.
void write_text(const std::filesystem::path& path, const std::string& text);
std::string read_text(const std::filesystem::path& path);

/// Shortest round-trip decimal form of a double.
std::string format_number(double v);

}  // namespace emlab
