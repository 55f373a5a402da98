#include "emlab/manifest.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <array>
#include <fstream>
#include <memory>
#include <vector>

#include <json.hpp>

#include "emlab/errors.hpp"

namespace emlab {

namespace {

struct DigestContext {
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx{EVP_MD_CTX_new(), &EVP_MD_CTX_free};
  DigestContext() {
    if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr) != 1)
      throw Error("sha256: digest initialisation failed");
  }
  void update(const void* data, std::size_t n) { EVP_DigestUpdate(ctx.get(), data, n); }
  std::string hex() {
    std::array<unsigned char, EVP_MAX_MD_SIZE> md{};
    unsigned len = 0;
    EVP_DigestFinal_ex(ctx.get(), md.data(), &len);
    static constexpr char digits[] = "0123456789abcdef";
    std::string out;
    for (unsigned i = 0; i < len; ++i) {
      out.push_back(digits[md[i] >> 4]);
      out.push_back(digits[md[i] & 15]);
    }
    return out;
  }
};

}  // namespace

std::string sha256_bytes(std::string_view bytes) {
  DigestContext d;
  d.update(bytes.data(), bytes.size());
  return d.hex();
}

std::string sha256_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("sha256: cannot read " + path.string());
  DigestContext d;
  std::vector<char> buf(1 << 16);
  while (in) {
    in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
    d.update(buf.data(), static_cast<std::size_t>(in.gcount()));
  }
  return d.hex();
}

void RunManifest::add_input(const std::filesystem::path& p) { inputs[p.generic_string()] = sha256_file(p); }

void RunManifest::add_output(const std::filesystem::path& p) { outputs[p.generic_string()] = sha256_file(p); }

void RunManifest::add_outputs_below(const std::filesystem::path& dir, const std::filesystem::path& skip) {
  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::recursive_directory_iterator(dir))
    if (e.is_regular_file() && (skip.empty() || !std::filesystem::equivalent(e.path(), skip)))
      files.push_back(e.path());
  std::sort(files.begin(), files.end());
  for (const auto& f : files) outputs[std::filesystem::relative(f, dir).generic_string()] = sha256_file(f);
}

std::string RunManifest::to_json() const {
  nlohmann::ordered_json j;
  j["subcommand"] = subcommand;
  j["parameters"] = nlohmann::ordered_json::parse(parameters_json);
  j["seed"] = seed;
  j["inputs"] = inputs;
  j["outputs"] = outputs;
  j["tool_version"] = tool_version;
  j["wall_time_s"] = wall_time_s;
  j["status"] = status;
  if (failed_stage) j["failed_stage"] = *failed_stage;
  if (error) j["error"] = *error;
  return j.dump(2) + "\n";
}

void RunManifest::write(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("manifest: cannot write " + path.string());
  out << to_json();
}

RunManifest read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("manifest: cannot read " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("manifest: ") + e.what());
  }
  RunManifest m;
  m.subcommand = j.at("subcommand").get<std::string>();
  m.parameters_json = j.at("parameters").dump();
  m.seed = j.at("seed").get<std::uint64_t>();
  m.inputs = j.at("inputs").get<std::map<std::string, std::string>>();
  m.outputs = j.at("outputs").get<std::map<std::string, std::string>>();
  m.tool_version = j.at("tool_version").get<std::string>();
  m.wall_time_s = j.at("wall_time_s").get<double>();
  m.status = j.at("status").get<std::string>();
  if (j.contains("failed_stage")) m.failed_stage = j["failed_stage"].get<std::string>();
  if (j.contains("error")) m.error = j["error"].get<std::string>();
  return m;
}

}  // namespace emlab
