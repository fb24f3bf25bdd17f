#pragma once
// Flat key=value run configuration with provenance tracking, environment
// overrides, and the manifest written at the start of every command.

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "sfda/benchmark.hpp"
#include "sfda/engine.hpp"

namespace sfda {

enum class Provenance { kPaperDefault, kDerivedDefault, kConfigFile, kEnvironment, kFlag };
std::string provenance_name(Provenance p);

struct ConfigEntry {
  std::string key;
  std::string value;
  Provenance provenance = Provenance::kDerivedDefault;
};

// Resolved configuration: every known key carries a value and the origin of
// that value. Later layers win: built-in defaults, then the config file,
// then SFDA_<KEY> environment variables, then explicit flag overrides.
class RunConfig {
 public:
  using EnvLookup = std::function<const char*(const std::string&)>;

  static RunConfig defaults();
  // `text` is a config-file body: one `key = value` per line, `#` comments.
  // Unknown keys and lines without `=` throw, naming the offenders.
  static RunConfig from_text(const std::string& text, const EnvLookup& env = EnvLookup());
  static RunConfig from_file(const std::string& path, const EnvLookup& env = EnvLookup());

  void set(const std::string& key, const std::string& value, Provenance provenance);
  bool has(const std::string& key) const;

  const std::string& text(const std::string& key) const;
  double number(const std::string& key) const;
  int integer(const std::string& key) const;
  bool boolean(const std::string& key) const;
  std::uint64_t seed(const std::string& key) const;
  Provenance provenance(const std::string& key) const;
  const std::vector<ConfigEntry>& entries() const { return entries_; }

  AdaptationConfig adaptation() const;  // engine view of the hyperparameters
  BenchmarkOptions benchmark() const;   // synthetic-benchmark view
  PretrainOptions pretrain() const;

 private:
  ConfigEntry& find(const std::string& key);
  const ConfigEntry& find(const std::string& key) const;
  void apply_environment(const EnvLookup& env);

  std::vector<ConfigEntry> entries_;  // schema order
};

struct RunManifest {
  std::string command;
  std::string config_path;  // empty when built from defaults alone
  std::string out_dir;
  std::string version;
  std::uint64_t seed = 0;
  std::vector<ConfigEntry> resolved;
};

RunManifest make_manifest(const std::string& command, const std::string& config_path,
                          const std::string& out_dir, const RunConfig& config);
std::string manifest_json(const RunManifest& manifest);
// Writes <dir>/manifest.json, creating the directory if needed.
void write_manifest(const RunManifest& manifest, const std::string& dir);

inline constexpr const char* kVersionStamp = "sfda 0.1.0";
inline constexpr const char* kEnvPrefix = "SFDA_";

}  // namespace sfda
