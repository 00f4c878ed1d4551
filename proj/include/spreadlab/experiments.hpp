#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "spreadlab/sde.hpp"
#include "spreadlab/variations.hpp"

namespace spreadlab {

inline constexpr int kConfigSchemaVersion = 1;

// Every run is described by one flat key = value file. Zero for K and nu
// means "the model preset's default" (rd: K 16, nu 1; ns: K 4, nu 0.1).
struct ExperimentConfig {
  int schema_version = kConfigSchemaVersion;
  std::string experiment;
  std::string model = "rd";
  int K = 0;
  double nu = 0.0;
  std::string rd_a = "0,1,0,-1";       // a_0..a_m of sum a_j u^j
  std::string rd_forcing = "1,2";      // forced wavenumbers
  std::string ns_z0 = "1,0;1,1";       // lattice points, taken modulo sign
  double sigma = 1.0;
  std::string u0 = "zero";             // zero | random
  double u0_amp = 1.0;
  double T = 1.0;
  int steps = 1024;
  double t0_frac = 0.5;
  std::string scheme = "exponential";  // exponential | semi_implicit
  std::string adjoint = "staggered";   // staggered | exact | continuous
  std::string subspace;                // rd: "3,4"; ns: "2:1:c;2:1:s"; empty = model default
  double delta = 0.5;
  std::string eps_grid = "1e-5,2e-5,5e-5,1e-4,2e-4,5e-4,1e-3";
  int replicas = 20;
  std::uint64_t seed = 1;
  std::string out = "out";
  double v_exponent = 0.5;
  double blowup = 1e8;
  int restarts = 16;
  int save_paths = 4;
  int save_stride = 16;
  int max_steps = 20;
  bool all_degrees = false;
  std::string expect = "none";         // none | full | degenerate | positive
  int directions = 10;
  double fd_eps = 1e-4;
  int qv_degree = 4;
  int qv_d = 3;
  int qv_mesh_log2 = 16;
  int ito_replicas = 10000;
  int ito_steps = 256;
  std::string event_n = "1,2";
  int event_d = 2;
  int event_steps = 4096;
  std::string event_eps = "0.25,0.125,0.0625,0.03125,0.015625,0.0078125,0.00390625";
  int norris_trials = 10000;
  std::string p_list = "2,4,8";
  int audit_nodes = 8;
};

// Parses the flat format ('#' comments, blank lines ignored). Unknown keys,
// a missing or wrong schema_version, and malformed values throw kConfig.
ExperimentConfig parse_config(const std::string& text);
ExperimentConfig load_config(const std::filesystem::path& file);
void set_config_value(ExperimentConfig& cfg, const std::string& key, const std::string& value);
std::vector<std::string> config_keys();
// Sorted "key = value" lines; the hash is FNV-1a over this text without `out`.
std::string canonical_config(const ExperimentConfig& cfg);
std::string config_hash(const ExperimentConfig& cfg);
// Checks ranges and builds the model once; throws kConfig with a readable message.
void validate_config(const ExperimentConfig& cfg);

// The model assembled from a config.
struct ModelSetup {
  SpdeConfig spde;
  SpectralField u0;
  std::vector<SpectralField> S;  // orthonormal subspace
  AdjointScheme adjoint = AdjointScheme::kStaggered;
  bool linear = false;           // drift is -L + a_1 I
};
ModelSetup build_model(const ExperimentConfig& cfg);

struct Table {
  std::string name;  // file name, e.g. "gaps.csv"
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
  void add(std::vector<std::string> row) { rows.push_back(std::move(row)); }
  std::string csv() const;
};

struct Assertion {
  std::string name;
  bool pass = false;
  std::string detail;
};

struct RunResult {
  std::string experiment;
  std::vector<Table> tables;
  std::vector<Assertion> assertions;
  std::map<std::string, std::string> files;  // extra outputs (relative path -> content)
  std::map<std::string, double> info;
  std::vector<std::uint64_t> seeds;
  int diverged = 0;
  bool passed() const;
  const Table* table(const std::string& name) const;
};

std::string fmt_double(double x);
std::string version_string();

// Runs the named experiment and writes tables, extra files and manifest.json
// into cfg.out. Per-replica intermediate results are cached under
// cfg.out/.replicas/<hash>/ so an interrupted run resumes where it stopped.
RunResult run_experiment(const ExperimentConfig& cfg);
// Same, without touching the disk (no cache).
RunResult compute_experiment(const ExperimentConfig& cfg);
void write_bundle(const ExperimentConfig& cfg, const RunResult& res);

// Reads a bundle directory, writes plot_*.csv files into it and returns the summary text.
std::string report(const std::filesystem::path& bundle);

// Atomic text write (temporary file in the same directory, then rename).
void write_file_atomic(const std::filesystem::path& path, const std::string& content);

}  // namespace spreadlab
