// Command-line front end: one subcommand per experiment plus `report`.
//
//   spreadlab <experiment> [--config FILE | --manifest FILE] [--set key=value ...]
//             [--seed N] [--replicas N] [--steps N] [--out DIR]
//   spreadlab report DIR
//
// Exit codes: 0 all assertions pass, 1 some assertion failed, 2 invalid
// configuration or input, 3 runtime failure.
#include <CLI11.hpp>
#include <fstream>
#include <iostream>
#include <nlohmann/json.hpp>
#include <sstream>

#include "spreadlab/error.hpp"
#include "spreadlab/experiments.hpp"

namespace sl = spreadlab;

namespace {

sl::ExperimentConfig from_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) sl::fail(sl::ErrorCode::kIo, "cannot read manifest " + path);
  nlohmann::json man;
  try {
    man = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    sl::fail(sl::ErrorCode::kIo, std::string("bad manifest: ") + e.what());
  }
  std::string text;
  for (const auto& [k, v] : man.at("config").items()) text += k + " = " + v.get<std::string>() + "\n";
  return sl::parse_config(text);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Finite-dimensional laboratory for noise propagation in polynomial SPDEs"};
  app.require_subcommand(1);
  app.set_version_flag("--version", sl::version_string());

  struct Opts {
    std::string config, manifest, out;
    std::vector<std::string> sets;
    long long seed = -1;
    int replicas = 0, steps = 0;
  };
  const std::vector<std::string> experiments = {"simulate", "variation", "malliavin", "spectrum", "smallball",
                                                "brackets", "qv",        "events",    "audit"};
  std::map<std::string, Opts> opts;
  std::map<std::string, CLI::App*> subs;
  for (const auto& e : experiments) {
    auto* sub = app.add_subcommand(e, "Run the " + e + " experiment");
    auto& o = opts[e];
    auto* cfg = sub->add_option("--config", o.config, "Config file (flat key = value)");
    sub->add_option("--manifest", o.manifest, "Re-run the config recorded in a manifest.json")->excludes(cfg);
    sub->add_option("--set", o.sets, "Override a config key (key=value), repeatable");
    sub->add_option("--seed", o.seed, "Master seed");
    sub->add_option("--replicas", o.replicas, "Replica count");
    sub->add_option("--steps", o.steps, "Time steps");
    sub->add_option("--out", o.out, "Output directory");
    subs[e] = sub;
  }
  std::string bundle;
  auto* rep = app.add_subcommand("report", "Summarize a result bundle and write plot data");
  rep->add_option("bundle", bundle, "Bundle directory")->required();
  auto* keys = app.add_subcommand("keys", "List config keys with their defaults");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 2;
  }

  try {
    if (keys->parsed()) {
      std::cout << sl::canonical_config(sl::ExperimentConfig{});
      return 0;
    }
    if (rep->parsed()) {
      std::cout << sl::report(bundle);
      return 0;
    }
    for (const auto& e : experiments) {
      if (!subs[e]->parsed()) continue;
      const auto& o = opts[e];
      sl::ExperimentConfig cfg;
      if (!o.config.empty()) cfg = sl::load_config(o.config);
      if (!o.manifest.empty()) cfg = from_manifest(o.manifest);
      if (cfg.experiment.empty()) cfg.experiment = e;
      if (cfg.experiment != e) {
        sl::fail(sl::ErrorCode::kConfig, "config names experiment '" + cfg.experiment + "' but subcommand is '" + e + "'");
      }
      for (const auto& kv : o.sets) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) sl::fail(sl::ErrorCode::kConfig, "--set expects key=value, got '" + kv + "'");
        sl::set_config_value(cfg, kv.substr(0, eq), kv.substr(eq + 1));
      }
      if (o.seed >= 0) cfg.seed = static_cast<std::uint64_t>(o.seed);
      if (o.replicas > 0) cfg.replicas = o.replicas;
      if (o.steps > 0) cfg.steps = o.steps;
      if (!o.out.empty()) cfg.out = o.out;
      const auto res = sl::run_experiment(cfg);
      for (const auto& a : res.assertions) {
        std::cout << (a.pass ? "PASS " : "FAIL ") << a.name;
        if (!a.detail.empty()) std::cout << " (" << a.detail << ")";
        std::cout << "\n";
      }
      std::cout << "bundle: " << cfg.out << "\n";
      return res.passed() ? 0 : 1;
    }
  } catch (const sl::Error& err) {
    std::cerr << "error: " << err.what() << "\n";
    return err.code() == sl::ErrorCode::kConfig || err.code() == sl::ErrorCode::kIo ? 2 : 3;
  } catch (const std::exception& err) {
    std::cerr << "error: " << err.what() << "\n";
    return 3;
  }
  return 0;
}
