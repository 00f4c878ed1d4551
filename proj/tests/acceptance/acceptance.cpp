// Acceptance gate: one PASS/FAIL line per criterion at the stated tolerance.
//
//   acceptance [OUT_DIR] [CRITERION ...]
//
// Bundles of every run are kept under OUT_DIR (wiped first) for inspection;
// OUT_DIR/summary.txt repeats the verdict lines.
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <nlohmann/json.hpp>
#include <set>
#include <sstream>

#include "spreadlab/brackets.hpp"
#include "spreadlab/experiments.hpp"

namespace fs = std::filesystem;
using namespace spreadlab;

namespace {

fs::path g_root = "acceptance_out";

ExperimentConfig config(const std::string& experiment, const std::string& model, const std::string& name) {
  ExperimentConfig c;
  c.experiment = experiment;
  c.model = model;
  c.out = (g_root / name).string();
  return c;
}

RunResult run(const ExperimentConfig& c, bool show_assertions = true) {
  const auto t0 = std::chrono::steady_clock::now();
  RunResult r = run_experiment(c);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  std::cout << "  [" << c.out << "] " << c.experiment << " " << c.model << " in " << fmt_double(std::round(secs * 10) / 10)
            << " s\n";
  for (const auto& a : r.assertions) {
    if (!show_assertions) break;
    std::cout << "    " << (a.pass ? "ok   " : "FAIL ") << a.name << (a.detail.empty() ? "" : ": " + a.detail) << "\n";
  }
  return r;
}

bool has(const RunResult& r, const std::string& name) {
  for (const auto& a : r.assertions) {
    if (a.name == name) return a.pass;
  }
  std::cout << "    missing assertion " << name << "\n";
  return false;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

int g_failures = 0;
std::ofstream g_summary;  // OUT_DIR/summary.txt, the verdict lines only

void verdict(int n, bool pass, const std::string& what) {
  const std::string line = "CRITERION " + std::to_string(n) + " " + (pass ? "PASS" : "FAIL") + ": " + what;
  std::cout << line << std::endl;
  g_summary << line << std::endl;
  if (!pass) ++g_failures;
}

// Shared runs (criteria 1, 3 and 2, 4 reuse them).
RunResult g_var_rd, g_var_ns, g_mal_rd, g_mal_ns;
bool g_have_var = false, g_have_mal = false;

void variation_runs() {
  if (g_have_var) return;
  auto rd = config("variation", "rd", "variation_rd");
  rd.steps = 4096;
  g_var_rd = run(rd);
  auto ns = config("variation", "ns", "variation_ns");
  ns.directions = 0;
  g_var_ns = run(ns);
  g_have_var = true;
}

void malliavin_runs() {
  if (g_have_mal) return;
  auto rd = config("malliavin", "rd", "malliavin_rd");
  rd.steps = 4096;
  g_mal_rd = run(rd);
  g_mal_ns = run(config("malliavin", "ns", "malliavin_ns"));
  g_have_mal = true;
}

void criterion1() {
  variation_runs();
  const bool ok = has(g_var_rd, "gap_halves_per_doubling") && has(g_var_rd, "linear_gap_roundoff") &&
                  has(g_var_ns, "gap_halves_per_doubling") && has(g_var_ns, "linear_gap_roundoff");
  verdict(1, ok,
          "duality gap halves per doubling on RD and NS (20 seeds each, C = " +
              fmt_double(std::max(g_var_rd.info["gap_constant"], g_var_ns.info["gap_constant"])) +
              "), linear gap " + fmt_double(std::max(g_var_rd.info["linear_gap"], g_var_ns.info["linear_gap"])));
}

void criterion2() {
  malliavin_runs();
  const bool ok = has(g_mal_rd, "representations_first_order") && has(g_mal_ns, "representations_first_order") &&
                  has(g_mal_rd, "linear_representations_agree") && has(g_mal_ns, "linear_representations_agree");
  verdict(2, ok, "forward/adjoint Malliavin matrices: ratio per doubling in [0.4, 0.7] on 20 seeds, linear difference " +
                     fmt_double(std::max(g_mal_rd.info["linear_rel_diff"], g_mal_ns.info["linear_rel_diff"])));
}

void criterion3() {
  variation_runs();
  const bool ok = has(g_var_rd, "derivative_vs_bumps") && has(g_var_rd, "second_variation_vs_mixed");
  verdict(3, ok, "RD derivative vs bumps max rel err " + fmt_double(g_var_rd.info["fd_max_rel_err"]) +
                     " (10 x 10), second variation " + fmt_double(g_var_rd.info["second_max_rel_err"]));
}

void criterion4() {
  malliavin_runs();
  auto c = config("simulate", "rd", "ou_rd");
  c.rd_a = "0";
  c.replicas = 10000;
  c.steps = 4096;
  c.save_paths = 1;
  const auto r = run(c);
  const bool ok = has(r, "ou_variance_within_5pct") && has(g_mal_rd, "linear_entries_closed_form") &&
                  has(g_mal_ns, "linear_entries_closed_form");
  verdict(4, ok, "OU variance max deviation " + fmt_double(r.info.at("ou_max_rel_dev")) +
                     " at 1e4 replicas; M entries max rel err " +
                     fmt_double(std::max(g_mal_rd.info["linear_entries_max_rel_err"],
                                         g_mal_ns.info["linear_entries_max_rel_err"])));
}

void criterion5() {
  auto good = config("brackets", "ns", "brackets_good");
  good.expect = "full";
  const auto rg = run(good);
  auto bad = config("brackets", "ns", "brackets_equal_norms");
  bad.ns_z0 = "1,0;0,1";
  bad.expect = "degenerate";
  const auto rb = run(bad);
  const auto c1 = ns_condition({{1, 0}, {-1, 0}, {1, 1}, {-1, -1}});
  const auto c2 = ns_condition({{1, 0}, {-1, 0}, {0, 1}, {0, -1}});
  const auto c3 = ns_condition({{2, 0}, {-2, 0}, {0, 2}, {0, -2}});
  const bool table = c1.generates_Z2 && c1.unequal_norms && c2.generates_Z2 && !c2.unequal_norms &&
                     !c3.generates_Z2 && !c3.unequal_norms;
  const bool ok = rg.passed() && rb.passed() && table;
  verdict(5, ok, "NS good Z0 rank " + fmt_double(rg.info.at("final_rank")) + "/80 saturated; equal-norm Z0 rank " +
                     fmt_double(rb.info.at("final_rank")) + " with first-generation max " +
                     fmt_double(rb.info.at("first_generation_max")) + "; ns_condition table " +
                     (table ? "exact" : "wrong"));
}

void criterion6() {
  auto rd = config("spectrum", "rd", "spectrum_rd");
  rd.replicas = 100;
  rd.steps = 4096;
  rd.expect = "positive";
  const auto r1 = run(rd);
  auto ns = config("spectrum", "ns", "spectrum_ns");
  ns.replicas = 100;
  ns.expect = "positive";
  const auto r2 = run(ns);
  auto deg = config("spectrum", "ns", "spectrum_ns_unreachable");
  deg.replicas = 100;
  deg.ns_z0 = "1,0;0,1";
  deg.subspace = "1:0:c;2:1:c";
  deg.expect = "degenerate";
  const auto r3 = run(deg);
  verdict(6, r1.passed() && r2.passed() && r3.passed(),
          "min eigenvalue of the projected matrix positive in " + fmt_double(r1.info.at("positive")) + "/100 (RD) and " +
              fmt_double(r2.info.at("positive")) + "/100 (NS); degenerate in " + fmt_double(r3.info.at("degenerate")) +
              "/100 for the unreachable mode");
}

void criterion7() {
  auto c = config("smallball", "ns", "smallball_ns");
  c.replicas = 1000;
  c.steps = 512;
  const auto r = run(c);
  verdict(7, r.passed(), "P(inf_cone < eps) monotone, log-log slope " + fmt_double(r.info.at("slope")) + " over " +
                             fmt_double(r.info.at("resolved")) + " resolved rows at 1e3 replicas");
}

RunResult g_qv;
bool g_have_qv = false;
void qv_run() {
  if (g_have_qv) return;
  auto c = config("qv", "rd", "qv");
  c.replicas = 100;
  g_qv = run(c);
  g_have_qv = true;
}

void criterion8() {
  qv_run();
  double worst = 0.0;
  for (int d = 1; d <= 4; ++d) worst = std::max(worst, g_qv.info["median_rel_err_degree_" + std::to_string(d)]);
  verdict(8, has(g_qv, "qv_median_within_2pct") && has(g_qv, "energy_identity"),
          "worst median |discrete - formula|/formula " + fmt_double(worst) + " over degrees 1..4, d = 3, mesh 2^-16");
}

void criterion9() {
  qv_run();
  verdict(9, has(g_qv, "ito_square_exact") && has(g_qv, "martingale_mean_in_3sigma_band"),
          "W^2 - t gap " + fmt_double(g_qv.info["ito_square_gap"]) + "; E[M(t)] inside the 3 sigma band at 1e4 paths");
}

RunResult g_ev;
bool g_have_ev = false;
void events_run() {
  if (g_have_ev) return;
  auto c = config("events", "rd", "events");
  c.replicas = 1000;
  g_ev = run(c);
  g_have_ev = true;
}

void criterion10() {
  events_run();
  verdict(10, has(g_ev, "no_inclusion_violations"),
          fmt_double(g_ev.info["violations"]) + " violations over 1e3 paths x 7 eps x n in {1,2}; left-hand side held " +
              fmt_double(g_ev.info["lhs_total"]) + " times, partition unresolvable " +
              fmt_double(g_ev.info["grid_too_coarse"]) + " times");
}

void criterion11() {
  events_run();
  verdict(11, has(g_ev, "no_lemma_counterexamples"),
          fmt_double(g_ev.info["norris_violations"]) + " counterexamples over 1e4 functions per lemma (hypotheses held " +
              fmt_double(g_ev.info["norris_hypotheses"]) + " times)");
}

void criterion12() {
  auto rd = config("audit", "rd", "audit_rd");
  rd.replicas = 100;
  const auto r1 = run(rd);
  auto ns = config("audit", "ns", "audit_ns");
  ns.replicas = 100;
  ns.steps = 512;
  const auto r2 = run(ns);
  verdict(12, r1.passed() && r2.passed(),
          "audit estimates finite, monotone in p and within 10% from 100 to 200 replicas; RD alpha " +
              fmt_double(r1.info.at("alpha")));
}

void criterion13() {
  // Small runs: only byte identity matters here, not their assertions.
  std::vector<ExperimentConfig> cfgs;
  auto a = config("spectrum", "rd", "repro_a/spectrum");
  a.replicas = 10;
  cfgs.push_back(a);
  auto b = config("smallball", "ns", "repro_a/smallball");
  b.replicas = 6;
  b.steps = 256;
  cfgs.push_back(b);
  auto c = config("events", "rd", "repro_a/events");
  c.replicas = 10;
  c.norris_trials = 200;
  cfgs.push_back(c);
  auto d = config("audit", "rd", "repro_a/audit");
  d.replicas = 5;
  cfgs.push_back(d);
  bool same = true;
  int files = 0;
  for (const auto& cfg : cfgs) {
    run(cfg, false);
    // Re-run from the written manifest into a fresh directory.
    const auto man = nlohmann::json::parse(slurp(fs::path(cfg.out) / "manifest.json"));
    std::string text;
    for (const auto& [k, v] : man.at("config").items()) text += k + " = " + v.get<std::string>() + "\n";
    ExperimentConfig again = parse_config(text);
    again.out = (g_root / "repro_b" / fs::path(cfg.out).filename()).string();
    run(again, false);
    for (const auto& t : man.at("tables")) {
      const auto name = t.get<std::string>();
      const bool eq = slurp(fs::path(cfg.out) / name) == slurp(fs::path(again.out) / name);
      if (!eq) std::cout << "    differs: " << name << "\n";
      same = same && eq;
      ++files;
    }
  }
  verdict(13, same && files > 0, std::to_string(files) + " CSV tables byte-identical after manifest re-runs");
}

}  // namespace

int main(int argc, char** argv) {
  if (argc > 1) g_root = argv[1];
  std::set<int> only;
  for (int i = 2; i < argc; ++i) only.insert(std::atoi(argv[i]));
  fs::remove_all(g_root);
  fs::create_directories(g_root);
  g_summary.open(g_root / "summary.txt");
  const std::vector<void (*)()> crit = {criterion1, criterion2,  criterion3,  criterion4, criterion5,
                                        criterion6, criterion7,  criterion8,  criterion9, criterion10,
                                        criterion11, criterion12, criterion13};
  for (size_t i = 0; i < crit.size(); ++i) {
    const int n = static_cast<int>(i + 1);
    if (!only.empty() && !only.count(n)) continue;
    try {
      crit[i]();
    } catch (const std::exception& e) {
      verdict(n, false, std::string("exception: ") + e.what());
    }
  }
  const std::string last = g_failures == 0 ? "ALL CRITERIA PASS" : std::to_string(g_failures) + " CRITERIA FAIL";
  std::cout << last << std::endl;
  g_summary << last << std::endl;
  return g_failures == 0 ? 0 : 1;
}
