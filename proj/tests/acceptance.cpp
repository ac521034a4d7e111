#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include <beamkam/config.hpp>
#include <beamkam/measure.hpp>
#include <beamkam/nashmoser.hpp>
#include <beamkam/parallel.hpp>
#include <beamkam/verify.hpp>

#include "oracles.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace beamkam;

namespace {

struct Outcome {
  bool pass = false;
  std::string line;
  json artifact;
  double seconds = 0;
};

struct Settings {
  std::uint64_t seed = 20241019;
  std::string config_dir = BEAMKAM_CONFIG_DIR;
};

std::string fmt(const char* f, double x)
{
  char b[64];
  std::snprintf(b, sizeof b, f, x);
  return b;
}

Outcome lemma(const Settings& s)
{
  Outcome o;
  auto res = lemma_suite(s.seed, 200, frozen_constants());
  std::vector<std::string> failed;
  int min_trials = 1 << 30;
  json arr = json::array();
  for (const auto& r : res) {
    if (!r.pass) failed.push_back(r.name + " (worst slack " + fmt("%.3g", r.worst_slack) + ")");
    min_trials = std::min(min_trials, r.trials);
    arr.push_back(r.to_json());
  }
  o.artifact = {{"checks", arr}};
  o.pass = failed.empty() && min_trials >= 200;
  o.line = std::to_string(res.size()) + " checks, >= " + std::to_string(min_trials) + " trials each";
  for (const auto& f : failed) o.line += "; violated: " + f;
  return o;
}

Outcome inversion(const Settings& s)
{
  Outcome o;
  json inst = json::array();
  auto c = inversion_check(s.seed, {{5, 20}, {7, 15}, {10, 10}, {15, 4}, {21, 1}}, &inst);
  int lo = 1 << 30, hi = 0;
  for (const auto& i : inst) {
    lo = std::min(lo, i["dimension"].get<int>());
    hi = std::max(hi, i["dimension"].get<int>());
  }
  o.artifact = {{"check", c.to_json()}, {"instances", inst}};
  o.pass = c.pass && c.trials >= 50 && lo >= 100 && hi <= 2000;
  o.line = std::to_string(c.trials) + " admissible instances, dimension " + std::to_string(lo) + "-" + std::to_string(hi) +
           ", " + std::to_string(c.detail["with_bad_clusters"].get<int>()) + " with bad clusters, max rel error " +
           fmt("%.2e", c.detail["max_rel_error"].get<double>()) + ", max ||inv A - I||_0 " +
           fmt("%.2e", c.detail["max_left_error"].get<double>());
  return o;
}

Outcome covariance(const Settings& s)
{
  Outcome o;
  auto c = covariance_check(s.seed, 100);
  o.artifact = c.to_json();
  double d = c.detail["max_entry_difference"].get<double>();
  o.pass = c.pass && c.trials >= 100 && d <= 1e-12;
  o.line = std::to_string(c.trials) + " draws, max entry difference " + fmt("%.2e", d);
  return o;
}

Outcome lipschitz(const Settings& s)
{
  Outcome o;
  auto c = lipschitz_check(s.seed, 1000);
  o.artifact = c.to_json();
  o.pass = c.pass && c.trials >= 1000;
  o.line = std::to_string(c.trials) + " pairs, max (eigenvalue shift - op-norm difference) " +
           fmt("%.3e", c.detail["max_shift_minus_opdiff"].get<double>());
  return o;
}

Outcome reference_solve(const Settings& s)
{
  Outcome o;
  auto cfg = load_config(s.config_dir + "/r1.json");
  auto res = solve(cfg);
  const auto& steps = res.certificate["steps"];
  int nsteps = int(steps.size()) - 1;
  double final_res = steps.back()["residual_s1"].get<double>() + steps.back()["tail_s1"].get<double>();
  int Nfinal = steps.back()["N_n"].get<int>();
  auto nr = oracle::dense_newton(cfg, 64);
  FourierField d = res.u;
  d -= oracle::to_field(nr.a, cfg.geom);
  double diff = hs_norm(d, cfg.ms.s1);
  double worst_ratio = 0;
  for (std::size_t k = 1; k < steps.size(); ++k)
    worst_ratio = std::max(worst_ratio, steps[k]["increment_s1"].get<double>() / steps[k - 1]["increment_s1"].get<double>());
  o.artifact = {{"certificate", res.certificate},
                {"oracle", {{"N", 64}, {"iterations", nr.iterations}, {"residual", nr.residual}}},
                {"difference_s1", diff},
                {"worst_increment_ratio", worst_ratio}};
  o.pass = res.exit_code == 0 && nsteps <= 6 && final_res <= 1e-10 && Nfinal >= 64 && diff <= 1e-8 &&
           worst_ratio <= 0.25 && nsteps >= 1;
  o.line = res.status + " in " + std::to_string(nsteps) + " steps (N = " + std::to_string(Nfinal) + "), residual " +
           fmt("%.2e", final_res) + ", |u - u_newton|_s1 " + fmt("%.2e", diff) + ", increment ratio " +
           fmt("%.2e", worst_ratio);
  return o;
}

Outcome covers(const Settings& s)
{
  Outcome o;
  auto cfg = load_config(s.config_dir + "/r1.json");
  OperatorParams p = cfg.base_operator();
  std::vector<int> j0 = cfg.bad_theta.j0;
  bool ok = true;
  json per = json::array();
  std::string text;
  for (int N : {4, 8}) {
    CoverOptions opt;
    opt.tau = cfg.ms.tau;
    if (cfg.bad_theta.range) opt.range = *cfg.bad_theta.range;
    auto ex = bad_theta_cover(p, N, j0, opt);
    opt.mode = CoverMode::Sweep;
    auto sw = bad_theta_cover(p, N, j0, opt);
    auto modulus = [&](double th) {
      OperatorParams q = p;
      q.theta = th;
      return smallest_modulus(assemble(q, N, std::vector<int>(cfg.geom.nu, 0), j0).data);
    };
    double worst_mid = 0;
    for (auto [a, b] : ex.cover.intervals) worst_mid = std::max(worst_mid, modulus(0.5 * (a + b)) / ex.eta);
    Rng r(s.seed + N);
    double worst_out = std::numeric_limits<double>::infinity();
    for (int k = 0; k < 5;) {
      double th = uniform(r, ex.range.first, ex.range.second);
      if (ex.cover.contains(th)) continue;
      worst_out = std::min(worst_out, modulus(th) / ex.eta);
      ++k;
    }
    double sd = symmetric_difference(ex.cover, sw.cover);
    bool pass = !ex.cover.intervals.empty() && worst_mid <= 1 + 1e-9 && worst_out > 1 && sd <= 2 * sw.resolution;
    ok = ok && pass;
    per.push_back({{"N", N},
                   {"eta", ex.eta},
                   {"range", {ex.range.first, ex.range.second}},
                   {"intervals", ex.cover.intervals.size()},
                   {"measure", ex.cover.measure()},
                   {"within_budget", ex.cover.within_budget()},
                   {"max_midpoint_modulus_over_eta", worst_mid},
                   {"min_complement_modulus_over_eta", worst_out},
                   {"exact_vs_sweep_measure", sd},
                   {"sweep_resolution", sw.resolution},
                   {"exact", ex.cover.to_json()}});
    text += (text.empty() ? "" : "; ") + std::string("N=") + std::to_string(N) + ": " +
            std::to_string(ex.cover.intervals.size()) + " intervals, midpoint/eta <= " + fmt("%.3f", worst_mid) +
            ", complement/eta >= " + fmt("%.3g", worst_out) + ", |exact - sweep| " + fmt("%.2e", sd) +
            " vs 2*res " + fmt("%.2e", 2 * sw.resolution);
  }
  o.artifact = {{"per_N", per}};
  o.pass = ok;
  o.line = text;
  return o;
}

Outcome trend(const Settings& s)
{
  Outcome o;
  auto cfg = load_config(s.config_dir + "/r1.json");
  ScanOptions opt;
  opt.grid = lambda_grid(cfg.scan.grid);
  opt.Ns = cfg.scan.Ns;
  opt.N0 = cfg.solver.N0;
  opt.gamma = cfg.freq.gamma;
  opt.tau1 = cfg.ms.tau1;
  opt.tau = cfg.ms.tau;
  auto rep = scan_lambda(cfg.base_operator(), opt);
  json sum = rep.summary(cfg.solver.eps, cfg.ms.s1, cfg.ms.s2);
  bool mono = true;
  for (std::size_t k = 1; k < opt.Ns.size(); ++k) mono = mono && rep.excluded_G(k) <= rep.excluded_G(k - 1);
  const auto& gs = cfg.scan.gammas;
  double g0 = gs.front(), e0 = rep.excluded_U(g0), worst = 0;
  json lin = json::array();
  for (double g : gs) {
    double e = rep.excluded_U(g);
    double dev = e0 > 0 ? (e / e0) / (g / g0) - 1 : std::numeric_limits<double>::infinity();
    worst = std::max(worst, std::abs(dev));
    lin.push_back({{"gamma", g}, {"excluded_U", e}, {"relative_deviation", dev}});
  }
  o.artifact = {{"summary", sum}, {"linearity", lin}, {"csv", rep.to_csv()}};
  o.pass = mono && opt.grid.size() == 512 && opt.Ns.size() >= 2 && worst <= 0.3;
  std::string g_text;
  for (std::size_t k = 0; k < opt.Ns.size(); ++k)
    g_text += (k ? " -> " : "") + fmt("%.4f", rep.excluded_G(k));
  std::string u_text;
  for (std::size_t k = 0; k < opt.Ns.size(); ++k)
    u_text += (k ? " -> " : "") + fmt("%.4f", rep.excluded_U_N(k));
  o.line = "G0_N excluded " + g_text + (mono ? " (non-increasing)" : " (increasing)") + ", U_N excluded " + u_text +
           ", U linear in gamma within " + fmt("%.1f", 100 * worst) + "%";
  return o;
}

Outcome clusters(const Settings& s)
{
  Outcome o;
  auto c = cluster_contract_check(s.seed, 100);
  o.artifact = c.to_json();
  o.pass = c.pass && c.trials >= 100;
  o.line = std::to_string(c.trials) + " configurations, detail " + c.detail.dump();
  return o;
}

using Criterion = std::function<Outcome(const Settings&)>;

const std::vector<std::pair<Criterion, double>>& criteria()
{
  static const std::vector<std::pair<Criterion, double>> c{
      {lemma, 60}, {inversion, 300}, {covariance, 0}, {lipschitz, 0},
      {reference_solve, 120}, {covers, 0}, {trend, 0}, {clusters, 0}};
  return c;
}

std::vector<Outcome> run_all(const Settings& s, int threads)
{
  set_num_threads(threads);
  std::vector<Outcome> out;
  for (const auto& [f, limit] : criteria()) {
    auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = f(s);
    } catch (const std::exception& e) {
      o.pass = false;
      o.line = std::string("exception: ") + e.what();
    }
    o.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (limit > 0 && o.seconds >= limit) {
      o.pass = false;
      o.line += "; runtime " + fmt("%.1f", o.seconds) + " s exceeds " + fmt("%.0f", limit) + " s";
    }
    out.push_back(std::move(o));
  }
  return out;
}

void write(const fs::path& p, const std::string& text)
{
  fs::create_directories(p.parent_path());
  std::ofstream(p, std::ios::binary) << text;
}

} // namespace

int main(int argc, char** argv)
{
  CLI::App app{"Acceptance criteria 1-9"};
  Settings s;
  std::string out = "acceptance_out";
  std::vector<int> expect_fail;
  app.add_option("--out", out, "artifact directory");
  app.add_option("--seed", s.seed, "random seed");
  app.add_option("--config-dir", s.config_dir, "directory holding r1.json");
  app.add_option("--expect-fail", expect_fail, "criteria known to fail; exit 0 only if exactly these fail");
  CLI11_PARSE(app, argc, argv);

  fs::path dir(out);
  std::map<int, std::vector<Outcome>> runs;
  for (int threads : {1, 8}) runs[threads] = run_all(s, threads);

  json summary = json::array();
  std::set<int> failed;
  const auto& first = runs[1];
  for (std::size_t k = 0; k < first.size(); ++k) {
    int id = int(k) + 1;
    std::string a = first[k].artifact.dump(2) + "\n";
    write(dir / "threads_1" / ("criterion_" + std::to_string(id) + ".json"), a);
    write(dir / "threads_8" / ("criterion_" + std::to_string(id) + ".json"), runs[8][k].artifact.dump(2) + "\n");
    bool pass = first[k].pass;
    if (!pass) failed.insert(id);
    std::printf("criterion %d: %s  %s  [%.1f s]\n", id, pass ? "PASS" : "FAIL", first[k].line.c_str(), first[k].seconds);
    summary.push_back({{"criterion", id}, {"pass", pass}, {"summary", first[k].line}});
  }

  int identical = 0;
  std::vector<int> differing;
  for (std::size_t k = 0; k < first.size(); ++k) {
    bool same = first[k].artifact.dump() == runs[8][k].artifact.dump() && first[k].line == runs[8][k].line &&
                first[k].pass == runs[8][k].pass;
    if (same)
      ++identical;
    else
      differing.push_back(int(k) + 1);
  }
  bool det = differing.empty();
  std::string dline = std::to_string(identical) + "/" + std::to_string(first.size()) +
                      " criterion artifacts byte-identical at --threads 1 and 8";
  for (int d : differing) dline += "; differs: " + std::to_string(d);
  if (!det) failed.insert(9);
  std::printf("criterion 9: %s  %s\n", det ? "PASS" : "FAIL", dline.c_str());
  summary.push_back({{"criterion", 9}, {"pass", det}, {"summary", dline}});
  write(dir / "summary.json", summary.dump(2) + "\n");

  std::set<int> expected(expect_fail.begin(), expect_fail.end());
  std::printf("%zu/9 criteria pass", 9 - failed.size());
  if (!expected.empty()) {
    std::string e;
    for (int x : expected) e += (e.empty() ? "" : ",") + std::to_string(x);
    std::printf("; expected failures: %s", e.c_str());
  }
  std::printf("\n");
  return failed == expected ? 0 : 1;
}
