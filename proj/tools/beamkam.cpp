#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include <beamkam/config.hpp>
#include <beamkam/measure.hpp>
#include <beamkam/multiscale.hpp>
#include <beamkam/nashmoser.hpp>
#include <beamkam/parallel.hpp>
#include <beamkam/verify.hpp>

namespace fs = std::filesystem;
using nlohmann::json;
using namespace beamkam;

namespace {

struct Common {
  std::string config;
  std::uint64_t seed = 0;
  int threads = 0;
  std::string out;
};

void write_file(const fs::path& p, const std::string& text)
{
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream f(p, std::ios::binary);
  if (!f) throw ValidationError("output: cannot write " + p.string());
  f << text;
}

void write_json(const fs::path& p, const json& j) { write_file(p, j.dump(2) + "\n"); }

RunConfig need_config(const Common& c)
{
  if (c.config.empty()) throw ValidationError("--config: required for this subcommand");
  return load_config(c.config);
}

fs::path out_dir(const Common& c, const RunConfig* cfg)
{
  if (!c.out.empty()) return c.out;
  return cfg ? fs::path(cfg->out_dir) : fs::path("out");
}

int run_solve(const Common& c)
{
  RunConfig cfg = need_config(c);
  auto res = solve(cfg);
  fs::path dir = out_dir(c, &cfg);
  write_json(dir / "certificate.json", res.certificate);
  write_json(dir / "solution.json", {{"config", cfg.to_json()}, {"status", res.status}, {"u", field_to_json(res.u)}});
  std::cout << "status: " << res.status << "\n";
  if (!res.certificate["steps"].empty()) {
    const auto& last = res.certificate["steps"].back();
    std::cout << "steps: " << last["n"].get<int>() << "  N: " << last["N_n"].get<int>()
              << "  residual_s1: " << last["residual_s1"].get<double>() << "\n";
  }
  return res.exit_code;
}

int run_scan(const Common& c)
{
  RunConfig cfg = need_config(c);
  ScanOptions opt;
  opt.grid = lambda_grid(cfg.scan.grid);
  opt.Ns = cfg.scan.Ns;
  opt.N0 = cfg.solver.N0;
  opt.gamma = cfg.freq.gamma;
  opt.tau1 = cfg.ms.tau1;
  opt.tau = cfg.ms.tau;
  auto rep = scan_lambda(cfg.base_operator(), opt);
  json sum = rep.summary(cfg.solver.eps, cfg.ms.s1, cfg.ms.s2);
  json by_gamma = json::array();
  for (double g : cfg.scan.gammas) by_gamma.push_back({{"gamma", g}, {"excluded_U", rep.excluded_U(g)}});
  sum["excluded_U_by_gamma"] = by_gamma;
  fs::path dir = out_dir(c, &cfg);
  write_file(dir / "scan.csv", rep.to_csv());
  write_json(dir / "scan.json", {{"config", cfg.to_json()}, {"summary", sum}});
  std::cout << sum.dump(2) << "\n";
  return 0;
}

int run_bad_theta(const Common& c, std::optional<int> N, std::vector<int> j0, const std::string& mode)
{
  RunConfig cfg = need_config(c);
  int n = N.value_or(cfg.bad_theta.N);
  if (n < 1) throw ValidationError("--N: must be >= 1");
  if (j0.empty()) j0 = cfg.bad_theta.j0;
  if (int(j0.size()) != cfg.geom.r) throw ValidationError("--j0: expected r components");
  std::string m = mode.empty() ? cfg.bad_theta.mode : mode;
  CoverOptions opt;
  if (m == "exact")
    opt.mode = CoverMode::Exact;
  else if (m == "sweep")
    opt.mode = CoverMode::Sweep;
  else
    throw ValidationError("--mode: must be exact or sweep");
  opt.tau = cfg.ms.tau;
  if (cfg.bad_theta.range) opt.range = *cfg.bad_theta.range;
  auto res = bad_theta_cover(cfg.base_operator(), n, j0, opt);
  json j = {{"config", cfg.to_json()},
            {"N", n},
            {"j0", j0},
            {"mode", m},
            {"eta", res.eta},
            {"widening", res.widening},
            {"resolution", res.resolution},
            {"range", {res.range.first, res.range.second}},
            {"cover", res.cover.to_json()},
            {"within_budget", res.cover.within_budget()}};
  write_json(out_dir(c, &cfg) / "cover.json", j);
  std::cout << "intervals: " << res.cover.intervals.size() << "  measure: " << res.cover.measure()
            << "  within_budget: " << (res.cover.within_budget() ? "true" : "false") << "\n";
  return 0;
}

int run_invert(const Common& c, int N, int Nprime, double theta, const std::string& matrix)
{
  RunConfig cfg = need_config(c);
  if (N < 1) throw ValidationError("--N: must be >= 1");
  if (Nprime == 0) Nprime = int(std::floor(std::pow(double(N), cfg.ms.chi) + 1e-9));
  DecayMatrix A;
  if (!matrix.empty()) {
    std::ifstream in(matrix);
    if (!in) throw ValidationError("--matrix: cannot open " + matrix);
    json mj;
    try {
      in >> mj;
      A = matrix_from_json(mj, cfg.geom.nu);
    } catch (const json::exception& e) {
      throw ValidationError(std::string("--matrix: ") + e.what());
    }
  } else {
    OperatorParams p = cfg.base_operator();
    p.theta = theta;
    A = assemble(p, Nprime, std::vector<int>(cfg.geom.nu, 0), std::vector<int>(cfg.geom.r, 0));
  }
  auto res = invert(A, N, Nprime, cfg.ms, cfg.geom);
  Eigen::MatrixXcd E = res.inverse.data * A.data - Eigen::MatrixXcd::Identity(A.nrows(), A.ncols());
  double err = op_norm_dense(E);
  json j = {{"config", cfg.to_json()},
            {"N", N},
            {"Nprime", Nprime},
            {"theta", theta},
            {"dimension", A.nrows()},
            {"left_identity_error", err},
            {"diagnostics", res.diagnostics}};
  write_json(out_dir(c, &cfg) / "invert.json", j);
  std::cout << "dimension: " << A.nrows() << "  ||inv A - I||_0: " << err << "\n";
  return 0;
}

int run_verify(const Common& c)
{
  auto results = property_suite(c.seed);
  bool ok = true;
  json arr = json::array();
  for (const auto& r : results) {
    std::printf("%-28s %6d  worst_slack %12.4e  %s\n", r.name.c_str(), r.trials, r.worst_slack, r.pass ? "PASS" : "FAIL");
    ok = ok && r.pass;
    arr.push_back(r.to_json());
  }
  if (!c.out.empty()) write_json(fs::path(c.out) / "verify.json", {{"seed", c.seed}, {"checks", arr}});
  return ok ? 0 : 2;
}

} // namespace

int main(int argc, char** argv)
{
  CLI::App app{"Quasi-periodic solutions of the forced beam equation"};
  app.require_subcommand(1);
  Common c;
  auto add_common = [&](CLI::App* s, bool need_cfg) {
    auto* o = s->add_option("--config", c.config, "JSON run configuration");
    if (need_cfg) o->required();
    s->add_option("--seed", c.seed, "random seed");
    s->add_option("--threads", c.threads, "worker threads (default BEAMKAM_THREADS or 1)");
    s->add_option("--out", c.out, "output directory");
  };

  auto* solve_cmd = app.add_subcommand("solve", "Nash-Moser solve with certificate");
  add_common(solve_cmd, true);

  auto* scan_cmd = app.add_subcommand("scan-lambda", "lambda-grid membership scan");
  add_common(scan_cmd, true);

  auto* bt_cmd = app.add_subcommand("bad-theta", "bad-theta interval cover");
  add_common(bt_cmd, true);
  std::optional<int> bt_N;
  std::vector<int> bt_j0;
  std::string bt_mode;
  bt_cmd->add_option("--N", bt_N, "box half-width");
  bt_cmd->add_option("--j0", bt_j0, "spatial center")->expected(1, 16);
  bt_cmd->add_option("--mode", bt_mode, "exact or sweep");

  auto* inv_cmd = app.add_subcommand("invert", "multiscale inverse with diagnostics");
  add_common(inv_cmd, true);
  int inv_N = 2, inv_Np = 0;
  double inv_theta = 0;
  std::string inv_matrix;
  inv_cmd->add_option("--N", inv_N, "small scale");
  inv_cmd->add_option("--Nprime", inv_Np, "large scale (default N^chi)");
  inv_cmd->add_option("--theta", inv_theta, "theta shift of the generated operator");
  inv_cmd->add_option("--matrix", inv_matrix, "matrix JSON instead of the generated operator");

  auto* ver_cmd = app.add_subcommand("verify", "lemma property suite");
  add_common(ver_cmd, false);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }

  try {
    if (c.threads < 0) throw ValidationError("--threads: must be >= 0");
    if (c.threads > 0) set_num_threads(c.threads);
    if (*solve_cmd) return run_solve(c);
    if (*scan_cmd) return run_scan(c);
    if (*bt_cmd) return run_bad_theta(c, bt_N, bt_j0, bt_mode);
    if (*inv_cmd) return run_invert(c, inv_N, inv_Np, inv_theta, inv_matrix);
    if (*ver_cmd) return run_verify(c);
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return 2;
  } catch (const ExclusionError& e) {
    std::cerr << "excluded: " << e.what() << "\n";
    return 3;
  }
  return 1;
}
