#pragma once

#include <cmath>
#include <fstream>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "errors.hpp"
#include "lattice.hpp"
#include "linop.hpp"
#include "multiscale.hpp"
#include "sobolev.hpp"

namespace beamkam {

namespace detail {
class Reader {
public:
  Reader(const nlohmann::json& j, std::string path) : j_(j), path_(std::move(path))
  {
    if (!j_.is_object()) throw ValidationError(path_ + ": expected an object");
  }
  ~Reader() = default;

  bool has(const std::string& k)
  {
    seen_.insert(k);
    return j_.contains(k) && !j_[k].is_null();
  }
  std::string at(const std::string& k) const { return path_ + "." + k; }
  const nlohmann::json& raw(const std::string& k)
  {
    seen_.insert(k);
    return j_[k];
  }

  template <class T>
  T get(const std::string& k, T def)
  {
    if (!has(k)) return def;
    return as<T>(k);
  }
  template <class T>
  T req(const std::string& k)
  {
    if (!has(k)) throw ValidationError(at(k) + ": required");
    return as<T>(k);
  }
  std::optional<double> opt_num(const std::string& k)
  {
    if (!has(k)) return std::nullopt;
    return as<double>(k);
  }

  void finish() const
  {
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (!seen_.count(it.key())) throw ValidationError(path_ + "." + it.key() + ": unknown field");
  }

private:
  template <class T>
  T as(const std::string& k)
  {
    const auto& v = j_[k];
    try {
      if constexpr (std::is_same_v<T, double>) {
        if (!v.is_number()) throw ValidationError(at(k) + ": expected a number");
        double x = v.get<double>();
        if (!std::isfinite(x)) throw ValidationError(at(k) + ": must be finite");
        return x;
      } else if constexpr (std::is_same_v<T, int>) {
        if (!v.is_number_integer()) throw ValidationError(at(k) + ": expected an integer");
        return v.get<int>();
      } else if constexpr (std::is_same_v<T, bool>) {
        if (!v.is_boolean()) throw ValidationError(at(k) + ": expected a boolean");
        return v.get<bool>();
      } else if constexpr (std::is_same_v<T, std::string>) {
        if (!v.is_string()) throw ValidationError(at(k) + ": expected a string");
        return v.get<std::string>();
      } else {
        return v.get<T>();
      }
    } catch (const nlohmann::json::exception&) {
      throw ValidationError(at(k) + ": wrong type");
    }
  }

  const nlohmann::json& j_;
  std::string path_;
  std::set<std::string> seen_;
};
} // namespace detail

struct SolverConfig {
  double eps = 1e-3;
  int N0 = 0;
  double tol = 1e-10;
  double picard_tol = 1e-14;
  int picard_max = 200;
  int max_steps = 6;
  int min_steps = 0;
  int max_N = 128;
  std::string inversion = "auto";
  double contraction_budget = 1.0;
};

struct FrequencyConfig {
  std::vector<double> omega0;
  double gamma0 = 0.25;
  double lambda = 1.0;
  double gamma = 0;
  bool gamma_preset = true;
  int diophantine_Lmax = 200;
};

struct ScanConfig {
  int grid = 512;
  std::vector<int> Ns{4, 8};
  std::vector<double> gammas{0.1, 0.05, 0.025};
};

struct BadThetaConfig {
  int N = 8;
  std::vector<int> j0;
  std::string mode = "exact";
  std::optional<std::pair<double, double>> range;
};

struct RunConfig {
  nlohmann::json geometry_json;
  LatticeGeometry geom;
  double m = 1;
  FourierField Vbar;
  double kappa0 = 0;
  NonlinearitySpec f;
  FrequencyConfig freq;
  SolverConfig solver;
  MultiscaleParams ms;
  ScanConfig scan;
  BadThetaConfig bad_theta;
  std::string out_dir = "out";

  /** @brief Linear part L_lambda + shift theta with no eps term. */
  OperatorParams base_operator() const
  {
    OperatorParams p;
    p.geom = geom;
    p.eps = solver.eps;
    p.lambda = freq.lambda;
    p.omega0 = freq.omega0;
    p.theta = 0;
    p.m = m;
    p.Vbar = Vbar;
    p.a = FourierField(geom);
    p.K0 = norm_constant(geom.dim(), ms.s0);
    return p;
  }

  nlohmann::json to_json() const
  {
    nlohmann::json j;
    j["geometry"] = geometry_json;
    j["potential"] = {{"m", m}, {"Vbar", field_to_json(Vbar)}, {"kappa0", kappa0}};
    nlohmann::json terms = nlohmann::json::array();
    for (const auto& t : f.terms) terms.push_back({{"power", t.power}, {"coeff", field_to_json(t.coeff)}});
    j["nonlinearity"] = {{"terms", terms}};
    j["frequency"] = {{"omega0", freq.omega0},          {"gamma0", freq.gamma0}, {"lambda", freq.lambda},
                      {"gamma", freq.gamma},            {"diophantine_Lmax", freq.diophantine_Lmax}};
    j["solver"] = {{"eps", solver.eps},
                   {"N0", solver.N0},
                   {"tol", solver.tol},
                   {"picard_tol", solver.picard_tol},
                   {"picard_max", solver.picard_max},
                   {"max_steps", solver.max_steps},
                   {"min_steps", solver.min_steps},
                   {"max_N", solver.max_N},
                   {"inversion", solver.inversion},
                   {"contraction_budget", solver.contraction_budget}};
    j["multiscale"] = ms.to_json();
    j["scan"] = {{"grid", scan.grid}, {"Ns", scan.Ns}, {"gammas", scan.gammas}};
    j["bad_theta"] = {{"N", bad_theta.N}, {"j0", bad_theta.j0}, {"mode", bad_theta.mode}};
    if (bad_theta.range) j["bad_theta"]["range"] = {bad_theta.range->first, bad_theta.range->second};
    j["output"] = {{"dir", out_dir}};
    return j;
  }
};

inline RunConfig parse_config(const nlohmann::json& root)
{
  using detail::Reader;
  RunConfig c;
  Reader top(root, "config");

  {
    if (!top.has("geometry")) throw ValidationError("config.geometry: required");
    const auto& gj = top.raw("geometry");
    Reader g(gj, "geometry");
    int nu = g.req<int>("nu");
    int d = g.get<int>("d", 1);
    bool torus = g.get<bool>("torus", true);
    int r = g.get<int>("r", torus ? d : 1);
    auto weights = g.get<std::vector<std::vector<double>>>("weights", {});
    auto rho = g.get<std::vector<double>>("rho", {});
    int z = g.get<int>("z", 1);
    g.finish();
    c.geom = make_geometry(nu, d, r, weights, rho, z, torus);
    c.geometry_json = {{"nu", nu}, {"d", d}, {"r", r}, {"torus", torus}, {"z", z}};
    if (!weights.empty()) c.geometry_json["weights"] = weights;
    if (!rho.empty()) c.geometry_json["rho"] = rho;
  }

  c.Vbar = FourierField(c.geom);
  if (top.has("potential")) {
    Reader p(top.raw("potential"), "potential");
    c.m = p.get<double>("m", 1.0);
    if (p.has("Vbar")) c.Vbar = field_from_json(p.raw("Vbar"), c.geom, "potential.Vbar");
    c.kappa0 = p.get<double>("kappa0", 0.0);
    p.finish();
  }

  if (top.has("nonlinearity")) {
    Reader n(top.raw("nonlinearity"), "nonlinearity");
    if (n.has("terms")) {
      const auto& arr = n.raw("terms");
      if (!arr.is_array()) throw ValidationError("nonlinearity.terms: expected an array");
      for (std::size_t i = 0; i < arr.size(); ++i) {
        std::string path = "nonlinearity.terms[" + std::to_string(i) + "]";
        Reader t(arr[i], path);
        NonlinearitySpec::Term term;
        term.power = t.req<int>("power");
        if (term.power < 0) throw ValidationError(path + ".power: must be >= 0");
        if (!t.has("coeff")) throw ValidationError(path + ".coeff: required");
        term.coeff = field_from_json(t.raw("coeff"), c.geom, path + ".coeff");
        t.finish();
        c.f.terms.push_back(term);
      }
    }
    n.finish();
  }

  if (!top.has("frequency")) throw ValidationError("config.frequency: required");
  {
    Reader f(top.raw("frequency"), "frequency");
    c.freq.omega0 = f.req<std::vector<double>>("omega0");
    c.freq.gamma0 = f.get<double>("gamma0", 0.25);
    c.freq.lambda = f.get<double>("lambda", 1.0);
    auto gm = f.opt_num("gamma");
    c.freq.gamma_preset = !gm;
    c.freq.gamma = gm.value_or(0);
    c.freq.diophantine_Lmax = f.get<int>("diophantine_Lmax", 200);
    f.finish();
    if (int(c.freq.omega0.size()) != c.geom.nu) throw ValidationError("frequency.omega0: expected nu components");
    if (c.freq.gamma0 <= 0) throw ValidationError("frequency.gamma0: must be positive");
    if (c.freq.diophantine_Lmax < 1) throw ValidationError("frequency.diophantine_Lmax: must be >= 1");
  }

  c.ms = MultiscaleParams::theory_defaults(c.geom);
  if (top.has("multiscale")) {
    Reader m(top.raw("multiscale"), "multiscale");
    double C1 = m.get<double>("C1", 2.0);
    c.ms = MultiscaleParams::theory_defaults(c.geom, C1);
    for (auto [key, ptr] : std::initializer_list<std::pair<const char*, double*>>{
             {"tau", &c.ms.tau}, {"tau1", &c.ms.tau1}, {"tau2", &c.ms.tau2}, {"delta", &c.ms.delta},
             {"chi0", &c.ms.chi0}, {"chi", &c.ms.chi}, {"Theta", &c.ms.Theta}, {"Upsilon", &c.ms.Upsilon},
             {"s0", &c.ms.s0}, {"s1", &c.ms.s1}, {"s2", &c.ms.s2}})
      if (auto v = m.opt_num(key)) *ptr = *v;
    m.finish();
    c.ms.finish(c.geom);
    if (!(c.ms.delta > 0 && c.ms.delta < 1)) throw ValidationError("multiscale.delta: must lie in (0,1)");
    if (c.ms.s0 < 0 || c.ms.s1 < 0 || c.ms.s2 < 0) throw ValidationError("multiscale.s: must be nonnegative");
    if (c.ms.tau <= 0) throw ValidationError("multiscale.tau: must be positive");
    if (c.ms.Upsilon <= 0) throw ValidationError("multiscale.Upsilon: must be positive");
  }

  if (top.has("solver")) {
    Reader s(top.raw("solver"), "solver");
    c.solver.eps = s.get<double>("eps", c.solver.eps);
    c.solver.N0 = s.get<int>("N0", 0);
    c.solver.tol = s.get<double>("tol", c.solver.tol);
    c.solver.picard_tol = s.get<double>("picard_tol", c.solver.picard_tol);
    c.solver.picard_max = s.get<int>("picard_max", c.solver.picard_max);
    c.solver.max_steps = s.get<int>("max_steps", c.solver.max_steps);
    c.solver.min_steps = s.get<int>("min_steps", c.solver.min_steps);
    c.solver.max_N = s.get<int>("max_N", c.solver.max_N);
    c.solver.inversion = s.get<std::string>("inversion", c.solver.inversion);
    c.solver.contraction_budget = s.get<double>("contraction_budget", c.solver.contraction_budget);
    s.finish();
  }
  if (c.solver.eps < 0) throw ValidationError("solver.eps: must be nonnegative");
  if (c.solver.tol <= 0 || c.solver.picard_tol <= 0) throw ValidationError("solver.tol: must be positive");
  if (c.solver.max_steps < 0 || c.solver.min_steps < 0) throw ValidationError("solver.max_steps: must be nonnegative");
  if (c.solver.max_N < 1) throw ValidationError("solver.max_N: must be >= 1");
  if (c.solver.contraction_budget <= 0) throw ValidationError("solver.contraction_budget: must be positive");
  {
    static const std::set<std::string> ok{"auto", "multiscale", "dense", "spectral"};
    if (!ok.count(c.solver.inversion))
      throw ValidationError("solver.inversion: must be one of auto, multiscale, dense, spectral");
  }

  if (c.freq.gamma_preset) c.freq.gamma = c.solver.eps > 0 ? std::pow(c.solver.eps, 1 / (c.ms.s2 + 1)) : 1.0;
  if (c.freq.gamma <= 0) throw ValidationError("frequency.gamma: must be positive");
  if (c.solver.N0 == 0) c.solver.N0 = int(std::ceil(32 / c.freq.gamma));
  if (c.solver.N0 < 1) throw ValidationError("solver.N0: must be >= 1");

  if (top.has("scan")) {
    Reader s(top.raw("scan"), "scan");
    c.scan.grid = s.get<int>("grid", c.scan.grid);
    c.scan.Ns = s.get<std::vector<int>>("Ns", c.scan.Ns);
    c.scan.gammas = s.get<std::vector<double>>("gammas", c.scan.gammas);
    s.finish();
    if (c.scan.grid < 1) throw ValidationError("scan.grid: must be >= 1");
    for (int N : c.scan.Ns)
      if (N < 1) throw ValidationError("scan.Ns: entries must be >= 1");
  }

  c.bad_theta.j0.assign(c.geom.r, 0);
  if (top.has("bad_theta")) {
    Reader b(top.raw("bad_theta"), "bad_theta");
    c.bad_theta.N = b.get<int>("N", c.bad_theta.N);
    c.bad_theta.j0 = b.get<std::vector<int>>("j0", c.bad_theta.j0);
    c.bad_theta.mode = b.get<std::string>("mode", c.bad_theta.mode);
    if (b.has("range")) {
      auto r = b.raw("range");
      if (!r.is_array() || r.size() != 2 || !r[0].is_number() || !r[1].is_number())
        throw ValidationError("bad_theta.range: expected [lo, hi]");
      c.bad_theta.range = std::make_pair(r[0].get<double>(), r[1].get<double>());
      if (!(c.bad_theta.range->first <= c.bad_theta.range->second))
        throw ValidationError("bad_theta.range: need lo <= hi");
    }
    b.finish();
    if (c.bad_theta.mode != "exact" && c.bad_theta.mode != "sweep")
      throw ValidationError("bad_theta.mode: must be exact or sweep");
    if (int(c.bad_theta.j0.size()) != c.geom.r) throw ValidationError("bad_theta.j0: expected r components");
  }

  if (top.has("output")) {
    Reader o(top.raw("output"), "output");
    c.out_dir = o.get<std::string>("dir", c.out_dir);
    o.finish();
  }
  top.finish();

  OperatorParams p = c.base_operator();
  validate(p);
  Eigen::VectorXd ev = spatial_eigenvalues(p, std::max(1, c.solver.N0), std::vector<int>(c.geom.r, 0));
  if (c.kappa0 <= 0 || (ev.size() && ev.minCoeff() < c.kappa0))
    throw ValidationError("potential.kappa0: spatial operator floor " + std::to_string(ev.size() ? ev.minCoeff() : 0.0) +
                          " is not >= kappa0 > 0");
  return c;
}

inline RunConfig load_config(const std::string& path)
{
  std::ifstream in(path);
  if (!in) throw ValidationError("config: cannot open " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::parse_error& e) {
    throw ValidationError("config: parse error in " + path + ": " + e.what());
  }
  return parse_config(j);
}

} // namespace beamkam
