#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "config.hpp"
#include "decay_matrix.hpp"
#include "errors.hpp"
#include "lattice.hpp"
#include "linop.hpp"
#include "measure.hpp"
#include "multiscale.hpp"
#include "sobolev.hpp"

namespace beamkam {

inline double sup_norm(const FourierField& u)
{
  double m = 0;
  for (const auto& [n, b] : u.coeffs()) m = std::max(m, b.cwiseAbs().maxCoeff());
  return m;
}

/** @brief (lambda omega0.d_phi)^2 u + Delta^2 u + V u, spectrally. */
inline FourierField apply_linear(const OperatorParams& p, const FourierField& u)
{
  FourierField out(u.geom());
  OperatorParams q = p;
  q.theta = 0;
  for (const auto& [n, b] : u.coeffs()) out.coeffs().emplace(n, diagonal_entry(n, q) * b);
  if (!p.Vbar.empty()) out += multiply(p.Vbar, u);
  return out;
}

/** @brief L u - eps F(u), untruncated. */
inline FourierField equation(const RunConfig& c, const FourierField& u)
{
  OperatorParams p = c.base_operator();
  FourierField e = apply_linear(p, u);
  if (c.solver.eps != 0) {
    FourierField F = compose(c.f, u);
    F *= c.solver.eps;
    e -= F;
  }
  return e;
}

/** @brief ||P_N (L u - eps F(u))||_s */
inline double residual(const FourierField& u, const RunConfig& c, int N, double s)
{
  return hs_norm(truncate(equation(c, u), N), s);
}

/** @brief ||P_N^perp (Vbar u - eps F(u))||_s */
inline double tail_residual(const FourierField& u, const RunConfig& c, int N, double s)
{
  FourierField w = c.Vbar.empty() ? FourierField(c.geom) : multiply(c.Vbar, u);
  if (c.solver.eps != 0) {
    FourierField F = compose(c.f, u);
    F *= c.solver.eps;
    w -= F;
  }
  return hs_norm(project(w, N).second, s);
}

/** @brief Operator parameters of L - eps F'(u). */
inline OperatorParams linearize(const RunConfig& c, const FourierField& u)
{
  OperatorParams p = c.base_operator();
  if (c.solver.eps != 0) {
    auto [a, mb] = compose_derivative(c.f, u);
    p.a = a;
    p.mbar = mb;
  }
  return p;
}

/** @brief Smallest eigenvalue of the spatial block at |j| <= N. */
inline double spatial_floor(const RunConfig& c, int N)
{
  OperatorParams p = c.base_operator();
  Eigen::VectorXd ev = spatial_eigenvalues(p, N, std::vector<int>(c.geom.r, 0));
  return ev.size() ? ev.minCoeff() : std::numeric_limits<double>::infinity();
}

/** @brief Inverse of the box operator, applied to fields supported in |n| <= N. */
class BoxInverse {
public:
  std::string path;
  nlohmann::json diagnostics = nlohmann::json::object();
  double inverse_norm = 0;

  static BoxInverse dense(const DecayMatrix& A, const Eigen::MatrixXcd& inv, std::string path)
  {
    BoxInverse b;
    b.path = std::move(path);
    b.sites_ = A.rows;
    b.inv_ = inv;
    b.geom_set_ = false;
    return b;
  }

  /** @brief (D + T' - eps T'')^-1 by exact per-l spatial solves plus a Neumann series in eps T''. */
  static BoxInverse spectral(const OperatorParams& p, int N)
  {
    BoxInverse b;
    b.path = "spectral";
    b.p_ = p;
    b.N_ = N;
    b.geom_set_ = true;
    std::vector<SiteIndex> js;
    Eigen::MatrixXcd H = spatial_block(p, N, std::vector<int>(p.geom.r, 0), &js);
    for (auto& s : js) b.js_.push_back(s.j);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXcd> es(H);
    b.Q_ = es.eigenvectors();
    b.lam_ = es.eigenvalues();
    b.ls_ = l_box(p.geom.nu, N);
    double dmin = std::numeric_limits<double>::infinity();
    for (const auto& l : b.ls_) {
      double f = p.frequency(l);
      for (Eigen::Index k = 0; k < b.lam_.size(); ++k) dmin = std::min(dmin, std::abs(b.lam_(k) - f * f));
    }
    double dinv = 1 / dmin;
    double a1 = 0;
    for (const auto& [n, c] : p.a.coeffs()) a1 += c.cwiseAbs().sum();
    b.q_ = p.eps * dinv * a1;
    b.diagnostics = {{"diag_inverse_norm", dinv}, {"T2_l1_bound", a1}, {"neumann_ratio", b.q_}};
    if (b.q_ > 0.5)
      throw NumericalError("spectral inversion", "eps ||D^-1||_0 ||T''||_0 = " + std::to_string(b.q_) + " exceeds 1/2");
    b.inverse_norm = dinv / (1 - b.q_);
    return b;
  }

  FourierField apply(const FourierField& y) const
  {
    if (!geom_set_) {
      Eigen::VectorXcd x = to_vector(y, *sites_);
      return from_vector(inv_ * x, *sites_, y.geom());
    }
    FourierField x = diag_solve(y);
    if (p_.eps == 0 || p_.a.empty()) return x;
    for (int k = 0; k < 500; ++k) {
      FourierField t = truncate(multiply(p_.a, x), N_);
      t *= p_.eps;
      t += y;
      FourierField xn = diag_solve(t);
      FourierField d = xn;
      d -= x;
      x = std::move(xn);
      if (sup_norm(d) <= 1e-17 + 1e-16 * sup_norm(x)) return x;
    }
    throw NumericalError("spectral inversion", "Neumann series did not converge");
  }

private:
  FourierField diag_solve(const FourierField& y) const
  {
    FourierField out(y.geom());
    Eigen::VectorXcd v(js_.size());
    for (const auto& l : ls_) {
      bool any = false;
      for (std::size_t k = 0; k < js_.size(); ++k) {
        v(k) = y.get(SiteIndex(l, js_[k]));
        any = any || v(k) != cplx(0);
      }
      if (!any) continue;
      double f = p_.frequency(l);
      Eigen::VectorXcd w = Q_.adjoint() * v;
      for (Eigen::Index k = 0; k < w.size(); ++k) w(k) /= (lam_(k) - f * f);
      Eigen::VectorXcd x = Q_ * w;
      for (std::size_t k = 0; k < js_.size(); ++k)
        if (x(k) != cplx(0)) out.set(SiteIndex(l, js_[k]), x(k));
    }
    return out;
  }

  SiteListPtr sites_;
  Eigen::MatrixXcd inv_;
  bool geom_set_ = false;
  OperatorParams p_;
  int N_ = 0;
  std::vector<std::vector<int>> js_, ls_;
  Eigen::MatrixXcd Q_;
  Eigen::VectorXd lam_;
  double q_ = 0;
};

struct StepRecord {
  int n = 0;
  int N = 0;
  double residual_s1 = 0;
  double tail_s1 = 0;
  double rn_s1 = 0;
  double increment_s1 = 0;
  double u_s1 = 0;
  double u_s2 = 0;
  int picard_iterations = 0;
  double picard_ratio = 0;
  std::string inversion_path;
  nlohmann::json inversion = nlohmann::json::object();
  nlohmann::json membership = nlohmann::json::object();

  nlohmann::json to_json() const
  {
    return {{"n", n},
            {"N_n", N},
            {"residual_s1", residual_s1},
            {"tail_s1", tail_s1},
            {"r_n_s1", rn_s1},
            {"increment_s1", increment_s1},
            {"u_s1_norm", u_s1},
            {"u_s2_norm", u_s2},
            {"picard_iterations", picard_iterations},
            {"picard_ratio", picard_ratio},
            {"inversion_path", inversion_path},
            {"inversion", inversion},
            {"lambda_member_flags", membership}};
  }
};

struct IterationState {
  int n = 0;
  int N = 0;
  FourierField u;
  std::vector<StepRecord> history;
};

/** @brief Field-by-box inversion: multiscale when its hypotheses verify, dense otherwise, spectral above the dense limit. */
inline BoxInverse invert_box(const RunConfig& c, const OperatorParams& p, int Nprev, int N, nlohmann::json& member,
                             bool enforce = true)
{
  const auto& g = c.geom;
  std::string mode = c.solver.inversion;
  auto sites = box_sites(g, N, std::vector<int>(g.nu, 0), std::vector<int>(g.r, 0));
  bool small = sites->dim() <= kDenseLimit;
  if (mode == "auto") mode = small ? "multiscale" : "spectral";
  if (!small && mode != "spectral") throw NumericalError("inversion", "box of dimension " + std::to_string(sites->dim()) +
                                                                          " exceeds the dense limit; use spectral");
  if (mode == "spectral") {
    BoxInverse b = BoxInverse::spectral(p, N);
    member["inverse_norm_bound"] = b.inverse_norm;
    member["in_U_N"] = std::log(b.inverse_norm) <= c.ms.tau * std::log(double(N));
    return b;
  }
  DecayMatrix A = assemble_on(p, sites);
  double smin = smallest_modulus(A.data);
  double inv0 = smin > 0 ? 1 / smin : std::numeric_limits<double>::infinity();
  member["inverse_norm"] = std::isfinite(inv0) ? nlohmann::json(inv0) : nlohmann::json(nullptr);
  member["in_U_N"] = std::isfinite(inv0) && std::log(inv0) <= c.ms.tau * std::log(double(N));
  if (enforce && !member["in_U_N"].get<bool>()) return BoxInverse{};
  nlohmann::json fallback = nullptr;
  if (mode == "multiscale") {
    try {
      auto r = invert(A, std::max(1, Nprev), N, c.ms, g);
      BoxInverse b = BoxInverse::dense(A, r.inverse.data, "multiscale");
      b.diagnostics = r.diagnostics;
      b.inverse_norm = inv0;
      return b;
    } catch (const NumericalError& e) {
      fallback = {{"stage", e.stage}, {"reason", e.what()}};
    }
  }
  Eigen::FullPivLU<Eigen::MatrixXcd> lu(A.data);
  if (lu.rank() < A.data.rows()) throw NumericalError("inversion", "box operator is singular on both paths");
  BoxInverse b = BoxInverse::dense(A, lu.inverse(), "dense");
  if (!fallback.is_null()) b.diagnostics["fallback"] = fallback;
  b.inverse_norm = inv0;
  return b;
}

/** @brief Gap of the first Melnikov condition at scale N0 and its worst (l, p). */
inline nlohmann::json melnikov_check(const RunConfig& c)
{
  OperatorParams p = c.base_operator();
  int N0 = c.solver.N0;
  Eigen::VectorXd lam = spatial_eigenvalues(p, N0, std::vector<int>(c.geom.r, 0));
  double best = std::numeric_limits<double>::infinity();
  std::vector<int> wl;
  int wp = -1;
  for (const auto& l : l_box(c.geom.nu, N0)) {
    double f = p.frequency(l);
    for (Eigen::Index k = 0; k < lam.size(); ++k) {
      double g = std::abs(-f * f + lam(k));
      if (g < best) {
        best = g;
        wl = l;
        wp = int(k);
      }
    }
  }
  double thr = c.freq.gamma * std::pow(double(N0), -c.ms.tau1);
  return {{"min_gap", best}, {"threshold", thr}, {"worst_l", wl}, {"worst_p", wp}, {"in_U", best >= thr}};
}

/**
 * @brief u0 = eps L_{N0}^-1 P_{N0} F(u0) by Picard iteration.
 */
inline FourierField initial_solve(const RunConfig& c, StepRecord* rec = nullptr)
{
  StepRecord r;
  r.n = 0;
  r.N = c.solver.N0;
  const auto& g = c.geom;
  FourierField u(g);
  auto mel = melnikov_check(c);
  r.membership["U"] = mel;
  if (!mel["in_U"].get<bool>()) {
    if (rec) *rec = r;
    throw ExclusionError(0, "lambda fails the first Melnikov condition at l = " + mel["worst_l"].dump() +
                                ", p = " + std::to_string(mel["worst_p"].get<int>()));
  }
  if (c.solver.eps == 0) {
    r.inversion_path = "none";
    if (rec) *rec = r;
    return u;
  }
  OperatorParams p = c.base_operator();
  p.eps = 0;
  nlohmann::json member;
  RunConfig lc = c;
  if (lc.solver.inversion == "multiscale") lc.solver.inversion = "dense";
  BoxInverse inv = invert_box(lc, p, 1, c.solver.N0, member, false);
  r.inversion_path = inv.path;
  r.inversion = {{"inverse_norm", inv.inverse_norm}};
  double prev = 0;
  for (int k = 1;; ++k) {
    FourierField F = truncate(compose(c.f, u), c.solver.N0);
    F *= c.solver.eps;
    FourierField un = inv.apply(F);
    un.symmetrize();
    FourierField d = un;
    d -= u;
    double inc = sup_norm(d);
    if (!std::isfinite(inc)) throw NumericalError("initial_solve", "Picard iterate is not finite");
    if (k >= 3 && prev > 0) {
      double ratio = inc / prev;
      r.picard_ratio = std::max(r.picard_ratio, ratio);
      if (inc > 1e3 * c.solver.picard_tol && ratio >= c.solver.contraction_budget)
        throw NumericalError("initial_solve", "contraction of U0 fails: increment ratio " + std::to_string(ratio) +
                                                  " >= budget " + std::to_string(c.solver.contraction_budget) +
                                                  " (eps too large for ||L_N0^-1||_0 = " + std::to_string(inv.inverse_norm) + ")");
    }
    prev = inc;
    u = std::move(un);
    r.picard_iterations = k;
    if (inc < c.solver.picard_tol) break;
    if (k >= c.solver.picard_max) throw NumericalError("initial_solve", "Picard iteration did not reach picard_tol");
  }
  u.drop_small(0);
  r.increment_s1 = hs_norm(u, c.ms.s1);
  if (rec) *rec = r;
  return u;
}

/** @brief One step: h = -L_{N'}(u_n)^-1 (R_n(h) + r_n), u_{n+1} = u_n + h. */
inline void iterate_step(IterationState& st, const RunConfig& c)
{
  int Nn = st.N, N1 = st.N * st.N;
  if (N1 > c.solver.max_N)
    throw NumericalError("truncation", "N_{n+1} = " + std::to_string(N1) + " exceeds solver.max_N = " +
                                           std::to_string(c.solver.max_N));
  StepRecord r;
  r.n = st.n + 1;
  r.N = N1;
  OperatorParams p = linearize(c, st.u);
  if (c.solver.eps > 0 && c.geom.torus) {
    CoverOptions opt;
    opt.tau = c.ms.tau;
    auto good = parameter_good(p, Nn, default_j0_list(c.geom, Nn), opt);
    r.membership["G0_N"] = {{"N", Nn}, {"good", good.good}, {"max_pieces", good.max_pieces}};
    if (!good.good) {
      st.history.push_back(r);
      throw ExclusionError(r.n, "lambda is N-bad at N = " + std::to_string(Nn));
    }
  }
  BoxInverse inv = invert_box(c, p, Nn, N1, r.membership);
  if (!r.membership["in_U_N"].get<bool>()) {
    st.history.push_back(r);
    throw ExclusionError(r.n, "||A_N^-1||_0 exceeds N^tau at N = " + std::to_string(N1));
  }
  r.inversion_path = inv.path;
  r.inversion = inv.diagnostics;

  FourierField rn = truncate(equation(c, st.u), N1);
  {
    FourierField w = c.Vbar.empty() ? FourierField(c.geom) : multiply(c.Vbar, st.u);
    if (c.solver.eps != 0) {
      FourierField F = compose(c.f, st.u);
      F *= c.solver.eps;
      w -= F;
    }
    r.rn_s1 = hs_norm(truncate(project(w, Nn).second, N1), c.ms.s1);
  }
  FourierField Fu = c.solver.eps != 0 ? compose(c.f, st.u) : FourierField(c.geom);
  FourierField h(c.geom);
  double prev = 0;
  for (int k = 1;; ++k) {
    FourierField rhs = rn;
    if (c.solver.eps != 0 && !h.empty()) {
      FourierField uh = st.u;
      uh += h;
      FourierField R = compose(c.f, uh);
      R -= Fu;
      R -= multiply(p.a, h);
      R *= -c.solver.eps;
      rhs += truncate(R, N1);
    }
    FourierField hn = inv.apply(rhs);
    hn *= -1.0;
    hn.symmetrize();
    FourierField d = hn;
    d -= h;
    double inc = sup_norm(d);
    if (!std::isfinite(inc)) throw NumericalError("picard", "step iterate is not finite");
    if (k >= 3 && prev > 0) {
      double ratio = inc / prev;
      r.picard_ratio = std::max(r.picard_ratio, ratio);
      if (inc > 1e3 * c.solver.picard_tol && ratio >= 1)
        throw NumericalError("picard", "fixed-point map h = U(h) is not contracting (ratio " + std::to_string(ratio) + ")");
    }
    prev = inc;
    h = std::move(hn);
    r.picard_iterations = k;
    if (inc < c.solver.picard_tol) break;
    if (k >= c.solver.picard_max) throw NumericalError("picard", "fixed point did not reach picard_tol");
  }
  h.drop_small(0);
  r.increment_s1 = hs_norm(h, c.ms.s1);
  st.u += h;
  st.u.drop_small(0);
  st.n = r.n;
  st.N = N1;
  r.residual_s1 = residual(st.u, c, N1, c.ms.s1);
  r.tail_s1 = tail_residual(st.u, c, N1, c.ms.s1);
  r.u_s1 = hs_norm(st.u, c.ms.s1);
  r.u_s2 = hs_norm(st.u, c.ms.s2);
  st.history.push_back(r);
}

struct SolveResult {
  std::string status;
  int exit_code = 0;
  FourierField u;
  nlohmann::json certificate;
};

/** @brief Checks required before any solve: potential positivity and Diophantine omega0. */
inline nlohmann::json solve_preconditions(const RunConfig& c)
{
  nlohmann::json j;
  double floor = spatial_floor(c, std::max(1, c.solver.N0));
  j["spatial_floor"] = floor;
  j["kappa0"] = c.kappa0;
  if (!(floor > 0) || floor < c.kappa0)
    throw ValidationError("potential.kappa0: spatial operator floor " + std::to_string(floor) +
                          " is not >= kappa0 > 0");
  auto dio = diophantine_check(c.freq.omega0, c.freq.gamma0, c.geom.nu, c.freq.diophantine_Lmax);
  j["diophantine"] = {{"holds", dio.holds}, {"margin", dio.margin}, {"worst_l", dio.worst_l}};
  if (!dio.holds)
    throw ValidationError("frequency.omega0: Diophantine condition fails at l = " + nlohmann::json(dio.worst_l).dump());
  return j;
}

inline SolveResult solve(const RunConfig& c)
{
  if (!c.geom.torus) throw ValidationError("geometry.torus: the nonlinear solve needs the torus preset");
  SolveResult out;
  nlohmann::json cert;
  cert["config"] = c.to_json();
  cert["preconditions"] = solve_preconditions(c);
  IterationState st;
  st.N = c.solver.N0;
  st.u = FourierField(c.geom);
  auto finish = [&](const std::string& status, int code) {
    nlohmann::json steps = nlohmann::json::array(), ladder = nlohmann::json::array(), trail = nlohmann::json::array();
    for (const auto& r : st.history) {
      steps.push_back(r.to_json());
      ladder.push_back(r.residual_s1 + r.tail_s1);
      trail.push_back({{"n", r.n}, {"flags", r.membership}});
    }
    cert["status"] = status;
    cert["steps"] = steps;
    cert["residual_ladder"] = ladder;
    cert["membership_trail"] = trail;
    cert["solution_norms"] = {{"s1", hs_norm(st.u, c.ms.s1)}, {"s2", hs_norm(st.u, c.ms.s2)}};
    out.status = status;
    out.exit_code = code;
    out.u = st.u;
    out.certificate = cert;
    return out;
  };
  try {
    StepRecord r0;
    try {
      st.u = initial_solve(c, &r0);
    } catch (...) {
      st.history.push_back(r0);
      throw;
    }
    r0.residual_s1 = residual(st.u, c, st.N, c.ms.s1);
    r0.tail_s1 = tail_residual(st.u, c, st.N, c.ms.s1);
    r0.u_s1 = hs_norm(st.u, c.ms.s1);
    r0.u_s2 = hs_norm(st.u, c.ms.s2);
    st.history.push_back(r0);
    while (true) {
      const auto& last = st.history.back();
      if (last.residual_s1 + last.tail_s1 < c.solver.tol && st.n >= c.solver.min_steps) break;
      if (st.n >= c.solver.max_steps)
        throw NumericalError("max-iterations", "residual " + std::to_string(last.residual_s1 + last.tail_s1) +
                                                   " above tol after " + std::to_string(st.n) + " steps");
      iterate_step(st, c);
    }
  } catch (const ExclusionError& e) {
    cert["exclusion"] = {{"step", e.step}, {"reason", e.what()}};
    return finish("Cantor-excluded at " + std::to_string(e.step), 3);
  } catch (const NumericalError& e) {
    cert["failure"] = {{"stage", e.stage}, {"reason", e.what()}};
    return finish("failed: " + e.stage, 2);
  }
  return finish("converged", 0);
}

/** @brief Central difference (u(lambda+dl) - u(lambda-dl)) / 2dl of two converged solves. */
inline FourierField lambda_derivative(const RunConfig& c, double dl)
{
  RunConfig a = c, b = c;
  a.freq.lambda += dl;
  b.freq.lambda -= dl;
  auto ra = solve(a), rb = solve(b);
  if (ra.exit_code != 0 || rb.exit_code != 0)
    throw NumericalError("lambda derivative", "a neighbouring lambda is not a good parameter");
  FourierField d = ra.u;
  d -= rb.u;
  d *= 1 / (2 * dl);
  return d;
}

} // namespace beamkam
