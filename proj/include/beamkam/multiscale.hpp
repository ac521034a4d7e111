#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <json.hpp>

#include "decay_matrix.hpp"
#include "lattice.hpp"
#include "linop.hpp"
#include "parallel.hpp"

namespace beamkam {

struct MultiscaleParams {
  double tau = 0, tau1 = 0, tau2 = 0;
  double delta = 0.25;
  double chi0 = 0, chi = 0;
  double C1 = 2;
  double Theta = std::numeric_limits<double>::quiet_NaN();
  double Upsilon = 1e3;
  double s0 = 0, s1 = 0, s2 = 0;
  double e = 0;
  double sigma = 0;

  /** @brief The fixed constants of the iteration for a geometry and cluster exponent C1. */
  static MultiscaleParams theory_defaults(const LatticeGeometry& g, double C1 = 2)
  {
    MultiscaleParams p;
    double nu = g.nu, d = g.d, r = g.r;
    p.C1 = C1;
    p.delta = 0.25;
    p.tau1 = 3 * nu + d + 1;
    p.chi0 = 3 * C1 + 9;
    p.chi = p.chi0;
    p.tau = std::max(3 * nu + d + 4, 2 * p.chi0 * nu + 1);
    p.tau2 = 3 * p.tau + 2 * (nu + r) + (nu + d);
    p.s0 = nu + d;
    p.s1 = 12 * p.chi0 * (p.tau + (nu + r) + (nu + d));
    p.s2 = 12 * p.tau2 + 8 * p.s1 + 12;
    p.finish(g);
    return p;
  }

  /** @brief Recompute the dependent constants e and sigma. */
  void finish(const LatticeGeometry& g)
  {
    e = tau2 + g.nu + g.r + s0;
    sigma = tau2 + 3 * delta * s1 + 3;
  }

  nlohmann::json to_json() const
  {
    return {{"tau", tau},   {"tau1", tau1}, {"tau2", tau2},   {"delta", delta}, {"chi0", chi0},
            {"chi", chi},   {"C1", C1},     {"Theta", std::isnan(Theta) ? nlohmann::json(nullptr) : nlohmann::json(Theta)},
            {"Upsilon", Upsilon}, {"s0", s0}, {"s1", s1}, {"s2", s2}, {"e", e}, {"sigma", sigma}};
  }
};

/** @brief Which of the scale relations among the active constants hold. */
inline nlohmann::json consistency_report(const MultiscaleParams& p, const LatticeGeometry& g)
{
  double nu = g.nu, r = g.r, d = g.d;
  return {{"tau2 > 2tau+nu+r+1", p.tau2 > 2 * p.tau + nu + r + 1},
          {"s1 - varrho >= s0", p.s1 - g.varrho() >= p.s0},
          {"chi in [chi0, 2chi0]", p.chi >= p.chi0 && p.chi <= 2 * p.chi0},
          {"delta in (0,1)", p.delta > 0 && p.delta < 1},
          {"s0 = nu+d", p.s0 == nu + d}};
}

inline double theta_default(const DecayMatrix& A, double s0)
{
  return 2 * (1 + s_norm(off_diagonal(A), s0));
}

namespace detail {
inline double diag_value(const DecayMatrix& A, int i)
{
  auto b = A.block(i, i);
  double v = b(0, 0).real();
  Eigen::MatrixXcd expect = v * Eigen::MatrixXcd::Identity(b.rows(), b.cols());
  if ((b - expect).cwiseAbs().maxCoeff() > 1e-12 * std::max(1.0, std::abs(v)))
    throw ValidationError("classify_sites: diagonal blocks must be scalar multiples of the identity");
  return v;
}
inline double log_add(double a, double b)
{
  if (a == -std::numeric_limits<double>::infinity()) return b;
  if (b == -std::numeric_limits<double>::infinity()) return a;
  double m = std::max(a, b);
  return m + std::log(std::exp(a - m) + std::exp(b - m));
}
inline double to_log10(double ln) { return ln / std::log(10.0); }
inline nlohmann::json log10_or_null(double ln)
{
  if (!std::isfinite(ln)) return nullptr;
  return to_log10(ln);
}
} // namespace detail

struct SiteClasses {
  std::vector<int> regular, singular;
};

/** @brief Regular iff |mu~_n| >= Theta (mu~ read off the diagonal of A). */
inline SiteClasses classify_sites(const DecayMatrix& A, double Theta)
{
  SiteClasses c;
  for (std::size_t i = 0; i < A.rows->size(); ++i) {
    double mu = detail::diag_value(A, int(i));
    (std::abs(mu) >= Theta ? c.regular : c.singular).push_back(int(i));
  }
  return c;
}

struct GoodCheck {
  bool good = false;
  bool invertible = false;
  double log_s0 = std::numeric_limits<double>::infinity();
  double log_s1r = std::numeric_limits<double>::infinity();
  double log_bound_s0 = 0, log_bound_s1r = 0;
  Eigen::MatrixXcd inverse;
};

/** @brief Definition of an N-good matrix: invertible with |A^-1|_s <= N^{tau2 + delta s} at s0 and s1-varrho. */
inline GoodCheck check_N_good(const DecayMatrix& A, int N, const MultiscaleParams& p, double varrho)
{
  if (diameter(A.rows->sites()) > 4 * N) throw ValidationError("check_N_good: diam exceeds 4N");
  GoodCheck g;
  double logN = std::log(double(std::max(N, 1)));
  double s1r = p.s1 - varrho;
  g.log_bound_s0 = (p.tau2 + p.delta * p.s0) * logN;
  g.log_bound_s1r = (p.tau2 + p.delta * s1r) * logN;
  Eigen::FullPivLU<Eigen::MatrixXcd> lu(A.data);
  if (lu.rank() < A.data.rows()) return g;
  g.invertible = true;
  g.inverse = lu.inverse();
  DecayMatrix inv(A.cols, A.rows, g.inverse, A.K0, A.torus);
  g.log_s0 = log_s_norm(inv, p.s0);
  g.log_s1r = log_s_norm(inv, std::max(0.0, s1r));
  g.good = g.log_s0 <= g.log_bound_s0 && g.log_s1r <= g.log_bound_s1r;
  return g;
}

struct GoodBadLabels {
  std::vector<int> good, bad;
  std::vector<int> regular;
  std::vector<int> good_by_box;
  std::map<int, int> box_of;
  std::vector<std::vector<int>> boxes;
  std::vector<GoodCheck> box_checks;
  double Theta = 0;
};

namespace detail {
inline std::vector<int> box_members(const DecayMatrix& A, const std::vector<SiteIndex>& box)
{
  std::vector<int> idx;
  for (const auto& s : box) {
    int k = A.rows->find(s);
    if (k >= 0) idx.push_back(k);
  }
  std::sort(idx.begin(), idx.end());
  return idx;
}
} // namespace detail

/**
 * @brief Good = regular, or the clamped 2N-box around the site is N-good.
 */
inline GoodBadLabels label_good_bad(const DecayMatrix& A, int N, const MultiscaleParams& p, const Box& region,
                                    double varrho, const LatticeGeometry& g)
{
  GoodBadLabels L;
  L.Theta = std::isnan(p.Theta) ? theta_default(A, p.s0) : p.Theta;
  auto cls = classify_sites(A, L.Theta);
  L.regular = cls.regular;
  std::map<std::vector<int>, int> box_id;
  std::vector<int> site_box(cls.singular.size());
  for (std::size_t q = 0; q < cls.singular.size(); ++q) {
    auto members = detail::box_members(A, enumerate_box((*A.rows)[cls.singular[q]], N, g, &region));
    auto [it, fresh] = box_id.emplace(members, int(L.boxes.size()));
    if (fresh) L.boxes.push_back(members);
    site_box[q] = it->second;
  }
  L.box_checks.resize(L.boxes.size());
  parallel_for(L.boxes.size(), [&](std::size_t b) {
    L.box_checks[b] = check_N_good(submatrix(A, L.boxes[b], L.boxes[b]), N, p, varrho);
  });
  std::vector<char> good(A.rows->size(), 0);
  for (int i : cls.regular) good[i] = 1;
  for (std::size_t q = 0; q < cls.singular.size(); ++q) {
    int i = cls.singular[q];
    if (L.box_checks[site_box[q]].good) {
      good[i] = 1;
      L.good_by_box.push_back(i);
      L.box_of[i] = site_box[q];
    }
  }
  for (std::size_t i = 0; i < good.size(); ++i) (good[i] ? L.good : L.bad).push_back(int(i));
  return L;
}

struct ClusterPartition {
  std::vector<std::vector<SiteIndex>> clusters;
  int B = 0;
  std::vector<int> diam;
  int min_separation = std::numeric_limits<int>::max();
  int longest_chain_bound = 0;
};

/** @brief Connected components of the graph joining sites at distance <= B. */
inline ClusterPartition partition_clusters(std::vector<SiteIndex> sites, int B)
{
  if (B < 2) throw ValidationError("partition_clusters: B must be >= 2");
  std::sort(sites.begin(), sites.end());
  int n = int(sites.size());
  std::vector<int> parent(n);
  std::iota(parent.begin(), parent.end(), 0);
  std::function<int(int)> root = [&](int x) { return parent[x] == x ? x : parent[x] = root(parent[x]); };
  for (int a = 0; a < n; ++a)
    for (int b = a + 1; b < n; ++b)
      if (site_distance(sites[a], sites[b]) <= B) {
        int ra = root(a), rb = root(b);
        if (ra != rb) parent[std::max(ra, rb)] = std::min(ra, rb);
      }
  std::map<int, std::vector<SiteIndex>> groups;
  for (int a = 0; a < n; ++a) groups[root(a)].push_back(sites[a]);
  ClusterPartition P;
  P.B = B;
  for (auto& [r, v] : groups) {
    P.diam.push_back(diameter(v));
    P.longest_chain_bound = std::max(P.longest_chain_bound, int(v.size()));
    P.clusters.push_back(std::move(v));
  }
  for (std::size_t a = 0; a < P.clusters.size(); ++a)
    for (std::size_t b = a + 1; b < P.clusters.size(); ++b)
      for (const auto& x : P.clusters[a])
        for (const auto& y : P.clusters[b]) P.min_separation = std::min(P.min_separation, site_distance(x, y));
  return P;
}

struct ClusterContract {
  int diam_flags = 0;
  int separation_flags = 0;
  bool ok() const { return diam_flags == 0 && separation_flags == 0; }
};

/** @brief diam <= N^C1 and pairwise distance >= N^2. */
inline ClusterContract check_cluster_contract(const ClusterPartition& P, int N, double C1)
{
  ClusterContract c;
  double dmax = std::pow(double(N), C1);
  for (int d : P.diam)
    if (d > dmax) ++c.diam_flags;
  if (P.clusters.size() > 1 && P.min_separation < N * N) ++c.separation_flags;
  return c;
}

struct InvertResult {
  DecayMatrix inverse;
  nlohmann::json diagnostics;
};

namespace detail {
inline nlohmann::json norm_pair(const DecayMatrix& M, double s0, double s1r)
{
  return {{"s0_log10", log10_or_null(log_s_norm(M, s0))}, {"s1r_log10", log10_or_null(log_s_norm(M, s1r))}};
}

inline std::vector<int> dofs(const SiteList& S, const std::vector<int>& sites)
{
  std::vector<int> d;
  for (int i : sites)
    for (int q = 0; q < S[i].block_dim; ++q) d.push_back(S.offset(i) + q);
  return d;
}

inline Eigen::MatrixXcd take(const Eigen::MatrixXcd& M, const std::vector<int>& r, const std::vector<int>& c)
{
  Eigen::MatrixXcd out(r.size(), c.size());
  for (std::size_t a = 0; a < r.size(); ++a)
    for (std::size_t b = 0; b < c.size(); ++b) out(a, b) = M(r[a], c[b]);
  return out;
}

inline SiteListPtr sub_sites(const SiteList& S, const std::vector<int>& idx)
{
  std::vector<SiteIndex> v;
  for (int i : idx) v.push_back(S[i]);
  return std::make_shared<const SiteList>(std::move(v), S.nu());
}
} // namespace detail

/** @brief Smallest |eigenvalue| (Hermitian) or singular value of a dense matrix. */
inline double smallest_modulus(const Eigen::MatrixXcd& A)
{
  if (A.rows() == 0) return std::numeric_limits<double>::infinity();
  if (is_hermitian(A)) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXcd> es(A, Eigen::EigenvaluesOnly);
    return es.eigenvalues().cwiseAbs().minCoeff();
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXcd> es(A.adjoint() * A, Eigen::EigenvaluesOnly);
  return std::sqrt(std::max(0.0, es.eigenvalues().minCoeff()));
}

/**
 * @brief Inverse of A at scale N' from N-scale box inverses and a
 * cluster correction on the bad sites.
 *
 * Stages: (i) eliminate good sites by local inverses giving u_G + P u = S h;
 * (ii) invert I + P_GG by a Neumann series; (iii) reduce to P^ u_B = S^ h;
 * (iv) left-invert P^ from per-cluster solves plus a Neumann correction.
 */
inline InvertResult invert(const DecayMatrix& A, int N, int Nprime, const MultiscaleParams& p,
                           const LatticeGeometry& g)
{
  using nlohmann::json;
  if (!same_sites(A.rows, A.cols)) throw ValidationError("invert: A must be square on one site set");
  if (A.rows->dim() > kDenseLimit) throw ValidationError("invert: dimension exceeds the dense limit");
  if (N < 1 || Nprime < N) throw ValidationError("invert: need 1 <= N <= N'");
  const SiteList& S = *A.rows;
  const int n = S.dim();
  const double varrho = g.varrho();
  const double s0 = p.s0, s1r = std::max(0.0, p.s1 - varrho);
  json diag;
  diag["params"] = p.to_json();
  diag["N"] = N;
  diag["Nprime"] = Nprime;
  diag["dimension"] = n;

  DecayMatrix Q = off_diagonal(A);
  double logQ1 = log_s_norm(Q, s1r);
  bool a1 = logQ1 <= std::log(p.Upsilon);
  diag["preconditions"]["A1"] = {{"Q_s1r_log10", detail::log10_or_null(logQ1)},
                                 {"Upsilon", p.Upsilon},
                                 {"holds", a1}};
  if (!a1) throw NumericalError("A1", "|Q|_{s1-varrho} exceeds Upsilon");
  double smin = smallest_modulus(A.data);
  double inv0 = smin > 0 ? 1.0 / smin : std::numeric_limits<double>::infinity();
  bool a2 = std::log(inv0) <= p.tau * std::log(double(Nprime));
  diag["preconditions"]["A2"] = {{"inverse_op_norm", std::isfinite(inv0) ? json(inv0) : json(nullptr)},
                                 {"bound", std::pow(double(Nprime), p.tau)},
                                 {"holds", a2}};
  if (!a2) throw NumericalError("A2", "||A^-1||_0 exceeds N'^tau");

  Box region = bounding_box(S.sites(), S.coord_dim());
  auto L = label_good_bad(A, N, p, region, varrho, g);
  diag["Theta"] = L.Theta;
  diag["sites"] = {{"total", S.size()},
                   {"regular", L.regular.size()},
                   {"good_by_box", L.good_by_box.size()},
                   {"bad", L.bad.size()},
                   {"boxes_checked", L.boxes.size()}};

  std::vector<SiteIndex> bad_sites;
  for (int i : L.bad) bad_sites.push_back(S[i]);
  ClusterPartition part = partition_clusters(bad_sites, std::max(2, N * N));
  auto contract = check_cluster_contract(part, N, p.C1);
  {
    json cl = json::array();
    for (std::size_t a = 0; a < part.clusters.size(); ++a)
      cl.push_back({{"size", part.clusters[a].size()}, {"diam", part.diam[a]}});
    diag["preconditions"]["A3"] = {{"clusters", cl},
                                   {"min_separation", part.clusters.size() > 1 ? json(part.min_separation) : json(nullptr)},
                                   {"diam_flags", contract.diam_flags},
                                   {"separation_flags", contract.separation_flags},
                                   {"holds", contract.ok()}};
  }
  if (!contract.ok()) throw NumericalError("A3", "bad sites do not split into separated clusters");

  {
    int reclass = 0;
    for (int i : L.bad) {
      auto members = detail::box_members(A, enumerate_box(S[i], 2 * N, g, &region));
      if (check_N_good(submatrix(A, members, members), N, p, varrho).good) ++reclass;
    }
    diag["wider_box_reclassifiable"] = reclass;
  }

  // stage (i)
  std::vector<int> Gd = detail::dofs(S, L.good), Bd = detail::dofs(S, L.bad);
  std::vector<int> pos_in_G(n, -1);
  for (std::size_t a = 0; a < Gd.size(); ++a) pos_in_G[Gd[a]] = int(a);
  Eigen::MatrixXcd P = Eigen::MatrixXcd::Zero(Gd.size(), n);
  Eigen::MatrixXcd Sm = Eigen::MatrixXcd::Zero(Gd.size(), n);
  std::vector<Eigen::MatrixXcd> Fdata(L.boxes.size());
  parallel_for(L.boxes.size(), [&](std::size_t b) {
    if (!L.box_checks[b].good) return;
    auto fd = detail::dofs(S, L.boxes[b]);
    Eigen::MatrixXcd AF(fd.size(), n);
    for (std::size_t a = 0; a < fd.size(); ++a) AF.row(a) = A.data.row(fd[a]);
    Fdata[b] = L.box_checks[b].inverse * AF;
  });
  std::vector<int> box_of_site(S.size(), -1);
  for (auto [i, b] : L.box_of) box_of_site[i] = b;
  parallel_for(L.good.size(), [&](std::size_t q) {
    int i = L.good[q];
    int bd = S[i].block_dim, off = S.offset(i);
    int b = box_of_site[i];
    if (b < 0) {
      double mu = detail::diag_value(A, i);
      for (int t = 0; t < bd; ++t) {
        int row = pos_in_G[off + t];
        P.row(row) = Q.data.row(off + t) / mu;
        Sm(row, off + t) = 1.0 / mu;
      }
      return;
    }
    const auto& box = L.boxes[b];
    auto fd = detail::dofs(S, box);
    int local = 0;
    for (int k : box) {
      if (k == i) break;
      local += S[k].block_dim;
    }
    const auto& inv = L.box_checks[b].inverse;
    for (int t = 0; t < bd; ++t) {
      int row = pos_in_G[off + t];
      P.row(row) = Fdata[b].row(local + t);
      for (int c : fd) P(row, c) = 0;
      for (std::size_t c = 0; c < fd.size(); ++c) Sm(row, fd[c]) = inv(local + t, c);
    }
  });
  auto Gsites = detail::sub_sites(S, L.good);
  auto Bsites = detail::sub_sites(S, L.bad);
  auto Asites = A.rows;
  DecayMatrix Pm(Gsites, Asites, P, A.K0, A.torus), Smat(Gsites, Asites, Sm, A.K0, A.torus);
  diag["stages"]["i"] = {{"P", detail::norm_pair(Pm, s0, s1r)}, {"S", detail::norm_pair(Smat, s0, s1r)}};

  // stage (ii)
  Eigen::MatrixXcd Ptil, Stil;
  {
    std::vector<int> allG(Gd.size());
    std::iota(allG.begin(), allG.end(), 0);
    DecayMatrix PGG(Gsites, Gsites, detail::take(P, allG, Gd), A.K0, A.torus);
    LeftInverseReport rep;
    DecayMatrix Inv = L.good.empty()
                          ? DecayMatrix::identity(Gsites, A.K0, A.torus)
                          : perturb_left_inverse(DecayMatrix::identity(Gsites, A.K0, A.torus), PGG, s0, &rep, "stage (ii)");
    Eigen::SparseMatrix<cplx> Ssp = Sm.sparseView();
    Stil = Inv.data * Ssp;
    Eigen::MatrixXcd PGB = detail::take(P, allG, Bd);
    Ptil = -(Inv.data * PGB);
    diag["stages"]["ii"] = {{"variant", rep.variant},
                            {"terms", rep.terms},
                            {"product_s0", rep.product_s0},
                            {"product_op", rep.product_op},
                            {"P_GG", detail::norm_pair(PGG, s0, s1r)},
                            {"Ptilde", detail::norm_pair(DecayMatrix(Gsites, Bsites, Ptil, A.K0, A.torus), s0, s1r)},
                            {"Stilde", detail::norm_pair(DecayMatrix(Gsites, Asites, Stil, A.K0, A.torus), s0, s1r)}};
  }

  Eigen::MatrixXcd Inverse = Eigen::MatrixXcd::Zero(n, n);
  if (L.bad.empty()) {
    for (std::size_t a = 0; a < Gd.size(); ++a) Inverse.row(Gd[a]) = Stil.row(a);
    diag["stages"]["iii"] = nullptr;
    diag["stages"]["iv"] = nullptr;
  } else {
    // stage (iii)
    Eigen::SparseMatrix<cplx> Asp = A.data.sparseView();
    Eigen::MatrixXcd AG(n, Gd.size()), AB(n, Bd.size());
    for (std::size_t a = 0; a < Gd.size(); ++a) AG.col(a) = A.data.col(Gd[a]);
    for (std::size_t a = 0; a < Bd.size(); ++a) AB.col(a) = A.data.col(Bd[a]);
    Eigen::SparseMatrix<cplx> AGs = AG.sparseView();
    Eigen::MatrixXcd Phat = AGs * Ptil + AB;
    Eigen::MatrixXcd Shat = Eigen::MatrixXcd::Identity(n, n) - AGs * Stil;
    DecayMatrix Ph(Asites, Bsites, Phat, A.K0, A.torus), Sh(Asites, Asites, Shat, A.K0, A.torus);
    diag["stages"]["iii"] = {{"Phat", detail::norm_pair(Ph, s0, s1r)}, {"Shat", detail::norm_pair(Sh, s0, s1r)}};

    // stage (iv)
    int halo = (N * N) / 4;
    std::vector<int> bpos(S.size(), -1);
    for (std::size_t a = 0; a < L.bad.size(); ++a) bpos[L.bad[a]] = int(a);
    std::vector<int> bdof_off(L.bad.size() + 1, 0);
    for (std::size_t a = 0; a < L.bad.size(); ++a) bdof_off[a + 1] = bdof_off[a] + S[L.bad[a]].block_dim;
    Eigen::MatrixXcd X = Eigen::MatrixXcd::Zero(n, Bd.size());
    Eigen::MatrixXcd Y = Eigen::MatrixXcd::Zero(Bd.size(), n);
    json cinfo = json::array();
    std::vector<std::pair<std::vector<int>, std::vector<int>>> cl_idx(part.clusters.size());
    for (std::size_t c = 0; c < part.clusters.size(); ++c) {
      std::vector<int> cols, rows;
      for (const auto& s : part.clusters[c]) {
        int i = S.find(s);
        for (int t = 0; t < S[i].block_dim; ++t) cols.push_back(bdof_off[bpos[i]] + t);
      }
      for (std::size_t i = 0; i < S.size(); ++i) {
        int dmin = std::numeric_limits<int>::max();
        for (const auto& s : part.clusters[c]) dmin = std::min(dmin, site_distance(S[i], s));
        if (dmin <= halo)
          for (int t = 0; t < S[i].block_dim; ++t) rows.push_back(S.offset(i) + t);
      }
      cl_idx[c] = {rows, cols};
    }
    std::vector<std::string> failures(part.clusters.size());
    std::vector<double> cond(part.clusters.size());
    parallel_for(part.clusters.size(), [&](std::size_t c) {
      const auto& [rows, cols] = cl_idx[c];
      Eigen::MatrixXcd Xc = detail::take(Phat, rows, cols);
      Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXcd> cod(Xc);
      if (cod.rank() < Eigen::Index(cols.size())) {
        failures[c] = "cluster block is rank deficient";
        return;
      }
      Eigen::MatrixXcd Yc = cod.pseudoInverse();
      for (std::size_t a = 0; a < rows.size(); ++a)
        for (std::size_t b = 0; b < cols.size(); ++b) X(rows[a], cols[b]) = Xc(a, b);
      for (std::size_t b = 0; b < cols.size(); ++b)
        for (std::size_t a = 0; a < rows.size(); ++a) Y(cols[b], rows[a]) = Yc(b, a);
      cond[c] = op_norm_dense(Yc);
    });
    for (std::size_t c = 0; c < failures.size(); ++c) {
      if (!failures[c].empty()) throw NumericalError("stage (iv)", failures[c]);
      cinfo.push_back({{"sites", part.clusters[c].size()}, {"halo_rows", cl_idx[c].first.size()}, {"Y_op_norm", cond[c]}});
    }
    DecayMatrix Ym(Bsites, Asites, Y, A.K0, A.torus), Zm(Asites, Bsites, Phat - X, A.K0, A.torus);
    LeftInverseReport rep;
    DecayMatrix Lft = perturb_left_inverse(Ym, Zm, s0, &rep, "stage (iv)");
    Eigen::MatrixXcd W = Lft.data * Shat;
    Eigen::MatrixXcd WG = Ptil * W + Stil;
    for (std::size_t a = 0; a < Gd.size(); ++a) Inverse.row(Gd[a]) = WG.row(a);
    for (std::size_t a = 0; a < Bd.size(); ++a) Inverse.row(Bd[a]) = W.row(a);
    diag["stages"]["iv"] = {{"halo_radius", halo},
                            {"clusters", cinfo},
                            {"X", detail::norm_pair(DecayMatrix(Asites, Bsites, X, A.K0, A.torus), s0, s1r)},
                            {"Y", detail::norm_pair(Ym, s0, s1r)},
                            {"Z", detail::norm_pair(Zm, s0, s1r)},
                            {"variant", rep.variant},
                            {"terms", rep.terms},
                            {"product_s0", rep.product_s0},
                            {"product_op", rep.product_op}};
  }

  DecayMatrix R(A.cols, A.rows, Inverse, A.K0, A.torus);
  json bc = json::object();
  for (auto [name, s] : {std::pair<const char*, double>{"s0", s0}, {"s1r", s1r}}) {
    double lhs = log_s_norm(R, s);
    double rhs = std::log(0.25) + p.tau2 * std::log(double(Nprime)) +
                 detail::log_add(p.delta * s * std::log(double(Nprime)), log_s_norm(Q, s));
    bc[name] = {{"inverse_log10", detail::log10_or_null(lhs)},
                {"bound_log10", detail::log10_or_null(rhs)},
                {"ratio_log10", detail::log10_or_null(lhs - rhs)},
                {"holds", lhs <= rhs}};
  }
  diag["bound_check"] = bc;
  return {R, diag};
}

} // namespace beamkam
