#pragma once

#include <cmath>
#include <vector>

#include "decay_matrix.hpp"
#include "lattice.hpp"
#include "sobolev.hpp"

namespace beamkam {

struct OperatorParams {
  LatticeGeometry geom;
  double eps = 0;
  double lambda = 1;
  std::vector<double> omega0{1.0};
  double theta = 0;
  double m = 1;
  FourierField Vbar;
  FourierField a;
  double mbar = 0;
  double K0 = 1;

  /** @brief lambda * (omega0 . l) */
  double frequency(const std::vector<int>& l) const
  {
    double s = 0;
    for (std::size_t k = 0; k < l.size(); ++k) s += omega0[k] * l[k];
    return lambda * s;
  }
};

inline void validate(const OperatorParams& p)
{
  if (p.lambda < 0.5 || p.lambda > 1.5) throw ValidationError("frequency.lambda: must lie in [0.5, 1.5]");
  if (int(p.omega0.size()) != p.geom.nu) throw ValidationError("frequency.omega0: expected nu components");
  double n2 = 0;
  for (double w : p.omega0) n2 += w * w;
  if (std::sqrt(n2) > 1 + 1e-15) throw ValidationError("frequency.omega0: |omega0| must be <= 1");
  if (p.eps < 0) throw ValidationError("solver.eps: must be nonnegative");
  SiteIndex zero(std::vector<int>(p.geom.nu, 0), std::vector<int>(p.geom.r, 0));
  if (std::abs(p.Vbar.get(zero)) > 0) throw ValidationError("potential.Vbar: zero mode must vanish (put it in m)");
  for (const auto& [n, b] : p.Vbar.coeffs())
    for (int x : n.l)
      if (x != 0 && b.norm() > 0) throw ValidationError("potential.Vbar: V must not depend on time");
}

/** @brief mu_n = -(lambda omega0.l + theta)^2 + lambda_j^2 + m */
inline double diagonal_entry(const SiteIndex& n, const OperatorParams& p)
{
  double t = p.frequency(n.l) + p.theta;
  double lj = laplacian_eigenvalue(n.j, p.geom);
  return -t * t + lj * lj + p.m;
}

/** @brief D + T' - eps T'' on an arbitrary ordered site list. */
inline DecayMatrix assemble_on(const OperatorParams& p, const SiteListPtr& sites)
{
  DecayMatrix A(sites, sites, p.K0, p.geom.torus);
  const auto& S = *sites;
  for (std::size_t i = 0; i < S.size(); ++i) {
    double mu = diagonal_entry(S[i], p);
    A.block(int(i), int(i)) += mu * Eigen::MatrixXcd::Identity(S[i].block_dim, S[i].block_dim);
  }
  if (!p.Vbar.empty()) A.data += from_multiplier(p.Vbar, sites, sites, p.K0).data;
  if (p.eps != 0 && !p.a.empty()) A.data -= p.eps * from_multiplier(p.a, sites, sites, p.K0).data;
  return A;
}

inline SiteListPtr box_sites(const LatticeGeometry& g, int N, const std::vector<int>& l0, const std::vector<int>& j0)
{
  return make_sites(enumerate_box(SiteIndex(l0, j0), N, g), g.nu);
}

/** @brief A restricted to |l-l0| <= N, |j-j0| <= N. */
inline DecayMatrix assemble(const OperatorParams& p, int N, const std::vector<int>& l0, const std::vector<int>& j0)
{
  return assemble_on(p, box_sites(p.geom, N, l0, j0));
}

/** @brief Off-diagonal part Q = A - Diag(A) (diagonal blocks removed). */
inline DecayMatrix off_diagonal(const DecayMatrix& A)
{
  DecayMatrix Q = A;
  for (std::size_t i = 0; i < A.rows->size(); ++i) {
    int k = A.cols->find((*A.rows)[i]);
    if (k >= 0) Q.block(int(i), k).setZero();
  }
  return Q;
}

/** @brief Spatial block P(Delta^2 + V)P over |j - j0| <= N (Hermitian). */
inline Eigen::MatrixXcd spatial_block(const OperatorParams& p, int N, const std::vector<int>& j0,
                                     std::vector<SiteIndex>* jsites = nullptr)
{
  const auto& g = p.geom;
  Box b;
  for (int k = 0; k < g.r; ++k) {
    b.lo.push_back(j0[k] - N);
    b.hi.push_back(j0[k] + N);
  }
  std::vector<std::vector<int>> js;
  {
    std::vector<int> lo = b.lo, hi = b.hi;
    if (!g.torus)
      for (auto& x : lo) x = std::max(x, 0);
    bool empty = false;
    for (int k = 0; k < g.r; ++k)
      if (hi[k] < lo[k]) empty = true;
    if (!empty) {
      std::vector<int> c = lo;
      while (true) {
        js.push_back(c);
        int k = g.r - 1;
        while (k >= 0 && c[k] == hi[k]) {
          c[k] = lo[k];
          --k;
        }
        if (k < 0) break;
        ++c[k];
      }
    }
  }
  int n = int(js.size());
  Eigen::MatrixXcd H = Eigen::MatrixXcd::Zero(n, n);
  std::unordered_map<std::vector<int>, int, CoordHash> where;
  for (int i = 0; i < n; ++i) where[js[i]] = i;
  for (int i = 0; i < n; ++i) {
    double lj = laplacian_eigenvalue(js[i], g);
    H(i, i) = lj * lj + p.m;
  }
  for (const auto& [k, v] : p.Vbar.coeffs()) {
    cplx val = v(0);
    if (val == cplx(0)) continue;
    for (int i = 0; i < n; ++i) {
      std::vector<int> c(g.r);
      for (int q = 0; q < g.r; ++q) c[q] = js[i][q] - k.j[q];
      auto it = where.find(c);
      if (it != where.end()) H(i, it->second) += val;
    }
  }
  if (jsites) {
    jsites->clear();
    for (auto& j : js) jsites->emplace_back(std::vector<int>(g.nu, 0), j);
  }
  return H;
}

/** @brief Eigenvalues lambda-hat_{j,p} of the spatial block, ascending. */
inline Eigen::VectorXd spatial_eigenvalues(const OperatorParams& p, int N, const std::vector<int>& j0)
{
  Eigen::MatrixXcd H = spatial_block(p, N, j0);
  if (H.rows() == 0) return {};
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXcd> es(H, Eigen::EigenvaluesOnly);
  return es.eigenvalues();
}

/**
 * @brief Relabels a site list centered at (l0, j0) onto the (0, j0)-centered
 * one by l -> l - l0; used to compare covariance pairs entrywise.
 */
inline std::vector<SiteIndex> shift_l(const std::vector<SiteIndex>& s, const std::vector<int>& l0, int sign = -1)
{
  std::vector<SiteIndex> out = s;
  for (auto& n : out)
    for (std::size_t k = 0; k < l0.size(); ++k) n.l[k] += sign * l0[k];
  return out;
}

} // namespace beamkam
