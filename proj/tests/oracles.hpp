#pragma once

// Independent reference implementations used only by the tests.

#include <cmath>
#include <map>
#include <numbers>
#include <vector>

#include <Eigen/Dense>

#include <beamkam/config.hpp>
#include <beamkam/sobolev.hpp>

namespace oracle {

using beamkam::cplx;
using beamkam::FourierField;
using beamkam::SiteIndex;

/** @brief (uv)_n = sum_k u_k v_{n-k}, double loop. */
inline FourierField naive_multiply(const FourierField& u, const FourierField& v)
{
  FourierField out(u.geom());
  for (const auto& [a, x] : u.coeffs())
    for (const auto& [b, y] : v.coeffs()) {
      SiteIndex n = a;
      for (std::size_t k = 0; k < n.l.size(); ++k) n.l[k] += b.l[k];
      for (std::size_t k = 0; k < n.j.size(); ++k) n.j[k] += b.j[k];
      out.add(n, x(0) * y(0));
    }
  return out;
}

/** @brief Value of a field at one point by direct summation. */
inline cplx evaluate(const FourierField& u, const std::vector<double>& phi, const std::vector<double>& x)
{
  cplx s = 0;
  for (const auto& [n, b] : u.coeffs()) {
    double arg = 0;
    for (std::size_t k = 0; k < n.l.size(); ++k) arg += n.l[k] * phi[k];
    for (std::size_t k = 0; k < n.j.size(); ++k) arg += n.j[k] * x[k];
    s += b(0) * std::exp(cplx(0, arg));
  }
  return s;
}

/**
 * @brief Coefficients of F(u) = sum_k c_k u^{p_k} on the box |n| <= Nout of a
 * nu = d = 1 torus field, by naive DFT on an M x M grid.
 */
inline FourierField naive_compose(const beamkam::NonlinearitySpec& f, const FourierField& u, int M, int Nout)
{
  std::vector<cplx> vals(M * M);
  for (int a = 0; a < M; ++a)
    for (int b = 0; b < M; ++b) {
      std::vector<double> phi{2 * std::numbers::pi * a / M}, x{2 * std::numbers::pi * b / M};
      cplx uv = evaluate(u, phi, x);
      cplx s = 0;
      for (const auto& t : f.terms) s += evaluate(t.coeff, phi, x) * std::pow(uv, t.power);
      vals[a * M + b] = s;
    }
  FourierField out(u.geom());
  for (int l = -Nout; l <= Nout; ++l)
    for (int j = -Nout; j <= Nout; ++j) {
      cplx s = 0;
      for (int a = 0; a < M; ++a)
        for (int b = 0; b < M; ++b)
          s += vals[a * M + b] * std::exp(cplx(0, -2 * std::numbers::pi * (double(l) * a + double(j) * b) / M));
      s /= double(M) * M;
      if (std::abs(s) > 0) out.set(SiteIndex({l}, {j}), s);
    }
  return out;
}

/**
 * @brief Galerkin solve of  L u - eps F(u) = 0  on |l|, |j| <= N for
 * nu = d = 1 in the even basis cos(l phi) cos(j x), by Newton with dense LU.
 *
 * Nonlinearity terms are evaluated pointwise on a product cosine grid; the
 * Jacobian uses cos a cos b = (cos(a-b) + cos(a+b)) / 2 on the cosine
 * coefficients of F'(u).
 */
struct NewtonResult {
  Eigen::MatrixXd a; // a(l, j), l, j = 0..N
  int iterations = 0;
  double residual = 0;
  std::vector<double> history;
};

struct CosGrid {
  int K = 0, N = 0;
  Eigen::MatrixXd C; // K x (N+1), cos(l t_k)

  CosGrid(int K_, int N_) : K(K_), N(N_), C(K_, N_ + 1)
  {
    for (int k = 0; k < K; ++k)
      for (int l = 0; l <= N; ++l) C(k, l) = std::cos(l * std::numbers::pi * (k + 0.5) / K);
  }
  /** @brief Values on the grid from cos-cos coefficients. */
  Eigen::MatrixXd values(const Eigen::MatrixXd& a) const { return C * a * C.transpose(); }
  /** @brief Cos-cos coefficients up to degree P from grid values; exact for degree < 2K - P. */
  static Eigen::MatrixXd coefficients(const Eigen::MatrixXd& v, int P, int K)
  {
    Eigen::MatrixXd W(K, P + 1);
    for (int k = 0; k < K; ++k)
      for (int p = 0; p <= P; ++p) W(k, p) = (p == 0 ? 1.0 : 2.0) / K * std::cos(p * std::numbers::pi * (k + 0.5) / K);
    return W.transpose() * v * W;
  }
};

/** @brief Cos-cos coefficient of a field (cos-symmetric) at (l, j) >= 0. */
inline double cos_coeff(const FourierField& f, int l, int j)
{
  double s = f.get(SiteIndex({l}, {j})).real();
  return s * (l > 0 ? 2 : 1) * (j > 0 ? 2 : 1);
}

inline Eigen::MatrixXd field_values(const FourierField& f, const CosGrid& g)
{
  int R = std::max(1, f.support_radius());
  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(R + 1, R + 1);
  for (int l = 0; l <= R; ++l)
    for (int j = 0; j <= R; ++j) a(l, j) = cos_coeff(f, l, j);
  CosGrid h(g.K, R);
  return h.values(a);
}

inline double half_product(int lp, int l, int p) { return 0.5 * ((std::abs(p - l) == lp) + (p + l == lp)); }

inline NewtonResult dense_newton(const beamkam::RunConfig& c, int N, double tol = 1e-14, int max_iter = 20)
{
  int maxp = 1;
  for (const auto& t : c.f.terms) maxp = std::max(maxp, t.power);
  int K = 32 * ((maxp + 1) * N / 32 + 2);
  CosGrid G(K, N);
  std::vector<Eigen::MatrixXd> coeff_vals;
  for (const auto& t : c.f.terms) coeff_vals.push_back(field_values(t.coeff, G));
  double eps = c.solver.eps, lam = c.freq.lambda, w = c.freq.omega0[0];
  int n1 = N + 1, dim = n1 * n1;
  auto idx = [n1](int l, int j) { return l * n1 + j; };
  std::vector<double> mu(dim);
  for (int l = 0; l <= N; ++l)
    for (int j = 0; j <= N; ++j) mu[idx(l, j)] = -std::pow(lam * w * l, 2) + std::pow(double(j), 4) + c.m;
  std::vector<std::pair<int, double>> vbar; // (q, cos coefficient), l = 0 only
  for (const auto& [n, b] : c.Vbar.coeffs())
    if (n.l[0] == 0 && n.j[0] > 0) vbar.emplace_back(n.j[0], cos_coeff(c.Vbar, 0, n.j[0]));

  NewtonResult res;
  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(n1, n1);
  for (int it = 0; it < max_iter; ++it) {
    Eigen::MatrixXd u = G.values(a);
    Eigen::MatrixXd F = Eigen::MatrixXd::Zero(K, K), dF = Eigen::MatrixXd::Zero(K, K);
    for (std::size_t t = 0; t < c.f.terms.size(); ++t) {
      int p = c.f.terms[t].power;
      F += coeff_vals[t].cwiseProduct(u.array().pow(p).matrix());
      if (p > 0) dF += p * coeff_vals[t].cwiseProduct(u.array().pow(p - 1).matrix());
    }
    Eigen::MatrixXd Fc = CosGrid::coefficients(F, N, K);
    Eigen::MatrixXd b = CosGrid::coefficients(dF, 2 * N, K);
    Eigen::VectorXd r(dim);
    for (int l = 0; l <= N; ++l)
      for (int j = 0; j <= N; ++j) {
        double v = mu[idx(l, j)] * a(l, j) - eps * Fc(l, j);
        for (auto [q, vq] : vbar)
          for (int jj = 0; jj <= N; ++jj) v += vq * half_product(j, jj, q) * a(l, jj);
        r(idx(l, j)) = v;
      }
    res.residual = r.cwiseAbs().maxCoeff();
    res.history.push_back(res.residual);
    if (res.residual < tol && it > 0) break;
    Eigen::MatrixXd J = Eigen::MatrixXd::Zero(dim, dim);
    for (int lp = 0; lp <= N; ++lp)
      for (int l = 0; l <= N; ++l) {
        int ps[2] = {std::abs(lp - l), lp + l};
        for (int jp = 0; jp <= N; ++jp)
          for (int j = 0; j <= N; ++j) {
            int qs[2] = {std::abs(jp - j), jp + j};
            double s = 0;
            for (int x = 0; x < 2; ++x) {
              if (x == 1 && ps[1] == ps[0]) continue;
              double cp = half_product(lp, l, ps[x]);
              for (int y = 0; y < 2; ++y) {
                if (y == 1 && qs[1] == qs[0]) continue;
                s += cp * half_product(jp, j, qs[y]) * b(ps[x], qs[y]);
              }
            }
            J(idx(lp, jp), idx(l, j)) = -eps * s;
          }
      }
    for (int k = 0; k < dim; ++k) J(k, k) += mu[k];
    for (int l = 0; l <= N; ++l)
      for (int j = 0; j <= N; ++j)
        for (auto [q, vq] : vbar)
          for (int jj = 0; jj <= N; ++jj) J(idx(l, j), idx(l, jj)) += vq * half_product(j, jj, q);
    Eigen::VectorXd d = J.partialPivLu().solve(-r);
    for (int l = 0; l <= N; ++l)
      for (int j = 0; j <= N; ++j) a(l, j) += d(idx(l, j));
    res.iterations = it + 1;
  }
  res.a = a;
  return res;
}

/** @brief Cos-cos coefficients as a complex Fourier field. */
inline FourierField to_field(const Eigen::MatrixXd& a, const beamkam::LatticeGeometry& g)
{
  FourierField u(g);
  int N = int(a.rows()) - 1;
  for (int l = -N; l <= N; ++l)
    for (int j = -N; j <= N; ++j) {
      double v = a(std::abs(l), std::abs(j)) / ((l != 0 ? 2 : 1) * (j != 0 ? 2 : 1));
      if (v != 0) u.set(SiteIndex({l}, {j}), v);
    }
  return u;
}

} // namespace oracle
