#pragma once

#include <cmath>
#include <limits>
#include <map>
#include <mutex>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <json.hpp>

#include "lattice.hpp"
#include "parallel.hpp"
#include "sobolev.hpp"

namespace beamkam {

constexpr int kDenseLimit = 5000;

/**
 * @brief K0 > 4 sum_{n in Z^D} <n>^{-2 s0}, <n> = max(1,|n|).
 *
 * Shells are summed exactly up to a radius R (starting at 200, doubled until
 * the analytic tail bound is below 1e-6 of the partial sum); the tail bound is
 * added so the inequality is strict.
 */
inline double norm_constant(int D, double s0)
{
  if (2 * s0 <= D) throw ValidationError("multiscale.s0: series for K0 diverges (need 2*s0 > nu+r)");
  static std::mutex mu;
  static std::map<std::pair<int, double>, double> cache;
  std::lock_guard<std::mutex> lk(mu);
  auto key = std::make_pair(D, s0);
  if (auto it = cache.find(key); it != cache.end()) return it->second;
  auto shell = [D](double k) { return std::pow(2 * k + 1, D) - std::pow(2 * k - 1, D); };
  auto tail = [D, s0](double R) {
    return 2.0 * D * std::pow(2.0, D - 1) * std::pow(1 + 0.5 / R, D - 1) * std::pow(R, D - 2 * s0) / (2 * s0 - D);
  };
  double S = 1.0;
  int R = 0;
  int target = 200;
  while (true) {
    for (int k = R + 1; k <= target; ++k) S += shell(k) * std::pow(double(k), -2 * s0);
    R = target;
    if (tail(R) < 1e-6 * S || R >= (1 << 24)) break;
    target *= 2;
  }
  double K0 = 4.0 * (S + tail(R));
  cache[key] = K0;
  return K0;
}

/**
 * @brief Block matrix between ordered site lists, stored densely with the
 * block layout given by the site lists.
 */
struct DecayMatrix {
  SiteListPtr rows, cols;
  Eigen::MatrixXcd data;
  double K0 = 1.0;
  bool torus = true;

  DecayMatrix() = default;
  DecayMatrix(SiteListPtr r, SiteListPtr c, double K0_, bool torus_ = true)
      : rows(std::move(r)), cols(std::move(c)), data(Eigen::MatrixXcd::Zero(rows->dim(), cols->dim())), K0(K0_),
        torus(torus_)
  {
  }
  DecayMatrix(SiteListPtr r, SiteListPtr c, Eigen::MatrixXcd m, double K0_, bool torus_ = true)
      : rows(std::move(r)), cols(std::move(c)), data(std::move(m)), K0(K0_), torus(torus_)
  {
  }

  int nrows() const { return int(data.rows()); }
  int ncols() const { return int(data.cols()); }

  auto block(int i, int k) const
  {
    return data.block(rows->offset(i), cols->offset(k), (*rows)[i].block_dim, (*cols)[k].block_dim);
  }
  auto block(int i, int k)
  {
    return data.block(rows->offset(i), cols->offset(k), (*rows)[i].block_dim, (*cols)[k].block_dim);
  }

  static DecayMatrix identity(const SiteListPtr& s, double K0, bool torus = true)
  {
    return DecayMatrix(s, s, Eigen::MatrixXcd::Identity(s->dim(), s->dim()), K0, torus);
  }
};

inline bool same_sites(const SiteListPtr& a, const SiteListPtr& b) { return a == b || *a == *b; }

namespace detail {

/** @brief Max block norm [M(n)] per offset, keyed by offset coordinates. */
struct OffsetTable {
  std::vector<int> lo, width;
  std::vector<double> val;
  int D = 0;

  std::vector<int> offset_of(std::size_t idx) const
  {
    std::vector<int> c(D);
    for (int k = D - 1; k >= 0; --k) {
      c[k] = int(idx % width[k]) + lo[k];
      idx /= width[k];
    }
    return c;
  }
};

inline double block_norm(const Eigen::MatrixXcd& b)
{
  if (b.size() == 1) return std::abs(b(0, 0));
  return Eigen::JacobiSVD<Eigen::MatrixXcd>(b).singularValues()(0);
}

inline OffsetTable offset_table(const DecayMatrix& M)
{
  OffsetTable t;
  const auto& R = *M.rows;
  const auto& C = *M.cols;
  if (R.size() == 0 || C.size() == 0) return t;
  int D = R.coord_dim();
  int nu = R.nu();
  t.D = D;
  Box rb = bounding_box(R.sites(), D), cb = bounding_box(C.sites(), D);
  t.lo.resize(D);
  t.width.resize(D);
  std::size_t total = 1;
  for (int k = 0; k < D; ++k) {
    t.lo[k] = std::min(rb.lo[k] - cb.hi[k], 0);
    int hi = std::max(rb.hi[k] - cb.lo[k], 0);
    t.width[k] = hi - t.lo[k] + 1;
    total *= t.width[k];
  }
  std::size_t zero = 0;
  for (int k = 0; k < D; ++k) zero = zero * t.width[k] + std::size_t(0 - t.lo[k]);
  t.val.assign(total, 0.0);

  bool scalar = R.scalar_blocks() && C.scalar_blocks();
  int nt = std::max(1, num_threads());
  std::size_t chunks = std::min<std::size_t>(std::size_t(nt), R.size());
  std::vector<std::vector<double>> partial(chunks);
  parallel_for(chunks, [&](std::size_t w) {
    auto& tab = partial[w];
    tab.assign(total, 0.0);
    std::size_t lo = R.size() * w / chunks, hi = R.size() * (w + 1) / chunks;
    std::vector<int> diff(D);
    for (std::size_t i = lo; i < hi; ++i) {
      const int* rc = R.coords(i);
      for (std::size_t k = 0; k < C.size(); ++k) {
        double v;
        if (scalar) {
          v = std::abs(M.data(Eigen::Index(i), Eigen::Index(k)));
        } else {
          v = block_norm(M.block(int(i), int(k)));
        }
        if (v == 0) continue;
        const int* cc = C.coords(k);
        bool outside = false;
        std::size_t idx = 0;
        for (int q = 0; q < D; ++q) {
          diff[q] = rc[q] - cc[q];
          if (q >= nu && diff[q] < 0) outside = true;
        }
        if (!M.torus && outside) {
          idx = zero;
        } else {
          for (int q = 0; q < D; ++q) idx = idx * t.width[q] + std::size_t(diff[q] - t.lo[q]);
        }
        if (v > tab[idx]) tab[idx] = v;
      }
    }
  });
  for (const auto& tab : partial)
    for (std::size_t i = 0; i < total; ++i) t.val[i] = std::max(t.val[i], tab[i]);
  return t;
}

} // namespace detail

/** @brief log |M|_s, computed by log-sum-exp so large s does not overflow. */
inline double log_s_norm(const DecayMatrix& M, double s)
{
  if (s < 0) throw ValidationError("s_norm: s must be nonnegative");
  auto t = detail::offset_table(M);
  std::vector<double> terms;
  for (std::size_t i = 0; i < t.val.size(); ++i) {
    if (t.val[i] == 0) continue;
    auto c = t.offset_of(i);
    int sn = 0;
    for (int x : c) sn = std::max(sn, std::abs(x));
    terms.push_back(2 * std::log(t.val[i]) + 2 * s * std::log(std::max(1, sn)));
  }
  if (terms.empty()) return -std::numeric_limits<double>::infinity();
  double mx = *std::max_element(terms.begin(), terms.end());
  double acc = 0;
  for (double x : terms) acc += std::exp(x - mx);
  return 0.5 * (std::log(M.K0) + mx + std::log(acc));
}

inline double s_norm(const DecayMatrix& M, double s) { return std::exp(log_s_norm(M, s)); }

/** @brief Decay profile: sup of [M(n)] over offsets with |n| = k, k = 0..max. */
inline std::vector<double> decay_profile(const DecayMatrix& M)
{
  auto t = detail::offset_table(M);
  std::vector<double> prof;
  for (std::size_t i = 0; i < t.val.size(); ++i) {
    if (t.val[i] == 0) continue;
    auto c = t.offset_of(i);
    int sn = 0;
    for (int x : c) sn = std::max(sn, std::abs(x));
    if (int(prof.size()) <= sn) prof.resize(sn + 1, 0.0);
    prof[sn] = std::max(prof[sn], t.val[i]);
  }
  return prof;
}

inline bool is_hermitian(const Eigen::MatrixXcd& A, double rel = 1e-13)
{
  if (A.rows() != A.cols()) return false;
  double sc = std::max(1.0, A.cwiseAbs().maxCoeff());
  return (A - A.adjoint()).cwiseAbs().maxCoeff() <= rel * sc;
}

/** @brief Largest singular value of a dense matrix. */
inline double op_norm_dense(const Eigen::MatrixXcd& A)
{
  if (A.size() == 0) return 0.0;
  if (A.rows() > kDenseLimit || A.cols() > kDenseLimit)
    throw ValidationError("op_norm: matrix exceeds the dense limit of " + std::to_string(kDenseLimit) + " rows");
  if (is_hermitian(A, 0.0)) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXcd> es(A, Eigen::EigenvaluesOnly);
    return es.eigenvalues().cwiseAbs().maxCoeff();
  }
  Eigen::MatrixXcd G = A.rows() <= A.cols() ? Eigen::MatrixXcd(A * A.adjoint()) : Eigen::MatrixXcd(A.adjoint() * A);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXcd> es(G, Eigen::EigenvaluesOnly);
  return std::sqrt(std::max(0.0, es.eigenvalues().maxCoeff()));
}

inline double op_norm(const DecayMatrix& M) { return op_norm_dense(M.data); }

inline DecayMatrix matmul(const DecayMatrix& A, const DecayMatrix& B)
{
  if (!same_sites(A.cols, B.rows)) throw ValidationError("matmul: inner site sets differ");
  return DecayMatrix(A.rows, B.cols, A.data * B.data, A.K0, A.torus);
}

inline DecayMatrix operator+(const DecayMatrix& A, const DecayMatrix& B)
{
  if (!same_sites(A.rows, B.rows) || !same_sites(A.cols, B.cols)) throw ValidationError("add: site sets differ");
  return DecayMatrix(A.rows, A.cols, A.data + B.data, A.K0, A.torus);
}
inline DecayMatrix operator-(const DecayMatrix& A, const DecayMatrix& B)
{
  if (!same_sites(A.rows, B.rows) || !same_sites(A.cols, B.cols)) throw ValidationError("sub: site sets differ");
  return DecayMatrix(A.rows, A.cols, A.data - B.data, A.K0, A.torus);
}

/** @brief Mh for a field supported on the column sites. */
inline FourierField apply(const DecayMatrix& M, const FourierField& h)
{
  const auto& C = *M.cols;
  Eigen::VectorXcd x = Eigen::VectorXcd::Zero(C.dim());
  for (const auto& [n, b] : h.coeffs()) {
    int k = C.find(n);
    if (k < 0) {
      if (b.norm() == 0) continue;
      throw ValidationError("apply: field has support outside the column sites");
    }
    if (b.size() != C[k].block_dim) throw ValidationError("apply: block dimension mismatch");
    x.segment(C.offset(k), b.size()) = b;
  }
  Eigen::VectorXcd y = M.data * x;
  FourierField out(h.geom());
  const auto& R = *M.rows;
  for (std::size_t i = 0; i < R.size(); ++i) {
    Eigen::VectorXcd b = y.segment(R.offset(i), R[i].block_dim);
    if (b.norm() != 0) out.coeffs().emplace(R[i], b);
  }
  return out;
}

/** @brief Gather a field into a column vector over a site list. */
inline Eigen::VectorXcd to_vector(const FourierField& h, const SiteList& S)
{
  Eigen::VectorXcd x = Eigen::VectorXcd::Zero(S.dim());
  for (std::size_t i = 0; i < S.size(); ++i) {
    auto it = h.coeffs().find(S[i]);
    if (it != h.coeffs().end()) x.segment(S.offset(i), S[i].block_dim) = it->second;
  }
  return x;
}

inline FourierField from_vector(const Eigen::VectorXcd& y, const SiteList& S, const LatticeGeometry& g)
{
  FourierField out(g);
  for (std::size_t i = 0; i < S.size(); ++i) {
    Eigen::VectorXcd b = y.segment(S.offset(i), S[i].block_dim);
    if (b.norm() != 0) out.coeffs().emplace(S[i], b);
  }
  return out;
}

/** @brief Toeplitz matrix of u -> g u: entry (n,n') = g_{n-n'}. */
inline DecayMatrix from_multiplier(const FourierField& g, const SiteListPtr& rows, const SiteListPtr& cols, double K0)
{
  detail::require_torus(g.geom(), "from_multiplier");
  DecayMatrix M(rows, cols, K0, true);
  const auto& R = *rows;
  const auto& C = *cols;
  int D = R.coord_dim();
  std::vector<std::pair<std::vector<int>, cplx>> gc;
  for (const auto& [n, b] : g.coeffs())
    if (b(0) != cplx(0)) gc.emplace_back(n.coords(), b(0));
  parallel_for(R.size(), [&](std::size_t i) {
    std::vector<int> c(D);
    const int* rc = R.coords(i);
    for (const auto& [k, v] : gc) {
      for (int q = 0; q < D; ++q) c[q] = rc[q] - k[q];
      int col = C.find(c);
      if (col >= 0) M.data(Eigen::Index(i), col) += v;
    }
  });
  return M;
}

/** @brief Restriction to row/column index subsets (positions in the site lists). */
inline DecayMatrix submatrix(const DecayMatrix& M, const std::vector<int>& ri, const std::vector<int>& ci)
{
  std::vector<SiteIndex> rs, cs;
  for (int i : ri) rs.push_back((*M.rows)[i]);
  for (int k : ci) cs.push_back((*M.cols)[k]);
  auto R = std::make_shared<const SiteList>(std::move(rs), M.rows->nu());
  auto C = std::make_shared<const SiteList>(std::move(cs), M.cols->nu());
  DecayMatrix S(R, C, M.K0, M.torus);
  for (std::size_t a = 0; a < ri.size(); ++a)
    for (std::size_t b = 0; b < ci.size(); ++b) S.block(int(a), int(b)) = M.block(ri[a], ci[b]);
  return S;
}

struct LeftInverseReport {
  std::string variant;
  double product_s0 = 0;
  double product_op = 0;
  int terms = 0;
};

namespace detail {
inline bool mostly_sparse(const Eigen::MatrixXcd& A)
{
  if (A.size() < 4096) return false;
  Eigen::Index nz = 0;
  for (Eigen::Index i = 0; i < A.size(); ++i)
    if (A.data()[i] != cplx(0)) ++nz;
  return nz * 10 < A.size();
}
} // namespace detail

/**
 * @brief Left inverse of M+P from a left inverse of M: sum_k (-Minv P)^k Minv.
 *
 * Requires |Minv|_{s0}|P|_{s0} <= 1/2, or the operator-norm variant
 * ||Minv||_0 ||P||_0 <= 1/2.  Stops once a term's s0-norm falls below 1e-14
 * of the running sum.
 */
inline DecayMatrix perturb_left_inverse(const DecayMatrix& Minv, const DecayMatrix& P, double s0,
                                        LeftInverseReport* rep = nullptr, const std::string& stage = "neumann")
{
  if (!same_sites(Minv.cols, P.rows) || !same_sites(Minv.rows, P.cols))
    throw ValidationError("perturb_left_inverse: shapes of Minv and P are incompatible");
  LeftInverseReport r;
  double ms = s_norm(Minv, s0), ps = s_norm(P, s0);
  r.product_s0 = ms * ps;
  if (r.product_s0 <= 0.5) {
    r.variant = "s0";
  } else {
    double mo = op_norm(Minv), po = op_norm(P);
    r.product_op = mo * po;
    if (r.product_op <= 0.5)
      r.variant = "op";
    else
      throw NumericalError(stage, "Neumann smallness fails: |Minv|_s0|P|_s0 = " + std::to_string(r.product_s0) +
                                      ", ||Minv||_0||P||_0 = " + std::to_string(r.product_op) + " > 1/2");
  }
  Eigen::MatrixXcd K = -(Minv.data * P.data);
  bool sparse = detail::mostly_sparse(K);
  Eigen::SparseMatrix<cplx> Ks;
  if (sparse) Ks = K.sparseView();
  DecayMatrix sum = Minv;
  DecayMatrix term = Minv;
  for (int k = 1; k <= 1000; ++k) {
    if (sparse)
      term.data = Ks * term.data;
    else
      term.data = K * term.data;
    sum.data += term.data;
    r.terms = k;
    double tn = s_norm(term, s0), sn = s_norm(sum, s0);
    if (tn < 1e-14 * sn || tn == 0) break;
    if (k == 1000) throw NumericalError(stage, "Neumann series did not reach the 1e-14 tail");
  }
  if (rep) *rep = r;
  return sum;
}

inline nlohmann::json matrix_to_json(const DecayMatrix& M)
{
  nlohmann::json j;
  auto sites = [](const SiteList& S) {
    nlohmann::json a = nlohmann::json::array();
    for (const auto& s : S.sites()) a.push_back({{"l", s.l}, {"j", s.j}, {"dim", s.block_dim}});
    return a;
  };
  j["rows"] = sites(*M.rows);
  j["cols"] = sites(*M.cols);
  j["K0"] = M.K0;
  nlohmann::json e = nlohmann::json::array();
  for (Eigen::Index a = 0; a < M.data.rows(); ++a)
    for (Eigen::Index b = 0; b < M.data.cols(); ++b)
      if (M.data(a, b) != cplx(0)) e.push_back({a, b, M.data(a, b).real(), M.data(a, b).imag()});
  j["entries"] = e;
  return j;
}

inline DecayMatrix matrix_from_json(const nlohmann::json& j, int nu)
{
  auto sites = [nu](const nlohmann::json& a) {
    std::vector<SiteIndex> s;
    for (const auto& r : a)
      s.emplace_back(r.at("l").get<std::vector<int>>(), r.at("j").get<std::vector<int>>(), r.value("dim", 1));
    return std::make_shared<const SiteList>(std::move(s), nu);
  };
  DecayMatrix M(sites(j.at("rows")), sites(j.at("cols")), j.at("K0").get<double>());
  for (const auto& e : j.at("entries")) M.data(e[0].get<int>(), e[1].get<int>()) = cplx(e[2].get<double>(), e[3].get<double>());
  return M;
}

} // namespace beamkam
