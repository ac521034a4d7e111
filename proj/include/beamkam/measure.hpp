#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <boost/math/tools/roots.hpp>
#include <Eigen/Dense>
#include <json.hpp>

#include "decay_matrix.hpp"
#include "lattice.hpp"
#include "linop.hpp"
#include "multiscale.hpp"
#include "parallel.hpp"

namespace beamkam {

struct DiophantineResult {
  bool holds = true;
  std::vector<int> worst_l;
  double margin = std::numeric_limits<double>::infinity();
  double value = 0;
};

/** @brief Brute force |omega0.l| >= 2 gamma0 |l|^-nu over 0 < |l| <= Lmax. */
inline DiophantineResult diophantine_check(const std::vector<double>& omega0, double gamma0, int nu, int Lmax)
{
  if (Lmax < 1) throw ValidationError("diophantine_check: Lmax must be >= 1");
  if (int(omega0.size()) != nu) throw ValidationError("diophantine_check: omega0 must have nu components");
  DiophantineResult r;
  std::vector<int> l(nu, -Lmax);
  while (true) {
    int sup = 0;
    for (int x : l) sup = std::max(sup, std::abs(x));
    if (sup > 0) {
      double dot = 0;
      for (int k = 0; k < nu; ++k) dot += omega0[k] * l[k];
      double m = std::abs(dot) - 2 * gamma0 * std::pow(double(sup), -nu);
      if (m < r.margin) {
        r.margin = m;
        r.worst_l = l;
        r.value = std::abs(dot);
      }
    }
    int k = nu - 1;
    while (k >= 0 && l[k] == Lmax) {
      l[k] = -Lmax;
      --k;
    }
    if (k < 0) break;
    ++l[k];
  }
  r.holds = r.margin >= 0;
  return r;
}

struct IntervalCover {
  std::vector<std::pair<double, double>> intervals;
  double count_budget = std::numeric_limits<double>::infinity();
  double length_budget = std::numeric_limits<double>::infinity();

  double measure() const
  {
    double m = 0;
    for (auto [a, b] : intervals) m += b - a;
    return m;
  }
  /** @brief Number of intervals of length <= length_budget needed to cover the union. */
  double pieces() const
  {
    double n = 0;
    for (auto [a, b] : intervals) n += std::max(1.0, std::ceil((b - a) / length_budget - 1e-12));
    return n;
  }
  bool within_budget() const { return intervals.empty() || pieces() <= count_budget; }

  void merge(double tol = 0)
  {
    std::sort(intervals.begin(), intervals.end());
    std::vector<std::pair<double, double>> out;
    for (auto iv : intervals) {
      if (!out.empty() && iv.first <= out.back().second + tol)
        out.back().second = std::max(out.back().second, iv.second);
      else
        out.push_back(iv);
    }
    intervals = std::move(out);
  }

  bool contains(double x) const
  {
    for (auto [a, b] : intervals)
      if (x >= a && x <= b) return true;
    return false;
  }

  nlohmann::json to_json() const
  {
    nlohmann::json iv = nlohmann::json::array();
    for (auto [a, b] : intervals) iv.push_back({a, b});
    return {{"intervals", iv},
            {"measure", measure()},
            {"pieces", pieces()},
            {"count_budget", count_budget},
            {"length_budget", length_budget},
            {"within_budget", within_budget()}};
  }
};

/** @brief Measure of the symmetric difference of two merged covers. */
inline double symmetric_difference(const IntervalCover& a, const IntervalCover& b)
{
  auto inter = [](const IntervalCover& x, const IntervalCover& y) {
    double m = 0;
    std::size_t i = 0, k = 0;
    while (i < x.intervals.size() && k < y.intervals.size()) {
      double lo = std::max(x.intervals[i].first, y.intervals[k].first);
      double hi = std::min(x.intervals[i].second, y.intervals[k].second);
      if (hi > lo) m += hi - lo;
      if (x.intervals[i].second < y.intervals[k].second)
        ++i;
      else
        ++k;
    }
    return m;
  };
  return a.measure() + b.measure() - 2 * inter(a, b);
}

/** @brief 2((2b1+4)^2+1)(b2/b1)^2: bad theta lie in [-s N^2, s N^2]. */
inline double theta_range_constant(const LatticeGeometry& g)
{
  double q = g.b2 / g.b1;
  return 2 * ((2 * g.b1 + 4) * (2 * g.b1 + 4) + 1) * q * q;
}

inline std::pair<double, double> default_theta_range(const LatticeGeometry& g, int N)
{
  double s = theta_range_constant(g) * N * N;
  return {-s, s};
}

/** @brief Every l with |l| <= N, lexicographic. */
inline std::vector<std::vector<int>> l_box(int nu, int N)
{
  std::vector<std::vector<int>> out;
  std::vector<int> l(nu, -N);
  while (true) {
    out.push_back(l);
    int k = nu - 1;
    while (k >= 0 && l[k] == N) {
      l[k] = -N;
      --k;
    }
    if (k < 0) break;
    ++l[k];
  }
  return out;
}

/** @brief ||T''||_0 of the multiplier by a on the box around (0, j0). */
inline double second_order_norm(const OperatorParams& p, int N, const std::vector<int>& j0)
{
  if (p.a.empty()) return 0;
  auto sites = box_sites(p.geom, N, std::vector<int>(p.geom.nu, 0), j0);
  OperatorParams q = p;
  q.Vbar = FourierField(p.geom);
  q.eps = 0;
  DecayMatrix D = assemble_on(q, sites);
  q.eps = 1;
  DecayMatrix A1 = assemble_on(q, sites);
  return op_norm_dense(D.data - A1.data);
}

enum class CoverMode { Exact, Sweep };

struct CoverOptions {
  CoverMode mode = CoverMode::Exact;
  double tau = 2;
  std::pair<double, double> range{std::numeric_limits<double>::quiet_NaN(), 0};
  double count_budget = std::numeric_limits<double>::quiet_NaN();
  int chunks = 64;
};

struct CoverResult {
  IntervalCover cover;
  double eta = 0;
  double widening = 0;
  double resolution = 0;
  int evaluations = 0;
  double max_center = 0;
  std::pair<double, double> range;
};

namespace detail {
inline std::vector<double> resonance_windows(double lam_hat, double eta, double f,
                                             std::vector<std::pair<double, double>>& out)
{
  std::vector<double> centers;
  if (lam_hat + eta <= 0 || eta <= 0) return centers;
  double hi = std::sqrt(lam_hat + eta);
  if (lam_hat - eta > 0) {
    double lo = std::sqrt(lam_hat - eta);
    out.push_back({lo - f, hi - f});
    out.push_back({-hi - f, -lo - f});
    centers = {std::sqrt(lam_hat) - f, -std::sqrt(lam_hat) - f};
  } else {
    out.push_back({-hi - f, hi - f});
    centers = {-f};
  }
  return centers;
}
} // namespace detail

/**
 * @brief Theta with an eigenvalue of A_{N,j0}(theta) of modulus < N^-tau.
 *
 * Exact mode uses the closed-form windows around +-sqrt(lambda-hat) - lambda omega0.l,
 * widened by eps ||T''||_0.  Sweep mode samples the smallest eigenvalue modulus,
 * stepping by its Lipschitz bound (never below a quarter of the narrowest
 * window) and refining crossings with TOMS 748.
 */
inline CoverResult bad_theta_cover(const OperatorParams& p, int N, const std::vector<int>& j0,
                                   const CoverOptions& opt = {})
{
  const auto& g = p.geom;
  CoverResult res;
  res.eta = std::pow(double(N), -opt.tau);
  res.range = std::isnan(opt.range.first) ? default_theta_range(g, N) : opt.range;
  if (!(res.range.first <= res.range.second)) throw ValidationError("bad_theta_cover: theta range must be finite");
  res.cover.length_budget = res.eta;
  res.cover.count_budget =
      std::isnan(opt.count_budget) ? std::pow(double(N), g.nu + g.d + g.r + 5) : opt.count_budget;
  res.widening = p.eps * second_order_norm(p, N, j0);

  Eigen::VectorXd lam = spatial_eigenvalues(p, N, j0);
  auto ls = l_box(g.nu, N);
  std::vector<std::pair<double, double>> windows;
  std::vector<double> centers;
  for (const auto& l : ls) {
    double f = p.frequency(l);
    for (Eigen::Index q = 0; q < lam.size(); ++q) {
      auto c = detail::resonance_windows(lam(q), res.eta + res.widening, f, windows);
      centers.insert(centers.end(), c.begin(), c.end());
    }
  }
  for (double c : centers) res.max_center = std::max(res.max_center, std::abs(c));

  if (opt.mode == CoverMode::Exact) {
    for (auto [a, b] : windows) {
      a = std::max(a, res.range.first);
      b = std::min(b, res.range.second);
      if (b > a) res.cover.intervals.push_back({a, b});
    }
    res.cover.merge();
    return res;
  }

  std::sort(centers.begin(), centers.end());
  double gap = std::numeric_limits<double>::infinity();
  for (std::size_t k = 1; k < centers.size(); ++k)
    if (centers[k] - centers[k - 1] > res.eta) gap = std::min(gap, centers[k] - centers[k - 1]);
  res.resolution = std::min(res.eta, gap) / 8;
  if (res.eta == 0) return res;
  double narrowest = std::numeric_limits<double>::infinity();
  for (auto [a, b] : windows) narrowest = std::min(narrowest, b - a);
  const double floor_step = std::min(res.resolution, narrowest / 4);

  OperatorParams q = p;
  q.theta = 0;
  auto sites = box_sites(g, N, std::vector<int>(g.nu, 0), j0);
  DecayMatrix A0 = assemble_on(q, sites);
  const auto& S = *sites;
  std::vector<double> fl(S.dim());
  double F = 0;
  for (std::size_t i = 0; i < S.size(); ++i) {
    double f = p.frequency(S[i].l);
    F = std::max(F, std::abs(f));
    for (int t = 0; t < S[i].block_dim; ++t) fl[S.offset(i) + t] = f;
  }
  const double eta = res.eta;
  const double h = res.resolution;
  int chunks = std::max(1, opt.chunks);
  std::vector<std::vector<std::pair<double, double>>> found(chunks);
  std::vector<int> evals(chunks, 0);
  parallel_for(std::size_t(chunks), [&](std::size_t c) {
    double a = res.range.first + (res.range.second - res.range.first) * double(c) / chunks;
    double b = res.range.first + (res.range.second - res.range.first) * double(c + 1) / chunks;
    Eigen::MatrixXcd M = A0.data;
    auto gfun = [&](double th) {
      for (int i = 0; i < int(fl.size()); ++i)
        M(i, i) = A0.data(i, i) + fl[i] * fl[i] - (fl[i] + th) * (fl[i] + th);
      ++evals[c];
      return smallest_modulus(M);
    };
    auto crossing = [&](double lo, double hi, double glo, double ghi) {
      boost::uintmax_t it = 80;
      auto fn = [&](double th) { return gfun(th) - eta; };
      auto r = boost::math::tools::toms748_solve(fn, lo, hi, glo - eta, ghi - eta,
                                                 boost::math::tools::eps_tolerance<double>(40), it);
      return 0.5 * (r.first + r.second);
    };
    double th = a, gth = gfun(a);
    bool inside = gth <= eta;
    double start = a;
    while (th < b) {
      if (!inside) {
        double cc = F + std::abs(th) + 1;
        double d = std::max(floor_step, -cc + std::sqrt(cc * cc + (gth - eta)));
        double tn = std::min(th + d, b), gn = gfun(tn);
        if (gn <= eta) {
          start = gn == eta ? tn : crossing(th, tn, gth, gn);
          inside = true;
        }
        th = tn;
        gth = gn;
      } else {
        double tn = std::min(th + h, b), gn = gfun(tn);
        if (gn > eta) {
          found[c].push_back({start, crossing(th, tn, gth, gn)});
          inside = false;
        }
        th = tn;
        gth = gn;
      }
    }
    if (inside) found[c].push_back({start, b});
  });
  for (int c = 0; c < chunks; ++c) {
    res.evaluations += evals[c];
    res.cover.intervals.insert(res.cover.intervals.end(), found[c].begin(), found[c].end());
  }
  res.cover.merge(1e-12);
  return res;
}

/** @brief j0 with |j0| <= (b1+3)N/b1; outside this range the cover comes for free. */
inline std::vector<std::vector<int>> default_j0_list(const LatticeGeometry& g, int N)
{
  int R = int(std::floor((g.b1 + 3) * N / g.b1));
  Box b;
  for (int k = 0; k < g.r; ++k) {
    b.lo.push_back(g.torus ? -R : 0);
    b.hi.push_back(R);
  }
  std::vector<std::vector<int>> out;
  std::vector<int> j = b.lo;
  while (g.r > 0) {
    int sup = 0;
    for (int x : j) sup = std::max(sup, std::abs(x));
    if (sup <= R) out.push_back(j);
    int k = g.r - 1;
    while (k >= 0 && j[k] == b.hi[k]) {
      j[k] = b.lo[k];
      --k;
    }
    if (k < 0) break;
    ++j[k];
  }
  return out;
}

struct GoodParameterResult {
  bool good = true;
  std::vector<std::vector<int>> failing_j0;
  double max_pieces = 0;
};

/** @brief Every listed j0 has a bad-theta cover within the count/length budgets. */
inline GoodParameterResult parameter_good(const OperatorParams& p, int N, const std::vector<std::vector<int>>& j0_list,
                                          const CoverOptions& opt = {})
{
  GoodParameterResult r;
  std::vector<CoverResult> covers(j0_list.size());
  parallel_for(j0_list.size(), [&](std::size_t k) { covers[k] = bad_theta_cover(p, N, j0_list[k], opt); });
  for (std::size_t k = 0; k < covers.size(); ++k) {
    r.max_pieces = std::max(r.max_pieces, covers[k].cover.pieces());
    if (!covers[k].cover.within_budget()) {
      r.good = false;
      r.failing_j0.push_back(j0_list[k]);
    }
  }
  return r;
}

struct LipschitzGap {
  double shift = 0;
  double op_diff = 0;
};

/** @brief Largest shift of sorted eigenvalues against ||M1 - M2||_0. */
inline LipschitzGap eigenvalue_lipschitz_gap(const Eigen::MatrixXcd& M1, const Eigen::MatrixXcd& M2)
{
  if (M1.rows() != M2.rows() || M1.cols() != M2.cols() || M1.rows() != M1.cols())
    throw ValidationError("eigenvalue_lipschitz_gap: matrices must be square of equal size");
  if (!is_hermitian(M1) || !is_hermitian(M2)) throw ValidationError("eigenvalue_lipschitz_gap: inputs must be self-adjoint");
  LipschitzGap r;
  if (M1.rows() == 0) return r;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXcd> e1(M1, Eigen::EigenvaluesOnly), e2(M2, Eigen::EigenvaluesOnly);
  r.shift = (e1.eigenvalues() - e2.eigenvalues()).cwiseAbs().maxCoeff();
  r.op_diff = op_norm_dense(M1 - M2);
  return r;
}

struct ScanOptions {
  std::vector<double> grid;
  std::vector<int> Ns{4, 8};
  int N0 = 8;
  double gamma = 0.1;
  double tau1 = 1;
  double tau = 2;
  bool check_goodness = true;
};

/** @brief Midpoints of n equal cells of [a, b]. */
inline std::vector<double> lambda_grid(int n, double a = 0.5, double b = 1.5)
{
  std::vector<double> g(n);
  for (int k = 0; k < n; ++k) g[k] = a + (b - a) * (k + 0.5) / n;
  return g;
}

struct ScanRow {
  double lambda = 0;
  double min_gap = 0;
  bool in_U = false;
  std::vector<bool> in_U_N, N_good;
  std::vector<double> inv_norm;
};

struct ScanReport {
  ScanOptions opt;
  std::vector<ScanRow> rows;

  /** @brief Fraction of the grid outside U for threshold gamma N0^-tau1. */
  double excluded_U(double gamma) const
  {
    if (rows.empty()) return 0;
    double thr = gamma * std::pow(double(opt.N0), -opt.tau1);
    int c = 0;
    for (const auto& r : rows)
      if (r.min_gap < thr) ++c;
    return double(c) / rows.size();
  }
  double excluded_U_N(std::size_t k) const
  {
    int c = 0;
    for (const auto& r : rows)
      if (!r.in_U_N[k]) ++c;
    return rows.empty() ? 0 : double(c) / rows.size();
  }
  double excluded_G(std::size_t k) const
  {
    int c = 0;
    for (const auto& r : rows)
      if (!r.N_good[k]) ++c;
    return rows.empty() ? 0 : double(c) / rows.size();
  }

  std::string to_csv() const
  {
    std::ostringstream os;
    os.precision(17);
    os << "lambda,N,in_U,in_U_N,N_good,min_gap\n";
    for (const auto& r : rows)
      for (std::size_t k = 0; k < opt.Ns.size(); ++k)
        os << r.lambda << ',' << opt.Ns[k] << ',' << int(r.in_U) << ',' << int(r.in_U_N[k]) << ','
           << int(r.N_good[k]) << ',' << r.min_gap << '\n';
    return os.str();
  }

  nlohmann::json summary(double eps0 = 0, double s1 = 0, double s2 = 0) const
  {
    nlohmann::json j;
    j["grid_points"] = rows.size();
    j["resolution"] = rows.empty() ? 0.0 : 1.0 / rows.size();
    j["N0"] = opt.N0;
    j["gamma"] = opt.gamma;
    j["tau1"] = opt.tau1;
    j["tau"] = opt.tau;
    j["excluded"]["U"] = excluded_U(opt.gamma);
    nlohmann::json perN = nlohmann::json::array();
    for (std::size_t k = 0; k < opt.Ns.size(); ++k)
      perN.push_back({{"N", opt.Ns[k]}, {"U_N", excluded_U_N(k)}, {"G0_N", excluded_G(k)}});
    j["excluded"]["per_N"] = perN;
    if (opt.Ns.size() >= 2) {
      auto slope = [&](auto frac) -> nlohmann::json {
        double a = frac(0), b = frac(opt.Ns.size() - 1);
        if (a <= 0 || b <= 0) return nullptr;
        return std::log(b / a) / std::log(double(opt.Ns.back()) / opt.Ns.front());
      };
      j["slope"]["U_N"] = slope([&](std::size_t k) { return excluded_U_N(k); });
      j["slope"]["G0_N"] = slope([&](std::size_t k) { return excluded_G(k); });
    }
    if (eps0 > 0) {
      j["gamma_normalizations"] = {{"s1", std::pow(eps0, 1 / (s1 + 1))}, {"s2", std::pow(eps0, 1 / (s2 + 1))}};
    }
    return j;
  }
};

/**
 * @brief Membership of each grid lambda in U (first Melnikov at scale N0),
 * U_N (||A_N^-1||_0 <= N^tau at theta = 0) and G0_N (bad-theta covers within budget).
 */
inline ScanReport scan_lambda(const OperatorParams& p, const ScanOptions& opt)
{
  const auto& g = p.geom;
  ScanReport rep;
  rep.opt = opt;
  rep.rows.resize(opt.grid.size());
  std::vector<int> zero_j(g.r, 0), zero_l(g.nu, 0);

  Eigen::VectorXd lam0 = spatial_eigenvalues(p, opt.N0, zero_j);
  auto l0 = l_box(g.nu, opt.N0);

  struct Base {
    Eigen::MatrixXcd A;
    std::vector<double> f1;
  };
  std::vector<Base> bases(opt.Ns.size());
  for (std::size_t k = 0; k < opt.Ns.size(); ++k) {
    OperatorParams q = p;
    q.theta = 0;
    q.lambda = 1;
    auto sites = box_sites(g, opt.Ns[k], zero_l, zero_j);
    bases[k].A = assemble_on(q, sites).data;
    const auto& S = *sites;
    for (std::size_t i = 0; i < S.size(); ++i)
      for (int t = 0; t < S[i].block_dim; ++t) bases[k].f1.push_back(q.frequency(S[i].l));
  }

  struct Spectra {
    std::vector<std::vector<int>> j0;
    std::vector<Eigen::VectorXd> lam;
    std::vector<double> widen;
  };
  std::vector<Spectra> spec(opt.Ns.size());
  if (opt.check_goodness)
    for (std::size_t k = 0; k < opt.Ns.size(); ++k) {
      spec[k].j0 = default_j0_list(g, opt.Ns[k]);
      spec[k].lam.resize(spec[k].j0.size());
      spec[k].widen.resize(spec[k].j0.size());
      parallel_for(spec[k].j0.size(), [&](std::size_t q) {
        spec[k].lam[q] = spatial_eigenvalues(p, opt.Ns[k], spec[k].j0[q]);
        spec[k].widen[q] = p.eps * second_order_norm(p, opt.Ns[k], spec[k].j0[q]);
      });
    }

  double thrU = opt.gamma * std::pow(double(opt.N0), -opt.tau1);
  parallel_for(opt.grid.size(), [&](std::size_t i) {
    ScanRow& row = rep.rows[i];
    OperatorParams q = p;
    q.lambda = opt.grid[i];
    row.lambda = q.lambda;
    row.min_gap = std::numeric_limits<double>::infinity();
    for (const auto& l : l0) {
      double f = q.frequency(l);
      for (Eigen::Index t = 0; t < lam0.size(); ++t) row.min_gap = std::min(row.min_gap, std::abs(-f * f + lam0(t)));
    }
    row.in_U = row.min_gap >= thrU;
    for (std::size_t k = 0; k < opt.Ns.size(); ++k) {
      int N = opt.Ns[k];
      Eigen::MatrixXcd A = bases[k].A;
      for (Eigen::Index d = 0; d < A.rows(); ++d) {
        double f1 = bases[k].f1[d];
        A(d, d) += f1 * f1 - q.lambda * q.lambda * f1 * f1;
      }
      double smin = smallest_modulus(A);
      double inv = smin > 0 ? 1 / smin : std::numeric_limits<double>::infinity();
      row.inv_norm.push_back(inv);
      row.in_U_N.push_back(std::log(inv) <= opt.tau * std::log(double(N)));
      bool good = true;
      if (opt.check_goodness) {
        double eta = std::pow(double(N), -opt.tau);
        double budget = std::pow(double(N), g.nu + g.d + g.r + 5);
        auto ls = l_box(g.nu, N);
        auto range = default_theta_range(g, N);
        for (std::size_t jq = 0; jq < spec[k].j0.size() && good; ++jq) {
          IntervalCover c;
          c.length_budget = eta;
          c.count_budget = budget;
          std::vector<std::pair<double, double>> w;
          for (const auto& l : ls) {
            double f = q.frequency(l);
            for (Eigen::Index t = 0; t < spec[k].lam[jq].size(); ++t)
              detail::resonance_windows(spec[k].lam[jq](t), eta + spec[k].widen[jq], f, w);
          }
          for (auto [a, b] : w) {
            a = std::max(a, range.first);
            b = std::min(b, range.second);
            if (b > a) c.intervals.push_back({a, b});
          }
          c.merge();
          good = c.within_budget();
        }
      }
      row.N_good.push_back(good);
    }
  });
  return rep;
}

} // namespace beamkam
