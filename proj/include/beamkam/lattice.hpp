#pragma once

#include <algorithm>
#include <cmath>
#include <compare>
#include <cstdint>
#include <limits>
#include <memory>
#include <numeric>
#include <string>
#include <unordered_map>
#include <vector>

#include <Eigen/Dense>

#include "errors.hpp"

namespace beamkam {

/** @brief A point (l,j) of Z^nu x Gamma_+ with its block dimension. */
struct SiteIndex {
  std::vector<int> l;
  std::vector<int> j;
  int block_dim = 1;

  SiteIndex() = default;
  SiteIndex(std::vector<int> l_, std::vector<int> j_, int bd = 1)
      : l(std::move(l_)), j(std::move(j_)), block_dim(bd) {}

  friend bool operator==(const SiteIndex& a, const SiteIndex& b) { return a.l == b.l && a.j == b.j; }
  friend std::strong_ordering operator<=>(const SiteIndex& a, const SiteIndex& b)
  {
    if (auto c = a.l <=> b.l; c != 0) return c;
    return a.j <=> b.j;
  }

  std::vector<int> coords() const
  {
    std::vector<int> c(l);
    c.insert(c.end(), j.begin(), j.end());
    return c;
  }
  static SiteIndex from_coords(const std::vector<int>& c, int nu)
  {
    return {std::vector<int>(c.begin(), c.begin() + nu), std::vector<int>(c.begin() + nu, c.end())};
  }
};

struct LatticeGeometry {
  int nu = 1;
  int d = 1;
  int r = 1;
  std::vector<std::vector<double>> weights;
  std::vector<double> rho;
  int z = 1;
  double c1 = 1.0, c2 = std::sqrt(2.0);
  double b1 = 1.0, b2 = 1.0;
  bool torus = true;

  int dim() const { return nu + r; }
  /** varrho = (2nu+d+r+1)/2 */
  double varrho() const { return 0.5 * (2.0 * nu + d + r + 1.0); }

  friend bool operator==(const LatticeGeometry& a, const LatticeGeometry& b)
  {
    return a.nu == b.nu && a.d == b.d && a.r == b.r && a.weights == b.weights && a.rho == b.rho &&
           a.torus == b.torus;
  }
};

namespace detail {
inline std::vector<double> weight_point(const std::vector<int>& j, const LatticeGeometry& g)
{
  std::vector<double> p(g.r, 0.0);
  for (int k = 0; k < g.r; ++k)
    for (int i = 0; i < g.r; ++i) p[i] += j[k] * g.weights[k][i];
  return p;
}
inline double norm2(const std::vector<double>& v)
{
  double s = 0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}
inline int supnorm(const std::vector<int>& v)
{
  int m = 0;
  for (int x : v) m = std::max(m, std::abs(x));
  return m;
}
} // namespace detail

/** @brief Euclidean length of j+rho in weight space. */
inline double shifted_norm(const std::vector<int>& j, const LatticeGeometry& g)
{
  auto p = detail::weight_point(j, g);
  for (int i = 0; i < g.r; ++i) p[i] += g.rho[i];
  return detail::norm2(p);
}

inline int site_norm(const SiteIndex& n) { return std::max(detail::supnorm(n.l), detail::supnorm(n.j)); }

inline int site_distance(const SiteIndex& a, const SiteIndex& b)
{
  int m = 0;
  for (std::size_t i = 0; i < a.l.size(); ++i) m = std::max(m, std::abs(a.l[i] - b.l[i]));
  for (std::size_t i = 0; i < a.j.size(); ++i) m = std::max(m, std::abs(a.j[i] - b.j[i]));
  return m;
}

/**
 * @brief Offset a-b as used by the s-norm.
 *
 * Off the torus, a difference whose j-part has a negative coordinate leaves
 * Z^nu x Gamma_+ and is set to zero.
 */
inline SiteIndex site_difference(const SiteIndex& a, const SiteIndex& b, const LatticeGeometry& g)
{
  SiteIndex d;
  d.l.resize(a.l.size());
  d.j.resize(a.j.size());
  for (std::size_t i = 0; i < a.l.size(); ++i) d.l[i] = a.l[i] - b.l[i];
  bool outside = false;
  for (std::size_t i = 0; i < a.j.size(); ++i) {
    d.j[i] = a.j[i] - b.j[i];
    if (d.j[i] < 0) outside = true;
  }
  if (!g.torus && outside) {
    std::fill(d.l.begin(), d.l.end(), 0);
    std::fill(d.j.begin(), d.j.end(), 0);
  }
  return d;
}

inline double weight_norm(const SiteIndex& n, const LatticeGeometry& g)
{
  double s = 0;
  for (int x : n.l) s += double(x) * x;
  double jr = shifted_norm(n.j, g);
  return std::max({g.c1, 1.0, std::sqrt(s + jr * jr)});
}

inline double laplacian_eigenvalue(const std::vector<int>& j, const LatticeGeometry& g)
{
  double r2 = detail::norm2(g.rho);
  double a = shifted_norm(j, g);
  return -a * a + r2 * r2;
}

/** @brief Axis-aligned region over the nu+r coordinates (l then j). */
struct Box {
  std::vector<int> lo, hi;
  bool contains(const SiteIndex& n) const
  {
    std::size_t k = 0;
    for (int x : n.l) {
      if (x < lo[k] || x > hi[k]) return false;
      ++k;
    }
    for (int x : n.j) {
      if (x < lo[k] || x > hi[k]) return false;
      ++k;
    }
    return true;
  }
};

inline Box box_around(const SiteIndex& c, int N)
{
  Box b;
  for (int x : c.l) {
    b.lo.push_back(x - N);
    b.hi.push_back(x + N);
  }
  for (int x : c.j) {
    b.lo.push_back(x - N);
    b.hi.push_back(x + N);
  }
  return b;
}

/** @brief All sites in a box (j clamped to Gamma+ off the torus), lexicographic. */
inline std::vector<SiteIndex> enumerate_region(const Box& b, const LatticeGeometry& g)
{
  int D = g.dim();
  std::vector<int> lo = b.lo, hi = b.hi;
  if (!g.torus)
    for (int k = g.nu; k < D; ++k) lo[k] = std::max(lo[k], 0);
  for (int k = 0; k < D; ++k)
    if (hi[k] < lo[k]) return {};
  std::vector<SiteIndex> out;
  std::vector<int> c = lo;
  while (true) {
    out.push_back(SiteIndex::from_coords(c, g.nu));
    int k = D - 1;
    while (k >= 0 && c[k] == hi[k]) {
      c[k] = lo[k];
      --k;
    }
    if (k < 0) break;
    ++c[k];
  }
  return out;
}

/**
 * @brief Sites with |l-l0| <= N and |j-j0| <= N, lexicographically ordered.
 *
 * With a clamp region the window is shifted inward along each axis so it
 * keeps width 2N and stays inside the region (the whole axis if narrower).
 */
inline std::vector<SiteIndex> enumerate_box(const SiteIndex& center, int N, const LatticeGeometry& g,
                                            const Box* clamp_region = nullptr)
{
  if (N < 0) throw ValidationError("enumerate_box: N must be nonnegative");
  Box b = box_around(center, N);
  if (clamp_region) {
    for (int k = 0; k < g.dim(); ++k) {
      int rlo = clamp_region->lo[k], rhi = clamp_region->hi[k];
      if (rhi - rlo <= 2 * N) {
        b.lo[k] = rlo;
        b.hi[k] = rhi;
      } else if (b.lo[k] < rlo) {
        b.lo[k] = rlo;
        b.hi[k] = rlo + 2 * N;
      } else if (b.hi[k] > rhi) {
        b.hi[k] = rhi;
        b.lo[k] = rhi - 2 * N;
      }
    }
  }
  return enumerate_region(b, g);
}

/** @brief Bounding box of a site list. */
inline Box bounding_box(const std::vector<SiteIndex>& sites, int D)
{
  Box b{std::vector<int>(D, std::numeric_limits<int>::max()), std::vector<int>(D, std::numeric_limits<int>::min())};
  for (const auto& s : sites) {
    auto c = s.coords();
    for (int k = 0; k < D; ++k) {
      b.lo[k] = std::min(b.lo[k], c[k]);
      b.hi[k] = std::max(b.hi[k], c[k]);
    }
  }
  return b;
}

inline int diameter(const std::vector<SiteIndex>& sites)
{
  if (sites.empty()) return 0;
  int D = int(sites[0].l.size() + sites[0].j.size());
  Box b = bounding_box(sites, D);
  int m = 0;
  for (int k = 0; k < D; ++k) m = std::max(m, b.hi[k] - b.lo[k]);
  return m;
}

struct CoordHash {
  std::size_t operator()(const std::vector<int>& v) const noexcept
  {
    std::size_t h = 1469598103934665603ull;
    for (int x : v) {
      h ^= std::size_t(std::uint32_t(x));
      h *= 1099511628211ull;
    }
    return h;
  }
};

/**
 * @brief Ordered site list with block offsets and coordinate lookup.
 */
class SiteList {
public:
  SiteList() = default;
  SiteList(std::vector<SiteIndex> sites, int nu) : sites_(std::move(sites)), nu_(nu)
  {
    offset_.resize(sites_.size() + 1, 0);
    for (std::size_t i = 0; i < sites_.size(); ++i) {
      offset_[i + 1] = offset_[i] + sites_[i].block_dim;
      index_.emplace(sites_[i].coords(), int(i));
    }
    D_ = sites_.empty() ? 0 : int(sites_[0].l.size() + sites_[0].j.size());
    flat_.reserve(sites_.size() * D_);
    for (const auto& s : sites_)
      for (int x : s.coords()) flat_.push_back(x);
  }

  std::size_t size() const { return sites_.size(); }
  int dim() const { return offset_.empty() ? 0 : offset_.back(); }
  int coord_dim() const { return D_; }
  int nu() const { return nu_; }
  const SiteIndex& operator[](std::size_t i) const { return sites_[i]; }
  const std::vector<SiteIndex>& sites() const { return sites_; }
  int offset(std::size_t i) const { return offset_[i]; }
  const int* coords(std::size_t i) const { return flat_.data() + i * D_; }
  bool scalar_blocks() const { return dim() == int(size()); }

  int find(const SiteIndex& n) const { return find(n.coords()); }
  int find(const std::vector<int>& c) const
  {
    auto it = index_.find(c);
    return it == index_.end() ? -1 : it->second;
  }

  friend bool operator==(const SiteList& a, const SiteList& b) { return a.sites_ == b.sites_; }

private:
  std::vector<SiteIndex> sites_;
  std::vector<int> offset_;
  std::vector<int> flat_;
  std::unordered_map<std::vector<int>, int, CoordHash> index_;
  int nu_ = 1;
  int D_ = 0;
};

using SiteListPtr = std::shared_ptr<const SiteList>;

inline SiteListPtr make_sites(std::vector<SiteIndex> s, int nu)
{
  std::sort(s.begin(), s.end());
  return std::make_shared<const SiteList>(std::move(s), nu);
}

namespace detail {
inline void scan_constants(LatticeGeometry& g)
{
  int D = g.dim();
  int R = D <= 2 ? 24 : (D == 3 ? 10 : (D == 4 ? 6 : 3));
  Box b;
  for (int k = 0; k < D; ++k) {
    b.lo.push_back(-R);
    b.hi.push_back(R);
  }
  double c1 = std::numeric_limits<double>::infinity(), c2 = 0;
  double b1 = std::numeric_limits<double>::infinity(), b2 = 0;
  for (const auto& n : enumerate_region(b, g)) {
    int sn = site_norm(n);
    if (sn == 0) continue;
    double s = 0;
    for (int x : n.l) s += double(x) * x;
    double jr = shifted_norm(n.j, g);
    double v = std::sqrt(s + jr * jr) / sn;
    c1 = std::min(c1, v);
    c2 = std::max(c2, v);
    int jn = supnorm(n.j);
    if (jn > 0) {
      double w = norm2(weight_point(n.j, g)) / jn;
      b1 = std::min(b1, w);
      b2 = std::max(b2, w);
    }
  }
  g.c1 = c1;
  g.c2 = c2;
  g.b1 = b1;
  g.b2 = b2;
}
} // namespace detail

/**
 * @brief Validated geometry; the torus preset ignores weights/rho and uses
 * the standard basis with Gamma = Z^r.
 */
inline LatticeGeometry make_geometry(int nu, int d, int r, std::vector<std::vector<double>> weights,
                                     std::vector<double> rho, int z, bool torus_preset)
{
  if (nu < 1) throw ValidationError("geometry.nu: must be >= 1");
  if (r < 1) throw ValidationError("geometry.r: must be >= 1");
  if (d < r) throw ValidationError("geometry.d: must be >= r");
  if (z < 1) throw ValidationError("geometry.z: must be >= 1");
  LatticeGeometry g;
  g.nu = nu;
  g.d = d;
  g.r = r;
  g.z = z;
  g.torus = torus_preset;
  if (torus_preset) {
    if (d != r) throw ValidationError("geometry: torus preset requires d == r");
    g.weights.assign(r, std::vector<double>(r, 0.0));
    for (int k = 0; k < r; ++k) g.weights[k][k] = 1.0;
    g.rho.assign(r, 0.0);
    g.c1 = 1.0;
    g.c2 = std::sqrt(double(nu + r));
    g.b1 = 1.0;
    g.b2 = std::sqrt(double(r));
    return g;
  }
  if (int(weights.size()) != r) throw ValidationError("geometry.weights: expected r vectors");
  for (auto& w : weights)
    if (int(w.size()) != r) throw ValidationError("geometry.weights: each vector must have length r");
  if (int(rho.size()) != r) throw ValidationError("geometry.rho: expected length r");
  Eigen::MatrixXd W(r, r);
  for (int k = 0; k < r; ++k)
    for (int i = 0; i < r; ++i) W(k, i) = weights[k][i];
  Eigen::FullPivLU<Eigen::MatrixXd> lu(W);
  if (lu.rank() < r) throw ValidationError("geometry.weights: linearly dependent");
  for (int a = 0; a < r; ++a)
    for (int b = 0; b < r; ++b) {
      double dot = 0;
      for (int i = 0; i < r; ++i) dot += weights[a][i] * weights[b][i];
      double scaled = dot * z;
      if (std::abs(scaled - std::round(scaled)) > 1e-12)
        throw ValidationError("geometry.weights: w_" + std::to_string(a) + "·w_" + std::to_string(b) +
                              " not in z^-1 Z");
    }
  g.weights = std::move(weights);
  g.rho = std::move(rho);
  detail::scan_constants(g);
  return g;
}

inline LatticeGeometry torus_geometry(int nu, int d) { return make_geometry(nu, d, d, {}, {}, 1, true); }

} // namespace beamkam
