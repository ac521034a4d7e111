#pragma once

#include <cmath>
#include <complex>
#include <functional>
#include <map>
#include <mutex>
#include <numbers>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <fftw3.h>
#include <json.hpp>

#include "lattice.hpp"

namespace beamkam {

using cplx = std::complex<double>;

/**
 * @brief Finite Fourier expansion u = sum_n u_n e^{i(l.phi + j.x)}.
 */
class FourierField {
public:
  using Map = std::map<SiteIndex, Eigen::VectorXcd>;

  FourierField() = default;
  explicit FourierField(LatticeGeometry g) : geom_(std::move(g)) {}

  const LatticeGeometry& geom() const { return geom_; }
  const Map& coeffs() const { return c_; }
  Map& coeffs() { return c_; }
  bool empty() const { return c_.empty(); }
  std::size_t size() const { return c_.size(); }

  void set(const SiteIndex& n, cplx v)
  {
    Eigen::VectorXcd b(1);
    b(0) = v;
    c_[n] = b;
  }
  void add(const SiteIndex& n, cplx v)
  {
    auto it = c_.find(n);
    if (it == c_.end())
      set(n, v);
    else
      it->second(0) += v;
  }
  cplx get(const SiteIndex& n) const
  {
    auto it = c_.find(n);
    return it == c_.end() ? cplx(0) : it->second(0);
  }

  int support_radius() const
  {
    int m = 0;
    for (const auto& [n, b] : c_)
      if (b.norm() > 0) m = std::max(m, site_norm(n));
    return m;
  }

  /** @brief Largest |coordinate| per axis (l axes then j axes). */
  std::vector<int> axis_support() const
  {
    std::vector<int> s(geom_.dim(), 0);
    for (const auto& [n, b] : c_) {
      if (b.norm() == 0) continue;
      auto c = n.coords();
      for (std::size_t k = 0; k < c.size(); ++k) s[k] = std::max(s[k], std::abs(c[k]));
    }
    return s;
  }

  FourierField& operator+=(const FourierField& o)
  {
    for (const auto& [n, b] : o.c_) {
      auto it = c_.find(n);
      if (it == c_.end())
        c_.emplace(n, b);
      else
        it->second += b;
    }
    return *this;
  }
  FourierField& operator-=(const FourierField& o)
  {
    for (const auto& [n, b] : o.c_) {
      auto it = c_.find(n);
      if (it == c_.end())
        c_.emplace(n, -b);
      else
        it->second -= b;
    }
    return *this;
  }
  FourierField& operator*=(cplx a)
  {
    for (auto& [n, b] : c_) b *= a;
    return *this;
  }
  friend FourierField operator+(FourierField a, const FourierField& b) { return a += b; }
  friend FourierField operator-(FourierField a, const FourierField& b) { return a -= b; }
  friend FourierField operator*(cplx s, FourierField a) { return a *= s; }
  friend FourierField operator*(double s, FourierField a) { return a *= cplx(s); }

  /** @brief Remove coefficients with modulus below tol. */
  FourierField& drop_small(double tol = 1e-15)
  {
    for (auto it = c_.begin(); it != c_.end();) {
      if (it->second.cwiseAbs().maxCoeff() < tol)
        it = c_.erase(it);
      else
        ++it;
    }
    return *this;
  }

  /** @brief Enforce u_{-n} = conj(u_n) (torus reality). */
  FourierField& symmetrize()
  {
    Map out;
    for (const auto& [n, b] : c_) {
      SiteIndex m = negate(n);
      auto it = c_.find(m);
      Eigen::VectorXcd other = it == c_.end() ? Eigen::VectorXcd::Zero(b.size()) : Eigen::VectorXcd(it->second);
      out[n] = 0.5 * (b + other.conjugate());
      if (it == c_.end()) out[m] = 0.5 * b.conjugate();
    }
    c_ = std::move(out);
    return *this;
  }

  static SiteIndex negate(const SiteIndex& n)
  {
    SiteIndex m = n;
    for (auto& x : m.l) x = -x;
    for (auto& x : m.j) x = -x;
    return m;
  }

private:
  LatticeGeometry geom_;
  Map c_;
};

inline double hs_norm(const FourierField& u, double s)
{
  if (s < 0) throw ValidationError("hs_norm: s must be nonnegative");
  double acc = 0;
  for (const auto& [n, b] : u.coeffs()) {
    double w = weight_norm(n, u.geom());
    acc += std::pow(w, 2 * s) * 2 * std::numbers::pi * b.squaredNorm();
  }
  return std::sqrt(acc);
}

/** @brief (P_N u, P_N^perp u) with respect to the sup-norm |n|. */
inline std::pair<FourierField, FourierField> project(const FourierField& u, int N)
{
  if (N < 0) throw ValidationError("project: N must be nonnegative");
  FourierField lo(u.geom()), hi(u.geom());
  for (const auto& [n, b] : u.coeffs()) (site_norm(n) <= N ? lo : hi).coeffs().emplace(n, b);
  return {lo, hi};
}

inline FourierField truncate(const FourierField& u, int N) { return project(u, N).first; }

inline FourierField constant_field(const LatticeGeometry& g, double c)
{
  FourierField f(g);
  f.set(SiteIndex(std::vector<int>(g.nu, 0), std::vector<int>(g.r, 0)), c);
  return f;
}

namespace detail {

inline std::mutex& fftw_mutex()
{
  static std::mutex m;
  return m;
}

inline int next_pow2(int n)
{
  int p = 1;
  while (p < n) p <<= 1;
  return p;
}

/** @brief Uniform periodic grid over T^nu x T^d with an FFTW plan pair. */
class Grid {
public:
  explicit Grid(std::vector<int> sizes) : M_(std::move(sizes))
  {
    total_ = 1;
    for (int m : M_) total_ *= m;
  }
  const std::vector<int>& sizes() const { return M_; }
  std::size_t total() const { return total_; }

  std::size_t linear(const std::vector<int>& mode) const
  {
    std::size_t idx = 0;
    for (std::size_t k = 0; k < M_.size(); ++k) {
      int m = ((mode[k] % M_[k]) + M_[k]) % M_[k];
      idx = idx * M_[k] + m;
    }
    return idx;
  }

  /** @brief Real point values of u on the grid. */
  std::vector<double> to_values(const FourierField& u) const
  {
    std::vector<cplx> buf(total_, 0.0);
    for (const auto& [n, b] : u.coeffs()) buf[linear(n.coords())] += b(0);
    transform(buf, FFTW_BACKWARD);
    std::vector<double> v(total_);
    for (std::size_t i = 0; i < total_; ++i) v[i] = buf[i].real();
    return v;
  }

  /** @brief Coefficients of grid data for modes with |n_k| <= band[k]. */
  FourierField from_values(const std::vector<double>& vals, const std::vector<int>& band,
                           const LatticeGeometry& g) const
  {
    std::vector<cplx> buf(vals.begin(), vals.end());
    transform(buf, FFTW_FORWARD);
    double inv = 1.0 / double(total_);
    FourierField out(g);
    Box b;
    for (int k : band) {
      b.lo.push_back(-k);
      b.hi.push_back(k);
    }
    LatticeGeometry flat = g;
    flat.torus = true;
    for (const auto& n : enumerate_region(b, flat)) {
      cplx c = buf[linear(n.coords())] * inv;
      if (c != cplx(0)) out.set(n, c);
    }
    return out;
  }

  /** @brief Grid angle along axis k at index i. */
  double angle(int k, int i) const { return 2 * std::numbers::pi * i / M_[k]; }

private:
  void transform(std::vector<cplx>& buf, int sign) const
  {
    fftw_plan p;
    auto* data = static_cast<fftw_complex*>(fftw_malloc(sizeof(fftw_complex) * total_));
    {
      std::lock_guard<std::mutex> lk(fftw_mutex());
      p = fftw_plan_dft(int(M_.size()), M_.data(), data, data, sign, FFTW_ESTIMATE);
    }
    std::copy(buf.begin(), buf.end(), reinterpret_cast<cplx*>(data));
    fftw_execute(p);
    std::copy(reinterpret_cast<cplx*>(data), reinterpret_cast<cplx*>(data) + total_, buf.begin());
    std::lock_guard<std::mutex> lk(fftw_mutex());
    fftw_destroy_plan(p);
    fftw_free(data);
  }

  std::vector<int> M_;
  std::size_t total_ = 1;
};

inline Grid grid_for(const std::vector<int>& input_support, const std::vector<int>& output_support)
{
  std::vector<int> M(input_support.size());
  for (std::size_t k = 0; k < M.size(); ++k)
    M[k] = next_pow2(std::max({4 * input_support[k], 2 * output_support[k] + 1, 2}));
  return Grid(M);
}

inline void require_torus(const LatticeGeometry& g, const char* op)
{
  if (!g.torus)
    throw ValidationError(std::string(op) + ": eigenfunction products are only available on the torus preset");
}

inline std::vector<int> vmax(const std::vector<int>& a, const std::vector<int>& b)
{
  std::vector<int> c(a.size());
  for (std::size_t k = 0; k < a.size(); ++k) c[k] = std::max(a[k], b[k]);
  return c;
}

} // namespace detail

/** @brief Pointwise product of real fields (Fourier convolution), computed on an alias-free grid. */
inline FourierField multiply(const FourierField& u, const FourierField& v)
{
  if (!(u.geom() == v.geom())) throw ValidationError("multiply: geometry mismatch");
  detail::require_torus(u.geom(), "multiply");
  if (u.empty() || v.empty()) return FourierField(u.geom());
  auto su = u.axis_support(), sv = v.axis_support();
  std::vector<int> so(su.size());
  for (std::size_t k = 0; k < su.size(); ++k) so[k] = su[k] + sv[k];
  auto grid = detail::grid_for(detail::vmax(su, sv), so);
  auto a = grid.to_values(u), b = grid.to_values(v);
  for (std::size_t i = 0; i < a.size(); ++i) a[i] *= b[i];
  FourierField out = grid.from_values(a, so, u.geom());
  out.symmetrize();
  out.drop_small();
  return out;
}

/**
 * @brief f(phi,x,u) as a polynomial sum_k c_k(phi,x) u^k or a sampled callable.
 */
struct NonlinearitySpec {
  enum class Kind { Polynomial, Callable };
  struct Term {
    int power = 0;
    FourierField coeff;
  };
  using Fn = std::function<double(const std::vector<double>& phi, const std::vector<double>& x, double u)>;

  Kind kind = Kind::Polynomial;
  std::vector<Term> terms;
  Fn f, df;
  int band = 0;
  int q = 3;

  int degree() const
  {
    int p = 0;
    for (const auto& t : terms) p = std::max(p, t.power);
    return p;
  }
  /** @brief Derivative in u; polynomial kinds stay polynomial. */
  NonlinearitySpec derivative() const
  {
    NonlinearitySpec d = *this;
    if (kind == Kind::Callable) {
      auto g = df;
      auto fn = f;
      d.f = g ? g : Fn([fn](const std::vector<double>& p, const std::vector<double>& x, double u) {
        double h = 1e-6 * (1 + std::abs(u));
        return (fn(p, x, u + h) - fn(p, x, u - h)) / (2 * h);
      });
      d.df = nullptr;
      return d;
    }
    d.terms.clear();
    for (const auto& t : terms)
      if (t.power > 0) d.terms.push_back({t.power - 1, double(t.power) * t.coeff});
    return d;
  }
};

struct ComposeReport {
  bool aliasing_risk = false;
  double edge_ratio = 0;
  std::vector<int> grid;
};

namespace detail {
inline FourierField compose_impl(const NonlinearitySpec& f, const FourierField& u, ComposeReport* rep)
{
  const auto& g = u.geom();
  require_torus(g, "compose");
  auto su = u.axis_support();
  std::vector<int> in = su, out(su.size(), 0);
  if (f.kind == NonlinearitySpec::Kind::Polynomial) {
    for (const auto& t : f.terms) {
      auto sc = t.coeff.axis_support();
      for (std::size_t k = 0; k < su.size(); ++k) {
        out[k] = std::max(out[k], sc[k] + t.power * su[k]);
        in[k] = std::max(in[k], sc[k]);
      }
    }
    auto grid = grid_for(in, out);
    std::vector<double> uv = grid.to_values(u), acc(grid.total(), 0.0);
    for (const auto& t : f.terms) {
      if (t.coeff.empty()) continue;
      auto cv = grid.to_values(t.coeff);
      for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += cv[i] * std::pow(uv[i], t.power);
    }
    FourierField r = grid.from_values(acc, out, g);
    if (rep) rep->grid = grid.sizes();
    r.symmetrize();
    r.drop_small();
    return r;
  }
  for (std::size_t k = 0; k < su.size(); ++k) out[k] = std::max(f.band, su[k]);
  auto grid = grid_for(in, out);
  auto uv = grid.to_values(u);
  std::vector<double> vals(grid.total());
  const auto& M = grid.sizes();
  std::vector<int> idx(M.size(), 0);
  std::vector<double> phi(g.nu), x(g.d);
  for (std::size_t i = 0; i < grid.total(); ++i) {
    std::size_t rem = i;
    for (int k = int(M.size()) - 1; k >= 0; --k) {
      idx[k] = int(rem % M[k]);
      rem /= M[k];
    }
    for (int k = 0; k < g.nu; ++k) phi[k] = grid.angle(k, idx[k]);
    for (int k = 0; k < g.d; ++k) x[k] = grid.angle(g.nu + k, idx[g.nu + k]);
    vals[i] = f.f(phi, x, uv[i]);
  }
  FourierField r = grid.from_values(vals, out, g);
  double edge = 0, top = 0;
  for (const auto& [n, b] : r.coeffs()) {
    double a = std::abs(b(0));
    top = std::max(top, a);
    auto c = n.coords();
    for (std::size_t k = 0; k < c.size(); ++k)
      if (std::abs(c[k]) == out[k]) edge = std::max(edge, a);
  }
  if (rep) {
    rep->grid = M;
    rep->edge_ratio = top > 0 ? edge / top : 0;
    rep->aliasing_risk = rep->edge_ratio > 1e-12;
  }
  r.symmetrize();
  r.drop_small();
  return r;
}
} // namespace detail

/** @brief Coefficients of f(phi,x,u(phi,x)). */
inline FourierField compose(const NonlinearitySpec& f, const FourierField& u, ComposeReport* rep = nullptr)
{
  return detail::compose_impl(f, u, rep);
}

/** @brief a = (d_u f)(phi,x,u) and its space-time average. */
inline std::pair<FourierField, double> compose_derivative(const NonlinearitySpec& f, const FourierField& u,
                                                         ComposeReport* rep = nullptr)
{
  FourierField a = detail::compose_impl(f.derivative(), u, rep);
  SiteIndex zero(std::vector<int>(u.geom().nu, 0), std::vector<int>(u.geom().r, 0));
  return {a, a.get(zero).real()};
}

// ---- JSON ----------------------------------------------------------------

inline nlohmann::json field_to_json(const FourierField& u)
{
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& [n, b] : u.coeffs()) {
    std::vector<double> re(b.size()), im(b.size());
    for (int p = 0; p < b.size(); ++p) {
      re[p] = b(p).real();
      im[p] = b(p).imag();
    }
    arr.push_back({{"l", n.l}, {"j", n.j}, {"re", re}, {"im", im}});
  }
  return arr;
}

inline FourierField field_from_json(const nlohmann::json& arr, const LatticeGeometry& g, const std::string& path = "field")
{
  if (!arr.is_array()) throw ValidationError(path + ": expected an array of coefficient records");
  FourierField u(g);
  for (std::size_t i = 0; i < arr.size(); ++i) {
    const auto& rec = arr[i];
    std::string p = path + "[" + std::to_string(i) + "]";
    if (!rec.contains("l") || !rec.contains("j")) throw ValidationError(p + ": missing l or j");
    std::vector<int> l = rec["l"].get<std::vector<int>>(), j = rec["j"].get<std::vector<int>>();
    if (int(l.size()) != g.nu) throw ValidationError(p + ".l: expected length nu");
    if (int(j.size()) != g.r) throw ValidationError(p + ".j: expected length r");
    std::vector<double> re, im;
    if (rec.contains("re")) re = rec["re"].is_array() ? rec["re"].get<std::vector<double>>() : std::vector<double>{rec["re"].get<double>()};
    if (rec.contains("im")) im = rec["im"].is_array() ? rec["im"].get<std::vector<double>>() : std::vector<double>{rec["im"].get<double>()};
    std::size_t bd = std::max<std::size_t>({re.size(), im.size(), 1});
    re.resize(bd, 0.0);
    im.resize(bd, 0.0);
    Eigen::VectorXcd b(bd);
    for (std::size_t q = 0; q < bd; ++q) b(q) = cplx(re[q], im[q]);
    SiteIndex n(l, j, int(bd));
    auto it = u.coeffs().find(n);
    if (it != u.coeffs().end())
      it->second += b;
    else
      u.coeffs().emplace(n, b);
  }
  return u;
}

} // namespace beamkam
