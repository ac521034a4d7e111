#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>

#include <beamkam/sobolev.hpp>

#include "oracles.hpp"

using namespace beamkam;

namespace {

const double kSqrt2Pi = std::sqrt(2 * std::numbers::pi);

FourierField cos_phi(const LatticeGeometry& g)
{
  FourierField u(g);
  u.set(SiteIndex({1}, {0}), 0.5);
  u.set(SiteIndex({-1}, {0}), 0.5);
  return u;
}

FourierField random_real_field(std::mt19937_64& r, const LatticeGeometry& g, int R)
{
  std::uniform_real_distribution<double> U(-1, 1);
  FourierField u(g);
  Box b = box_around(SiteIndex(std::vector<int>(g.nu, 0), std::vector<int>(g.r, 0)), R);
  for (const auto& n : enumerate_region(b, g)) u.add(n, cplx(U(r), U(r)) * std::exp(-0.5 * site_norm(n)));
  u.symmetrize();
  return u;
}

double max_diff(const FourierField& a, const FourierField& b)
{
  FourierField d = a;
  d -= b;
  double m = 0;
  for (const auto& [n, v] : d.coeffs()) m = std::max(m, v.cwiseAbs().maxCoeff());
  return m;
}

NonlinearitySpec poly(std::vector<std::pair<int, FourierField>> t)
{
  NonlinearitySpec f;
  for (auto& [p, c] : t) f.terms.push_back({p, c});
  return f;
}

} // namespace

TEST(HsNorm, Examples)
{
  auto g = torus_geometry(1, 1);
  EXPECT_EQ(hs_norm(FourierField(g), 3), 0.0);
  FourierField u(g);
  u.set(SiteIndex({0}, {0}), 1.0);
  for (double s : {0.0, 1.0, 4.5}) EXPECT_NEAR(hs_norm(u, s), kSqrt2Pi, 1e-15);
  FourierField v(g);
  v.set(SiteIndex({3}, {4}), 1.0);
  EXPECT_NEAR(hs_norm(v, 1), kSqrt2Pi * 5, 1e-13);
  EXPECT_THROW(hs_norm(v, -1), ValidationError);
}

TEST(Project, SplitsExactly)
{
  auto g = torus_geometry(1, 1);
  std::mt19937_64 r(3);
  auto u = random_real_field(r, g, 5);
  auto [lo, hi] = project(u, 2);
  for (const auto& [n, b] : lo.coeffs()) EXPECT_LE(site_norm(n), 2);
  for (const auto& [n, b] : hi.coeffs()) EXPECT_GT(site_norm(n), 2);
  EXPECT_EQ(max_diff(lo + hi, u), 0.0);
  auto [all, none] = project(u, 5);
  EXPECT_TRUE(none.empty());
  EXPECT_EQ(all.size(), u.size());
  auto [mean, rest] = project(u, 0);
  EXPECT_EQ(mean.size(), 1u);
}

TEST(Project, ProjectorBounds)
{
  std::mt19937_64 r(11);
  for (auto g : {torus_geometry(1, 1), torus_geometry(2, 1)}) {
    double s0 = g.nu + g.d;
    for (int t = 0; t < 20; ++t) {
      auto u = random_real_field(r, g, 6);
      for (int N : {1, 2, 4})
        for (int kappa : {0, 1, 2})
          for (double s : {s0, s0 + 2}) {
            auto [lo, hi] = project(u, N);
            EXPECT_LE(hs_norm(hi, s), std::pow(g.c1 * N, -kappa) * hs_norm(u, s + kappa) * (1 + 1e-12));
            EXPECT_LE(hs_norm(lo, s + kappa), std::pow(g.c2 * N, kappa) * hs_norm(u, s) * (1 + 1e-12));
          }
    }
  }
}

TEST(Multiply, CosSquared)
{
  auto g = torus_geometry(1, 1);
  auto u = cos_phi(g);
  auto w = multiply(u, u);
  EXPECT_NEAR(std::abs(w.get(SiteIndex({0}, {0})) - 0.5), 0, 1e-15);
  EXPECT_NEAR(std::abs(w.get(SiteIndex({2}, {0})) - 0.25), 0, 1e-15);
  EXPECT_NEAR(std::abs(w.get(SiteIndex({-2}, {0})) - 0.25), 0, 1e-15);
  EXPECT_EQ(w.size(), 3u);
}

TEST(Multiply, IdentityAndConvolutionOracle)
{
  auto g = torus_geometry(1, 1);
  std::mt19937_64 r(5);
  for (int t = 0; t < 10; ++t) {
    auto u = random_real_field(r, g, 4), v = random_real_field(r, g, 3);
    EXPECT_LT(max_diff(multiply(u, constant_field(g, 1.0)), u), 1e-14);
    EXPECT_LT(max_diff(multiply(u, v), oracle::naive_multiply(u, v)), 1e-12);
  }
}

TEST(Multiply, GeometryMismatch)
{
  EXPECT_THROW(multiply(FourierField(torus_geometry(1, 1)), FourierField(torus_geometry(2, 1))), ValidationError);
}

TEST(Compose, Examples)
{
  auto g = torus_geometry(1, 1);
  std::mt19937_64 r(8);
  auto u = random_real_field(r, g, 3);
  auto one = constant_field(g, 1.0);
  EXPECT_LT(max_diff(compose(poly({{1, one}}), u), u), 1e-13);
  auto c = cos_phi(g);
  EXPECT_LT(max_diff(compose(poly({{2, one}}), c), multiply(c, c)), 1e-15);
  FourierField gf(g);
  gf.set(SiteIndex({1}, {1}), 0.25);
  gf.set(SiteIndex({-1}, {-1}), 0.25);
  EXPECT_LT(max_diff(compose(poly({{0, gf}, {3, one}}), FourierField(g)), gf), 1e-15);
}

TEST(Compose, NaiveDftOracle)
{
  auto g = torus_geometry(1, 1);
  std::mt19937_64 r(9);
  auto one = constant_field(g, 1.0);
  FourierField gf(g);
  gf.set(SiteIndex({1}, {1}), 0.25);
  gf.set(SiteIndex({-1}, {-1}), 0.25);
  auto f = poly({{3, one}, {0, gf}, {2, gf}});
  for (int t = 0; t < 3; ++t) {
    auto u = random_real_field(r, g, 3);
    auto a = compose(f, u);
    auto b = oracle::naive_compose(f, u, 24, 11);
    double scale = 0;
    for (const auto& [n, v] : b.coeffs()) scale = std::max(scale, std::abs(v(0)));
    EXPECT_LT(max_diff(a, b), 1e-10 * scale);
  }
}

TEST(ComposeDerivative, Examples)
{
  auto g = torus_geometry(1, 1);
  auto one = constant_field(g, 1.0);
  auto [a0, m0] = compose_derivative(poly({{3, one}}), FourierField(g));
  EXPECT_LT(hs_norm(a0, 0), 1e-15);
  EXPECT_EQ(m0, 0.0);
  auto [a1, m1] = compose_derivative(poly({{2, 0.5 * one}}), cos_phi(g));
  EXPECT_LT(max_diff(a1, cos_phi(g)), 1e-15);
  EXPECT_NEAR(m1, 0.0, 1e-15);
  FourierField gf(g);
  gf.set(SiteIndex({1}, {0}), 0.5);
  gf.set(SiteIndex({-1}, {0}), 0.5);
  auto [a2, m2] = compose_derivative(poly({{1, one}, {0, gf}}), cos_phi(g));
  EXPECT_LT(max_diff(a2, one), 1e-15);
  EXPECT_NEAR(m2, 1.0, 1e-15);
}

TEST(Compose, TaylorRemainderIsQuadratic)
{
  auto g = torus_geometry(1, 1);
  std::mt19937_64 r(21);
  auto one = constant_field(g, 1.0);
  auto f = poly({{3, one}});
  auto u = random_real_field(r, g, 3), h0 = random_real_field(r, g, 3);
  double s1 = 5;
  std::vector<double> q;
  for (int k = 0; k < 6; ++k) {
    FourierField h = std::pow(0.1, k) * h0;
    auto [a, mb] = compose_derivative(f, u);
    FourierField R = compose(f, u + h);
    R -= compose(f, u);
    R -= multiply(a, h);
    q.push_back(hs_norm(R, s1) / std::pow(hs_norm(h, s1), 2));
  }
  for (std::size_t k = 3; k < q.size(); ++k) EXPECT_NEAR(q[k] / q.back(), 1.0, 0.05);
  for (double x : q) EXPECT_LT(x, 2 * q.back());
}

TEST(FieldJson, RoundTrip)
{
  auto g = torus_geometry(2, 1);
  std::mt19937_64 r(2);
  auto u = random_real_field(r, g, 2);
  auto v = field_from_json(field_to_json(u), g);
  EXPECT_EQ(max_diff(u, v), 0.0);
  EXPECT_THROW(field_from_json(nlohmann::json::object(), g), ValidationError);
  EXPECT_THROW(field_from_json(nlohmann::json::parse(R"([{"l":[0],"j":[0],"re":[1]}])"), g), ValidationError);
}

TEST(Symmetrize, RealityInvariant)
{
  auto g = torus_geometry(1, 1);
  std::mt19937_64 r(4);
  auto u = random_real_field(r, g, 3);
  for (const auto& [n, b] : u.coeffs()) {
    auto m = FourierField::negate(n);
    EXPECT_NEAR(std::abs(u.get(m) - std::conj(b(0))), 0, 1e-15);
  }
}
