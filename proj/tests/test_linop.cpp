#include <gtest/gtest.h>

#include <cmath>
#include <fstream>

#include <beamkam/config.hpp>
#include <beamkam/linop.hpp>
#include <beamkam/verify.hpp>

using namespace beamkam;

namespace {

OperatorParams base(const LatticeGeometry& g)
{
  OperatorParams p;
  p.geom = g;
  p.omega0 = std::vector<double>(g.nu, 1.0 / std::sqrt(double(g.nu)));
  p.Vbar = FourierField(g);
  p.a = FourierField(g);
  p.K0 = norm_constant(g.dim(), g.nu + g.d);
  return p;
}

nlohmann::json r1_json()
{
  std::ifstream in(std::string(BEAMKAM_CONFIG_DIR) + "/r1.json");
  return nlohmann::json::parse(in);
}

} // namespace

TEST(DiagonalEntry, Examples)
{
  auto p = base(torus_geometry(1, 1));
  p.omega0 = {1.0};
  EXPECT_DOUBLE_EQ(diagonal_entry(SiteIndex({0}, {0}), p), 1.0);
  EXPECT_DOUBLE_EQ(diagonal_entry(SiteIndex({2}, {3}), p), 78.0);
  p.theta = 0.5;
  EXPECT_DOUBLE_EQ(diagonal_entry(SiteIndex({2}, {3}), p), -6.25 + 81 + 1);
}

TEST(DiagonalEntry, ThetaShiftCovariance)
{
  Rng r(5);
  auto p = base(torus_geometry(2, 1));
  for (int t = 0; t < 200; ++t) {
    p.lambda = uniform(r, 0.5, 1.5);
    p.omega0 = {uniform(r, -0.7, 0.7), uniform(r, -0.7, 0.7)};
    p.theta = uniform(r, -3, 3);
    std::vector<int> l{uniform_int(r, -5, 5), uniform_int(r, -5, 5)}, l0{uniform_int(r, -5, 5), uniform_int(r, -5, 5)};
    SiteIndex n(l, {uniform_int(r, -4, 4)});
    SiteIndex m({l[0] + l0[0], l[1] + l0[1]}, n.j);
    OperatorParams q = p;
    q.theta = p.theta + p.frequency(l0);
    EXPECT_NEAR(diagonal_entry(n, q), diagonal_entry(m, p), 1e-12 * std::max(1.0, std::abs(diagonal_entry(m, p))));
  }
}

TEST(Assemble, DiagonalWhenUnperturbed)
{
  auto p = base(torus_geometry(1, 1));
  p.lambda = 0.9;
  p.theta = 0.3;
  auto A = assemble(p, 3, {1}, {-2});
  EXPECT_EQ(A.nrows(), 49);
  for (int i = 0; i < A.nrows(); ++i)
    for (int k = 0; k < A.ncols(); ++k) {
      if (i == k)
        EXPECT_DOUBLE_EQ(A.data(i, i).real(), diagonal_entry((*A.rows)[i], p));
      else
        EXPECT_EQ(A.data(i, k), cplx(0));
    }
}

TEST(Assemble, SelfAdjointForRealFields)
{
  Rng r(9);
  for (auto g : lemma_geometries()) {
    for (int t = 0; t < 10; ++t) {
      auto p = base(g);
      p.eps = uniform(r, 0, 0.1);
      p.theta = uniform(r, -2, 2);
      for (int q = 0; q < 5; ++q) {
        std::vector<int> l(g.nu), j(g.r);
        for (auto& x : l) x = uniform_int(r, -2, 2);
        for (auto& x : j) x = uniform_int(r, -2, 2);
        p.a.add(SiteIndex(l, j), cplx(uniform(r, -1, 1), uniform(r, -1, 1)));
        if (std::any_of(j.begin(), j.end(), [](int x) { return x != 0; }))
          p.Vbar.add(SiteIndex(std::vector<int>(g.nu, 0), j), uniform(r, -0.3, 0.3));
      }
      p.a.symmetrize();
      p.Vbar.symmetrize();
      auto A = assemble(p, 2, std::vector<int>(g.nu, 1), std::vector<int>(g.r, -1));
      EXPECT_LE(op_norm_dense(A.data - A.data.adjoint()), 1e-12);
    }
  }
}

TEST(Assemble, CovarianceIsExact)
{
  auto c = covariance_check(314, 100);
  EXPECT_EQ(c.trials, 100);
  EXPECT_TRUE(c.pass);
  EXPECT_LE(c.detail["max_entry_difference"].get<double>(), 1e-12);
}

TEST(Assemble, OffDiagonalBoundWithFrozenConstant)
{
  // C(s), s = s0, s0+1, s0+2: max over seeds 1000..1019 times 1.25
  const double C[3][3] = {{1.5, 1.0, 0.68}, {0.47, 0.46, 0.45}, {0.23, 0.20, 0.18}};
  auto geoms = lemma_geometries();
  for (int gi = 0; gi < 3; ++gi) {
    const auto& g = geoms[gi];
    double s0 = g.nu + g.d, rho = (2.0 * g.nu + g.d + g.r + 1) / 2;
    Rng r(77 + gi);
    for (int t = 0; t < 40; ++t) {
      auto p = base(g);
      p.omega0 = std::vector<double>(g.nu, 1.0 / std::sqrt(double(g.nu)) / 1.1);
      p.eps = uniform(r, 0, 0.5);
      for (int q = 0; q < 4; ++q) {
        std::vector<int> j(g.r);
        for (auto& x : j) x = uniform_int(r, -2, 2);
        if (std::all_of(j.begin(), j.end(), [](int x) { return x == 0; })) continue;
        p.Vbar.add(SiteIndex(std::vector<int>(g.nu, 0), j), uniform(r, -0.2, 0.2));
      }
      for (int q = 0; q < 6; ++q) {
        std::vector<int> l(g.nu), j(g.r);
        for (auto& x : l) x = uniform_int(r, -2, 2);
        for (auto& x : j) x = uniform_int(r, -2, 2);
        p.a.add(SiteIndex(l, j), cplx(uniform(r, -1, 1), uniform(r, -1, 1)));
      }
      p.Vbar.symmetrize();
      p.a.symmetrize();
      int N = uniform_int(r, 1, g.dim() <= 2 ? 5 : 3);
      auto Q = off_diagonal(assemble(p, N, std::vector<int>(g.nu, 0), std::vector<int>(g.r, 0)));
      for (int k = 0; k < 3; ++k) {
        double s = s0 + k;
        EXPECT_LE(s_norm(Q, s), C[gi][k] * (hs_norm(p.Vbar, s + rho) + p.eps * hs_norm(p.a, s + rho)));
      }
    }
  }
}

TEST(OffDiagonal, RemovesOnlyDiagonalBlocks)
{
  auto p = base(torus_geometry(1, 1));
  p.Vbar.set(SiteIndex({0}, {1}), 0.1);
  p.Vbar.set(SiteIndex({0}, {-1}), 0.1);
  auto A = assemble(p, 2, {0}, {0});
  auto Q = off_diagonal(A);
  EXPECT_EQ(Q.data.diagonal().norm(), 0.0);
  EXPECT_EQ((A.data - Q.data).diagonal(), A.data.diagonal());
  Eigen::MatrixXcd D = A.data - Q.data;
  D.diagonal().setZero();
  EXPECT_EQ(D.norm(), 0.0);
}

TEST(SpatialEigenvalues, FreeBeam)
{
  auto p = base(torus_geometry(1, 1));
  p.m = 2;
  auto ev = spatial_eigenvalues(p, 2, {0});
  ASSERT_EQ(ev.size(), 5);
  EXPECT_DOUBLE_EQ(ev(0), 2);
  EXPECT_DOUBLE_EQ(ev(4), 18);
}

TEST(Validate, Rejections)
{
  auto p = base(torus_geometry(1, 1));
  p.lambda = 1.6;
  EXPECT_THROW(validate(p), ValidationError);
  p.lambda = 1;
  p.omega0 = {1.2};
  EXPECT_THROW(validate(p), ValidationError);
  p.omega0 = {0.5};
  p.Vbar.set(SiteIndex({0}, {0}), 0.1);
  EXPECT_THROW(validate(p), ValidationError);
}

TEST(Config, KappaFloorEnforced)
{
  auto j = r1_json();
  EXPECT_NO_THROW(parse_config(j));
  j["potential"]["kappa0"] = 0.996;
  EXPECT_THROW(parse_config(j), ValidationError);
  j["potential"]["kappa0"] = 0.0;
  EXPECT_THROW(parse_config(j), ValidationError);
  j["potential"]["Vbar"][0]["re"] = 0.6;
  j["potential"]["Vbar"][1]["re"] = 0.6;
  j["potential"]["kappa0"] = 0.5;
  EXPECT_NO_THROW(parse_config(j));
  j["potential"]["kappa0"] = 0.51;
  EXPECT_THROW(parse_config(j), ValidationError);
}

TEST(Config, UnknownKeysRejected)
{
  auto j = r1_json();
  j["solver"]["epsilon"] = 1;
  EXPECT_THROW(parse_config(j), ValidationError);
}
