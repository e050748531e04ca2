#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <vector>

#include "spherehead/stereo.hpp"
#include "support.hpp"

using namespace spherehead;
using namespace spherehead::stereo;
using spherehead::testing::gradient_error;

namespace {

std::vector<double> random_point(Rng& rng, std::size_t n, double max_norm) {
  std::vector<double> x(n);
  double s = 0.0;
  for (auto& v : x) {
    v = rng.normal();
    s += v * v;
  }
  const double r = max_norm * rng.uniform();
  const double k = s > 0.0 ? r / std::sqrt(s) : 0.0;
  for (auto& v : x) v *= k;
  return x;
}

}  // namespace

TEST(ScaleFactor, WorkedValues) {
  EXPECT_EQ(scale_factor(EuclideanPoint({0.0, 0.0, 0.0})), -1.0);
  EXPECT_EQ(scale_factor(EuclideanPoint({0.6, 0.8})), 0.0);
  EXPECT_NEAR(scale_factor(EuclideanPoint({3.0, 4.0})), 24.0 / 26.0, 1e-15);
}

TEST(EuclideanPoint, RejectsNonFinite) {
  EXPECT_THROW(EuclideanPoint({1.0, std::nan("")}), DomainError);
  EXPECT_THROW(EuclideanPoint({INFINITY}), DomainError);
}

TEST(Project, SouthPoleEquatorAndWorkedValue) {
  EXPECT_EQ(project(EuclideanPoint({0.0, 0.0})).coords(), (std::vector<double>{0.0, 0.0, -1.0}));
  EXPECT_EQ(project(EuclideanPoint({1.0, 0.0})).coords(), (std::vector<double>{1.0, 0.0, 0.0}));
  const auto p = project(EuclideanPoint({3.0, 4.0})).coords();
  EXPECT_NEAR(p[0], 3.0 / 13.0, 1e-15);
  EXPECT_NEAR(p[1], 4.0 / 13.0, 1e-15);
  EXPECT_NEAR(p[2], 12.0 / 13.0, 1e-15);
}

TEST(Project, MatchesLineThroughNorthPole) {
  // x + z (e_{n+1} - x), with x embedded at height 0.
  Rng rng(21);
  for (int t = 0; t < 1000; ++t) {
    const auto x = random_point(rng, 4, 5.0);
    const double z = scale_factor(EuclideanPoint(x));
    const auto p = project(EuclideanPoint(x)).coords();
    for (std::size_t i = 0; i < x.size(); ++i) EXPECT_NEAR(p[i], x[i] - z * x[i], 1e-14);
    EXPECT_NEAR(p.back(), z, 1e-15);
  }
}

TEST(Project, UnitNormEverywhere) {
  Rng rng(1);
  for (std::size_t n : {1, 2, 16, 257}) {
    for (int t = 0; t < 500; ++t) {
      const auto p = project(EuclideanPoint(random_point(rng, n, std::pow(10.0, rng.uniform(-6, 8)))));
      EXPECT_NEAR(p.squared_norm(), 1.0, 1e-12);
    }
  }
}

TEST(Project, LastCoordinateIncreasesWithRadius) {
  Rng rng(2);
  for (int t = 0; t < 50; ++t) {
    auto u = random_point(rng, 3, 1.0);
    double s = 0.0;
    for (double v : u) s += v * v;
    for (auto& v : u) v /= std::sqrt(s);
    double prev = -2.0;
    for (double r = 0.0; r <= 50.0; r += 0.125) {
      std::vector<double> x(u);
      for (auto& v : x) v *= r;
      const double last = project(EuclideanPoint(x)).last();
      EXPECT_GT(last, prev);
      prev = last;
    }
  }
}

TEST(Project, ApproachesButNeverReachesPole) {
  const auto p = project(EuclideanPoint({1e6, 0.0}));
  EXPECT_GT(p.last(), 1.0 - 1e-11);
  EXPECT_LT(p.last(), 1.0);
  // Far out the last coordinate rounds to 1, but the point is still not e_{n+1}.
  for (double r : {1e8, 1e20, 1e150, 1e300}) {
    const auto far = project(EuclideanPoint({r, -r}));
    EXPECT_LE(far.last(), 1.0);
    EXPECT_NE(far.coords()[0], 0.0) << r;
    EXPECT_NEAR(far.squared_norm(), 1.0, 1e-12);
  }
}

TEST(Project, RotationEquivariance) {
  Rng rng(3);
  for (int t = 0; t < 200; ++t) {
    const auto x = random_point(rng, 2, 10.0);
    const double a = rng.uniform(0.0, 2.0 * std::numbers::pi);
    const std::vector<double> rx{std::cos(a) * x[0] - std::sin(a) * x[1], std::sin(a) * x[0] + std::cos(a) * x[1]};
    const auto p = project(EuclideanPoint(x)).coords();
    const auto q = project(EuclideanPoint(rx)).coords();
    EXPECT_NEAR(q[0], std::cos(a) * p[0] - std::sin(a) * p[1], 1e-14);
    EXPECT_NEAR(q[1], std::sin(a) * p[0] + std::cos(a) * p[1], 1e-14);
    EXPECT_NEAR(q[2], p[2], 1e-14);
  }
}

TEST(InverseProject, WorkedValues) {
  EXPECT_EQ(inverse_project(SpherePoint::from_coords({0.0, 0.0, -1.0})).coords(), (std::vector<double>{0.0, 0.0}));
  EXPECT_EQ(inverse_project(SpherePoint::from_coords({1.0, 0.0, 0.0})).coords(), (std::vector<double>{1.0, 0.0}));
  const auto x = inverse_project(SpherePoint::from_coords({3.0 / 13.0, 4.0 / 13.0, 12.0 / 13.0})).coords();
  EXPECT_NEAR(x[0], 3.0, 1e-9);
  EXPECT_NEAR(x[1], 4.0, 1e-9);
}

TEST(InverseProject, Errors) {
  EXPECT_THROW(SpherePoint::from_coords({0.5, 0.5, 0.5}), DomainError);
  EXPECT_THROW(inverse_project(SpherePoint::from_coords({0.0, 0.0, 1.0})), PoleSingularityError);
  const double e = 1e-10;
  EXPECT_THROW(inverse_project(SpherePoint::from_coords({std::sqrt(1 - (1 - e) * (1 - e)), 0.0, 1.0 - e})),
               PoleSingularityError);
}

TEST(InverseProject, RoundTrip) {
  Rng rng(4);
  for (int t = 0; t < 2000; ++t) {
    const auto x = random_point(rng, 3, 1000.0);
    const auto back = inverse_project(project(EuclideanPoint(x))).coords();
    double nx = 0.0, nd = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
      nx += x[i] * x[i];
      nd += (back[i] - x[i]) * (back[i] - x[i]);
    }
    EXPECT_LE(std::sqrt(nd), 1e-9 * std::max(1.0, std::sqrt(nx)));
  }
}

TEST(InverseProject, ProjectOfInverseIsIdentity) {
  Rng rng(5);
  for (int t = 0; t < 1000; ++t) {
    const auto p = project(EuclideanPoint(random_point(rng, 3, 100.0)));
    const auto q = project(inverse_project(p)).coords();
    for (std::size_t i = 0; i < q.size(); ++i) EXPECT_NEAR(q[i], p.coords()[i], 1e-9);
  }
}

TEST(Jacobian, MatchesFiniteDifferences) {
  Rng rng(6);
  for (int t = 0; t < 50; ++t) {
    const auto x = random_point(rng, 3, 3.0);
    const nd::Tensor J = projection_jacobian(EuclideanPoint(x));
    ASSERT_EQ(J.shape(), (nd::Shape{4, 3}));
    const double h = 1e-6;
    for (std::size_t k = 0; k < 3; ++k) {
      auto xp = x, xm = x;
      xp[k] += h;
      xm[k] -= h;
      const auto pp = project(EuclideanPoint(xp)).coords();
      const auto pm = project(EuclideanPoint(xm)).coords();
      for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(J(i, k), (pp[i] - pm[i]) / (2 * h), 1e-7);
    }
  }
}

TEST(ProjectBatch, RowsMatchSinglePointProjection) {
  const auto X = nd::Tensor::matrix({{3, 4}, {3, 4}, {0, 0}, {-1.5, 2.25}});
  const nd::Tensor P = project_batch(X);
  ASSERT_EQ(P.shape(), (nd::Shape{4, 3}));
  for (std::size_t r = 0; r < 4; ++r) {
    const auto p = project(X.row(r)).coords();
    for (std::size_t c = 0; c < 3; ++c) EXPECT_EQ(P(r, c), p[c]);
  }
  for (std::size_t c = 0; c < 3; ++c) EXPECT_EQ(P(0, c), P(1, c));
}

TEST(ProjectBatch, RejectsEmptyAndNonFinite) {
  EXPECT_THROW(project_batch(nd::Tensor(nd::Shape{0, 2})), DimensionError);
  EXPECT_THROW(project_batch(nd::Tensor::matrix({{1, NAN}})), DomainError);
}

TEST(ProjectBatch, GradientMatchesFiniteDifferences) {
  Rng rng(7);
  for (int t = 0; t < 50; ++t) {
    const std::size_t b = 1 + rng.index(4), n = 1 + rng.index(8);
    const nd::Tensor x = spherehead::testing::random_tensor(rng, {b, n});
    const nd::Tensor w = spherehead::testing::random_tensor(rng, {b, n + 1});
    const spherehead::testing::LossFn plain = [](nd::Tape&, const nd::Var& v) { return nd::sum(project_batch(v)); };
    const spherehead::testing::LossFn weighted = [&](nd::Tape& tape, const nd::Var& v) {
      return nd::sum(project_batch(v) * tape.constant(w));
    };
    EXPECT_LE(gradient_error(plain, x), 1e-5);
    EXPECT_LE(gradient_error(weighted, x), 1e-5);
  }
}

TEST(BallConvexity, NoViolations) {
  for (std::size_t dim : {2, 3, 16}) {
    const auto report = check_ball_convexity(42 + dim, 20000, dim);
    EXPECT_EQ(report.trials, 20000u);
    EXPECT_EQ(report.violations, 0u);
    EXPECT_LE(report.max_norm, 1.0 + 1e-12);
  }
}

TEST(BallConvexity, ShellAndAntipodalCases) {
  Rng rng(8);
  for (int t = 0; t < 100; ++t) {
    auto x = random_point(rng, 3, 1.0);
    double s = 0.0;
    for (double v : x) s += v * v;
    for (auto& v : x) v /= std::sqrt(s);
    const double a = rng.uniform();
    double same = 0.0, mid = 0.0;
    for (double v : x) {
      same += (a * v + (1 - a) * v) * (a * v + (1 - a) * v);
      mid += (0.5 * v - 0.5 * v) * (0.5 * v - 0.5 * v);
    }
    EXPECT_NEAR(std::sqrt(same), 1.0, 1e-15);
    EXPECT_EQ(mid, 0.0);
  }
}

TEST(HemisphereMap, WorkedValues) {
  EXPECT_EQ(hemisphere_map(EuclideanPoint({0.0, 0.0}), Hemisphere::upper).coords(), (std::vector<double>{0, 0, 1}));
  const auto low = hemisphere_map(EuclideanPoint({0.6, 0.0}), Hemisphere::lower).coords();
  EXPECT_NEAR(low[0], 0.6, 1e-15);
  EXPECT_EQ(low[1], 0.0);
  EXPECT_NEAR(low[2], -0.8, 1e-15);
}

TEST(HemisphereMap, SignsAndIntersection) {
  Rng rng(9);
  for (int t = 0; t < 1000; ++t) {
    const auto v = random_point(rng, 3, 1.0);
    const auto up = hemisphere_map(EuclideanPoint(v), Hemisphere::upper);
    const auto down = hemisphere_map(EuclideanPoint(v), Hemisphere::lower);
    EXPECT_NEAR(up.squared_norm(), 1.0, 1e-12);
    EXPECT_NEAR(down.squared_norm(), 1.0, 1e-12);
    EXPECT_GE(up.last(), 0.0);
    EXPECT_LE(down.last(), 0.0);
  }
  const auto a = hemisphere_map(EuclideanPoint({0.6, 0.8}), Hemisphere::upper);
  const auto b = hemisphere_map(EuclideanPoint({0.6, 0.8}), Hemisphere::lower);
  EXPECT_EQ(a.coords(), b.coords());
  EXPECT_EQ(a.last(), 0.0);
}

TEST(HemisphereMap, RejectsOutsideBall) {
  EXPECT_THROW(hemisphere_map(EuclideanPoint({1.0, 1e-3}), Hemisphere::upper), DomainError);
}
