#include <gtest/gtest.h>

#include <random>
#include <sstream>

#include "gsbl/array_steering.hpp"

using namespace gsbl;

namespace {

ArrayGeometry random_planar(std::mt19937_64& rng, int n) {
  std::uniform_real_distribution<double> radius(0.1, 3.0);
  std::uniform_real_distribution<double> bearing(-kPi, kPi);
  std::vector<Sensor> sensors{{0.0, 0.0}};
  for (int i = 1; i < n; ++i) sensors.push_back({radius(rng), bearing(rng)});
  return ArrayGeometry::planar(sensors);
}

// Polar form, written out independently of the library's Cartesian cache.
cplx polar_element(const Sensor& s, double az, double el) {
  return std::exp(cplx(0.0, -2.0 * kPi * s.radius * std::cos(el) * std::sin(az - s.bearing)));
}

}  // namespace

TEST(Steering, UlaBroadside) {
  const auto a = steering(ArrayGeometry::ula(2, 0.5), 0.0, 0.0);
  EXPECT_NEAR(std::abs(a[0] - cplx(1, 0)), 0.0, 1e-15);
  EXPECT_NEAR(std::abs(a[1] - cplx(1, 0)), 0.0, 1e-15);
}

TEST(Steering, UlaEndfire) {
  const auto a = steering(ArrayGeometry::ula(2, 0.5), kPi / 2, 0.0);
  EXPECT_NEAR(std::abs(a[0] - cplx(1, 0)), 0.0, 1e-15);
  EXPECT_NEAR(std::abs(a[1] - cplx(-1, 0)), 0.0, 1e-15);
}

TEST(Steering, PlanarZenithIsAllOnes) {
  std::mt19937_64 rng(3);
  const auto g = random_planar(rng, 7);
  const auto a = steering(g, 1.234, kPi / 2);
  EXPECT_LT((a - CVec::Ones(7)).norm(), 1e-12);
}

TEST(Steering, MatchesPolarDefinition) {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> az(-kPi, kPi), el(0.0, kPi / 2);
  for (int rep = 0; rep < 20; ++rep) {
    const auto g = random_planar(rng, 9);
    const double t = az(rng), p = el(rng);
    const auto a = steering(g, t, p);
    for (int n = 0; n < g.size(); ++n) {
      EXPECT_NEAR(std::abs(a[n] - polar_element(g.sensors()[static_cast<std::size_t>(n)], t, p)), 0.0, 1e-12);
    }
  }
}

TEST(Steering, UnitModulusAndReferenceElement) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> az(-10.0, 10.0), el(-3.0, 3.0);
  for (int rep = 0; rep < 100; ++rep) {
    const auto g = rep % 2 ? random_planar(rng, 6) : ArrayGeometry::ula(6, 0.37);
    const auto a = steering(g, az(rng), el(rng));
    for (int n = 0; n < a.size(); ++n) EXPECT_NEAR(std::abs(a[n]), 1.0, 1e-12);
    EXPECT_NEAR(std::abs(a[0] - cplx(1, 0)), 0.0, 1e-15);
  }
}

TEST(SteeringGrad, UlaAtBroadside) {
  const auto d = steering_grad(ArrayGeometry::ula(2, 0.5), 0.0, 0.0, AngleParam::azimuth_gap);
  EXPECT_NEAR(std::abs(d[0]), 0.0, 1e-15);
  EXPECT_NEAR(std::abs(d[1] - cplx(0, -kPi)), 0.0, 1e-12);
}

TEST(SteeringGrad, PlanarAzimuthVanishesAtZenith) {
  std::mt19937_64 rng(6);
  const auto g = random_planar(rng, 5);
  EXPECT_LT(steering_grad(g, 0.7, kPi / 2, AngleParam::azimuth_gap).norm(), 1e-12);
}

TEST(SteeringGrad, UlaElevationIsZero) {
  EXPECT_EQ(steering_grad(ArrayGeometry::ula(4, 0.5), 0.3, 0.2, AngleParam::elevation).norm(), 0.0);
}

TEST(SteeringGrad, MatchesCentralDifferences) {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> az(-kPi, kPi), el(0.05, kPi / 2 - 0.05);
  const double h = 1e-6;
  for (int rep = 0; rep < 100; ++rep) {
    const bool ula = rep % 3 == 0;
    const auto g = ula ? ArrayGeometry::ula(8, 0.5) : random_planar(rng, 8);
    const double t = ula ? az(rng) / 2 : az(rng);
    const double p = ula ? 0.0 : el(rng);
    const CVec fd_az = (steering(g, t + h, p) - steering(g, t - h, p)) / (2 * h);
    const CVec d_az = steering_grad(g, t, p, AngleParam::azimuth_gap);
    EXPECT_LE((d_az - fd_az).norm(), 1e-6 * std::max(1.0, d_az.norm())) << "rep " << rep;
    EXPECT_EQ(d_az[0], cplx(0, 0));
    if (!ula) {
      const CVec fd_el = (steering(g, t, p + h) - steering(g, t, p - h)) / (2 * h);
      const CVec d_el = steering_grad(g, t, p, AngleParam::elevation);
      EXPECT_LE((d_el - fd_el).norm(), 1e-6 * std::max(1.0, d_el.norm())) << "rep " << rep;
    }
  }
}

TEST(AngleGrid, UniformSpansAndSpacing) {
  const auto ula = AngleGrid::uniform(ArrayGeometry::ula(8, 0.5), 8);
  EXPECT_NEAR(ula.interval, kPi / 8, 1e-15);
  EXPECT_NEAR(ula.points[0], -kPi / 2, 1e-15);
  for (int l = 1; l < 8; ++l) EXPECT_NEAR(ula.points[l] - ula.points[l - 1], ula.interval, 1e-14);

  const auto planar = AngleGrid::uniform(ArrayGeometry::planar_lattice(2, 2, 0.5), 16);
  EXPECT_NEAR(planar.interval, 2 * kPi / 16, 1e-15);
  EXPECT_NEAR(planar.points[0], -kPi, 1e-15);
}

TEST(AngleGrid, SineGridIsUniformInSine) {
  const auto g = AngleGrid::sine_uniform(ArrayGeometry::ula(8, 0.5), 8);
  for (int l = 0; l < 8; ++l) EXPECT_NEAR(std::sin(g.points[l]), -1.0 + 2.0 * l / 8, 1e-14);
  EXPECT_THROW(AngleGrid::sine_uniform(ArrayGeometry::planar_lattice(2, 2, 0.5), 8), config_error);
}

TEST(Dictionary, SineGridWithNPointsHasOrthogonalColumns) {
  const int n = 16;
  const auto geom = ArrayGeometry::ula(n, 0.5);
  const CMat a = build_dictionary(geom, AngleGrid::sine_uniform(geom, n));
  EXPECT_LT((a.adjoint() * a - n * CMat::Identity(n, n)).norm(), 1e-10);
}

TEST(Dictionary, SingleColumnIsSteering) {
  const auto geom = ArrayGeometry::ula(5, 0.5);
  AngleGrid grid = AngleGrid::uniform(geom, 1);
  const CMat a = build_dictionary(geom, grid);
  ASSERT_EQ(a.cols(), 1);
  EXPECT_LT((a.col(0) - steering(geom, grid.points[0], 0.0)).norm(), 1e-15);
}

TEST(Dictionary, GapMovesOnlyItsColumn) {
  const auto geom = ArrayGeometry::planar_lattice(3, 3, 0.5);
  const auto grid = AngleGrid::uniform(geom, 12);
  auto off = GridOffsets::zeros(12);
  const CMat a0 = build_dictionary(geom, grid, off);
  off.beta[5] = 0.3 * grid.interval;
  const CMat a1 = build_dictionary(geom, grid, off);
  for (int l = 0; l < 12; ++l) {
    if (l == 5) {
      EXPECT_GT((a1.col(l) - a0.col(l)).norm(), 1e-3);
    } else {
      EXPECT_EQ((a1.col(l) - a0.col(l)).norm(), 0.0);
    }
  }
}

TEST(Dictionary, ColumnsFollowOffsets) {
  std::mt19937_64 rng(8);
  const auto geom = random_planar(rng, 6);
  const auto grid = AngleGrid::uniform(geom, 10);
  GridOffsets off{RVec::Random(10) * grid.interval / 2, (RVec::Random(10).array() + 1.0).matrix() * kPi / 4};
  const CMat a = build_dictionary(geom, grid, off);
  for (int l = 0; l < 10; ++l) {
    EXPECT_LT((a.col(l) - steering(geom, grid.points[l] + off.beta[l], off.elevation[l])).norm(), 1e-14);
  }
  const CMat d = build_dictionary_grad(geom, grid, off, AngleParam::elevation);
  for (int l = 0; l < 10; ++l) {
    EXPECT_LT((d.col(l) - steering_grad(geom, grid.points[l] + off.beta[l], off.elevation[l], AngleParam::elevation))
                  .norm(),
              1e-13);
  }
}

TEST(EffectiveSensing, IdentityPilotsGiveDictionary) {
  const auto geom = ArrayGeometry::ula(6, 0.5);
  const CMat a = build_dictionary(geom, AngleGrid::uniform(geom, 6));
  const auto s = effective_sensing(CMat::Identity(6, 6), a);
  EXPECT_LT((s.phi - a).norm(), 1e-15);
  EXPECT_LT((s.stacked.leftCols(6) - a).norm(), 1e-15);
  EXPECT_LT((s.stacked.rightCols(6) - a).norm(), 1e-15);
}

TEST(EffectiveSensing, ZeroDictionary) {
  EXPECT_EQ(effective_sensing(CMat::Random(3, 4), CMat::Zero(4, 5)).phi.norm(), 0.0);
}

TEST(EffectiveSensing, MatchesTripleLoop) {
  std::mt19937_64 rng(9);
  std::normal_distribution<double> nd;
  CMat x(4, 3), a(3, 2);
  for (auto* m : {&x, &a}) {
    for (Eigen::Index i = 0; i < m->size(); ++i) m->data()[i] = cplx(nd(rng), nd(rng));
  }
  CMat ref = CMat::Zero(4, 2);
  for (int i = 0; i < 4; ++i) {
    for (int j = 0; j < 2; ++j) {
      for (int k = 0; k < 3; ++k) ref(i, j) += x(i, k) * a(k, j);
    }
  }
  EXPECT_LT((effective_sensing(x, a).phi - ref).norm(), 1e-12);
}

TEST(EffectiveSensing, ShapeMismatchThrows) {
  EXPECT_THROW(effective_sensing(CMat::Zero(3, 4), CMat::Zero(5, 2)), shape_error);
}

TEST(Geometry, Validation) {
  EXPECT_THROW(ArrayGeometry::ula(1, 0.5), config_error);
  EXPECT_THROW(ArrayGeometry::ula(4, 0.0), config_error);
  EXPECT_THROW(ArrayGeometry::planar({{0.5, 0.0}, {0.0, 0.0}}), config_error);
}

TEST(Geometry, ParsesSensorAndShorthandRecords) {
  std::istringstream planar("# two sensors\n0 0\n0.5, 1.5707963267948966\n");
  const auto g = parse_geometry(planar);
  EXPECT_FALSE(g.is_ula());
  ASSERT_EQ(g.size(), 2);
  EXPECT_NEAR(g.y()[1], 0.5, 1e-15);

  std::istringstream ula("ula 8 0.5\n");
  const auto u = parse_geometry(ula);
  EXPECT_TRUE(u.is_ula());
  EXPECT_EQ(u.size(), 8);

  std::istringstream bad("0 0\nfoo\n");
  EXPECT_THROW(parse_geometry(bad), config_error);
}

TEST(Geometry, LatticeIsPolarAroundFirstElement) {
  const auto g = ArrayGeometry::planar_lattice(2, 3, 0.5);
  ASSERT_EQ(g.size(), 6);
  EXPECT_EQ(g.sensors()[0].radius, 0.0);
  // element (row 1, col 2) sits at (1.0, 0.5) wavelengths
  EXPECT_NEAR(g.sensors()[5].radius, std::hypot(1.0, 0.5), 1e-15);
  EXPECT_NEAR(g.sensors()[5].bearing, std::atan2(0.5, 1.0), 1e-15);
}
