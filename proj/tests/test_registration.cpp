#include <doctest.h>

#include <cmath>
#include <random>

#include "facegan/geometry.hpp"
#include "facegan/synth.hpp"
#include "test_util.hpp"

using namespace facegan;
using facegan::testing::random_rotation;
using facegan::testing::random_vector;

namespace {

// smooth low-frequency warp, amplitude in mm
Points smooth_warp(const Points& p, double amp) {
  Points out = p;
  for (Eigen::Index i = 0; i < p.rows(); ++i) {
    const double x = p(i, 0) / 80.0, y = p(i, 1) / 100.0;
    out(i, 0) += amp * 0.6 * std::sin(1.3 * y);
    out(i, 1) += amp * 0.5 * x * x;
    out(i, 2) += amp * (std::cos(1.5 * x) * std::cos(1.2 * y) - 0.5);
  }
  return out;
}

}  // namespace

TEST_CASE("nicp: scan equal to template leaves it in place") {
  const Mesh t = synth_template(20);
  const auto w = nicp_data_weights(t);
  const auto r = nicp_fit(t, t.vertices, w, NicpOptions::geometric(50, 1, 3));
  CHECK((r.registered.vertices - t.vertices).cwiseAbs().maxCoeff() < 1e-6);
}

TEST_CASE("nicp: recovers a smooth deformation") {
  const Mesh t = synth_template(30);
  const Points target = smooth_warp(t.vertices, 8.0);
  const auto r = nicp_fit(t, target, nicp_data_weights(t));
  const double mean_err = (r.registered.vertices - target).rowwise().norm().mean();
  MESSAGE("nicp mean error " << mean_err << " mm, diag " << t.bbox_diagonal());
  CHECK(mean_err < 0.01 * t.bbox_diagonal());
  REQUIRE(r.stage_residuals.size() == 8);
  for (std::size_t s = 1; s < r.stage_residuals.size(); ++s)
    CHECK(r.stage_residuals[s] <= r.stage_residuals[s - 1] * (1.0 + 1e-9));
}

TEST_CASE("nicp: data weights") {
  const Mesh t = synth_template(20);
  const auto w = nicp_data_weights(t);
  CHECK(w[static_cast<std::size_t>(t.landmark(kNoseTip))] == 1.0);
  CHECK(*std::min_element(w.begin(), w.end()) == 0.0);
}

TEST_CASE("nicp: errors") {
  Mesh t = synth_template(6);
  const auto w = nicp_data_weights(t);
  CHECK_THROWS_AS(nicp_fit(t, t.vertices, std::vector<double>(3, 1.0)), DataError);
  CHECK_THROWS_AS(nicp_fit(t, Points(0, 3), w), DataError);
  // drop the faces of the last row of cells: the top row becomes isolated vertices
  Mesh d = t;
  d.faces = t.faces.topRows(t.faces.rows() - 2 * 5);
  CHECK_THROWS_AS(nicp_fit(d, d.vertices, w), NumericalError);
}

TEST_CASE("icp: identity") {
  const Mesh t = synth_template(25);
  const auto r = icp_point_to_plane(t.vertices, t);
  CHECK((r.transform.rotation - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff() < 1e-10);
  CHECK(r.transform.translation.cwiseAbs().maxCoeff() < 1e-10);
  CHECK(r.residual < 1e-10);
}

TEST_CASE("icp: recovers random rigid motions, 100 of 100") {
  const Mesh t = synth_template(45);
  const double diag = t.bbox_diagonal();
  std::mt19937_64 rng(2024);
  int recovered = 0;
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const Eigen::Matrix3d r = random_rotation(rng, 15.0 * std::numbers::pi / 180.0);
    const Eigen::Vector3d tr = random_vector(rng, 0.1 * diag / std::sqrt(3.0));
    // source is the target moved by the inverse motion; ICP must find (r, tr)
    const auto truth = RigidTransform::from_rigid(r, tr);
    const Points source = truth.inverse().apply(t.vertices);
    const auto est = icp_point_to_plane(source, t);
    const double err = std::max((est.transform.rotation - r).cwiseAbs().maxCoeff(),
                                (est.transform.translation - tr).cwiseAbs().maxCoeff());
    worst = std::max(worst, err);
    if (err < 1e-6) ++recovered;
    CHECK(est.residual <= point_to_plane_residual(source, t, truth) + 1e-8);
  }
  MESSAGE("icp worst parameter error " << worst);
  CHECK(recovered == 100);
}

TEST_CASE("icp: by-index correspondence and errors") {
  const Mesh t = synth_template(15);
  std::mt19937_64 rng(3);
  const auto truth = RigidTransform::from_rigid(random_rotation(rng, 0.5), random_vector(rng, 20.0));
  IcpOptions o;
  o.correspondence = Correspondence::kByIndex;
  const auto est = icp_point_to_plane(truth.inverse().apply(t.vertices), t, o);
  CHECK((est.transform.rotation - truth.rotation).cwiseAbs().maxCoeff() < 1e-6);
  CHECK(est.transform.rotation.determinant() == doctest::Approx(1.0));

  CHECK_THROWS_AS(icp_point_to_plane(t.vertices.topRows(5), t), DataError);
  CHECK_THROWS_AS(icp_point_to_plane(t.vertices.topRows(20), t, o), DataError);
}

TEST_CASE("rotation_from_axis_angle") {
  CHECK(rotation_from_axis_angle(Eigen::Vector3d::Zero()) == Eigen::Matrix3d::Identity());
  const Eigen::Matrix3d r = rotation_from_axis_angle(Eigen::Vector3d(0, 0, std::numbers::pi / 2));
  CHECK((r * Eigen::Vector3d::UnitX() - Eigen::Vector3d::UnitY()).norm() < 1e-15);
}
