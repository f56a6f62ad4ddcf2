#include <doctest.h>

#include <cmath>

#include "facegan/evaluation.hpp"
#include "facegan/synth.hpp"

using namespace facegan;

TEST_CASE("template") {
  const Mesh t = synth_template(45);
  CHECK(t.vertex_count() == 45 * 45);
  CHECK(t.faces.rows() == 2 * 44 * 44);
  CHECK_NOTHROW(t.validate());
  const int tip = t.landmark(kNoseTip);
  CHECK(t.vertices(tip, 2) == t.vertices.col(2).maxCoeff());
  const Eigen::RowVector3d l = t.vertices.row(t.landmark(kLeftEyeOuter));
  const Eigen::RowVector3d r = t.vertices.row(t.landmark(kRightEyeOuter));
  CHECK(l.x() > 0.0);
  CHECK(r.x() == doctest::Approx(-l.x()).epsilon(1e-9));
  CHECK((l - r).norm() > 50.0);
}

TEST_CASE("one mode gives a rank-one family") {
  SynthOptions o;
  o.subjects = 30;
  o.modes = 1;
  o.grid = 21;
  const SynthDataset ds = synth_dataset(o);
  CHECK(ds.meshes.size() == 30);
  CHECK(ds.noisy.empty());
  CHECK(pca_fit(ds.meshes, 0.98).k() == 1);
  CHECK(pca_fit(ds.meshes, 1.0).all_variances.size() == 1);

  o.modes = 5;
  const SynthDataset five = synth_dataset(o);
  CHECK(pca_fit(five.meshes, 1.0).all_variances.size() == 5);
  o.modes = 0;
  CHECK_THROWS_AS(synth_dataset(o), DataError);
}

TEST_CASE("same seed, same dataset") {
  SynthOptions o;
  o.subjects = 6;
  o.grid = 15;
  o.noise = 0.5;
  o.labels = 3;
  o.seed = 17;
  const SynthDataset a = synth_dataset(o), b = synth_dataset(o);
  REQUIRE(a.meshes.size() == 18);
  REQUIRE(a.noisy.size() == 18);
  for (std::size_t i = 0; i < a.meshes.size(); ++i) {
    CHECK(a.meshes[i].vertices == b.meshes[i].vertices);
    CHECK(a.noisy[i].vertices == b.noisy[i].vertices);
  }
  CHECK(a.label == b.label);
  CHECK(a.subject == b.subject);
  o.seed = 18;
  CHECK(synth_dataset(o).meshes[0].vertices != a.meshes[0].vertices);
}

TEST_CASE("label offsets show up in per-label means") {
  SynthOptions o;
  o.subjects = 200;
  o.grid = 21;
  o.labels = 2;
  o.seed = 3;
  const SynthDataset ds = synth_dataset(o);
  CHECK(ds.label_names.size() == 2);
  CHECK(ds.label_offsets[0].isZero(0.0));
  const Eigen::Index v = ds.templ.vertex_count();
  Points mean0 = Points::Zero(v, 3), mean1 = Points::Zero(v, 3);
  for (std::size_t i = 0; i < ds.meshes.size(); ++i) (ds.label[i] == 0 ? mean0 : mean1) += ds.meshes[i].vertices / 200.0;
  const Points diff = mean1 - mean0;
  const Points& off = ds.label_offsets[1];
  CHECK(off.norm() > 1.0);
  CHECK((diff - off).cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("noisy copies differ from clean meshes by the noise level") {
  SynthOptions o;
  o.subjects = 4;
  o.grid = 31;
  o.noise = 0.8;
  const SynthDataset ds = synth_dataset(o);
  double acc = 0.0;
  long n = 0;
  for (std::size_t i = 0; i < ds.meshes.size(); ++i) {
    const Points d = ds.noisy[i].vertices - ds.meshes[i].vertices;
    for (Eigen::Index k = 0; k < d.rows(); ++k) acc += d.row(k).squaredNorm(), ++n;
  }
  CHECK(std::sqrt(acc / static_cast<double>(n)) == doctest::Approx(0.8).epsilon(0.05));
}
