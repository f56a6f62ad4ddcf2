#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "facegan/generation.hpp"
#include "facegan/synth.hpp"
#include "test_util.hpp"

using namespace facegan;

namespace {

NetConfig small_net(int labels = 0) {
  NetConfig c;
  c.resolution = 32;
  c.base_filters = 4;
  c.latent_dim = 4;
  c.label_channels = labels;
  return c;
}

PairedDataset random_dataset(int n, std::uint64_t seed, int labels = 0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> u(-0.8f, 0.8f);
  std::vector<UVMap> maps;
  std::vector<int> lab;
  for (int i = 0; i < n; ++i) {
    UVMap m(32, 32, 3);
    for (float& v : m.data) v = u(rng);
    std::fill(m.valid.begin(), m.valid.end(), std::uint8_t{1});
    maps.push_back(std::move(m));
    if (labels > 0) lab.push_back(i % labels);
  }
  return representation_dataset(std::move(maps), std::move(lab), labels);
}

Eigen::MatrixXd oracle_covariance(const Eigen::MatrixXd& z) {
  const auto d = z.rows(), n = z.cols();
  Eigen::VectorXd mu = Eigen::VectorXd::Zero(d);
  for (Eigen::Index j = 0; j < n; ++j)
    for (Eigen::Index i = 0; i < d; ++i) mu[i] += z(i, j) / static_cast<double>(n);
  Eigen::MatrixXd c = Eigen::MatrixXd::Zero(d, d);
  for (Eigen::Index a = 0; a < d; ++a)
    for (Eigen::Index b = 0; b < d; ++b) {
      double s = 0.0;
      for (Eigen::Index j = 0; j < n; ++j) s += (z(a, j) - mu[a]) * (z(b, j) - mu[b]);
      c(a, b) = s / static_cast<double>(n - 1);
    }
  return c;
}

double spectral_norm(const Eigen::MatrixXd& m) {
  return Eigen::JacobiSVD<Eigen::MatrixXd>(m).singularValues()[0];
}

}  // namespace

TEST_CASE("collect_bottlenecks matches standalone encoder passes") {
  const auto g = init_params<float>(small_net(), 5);
  PairedDataset ds = random_dataset(5, 1);
  ds.inputs[3] = ds.inputs[1];
  ds.targets[3] = ds.targets[1];
  const Eigen::MatrixXd z = collect_bottlenecks(g, ds, 2);
  CHECK(z.rows() == 4);
  CHECK(z.cols() == 5);
  CHECK(z.col(3) == z.col(1));
  const double scale = z.cwiseAbs().maxCoeff();
  for (int i = 0; i < 5; ++i) {
    Graph<float> gr;
    const auto p = bind(gr, g, false);
    Tensor<float> x = condition_input(ds.inputs[static_cast<std::size_t>(i)], {}).reshaped({1, 3, 32, 32});
    const auto r = encode(p, gr.leaf(std::move(x)));
    for (int k = 0; k < 4; ++k)
      CHECK(std::abs(z(k, i) - static_cast<double>(r.bottleneck.value()[static_cast<std::size_t>(k)])) <= 1e-5 * scale);
  }
}

TEST_CASE("fit_latent_gaussian examples") {
  Eigen::MatrixXd same(3, 4);
  for (int j = 0; j < 4; ++j) same.col(j) = Eigen::Vector3d(1.5, -2.0, 0.25);
  const LatentGaussian a = fit_latent_gaussian(same);
  CHECK(a.mean == Eigen::Vector3d(1.5, -2.0, 0.25));
  CHECK(a.factor.isZero(0.0));

  Eigen::MatrixXd two(1, 2);
  two << 1.0, -1.0;
  const LatentGaussian b = fit_latent_gaussian(two);
  CHECK(b.mean[0] == 0.0);
  CHECK(b.covariance()(0, 0) == doctest::Approx(2.0).epsilon(1e-15));

  std::mt19937_64 rng(8);
  std::normal_distribution<double> n(0.0, 1.0);
  Eigen::MatrixXd z(6, 25);
  for (Eigen::Index i = 0; i < z.size(); ++i) z.data()[i] = 3.0 * n(rng) + 1.0;
  const LatentGaussian c = fit_latent_gaussian(z);
  CHECK((c.covariance() - oracle_covariance(z)).cwiseAbs().maxCoeff() < 1e-10);

  CHECK_THROWS_AS(fit_latent_gaussian(Eigen::MatrixXd(3, 1)), DataError);
}

TEST_CASE("sample_latent statistics") {
  LatentGaussian zero;
  zero.mean = Eigen::Vector3d(0.5, 1.0, -1.0);
  zero.factor = Eigen::MatrixXd::Zero(3, 4);
  std::mt19937_64 rng(1);
  for (int i = 0; i < 10; ++i) CHECK(sample_latent(zero, rng) == zero.mean);

  std::normal_distribution<double> n(0.0, 1.0);
  Eigen::MatrixXd z(5, 30);
  for (Eigen::Index i = 0; i < z.size(); ++i) z.data()[i] = n(rng) * (1.0 + static_cast<double>(i % 5));
  const LatentGaussian g = fit_latent_gaussian(z);
  const Eigen::MatrixXd cov = g.covariance();
  const int draws = 100000;
  Eigen::MatrixXd s(5, draws);
  for (int k = 0; k < draws; ++k) s.col(k) = sample_latent(g, rng);
  const Eigen::VectorXd mean = s.rowwise().mean();
  for (int i = 0; i < 5; ++i) CHECK(std::abs(mean[i] - g.mean[i]) < 4.0 * std::sqrt(cov(i, i) / draws));
  const Eigen::MatrixXd c = s.colwise() - mean;
  const Eigen::MatrixXd sc = c * c.transpose() / static_cast<double>(draws - 1);
  CHECK(spectral_norm(sc - cov) / spectral_norm(cov) < 0.05);
}

TEST_CASE("decoder-only generation") {
  auto g = init_params<float>(small_net(), 6);
  const PairedDataset ds = random_dataset(3, 2);
  const Eigen::MatrixXd z = collect_bottlenecks(g, ds);

  Graph<float> gr;
  const auto p = bind(gr, g, false);
  Tensor<float> x = condition_input(ds.inputs[1], {}).reshaped({1, 3, 32, 32});
  const auto full = forward(p, gr.leaf(std::move(x)));
  Tensor<float> zt({1, 4});
  for (int k = 0; k < 4; ++k) zt[static_cast<std::size_t>(k)] = static_cast<float>(z(k, 1));
  const auto with_skips = decode(p, gr.leaf(zt), full.skip_features);
  CHECK(with_skips.value() == full.output.value());

  const UVMap m = decode_latent(g, z.col(1));
  const auto zero_skips = decode(p, gr.leaf(zt));
  CHECK(std::equal(m.data.begin(), m.data.end(), zero_skips.value().ptr()));
  CHECK(decode_latent(g, z.col(1)) == m);
  for (float v : m.data) {
    CHECK(v > -1.0f);
    CHECK(v < 1.0f);
  }

  auto poisoned = g;
  for (std::size_t i = 0; i < poisoned.params.size(); ++i)
    if (poisoned.groups[i] == ParamGroup::kEncoder || poisoned.groups[i] == ParamGroup::kBottleneck1)
      poisoned.params[i].value.fill(1e3f);
  CHECK(decode_latent(poisoned, z.col(1)) == m);

  CHECK_THROWS_AS(decode_latent(g, Eigen::VectorXd::Zero(5)), DataError);
}

TEST_CASE("generate_face is reproducible per seed") {
  const Mesh templ = synth_template(21);
  const UVLayout layout = cylindrical_unwrap(templ);
  const auto g = init_params<float>(small_net(), 7);
  const LatentGaussian lg = fit_latent_gaussian(collect_bottlenecks(g, random_dataset(6, 3)));
  std::mt19937_64 r1(42), r2(42);
  const GeneratedFace a = generate_face(g, sample_latent(lg, r1), layout, templ);
  const GeneratedFace b = generate_face(g, sample_latent(lg, r2), layout, templ);
  CHECK(a.map == b.map);
  CHECK(a.mesh.vertices == b.mesh.vertices);
  CHECK(a.mesh.vertex_count() == templ.vertex_count());
  CHECK(a.mesh.faces == templ.faces);
}

TEST_CASE("fit_label_gaussians") {
  const auto g1 = init_params<float>(small_net(), 9);
  const PairedDataset plain = random_dataset(6, 4);
  const auto single = fit_label_gaussians(g1, plain);
  REQUIRE(single.size() == 1);
  const LatentGaussian whole = fit_latent_gaussian(collect_bottlenecks(g1, plain));
  CHECK(single.at(-1).mean == whole.mean);
  CHECK(single.at(-1).factor == whole.factor);

  const auto g2 = init_params<float>(small_net(2), 10);
  PairedDataset ds = random_dataset(8, 5, 2);
  for (std::size_t i = 0; i < ds.size(); ++i)
    if (ds.labels[i] == 1)
      for (float& v : ds.inputs[i].data) v = 0.85f + 0.1f * v;
  const auto per = fit_label_gaussians(g2, ds);
  REQUIRE(per.size() == 2);
  const Eigen::MatrixXd z = collect_bottlenecks(g2, ds);
  for (const auto& [label, lg] : per) {
    CHECK(lg.label == label);
    Eigen::VectorXd lo = Eigen::VectorXd::Constant(4, 1e300), hi = -lo;
    for (std::size_t i = 0; i < ds.size(); ++i) {
      if (ds.labels[i] != label) continue;
      lo = lo.cwiseMin(z.col(static_cast<Eigen::Index>(i)));
      hi = hi.cwiseMax(z.col(static_cast<Eigen::Index>(i)));
    }
    for (int k = 0; k < 4; ++k) {
      CHECK(lg.mean[k] >= lo[k] - 1e-12);
      CHECK(lg.mean[k] <= hi[k] + 1e-12);
    }
  }

  std::vector<std::size_t> perm{5, 2, 7, 0, 3, 6, 1, 4};
  const auto shuffled = fit_label_gaussians(g2, ds.subset(perm));
  for (const auto& [label, lg] : per) {
    CHECK((shuffled.at(label).mean - lg.mean).cwiseAbs().maxCoeff() < 1e-12);
    CHECK((shuffled.at(label).covariance() - lg.covariance()).cwiseAbs().maxCoeff() < 1e-12);
  }

  PairedDataset lonely = random_dataset(3, 6, 2);
  lonely.labels = {0, 0, 1};
  CHECK_THROWS_AS(fit_label_gaussians(g2, lonely), DataError);
}
