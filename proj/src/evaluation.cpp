#include "facegan/evaluation.hpp"

#include <Eigen/Dense>
#include <Eigen/SVD>
#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace facegan {

double ErrorDistribution::mean() const {
  if (values.empty()) return 0.0;
  return std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
}

double ErrorDistribution::stddev() const {
  if (values.empty()) return 0.0;
  const double m = mean();
  double acc = 0.0;
  for (double v : values) acc += (v - m) * (v - m);
  return std::sqrt(acc / static_cast<double>(values.size()));
}

ErrorDistribution make_distribution(std::vector<double> values, double normalization) {
  for (double v : values)
    if (!(v >= 0.0) || !std::isfinite(v)) throw NumericalError("error distribution: values must be finite and >= 0");
  std::sort(values.begin(), values.end());
  return {std::move(values), normalization};
}

ErrorDistribution generalization_errors(std::span<const Mesh> reconstructions, std::span<const Mesh> test) {
  if (reconstructions.size() != test.size()) throw DataError("generalization: reconstruction count differs");
  std::vector<double> v;
  for (std::size_t i = 0; i < test.size(); ++i) {
    if (reconstructions[i].vertex_count() != test[i].vertex_count())
      throw DataError("generalization: vertex counts differ for mesh " + std::to_string(i));
    const Eigen::VectorXd d = (reconstructions[i].vertices - test[i].vertices).rowwise().norm();
    v.insert(v.end(), d.data(), d.data() + d.size());
  }
  return make_distribution(std::move(v));
}

ErrorDistribution generalization_errors(const MeshModel& model, std::span<const Mesh> test) {
  std::vector<Mesh> rec;
  rec.reserve(test.size());
  for (const Mesh& m : test) rec.push_back(model(m));
  return generalization_errors(rec, test);
}

CedCurve ced_auc_fr(const ErrorDistribution& errs, double x_max, double threshold, int points) {
  if (errs.values.empty()) throw DataError("ced: empty error distribution");
  if (!(x_max > 0)) throw DataError("ced: x_max must be > 0");
  if (points < 2) throw DataError("ced: need at least 2 curve points");
  CedCurve c;
  c.x_max = x_max;
  c.threshold = threshold > 0 ? threshold : x_max;
  const auto& v = errs.values;  // sorted
  const auto n = static_cast<double>(v.size());
  for (int k = 0; k < points; ++k) {
    const double x = x_max * k / (points - 1);
    c.x.push_back(x);
    c.y.push_back(static_cast<double>(std::upper_bound(v.begin(), v.end(), x) - v.begin()) / n);
  }
  // each error e contributes the indicator [e <= x] over x in [e, x_max]
  double area = 0.0;
  for (double e : v) area += std::max(0.0, x_max - e);
  c.auc = area / (n * x_max);
  c.fr = static_cast<double>(v.end() - std::upper_bound(v.begin(), v.end(), c.threshold)) / n;
  return c;
}

double rmse3d_translation(const Mesh& pred, const Mesh& gt, double crop_radius) {
  if (pred.vertex_count() != gt.vertex_count()) throw DataError("rmse3d: meshes do not share a topology");
  const double iod = (gt.vertices.row(gt.landmark(kLeftEyeOuter)) - gt.vertices.row(gt.landmark(kRightEyeOuter))).norm();
  if (!(iod > 1e-12)) throw DataError("rmse3d: degenerate inter-ocular distance");
  // coarse rigid fit on the dense correspondence, then point-to-plane ICP
  const RigidTransform coarse = procrustes_align(pred.vertices, gt.vertices, false);
  const Points start = coarse.apply(pred.vertices);
  const IcpResult icp = icp_point_to_plane(start, gt);
  const Points aligned = icp.transform.apply(start);
  const Points normals = vertex_normals(gt);
  const Eigen::RowVector3d tip = gt.vertices.row(gt.landmark(kNoseTip));
  double acc = 0.0;
  int count = 0;
  for (int i = 0; i < gt.vertex_count(); ++i) {
    if ((gt.vertices.row(i) - tip).norm() > crop_radius) continue;
    const double d = (aligned.row(i) - gt.vertices.row(i)).dot(normals.row(i));
    acc += d * d;
    ++count;
  }
  if (count == 0) throw DataError("rmse3d: crop contains no vertices");
  return std::sqrt(acc / count) / iod;
}

double mean_vertex_distance(const Mesh& a, const Mesh& b) {
  if (a.vertex_count() != b.vertex_count()) throw DataError("mean_vertex_distance: vertex counts differ");
  return (a.vertices - b.vertices).rowwise().norm().mean();
}

Specificity specificity(std::span<const Mesh> generated, std::span<const Mesh> test) {
  if (test.empty()) throw DataError("specificity: empty test set");
  if (generated.empty()) throw DataError("specificity: no generated meshes");
  Specificity s;
  for (const Mesh& g : generated) {
    double best = std::numeric_limits<double>::infinity();
    for (const Mesh& t : test) best = std::min(best, mean_vertex_distance(g, t));
    s.distances.push_back(best);
  }
  const ErrorDistribution d{s.distances, 1.0};
  s.mean = d.mean();
  s.std = d.stddev();
  return s;
}

Specificity specificity(const std::function<Mesh(std::size_t)>& generator, std::span<const Mesh> test,
                        std::size_t n_samples) {
  std::vector<Mesh> gen;
  gen.reserve(n_samples);
  for (std::size_t i = 0; i < n_samples; ++i) gen.push_back(generator(i));
  return specificity(gen, test);
}

// ---- PCA -----------------------------------------------------------------

Eigen::VectorXd flatten(const Mesh& m) {
  Eigen::VectorXd v(3 * m.vertex_count());
  for (int i = 0; i < m.vertex_count(); ++i) v.segment<3>(3 * i) = m.vertices.row(i).transpose();
  return v;
}

namespace {

PCAModel pca_core(std::span<const Mesh> train, const std::function<int(const Eigen::VectorXd&)>& choose_k) {
  if (train.size() < 2) throw DataError("pca: need at least 2 training meshes");
  const int v = train.front().vertex_count();
  Eigen::MatrixXd x(3 * v, static_cast<Eigen::Index>(train.size()));
  for (std::size_t i = 0; i < train.size(); ++i) {
    if (train[i].vertex_count() != v) throw DataError("pca: meshes do not share a topology");
    x.col(static_cast<Eigen::Index>(i)) = flatten(train[i]);
  }
  PCAModel m;
  m.topology = train.front();
  m.mean = x.rowwise().mean();
  x.colwise() -= m.mean;
  const Eigen::BDCSVD<Eigen::MatrixXd> svd(x, Eigen::ComputeThinU);
  const auto n1 = static_cast<double>(train.size() - 1);
  const Eigen::VectorXd sv = svd.singularValues();
  // numerical rank: drop directions at roundoff level
  const double cut = sv.size() ? sv[0] * 1e-10 : 0.0;
  Eigen::Index rank = 0;
  while (rank < sv.size() && sv[rank] > cut) ++rank;
  m.all_variances = sv.head(rank).array().square() / n1;
  const int k = std::clamp(choose_k(m.all_variances), 0, static_cast<int>(rank));
  m.components = svd.matrixU().leftCols(k);
  m.variances = m.all_variances.head(k);
  return m;
}

}  // namespace

PCAModel pca_fit(std::span<const Mesh> train, double variance_target) {
  if (!(variance_target > 0 && variance_target <= 1)) throw DataError("pca: variance target must be in (0,1]");
  return pca_core(train, [&](const Eigen::VectorXd& var) {
    const double total = var.sum();
    double acc = 0.0;
    for (Eigen::Index k = 0; k < var.size(); ++k) {
      acc += var[k];
      if (acc >= variance_target * total) return static_cast<int>(k + 1);
    }
    return static_cast<int>(var.size());
  });
}

PCAModel pca_fit_k(std::span<const Mesh> train, int k) {
  if (k < 0) throw DataError("pca: k must be >= 0");
  return pca_core(train, [&](const Eigen::VectorXd&) { return k; });
}

Eigen::VectorXd pca_project(const PCAModel& model, const Mesh& mesh) {
  if (3 * mesh.vertex_count() != model.mean.size()) throw DataError("pca: mesh does not match the model topology");
  return model.components.transpose() * (flatten(mesh) - model.mean);
}

Mesh pca_decode(const PCAModel& model, const Eigen::VectorXd& coefficients) {
  if (coefficients.size() != model.components.cols()) throw DataError("pca: coefficient count mismatch");
  const Eigen::VectorXd x = model.mean + model.components * coefficients;
  Points p(x.size() / 3, 3);
  for (Eigen::Index i = 0; i < p.rows(); ++i) p.row(i) = x.segment<3>(3 * i).transpose();
  return model.topology.with_vertices(std::move(p));
}

Mesh pca_reconstruct(const PCAModel& model, const Mesh& mesh) {
  return pca_decode(model, pca_project(model, mesh));
}

Mesh pca_sample(const PCAModel& model, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Eigen::VectorXd c(model.k());
  for (int i = 0; i < model.k(); ++i) c[i] = std::sqrt(model.variances[i]) * n(rng);
  return pca_decode(model, c);
}

}  // namespace facegan
