#pragma once

#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "facegan/geometry.hpp"

namespace facegan {

/// Pooled error values, sorted ascending.
struct ErrorDistribution {
  std::vector<double> values;
  double normalization = 1.0;  // divisor already applied to values

  double mean() const;
  double stddev() const;  // population
};

ErrorDistribution make_distribution(std::vector<double> values, double normalization = 1.0);

using MeshModel = std::function<Mesh(const Mesh&)>;

/// Per-vertex Euclidean distances between every test mesh and its
/// reconstruction, pooled.
ErrorDistribution generalization_errors(const MeshModel& model, std::span<const Mesh> test);
ErrorDistribution generalization_errors(std::span<const Mesh> reconstructions, std::span<const Mesh> test);

struct CedCurve {
  std::vector<double> x, y;  // y = fraction of errors <= x
  double auc = 0.0;          // integral of CED over [0, x_max] / x_max, exact
  double fr = 0.0;           // fraction of errors > threshold
  double x_max = 0.0;
  double threshold = 0.0;
};

/// threshold <= 0 means threshold = x_max.
CedCurve ced_auc_fr(const ErrorDistribution& errs, double x_max = 0.01, double threshold = 0.0, int points = 101);

/// Point-to-plane ICP of pred onto gt, crop to gt vertices within
/// crop_radius of gt's nose tip, RMS point-to-plane distance over the crop
/// divided by gt's outer-eye distance. Meshes in millimetres, shared topology.
double rmse3d_translation(const Mesh& pred, const Mesh& gt, double crop_radius = 150.0);

struct Specificity {
  double mean = 0.0, std = 0.0;  // population std
  std::vector<double> distances;
};

/// Mean per-vertex Euclidean distance between two meshes in correspondence.
double mean_vertex_distance(const Mesh& a, const Mesh& b);

/// For each generated mesh, the distance to its nearest test mesh.
Specificity specificity(std::span<const Mesh> generated, std::span<const Mesh> test);
Specificity specificity(const std::function<Mesh(std::size_t)>& generator, std::span<const Mesh> test,
                        std::size_t n_samples);

// ---- PCA baseline --------------------------------------------------------

struct PCAModel {
  Eigen::VectorXd mean;        // 3V, xyz interleaved per vertex
  Eigen::MatrixXd components;  // 3V x k, orthonormal columns
  Eigen::VectorXd variances;   // k, non-increasing
  Eigen::VectorXd all_variances;  // every nonzero-rank eigenvalue of the fit
  Mesh topology;

  int k() const { return static_cast<int>(components.cols()); }
};

/// Smallest k whose eigenvalue prefix sum reaches variance_target of the total.
PCAModel pca_fit(std::span<const Mesh> train, double variance_target = 0.98);
/// Fixed number of components (clamped to the available rank).
PCAModel pca_fit_k(std::span<const Mesh> train, int k);

Mesh pca_reconstruct(const PCAModel& model, const Mesh& mesh);
Eigen::VectorXd pca_project(const PCAModel& model, const Mesh& mesh);
Mesh pca_decode(const PCAModel& model, const Eigen::VectorXd& coefficients);
Mesh pca_sample(const PCAModel& model, std::mt19937_64& rng);

Eigen::VectorXd flatten(const Mesh& m);

}  // namespace facegan
