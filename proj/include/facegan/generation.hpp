#pragma once

#include <map>
#include <random>

#include <Eigen/Core>

#include "facegan/geometry.hpp"
#include "facegan/model.hpp"
#include "facegan/training.hpp"

namespace facegan {

/// N(mean, A A^T), stored through the centred-sample factor A.
struct LatentGaussian {
  Eigen::VectorXd mean;    // N_b
  Eigen::MatrixXd factor;  // N_b x N
  int label = -1;

  int dim() const { return static_cast<int>(mean.size()); }
  Eigen::MatrixXd covariance() const { return factor * factor.transpose(); }
};

/// Column i is the bottleneck of sample i's conditioned input.
Eigen::MatrixXd collect_bottlenecks(const NetParams<float>& g, const PairedDataset& ds, int batch = 16);

/// mean = row means, A = (Z - mean) / sqrt(N - 1).
LatentGaussian fit_latent_gaussian(const Eigen::MatrixXd& z);

/// mean + A eps, eps ~ N(0, I_N).
Eigen::VectorXd sample_latent(const LatentGaussian& g, std::mt19937_64& rng);

/// Bottleneck2 + decoder from z with zero skip inputs.
UVMap decode_latent(const NetParams<float>& g, const Eigen::VectorXd& z);

struct GeneratedFace {
  UVMap map;
  Mesh mesh;
};

GeneratedFace generate_face(const NetParams<float>& g, const Eigen::VectorXd& z, const UVLayout& layout,
                            const Mesh& topology);

/// One Gaussian per label, each from that label's samples only. An
/// unlabelled dataset gives a single entry under -1.
std::map<int, LatentGaussian> fit_label_gaussians(const NetParams<float>& g, const PairedDataset& ds, int batch = 16);

}  // namespace facegan
