#include "facegan/generation.hpp"

#include <cmath>
#include <numeric>

namespace facegan {

Eigen::MatrixXd collect_bottlenecks(const NetParams<float>& g, const PairedDataset& ds, int batch) {
  if (ds.size() == 0) throw DataError("collect_bottlenecks: empty dataset");
  ds.validate();
  const int nb = g.config.latent_dim;
  Eigen::MatrixXd z(nb, static_cast<Eigen::Index>(ds.size()));
  std::vector<std::size_t> idx(ds.size());
  std::iota(idx.begin(), idx.end(), 0);
  for (std::size_t start = 0; start < idx.size(); start += static_cast<std::size_t>(batch)) {
    const std::size_t end = std::min(idx.size(), start + static_cast<std::size_t>(batch));
    const Batch b = make_batch(ds, std::span<const std::size_t>(idx.data() + start, end - start));
    Graph<float> gr;
    const auto p = bind(gr, g, false);
    const Tensor<float>& e = encode(p, gr.leaf(b.input)).bottleneck.value();
    for (std::size_t s = 0; s < end - start; ++s)
      for (int k = 0; k < nb; ++k)
        z(k, static_cast<Eigen::Index>(start + s)) = e[s * static_cast<std::size_t>(nb) + static_cast<std::size_t>(k)];
  }
  return z;
}

LatentGaussian fit_latent_gaussian(const Eigen::MatrixXd& z) {
  if (z.cols() < 2) throw DataError("fit_latent_gaussian: need at least 2 embeddings, got " + std::to_string(z.cols()));
  if (!z.allFinite()) throw NumericalError("fit_latent_gaussian: non-finite embedding");
  LatentGaussian g;
  g.mean = z.rowwise().mean();
  g.factor = (z.colwise() - g.mean) / std::sqrt(static_cast<double>(z.cols() - 1));
  return g;
}

Eigen::VectorXd sample_latent(const LatentGaussian& g, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Eigen::VectorXd eps(g.factor.cols());
  for (Eigen::Index i = 0; i < eps.size(); ++i) eps[i] = n(rng);
  return g.mean + g.factor * eps;
}

UVMap decode_latent(const NetParams<float>& g, const Eigen::VectorXd& z) {
  const int nb = g.config.latent_dim, h = g.config.resolution;
  if (z.size() != nb)
    throw DataError("decode_latent: latent has " + std::to_string(z.size()) + " entries, network expects " +
                    std::to_string(nb));
  Tensor<float> zt({1, nb});
  for (int k = 0; k < nb; ++k) zt[static_cast<std::size_t>(k)] = static_cast<float>(z[k]);
  Graph<float> gr;
  const auto p = bind(gr, g, false);
  const Tensor<float>& out = decode(p, gr.leaf(std::move(zt))).value();
  UVMap m(h, h, 3);
  std::copy(out.data().begin(), out.data().end(), m.data.begin());
  std::fill(m.valid.begin(), m.valid.end(), std::uint8_t{1});
  return m;
}

GeneratedFace generate_face(const NetParams<float>& g, const Eigen::VectorXd& z, const UVLayout& layout,
                            const Mesh& topology) {
  GeneratedFace f;
  f.map = decode_latent(g, z);
  f.mesh = sample_mesh_from_uv(f.map, layout, topology);
  return f;
}

std::map<int, LatentGaussian> fit_label_gaussians(const NetParams<float>& g, const PairedDataset& ds, int batch) {
  if (!ds.labels.empty() && ds.labels.size() != ds.size())
    throw DataError("fit_label_gaussians: label count does not match sample count");
  const Eigen::MatrixXd z = collect_bottlenecks(g, ds, batch);
  std::map<int, std::vector<Eigen::Index>> members;
  for (std::size_t i = 0; i < ds.size(); ++i)
    members[ds.labels.empty() ? -1 : ds.labels[i]].push_back(static_cast<Eigen::Index>(i));
  std::map<int, LatentGaussian> out;
  for (const auto& [label, cols] : members) {
    if (cols.size() < 2)
      throw DataError("fit_label_gaussians: label " + std::to_string(label) + " has " + std::to_string(cols.size()) +
                      " sample(s), need at least 2");
    Eigen::MatrixXd zl(z.rows(), static_cast<Eigen::Index>(cols.size()));
    for (std::size_t k = 0; k < cols.size(); ++k) zl.col(static_cast<Eigen::Index>(k)) = z.col(cols[k]);
    LatentGaussian lg = fit_latent_gaussian(zl);
    lg.label = label;
    out.emplace(label, std::move(lg));
  }
  return out;
}

}  // namespace facegan
