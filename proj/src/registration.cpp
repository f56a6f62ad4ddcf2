#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <Eigen/SparseCholesky>
#include <cmath>
#include <numeric>
#include <set>

#include "facegan/geometry.hpp"

namespace facegan {
namespace {

std::vector<std::pair<int, int>> unique_edges(const Triangles& faces) {
  std::set<std::pair<int, int>> edges;
  for (Eigen::Index f = 0; f < faces.rows(); ++f)
    for (int k = 0; k < 3; ++k) {
      int a = faces(f, k), b = faces(f, (k + 1) % 3);
      if (a > b) std::swap(a, b);
      edges.insert({a, b});
    }
  return {edges.begin(), edges.end()};
}

int component_count(int n, const std::vector<std::pair<int, int>>& edges) {
  std::vector<int> parent(static_cast<std::size_t>(n));
  std::iota(parent.begin(), parent.end(), 0);
  auto find = [&](int x) {
    while (parent[static_cast<std::size_t>(x)] != x) {
      parent[static_cast<std::size_t>(x)] = parent[static_cast<std::size_t>(parent[static_cast<std::size_t>(x)])];
      x = parent[static_cast<std::size_t>(x)];
    }
    return x;
  };
  int components = n;
  for (auto [a, b] : edges) {
    const int ra = find(a), rb = find(b);
    if (ra != rb) {
      parent[static_cast<std::size_t>(ra)] = rb;
      --components;
    }
  }
  return components;
}

}  // namespace

NicpOptions NicpOptions::geometric(double from, double to, int stages) {
  NicpOptions o;
  for (int s = 0; s < stages; ++s) {
    const double t = stages == 1 ? 0.0 : static_cast<double>(s) / (stages - 1);
    o.stiffness.push_back(from * std::pow(to / from, t));
  }
  return o;
}

std::vector<double> nicp_data_weights(const Mesh& templ) {
  auto w = nose_distance_weights(templ);
  for (double& x : w) x = 1.0 - x;
  return w;
}

NicpResult nicp_fit(const Mesh& templ, const Points& scan, std::span<const double> data_weights,
                    const NicpOptions& options) {
  templ.validate();
  const int nv = templ.vertex_count();
  if (static_cast<int>(data_weights.size()) != nv)
    throw DataError("nicp_fit: expected " + std::to_string(nv) + " data weights, got " +
                    std::to_string(data_weights.size()));
  if (scan.rows() == 0) throw DataError("nicp_fit: empty scan");
  if (options.stiffness.empty()) throw DataError("nicp_fit: empty stiffness schedule");
  const auto edges = unique_edges(templ.faces);
  if (component_count(nv, edges) != 1)
    throw NumericalError("nicp_fit: template is disconnected, the stiffness system is singular");

  // work in a normalized frame so stiffness values do not depend on units
  const Eigen::RowVector3d centre = templ.vertices.colwise().mean();
  const double unit = std::max(templ.bbox_diagonal(), 1e-12);
  const Points src = (templ.vertices.rowwise() - centre) / unit;
  const Points dst = (scan.rowwise() - centre) / unit;
  const PointIndex index(dst);

  using Sparse = Eigen::SparseMatrix<double>;
  // (L kron G^2): constant across iterations up to the stiffness factor
  std::vector<Eigen::Triplet<double>> smooth;
  const double g2[4] = {1.0, 1.0, 1.0, options.gamma * options.gamma};
  for (auto [a, b] : edges)
    for (int k = 0; k < 4; ++k) {
      smooth.emplace_back(4 * a + k, 4 * a + k, g2[k]);
      smooth.emplace_back(4 * b + k, 4 * b + k, g2[k]);
      smooth.emplace_back(4 * a + k, 4 * b + k, -g2[k]);
      smooth.emplace_back(4 * b + k, 4 * a + k, -g2[k]);
    }
  Sparse laplacian(4 * nv, 4 * nv);
  laplacian.setFromTriplets(smooth.begin(), smooth.end());

  // X: per-vertex 4x3 affine, stacked. Start at identity.
  Eigen::MatrixXd x = Eigen::MatrixXd::Zero(4 * nv, 3);
  for (int i = 0; i < nv; ++i) x.block<3, 3>(4 * i, 0).setIdentity();

  auto deformed = [&](const Eigen::MatrixXd& xs) {
    Points p(nv, 3);
    for (int i = 0; i < nv; ++i) {
      Eigen::RowVector4d h;
      h << src.row(i), 1.0;
      p.row(i) = h * xs.block<4, 3>(4 * i, 0);
    }
    return p;
  };
  auto closest = [&](const Points& p) {
    Points u(nv, 3);
    for (int i = 0; i < nv; ++i) u.row(i) = dst.row(index.nearest(p.row(i).transpose()));
    return u;
  };
  const double wsum = std::accumulate(data_weights.begin(), data_weights.end(), 0.0,
                                      [](double a, double w) { return a + w * w; });

  NicpResult result;
  for (double alpha : options.stiffness) {
    for (int it = 0; it < options.max_iterations_per_stage; ++it) {
      const Points cur = deformed(x);
      const Points u = closest(cur);
      Sparse a = (alpha * alpha) * laplacian;
      std::vector<Eigen::Triplet<double>> data;
      Eigen::MatrixXd b = Eigen::MatrixXd::Zero(4 * nv, 3);
      for (int i = 0; i < nv; ++i) {
        const double w2 = data_weights[static_cast<std::size_t>(i)] * data_weights[static_cast<std::size_t>(i)];
        if (w2 == 0.0) continue;
        Eigen::Vector4d h;
        h << src.row(i).transpose(), 1.0;
        const Eigen::Matrix4d hh = w2 * h * h.transpose();
        for (int r = 0; r < 4; ++r)
          for (int c = 0; c < 4; ++c) data.emplace_back(4 * i + r, 4 * i + c, hh(r, c));
        b.block<4, 3>(4 * i, 0) = w2 * h * u.row(i);
      }
      Sparse dtd(4 * nv, 4 * nv);
      dtd.setFromTriplets(data.begin(), data.end());
      a += dtd;
      Eigen::SimplicialLDLT<Sparse> solver(a);
      if (solver.info() != Eigen::Success)
        throw NumericalError("nicp_fit: normal equations are singular (too few weighted vertices?)");
      Eigen::MatrixXd next = solver.solve(b);
      if (solver.info() != Eigen::Success || !next.allFinite())
        throw NumericalError("nicp_fit: linear solve failed");
      const double change = (next - x).norm() / std::sqrt(static_cast<double>(nv));
      x = std::move(next);
      if (change < options.tolerance) break;
    }
    const Points cur = deformed(x);
    const Points u = closest(cur);
    double acc = 0.0;
    for (int i = 0; i < nv; ++i) {
      const double w = data_weights[static_cast<std::size_t>(i)];
      acc += w * w * (cur.row(i) - u.row(i)).squaredNorm();
    }
    result.stage_residuals.push_back(wsum > 0 ? std::sqrt(acc / wsum) * unit : 0.0);
  }
  Points out = (deformed(x) * unit).rowwise() + centre;
  result.registered = templ.with_vertices(std::move(out));
  return result;
}

// ---- rigid ICP -----------------------------------------------------------

Eigen::Matrix3d rotation_from_axis_angle(const Eigen::Vector3d& w) {
  const double angle = w.norm();
  if (angle == 0.0) return Eigen::Matrix3d::Identity();
  return Eigen::AngleAxisd(angle, w / angle).toRotationMatrix();
}

namespace {

struct Matches {
  std::vector<int> target;  // index into target vertices per source point
};

Matches match(const Points& moved, const Mesh& target, const PointIndex* index, Correspondence mode) {
  Matches m;
  m.target.resize(static_cast<std::size_t>(moved.rows()));
  for (Eigen::Index i = 0; i < moved.rows(); ++i)
    m.target[static_cast<std::size_t>(i)] =
        mode == Correspondence::kByIndex ? static_cast<int>(i) : index->nearest(moved.row(i).transpose());
  (void)target;
  return m;
}

}  // namespace

double point_to_plane_residual(const Points& source, const Mesh& target, const RigidTransform& transform,
                               Correspondence correspondence) {
  const Points normals = vertex_normals(target);
  const PointIndex index(target.vertices);
  const Points moved = transform.apply(source);
  const Matches m = match(moved, target, &index, correspondence);
  double acc = 0.0;
  for (Eigen::Index i = 0; i < moved.rows(); ++i) {
    const int c = m.target[static_cast<std::size_t>(i)];
    const double d = (moved.row(i) - target.vertices.row(c)).dot(normals.row(c));
    acc += d * d;
  }
  return std::sqrt(acc / static_cast<double>(std::max<Eigen::Index>(moved.rows(), 1)));
}

IcpResult icp_point_to_plane(const Points& source, const Mesh& target, const IcpOptions& options) {
  if (source.rows() < 6 || target.vertex_count() < 6)
    throw DataError("icp_point_to_plane: need at least 6 correspondences");
  if (options.correspondence == Correspondence::kByIndex && source.rows() != target.vertex_count())
    throw DataError("icp_point_to_plane: index correspondence needs equal vertex counts");
  const Points normals = vertex_normals(target);
  const PointIndex index(target.vertices);

  IcpResult result;
  Eigen::Matrix3d r = Eigen::Matrix3d::Identity();
  Eigen::Vector3d t = Eigen::Vector3d::Zero();
  for (int it = 1; it <= options.max_iterations; ++it) {
    const Points moved = RigidTransform::from_rigid(r, t).apply(source);
    const Matches m = match(moved, target, &index, options.correspondence);
    Eigen::Matrix<double, 6, 6> ata = Eigen::Matrix<double, 6, 6>::Zero();
    Eigen::Matrix<double, 6, 1> atb = Eigen::Matrix<double, 6, 1>::Zero();
    for (Eigen::Index i = 0; i < moved.rows(); ++i) {
      const int c = m.target[static_cast<std::size_t>(i)];
      const Eigen::Vector3d p = moved.row(i);
      const Eigen::Vector3d n = normals.row(c);
      Eigen::Matrix<double, 6, 1> row;
      row << p.cross(n), n;
      const double b = (Eigen::Vector3d(target.vertices.row(c)) - p).dot(n);
      ata += row * row.transpose();
      atb += row * b;
    }
    const Eigen::Matrix<double, 6, 1> step = ata.completeOrthogonalDecomposition().solve(atb);
    const Eigen::Matrix3d dr = rotation_from_axis_angle(step.head<3>());
    r = dr * r;
    t = dr * t + step.tail<3>();
    result.iterations = it;
    if (step.norm() < options.tolerance) break;
  }
  result.transform = RigidTransform::from_rigid(r, t);
  result.residual = point_to_plane_residual(source, target, result.transform, options.correspondence);
  return result;
}

}  // namespace facegan
