#include "facegan/geometry.hpp"

#include <Eigen/Dense>
#include <Eigen/Geometry>
#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>
#include <sstream>

namespace facegan {

// ---- Mesh ----------------------------------------------------------------

int Mesh::landmark(const std::string& name) const {
  auto it = landmarks.find(name);
  if (it == landmarks.end()) throw DataError("mesh has no landmark '" + name + "'");
  return it->second;
}

void Mesh::validate() const {
  const int v = vertex_count();
  for (Eigen::Index f = 0; f < faces.rows(); ++f)
    for (int k = 0; k < 3; ++k)
      if (faces(f, k) < 0 || faces(f, k) >= v)
        throw DataError("face " + std::to_string(f) + " references vertex " + std::to_string(faces(f, k)) +
                        " but the mesh has " + std::to_string(v) + " vertices");
  for (const auto& [name, idx] : landmarks)
    if (idx < 0 || idx >= v) throw DataError("landmark '" + name + "' index " + std::to_string(idx) + " out of range");
}

Mesh Mesh::with_vertices(Points v) const {
  Mesh m;
  m.vertices = std::move(v);
  m.faces = faces;
  m.landmarks = landmarks;
  return m;
}

double Mesh::bbox_diagonal() const {
  if (vertices.rows() == 0) return 0.0;
  return (vertices.colwise().maxCoeff() - vertices.colwise().minCoeff()).norm();
}

// ---- transforms ----------------------------------------------------------

Points SimilarityTransform::apply(const Points& p) const {
  Points out = (scale * (p * rotation.transpose())).rowwise() + translation.transpose();
  return out;
}

SimilarityTransform SimilarityTransform::inverse() const {
  SimilarityTransform inv;
  inv.rotation = rotation.transpose();
  inv.scale = 1.0 / scale;
  inv.translation = -inv.scale * (inv.rotation * translation);
  return inv;
}

SimilarityTransform procrustes_align(const Points& source, const Points& target, bool with_scale) {
  if (source.rows() != target.rows())
    throw DataError("procrustes: vertex counts differ (" + std::to_string(source.rows()) + " vs " +
                    std::to_string(target.rows()) + ")");
  if (source.rows() < 3) throw DataError("procrustes: need at least 3 points");
  const Eigen::RowVector3d centroid = source.colwise().mean();
  if ((source.rowwise() - centroid).squaredNorm() <= std::numeric_limits<double>::min())
    throw DataError("procrustes: degenerate source (all points coincide)");
  const Eigen::Matrix4d t = Eigen::umeyama(source.transpose(), target.transpose(), with_scale);
  SimilarityTransform s;
  const Eigen::Matrix3d sr = t.topLeftCorner<3, 3>();
  s.scale = sr.col(0).norm();
  s.rotation = sr / s.scale;
  s.translation = t.topRightCorner<3, 1>();
  return s;
}

namespace {

Points mean_of(const std::vector<Points>& pts) {
  Points m = Points::Zero(pts.front().rows(), 3);
  for (const auto& p : pts) m += p;
  return m / static_cast<double>(pts.size());
}

}  // namespace

GpaResult generalized_procrustes(std::span<const Mesh> meshes, const Mesh& reference, double tol, int max_iter) {
  if (meshes.empty()) throw DataError("generalized_procrustes: no meshes");
  const Eigen::Index v = reference.vertices.rows();
  for (const auto& m : meshes)
    if (m.vertices.rows() != v) throw DataError("generalized_procrustes: meshes do not share a topology");

  Points consensus = reference.vertices;
  std::vector<Points> aligned(meshes.size());
  GpaResult result;
  for (int it = 1; it <= max_iter; ++it) {
    for (std::size_t i = 0; i < meshes.size(); ++i)
      aligned[i] = procrustes_align(meshes[i].vertices, consensus).apply(meshes[i].vertices);
    Points mean = mean_of(aligned);
    // re-anchor the consensus to the reference frame (fixes the gauge)
    mean = procrustes_align(mean, reference.vertices).apply(mean);
    const double movement = (mean - consensus).rowwise().norm().maxCoeff();
    consensus = std::move(mean);
    result.iterations = it;
    if (movement < tol) break;
  }
  for (std::size_t i = 0; i < meshes.size(); ++i) {
    aligned[i] = procrustes_align(meshes[i].vertices, consensus).apply(meshes[i].vertices);
    result.aligned.push_back(meshes[i].with_vertices(std::move(aligned[i])));
  }
  result.mean = reference.with_vertices(std::move(consensus));
  return result;
}

GpaResult generalized_procrustes(std::span<const Mesh> meshes, double tol, int max_iter) {
  if (meshes.empty()) throw DataError("generalized_procrustes: no meshes");
  return generalized_procrustes(meshes, meshes.front(), tol, max_iter);
}

NormalizedDataset normalize_dataset(std::span<const Mesh> meshes) {
  double max_abs = 0.0;
  for (const auto& m : meshes) max_abs = std::max(max_abs, m.vertices.cwiseAbs().maxCoeff());
  if (!(max_abs > 0.0)) throw DataError("normalize_dataset: all coordinates are zero");
  NormalizedDataset out;
  out.scale = max_abs;
  for (const auto& m : meshes) out.meshes.push_back(m.with_vertices(m.vertices / max_abs));
  return out;
}

Mesh unnormalize(const Mesh& m, double scale) {
  return m.with_vertices(m.vertices * scale);
}

// ---- UV layout -----------------------------------------------------------

Eigen::Matrix<double, Eigen::Dynamic, 2> cylindrical_coordinates(const Points& p) {
  Eigen::Matrix<double, Eigen::Dynamic, 2> uv(p.rows(), 2);
  for (Eigen::Index i = 0; i < p.rows(); ++i) {
    uv(i, 0) = (std::atan2(p(i, 0), p(i, 2)) + std::numbers::pi) / (2.0 * std::numbers::pi);
    uv(i, 1) = p(i, 1);
  }
  return uv;
}

UVLayout cylindrical_unwrap(const Mesh& templ) {
  templ.validate();
  UVLayout layout;
  layout.faces = templ.faces;
  layout.uv = cylindrical_coordinates(templ.vertices);
  for (int c = 0; c < 2; ++c) {
    const double lo = layout.uv.col(c).minCoeff();
    const double hi = layout.uv.col(c).maxCoeff();
    if (!(hi > lo)) throw DataError("cylindrical_unwrap: template has zero extent along the unwrapped axes");
    layout.uv.col(c) = (layout.uv.col(c).array() - lo) / (hi - lo);
  }
  std::vector<int> order(static_cast<std::size_t>(layout.vertex_count()));
  std::iota(order.begin(), order.end(), 0);
  auto key = [&](int i) { return std::pair(layout.uv(i, 0), layout.uv(i, 1)); };
  std::sort(order.begin(), order.end(), [&](int a, int b) { return key(a) < key(b); });
  std::ostringstream clashes;
  int n_clash = 0;
  for (std::size_t k = 1; k < order.size(); ++k) {
    if (key(order[k]) == key(order[k - 1])) {
      if (n_clash++ < 10) clashes << " (" << order[k - 1] << "," << order[k] << ")";
    }
  }
  if (n_clash > 0)
    throw DataError("cylindrical_unwrap: " + std::to_string(n_clash) + " vertex pairs share a UV:" + clashes.str());
  return layout;
}

std::vector<double> uv_signed_areas(const UVLayout& layout) {
  std::vector<double> areas(static_cast<std::size_t>(layout.faces.rows()));
  for (Eigen::Index f = 0; f < layout.faces.rows(); ++f) {
    const Eigen::Vector2d a = layout.uv.row(layout.faces(f, 0));
    const Eigen::Vector2d b = layout.uv.row(layout.faces(f, 1));
    const Eigen::Vector2d c = layout.uv.row(layout.faces(f, 2));
    areas[static_cast<std::size_t>(f)] = 0.5 * ((b - a).x() * (c - a).y() - (b - a).y() * (c - a).x());
  }
  return areas;
}

UVRaster build_raster(const UVLayout& layout, int resolution) {
  if (resolution <= 0) throw ShapeError("raster resolution must be positive");
  UVRaster r;
  r.resolution = resolution;
  const std::size_t px = static_cast<std::size_t>(resolution) * resolution;
  r.triangle.assign(px, -1);
  r.weights.assign(px, Eigen::Vector3d::Zero());
  const double res = resolution;
  for (Eigen::Index f = 0; f < layout.faces.rows(); ++f) {
    const Eigen::Vector2d a = layout.uv.row(layout.faces(f, 0)) * res;
    const Eigen::Vector2d b = layout.uv.row(layout.faces(f, 1)) * res;
    const Eigen::Vector2d c = layout.uv.row(layout.faces(f, 2)) * res;
    const double det = (b - a).x() * (c - a).y() - (b - a).y() * (c - a).x();
    if (std::abs(det) < 1e-14) continue;
    const double umin = std::min({a.x(), b.x(), c.x()}), umax = std::max({a.x(), b.x(), c.x()});
    const double vmin = std::min({a.y(), b.y(), c.y()}), vmax = std::max({a.y(), b.y(), c.y()});
    const int j0 = std::max(0, static_cast<int>(std::ceil(umin - 0.5)));
    const int j1 = std::min(resolution - 1, static_cast<int>(std::floor(umax - 0.5)));
    const int i0 = std::max(0, static_cast<int>(std::ceil(vmin - 0.5)));
    const int i1 = std::min(resolution - 1, static_cast<int>(std::floor(vmax - 0.5)));
    for (int i = i0; i <= i1; ++i) {
      for (int j = j0; j <= j1; ++j) {
        const std::size_t p = static_cast<std::size_t>(i) * resolution + j;
        if (r.triangle[p] >= 0) continue;
        const Eigen::Vector2d q(j + 0.5, i + 0.5);
        const double wb = ((q - a).x() * (c - a).y() - (q - a).y() * (c - a).x()) / det;
        const double wc = ((b - a).x() * (q - a).y() - (b - a).y() * (q - a).x()) / det;
        const double wa = 1.0 - wb - wc;
        constexpr double kEdge = -1e-12;
        if (wa < kEdge || wb < kEdge || wc < kEdge) continue;
        r.triangle[p] = static_cast<int>(f);
        r.weights[p] = Eigen::Vector3d(wa, wb, wc);
      }
    }
  }
  return r;
}

bool UVMap::all_valid() const {
  return std::all_of(valid.begin(), valid.end(), [](std::uint8_t v) { return v != 0; });
}

UVMap rasterize_uv_unfilled(const Mesh& mesh, const UVRaster& raster, const Triangles& faces) {
  const int res = raster.resolution;
  UVMap map(res, res, 3);
  for (int i = 0; i < res; ++i) {
    for (int j = 0; j < res; ++j) {
      const std::size_t p = static_cast<std::size_t>(i) * res + j;
      const int f = raster.triangle[p];
      if (f < 0) continue;
      const Eigen::Vector3d& w = raster.weights[p];
      const Eigen::Vector3d pos = w[0] * mesh.vertices.row(faces(f, 0)).transpose() +
                                  w[1] * mesh.vertices.row(faces(f, 1)).transpose() +
                                  w[2] * mesh.vertices.row(faces(f, 2)).transpose();
      for (int c = 0; c < 3; ++c) map.at(c, i, j) = static_cast<float>(pos[c]);
      map.valid[p] = 1;
    }
  }
  return map;
}

UVMap rasterize_uv(const Mesh& mesh, const UVRaster& raster, const Triangles& faces) {
  return nearest_fill(rasterize_uv_unfilled(mesh, raster, faces));
}

UVMap rasterize_uv(const Mesh& mesh, const UVLayout& layout, int resolution) {
  if (mesh.vertex_count() != layout.vertex_count())
    throw DataError("rasterize_uv: mesh has " + std::to_string(mesh.vertex_count()) + " vertices, layout has " +
                    std::to_string(layout.vertex_count()));
  return rasterize_uv(mesh, build_raster(layout, resolution), layout.faces);
}

UVMap nearest_fill(const UVMap& map) {
  const int h = map.height, w = map.width;
  // The nearest valid pixel of any invalid pixel always has an invalid
  // 4-neighbour, so only those boundary pixels are candidates.
  std::vector<int> boundary;
  bool any_valid = false;
  for (int i = 0; i < h; ++i) {
    for (int j = 0; j < w; ++j) {
      if (!map.is_valid(i, j)) continue;
      any_valid = true;
      const bool edge = (i > 0 && !map.is_valid(i - 1, j)) || (i + 1 < h && !map.is_valid(i + 1, j)) ||
                        (j > 0 && !map.is_valid(i, j - 1)) || (j + 1 < w && !map.is_valid(i, j + 1));
      if (edge) boundary.push_back(i * w + j);
    }
  }
  if (!any_valid) throw DataError("nearest_fill: map has no valid pixel");
  UVMap out = map;
  for (int i = 0; i < h; ++i) {
    for (int j = 0; j < w; ++j) {
      if (map.is_valid(i, j)) continue;
      long best_d = std::numeric_limits<long>::max();
      int best = -1;
      for (int b : boundary) {  // ascending row-major, so strict < keeps the lowest index
        const long di = b / w - i, dj = b % w - j;
        const long d = di * di + dj * dj;
        if (d < best_d) {
          best_d = d;
          best = b;
        }
      }
      for (int c = 0; c < map.channels; ++c) out.at(c, i, j) = map.at(c, best / w, best % w);
    }
  }
  std::fill(out.valid.begin(), out.valid.end(), std::uint8_t{1});
  return out;
}

Points sample_positions(const UVMap& map, const UVLayout& layout) {
  if (map.channels < 3) throw ShapeError("sample_positions: map needs 3 position channels");
  if (map.width < 2 || map.height < 2) throw ShapeError("sample_positions: map too small");
  Points out(layout.vertex_count(), 3);
  for (int v = 0; v < layout.vertex_count(); ++v) {
    // continuous pixel coordinates; linear extrapolation within the border cell
    const double x = layout.uv(v, 0) * map.width - 0.5;
    const double y = layout.uv(v, 1) * map.height - 0.5;
    const int j0 = std::clamp(static_cast<int>(std::floor(x)), 0, map.width - 2);
    const int i0 = std::clamp(static_cast<int>(std::floor(y)), 0, map.height - 2);
    const double tx = x - j0, ty = y - i0;
    for (int c = 0; c < 3; ++c) {
      const double top = (1 - tx) * map.at(c, i0, j0) + tx * map.at(c, i0, j0 + 1);
      const double bot = (1 - tx) * map.at(c, i0 + 1, j0) + tx * map.at(c, i0 + 1, j0 + 1);
      out(v, c) = (1 - ty) * top + ty * bot;
    }
  }
  return out;
}

Mesh sample_mesh_from_uv(const UVMap& map, const UVLayout& layout, const Mesh& topology) {
  return topology.with_vertices(sample_positions(map, layout));
}

// ---- per-vertex quantities -----------------------------------------------

Points vertex_normals(const Mesh& m) {
  Points n = Points::Zero(m.vertex_count(), 3);
  for (Eigen::Index f = 0; f < m.faces.rows(); ++f) {
    const Eigen::Vector3d a = m.vertices.row(m.faces(f, 0));
    const Eigen::Vector3d b = m.vertices.row(m.faces(f, 1));
    const Eigen::Vector3d c = m.vertices.row(m.faces(f, 2));
    const Eigen::RowVector3d fn = (b - a).cross(c - a).transpose();  // |fn| = 2 * area
    for (int k = 0; k < 3; ++k) n.row(m.faces(f, k)) += fn;
  }
  for (Eigen::Index i = 0; i < n.rows(); ++i) {
    const double len = n.row(i).norm();
    if (len > 0) n.row(i) /= len;
  }
  return n;
}

std::vector<double> nose_distance_weights(const Mesh& templ) {
  const Eigen::RowVector3d tip = templ.vertices.row(templ.landmark(kNoseTip));
  std::vector<double> d(static_cast<std::size_t>(templ.vertex_count()));
  double dmax = 0.0;
  for (int i = 0; i < templ.vertex_count(); ++i) {
    d[static_cast<std::size_t>(i)] = (templ.vertices.row(i) - tip).norm();
    dmax = std::max(dmax, d[static_cast<std::size_t>(i)]);
  }
  if (!(dmax > 0.0)) throw DataError("nose_distance_weights: all vertices coincide with the nose tip");
  for (double& x : d) x /= dmax;
  return d;
}

// ---- PointIndex ----------------------------------------------------------

PointIndex::PointIndex(const Points& points) : points_(points), order_(static_cast<std::size_t>(points.rows())) {
  std::iota(order_.begin(), order_.end(), 0);
  if (!order_.empty()) build(0, static_cast<int>(order_.size()));
}

int PointIndex::build(int begin, int end) {
  const int id = static_cast<int>(nodes_.size());
  nodes_.push_back({begin, end});
  if (end - begin <= 8) return id;
  Eigen::Vector3d lo = Eigen::Vector3d::Constant(std::numeric_limits<double>::infinity());
  Eigen::Vector3d hi = -lo;
  for (int k = begin; k < end; ++k) {
    lo = lo.cwiseMin(points_.row(order_[static_cast<std::size_t>(k)]).transpose());
    hi = hi.cwiseMax(points_.row(order_[static_cast<std::size_t>(k)]).transpose());
  }
  int axis = 0;
  (hi - lo).maxCoeff(&axis);
  const int mid = (begin + end) / 2;
  std::nth_element(order_.begin() + begin, order_.begin() + mid, order_.begin() + end,
                   [&](int a, int b) { return points_(a, axis) < points_(b, axis); });
  const double split = points_(order_[static_cast<std::size_t>(mid)], axis);
  const int left = build(begin, mid);
  const int right = build(mid, end);
  nodes_[static_cast<std::size_t>(id)].axis = axis;
  nodes_[static_cast<std::size_t>(id)].split = split;
  nodes_[static_cast<std::size_t>(id)].left = left;
  nodes_[static_cast<std::size_t>(id)].right = right;
  return id;
}

void PointIndex::search(int node, const Eigen::Vector3d& q, int& best, double& best_d) const {
  const Node& n = nodes_[static_cast<std::size_t>(node)];
  if (n.axis < 0) {
    for (int k = n.begin; k < n.end; ++k) {
      const int idx = order_[static_cast<std::size_t>(k)];
      const double d = (points_.row(idx).transpose() - q).squaredNorm();
      if (d < best_d || (d == best_d && idx < best)) {
        best_d = d;
        best = idx;
      }
    }
    return;
  }
  const double diff = q[n.axis] - n.split;
  const int near = diff < 0 ? n.left : n.right;
  const int far = diff < 0 ? n.right : n.left;
  search(near, q, best, best_d);
  if (diff * diff <= best_d) search(far, q, best, best_d);
}

int PointIndex::nearest(const Eigen::Vector3d& q, double* sq_dist) const {
  if (nodes_.empty()) throw DataError("PointIndex: empty point set");
  int best = -1;
  double best_d = std::numeric_limits<double>::infinity();
  search(0, q, best, best_d);
  if (sq_dist) *sq_dist = best_d;
  return best;
}

}  // namespace facegan
