#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "facegan/error.hpp"

namespace facegan {

inline constexpr const char* kNoseTip = "nose_tip";
inline constexpr const char* kLeftEyeOuter = "left_eye_outer";
inline constexpr const char* kRightEyeOuter = "right_eye_outer";

using Points = Eigen::Matrix<double, Eigen::Dynamic, 3>;
using Triangles = Eigen::Matrix<int, Eigen::Dynamic, 3>;

/// Fixed-topology triangle mesh. All meshes of a dataset share the faces and
/// landmark indices of one template.
struct Mesh {
  Points vertices;
  Triangles faces;
  std::map<std::string, int> landmarks;

  int vertex_count() const { return static_cast<int>(vertices.rows()); }
  int landmark(const std::string& name) const;
  /// Throws DataError on out-of-range face or landmark indices.
  void validate() const;
  /// Same faces/landmarks, new positions.
  Mesh with_vertices(Points v) const;
  double bbox_diagonal() const;
};

struct SimilarityTransform {
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
  Eigen::Vector3d translation = Eigen::Vector3d::Zero();
  double scale = 1.0;

  Points apply(const Points& p) const;
  Mesh apply(const Mesh& m) const { return m.with_vertices(apply(m.vertices)); }
  SimilarityTransform inverse() const;
  static SimilarityTransform from_rigid(const Eigen::Matrix3d& r, const Eigen::Vector3d& t) {
    return {r, t, 1.0};
  }
};

using RigidTransform = SimilarityTransform;  // scale fixed at 1

/// Least-squares similarity (no reflection) taking source onto target.
/// With with_scale = false the result is rigid.
SimilarityTransform procrustes_align(const Points& source, const Points& target, bool with_scale = true);
inline SimilarityTransform procrustes_align(const Mesh& source, const Mesh& target, bool with_scale = true) {
  return procrustes_align(source.vertices, target.vertices, with_scale);
}

struct GpaResult {
  std::vector<Mesh> aligned;
  Mesh mean;
  int iterations = 0;
};

/// Generalized Procrustes analysis. The consensus starts at `reference` and
/// is re-anchored to it after every update, so the output frame is the
/// reference frame and does not depend on the pose of any input.
GpaResult generalized_procrustes(std::span<const Mesh> meshes, const Mesh& reference, double tol = 1e-10,
                                 int max_iter = 100);
/// Uses meshes[0] as the reference.
GpaResult generalized_procrustes(std::span<const Mesh> meshes, double tol = 1e-10, int max_iter = 100);

struct NormalizedDataset {
  std::vector<Mesh> meshes;
  double scale = 1.0;  // original = normalized * scale
};

/// Divides every coordinate by the dataset-wide max |coordinate|.
NormalizedDataset normalize_dataset(std::span<const Mesh> meshes);
Mesh unnormalize(const Mesh& m, double scale);

// ---- UV space ------------------------------------------------------------

/// Per-vertex UV coordinates over a shared triangulation.
struct UVLayout {
  Eigen::Matrix<double, Eigen::Dynamic, 2> uv;
  Triangles faces;

  int vertex_count() const { return static_cast<int>(uv.rows()); }
};

/// Raw cylindrical coordinates about the +y axis: u = (atan2(x, z) + pi) /
/// (2 pi), second column is y.
Eigen::Matrix<double, Eigen::Dynamic, 2> cylindrical_coordinates(const Points& p);

/// Plain cylindrical projection of a face-forward (+z), y-up template,
/// rescaled to fill [0,1]^2. Throws DataError on coincident UVs.
UVLayout cylindrical_unwrap(const Mesh& templ);

/// Signed UV area of every face.
std::vector<double> uv_signed_areas(const UVLayout& layout);

/// Pixel -> covering triangle and barycentric weights at one resolution.
/// Pixel (row i, col j) has its centre at u = (j + 0.5) / W, v = (i + 0.5) / H.
struct UVRaster {
  int resolution = 0;
  std::vector<int> triangle;             // -1 where uncovered
  std::vector<Eigen::Vector3d> weights;  // barycentric, valid where covered
};

UVRaster build_raster(const UVLayout& layout, int resolution);

/// H x W x C map stored channel-major as float, with a per-pixel validity mask.
struct UVMap {
  int height = 0;
  int width = 0;
  int channels = 0;
  std::vector<float> data;      // [c][row][col]
  std::vector<std::uint8_t> valid;

  UVMap() = default;
  UVMap(int h, int w, int c) : height(h), width(w), channels(c), data(std::size_t(h) * w * c, 0.0f), valid(std::size_t(h) * w, 0) {}

  float& at(int c, int row, int col) { return data[(std::size_t(c) * height + row) * width + col]; }
  float at(int c, int row, int col) const { return data[(std::size_t(c) * height + row) * width + col]; }
  bool is_valid(int row, int col) const { return valid[std::size_t(row) * width + col] != 0; }
  bool all_valid() const;
  bool operator==(const UVMap&) const = default;
};

/// Barycentric interpolation of vertex positions into covered pixels, then
/// nearest_fill for the rest.
UVMap rasterize_uv(const Mesh& mesh, const UVLayout& layout, int resolution);
UVMap rasterize_uv(const Mesh& mesh, const UVRaster& raster, const Triangles& faces);
/// Covered pixels only (pre-fill).
UVMap rasterize_uv_unfilled(const Mesh& mesh, const UVRaster& raster, const Triangles& faces);

/// Every invalid pixel copies the nearest valid pixel centre (Euclidean),
/// ties to the lowest row-major index. Result is fully valid.
UVMap nearest_fill(const UVMap& map);

/// Bilinear sample of the first three channels at each vertex's UV.
Points sample_positions(const UVMap& map, const UVLayout& layout);
Mesh sample_mesh_from_uv(const UVMap& map, const UVLayout& layout, const Mesh& topology);

// ---- per-vertex quantities -----------------------------------------------

/// Area-weighted average of incident face normals, unit length.
Points vertex_normals(const Mesh& m);

/// d_i / max_j d_j with d the distance to the nose tip.
std::vector<double> nose_distance_weights(const Mesh& templ);

/// Exact nearest-neighbour queries over a fixed point set.
class PointIndex {
 public:
  explicit PointIndex(const Points& points);
  /// Index of the nearest point; ties to the lowest index.
  int nearest(const Eigen::Vector3d& q, double* sq_dist = nullptr) const;

 private:
  struct Node {
    int begin, end;  // range in order_
    int axis = -1;   // -1 for leaves
    double split = 0.0;
    int left = -1, right = -1;
  };
  int build(int begin, int end);
  void search(int node, const Eigen::Vector3d& q, int& best, double& best_d) const;

  Points points_;
  std::vector<int> order_;
  std::vector<Node> nodes_;
};

// ---- registration --------------------------------------------------------

struct NicpOptions {
  /// Stiffness per stage, annealed from stiff to loose.
  std::vector<double> stiffness;
  int max_iterations_per_stage = 10;
  double gamma = 1.0;       // weight of the translation part in the smoothness term
  double tolerance = 1e-7;  // on the per-vertex transform update (normalized units)

  static NicpOptions geometric(double from = 50.0, double to = 1.0, int stages = 8);
};

struct NicpResult {
  Mesh registered;
  /// Weighted RMS distance to the closest scan points after each stage.
  std::vector<double> stage_residuals;
};

/// Optimal-step non-rigid ICP. data_weights scale each template vertex's
/// data term (one per vertex, in [0,1]).
NicpResult nicp_fit(const Mesh& templ, const Points& scan, std::span<const double> data_weights,
                    const NicpOptions& options = NicpOptions::geometric());

/// Data weights used for registration: 1 - nose_distance_weights.
std::vector<double> nicp_data_weights(const Mesh& templ);

enum class Correspondence { kClosestPoint, kByIndex };

struct IcpOptions {
  int max_iterations = 100;
  double tolerance = 1e-12;
  Correspondence correspondence = Correspondence::kClosestPoint;
};

struct IcpResult {
  RigidTransform transform;
  int iterations = 0;
  double residual = 0.0;  // RMS point-to-plane distance at the final transform
};

/// Rigid point-to-plane ICP taking source onto target.
IcpResult icp_point_to_plane(const Points& source, const Mesh& target, const IcpOptions& options = {});

/// RMS point-to-plane residual of source under transform, using the given
/// correspondence rule against target vertices and normals.
double point_to_plane_residual(const Points& source, const Mesh& target, const RigidTransform& transform,
                               Correspondence correspondence = Correspondence::kClosestPoint);

/// Rotation from an axis-angle vector.
Eigen::Matrix3d rotation_from_axis_angle(const Eigen::Vector3d& w);

}  // namespace facegan
