#include "facegan/synth.hpp"

#include <cmath>
#include <numbers>
#include <random>

namespace facegan {
namespace {

constexpr double kAzimuth = 100.0 * std::numbers::pi / 180.0;
constexpr double kElevation = 55.0 * std::numbers::pi / 180.0;
constexpr double kRadiusX = 75.0, kRadiusY = 100.0, kRadiusZ = 90.0;

double bump(double th, double ph, double th0, double ph0, double sth, double sph) {
  const double a = (th - th0) / sth, b = (ph - ph0) / sph;
  return std::exp(-(a * a + b * b));
}

// facial relief along the outward normal (mm)
double relief(double th, double ph) {
  double d = 26.0 * bump(th, ph, 0.0, -0.02, 0.32, 0.48);          // nose
  d += 9.0 * bump(th, ph, 0.0, -0.15, 0.24, 0.16);                  // nose tip bulb
  d -= 9.0 * (bump(th, ph, 0.36, 0.22, 0.3, 0.2) + bump(th, ph, -0.36, 0.22, 0.3, 0.2));  // eye sockets
  d += 5.0 * (bump(th, ph, 0.33, 0.38, 0.5, 0.12) + bump(th, ph, -0.33, 0.38, 0.5, 0.12));  // brows
  d += 3.0 * bump(th, ph, 0.0, -0.40, 0.44, 0.1);                  // lips
  d += 7.0 * bump(th, ph, 0.0, -0.72, 0.5, 0.24);                  // chin
  d += 4.0 * (bump(th, ph, 0.55, -0.15, 0.36, 0.4) + bump(th, ph, -0.55, -0.15, 0.36, 0.4));  // cheeks
  // taper to zero on the grid boundary so the cylindrical layout is an exact rectangle
  const double a = std::pow(th / kAzimuth, 8), b = std::pow(ph / kElevation, 8);
  return d * (1.0 - a) * (1.0 - b);
}

// expression offsets along the normal, label >= 1
double expression(int label, double th, double ph) {
  switch ((label - 1) % 3) {
    case 0:  // smile: raised cheeks and mouth corners, stretched lips
      return 0.7 * (bump(th, ph, 0.5, -0.2, 0.3, 0.3) + bump(th, ph, -0.5, -0.2, 0.3, 0.3)) +
             0.6 * (bump(th, ph, 0.28, -0.38, 0.16, 0.16) + bump(th, ph, -0.28, -0.38, 0.16, 0.16)) -
             0.5 * bump(th, ph, 0.0, -0.42, 0.4, 0.1);
    case 1:  // surprise: open mouth, raised brows
      return -1.0 * bump(th, ph, 0.0, -0.45, 0.3, 0.24) + 0.6 * (bump(th, ph, 0.3, 0.45, 0.5, 0.16) +
                                                                  bump(th, ph, -0.3, 0.45, 0.5, 0.16));
    default:  // pout
      return 0.9 * bump(th, ph, 0.0, -0.40, 0.24, 0.16) - 0.3 * bump(th, ph, 0.0, -0.6, 0.6, 0.2);
  }
}

struct GridPoint {
  double th, ph;
  Eigen::Vector3d base, normal;
};

std::vector<GridPoint> grid_points(int grid) {
  std::vector<GridPoint> pts;
  for (int r = 0; r < grid; ++r) {
    const double ph = -kElevation + 2.0 * kElevation * r / (grid - 1);
    for (int c = 0; c < grid; ++c) {
      const double th = -kAzimuth + 2.0 * kAzimuth * c / (grid - 1);
      Eigen::Vector3d p(kRadiusX * std::sin(th) * std::cos(ph), kRadiusY * std::sin(ph),
                        kRadiusZ * std::cos(th) * std::cos(ph));
      Eigen::Vector3d n(p.x() / (kRadiusX * kRadiusX), p.y() / (kRadiusY * kRadiusY), p.z() / (kRadiusZ * kRadiusZ));
      pts.push_back({th, ph, p, n.normalized()});
    }
  }
  return pts;
}

int nearest_grid(int grid, double th, double ph) {
  const int c = static_cast<int>(std::lround((th + kAzimuth) / (2 * kAzimuth) * (grid - 1)));
  const int r = static_cast<int>(std::lround((ph + kElevation) / (2 * kElevation) * (grid - 1)));
  return r * grid + c;
}

// (p, q) frequency pairs by increasing total order, (0,0) excluded
std::pair<int, int> mode_frequency(int k) {
  int idx = 0;
  for (int total = 1;; ++total)
    for (int p = 0; p <= total; ++p) {
      if (idx == k / 3) return {p, total - p};
      ++idx;
    }
}

}  // namespace

Mesh synth_template(int grid) {
  if (grid < 4) throw DataError("synth_template: grid must be >= 4");
  const auto pts = grid_points(grid);
  Mesh m;
  m.vertices.resize(static_cast<Eigen::Index>(pts.size()), 3);
  for (std::size_t i = 0; i < pts.size(); ++i)
    m.vertices.row(static_cast<Eigen::Index>(i)) = (pts[i].base + relief(pts[i].th, pts[i].ph) * pts[i].normal).transpose();
  m.faces.resize(2 * (grid - 1) * (grid - 1), 3);
  int f = 0;
  for (int r = 0; r + 1 < grid; ++r)
    for (int c = 0; c + 1 < grid; ++c) {
      const int a = r * grid + c, b = a + 1, d = a + grid, e = d + 1;
      // counter-clockwise in (u, v) = (azimuth, elevation)
      m.faces.row(f++) << a, b, e;
      m.faces.row(f++) << a, e, d;
    }
  int tip = 0;
  m.vertices.col(2).maxCoeff(&tip);
  m.landmarks[kNoseTip] = tip;
  m.landmarks[kLeftEyeOuter] = nearest_grid(grid, 0.6, 0.22);
  m.landmarks[kRightEyeOuter] = nearest_grid(grid, -0.6, 0.22);
  return m;
}

SynthDataset synth_dataset(const SynthOptions& o) {
  if (o.modes < 1) throw DataError("synth_dataset: modes must be >= 1");
  if (o.subjects < 1) throw DataError("synth_dataset: subjects must be >= 1");
  SynthDataset ds;
  ds.templ = synth_template(o.grid);
  const auto pts = grid_points(o.grid);
  const Eigen::Index nv = ds.templ.vertex_count();

  // shape basis: smooth cosine products along the normal, x or y
  std::vector<Points> basis;
  for (int k = 0; k < o.modes; ++k) {
    const auto [p, q] = mode_frequency(k);
    Points b(nv, 3);
    for (Eigen::Index i = 0; i < nv; ++i) {
      const auto& g = pts[static_cast<std::size_t>(i)];
      const double s = g.th / kAzimuth, t = g.ph / kElevation;
      const double amp = std::cos(p * std::numbers::pi * (s + 1) / 2) * std::cos(q * std::numbers::pi * (t + 1) / 2);
      Eigen::Vector3d dir = k % 3 == 0 ? g.normal : (k % 3 == 1 ? Eigen::Vector3d::UnitX() : Eigen::Vector3d::UnitY());
      b.row(i) = amp * dir.transpose();
    }
    basis.push_back(std::move(b));
  }

  const int n_labels = std::max(1, o.labels);
  for (int l = 0; l < n_labels; ++l) {
    Points off = Points::Zero(nv, 3);
    if (l > 0)
      for (Eigen::Index i = 0; i < nv; ++i) {
        const auto& g = pts[static_cast<std::size_t>(i)];
        off.row(i) = o.expression_scale * expression(l, g.th, g.ph) * g.normal.transpose();
      }
    ds.label_offsets.push_back(std::move(off));
    static const char* names[] = {"neutral", "smile", "surprise", "pout"};
    ds.label_names.push_back(l < 4 ? names[l] : "label" + std::to_string(l));
  }

  std::mt19937_64 rng(o.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (int s = 0; s < o.subjects; ++s) {
    Points shape = ds.templ.vertices;
    for (int k = 0; k < o.modes; ++k) {
      const double sigma = o.mode_scale / (1.0 + 0.35 * k);
      shape += sigma * normal(rng) * basis[static_cast<std::size_t>(k)];
    }
    for (int l = 0; l < n_labels; ++l) {
      Mesh m = ds.templ.with_vertices(shape + ds.label_offsets[static_cast<std::size_t>(l)]);
      if (o.noise > 0.0) {
        Points noisy = m.vertices;
        for (Eigen::Index i = 0; i < nv; ++i)
          noisy.row(i) += o.noise * normal(rng) * pts[static_cast<std::size_t>(i)].normal.transpose();
        ds.noisy.push_back(m.with_vertices(std::move(noisy)));
      }
      ds.meshes.push_back(std::move(m));
      ds.subject.push_back(s);
      ds.label.push_back(l);
    }
  }
  return ds;
}

}  // namespace facegan
