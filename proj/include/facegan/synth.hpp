#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "facegan/geometry.hpp"

namespace facegan {

/// Desk-scale stand-in for scanned face datasets: an ellipsoidal face with a
/// nose, eye sockets, brows, mouth and chin on a regular (azimuth, elevation)
/// grid, in millimetres, facing +z with y up.
struct SynthOptions {
  int subjects = 100;
  int modes = 10;
  /// Per-vertex Gaussian noise (mm) along the normal, emitted as separate
  /// noisy scans. 0 disables.
  double noise = 0.0;
  /// Number of labels including neutral (label 0). 0 or 1: neutral only.
  int labels = 0;
  std::uint64_t seed = 0;
  int grid = 45;              // grid x grid vertices
  double mode_scale = 6.0;    // std (mm) of the leading shape mode
  double expression_scale = 10.0;  // peak (mm) of the per-label offsets
};

struct SynthDataset {
  Mesh templ;
  std::vector<Mesh> meshes;  // subject-major, one per (subject, label)
  std::vector<Mesh> noisy;   // parallel to meshes when noise > 0
  std::vector<int> subject;
  std::vector<int> label;
  std::vector<std::string> label_names;
  /// Displacement of each label relative to neutral (label 0 is zero).
  std::vector<Points> label_offsets;
};

Mesh synth_template(int grid = 45);
SynthDataset synth_dataset(const SynthOptions& options);

}  // namespace facegan
