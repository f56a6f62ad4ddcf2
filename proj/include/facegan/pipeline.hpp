#pragma once

#include <optional>
#include <span>
#include <vector>

#include "facegan/geometry.hpp"

namespace facegan {

struct PreprocessOptions {
  int resolution = 32;
  /// Run NICP from the template to every input first (for raw scans).
  bool register_scans = false;
  NicpOptions nicp = NicpOptions::geometric();
  /// Reuse a known normalization scale instead of the dataset max.
  std::optional<double> scale;
  int threads = 1;
};

struct Preprocessed {
  UVLayout layout;
  std::vector<Mesh> meshes;  // registered, GPA-aligned, normalized
  std::vector<UVMap> maps;
  double scale = 1.0;
};

/// NICP (optional) -> GPA anchored on the template -> [-1,1] scaling ->
/// cylindrical unwrap of the template -> rasterize + nearest fill.
Preprocessed preprocess(std::span<const Mesh> meshes, const Mesh& templ, const PreprocessOptions& options);

struct PreprocessedPairs {
  Preprocessed targets;
  std::vector<Mesh> input_meshes;  // normalized, in the targets' frame
  std::vector<UVMap> input_maps;
};

/// Targets go through preprocess(); each input is similarity-aligned to its
/// processed target and scaled alike.
PreprocessedPairs preprocess_pairs(std::span<const Mesh> inputs, std::span<const Mesh> targets, const Mesh& templ,
                                   const PreprocessOptions& options);

/// Rigid pre-alignment of a scan to the template on the three landmarks
/// followed by NICP. The scan must carry the same landmark names.
Mesh register_scan(const Mesh& templ, const Mesh& scan, const NicpOptions& options);

/// Maps -> meshes through the layout, in normalized units.
std::vector<Mesh> maps_to_meshes(std::span<const UVMap> maps, const UVLayout& layout, const Mesh& topology);

}  // namespace facegan
