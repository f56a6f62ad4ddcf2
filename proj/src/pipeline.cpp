#include "facegan/pipeline.hpp"

#include "facegan/parallel.hpp"

namespace facegan {

Mesh register_scan(const Mesh& templ, const Mesh& scan, const NicpOptions& options) {
  Points src(3, 3), dst(3, 3);
  int k = 0;
  for (const char* name : {kNoseTip, kLeftEyeOuter, kRightEyeOuter}) {
    src.row(k) = templ.vertices.row(templ.landmark(name));
    dst.row(k) = scan.vertices.row(scan.landmark(name));
    ++k;
  }
  // scan -> template frame, rigid plus scale
  const SimilarityTransform to_templ = procrustes_align(dst, src);
  const Points scan_pts = to_templ.apply(scan.vertices);
  const NicpResult fit = nicp_fit(templ, scan_pts, nicp_data_weights(templ), options);
  return to_templ.inverse().apply(fit.registered);
}

namespace {

std::vector<Mesh> register_all(std::span<const Mesh> meshes, const Mesh& templ, const PreprocessOptions& options) {
  std::vector<Mesh> registered(meshes.size());
  parallel_for(meshes.size(), options.threads, [&](std::size_t i) {
    const Mesh& m = meshes[i];
    if (options.register_scans) {
      registered[i] = register_scan(templ, m, options.nicp);
      return;
    }
    if (m.vertex_count() != templ.vertex_count())
      throw DataError("preprocess: mesh has " + std::to_string(m.vertex_count()) + " vertices, template has " +
                      std::to_string(templ.vertex_count()) + " (enable registration for raw scans)");
    registered[i] = templ.with_vertices(m.vertices);
  });
  return registered;
}

}  // namespace

Preprocessed preprocess(std::span<const Mesh> meshes, const Mesh& templ, const PreprocessOptions& options) {
  if (meshes.empty()) throw DataError("preprocess: no meshes");
  templ.validate();
  const std::vector<Mesh> registered = register_all(meshes, templ, options);
  const GpaResult gpa = generalized_procrustes(registered, templ);
  Preprocessed out;
  if (options.scale) {
    if (!(*options.scale > 0)) throw DataError("preprocess: scale must be positive");
    out.scale = *options.scale;
    for (const Mesh& m : gpa.aligned) out.meshes.push_back(m.with_vertices(m.vertices / out.scale));
  } else {
    NormalizedDataset n = normalize_dataset(gpa.aligned);
    out.scale = n.scale;
    out.meshes = std::move(n.meshes);
  }
  out.layout = cylindrical_unwrap(templ);
  const UVRaster raster = build_raster(out.layout, options.resolution);
  out.maps.resize(out.meshes.size());
  parallel_for(out.meshes.size(), options.threads,
               [&](std::size_t i) { out.maps[i] = rasterize_uv(out.meshes[i], raster, out.layout.faces); });
  return out;
}

PreprocessedPairs preprocess_pairs(std::span<const Mesh> inputs, std::span<const Mesh> targets, const Mesh& templ,
                                   const PreprocessOptions& options) {
  if (inputs.size() != targets.size()) throw DataError("preprocess: input and target counts differ");
  PreprocessedPairs out;
  out.targets = preprocess(targets, templ, options);
  const std::vector<Mesh> registered = register_all(inputs, templ, options);
  const double scale = out.targets.scale;
  const UVRaster raster = build_raster(out.targets.layout, options.resolution);
  out.input_meshes.resize(inputs.size());
  out.input_maps.resize(inputs.size());
  parallel_for(inputs.size(), options.threads, [&](std::size_t i) {
    const Points target_mm = out.targets.meshes[i].vertices * scale;
    const SimilarityTransform t = procrustes_align(registered[i].vertices, target_mm);
    out.input_meshes[i] = registered[i].with_vertices(t.apply(registered[i].vertices) / scale);
    out.input_maps[i] = rasterize_uv(out.input_meshes[i], raster, out.targets.layout.faces);
  });
  return out;
}

std::vector<Mesh> maps_to_meshes(std::span<const UVMap> maps, const UVLayout& layout, const Mesh& topology) {
  std::vector<Mesh> out;
  out.reserve(maps.size());
  for (const UVMap& m : maps) out.push_back(sample_mesh_from_uv(m, layout, topology));
  return out;
}

}  // namespace facegan
