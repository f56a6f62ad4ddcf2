#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "facegan/generation.hpp"
#include "facegan/geometry.hpp"
#include "facegan/model.hpp"
#include "facegan/training.hpp"

namespace facegan {

namespace fs = std::filesystem;

// ---- meshes --------------------------------------------------------------

/// Wavefront OBJ: v and f records only; polygons are fan-triangulated,
/// slash-separated and negative indices accepted. Landmarks are not stored.
Mesh load_obj(const fs::path& path);
void save_obj(const fs::path& path, const Mesh& mesh);

/// One "name index" pair per line, 0-based vertex indices.
std::map<std::string, int> load_landmarks(const fs::path& path);
void save_landmarks(const fs::path& path, const std::map<std::string, int>& landmarks);

// ---- UV maps and layouts -------------------------------------------------

/// "UVF1", u32 H, W, C, validity bitset (row-major, LSB first), then
/// H*W*C little-endian float32 in [c][row][col] order.
UVMap load_uvmap(const fs::path& path);
void save_uvmap(const fs::path& path, const UVMap& map);

/// "UVL1", u32 vertex and face counts, float64 uv pairs, int32 faces.
UVLayout load_layout(const fs::path& path);
void save_layout(const fs::path& path, const UVLayout& layout);

// ---- configuration -------------------------------------------------------

struct RunConfig {
  NetConfig net;
  TrainConfig train;
};

/// key = value lines, '#' comments. Unknown keys and bad values throw
/// DataError naming the line.
RunConfig parse_config(const std::string& text, RunConfig base = {});
RunConfig load_config(const fs::path& path, RunConfig base = {});
/// Every key, shortest round-trip number formatting.
std::string format_config(const RunConfig& config);

// ---- checkpoints ---------------------------------------------------------

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  std::string phase;  // "pretrain", "adversarial" or "network"
  int epoch = 0;
  TrainConfig train;
  NetParams<float> d, g;  // g has no tensors in the pretrain phase
  Adam<float> adam_d, adam_g;
  std::string rng_state;
  std::vector<std::vector<double>> history;
  std::map<std::string, std::string> meta;
};

Checkpoint make_checkpoint(const PretrainState& state, const TrainConfig& config);
Checkpoint make_checkpoint(const AdversarialState& state, const TrainConfig& config);
/// A single exported network without optimizer state, stored in d.
Checkpoint make_network_checkpoint(const NetParams<float>& params, const TrainConfig& config);
PretrainState to_pretrain_state(const Checkpoint& ck);
AdversarialState to_adversarial_state(const Checkpoint& ck);

/// "3DFG", u32 version, then length-prefixed sections. Throws DataError on
/// a bad magic, a version mismatch or truncation.
void save_checkpoint(const fs::path& path, const Checkpoint& ck);
Checkpoint load_checkpoint(const fs::path& path);

/// The network to run for inference: G when present, else D.
const NetParams<float>& inference_network(const Checkpoint& ck);

// ---- latent Gaussians ----------------------------------------------------

/// "3DFZ", u32 version, count, then per Gaussian: label, dim, N, mean and
/// column-major factor as float64.
void save_gaussians(const fs::path& path, const std::map<int, LatentGaussian>& gaussians);
std::map<int, LatentGaussian> load_gaussians(const fs::path& path);

// ---- dataset directories -----------------------------------------------

/// Raw mesh collection: template.obj, landmarks.txt, meshes/NNNNN.obj,
/// optional noisy/NNNNN.obj, labels.csv (file,subject,label,label_name).
struct MeshCollection {
  Mesh templ;
  std::vector<std::string> files;
  std::vector<Mesh> meshes;
  std::vector<Mesh> noisy;  // empty or parallel to meshes
  std::vector<int> subject, label;
  std::vector<std::string> label_names;
};

void save_mesh_collection(const fs::path& dir, const MeshCollection& c);
/// Reads labels.csv when present, else every .obj in dir/meshes (or dir)
/// in name order. The template comes from `templ` when given, else
/// dir/template.obj; landmarks from `landmarks` or dir/landmarks.txt.
MeshCollection load_mesh_collection(const fs::path& dir, const fs::path& templ = {}, const fs::path& landmarks = {});

/// Preprocessed data: template.obj, landmarks.txt, layout.uvl, scale.txt,
/// maps/NNNNN.uvf (targets), optional inputs/NNNNN.uvf (paired inputs),
/// samples.csv (index,file,subject,label,set), labels.txt.
struct DataDir {
  Mesh templ;
  UVLayout layout;
  double scale = 1.0;
  std::vector<std::string> files;
  std::vector<int> subject, label;
  std::vector<bool> test;
  std::vector<std::string> label_names;
  std::vector<UVMap> targets;
  std::vector<UVMap> inputs;  // empty unless paired

  bool paired() const { return !inputs.empty(); }
  std::vector<std::size_t> indices(bool test_set) const;
  /// Paired x -> y when available and wanted, else y -> y. Label channels
  /// are attached when with_labels is set.
  PairedDataset dataset(bool test_set, bool use_inputs, bool with_labels) const;
};

void save_data_dir(const fs::path& dir, const DataDir& d);
DataDir load_data_dir(const fs::path& dir);

// ---- reports -------------------------------------------------------------

/// epoch,L_D,L_G,L_rec; pretraining rows leave L_D and L_G empty.
void save_loss_csv(const fs::path& path, const std::vector<double>& pretrain);
void save_loss_csv(const fs::path& path, const std::vector<EpochLosses>& adversarial);

std::string format_number(double v);
std::string read_text(const fs::path& path);
void write_text(const fs::path& path, const std::string& text);

}  // namespace facegan
