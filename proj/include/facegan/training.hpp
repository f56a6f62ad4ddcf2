#pragma once

#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "facegan/autodiff.hpp"
#include "facegan/geometry.hpp"
#include "facegan/model.hpp"

namespace facegan {

enum class LrDecay { kMultiplicative, kAdditive };

struct TrainConfig {
  double lambda_adv = 1e-3;
  double lambda_rec = 1.0;
  double lr = 5e-5;
  /// Base rate of the adversarial phase; <= 0 reuses lr.
  double adversarial_lr = 0.0;
  double lr_decay = 0.95;  // per decay period
  int lr_decay_every = 30;
  LrDecay decay_mode = LrDecay::kMultiplicative;
  int pretrain_batch = 32;
  int pretrain_epochs = 300;
  int batch = 16;
  int epochs = 300;
  std::uint64_t seed = 0;
  int checkpoint_every = 0;  // epochs; 0 disables
  AdamOptions adam;

  void validate() const;
};

/// base * decay^floor((epoch-1)/every), or base * (1 - (1-decay)*floor(...))
/// clamped at zero in additive mode. Epochs count from 1.
double lr_at(int epoch, const TrainConfig& config);
/// Same schedule from an explicit base rate.
double lr_at(int epoch, const TrainConfig& config, double base);

/// Input/target UV maps with optional labels (-1 when unlabelled).
struct PairedDataset {
  std::vector<UVMap> inputs;
  std::vector<UVMap> targets;
  std::vector<int> labels;
  int label_count = 0;  // L; 0 for unconditional

  std::size_t size() const { return inputs.size(); }
  int resolution() const { return inputs.empty() ? 0 : inputs.front().height; }
  void validate() const;
  PairedDataset subset(std::span<const std::size_t> indices) const;
};

/// x -> x pairs.
PairedDataset representation_dataset(std::vector<UVMap> maps, std::vector<int> labels = {}, int label_count = 0);

/// Deterministic shuffled split. With groups, whole groups go to one side.
struct Split {
  std::vector<std::size_t> train, test;
};
Split split_indices(std::size_t n, double train_fraction, std::uint64_t seed, std::span<const int> groups = {});

std::vector<float> one_hot(int label, int count);

/// [3+L,H,W]: position channels followed by one constant channel per label entry.
Tensor<float> condition_input(const UVMap& x, std::span<const float> label);

struct Batch {
  Tensor<float> input;   // [B,3+L,H,W]
  Tensor<float> target;  // [B,3,H,W]
  Tensor<float> label_planes;  // [B,L,H,W], empty shape when L = 0
};

Batch make_batch(const PairedDataset& ds, std::span<const std::size_t> indices);

// ---- pre-training --------------------------------------------------------

/// Everything needed to continue a run bit-identically.
struct PretrainState {
  NetParams<float> d;
  Adam<float> adam;
  int epoch = 0;  // completed epochs
  std::mt19937_64 rng;
  std::vector<double> history;  // epoch-mean reconstruction loss
};

PretrainState pretrain_init(const NetConfig& net, const TrainConfig& config);
/// One epoch of min l1(y, D(y)) over the targets.
double pretrain_epoch(PretrainState& state, const PairedDataset& train, const TrainConfig& config);

using PretrainCallback = std::function<void(const PretrainState&)>;
/// Runs the remaining epochs of state (fresh from pretrain_init or resumed).
void pretrain_discriminator(PretrainState& state, const PairedDataset& train, const TrainConfig& config,
                            const PretrainCallback& on_epoch = {});

// ---- adversarial phase ---------------------------------------------------

struct EpochLosses {
  int epoch = 0;
  double l_d = 0.0, l_g = 0.0, l_rec = 0.0;
};

struct AdversarialState {
  NetParams<float> d, g;
  Adam<float> adam_d, adam_g;
  int epoch = 0;
  std::mt19937_64 rng;
  std::vector<EpochLosses> history;
};

/// G <- clone(D), both decoders frozen, fresh optimizers.
AdversarialState adversarial_init(const NetParams<float>& pretrained_d, const TrainConfig& config);

struct StepLosses {
  double l_d = 0.0, l_g = 0.0, l_rec = 0.0;
};

/// Forward outputs logged by one adversarial step.
struct StepTrace {
  Tensor<float> y;          // targets
  Tensor<float> gx;         // G(x), shared by both updates
  Tensor<float> d_y;        // D(y) before the D update
  Tensor<float> d_gx;       // D(G(x)) before the D update
  Tensor<float> d_gx_after; // D(G(x)) with the updated D, used for L_G
  std::uint64_t g_before = 0, g_after_d_update = 0;  // G checksums
  std::uint64_t d_after_d_update = 0, d_after_g_update = 0;
  double max_abs_g_grad_in_d_update = 0.0;
  double max_abs_d_grad_in_g_update = 0.0;
};

/// One D update on L_D = E[L(y)] - lambda_adv E[L(G(x))] with G constant,
/// then one G update on L_G = E[L(G(x))] + lambda_rec E|G(x) - y| with D
/// constant, where L(v) = |v - D(v)|.
StepLosses adversarial_step(AdversarialState& state, const Batch& batch, const TrainConfig& config, double lr,
                            StepTrace* trace = nullptr);

EpochLosses adversarial_epoch(AdversarialState& state, const PairedDataset& train, const TrainConfig& config);

using AdversarialCallback = std::function<void(const AdversarialState&)>;
void train_adversarial(AdversarialState& state, const PairedDataset& train, const TrainConfig& config,
                       const AdversarialCallback& on_epoch = {});

struct TrainResult {
  NetParams<float> d, g;
  std::vector<double> pretrain_history;
  std::vector<EpochLosses> history;
};

/// Pre-train D, clone into G, freeze decoders, adversarial epochs.
TrainResult train_3dfacegan(const PairedDataset& train, const NetConfig& net, const TrainConfig& config);

// ---- inference -----------------------------------------------------------

/// Network output for every sample's conditioned input, in batches.
std::vector<UVMap> reconstruct(const NetParams<float>& params, const PairedDataset& ds, int batch = 16);

/// Mean over samples of mean |net(x) - y|.
double reconstruction_l1(const NetParams<float>& params, const PairedDataset& ds, int batch = 16);

/// Fisher-Yates with rng() % (i+1); identical on every platform.
std::vector<std::size_t> shuffled_indices(std::size_t n, std::mt19937_64& rng);

}  // namespace facegan
