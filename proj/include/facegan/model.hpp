#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "facegan/autodiff.hpp"

namespace facegan {

/// Architecture hyperparameters. Full-size values are resolution 256,
/// base_filters 128, latent_dim 128; desk scale uses 32 / 16 / 16.
struct NetConfig {
  int resolution = 256;
  int base_filters = 128;
  int latent_dim = 128;
  int label_channels = 0;
  /// Decoder stages that receive a skip connection, given as the
  /// downsampling divisor of their resolution (16 -> H/16). Allowed: 2..16.
  std::vector<int> skip_levels{16, 8};

  int input_channels() const { return 3 + label_channels; }
  void validate() const;
  bool operator==(const NetConfig&) const = default;
};

enum class ParamGroup : std::uint8_t { kEncoder = 0, kBottleneck1 = 1, kBottleneck2 = 2, kDecoder = 3 };

const char* group_name(ParamGroup g);

/// Named parameter tensors of one network, partitioned into the four
/// groups. Freezing a group marks all of its tensors frozen for Adam.
template <typename T>
struct NetParams {
  NetConfig config;
  std::vector<Parameter<T>> params;
  std::vector<ParamGroup> groups;  // parallel to params

  void set_frozen(ParamGroup g, bool frozen);
  bool is_frozen(ParamGroup g) const;
  void zero_grads();
  std::size_t count() const;
  std::size_t count(ParamGroup g) const;
  const Parameter<T>& at(const std::string& name) const;
  Parameter<T>& at(const std::string& name);

  /// FNV-1a over the raw bytes of every tensor in the group, in order.
  std::uint64_t checksum(std::optional<ParamGroup> g = std::nullopt) const;

  template <typename U>
  NetParams<U> cast() const;
};

/// Weights uniform in [-s, s], s = sqrt(1/fan_in); biases zero.
template <typename T>
NetParams<T> init_params(const NetConfig& config, std::uint64_t seed);

/// Deep copy; the generator starts from the pretrained discriminator.
template <typename T>
NetParams<T> clone_generator_from_discriminator(const NetParams<T>& d) {
  return d;
}

template <typename T>
void freeze_decoder(NetParams<T>& params, bool frozen = true) {
  params.set_frozen(ParamGroup::kDecoder, frozen);
}

/// Parameters placed on a tape. requires_grad follows track && !frozen.
template <typename T>
struct BoundParams {
  const NetParams<T>* source = nullptr;
  std::vector<Var<T>> vars;
  Var<T> operator[](const std::string& name) const;
  /// Copies tape gradients back into source-parallel grad buffers.
  void collect_grads(NetParams<T>& into) const;
};

template <typename T>
BoundParams<T> bind(Graph<T>& g, const NetParams<T>& params, bool track_grads);

template <typename T>
struct ForwardResult {
  Var<T> output;      // [N,3,H,W], tanh range
  Var<T> bottleneck;  // [N,latent_dim]
  /// Encoder features feeding each configured skip level, same order as
  /// NetConfig::skip_levels.
  std::vector<Var<T>> skip_features;
};

/// Encoder -> bottleneck1 -> bottleneck2 -> decoder, with skips.
template <typename T>
ForwardResult<T> forward(const BoundParams<T>& p, Var<T> input);

/// Encoder and bottleneck1 only.
template <typename T>
ForwardResult<T> encode(const BoundParams<T>& p, Var<T> input);

/// Bottleneck2 and decoder from a latent batch [N,latent_dim]. When
/// skip_features is empty the skip inputs are zero tensors.
template <typename T>
Var<T> decode(const BoundParams<T>& p, Var<T> z, const std::vector<Var<T>>& skip_features = {});

/// Shape of the encoder feature map feeding a skip level, for batch n.
Shape skip_feature_shape(const NetConfig& config, int level, int n);

}  // namespace facegan
