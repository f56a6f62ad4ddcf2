#include "facegan/model.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <random>

namespace facegan {
namespace {

int log2_exact(int v) {
  return std::countr_zero(static_cast<unsigned>(v));
}

struct LayerSpec {
  std::string name;
  ParamGroup group;
  Shape weight;  // conv [C2,C1,K,K] or fc [D2,D1]
};

std::vector<LayerSpec> layer_table(const NetConfig& c) {
  const int n = c.base_filters;
  const int s = c.resolution / 32;
  std::vector<LayerSpec> layers;
  auto conv = [&](std::string name, ParamGroup g, int cin, int cout, int k) {
    layers.push_back({std::move(name), g, {cout, cin, k, k}});
  };
  conv("enc.in", ParamGroup::kEncoder, c.input_channels(), n, 3);
  for (int k = 1; k <= 5; ++k) {
    const std::string b = "enc.b" + std::to_string(k);
    conv(b + ".c1", ParamGroup::kEncoder, k * n, (k + 1) * n, 3);
    conv(b + ".c2", ParamGroup::kEncoder, (k + 1) * n, (k + 1) * n, 3);
  }
  conv("enc.b6.c1", ParamGroup::kEncoder, 6 * n, 6 * n, 3);
  conv("enc.b6.c2", ParamGroup::kEncoder, 6 * n, 6 * n, 3);
  layers.push_back({"bn1.fc", ParamGroup::kBottleneck1, {c.latent_dim, s * s * 6 * n}});
  layers.push_back({"bn2.fc", ParamGroup::kBottleneck2, {s * s * n, c.latent_dim}});
  for (int k = 1; k <= 6; ++k) {
    const std::string b = "dec.b" + std::to_string(k);
    conv(b + ".c1", ParamGroup::kDecoder, n, n, 3);
    conv(b + ".c2", ParamGroup::kDecoder, n, n, 3);
  }
  conv("dec.out", ParamGroup::kDecoder, n, 3, 3);
  for (int level : c.skip_levels) {
    conv("dec.skip" + std::to_string(level), ParamGroup::kDecoder, (log2_exact(level) + 1) * n, n, 1);
  }
  return layers;
}

template <typename T>
Var<T> conv_layer(const BoundParams<T>& p, const std::string& name, Var<T> x) {
  return conv2d(x, p[name + ".w"], p[name + ".b"]);
}

template <typename T>
Var<T> conv_block(const BoundParams<T>& p, const std::string& name, Var<T> x) {
  x = elu(conv_layer(p, name + ".c1", x));
  return elu(conv_layer(p, name + ".c2", x));
}

}  // namespace

const char* group_name(ParamGroup g) {
  switch (g) {
    case ParamGroup::kEncoder:
      return "encoder";
    case ParamGroup::kBottleneck1:
      return "bottleneck1";
    case ParamGroup::kBottleneck2:
      return "bottleneck2";
    case ParamGroup::kDecoder:
      return "decoder";
  }
  return "?";
}

void NetConfig::validate() const {
  if (resolution <= 0 || resolution % 32 != 0)
    throw ShapeError("resolution must be a positive multiple of 32 (five 2x downsamples), got " +
                     std::to_string(resolution));
  if (base_filters < 1) throw ShapeError("base_filters must be >= 1");
  if (latent_dim < 1) throw ShapeError("latent_dim must be >= 1");
  if (label_channels < 0) throw ShapeError("label_channels must be >= 0");
  std::vector<int> seen;
  for (int level : skip_levels) {
    if (level != 2 && level != 4 && level != 8 && level != 16)
      throw ShapeError("skip level must be one of 2, 4, 8, 16, got " + std::to_string(level));
    if (std::find(seen.begin(), seen.end(), level) != seen.end())
      throw ShapeError("duplicate skip level " + std::to_string(level));
    seen.push_back(level);
  }
}

Shape skip_feature_shape(const NetConfig& config, int level, int n) {
  const int r = config.resolution / level;
  return {n, (log2_exact(level) + 1) * config.base_filters, r, r};
}

// ---- NetParams -----------------------------------------------------------

template <typename T>
void NetParams<T>::set_frozen(ParamGroup g, bool frozen) {
  for (std::size_t i = 0; i < params.size(); ++i)
    if (groups[i] == g) params[i].frozen = frozen;
}

template <typename T>
bool NetParams<T>::is_frozen(ParamGroup g) const {
  bool any = false;
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (groups[i] != g) continue;
    if (!params[i].frozen) return false;
    any = true;
  }
  return any;
}

template <typename T>
void NetParams<T>::zero_grads() {
  for (auto& p : params) p.grad = Tensor<T>(p.value.shape());
}

template <typename T>
std::size_t NetParams<T>::count() const {
  std::size_t total = 0;
  for (const auto& p : params) total += p.value.size();
  return total;
}

template <typename T>
std::size_t NetParams<T>::count(ParamGroup g) const {
  std::size_t total = 0;
  for (std::size_t i = 0; i < params.size(); ++i)
    if (groups[i] == g) total += params[i].value.size();
  return total;
}

template <typename T>
const Parameter<T>& NetParams<T>::at(const std::string& name) const {
  for (const auto& p : params)
    if (p.name == name) return p;
  throw Error("no parameter named " + name);
}

template <typename T>
Parameter<T>& NetParams<T>::at(const std::string& name) {
  return const_cast<Parameter<T>&>(std::as_const(*this).at(name));
}

template <typename T>
std::uint64_t NetParams<T>::checksum(std::optional<ParamGroup> g) const {
  std::uint64_t h = 1469598103934665603ULL;
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (g && groups[i] != *g) continue;
    const auto* bytes = reinterpret_cast<const unsigned char*>(params[i].value.ptr());
    for (std::size_t b = 0; b < params[i].value.size() * sizeof(T); ++b) {
      h ^= bytes[b];
      h *= 1099511628211ULL;
    }
  }
  return h;
}

template <typename T>
template <typename U>
NetParams<U> NetParams<T>::cast() const {
  NetParams<U> out;
  out.config = config;
  out.groups = groups;
  for (const auto& p : params) {
    Parameter<U> q;
    q.name = p.name;
    q.value = p.value.template cast<U>();
    if (!p.grad.empty()) q.grad = p.grad.template cast<U>();
    q.frozen = p.frozen;
    out.params.push_back(std::move(q));
  }
  return out;
}

template <typename T>
NetParams<T> init_params(const NetConfig& config, std::uint64_t seed) {
  config.validate();
  NetParams<T> out;
  out.config = config;
  std::mt19937_64 rng(seed);
  for (const auto& layer : layer_table(config)) {
    const std::size_t fan_in = numel(layer.weight) / static_cast<std::size_t>(layer.weight[0]);
    const double s = std::sqrt(1.0 / static_cast<double>(fan_in));
    std::uniform_real_distribution<double> dist(-s, s);
    Tensor<T> w(layer.weight);
    for (T& v : w.data()) v = static_cast<T>(dist(rng));
    out.params.push_back({layer.name + ".w", std::move(w), {}, false});
    out.groups.push_back(layer.group);
    out.params.push_back({layer.name + ".b", Tensor<T>({layer.weight[0]}), {}, false});
    out.groups.push_back(layer.group);
  }
  return out;
}

// ---- binding and forward -------------------------------------------------

template <typename T>
Var<T> BoundParams<T>::operator[](const std::string& name) const {
  for (std::size_t i = 0; i < source->params.size(); ++i)
    if (source->params[i].name == name) return vars[i];
  throw Error("no parameter named " + name);
}

template <typename T>
void BoundParams<T>::collect_grads(NetParams<T>& into) const {
  if (into.params.size() != vars.size()) throw Error("collect_grads: parameter list mismatch");
  for (std::size_t i = 0; i < vars.size(); ++i) into.params[i].grad = vars[i].graph->gradient(vars[i]);
}

template <typename T>
BoundParams<T> bind(Graph<T>& g, const NetParams<T>& params, bool track_grads) {
  BoundParams<T> out;
  out.source = &params;
  out.vars.reserve(params.params.size());
  for (const auto& p : params.params) out.vars.push_back(g.leaf(p.value, track_grads && !p.frozen));
  return out;
}

template <typename T>
ForwardResult<T> encode(const BoundParams<T>& p, Var<T> input) {
  const NetConfig& c = p.source->config;
  const Shape& s = input.shape();
  if (s.size() != 4 || s[1] != c.input_channels() || s[2] != c.resolution || s[3] != c.resolution)
    throw ShapeError("network input must be [N," + std::to_string(c.input_channels()) + "," +
                     std::to_string(c.resolution) + "," + std::to_string(c.resolution) + "], got " +
                     shape_str(s));
  const int batch = s[0];
  ForwardResult<T> r;
  r.skip_features.resize(c.skip_levels.size());
  Var<T> x = elu(conv_layer(p, "enc.in", input));
  for (int k = 1; k <= 5; ++k) {
    x = avg_pool2(conv_block(p, "enc.b" + std::to_string(k), x));
    for (std::size_t i = 0; i < c.skip_levels.size(); ++i)
      if (c.skip_levels[i] == (1 << k)) r.skip_features[i] = x;
  }
  x = conv_block(p, "enc.b6", x);
  const int flat = static_cast<int>(x.value().size()) / batch;
  r.bottleneck = fully_connected(reshape(x, {batch, flat}), p["bn1.fc.w"], p["bn1.fc.b"]);
  return r;
}

template <typename T>
Var<T> decode(const BoundParams<T>& p, Var<T> z, const std::vector<Var<T>>& skip_features) {
  const NetConfig& c = p.source->config;
  if (z.shape().size() != 2 || z.shape()[1] != c.latent_dim)
    throw ShapeError("latent batch must be [N," + std::to_string(c.latent_dim) + "], got " + shape_str(z.shape()));
  if (!skip_features.empty() && skip_features.size() != c.skip_levels.size())
    throw ShapeError("decode: expected " + std::to_string(c.skip_levels.size()) + " skip feature maps");
  const int batch = z.shape()[0];
  const int s = c.resolution / 32;
  Graph<T>& g = *z.graph;
  Var<T> x = fully_connected(z, p["bn2.fc.w"], p["bn2.fc.b"]);
  x = reshape(x, {batch, c.base_filters, s, s});
  for (int k = 1; k <= 5; ++k) {
    x = upsample_nearest2(conv_block(p, "dec.b" + std::to_string(k), x));
    const int level = 1 << (5 - k);
    for (std::size_t i = 0; i < c.skip_levels.size(); ++i) {
      if (c.skip_levels[i] != level) continue;
      Var<T> feat = skip_features.empty() ? g.leaf(Tensor<T>(skip_feature_shape(c, level, batch)))
                                          : skip_features[i];
      x = add(x, conv_layer(p, "dec.skip" + std::to_string(level), feat));
    }
  }
  x = conv_block(p, "dec.b6", x);
  return tanh(conv_layer(p, "dec.out", x));
}

template <typename T>
ForwardResult<T> forward(const BoundParams<T>& p, Var<T> input) {
  ForwardResult<T> r = encode(p, input);
  r.output = decode(p, r.bottleneck, r.skip_features);
  return r;
}

#define FACEGAN_INSTANTIATE(T)                                                              \
  template struct NetParams<T>;                                                             \
  template struct BoundParams<T>;                                                           \
  template NetParams<T> init_params<T>(const NetConfig&, std::uint64_t);                    \
  template BoundParams<T> bind<T>(Graph<T>&, const NetParams<T>&, bool);                    \
  template ForwardResult<T> encode<T>(const BoundParams<T>&, Var<T>);                       \
  template ForwardResult<T> forward<T>(const BoundParams<T>&, Var<T>);                      \
  template Var<T> decode<T>(const BoundParams<T>&, Var<T>, const std::vector<Var<T>>&);

FACEGAN_INSTANTIATE(float)
FACEGAN_INSTANTIATE(double)
template NetParams<double> NetParams<float>::cast<double>() const;
template NetParams<float> NetParams<double>::cast<float>() const;

#undef FACEGAN_INSTANTIATE

}  // namespace facegan
