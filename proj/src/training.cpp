#include "facegan/training.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace facegan {

void TrainConfig::validate() const {
  if (lambda_adv < 0 || lambda_rec < 0) throw DataError("lambda_adv and lambda_rec must be >= 0");
  if (!(lr > 0)) throw DataError("lr must be > 0");
  if (pretrain_batch < 1 || batch < 1) throw DataError("batch sizes must be >= 1");
  if (pretrain_epochs < 0 || epochs < 0) throw DataError("epoch counts must be >= 0");
  if (lr_decay_every < 1) throw DataError("lr_decay_every must be >= 1");
}

double lr_at(int epoch, const TrainConfig& config, double base) {
  if (epoch < 1) throw DataError("lr_at: epochs count from 1");
  const int periods = (epoch - 1) / config.lr_decay_every;
  if (config.decay_mode == LrDecay::kMultiplicative) return base * std::pow(config.lr_decay, periods);
  return base * std::max(0.0, 1.0 - (1.0 - config.lr_decay) * periods);
}

double lr_at(int epoch, const TrainConfig& config) { return lr_at(epoch, config, config.lr); }

// ---- data ----------------------------------------------------------------

void PairedDataset::validate() const {
  if (inputs.size() != targets.size()) throw DataError("dataset: input and target counts differ");
  if (!labels.empty() && labels.size() != inputs.size()) throw DataError("dataset: label count differs");
  if (label_count > 0 && labels.size() != inputs.size()) throw DataError("dataset: labels missing");
  const int h = resolution();
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    for (const UVMap* m : {&inputs[i], &targets[i]})
      if (m->height != h || m->width != h || m->channels != 3)
        throw DataError("dataset: sample " + std::to_string(i) + " is not a " + std::to_string(h) + "x" +
                        std::to_string(h) + "x3 map");
    if (label_count > 0 && (labels[i] < 0 || labels[i] >= label_count))
      throw DataError("dataset: sample " + std::to_string(i) + " has label " + std::to_string(labels[i]) +
                      " outside [0," + std::to_string(label_count) + ")");
  }
}

PairedDataset PairedDataset::subset(std::span<const std::size_t> indices) const {
  PairedDataset out;
  out.label_count = label_count;
  for (std::size_t i : indices) {
    out.inputs.push_back(inputs.at(i));
    out.targets.push_back(targets.at(i));
    if (!labels.empty()) out.labels.push_back(labels[i]);
  }
  return out;
}

PairedDataset representation_dataset(std::vector<UVMap> maps, std::vector<int> labels, int label_count) {
  PairedDataset ds;
  ds.targets = maps;
  ds.inputs = std::move(maps);
  ds.labels = std::move(labels);
  ds.label_count = label_count;
  ds.validate();
  return ds;
}

std::vector<std::size_t> shuffled_indices(std::size_t n, std::mt19937_64& rng) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  for (std::size_t i = n; i > 1; --i) std::swap(idx[i - 1], idx[rng() % i]);
  return idx;
}

Split split_indices(std::size_t n, double train_fraction, std::uint64_t seed, std::span<const int> groups) {
  if (!(train_fraction > 0 && train_fraction < 1)) throw DataError("split: train fraction must be in (0,1)");
  std::mt19937_64 rng(seed);
  Split s;
  if (groups.empty()) {
    const auto order = shuffled_indices(n, rng);
    const auto n_train = static_cast<std::size_t>(std::lround(train_fraction * static_cast<double>(n)));
    s.train.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_train));
    s.test.assign(order.begin() + static_cast<std::ptrdiff_t>(n_train), order.end());
  } else {
    if (groups.size() != n) throw DataError("split: group count differs from sample count");
    std::vector<int> ids(groups.begin(), groups.end());
    std::sort(ids.begin(), ids.end());
    ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
    const auto order = shuffled_indices(ids.size(), rng);
    const auto n_train = static_cast<std::size_t>(std::lround(train_fraction * static_cast<double>(ids.size())));
    std::vector<char> is_train(ids.size(), 0);
    for (std::size_t k = 0; k < n_train; ++k) is_train[order[k]] = 1;
    for (std::size_t i = 0; i < n; ++i) {
      const auto g = static_cast<std::size_t>(std::lower_bound(ids.begin(), ids.end(), groups[i]) - ids.begin());
      (is_train[g] ? s.train : s.test).push_back(i);
    }
  }
  std::sort(s.train.begin(), s.train.end());
  std::sort(s.test.begin(), s.test.end());
  return s;
}

std::vector<float> one_hot(int label, int count) {
  if (label < 0 || label >= count)
    throw DataError("label " + std::to_string(label) + " outside [0," + std::to_string(count) + ")");
  std::vector<float> v(static_cast<std::size_t>(count), 0.0f);
  v[static_cast<std::size_t>(label)] = 1.0f;
  return v;
}

Tensor<float> condition_input(const UVMap& x, std::span<const float> label) {
  if (x.channels != 3) throw ShapeError("condition_input: expected a 3-channel map");
  if (!label.empty()) {
    int ones = 0;
    for (float v : label) {
      if (v == 1.0f)
        ++ones;
      else if (v != 0.0f)
        throw DataError("condition_input: label is not one-hot");
    }
    if (ones != 1) throw DataError("condition_input: label is not one-hot");
  }
  const int l = static_cast<int>(label.size());
  const std::size_t plane = static_cast<std::size_t>(x.height) * x.width;
  Tensor<float> t({3 + l, x.height, x.width});
  std::copy(x.data.begin(), x.data.end(), t.ptr());
  for (int c = 0; c < l; ++c)
    std::fill_n(t.ptr() + (3 + c) * plane, plane, label[static_cast<std::size_t>(c)]);
  return t;
}

Batch make_batch(const PairedDataset& ds, std::span<const std::size_t> indices) {
  const int b = static_cast<int>(indices.size());
  const int h = ds.resolution(), l = ds.label_count;
  const std::size_t plane = static_cast<std::size_t>(h) * h;
  Batch out{Tensor<float>({b, 3 + l, h, h}), Tensor<float>({b, 3, h, h}), Tensor<float>()};
  if (l > 0) out.label_planes = Tensor<float>({b, l, h, h});
  for (int s = 0; s < b; ++s) {
    const std::size_t i = indices[static_cast<std::size_t>(s)];
    const auto label = l > 0 ? one_hot(ds.labels.at(i), l) : std::vector<float>{};
    const Tensor<float> in = condition_input(ds.inputs.at(i), label);
    std::copy(in.data().begin(), in.data().end(), out.input.ptr() + s * (3 + l) * plane);
    std::copy(ds.targets[i].data.begin(), ds.targets[i].data.end(), out.target.ptr() + s * 3 * plane);
    if (l > 0) std::copy_n(in.ptr() + 3 * plane, l * plane, out.label_planes.ptr() + s * l * plane);
  }
  return out;
}

namespace {

// D sees its input with the sample's label planes appended.
Var<float> conditioned(Graph<float>& g, Var<float> maps, const Batch& b) {
  if (b.label_planes.size() == 0) return maps;
  return concat_channels(maps, g.leaf(b.label_planes));
}

double max_abs_grad(const NetParams<float>& p) {
  double m = 0.0;
  for (const auto& prm : p.params)
    for (float v : prm.grad.data()) m = std::max(m, static_cast<double>(std::abs(v)));
  return m;
}

template <typename Visit>
void for_batches(const std::vector<std::size_t>& order, int batch, Visit&& visit) {
  for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(batch)) {
    const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(batch));
    visit(std::span<const std::size_t>(order.data() + start, end - start));
  }
}

}  // namespace

// ---- pre-training --------------------------------------------------------

PretrainState pretrain_init(const NetConfig& net, const TrainConfig& config) {
  config.validate();
  PretrainState s{init_params<float>(net, config.seed), Adam<float>(config.adam), 0, std::mt19937_64(config.seed ^ 0x5eedULL), {}};
  return s;
}

double pretrain_epoch(PretrainState& state, const PairedDataset& train, const TrainConfig& config) {
  if (train.size() == 0) throw DataError("pretrain: empty dataset");
  if (train.label_count != state.d.config.label_channels)
    throw DataError("pretrain: dataset has " + std::to_string(train.label_count) + " labels, network expects " +
                    std::to_string(state.d.config.label_channels));
  const int epoch = state.epoch + 1;
  const double lr = lr_at(epoch, config);
  const auto order = shuffled_indices(train.size(), state.rng);
  double total = 0.0;
  for_batches(order, config.pretrain_batch, [&](std::span<const std::size_t> idx) {
    const Batch b = make_batch(train, idx);
    Graph<float> g;
    const auto p = bind(g, state.d, true);
    const Var<float> y = g.leaf(b.target);
    const Var<float> loss = l1_mean(y, forward(p, conditioned(g, y, b)).output);
    g.backward(loss);
    state.d.zero_grads();
    p.collect_grads(state.d);
    state.adam.step(state.d.params, lr);
    total += static_cast<double>(loss.value()[0]) * static_cast<double>(idx.size());
  });
  const double mean = total / static_cast<double>(train.size());
  state.epoch = epoch;
  state.history.push_back(mean);
  return mean;
}

void pretrain_discriminator(PretrainState& state, const PairedDataset& train, const TrainConfig& config,
                            const PretrainCallback& on_epoch) {
  train.validate();
  while (state.epoch < config.pretrain_epochs) {
    pretrain_epoch(state, train, config);
    if (on_epoch) on_epoch(state);
  }
}

// ---- adversarial ---------------------------------------------------------

AdversarialState adversarial_init(const NetParams<float>& pretrained_d, const TrainConfig& config) {
  config.validate();
  AdversarialState s;
  s.d = pretrained_d;
  s.g = clone_generator_from_discriminator(pretrained_d);
  freeze_decoder(s.d);
  freeze_decoder(s.g);
  s.adam_d = Adam<float>(config.adam);
  s.adam_g = Adam<float>(config.adam);
  s.rng = std::mt19937_64(config.seed ^ 0xad7e55a1ULL);
  return s;
}

StepLosses adversarial_step(AdversarialState& state, const Batch& batch, const TrainConfig& config, double lr,
                            StepTrace* trace) {
  StepLosses out;
  const auto lam_adv = static_cast<float>(config.lambda_adv);
  const auto lam_rec = static_cast<float>(config.lambda_rec);
  if (trace) trace->g_before = state.g.checksum();

  // G(x) once, on a tape kept for the G update (G is unchanged by the D update)
  Graph<float> gg;
  const auto gp = bind(gg, state.g, true);
  const Var<float> gx = forward(gp, gg.leaf(batch.input)).output;

  {  // D update, G constant: G(x) enters as a plain value
    Graph<float> g;
    const auto dp = bind(g, state.d, true);
    const Var<float> y = g.leaf(batch.target);
    const Var<float> gxc = g.leaf(gx.value());
    const Var<float> d_y = forward(dp, conditioned(g, y, batch)).output;
    const Var<float> d_gx = forward(dp, conditioned(g, gxc, batch)).output;
    const Var<float> l_real = l1_mean(y, d_y);
    const Var<float> l_fake = l1_mean(gxc, d_gx);
    const Var<float> l_d = axpy(l_real, -lam_adv, l_fake);
    g.backward(l_d);
    state.d.zero_grads();
    state.g.zero_grads();
    dp.collect_grads(state.d);
    state.adam_d.step(state.d.params, lr);
    out.l_d = l_d.value()[0];
    if (trace) {
      trace->y = batch.target;
      trace->gx = gx.value();
      trace->d_y = d_y.value();
      trace->d_gx = d_gx.value();
      trace->max_abs_g_grad_in_d_update = max_abs_grad(state.g);
      trace->g_after_d_update = state.g.checksum();
      trace->d_after_d_update = state.d.checksum();
    }
  }

  // G update, D constant (bound without gradients)
  const auto dp = bind(gg, state.d, false);
  const Var<float> d_gx = forward(dp, conditioned(gg, gx, batch)).output;
  const Var<float> adv = l1_mean(gx, d_gx);
  const Var<float> rec = l1_mean(gx, gg.leaf(batch.target));
  const Var<float> l_g = axpy(adv, lam_rec, rec);
  gg.backward(l_g);
  state.g.zero_grads();
  state.d.zero_grads();
  gp.collect_grads(state.g);
  dp.collect_grads(state.d);
  state.adam_g.step(state.g.params, lr);
  out.l_g = l_g.value()[0];
  out.l_rec = rec.value()[0];
  if (trace) {
    trace->d_gx_after = d_gx.value();
    trace->max_abs_d_grad_in_g_update = max_abs_grad(state.d);
    trace->d_after_g_update = state.d.checksum();
  }
  return out;
}

EpochLosses adversarial_epoch(AdversarialState& state, const PairedDataset& train, const TrainConfig& config) {
  if (train.size() == 0) throw DataError("train: empty dataset");
  const int epoch = state.epoch + 1;
  const double lr = lr_at(epoch, config, config.adversarial_lr > 0 ? config.adversarial_lr : config.lr);
  const auto order = shuffled_indices(train.size(), state.rng);
  EpochLosses e;
  e.epoch = epoch;
  for_batches(order, config.batch, [&](std::span<const std::size_t> idx) {
    const StepLosses s = adversarial_step(state, make_batch(train, idx), config, lr);
    const auto w = static_cast<double>(idx.size());
    e.l_d += s.l_d * w;
    e.l_g += s.l_g * w;
    e.l_rec += s.l_rec * w;
  });
  const auto n = static_cast<double>(train.size());
  e.l_d /= n;
  e.l_g /= n;
  e.l_rec /= n;
  state.epoch = epoch;
  state.history.push_back(e);
  return e;
}

void train_adversarial(AdversarialState& state, const PairedDataset& train, const TrainConfig& config,
                       const AdversarialCallback& on_epoch) {
  train.validate();
  if (train.label_count != state.g.config.label_channels)
    throw DataError("train: dataset has " + std::to_string(train.label_count) + " labels, network expects " +
                    std::to_string(state.g.config.label_channels));
  while (state.epoch < config.epochs) {
    adversarial_epoch(state, train, config);
    if (on_epoch) on_epoch(state);
  }
}

TrainResult train_3dfacegan(const PairedDataset& train, const NetConfig& net, const TrainConfig& config) {
  PretrainState pre = pretrain_init(net, config);
  pretrain_discriminator(pre, train, config);
  AdversarialState adv = adversarial_init(pre.d, config);
  train_adversarial(adv, train, config);
  return {std::move(adv.d), std::move(adv.g), std::move(pre.history), std::move(adv.history)};
}

// ---- inference -----------------------------------------------------------

std::vector<UVMap> reconstruct(const NetParams<float>& params, const PairedDataset& ds, int batch) {
  std::vector<std::size_t> order(ds.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<UVMap> out;
  const int h = ds.resolution();
  for_batches(order, std::max(1, batch), [&](std::span<const std::size_t> idx) {
    const Batch b = make_batch(ds, idx);
    Graph<float> g;
    const auto p = bind(g, params, false);
    const Tensor<float>& y = forward(p, g.leaf(b.input)).output.value();
    const std::size_t per = static_cast<std::size_t>(3) * h * h;
    for (std::size_t s = 0; s < idx.size(); ++s) {
      UVMap m(h, h, 3);
      std::copy_n(y.ptr() + s * per, per, m.data.begin());
      std::fill(m.valid.begin(), m.valid.end(), std::uint8_t{1});
      out.push_back(std::move(m));
    }
  });
  return out;
}

double reconstruction_l1(const NetParams<float>& params, const PairedDataset& ds, int batch) {
  if (ds.size() == 0) throw DataError("reconstruction_l1: empty dataset");
  const auto rec = reconstruct(params, ds, batch);
  double total = 0.0;
  for (std::size_t i = 0; i < rec.size(); ++i) {
    double acc = 0.0;
    for (std::size_t k = 0; k < rec[i].data.size(); ++k)
      acc += std::abs(static_cast<double>(rec[i].data[k]) - static_cast<double>(ds.targets[i].data[k]));
    total += acc / static_cast<double>(rec[i].data.size());
  }
  return total / static_cast<double>(rec.size());
}

}  // namespace facegan
