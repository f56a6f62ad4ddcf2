#include <doctest.h>

#include <cmath>
#include <random>
#include <set>

#include "facegan/training.hpp"
#include "test_util.hpp"

using namespace facegan;

namespace {

NetConfig small_net(int labels = 0) {
  NetConfig c;
  c.resolution = 32;
  c.base_filters = 4;
  c.latent_dim = 4;
  c.label_channels = labels;
  return c;
}

UVMap random_map(std::uint64_t seed, float amp = 0.8f) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> u(-amp, amp);
  UVMap m(32, 32, 3);
  for (float& v : m.data) v = u(rng);
  std::fill(m.valid.begin(), m.valid.end(), std::uint8_t{1});
  return m;
}

PairedDataset random_dataset(int n, std::uint64_t seed, int labels = 0) {
  std::vector<UVMap> maps;
  std::vector<int> lab;
  for (int i = 0; i < n; ++i) {
    maps.push_back(random_map(seed + static_cast<std::uint64_t>(i)));
    if (labels > 0) lab.push_back(i % labels);
  }
  return representation_dataset(std::move(maps), std::move(lab), labels);
}

TrainConfig quick_config() {
  TrainConfig c;
  c.lr = 1e-3;
  c.pretrain_batch = 4;
  c.batch = 2;
  c.pretrain_epochs = 2;
  c.epochs = 2;
  c.seed = 3;
  return c;
}

double mean_abs_diff(const Tensor<float>& a, const Tensor<float>& b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i]));
  return acc / static_cast<double>(a.size());
}

}  // namespace

TEST_CASE("learning-rate schedule") {
  TrainConfig c;
  CHECK(c.lr == 5e-5);
  CHECK(lr_at(1, c) == 5e-5);
  CHECK(lr_at(30, c) == 5e-5);
  CHECK(lr_at(31, c) == doctest::Approx(4.75e-5).epsilon(1e-12));
  CHECK(lr_at(31, c) == doctest::Approx(0.95 * lr_at(1, c)).epsilon(1e-12));
  CHECK(lr_at(300, c) == doctest::Approx(5e-5 * std::pow(0.95, 9)).epsilon(1e-12));
  c.decay_mode = LrDecay::kAdditive;
  CHECK(lr_at(31, c) == doctest::Approx(4.75e-5).epsilon(1e-12));
  CHECK(lr_at(61, c) == doctest::Approx(4.5e-5).epsilon(1e-12));
  CHECK(lr_at(300, c) == doctest::Approx(5e-5 * (1 - 0.05 * 9)).epsilon(1e-12));
  CHECK_THROWS_AS(lr_at(0, c), DataError);
  CHECK(c.lambda_adv == 1e-3);
  CHECK(c.lambda_rec == 1.0);
  CHECK(c.adam.beta1 == 0.5);
  CHECK(c.adam.beta2 == 0.999);
  CHECK(c.pretrain_batch == 32);
  CHECK(c.batch == 16);
  CHECK(c.pretrain_epochs == 300);
  CHECK(c.epochs == 300);
}

TEST_CASE("condition_input") {
  const UVMap x = random_map(1);
  const Tensor<float> plain = condition_input(x, {});
  CHECK(plain.shape() == Shape{3, 32, 32});
  CHECK(std::equal(x.data.begin(), x.data.end(), plain.ptr()));

  const std::vector<float> l{0, 1, 0};
  const Tensor<float> c = condition_input(x, l);
  CHECK(c.shape() == Shape{6, 32, 32});
  for (int ch = 0; ch < 3; ++ch)
    for (int p = 0; p < 32 * 32; ++p) CHECK(c[static_cast<std::size_t>((3 + ch) * 1024 + p)] == l[static_cast<std::size_t>(ch)]);

  const Tensor<float> swapped = condition_input(x, std::vector<float>{1, 0, 0});
  CHECK(std::equal(c.ptr(), c.ptr() + 3 * 1024, swapped.ptr()));
  CHECK_FALSE(std::equal(c.ptr() + 3 * 1024, c.ptr() + 6 * 1024, swapped.ptr() + 3 * 1024));

  CHECK_THROWS_AS(condition_input(x, std::vector<float>{1, 1, 0}), DataError);
  CHECK_THROWS_AS(condition_input(x, std::vector<float>{0, 0, 0}), DataError);
  CHECK_THROWS_AS(condition_input(x, std::vector<float>{0.5f, 0.5f}), DataError);
}

TEST_CASE("splits and batches") {
  const Split s = split_indices(200, 0.85, 7);
  CHECK(s.train.size() == 170);
  CHECK(s.test.size() == 30);
  std::set<std::size_t> all(s.train.begin(), s.train.end());
  all.insert(s.test.begin(), s.test.end());
  CHECK(all.size() == 200);
  const Split again = split_indices(200, 0.85, 7);
  CHECK(again.train == s.train);

  std::vector<int> groups;
  for (int i = 0; i < 60; ++i) groups.push_back(i / 3);
  const Split g = split_indices(60, 0.8, 1, groups);
  std::set<int> tr, te;
  for (auto i : g.train) tr.insert(groups[i]);
  for (auto i : g.test) te.insert(groups[i]);
  CHECK(tr.size() == 16);
  for (int id : te) CHECK(tr.count(id) == 0);

  const PairedDataset ds = random_dataset(5, 10, 2);
  const std::vector<std::size_t> idx{4, 1};
  const Batch b = make_batch(ds, idx);
  CHECK(b.input.shape() == Shape{2, 5, 32, 32});
  CHECK(b.target.shape() == Shape{2, 3, 32, 32});
  CHECK(b.label_planes.shape() == Shape{2, 2, 32, 32});
  CHECK(b.input[3 * 1024] == 1.0f);            // sample 4 has label 0
  CHECK(b.input[5 * 1024 + 4 * 1024] == 1.0f);  // sample 1 has label 1
  CHECK(std::equal(ds.targets[1].data.begin(), ds.targets[1].data.end(), b.target.ptr() + 3 * 1024));
}

TEST_CASE("pretraining reduces the loss and is deterministic") {
  const PairedDataset ds = random_dataset(8, 20);
  TrainConfig c = quick_config();
  c.pretrain_epochs = 6;
  PretrainState a = pretrain_init(small_net(), c);
  pretrain_discriminator(a, ds, c);
  REQUIRE(a.history.size() == 6);
  CHECK(a.history.back() < a.history.front());
  for (double l : a.history) CHECK(std::isfinite(l));

  PretrainState b = pretrain_init(small_net(), c);
  pretrain_discriminator(b, ds, c);
  CHECK(a.d.checksum() == b.d.checksum());
  CHECK(a.history == b.history);
}

TEST_CASE("pretraining resumed from a copied state matches an uninterrupted run") {
  const PairedDataset ds = random_dataset(6, 30);
  TrainConfig c = quick_config();
  c.pretrain_epochs = 4;
  PretrainState full = pretrain_init(small_net(), c);
  pretrain_discriminator(full, ds, c);

  TrainConfig half = c;
  half.pretrain_epochs = 2;
  PretrainState first = pretrain_init(small_net(), c);
  pretrain_discriminator(first, ds, half);
  PretrainState resumed = first;
  pretrain_discriminator(resumed, ds, c);
  CHECK(resumed.d.checksum() == full.d.checksum());
  CHECK(resumed.history == full.history);
}

TEST_CASE("non-finite data aborts training") {
  PairedDataset ds = random_dataset(2, 40);
  ds.targets[1].data[17] = std::numeric_limits<float>::quiet_NaN();
  TrainConfig c = quick_config();
  PretrainState s = pretrain_init(small_net(), c);
  CHECK_THROWS_AS(pretrain_discriminator(s, ds, c), NumericalError);
}

TEST_CASE("label count must match the network") {
  const PairedDataset ds = random_dataset(4, 50, 2);
  TrainConfig c = quick_config();
  PretrainState s = pretrain_init(small_net(0), c);
  CHECK_THROWS_AS(pretrain_epoch(s, ds, c), DataError);
}

TEST_CASE("adversarial step: loss formulas from logged outputs") {
  const PairedDataset ds = random_dataset(2, 60);
  TrainConfig c = quick_config();
  PretrainState pre = pretrain_init(small_net(), c);
  pretrain_discriminator(pre, ds, c);
  AdversarialState st = adversarial_init(pre.d, c);
  const std::vector<std::size_t> idx{0, 1};
  StepTrace tr;
  const StepLosses l = adversarial_step(st, make_batch(ds, idx), c, 1e-3, &tr);

  const double l_real = mean_abs_diff(tr.y, tr.d_y);
  const double l_fake = mean_abs_diff(tr.gx, tr.d_gx);
  const double l_fake_after = mean_abs_diff(tr.gx, tr.d_gx_after);
  const double l_rec = mean_abs_diff(tr.gx, tr.y);
  CHECK(l.l_d == doctest::Approx(l_real - c.lambda_adv * l_fake).epsilon(1e-6));
  CHECK(l.l_g == doctest::Approx(l_fake_after + c.lambda_rec * l_rec).epsilon(1e-6));
  CHECK(l.l_rec == doctest::Approx(l_rec).epsilon(1e-6));
  CHECK(l.l_d + c.lambda_adv * l_fake == doctest::Approx(l_real).epsilon(1e-6));
}

TEST_CASE("adversarial step: gradient isolation and frozen decoders") {
  const PairedDataset ds = random_dataset(4, 70);
  TrainConfig c = quick_config();
  PretrainState pre = pretrain_init(small_net(), c);
  pretrain_discriminator(pre, ds, c);
  AdversarialState st = adversarial_init(pre.d, c);
  CHECK(st.g.checksum() == st.d.checksum());
  CHECK(st.d.is_frozen(ParamGroup::kDecoder));
  CHECK(st.g.is_frozen(ParamGroup::kDecoder));
  const auto dec_d = st.d.checksum(ParamGroup::kDecoder);
  const auto dec_g = st.g.checksum(ParamGroup::kDecoder);
  const std::vector<std::size_t> idx{0, 1, 2};
  for (int k = 0; k < 3; ++k) {
    StepTrace tr;
    adversarial_step(st, make_batch(ds, idx), c, 1e-3, &tr);
    CHECK(tr.max_abs_g_grad_in_d_update == 0.0);
    CHECK(tr.max_abs_d_grad_in_g_update == 0.0);
    CHECK(tr.g_after_d_update == tr.g_before);
    CHECK(tr.d_after_g_update == tr.d_after_d_update);
  }
  CHECK(st.d.checksum(ParamGroup::kDecoder) == dec_d);
  CHECK(st.g.checksum(ParamGroup::kDecoder) == dec_g);
  CHECK(st.g.checksum(ParamGroup::kEncoder) != pre.d.checksum(ParamGroup::kEncoder));
  CHECK(st.d.checksum(ParamGroup::kEncoder) != pre.d.checksum(ParamGroup::kEncoder));
}

TEST_CASE("adversarial step with lambda_adv = 0 is a plain autoencoder step for D") {
  const PairedDataset ds = random_dataset(3, 80);
  TrainConfig c = quick_config();
  c.lambda_adv = 0.0;
  c.pretrain_batch = 3;
  c.pretrain_epochs = 1;
  PretrainState pre = pretrain_init(small_net(), c);
  pretrain_discriminator(pre, ds, c);
  AdversarialState st = adversarial_init(pre.d, c);

  PretrainState ref;
  ref.d = pre.d;
  freeze_decoder(ref.d);
  ref.adam = Adam<float>(c.adam);
  ref.rng = std::mt19937_64(0);
  std::mt19937_64 peek = ref.rng;
  const std::vector<std::size_t> idx = shuffled_indices(3, peek);
  pretrain_epoch(ref, ds, c);

  adversarial_step(st, make_batch(ds, idx), c, lr_at(1, c));
  CHECK(st.d.checksum() == ref.d.checksum());
}

TEST_CASE("train_3dfacegan end to end on a tiny set") {
  const PairedDataset ds = random_dataset(4, 90);
  TrainConfig c = quick_config();
  const TrainResult r = train_3dfacegan(ds, small_net(), c);
  CHECK(r.pretrain_history.size() == 2);
  REQUIRE(r.history.size() == 2);
  for (const auto& e : r.history) {
    CHECK(std::isfinite(e.l_d));
    CHECK(std::isfinite(e.l_g));
    CHECK(std::isfinite(e.l_rec));
    CHECK(e.l_g >= e.l_rec);
  }
  CHECK(r.d.checksum(ParamGroup::kDecoder) == r.g.checksum(ParamGroup::kDecoder));
  const double l1 = reconstruction_l1(r.g, ds);
  CHECK(std::isfinite(l1));
  CHECK(reconstruct(r.g, ds).size() == 4);
}
