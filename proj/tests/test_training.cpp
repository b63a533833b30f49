#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>

#include "fd_oracle.hpp"
#include "gradenet/gradenet.hpp"

using namespace gradenet;

namespace {

NetworkSpec tiny_spec() {
  NetworkSpec s;
  s.name = "tiny";
  s.input = {1, 8, 8};
  s.branch = {{LayerKind::conv2d, 3, 0, true, "conv1"},
              {LayerKind::batchnorm, 0, 0, true, "bn1"},
              {LayerKind::relu, 0, 0, true, "relu1"},
              {LayerKind::maxpool, 0, 0, true, "pool1"},
              {LayerKind::flatten, 0, 0, true, "flatten"}};
  s.head = {{LayerKind::dense, 4, 0, true, "fc1"},
            {LayerKind::relu, 0, 0, true, "fc1_relu"},
            {LayerKind::dropout, 0, 0.5, true, "dropout"},
            {LayerKind::dense, 1, 0, true, "fc_out"},
            {LayerKind::sigmoid, 0, 0, true, "sigmoid"}};
  return s;
}

// Label 1: bright 4x4 centre; label 0: dim uniform image.
Dataset tiny_dataset(std::size_t patients, std::size_t per_patient, std::uint64_t seed) {
  Rng rng(seed);
  Dataset d;
  for (std::size_t p = 0; p < patients; ++p) {
    const int label = static_cast<int>(p % 2);
    for (std::size_t k = 0; k < per_patient; ++k) {
      Tensor<float> x({1, 8, 8});
      for (std::size_t i = 0; i < 64; ++i) {
        const std::size_t r = i / 8, c = i % 8;
        const bool centre = r >= 2 && r < 6 && c >= 2 && c < 6;
        x[i] = static_cast<float>((label && centre ? 2.0 : 0.5) + 0.1 * uniform01(rng));
      }
      d.push_back({"p" + std::to_string(p), label, {x}});
    }
  }
  return d;
}

template <class T>
std::vector<std::vector<float>> snapshot(Network<T>& net) {
  std::vector<std::vector<float>> out;
  for (auto* p : net.parameters()) out.emplace_back(p->value.data().begin(), p->value.data().end());
  return out;
}

}  // namespace

TEST(BceLoss, Examples) {
  const std::vector<double> perfect{1.0};
  const std::vector<int> one{1};
  EXPECT_LE(bce_loss<double>(perfect, one).loss, 1e-6);
  const std::vector<double> half{0.5, 0.5};
  const std::vector<int> labels{1, 0};
  EXPECT_NEAR(bce_loss<double>(half, labels).loss, std::log(2.0), 1e-12);
  EXPECT_NEAR(bce_loss<double>(half, labels).loss, 0.693147, 1e-6);
}

TEST(BceLoss, Rejects) {
  const std::vector<double> empty;
  const std::vector<int> none;
  EXPECT_THROW(bce_loss<double>(empty, none), ShapeError);
  const std::vector<double> f{0.3};
  const std::vector<int> bad{2};
  EXPECT_THROW(bce_loss<double>(f, bad), DataError);
  const std::vector<int> two{1, 0};
  EXPECT_THROW(bce_loss<double>(f, two), ShapeError);
}

TEST(BceLoss, GradientMatchesFiniteDifferences) {
  for (int s = 0; s < 20; ++s) {
    std::mt19937_64 rng(s);
    std::vector<double> f(8);
    fd::fill(f, rng, 0.1, 0.9);
    std::vector<int> y(8);
    for (auto& v : y) v = static_cast<int>(rng() % 2);
    const auto analytic = bce_loss<double>(f, y).grad;
    const auto numeric = fd::numeric_gradient([&] { return bce_loss<double>(f, y).loss; }, f);
    EXPECT_LE(fd::max_relative_error(analytic, numeric), 1e-6);
  }
}

TEST(BceLoss, PermutationInvariant) {
  std::vector<double> f{0.2, 0.7, 0.9, 0.4};
  std::vector<int> y{0, 1, 1, 0};
  const double a = bce_loss<double>(f, y).loss;
  std::reverse(f.begin(), f.end());
  std::reverse(y.begin(), y.end());
  EXPECT_NEAR(bce_loss<double>(f, y).loss, a, 1e-15);
}

TEST(Sgd, MomentumRecurrence) {
  std::vector<double> p{0.0}, g{1.0}, v{0.0};
  momentum_update<double>(p, g, v, 0.001, 0.9);
  EXPECT_NEAR(p[0], -0.001, 1e-15);
  momentum_update<double>(p, g, v, 0.001, 0.9);
  EXPECT_NEAR(v[0], -0.0019, 1e-15);
  EXPECT_NEAR(p[0], -0.0029, 1e-15);
}

TEST(Sgd, ZeroMomentumIsGradientDescent) {
  std::vector<float> p{1.5f, -2.0f, 0.25f}, g{0.5f, -1.0f, 3.0f}, v(3, 0.0f);
  const auto expect = p;
  momentum_update<float>(p, g, v, 0.01, 0.0);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(p[i], expect[i] - 0.01f * g[i]);
}

TEST(Sgd, ShapeMismatchRejected) {
  std::vector<float> p(3), g(2), v(3);
  EXPECT_THROW(momentum_update<float>(p, g, v, 0.1, 0.9), ShapeError);
}

TEST(Sgd, FrozenLayerUnchangedAfterHundredSteps) {
  auto net = Network<float>::instantiate(tiny_spec(), 1);
  net.freeze_before(3);  // conv1 and bn1 frozen
  const auto data = tiny_dataset(4, 2, 3);
  auto state = OptimizerState<float>::zeros_like(net);
  const auto mask = FreezeMask::of(net);
  auto& conv = dynamic_cast<Conv2dLayer<float>&>(*net.layers_at(0)[0]);
  const Tensor<float> before = conv.kernels().value;
  const auto* bn = net.layers_at(1)[0];
  const auto bn_before = const_cast<Layer<float>*>(bn)->buffers();
  const Tensor<float> running_mean = *bn_before[0];
  std::vector<const Tensor<float>*> ptrs;
  for (const auto& s : data) ptrs.push_back(&s.inputs[0]);
  const std::vector<Tensor<float>> batch{stack<float>(ptrs)};
  Rng rng(0);
  for (int step = 0; step < 100; ++step) {
    Tensor<float> out = net.forward(batch, Mode::train, rng);
    net.backward(Tensor<float>(out.shape(), 0.1f));
    sgd_momentum_step(net, state, 0.01, 0.9, mask);
  }
  EXPECT_EQ(conv.kernels().value, before);
  EXPECT_EQ(*const_cast<Layer<float>*>(bn)->buffers()[0], running_mean);
  for (std::size_t pi = 0; pi < state.velocity[0].size(); ++pi)
    for (float v : state.velocity[0][pi].data()) EXPECT_EQ(v, 0.0f);
}

TEST(Split, Examples) {
  const auto data = tiny_dataset(10, 3, 1);
  const auto [tr0, va0] = split_train_val(data, 0.0, 5);
  EXPECT_TRUE(va0.empty());
  EXPECT_EQ(tr0.size(), data.size());
  const auto [tr, va] = split_train_val(data, 0.2, 5);
  EXPECT_EQ(patient_ids(va).size(), 2u);
  EXPECT_EQ(tr.size() + va.size(), data.size());
  for (const auto& id : patient_ids(va)) {
    const auto ids = patient_ids(tr);
    EXPECT_EQ(std::count(ids.begin(), ids.end(), id), 0);
  }
  const auto again = split_train_val(data, 0.2, 5);
  EXPECT_EQ(patient_ids(again.second), patient_ids(va));
  EXPECT_THROW(split_train_val(data, 1.0, 5), ConfigError);
  EXPECT_THROW(split_train_val(tiny_dataset(2, 1, 1), 0.9, 5), ConfigError);
}

TEST(Batches, TrailingSingletonIsFolded) {
  std::vector<std::size_t> order(65);
  std::iota(order.begin(), order.end(), 0);
  const auto b = detail::make_batches(order, 32);
  ASSERT_EQ(b.size(), 2u);
  EXPECT_EQ(b[0].size(), 32u);
  EXPECT_EQ(b[1].size(), 33u);
  const auto c = detail::make_batches(std::span(order).first(70), 32);
  ASSERT_EQ(c.size(), 3u);
  EXPECT_EQ(c[2].size(), 6u);
}

TEST(Train, DeterministicWithoutAugmentation) {
  const auto data = tiny_dataset(8, 4, 2);
  const auto [tr, va] = split_train_val(data, 0.25, 1);
  TrainConfig cfg;
  cfg.epochs = 3;
  cfg.batch_size = 8;
  cfg.augment = false;
  auto a = Network<float>::instantiate(tiny_spec(), 4);
  auto b = Network<float>::instantiate(tiny_spec(), 4);
  const auto la = train(a, tr, va, cfg);
  const auto lb = train(b, tr, va, cfg);
  EXPECT_EQ(epoch_log_csv(la), epoch_log_csv(lb));
  EXPECT_EQ(snapshot(a), snapshot(b));
  cfg.dropout = false;
  auto c = Network<float>::instantiate(tiny_spec(), 4);
  auto d = Network<float>::instantiate(tiny_spec(), 4);
  train(c, tr, va, cfg);
  train(d, tr, va, cfg);
  EXPECT_EQ(snapshot(c), snapshot(d));
}

TEST(Train, LearnsSeparableTask) {
  const auto data = tiny_dataset(10, 6, 3);
  const auto [tr, va] = split_train_val(data, 0.2, 1);
  TrainConfig cfg;
  cfg.epochs = 15;
  cfg.batch_size = 8;
  cfg.learning_rate = 0.01;
  cfg.augment = false;
  auto net = Network<float>::instantiate(tiny_spec(), 2);
  const auto log = train(net, tr, va, cfg);
  EXPECT_LT(log[4].train_loss, log[0].train_loss);
  EXPECT_GE(log.back().val_acc, 0.95);
}

TEST(Train, FullyFrozenNetworkKeepsParameters) {
  const auto data = tiny_dataset(6, 4, 2);
  auto net = Network<float>::instantiate(tiny_spec(), 4);
  net.freeze_before(net.depth());
  EXPECT_EQ(net.trainable_parameter_count(), 0u);
  const auto before = snapshot(net);
  TrainConfig cfg;
  cfg.epochs = 3;
  cfg.batch_size = 8;
  cfg.validation_fraction = 0;
  const auto log = train(net, data, {}, cfg);
  EXPECT_EQ(snapshot(net), before);
  EXPECT_EQ(log.size(), 3u);
  EXPECT_TRUE(std::isnan(log[0].val_loss));
}

TEST(Train, Rejects) {
  auto net = Network<float>::instantiate(tiny_spec(), 4);
  TrainConfig cfg;
  EXPECT_THROW(train(net, {}, {}, cfg), DataError);
  cfg.batch_size = 100;
  EXPECT_THROW(train(net, tiny_dataset(2, 2, 1), {}, cfg), ConfigError);
  cfg = {};
  cfg.learning_rate = 0;
  EXPECT_THROW(cfg.validate(), ConfigError);
}

TEST(Train, EpochLogCsvHeader) {
  EpochLog log{{1, 0.5, 0.75, 0.25, 1.0}};
  const auto csv = epoch_log_csv(log);
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "epoch,train_loss,train_acc,val_loss,val_acc");
}

TEST(Transfer, BoundaryZeroReplacesHeadOnly) {
  auto src = Network<float>::instantiate(build_patchnet(4), 3);
  auto net = apply_transfer(src, 0, 9);
  EXPECT_EQ(net.trainable_parameter_count(), net.parameter_count());
  auto& old_out = dynamic_cast<DenseLayer<float>&>(src.head_layer(3));
  auto& new_out = dynamic_cast<DenseLayer<float>&>(net.head_layer(3));
  EXPECT_EQ(new_out.units(), 1u);
  EXPECT_NE(new_out.weights().value, old_out.weights().value);
  auto& conv = dynamic_cast<Conv2dLayer<float>&>(*net.layers_at(0)[0]);
  EXPECT_EQ(conv.kernels().value, dynamic_cast<Conv2dLayer<float>&>(*src.layers_at(0)[0]).kernels().value);
}

TEST(Transfer, PatchNetThirdBlockBoundary) {
  auto src = Network<float>::instantiate(build_patchnet(4), 3);
  const std::size_t boundary = src.conv_block_position(3);
  EXPECT_EQ(boundary, 8u);
  auto net = apply_transfer(src, boundary, 9);
  std::size_t frozen = 0;
  for (std::size_t pos = 0; pos < net.depth(); ++pos)
    for (auto* l : net.layers_at(pos)) {
      const std::string& n = l->name;
      if (n == "conv1" || n == "conv2" || n == "bn1" || n == "bn2") {
        EXPECT_FALSE(l->trainable) << n;
      }
      if (n == "conv3" || n == "bn3" || n == "fc1" || n == "fc_out") {
        EXPECT_TRUE(l->trainable) << n;
      }
      if (!l->trainable) frozen += l->parameter_count();
    }
  // conv1 4*8*9+8, bn1 16, conv2 8*16*9+16, bn2 32
  EXPECT_EQ(frozen, 296u + 16u + 1168u + 32u);
  EXPECT_EQ(net.parameter_count() - net.trainable_parameter_count(), frozen);
  EXPECT_THROW(apply_transfer(src, src.depth() + 1, 1), ConfigError);
}

TEST(Weights, RoundTripIsBitwiseStable) {
  auto net = Network<float>::instantiate(build_volumenet(2, 40), 5);
  const auto dir = std::filesystem::temp_directory_path() / "gradenet_weights_test";
  std::filesystem::create_directories(dir);
  save_weights(net, dir / "a.bin");
  auto other = Network<float>::instantiate(build_volumenet(2, 40), 99);
  load_weights(other, dir / "a.bin");
  EXPECT_EQ(snapshot(other), snapshot(net));
  save_weights(other, dir / "b.bin");
  std::ifstream fa(dir / "a.bin", std::ios::binary), fb(dir / "b.bin", std::ios::binary);
  const std::string sa((std::istreambuf_iterator<char>(fa)), {}), sb((std::istreambuf_iterator<char>(fb)), {});
  EXPECT_EQ(sa, sb);
  EXPECT_EQ(sa.substr(0, 8), "GNWEIGHT");
  auto wrong = Network<float>::instantiate(build_patchnet(2), 1);
  EXPECT_THROW(load_weights(wrong, dir / "a.bin"), DataError);
  std::filesystem::remove_all(dir);
}
