#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "saltseg.hpp"
#include "test_util.hpp"

using namespace saltseg;
using saltseg::testing::bit_equal;
using saltseg::testing::random_uniform;

TEST(ModelSpecTable, ReproducesArchitectureTableRowForRow) {
  const auto spec = canonical_spec();
  ASSERT_EQ(spec.layers.size(), 23u);
  using K = LayerKind;
  const std::vector<K> kinds = {K::conv, K::maxpool, K::conv, K::maxpool, K::conv, K::maxpool, K::conv, K::maxpool,
                                K::conv, K::maxpool, K::upsample, K::conv, K::upsample, K::conv, K::upsample,
                                K::conv, K::upsample, K::conv, K::upsample, K::conv, K::downsample, K::conv,
                                K::output};
  std::vector<std::size_t> filters, targets;
  for (std::size_t i = 0; i < 23; ++i) {
    EXPECT_EQ(spec.layers[i].kind, kinds[i]) << "layer " << i + 1;
    if (kinds[i] == K::conv) {
      filters.push_back(spec.layers[i].filters);
      EXPECT_EQ(spec.layers[i].kernel, 3u);
      EXPECT_EQ(spec.layers[i].activation, i == 21 ? Activation::linear : Activation::relu);
    }
    if (kinds[i] == K::upsample || kinds[i] == K::downsample) targets.push_back(spec.layers[i].target_h);
  }
  EXPECT_EQ(filters, (std::vector<std::size_t>{8, 8, 16, 16, 8, 8, 16, 16, 8, 8, 1}));
  EXPECT_EQ(targets, (std::vector<std::size_t>{8, 16, 32, 64, 128, 101}));
  EXPECT_EQ(spec.layers[22].activation, Activation::sigmoid);
}

TEST(ModelSpecTable, FaithfulVariantRestoresFinalRelu) {
  const auto faithful = canonical_spec(true);
  EXPECT_EQ(faithful.layers[21].activation, Activation::relu);
  EXPECT_NE(spec_hash(faithful), spec_hash(canonical_spec()));
  EXPECT_EQ(spec_hash(canonical_spec()), spec_hash(canonical_spec()));
}

TEST(BuildModel, SameSeedIsBitIdentical) {
  const Model a = build_model(42), b = build_model(42), c = build_model(43);
  ASSERT_EQ(a.params().size(), 11u);
  for (std::size_t i = 0; i < 11; ++i) {
    EXPECT_TRUE(bit_equal(a.params()[i].weights, b.params()[i].weights));
    EXPECT_TRUE(bit_equal(a.params()[i].bias, b.params()[i].bias));
  }
  EXPECT_FALSE(bit_equal(a.params()[0].weights, c.params()[0].weights));
}

TEST(BuildModel, KernelShapes) {
  const Model m = build_model(1);
  EXPECT_EQ(m.params().front().weights.dims(), (Dims{8, 1, 3, 3}));
  EXPECT_EQ(m.params().back().weights.dims(), (Dims{1, 8, 3, 3}));
  EXPECT_EQ(m.conv_layers().front(), 0u);
  EXPECT_EQ(m.conv_layers().back(), 21u);
  EXPECT_EQ(m.param_names().front(), "conv1.weight");
  EXPECT_EQ(m.param_names().back(), "conv22.bias");
}

TEST(BuildModel, WeightsWithinFanBalancedBound) {
  // (in, out) channel pairs of the eleven convolutions.
  const std::vector<std::pair<double, double>> io = {{1, 8},  {8, 8},  {8, 16}, {16, 16}, {16, 8}, {8, 8},
                                                     {8, 16}, {16, 16}, {16, 8}, {8, 8},   {8, 1}};
  const Model m = build_model(7);
  for (std::size_t i = 0; i < io.size(); ++i) {
    const double bound = std::sqrt(6.0 / (9.0 * io[i].first + 9.0 * io[i].second));
    double largest = 0.0;
    for (double w : m.params()[i].weights.values()) largest = std::max(largest, std::abs(w));
    EXPECT_LE(largest, bound) << "kernel " << i;
    EXPECT_GT(largest, 0.5 * bound) << "kernel " << i;
    for (double b : m.params()[i].bias.values()) EXPECT_EQ(b, 0.0);
  }
}

TEST(Forward, ShapeLedger) {
  Model m = build_model(3);
  std::vector<Dims> trace;
  const Tensor out = m.forward(Tensor({1, 1, 128, 128}), Mode::infer, &trace);
  EXPECT_EQ(out.dims(), (Dims{1, 1, 101, 101}));
  ASSERT_EQ(trace.size(), 23u);
  const std::vector<std::size_t> sizes = {128, 64, 64, 32, 32, 16, 16, 8, 8, 4, 8, 8,
                                          16,  16, 32, 32, 64, 64, 128, 128, 101, 101, 101};
  const std::vector<std::size_t> channels = {8, 8, 8, 8, 16, 16, 16, 16, 8, 8, 8, 8, 8, 16, 16, 16, 16, 8, 8, 8, 8, 1, 1};
  for (std::size_t i = 0; i < 23; ++i) {
    EXPECT_EQ(trace[i], (Dims{1, channels[i], sizes[i], sizes[i]})) << "layer " << i + 1;
  }
}

TEST(Forward, RejectsWrongInputDims) {
  Model m = build_model(3);
  EXPECT_THROW(m.forward(Tensor({1, 1, 101, 101}), Mode::infer), ShapeError);
  EXPECT_THROW(m.forward(Tensor({1, 2, 128, 128}), Mode::train), ShapeError);
  EXPECT_THROW(m.infer(Tensor({128, 128})), ShapeError);
}

TEST(Forward, TrainAndInferAgree) {
  Model m = build_model(4);
  const Tensor x = random_uniform({2, 1, 128, 128}, 5, 0.0, 1.0);
  const Tensor a = m.forward(x, Mode::train);
  const Tensor b = m.forward(x, Mode::infer);
  EXPECT_TRUE(bit_equal(a, b));
  EXPECT_TRUE(bit_equal(a, m.infer(x)));
}

TEST(Backward, RequiresTrainForward) {
  Model m = build_model(5);
  EXPECT_THROW(m.backward(Tensor({1, 1, 101, 101})), StateError);
  m.forward(Tensor({1, 1, 128, 128}), Mode::infer);
  EXPECT_THROW(m.backward(Tensor({1, 1, 101, 101})), StateError);
  m.forward(Tensor({1, 1, 128, 128}), Mode::train);
  EXPECT_THROW(m.backward(Tensor({1, 1, 100, 100})), ShapeError);
}

TEST(Backward, ZeroUpstreamGivesZeroGradients) {
  Model m = build_model(6);
  m.forward(random_uniform({1, 1, 128, 128}, 6, 0.0, 1.0), Mode::train);
  const auto grads = m.backward(Tensor({1, 1, 101, 101}));
  ASSERT_EQ(grads.size(), 11u);
  for (const auto& g : grads) {
    EXPECT_EQ(g.weights, Tensor(g.weights.dims()));
    EXPECT_EQ(g.bias, Tensor(g.bias.dims()));
  }
}

TEST(Backward, ReducedCloneMatchesFiniteDifferences) {
  std::mt19937_64 rng(17);
  const auto report = check_model_gradients(rng, 3);
  EXPECT_EQ(report.cases, 3u);
  EXPECT_LT(report.max_rel_error, 1e-4);
}

TEST(Backward, FullNetworkGradientsAreFinite) {
  Model m = build_model(8);
  const Tensor x = random_uniform({2, 1, 128, 128}, 9, 0.0, 1.0);
  Tensor z({2, 1, 101, 101});
  for (std::size_t i = 0; i < z.size(); i += 3) z[i] = 1.0;
  const auto lg = loss_and_grad(m.forward(x, Mode::train), z);
  const auto grads = m.backward(lg.grad_logits);
  bool any_nonzero = false;
  for (std::size_t k = 0; k < grads.size(); ++k) {
    EXPECT_EQ(grads[k].weights.dims(), m.params()[k].weights.dims());
    EXPECT_TRUE(grads[k].weights.all_finite());
    EXPECT_TRUE(grads[k].bias.all_finite());
    for (double v : grads[k].weights.values()) any_nonzero = any_nonzero || v != 0.0;
  }
  EXPECT_TRUE(any_nonzero);
}

TEST(Backward, BitReproducible) {
  const Tensor x = random_uniform({1, 1, 128, 128}, 10, 0.0, 1.0);
  const Tensor g = random_uniform({1, 1, 101, 101}, 11);
  auto run = [&] {
    Model m = build_model(12);
    m.forward(x, Mode::train);
    return m.backward(g);
  };
  const auto a = run(), b = run();
  for (std::size_t k = 0; k < a.size(); ++k) {
    EXPECT_TRUE(bit_equal(a[k].weights, b[k].weights));
    EXPECT_TRUE(bit_equal(a[k].bias, b[k].bias));
  }
}
