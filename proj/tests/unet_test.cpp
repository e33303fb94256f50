#include <cmath>

#include <gtest/gtest.h>

#include "micro.hpp"
#include "seas/unet.hpp"

namespace seas {
namespace {

using testing::micro_unet_config;
using VarD = ad::Var<double>;

/// Swaps the two head blocks of a (in, 2d) projection.
void swap_head_columns(nn::Linear<double>& layer) {
  auto& w = layer.weight.mutable_value();
  const int in = w.dim(0), out = w.dim(1), d = out / 2;
  for (int i = 0; i < in; ++i)
    for (int j = 0; j < d; ++j) std::swap(w[i * out + j], w[i * out + d + j]);
}

TEST(UNet, OutputShapesAndRecordedLayers) {
  Rng rng(1);
  const auto cfg = micro_unet_config();
  UNet<double> unet(cfg, rng);
  const auto x = VarD::constant(Tensor<double>::randn({2, 4, 4, 4}, rng));
  const auto ctx = VarD::constant(Tensor<double>::randn({2, 16, 8}, rng));
  const auto out = unet.forward(x, {3, 70}, ctx);
  EXPECT_EQ(out.predicted_noise.shape(), x.shape());
  for (int l = 1; l <= cfg.levels(); ++l) {
    ASSERT_TRUE(out.attention.maps.count(l));
    const int r = cfg.attention_resolution(l);
    EXPECT_EQ(out.attention.resolutions.at(l), r);
    EXPECT_EQ(out.attention.maps.at(l).shape(), (Shape{2, r * r, 16}));
  }
  for (int s = 1; s <= cfg.levels(); ++s) {
    const auto& f = out.decoder_features.at(s);
    EXPECT_EQ(f.dim(2), cfg.decoder_resolution(s));
    EXPECT_EQ(f.dim(1), cfg.decoder_channels(s));
    if (s > 1) {
      EXPECT_EQ(f.dim(2), 2 * out.decoder_features.at(s - 1).dim(2));
    }
  }
}

TEST(UNet, ShapeErrors) {
  Rng rng(2);
  UNet<double> unet(micro_unet_config(), rng);
  const auto ctx = VarD::constant(Tensor<double>({1, 16, 8}));
  EXPECT_THROW(unet.forward(VarD::constant(Tensor<double>({1, 4, 8, 8})), {1}, ctx), DimensionError);
  EXPECT_THROW(unet.forward(VarD::constant(Tensor<double>({1, 4, 4, 4})), {1}, VarD::constant(Tensor<double>({1, 16, 7}))),
               DimensionError);
  EXPECT_THROW(unet.forward(VarD::constant(Tensor<double>({1, 4, 4, 4})), {1, 2}, ctx), DimensionError);
}

TEST(Attention, RowsSumToOneOverTokens) {
  for (int trial = 0; trial < 5; ++trial) {
    Rng rng(100 + static_cast<unsigned>(trial));
    UNet<double> unet(micro_unet_config(), rng);
    const auto out = unet.forward(VarD::constant(Tensor<double>::randn({2, 4, 4, 4}, rng)), {5, 50},
                                  VarD::constant(Tensor<double>::randn({2, 16, 8}, rng, 3.0)));
    for (const auto& [layer, map] : out.attention.maps) {
      const auto& v = map.value();
      const int rows = v.dim(0) * v.dim(1), z = v.dim(2);
      for (int r = 0; r < rows; ++r) EXPECT_NEAR(v.array().segment(r * z, z).sum(), 1.0, 1e-5);
      EXPECT_GE(v.array().minCoeff(), 0.0);
    }
  }
}

TEST(Attention, ZeroQueryKeyGivesUniformMaps) {
  Rng rng(3);
  UNet<double> unet(micro_unet_config(), rng);
  for (int l = 1; l <= 3; ++l) {
    unet.encoder_attention(l).query().weight.mutable_value().array() = 0;
    unet.encoder_attention(l).key().weight.mutable_value().array() = 0;
  }
  const auto out = unet.forward(VarD::constant(Tensor<double>::randn({1, 4, 4, 4}, rng)), {10},
                                VarD::constant(Tensor<double>::randn({1, 16, 8}, rng)));
  for (const auto& [layer, map] : out.attention.maps)
    EXPECT_LT((map.value().array() - 1.0 / 16).abs().maxCoeff(), 1e-15) << "layer " << layer;
}

TEST(Attention, HandSoftmax) {
  Tensor<double> logits({1, 1, 2});
  logits[0] = std::log(2.0);
  const auto p = ad::softmax_lastdim(VarD::constant(logits)).value();
  EXPECT_NEAR(p[0], 2.0 / 3, 1e-15);
  EXPECT_NEAR(p[1], 1.0 / 3, 1e-15);
}

TEST(Attention, ExposedMapIsMeanOfPerHeadMaps) {
  Rng rng(4);
  CrossAttentionBlock<double> block(8, 8, 2, 4, rng);
  const auto x = VarD::constant(Tensor<double>::randn({2, 8, 4, 4}, rng));
  const auto ctx = VarD::constant(Tensor<double>::randn({2, 16, 8}, rng, 2.0));
  const auto exposed = block(x, ctx).second.value();
  const auto heads = block.head_probabilities(x, ctx).value();
  const int cells = 16, z = 16;
  for (int b = 0; b < 2; ++b)
    for (int i = 0; i < cells * z; ++i) {
      const double h0 = heads[(2 * b) * cells * z + i], h1 = heads[(2 * b + 1) * cells * z + i];
      EXPECT_NEAR(exposed[b * cells * z + i], 0.5 * (h0 + h1), 1e-15);
    }
}

TEST(Attention, HeadPermutationLeavesAverageUnchanged) {
  Rng rng(5);
  CrossAttentionBlock<double> block(8, 8, 2, 4, rng);
  const auto x = VarD::constant(Tensor<double>::randn({1, 8, 4, 4}, rng));
  const auto ctx = VarD::constant(Tensor<double>::randn({1, 16, 8}, rng, 2.0));
  const auto before = block(x, ctx).second.value();
  const auto heads_before = block.head_probabilities(x, ctx).value();
  swap_head_columns(block.query());
  swap_head_columns(block.key());
  const auto after = block(x, ctx).second.value();
  const auto heads_after = block.head_probabilities(x, ctx).value();
  EXPECT_TRUE((before.array() == after.array()).all());
  EXPECT_FALSE((heads_before.array() == heads_after.array()).all());
}

}  // namespace
}  // namespace seas
