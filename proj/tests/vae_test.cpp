#include <cmath>
#include <limits>

#include <gtest/gtest.h>

#include "micro.hpp"
#include "seas/synthdata.hpp"
#include "seas/trainer.hpp"

namespace seas {
namespace {

using VarF = ad::Var<float>;

TEST(VAE, DecoderCapturesThreeDoublingFeatures) {
  Rng rng(1);
  VAE<float> vae(VAEConfig{}, rng);
  const auto [image, features] = vae.decode(VarF::constant(Tensor<float>::randn({2, 4, 16, 16}, rng)), true);
  EXPECT_EQ(image.shape(), (Shape{2, 3, 64, 64}));
  ASSERT_TRUE(features.has_value());
  ASSERT_EQ(features->features.size(), 3u);
  const std::vector<int> res{16, 32, 64}, channels{64, 32, 16};
  for (int i = 0; i < 3; ++i) {
    EXPECT_EQ(features->features[static_cast<std::size_t>(i)].dim(2), res[static_cast<std::size_t>(i)]);
    EXPECT_EQ(features->features[static_cast<std::size_t>(i)].dim(1), channels[static_cast<std::size_t>(i)]);
  }
  EXPECT_FALSE(vae.decode(VarF::constant(Tensor<float>({1, 4, 16, 16})), false).second.has_value());
}

TEST(VAE, ZeroLatentDecodesToFiniteImage) {
  Rng rng(2);
  VAE<float> vae(VAEConfig{}, rng);
  const auto image = vae.decode(VarF::constant(Tensor<float>({1, 4, 16, 16})), false).first.value();
  EXPECT_TRUE(image.all_finite());
  EXPECT_GE(image.array().minCoeff(), 0.0f);
  EXPECT_LE(image.array().maxCoeff(), 1.0f);
}

TEST(VAE, RejectsBadInputs) {
  Rng rng(3);
  VAE<float> vae(testing::micro_vae_config(), rng);
  Tensor<float> bad({1, 3, 16, 16});
  bad[5] = std::numeric_limits<float>::quiet_NaN();
  EXPECT_THROW(vae.encode(VarF::constant(bad)), NumericError);
  EXPECT_THROW(vae.encode(VarF::constant(Tensor<float>({1, 3, 8, 8}))), DimensionError);
  Tensor<float> latent({1, 4, 4, 4});
  latent[0] = std::numeric_limits<float>::infinity();
  EXPECT_THROW(vae.decode(VarF::constant(latent), false), NumericError);
}

TEST(VAE, EncoderFeaturesMirrorDecoderShapes) {
  Rng rng(4);
  VAE<float> vae(VAEConfig{}, rng);
  const auto enc = vae.encoder_features(VarF::constant(Tensor<float>::full({1, 3, 64, 64}, 0.5f)));
  const auto dec = vae.decode(VarF::constant(Tensor<float>({1, 4, 16, 16})), true).second;
  ASSERT_EQ(enc.features.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(enc.features[i].shape(), dec->features[i].shape());
}

TEST(VAE, ShortPretrainingReconstructsHeldOutImages) {
  const auto spec = ProductSpec::toy(2);
  const Corpus corpus = make_corpus(spec, {8, 2}, 11);
  const Corpus held_out = make_corpus(spec, {4, 2}, 12);
  Rng rng(5);
  VAE<float> vae(VAEConfig{}, rng);
  VAETrainConfig cfg;
  cfg.steps = 40;
  cfg.batch = 4;
  cfg.extra_samples = 8;
  pretrain_vae(vae, vae_training_pool(corpus, cfg.extra_samples, 1), cfg);
  std::vector<Tensor<float>> images;
  for (const auto& s : held_out.normal) images.push_back(s.image);
  for (const auto& s : held_out.abnormal) images.push_back(s.image);
  EXPECT_LT(reconstruction_mae(vae, images), 0.15);
  EXPECT_GT(vae.latent_scale(), 0.0f);
}

}  // namespace
}  // namespace seas
