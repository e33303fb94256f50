#include <filesystem>

#include <gtest/gtest.h>

#include "micro.hpp"
#include "seas/checkpoint.hpp"

namespace seas {
namespace {

namespace fs = std::filesystem;

Archive sample_archive() {
  Archive a;
  a.kind = "demo";
  a.config = {{"width", 3}};
  a.meta["note"] = "x";
  Tensor<float> t({2, 3});
  for (int i = 0; i < 6; ++i) t[i] = 0.5f * static_cast<float>(i);
  a.tensors["w"] = t;
  return a;
}

TEST(Checkpoint, ArchiveRoundTrip) {
  const auto a = sample_archive();
  const auto b = deserialize(serialize(a));
  EXPECT_EQ(b.kind, "demo");
  EXPECT_EQ(b.config, a.config);
  EXPECT_EQ(b.meta, a.meta);
  ASSERT_EQ(b.tensors.count("w"), 1u);
  EXPECT_EQ(b.tensors.at("w").shape(), (Shape{2, 3}));
  EXPECT_TRUE((b.tensors.at("w").array() == a.tensors.at("w").array()).all());
  EXPECT_EQ(fingerprint(a), fingerprint(b));
  EXPECT_EQ(fingerprint(a).size(), 64u);
}

TEST(Checkpoint, RejectsDamagedArchives) {
  const std::string bytes = serialize(sample_archive());
  EXPECT_THROW(deserialize(bytes.substr(0, bytes.size() - 3)), ParseError);
  EXPECT_THROW(deserialize(bytes.substr(0, 6)), ParseError);
  EXPECT_THROW(deserialize("garbage that is not an archive"), ParseError);
  std::string other = bytes;
  const auto pos = other.find(kCheckpointVersion);
  ASSERT_NE(pos, std::string::npos);
  other[pos + std::string(kCheckpointVersion).size() - 1] = '9';
  EXPECT_THROW(deserialize(other), CompatibilityError);
}

TEST(Checkpoint, KindMismatchOnLoad) {
  const fs::path path = fs::temp_directory_path() / "seas_ckpt_kind.ckpt";
  save_archive(path, sample_archive());
  EXPECT_NO_THROW(load_archive(path, "demo"));
  EXPECT_THROW(load_archive(path, "rmp"), CompatibilityError);
  fs::remove(path);
  EXPECT_THROW(load_archive(path), IoError);
}

TEST(Checkpoint, ComponentsRoundTrip) {
  Rng rng(1);
  VAE<float> vae(testing::micro_vae_config(), rng);
  vae.set_latent_scale(0.37f);
  const auto vae_back = vae_from_archive(deserialize(serialize(vae_archive(vae))));
  EXPECT_EQ(vae_back.latent_scale(), 0.37f);
  EXPECT_EQ(fingerprint(vae_archive(vae_back)), fingerprint(vae_archive(vae)));

  Generator gen(testing::micro_generator_config(), 2);
  const auto gen_back = generator_from_archives(deserialize(serialize(unet_archive(gen))),
                                                deserialize(serialize(token_archive(gen))));
  EXPECT_EQ(generator_fingerprint(gen_back), generator_fingerprint(gen));
  EXPECT_EQ(gen_back.bank.build_prompt(2).anomaly_token_ids, gen.bank.build_prompt(2).anomaly_token_ids);

  RMPConfig rc;
  rc.bind(testing::micro_unet_config(), testing::micro_vae_config());
  rc.compressed_channels = 12;
  rc.transformer_layers = 1;
  RMP<float> rmp(rc, rng);
  const auto archive = rmp_archive(rmp, generator_fingerprint(gen));
  EXPECT_EQ(archive.meta.at("generator_fingerprint"), generator_fingerprint(gen));
  const auto rmp_back = rmp_from_archive(deserialize(serialize(archive)));
  EXPECT_EQ(fingerprint(rmp_archive(rmp_back, generator_fingerprint(gen))), fingerprint(archive));
  EXPECT_THROW(rmp_from_archive(vae_archive(vae)), CompatibilityError);
  EXPECT_THROW(vae_from_archive(archive), CompatibilityError);
}

TEST(Checkpoint, FingerprintIsStableAndSensitive) {
  Generator a(testing::micro_generator_config(), 5), b(testing::micro_generator_config(), 5);
  EXPECT_EQ(generator_fingerprint(a), generator_fingerprint(b));
  b.unet.parameters().front().var.mutable_value()[0] += 1e-3f;
  EXPECT_NE(generator_fingerprint(a), generator_fingerprint(b));
}

TEST(Checkpoint, LoadParametersChecksShapes) {
  Rng rng(3);
  VAE<float> vae(testing::micro_vae_config(), rng);
  Archive a = vae_archive(vae);
  a.tensors.begin()->second = Tensor<float>({1});
  EXPECT_THROW(vae_from_archive(a), CompatibilityError);
  a.tensors.erase(a.tensors.begin());
  EXPECT_THROW(vae_from_archive(a), CompatibilityError);
}

}  // namespace
}  // namespace seas
