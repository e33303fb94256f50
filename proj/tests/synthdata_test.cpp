#include <filesystem>
#include <fstream>

#include <gtest/gtest.h>

#include "seas/errors.hpp"
#include "seas/synthdata.hpp"

namespace seas {
namespace {

namespace fs = std::filesystem;

fs::path scratch_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("seas_synthdata_" + name);
  fs::remove_all(dir);
  return dir;
}

TEST(Synthdata, RenderingIsDeterministic) {
  const auto spec = ProductSpec::toy(3);
  for (int type = 0; type <= 3; ++type) {
    const auto a = render_sample(spec, type, 77), b = render_sample(spec, type, 77);
    EXPECT_TRUE((a.image.array() == b.image.array()).all());
    EXPECT_TRUE((a.mask.array() == b.mask.array()).all());
  }
  const auto c1 = make_corpus(spec, {4, 2}, 5), c2 = make_corpus(spec, {4, 2}, 5);
  ASSERT_EQ(c1.abnormal.size(), 6u);
  for (std::size_t i = 0; i < c1.abnormal.size(); ++i)
    EXPECT_TRUE((c1.abnormal[i].image.array() == c2.abnormal[i].image.array()).all());
  EXPECT_FALSE((make_corpus(spec, {4, 2}, 6).normal[0].image.array() == c1.normal[0].image.array()).all());
}

TEST(Synthdata, SamplesAreWellFormed) {
  const auto spec = ProductSpec::toy(2);
  const auto corpus = make_corpus(spec, {3, 5}, 9);
  for (const auto& s : corpus.normal) {
    EXPECT_EQ(s.image.shape(), (Shape{3, 64, 64}));
    EXPECT_EQ(s.mask.array().sum(), 0);
  }
  for (const auto& s : corpus.abnormal) {
    EXPECT_GT(s.mask.array().sum(), 0);
    EXPECT_TRUE((s.mask.array() == 0 || s.mask.array() == 1).all());
    EXPECT_GE(s.image.array().minCoeff(), 0);
    EXPECT_LE(s.image.array().maxCoeff(), 1);
    for (Eigen::Index i = 0; i < s.image.size(); ++i)
      ASSERT_FLOAT_EQ(std::round(s.image[i] * 255) / 255, s.image[i]);
  }
  EXPECT_EQ(corpus.abnormal_of_type(2).size(), 5u);
}

int first_masked(const AnomalySample& s) {
  for (int p = 0;; ++p)
    if (s.mask[p] != 0) return p;
}

TEST(Synthdata, MaskCoversExactlyThePaintedPixels) {
  const auto spec = ProductSpec::toy(2);
  for (std::uint64_t seed = 1; seed < 6; ++seed) {
    const auto defect = render_sample(spec, 2, seed);
    const auto base = render_sample(spec, 0, seed);
    // Outside the mask the defect sample matches the normal render of the same seed.
    const int hw = 64 * 64;
    for (int p = 0; p < hw; ++p) {
      if (defect.mask[p] != 0) {
        // Inside the mask every pixel carries the single defect colour.
        for (int c = 0; c < 3; ++c) ASSERT_EQ(defect.image[c * hw + p], defect.image[c * hw + first_masked(defect)]);
        continue;
      }
      for (int c = 0; c < 3; ++c) ASSERT_EQ(defect.image[c * hw + p], base.image[c * hw + p]) << "pixel " << p;
    }
  }
}

TEST(Synthdata, SingleNormalImageIsAllowed) {
  EXPECT_NO_THROW(make_corpus(ProductSpec::toy(1), {1, 1}, 3));
  EXPECT_THROW(make_corpus(ProductSpec::toy(1), {0, 1}, 3), ConfigError);
  EXPECT_THROW(render_sample(ProductSpec::toy(2), 3, 1), RangeError);
}

TEST(Synthdata, CorpusRoundTripsThroughDisk) {
  const auto dir = scratch_dir("roundtrip");
  const auto corpus = make_corpus(ProductSpec::toy(2), {3, 2}, 4);
  write_corpus(corpus, dir, false);
  const auto back = read_corpus(dir);
  ASSERT_EQ(back.normal.size(), 3u);
  ASSERT_EQ(back.abnormal.size(), 4u);
  EXPECT_EQ(back.seed, 4u);
  EXPECT_EQ(back.num_types(), 2);
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_TRUE((back.abnormal[i].image.array() == corpus.abnormal[i].image.array()).all());
    EXPECT_TRUE((back.abnormal[i].mask.array() == corpus.abnormal[i].mask.array()).all());
    EXPECT_EQ(back.abnormal[i].anomaly_type, corpus.abnormal[i].anomaly_type);
  }
  std::ifstream in(dir / "manifest.jsonl");
  std::string header;
  std::getline(in, header);
  const auto j = nlohmann::json::parse(header);
  EXPECT_EQ(j["type_histogram"]["0"], 3);
  EXPECT_EQ(j["type_histogram"]["1"], 2);
  EXPECT_EQ(j["type_histogram"]["2"], 2);
  EXPECT_THROW(write_corpus(corpus, dir, false), IoError);
  EXPECT_NO_THROW(write_corpus(corpus, dir, true));
  fs::remove_all(dir);
}

TEST(Synthdata, MissingMaskIsADataError) {
  const auto dir = scratch_dir("missing");
  write_corpus(make_corpus(ProductSpec::toy(1), {1, 1}, 2), dir, false);
  fs::remove(dir / "masks" / "00001.png");
  EXPECT_THROW(read_corpus(dir), DataError);
  fs::remove_all(dir);
}

TEST(Synthdata, CorruptManifestNamesTheLine) {
  const auto dir = scratch_dir("corrupt");
  write_corpus(make_corpus(ProductSpec::toy(1), {1, 1}, 2), dir, false);
  std::ofstream(dir / "manifest.jsonl", std::ios::app) << "{not json\n";
  try {
    read_corpus(dir);
    FAIL() << "expected a parse error";
  } catch (const ParseError& e) {
    EXPECT_NE(std::string(e.what()).find("manifest.jsonl:4"), std::string::npos) << e.what();
  }
  fs::remove_all(dir);
  EXPECT_THROW(read_corpus(dir), IoError);
}

TEST(Synthdata, NormalImagesCorrelateMoreThanDefects) {
  const auto report = consistency_check(make_corpus(ProductSpec::toy(2), {8, 4}, 1));
  EXPECT_TRUE(report.consistent());
  EXPECT_GT(report.normal_correlation, 0.9);
}

TEST(Synthdata, SpecJsonRoundTrip) {
  auto spec = ProductSpec::toy(3);
  spec.texture = "cellular";
  spec.frequency = 4.5;
  nlohmann::json j = spec;
  const auto back = j.get<ProductSpec>();
  EXPECT_EQ(back.texture, "cellular");
  EXPECT_EQ(back.frequency, 4.5);
  ASSERT_EQ(back.num_types(), 3);
  EXPECT_EQ(back.defect_types[2].family, DefectFamily::Hole);
  spec.texture = "plaid";
  EXPECT_THROW(spec.validate(), ConfigError);
}

}  // namespace
}  // namespace seas
