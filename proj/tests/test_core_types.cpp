#include <gtest/gtest.h>

#include <cstring>
#include <sstream>

#include "fixtures.hpp"
#include "mmda/manifest.hpp"

using namespace mmda;

TEST(ModalityKind, FixedOrderAndChannels) {
  ASSERT_EQ(kAllModalities.size(), 3u);
  EXPECT_LT(index_of(ModalityKind::kRgb), index_of(ModalityKind::kDepth));
  EXPECT_LT(index_of(ModalityKind::kDepth), index_of(ModalityKind::kIr));
  EXPECT_EQ(channels_of(ModalityKind::kRgb), 3);
  EXPECT_EQ(channels_of(ModalityKind::kDepth), 1);
  EXPECT_EQ(channels_of(ModalityKind::kIr), 1);
  EXPECT_EQ(parse_modality("D"), ModalityKind::kDepth);
  EXPECT_EQ(parse_modality("ir"), ModalityKind::kIr);
  EXPECT_THROW(parse_modality("thermal"), Error);
}

TEST(MakeBatch, InternsDomainsAndSortsById) {
  Rng rng(1);
  std::vector<BatchSample> samples;
  const std::vector<std::string> domains = {"A", "B", "C"};
  for (int i = 23; i >= 0; --i) {
    samples.push_back(fixture::random_sample(rng, "s" + std::to_string(100 + i), domains[i % 3], i % 2, 8));
  }
  const Batch b = make_batch(samples);
  ASSERT_EQ(b.size(), 24u);
  EXPECT_EQ(b.domain_names, domains);
  for (std::size_t i = 1; i < b.size(); ++i) EXPECT_LT(b.samples[i - 1].sample_id, b.samples[i].sample_id);
  for (std::size_t i = 0; i < b.size(); ++i) {
    EXPECT_EQ(b.domain_names[static_cast<std::size_t>(b.domain_index[i])], b.samples[i].domain);
  }
}

TEST(MakeBatch, RejectsSampleWithoutModalities) {
  Rng rng(2);
  auto s = fixture::random_sample(rng, "x", "A", kLive, 8);
  s.present = {false, false, false};
  EXPECT_THROW(make_batch({s}), ValidationError);
}

TEST(MakeBatch, RejectsMixedSizes) {
  Rng rng(3);
  auto a = fixture::random_sample(rng, "a", "A", kLive, 32);
  auto b = fixture::random_sample(rng, "b", "A", kLive, 16);
  EXPECT_THROW(make_batch({a, b}), ShapeError);
}

TEST(MakeBatch, RejectsEmptyAndOutOfRangePixels) {
  EXPECT_THROW(make_batch({}), ValidationError);
  Rng rng(4);
  auto s = fixture::random_sample(rng, "a", "A", kLive, 8);
  s.image(ModalityKind::kIr).pixels[3] = 1.5f;
  EXPECT_THROW(make_batch({s}), ValidationError);
}

TEST(MakeBatch, RejectsWrongChannelCount) {
  Rng rng(5);
  auto s = fixture::random_sample(rng, "a", "A", kLive, 8);
  s.image(ModalityKind::kDepth) = Image(8, 8, 3);
  EXPECT_THROW(make_batch({s}), ShapeError);
}

TEST(TensorIo, HeaderLayout) {
  RawTensor t;
  t.dims = {2, 3, 1};
  t.values.assign(6, 0.25);
  std::stringstream buf;
  write_tensor(buf, t);
  const std::string bytes = buf.str();
  ASSERT_EQ(bytes.size(), 8 + 4 * 3 + 6 * sizeof(float));
  EXPECT_EQ(bytes.substr(0, 4), "MMDA");
  EXPECT_EQ(static_cast<unsigned char>(bytes[4]), 3u);  // rank
  EXPECT_EQ(static_cast<unsigned char>(bytes[5]), 0u);  // float32
  std::uint32_t d0 = 0;
  std::memcpy(&d0, bytes.data() + 8, 4);
  EXPECT_EQ(d0, 2u);
}

TEST(TensorIo, RejectsBadMagicAndTruncation) {
  std::stringstream bad("XXXX\x01\x00\x00\x00");
  EXPECT_THROW(read_tensor(bad), IoError);
  RawTensor t;
  t.dims = {4};
  t.values = {1, 2, 3, 4};
  std::stringstream buf;
  write_tensor(buf, t);
  std::stringstream cut(buf.str().substr(0, buf.str().size() - 3));
  EXPECT_THROW(read_tensor(cut), IoError);
}

TEST(TensorIo, Float64RoundTripIsExact) {
  Rng rng(6);
  RawTensor t;
  t.dtype = DType::kFloat64;
  t.dims = {5, 7};
  for (int i = 0; i < 35; ++i) t.values.push_back(rng.normal());
  std::stringstream buf;
  write_tensor(buf, t);
  EXPECT_EQ(read_tensor(buf).values, t.values);
}

// Property: write -> read reproduces random samples bit for bit, including
// samples with absent modalities.
TEST(Manifest, RoundTripIsBitExact) {
  fixture::TempDir dir("manifest");
  Rng rng(7);
  for (int trial = 0; trial < 5; ++trial) {
    std::vector<BatchSample> samples;
    for (int i = 0; i < 6; ++i) {
      auto s = fixture::random_sample(rng, "t" + std::to_string(trial) + "_" + std::to_string(i),
                                      i < 3 ? "A" : "B", i % 2, 8);
      if (i == 4) {
        s.present[index_of(ModalityKind::kDepth)] = false;
        s.image(ModalityKind::kDepth) = Image();
      }
      samples.push_back(s);
    }
    const auto sub = dir.path() / std::to_string(trial);
    write_manifest(sub, samples, {{"config_hash", "abc"}});
    const auto back = read_manifest(sub);
    ASSERT_EQ(back.size(), samples.size());
    for (std::size_t i = 0; i < samples.size(); ++i) EXPECT_EQ(back[i], samples[i]) << "sample " << i;
    EXPECT_EQ(read_manifest_json(sub).at("config_hash"), "abc");
  }
}

TEST(Manifest, MissingDirectoryIsIoError) {
  EXPECT_THROW(read_manifest("/nonexistent/mmda/manifest/dir"), IoError);
}

TEST(EmbeddingBatch, PooledConsistencyCheck) {
  Rng rng(8);
  auto e = fixture::random_embeddings(rng, {"A", "B"}, 5, 4);
  EXPECT_LT(pooled_inconsistency(e), 1e-12);
  EXPECT_NO_THROW(validate_embedding_batch(e));
  e.pooled(0, 0) += 1e-3;
  EXPECT_THROW(validate_embedding_batch(e), NumericError);
}

TEST(TextSpace, RequiresBothClasses) {
  TextSpace t;
  t.embeddings = Matrix::Ones(2, 3);
  t.class_of = {kLive, kLive};
  EXPECT_THROW(validate_text_space(t), ValidationError);
  t.class_of = {kLive, kSpoof};
  EXPECT_NO_THROW(validate_text_space(t));
}

TEST(Rng, DerivedStreamsAreDeterministicAndDistinct) {
  EXPECT_EQ(derive_seed(1, 2, 3), derive_seed(1, 2, 3));
  EXPECT_NE(derive_seed(1, 2, 3), derive_seed(1, 3, 2));
  Rng a(9), b(9);
  for (int i = 0; i < 10; ++i) EXPECT_EQ(a.next_u64(), b.next_u64());
  Rng c(10);
  for (int i = 0; i < 1000; ++i) EXPECT_LT(c.index(7), 7u);
}
