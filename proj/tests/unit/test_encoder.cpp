// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include "genclip/encoder.hpp"
#include "genclip/error.hpp"
#include "genclip/rng.hpp"
#include "oracles.hpp"
#include "synthetic.hpp"

using namespace genclip;

namespace {

Image random_image(int size, std::uint64_t seed) {
  Rng r(seed);
  Image img(size, size, 3);
  for (auto& v : img.data) v = r.uniform();
  return img;
}

}  // namespace

TEST(EncoderSpec, DefaultsMatchBackboneGeometry) {
  const EncoderSpec s;
  EXPECT_EQ(s.grid_side(), 37);  // 518 / 14
  EXPECT_EQ(s.num_patches(), 1369);
  EXPECT_EQ(s.selected_layers, (std::vector<int>{6, 12, 18, 24}));
  EXPECT_EQ(s.num_vision_layers, 24);
}

TEST(EncoderSpec, RejectsBadSpecs) {
  EncoderSpec s;
  s.selected_layers = {6, 6};
  EXPECT_THROW(s.validate(), ConfigError);
  s = {};
  s.selected_layers = {0};
  EXPECT_THROW(s.validate(), ConfigError);
  s = {};
  s.image_size = 500;
  EXPECT_THROW(s.validate(), ConfigError);
  s = {};
  s.vision_dims = {8, 8};
  EXPECT_THROW(s.validate(), ConfigError);
  EXPECT_THROW(make_synthetic_encoder(s), ConfigError);
}

TEST(SyntheticEncoder, FullSizeShapes) {
  EncoderSpec s;
  s.vision_dims = {8};
  s.text_dim = 8;
  const auto enc = make_synthetic_encoder(s);
  const PatchFeatureStack f = enc->encode_image(random_image(518, 1));
  ASSERT_EQ(f.layers.size(), 4u);
  for (const auto& l : f.layers) EXPECT_EQ(l.patch_grid.rows(), 1369);
  EXPECT_EQ(f.grid_h, 37);
}

TEST(SyntheticEncoder, TinyShapesAndDeterminism) {
  const EncoderSpec s = fixtures::tiny_spec(5);
  const auto a = make_synthetic_encoder(s);
  const auto b = make_synthetic_encoder(s);
  const Image img = random_image(32, 2);
  const auto fa = a->encode_image(img);
  const auto fb = b->encode_image(img);
  ASSERT_EQ(fa.layers.size(), 4u);
  for (std::size_t k = 0; k < 4; ++k) {
    EXPECT_EQ(fa.layers[k].patch_grid.rows(), 64);
    EXPECT_EQ(fa.layers[k].patch_grid.cols(), 32);
    EXPECT_EQ(fa.layers[k].patch_grid, fb.layers[k].patch_grid);
    EXPECT_EQ(fa.layers[k].class_token, fb.layers[k].class_token);
  }
  EXPECT_EQ(fa.image_embedding.size(), 16);
  EXPECT_NEAR(fa.image_embedding.norm(), 1.0, 1e-12);
  EXPECT_EQ(a->digest(), b->digest());
  EXPECT_NE(a->digest(), make_synthetic_encoder(fixtures::tiny_spec(6))->digest());
}

TEST(SyntheticEncoder, ImageMatchesReplayOracle) {
  const auto enc = make_synthetic_encoder(fixtures::tiny_spec(1));
  const Image img = random_image(32, 3);
  const auto f = enc->encode_image(img);
  const auto o = oracle::replay_image(*enc, img);
  for (std::size_t k = 0; k < f.layers.size(); ++k)
    EXPECT_LT((f.layers[k].patch_grid - o.layers[k].patch_grid).cwiseAbs().maxCoeff(), 1e-9);
  EXPECT_LT((f.image_embedding - o.image_embedding).cwiseAbs().maxCoeff(), 1e-9);
}

TEST(SyntheticEncoder, OnePixelChangesAPatchFeature) {
  const auto enc = make_synthetic_encoder(fixtures::tiny_spec(1));
  Image img = random_image(32, 4);
  const auto before = enc->encode_image(img);
  img.at(17, 9, 1) += 0.1;
  const auto after = enc->encode_image(img);
  EXPECT_GT((before.layers[0].patch_grid - after.layers[0].patch_grid).cwiseAbs().maxCoeff(), 0.0);
}

TEST(SyntheticEncoder, RejectsWrongImageSize) {
  const auto enc = make_synthetic_encoder(fixtures::tiny_spec());
  EXPECT_THROW(enc->encode_image(random_image(30, 1)), ShapeError);
}

TEST(SyntheticEncoder, TextUnitNormAndReplayOracle) {
  const auto enc = make_synthetic_encoder(fixtures::tiny_spec(2));
  const TokenSequence seq = enc->tokenizer().encode("a photo of a damaged bottle object .");
  const RowVec e = enc->encode_text(seq);
  EXPECT_NEAR(e.norm(), 1.0, 1e-6);
  EXPECT_LT((e - oracle::replay_text(*enc, seq, nullptr)).cwiseAbs().maxCoeff(), 1e-9);

  const Mat deep = Rng(1).normal_matrix(enc->spec().num_text_layers, 16, 0.5);
  const RowVec d = enc->encode_text(seq, &deep);
  EXPECT_NEAR(d.norm(), 1.0, 1e-6);
  EXPECT_LT((d - oracle::replay_text(*enc, seq, &deep)).cwiseAbs().maxCoeff(), 1e-9);
  EXPECT_GT((d - e).norm(), 1e-6);
}

TEST(SyntheticEncoder, SoftSlotsOverrideTokens) {
  const auto enc = make_synthetic_encoder(fixtures::tiny_spec(2));
  TokenSequence seq = enc->tokenizer().encode("x photo");
  seq.soft_slots.push_back({1, SlotRole::state, Rng(3).normal_matrix(1, 16, 1.0).row(0)});
  const RowVec e = enc->encode_text(seq);
  EXPECT_LT((e - oracle::replay_text(*enc, seq, nullptr)).cwiseAbs().maxCoeff(), 1e-9);
  EXPECT_GT((e - enc->encode_text(enc->tokenizer().encode("x photo"))).norm(), 1e-6);
}

TEST(SyntheticEncoder, TextErrors) {
  const auto enc = make_synthetic_encoder(fixtures::tiny_spec());
  std::string long_text;
  for (int i = 0; i < 40; ++i) long_text += "word ";
  EXPECT_THROW(enc->tokenizer().encode(long_text), Error);
  TokenSequence seq = enc->tokenizer().encode("a photo");
  seq.token_ids.resize(40, 0);
  EXPECT_THROW(enc->encode_text(seq), Error);
  const Mat wrong = Mat::Zero(2, 16);
  EXPECT_THROW(enc->encode_text(enc->tokenizer().encode("a photo"), &wrong), ShapeError);
}

TEST(Tokenizer, SplitsPunctuationAndLowercases) {
  const Tokenizer t(1000, 16);
  EXPECT_EQ(t.split_words("A photo, of.  X"), (std::vector<std::string>{"a", "photo", ",", "of", ".", "x"}));
  const TokenSequence s = t.encode("a b");
  EXPECT_EQ(s.token_ids.size(), 16u);
  EXPECT_EQ(s.token_ids[0], Tokenizer::kSot);
  EXPECT_EQ(s.eot_position, 3);
  EXPECT_EQ(s.token_ids[3], Tokenizer::kEot);
  EXPECT_EQ(s.token_ids[4], Tokenizer::kPad);
  EXPECT_GE(t.id("zzz"), 3);
}

TEST(Registry, SyntheticBuiltInAndUnknownListsNames) {
  const auto names = registered_encoder_adapters();
  EXPECT_NE(std::find(names.begin(), names.end(), "synthetic"), names.end());
  EXPECT_NE(make_encoder("synthetic", fixtures::tiny_spec()), nullptr);
  try {
    make_encoder("vit-l-14-336", fixtures::tiny_spec());
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("synthetic"), std::string::npos);
  }
  register_encoder_adapter("custom-test", [](const EncoderSpec& s, const std::filesystem::path&) {
    return std::unique_ptr<FrozenEncoder>(make_synthetic_encoder(s));
  });
  EXPECT_NE(make_encoder("custom-test", fixtures::tiny_spec()), nullptr);
}
