// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include "genclip/error.hpp"
#include "genclip/prompting.hpp"
#include "genclip/rng.hpp"
#include "oracles.hpp"
#include "synthetic.hpp"

using namespace genclip;

namespace {

LayerFeatures random_layer(int rows, int cols, std::uint64_t seed) {
  Rng r(seed);
  LayerFeatures l;
  l.layer = 1;
  l.class_token = r.normal_matrix(1, cols, 1.0).row(0);
  l.patch_grid = r.normal_matrix(rows, cols, 1.0);
  return l;
}

}  // namespace

TEST(PromptBank, FieldInventoryAndCount) {
  const EncoderSpec s = fixtures::tiny_spec();
  const PromptBank b = PromptBank::initialize(s, 1);
  // Field-enumeration oracle: N_P, A_P, 2 Q_P rows, deep tokens, then
  // (C_i x C_T + C_T) twice per selected layer.
  std::size_t expected = 16 + 16 + 2 * 16 + static_cast<std::size_t>(s.num_text_layers) * 16;
  for (int d : s.selected_dims()) expected += 2 * (static_cast<std::size_t>(d) * 16 + 16);
  EXPECT_EQ(b.parameter_count(), expected);
  EXPECT_EQ(b.parameters().size(), 4u + 4u * s.selected_layers.size());
  EXPECT_EQ(b.parameters()[4].first, "mvp_projector.2.weight");
  EXPECT_NO_THROW(b.validate(s));
  EXPECT_EQ(b, PromptBank::initialize(s, 1));
  EXPECT_FALSE(b == PromptBank::initialize(s, 2));
}

TEST(PromptBank, ValidateCatchesShapeAndNaN) {
  const EncoderSpec s = fixtures::tiny_spec();
  PromptBank b = PromptBank::initialize(s, 1);
  b.query(0, 0) = std::nan("");
  EXPECT_THROW(b.validate(s), Error);
  b = PromptBank::initialize(s, 1);
  b.query = Mat::Zero(3, 16);
  EXPECT_THROW(b.validate(s), Error);
}

TEST(Mvp, ZeroGridGivesZero) {
  LayerFeatures l = random_layer(4, 8, 1);
  l.patch_grid.setZero();
  l.class_token.setZero();
  const AffineMap m{Rng(2).normal_matrix(8, 5, 1.0), Mat::Zero(1, 5)};
  EXPECT_EQ(make_mvp(l, m).norm(), 0.0);
}

TEST(Mvp, IdentityOnConstantRows) {
  LayerFeatures l;
  RowVec v(3);
  v << 1.0, -2.0, 0.5;
  l.class_token = v;
  l.patch_grid = v.replicate(5, 1);
  const AffineMap id{Mat::Identity(3, 3), Mat::Zero(1, 3)};
  EXPECT_LT((make_mvp(l, id) - v).norm(), 1e-12);
}

TEST(Mvp, MatchesDenseOracleWithClassToken) {
  const LayerFeatures l = random_layer(9, 6, 3);
  const AffineMap m{Rng(4).normal_matrix(6, 4, 1.0), Rng(5).normal_matrix(1, 4, 1.0)};
  RowVec mean = l.class_token;
  for (Eigen::Index r = 0; r < 9; ++r) mean += l.patch_grid.row(r);
  mean /= 10.0;
  RowVec expect(4);
  for (int j = 0; j < 4; ++j) {
    double acc = m.bias(0, j);
    for (int i = 0; i < 6; ++i) acc += mean(i) * m.weight(i, j);
    expect(j) = acc;
  }
  EXPECT_LT((make_mvp(l, m) - expect).cwiseAbs().maxCoeff(), 1e-12);
  ad::Tape t;
  const ad::Var v = make_mvp(t, l, t.constant(m.weight), t.constant(m.bias));
  EXPECT_LT((v.value().row(0) - expect).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(FuseQuery, BroadcastAndAdditivity) {
  const Mat q = Rng(1).normal_matrix(2, 4, 1.0);
  const RowVec a = Rng(2).normal_matrix(1, 4, 1.0).row(0);
  const RowVec b = Rng(3).normal_matrix(1, 4, 1.0).row(0);
  EXPECT_EQ(fuse_query(q, RowVec::Zero(4)), q);
  const Mat z = fuse_query(Mat::Zero(2, 4), a);
  EXPECT_EQ(RowVec(z.row(0)), a);
  EXPECT_EQ(RowVec(z.row(1)), a);
  EXPECT_LT((fuse_query(q, a + b) - fuse_query(fuse_query(q, a), b)).norm(), 1e-12);
}

TEST(AssemblePrompt, VisionEnhancedLayout) {
  const auto enc = make_synthetic_encoder(fixtures::tiny_spec());
  const PromptBank bank = PromptBank::initialize(enc->spec(), 1);
  const Mat vq = fuse_query(bank.query, RowVec::Ones(16));
  const PromptPair p = assemble_prompt(PromptTemplate{}, "bottle", bank, enc->tokenizer(), &vq);
  const Tokenizer& t = enc->tokenizer();
  // [SOT][state] a photo of a good bottle object [Q0][Q1] . [EOT]
  std::vector<int> words = t.ids("a photo of a good bottle object");
  ASSERT_EQ(p.normal.token_ids[0], Tokenizer::kSot);
  for (std::size_t i = 0; i < words.size(); ++i) EXPECT_EQ(p.normal.token_ids[2 + i], words[i]);
  EXPECT_EQ(p.normal.token_ids[2 + words.size() + 2], t.id("."));
  EXPECT_EQ(p.normal.eot_position, static_cast<int>(2 + words.size() + 3));
  ASSERT_EQ(p.normal.soft_slots.size(), 3u);
  EXPECT_EQ(p.normal.soft_slots[0].position, 1);
  EXPECT_EQ(p.normal.soft_slots[0].value, RowVec(bank.normal_state.row(0)));
  EXPECT_EQ(p.abnormal.soft_slots[0].value, RowVec(bank.abnormal_state.row(0)));
  EXPECT_EQ(p.normal.soft_slots[1].value, RowVec(vq.row(0)));
  EXPECT_EQ(p.normal.soft_slots[2].value, RowVec(vq.row(1)));
  // The two sequences differ only in the state word and the state slot.
  int diffs = 0;
  for (std::size_t i = 0; i < p.normal.token_ids.size(); ++i) diffs += p.normal.token_ids[i] != p.abnormal.token_ids[i];
  EXPECT_EQ(diffs, 1);
  EXPECT_EQ(p.abnormal.token_ids[6], t.id("damaged"));
}

TEST(AssemblePrompt, QueryOnlyForcesObject) {
  const auto enc = make_synthetic_encoder(fixtures::tiny_spec());
  const PromptBank bank = PromptBank::initialize(enc->spec(), 1);
  PromptTemplate tpl;
  tpl.use_vision_tokens = false;
  const PromptPair a = assemble_prompt(tpl, "bottle", bank, enc->tokenizer());
  const PromptPair b = assemble_prompt(tpl, "pipe_fryum", bank, enc->tokenizer());
  EXPECT_EQ(a.normal, b.normal);
  EXPECT_EQ(a.normal.token_ids[7], enc->tokenizer().id("object"));
  EXPECT_EQ(a.normal.soft_slots[1].value, RowVec(bank.query.row(0)));
}

TEST(AssemblePrompt, UnderscoreBecomesSpaceAndLengthChecked) {
  const auto enc = make_synthetic_encoder(fixtures::tiny_spec());
  const PromptBank bank = PromptBank::initialize(enc->spec(), 1);
  const PromptPair a = assemble_prompt(PromptTemplate{}, "pipe_fryum", bank, enc->tokenizer(), &bank.query);
  const PromptPair b = assemble_prompt(PromptTemplate{}, "pipe fryum", bank, enc->tokenizer(), &bank.query);
  EXPECT_EQ(a.normal, b.normal);
  std::string huge;
  for (int i = 0; i < 30; ++i) huge += "w ";
  EXPECT_THROW(assemble_prompt(PromptTemplate{}, huge, bank, enc->tokenizer(), &bank.query), Error);
  EXPECT_THROW(assemble_prompt(PromptTemplate{}, "", bank, enc->tokenizer(), &bank.query), Error);
}

TEST(EmbedPromptPair, UnitNormReplayAndTapeAgree) {
  const auto enc = make_synthetic_encoder(fixtures::tiny_spec(3));
  const PromptBank bank = PromptBank::initialize(enc->spec(), 4);
  const PromptPair p = assemble_prompt(PromptTemplate{}, "cable", bank, enc->tokenizer(), &bank.query);
  const TextEmbeddingPair e = embed_prompt_pair(p, bank, *enc);
  EXPECT_NEAR(e.normal.norm(), 1.0, 1e-6);
  EXPECT_NEAR(e.abnormal.norm(), 1.0, 1e-6);
  EXPECT_LT((e.normal - oracle::replay_text(*enc, p.normal, &bank.deep_text)).cwiseAbs().maxCoeff(), 1e-9);
  EXPECT_LT((e.abnormal - oracle::replay_text(*enc, p.abnormal, &bank.deep_text)).cwiseAbs().maxCoeff(), 1e-9);

  ad::Tape t;
  const BankVars v = bind_bank(t, bank, true);
  const ad::Var both = embed_prompt_pair(t, p, v, v.query, *enc);
  EXPECT_LT((RowVec(both.value().row(0)) - e.normal).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_LT((RowVec(both.value().row(1)) - e.abnormal).cwiseAbs().maxCoeff(), 1e-12);

  const PromptPair same{p.normal, p.normal};
  const TextEmbeddingPair s = embed_prompt_pair(same, bank, *enc);
  EXPECT_EQ(s.normal, s.abnormal);
}
