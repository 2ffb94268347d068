// Copyright 2026 The toktide Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <gtest/gtest.h>

#include <cmath>
#include <map>

#include "toktide/caption/beam.hpp"
#include "toktide/caption/model.hpp"
#include "toktide/caption/text.hpp"
#include "toktide/caption/train.hpp"
#include "toktide/nn/gradcheck.hpp"
#include "oracles.hpp"

using namespace toktide;
using namespace toktide::caption;

namespace {

CaptionerConfig tiny(CaptionerKind kind, long input_dim) {
  CaptionerConfig c;
  c.kind = kind;
  c.input_dim = input_dim;
  c.width = 8;
  c.heads = 2;
  c.layers = 1;
  c.ff_dim = 16;
  c.max_tokens = 12;
  c.max_frames = 60;
  c.k_prefix = 3;
  c.map_heads = 2;
  return c;
}





Mat<double> frames(long t, long d, std::uint64_t seed) {
  Rng rng(seed);
  return gaussian<double>(t, d, 1.0, rng);
}

}  // namespace

TEST(Text, NormalizationRules) {
  EXPECT_EQ(text::normalize("A Dog, barks!"), "a dog barks");
  EXPECT_EQ(text::normalize("  (Loud)   engine-hum; \"rain\"? "), "loud enginehum rain");
  EXPECT_EQ(text::normalize("it's here."), "its here");
  EXPECT_EQ(text::normalize("...!"), "");
}

TEST(Text, VocabLayoutAndRoundTrip) {
  const auto v = text::Vocab::build({"Dog barks.", "dog barks loudly"});
  EXPECT_EQ(v.size(), 4 + 3);
  EXPECT_EQ(v.word(text::Vocab::kBos), "<bos>");
  EXPECT_EQ(v.content_words(), (std::vector<std::string>{"barks", "dog", "loudly"}));
  EXPECT_EQ(v.encode_wrapped("Dog barks"), (std::vector<int>{1, 5, 4, 2}));
  EXPECT_EQ(v.id("cat"), text::Vocab::kUnk);
  EXPECT_EQ(v.decode({1, 5, 4, 2, 6}), "dog barks");
  EXPECT_THROW(v.encode("?!"), DataError);
  EXPECT_THROW(v.word(99), DataError);
  EXPECT_THROW(text::Vocab::from_words({"x", "x"}), DataError);
}

TEST(Captioner, ConvLengthProperty) {
  for (long t = 3; t <= 200; ++t) EXPECT_EQ(downsampled_length(t), (t - 3) / 3 + 1) << t;
  EXPECT_THROW(downsampled_length(2), DataError);
  EncDecCaptioner<double> m(tiny(CaptionerKind::kEncDec, 4), 7);
  for (long t : {3L, 10L, 31L}) {
    Tape<double> tape(false);
    EXPECT_EQ(tape.value(m.memory(tape, frames(t, 4, 1))).rows(), downsampled_length(t));
  }
}

TEST(Captioner, ZeroOutputLayerGivesLogVocabLoss) {
  EncDecCaptioner<double> m(tiny(CaptionerKind::kEncDec, 4), 9);
  m.output_layer().w.value.setZero();
  m.output_layer().b.value.setZero();
  Tape<double> t(false);
  EXPECT_NEAR(t.scalar(m.loss(t, frames(12, 4, 2), {1, 5, 6, 7, 2})), std::log(9.0), 1e-12);
}

TEST(Captioner, EncDecGradientMatchesFiniteDifferences) {
  EncDecCaptioner<double> m(tiny(CaptionerKind::kEncDec, 4), 7);
  const Mat<double> x = frames(9, 4, 3);
  const std::vector<int> ids{1, 4, 5, 6, 2};
  const auto r = nn::grad_check<double>([&](Tape<double>& t) { return m.loss(t, x, ids); }, m.params(), 1e-5, 6);
  EXPECT_LE(r.max_rel_err, 1e-4) << r.worst_param;
  EXPECT_GT(r.checked, 0);
}

TEST(Captioner, PrefixGradientMatchesFiniteDifferences) {
  const auto cfg = tiny(CaptionerKind::kPrefix, 4);
  Rng rng(4);
  PrefixCaptioner<double> m(cfg, FrozenLm<double>(cfg, 7, rng));
  const Mat<double> x = frames(9, 4, 5);
  const std::vector<int> ids{1, 4, 5, 6, 2};
  const auto r =
      nn::grad_check<double>([&](Tape<double>& t) { return m.loss(t, x, ids); }, m.trainable_params(), 1e-5, 6);
  EXPECT_LE(r.max_rel_err, 1e-4) << r.worst_param;
  // the backward pass above must leave the frozen LM untouched
  EXPECT_NO_THROW(m.check_invariants());
}

TEST(Captioner, PrefixKeepsLastKMappingRows) {
  auto cfg = tiny(CaptionerKind::kPrefix, 4);
  cfg.k_prefix = 50;
  cfg.max_frames = 30;
  Rng rng(6);
  PrefixCaptioner<double> m(cfg, FrozenLm<double>(cfg, 7, rng));
  Tape<double> t(false);
  // 30 frames -> 10 conv rows + 50 prefix rows in; 50 rows out
  const Mat<double> p = t.value(m.prefix_forward(t, frames(30, 4, 7)));
  EXPECT_EQ(p.rows(), 50);
  EXPECT_EQ(p.cols(), cfg.width);
  EXPECT_THROW(m.prefix_forward(t, frames(33, 4, 7)), DataError);
}

TEST(Captioner, PrefixLossIgnoresLogitsAtPrefixRows) {
  // The loss reads only caption rows: feeding the LM the same prefix while
  // changing which token ids follow bos must change the loss, but the
  // prefix rows themselves have no target.
  const auto cfg = tiny(CaptionerKind::kPrefix, 4);
  Rng rng(8);
  FrozenLm<double> lm(cfg, 7, rng);
  PrefixCaptioner<double> m(cfg, lm);
  const Mat<double> x = frames(12, 4, 9);
  const std::vector<int> ids{1, 4, 5, 2};
  Tape<double> t(false);
  const double got = t.scalar(m.loss(t, x, ids));
  Tape<double> u(false);
  Var all = m.lm().forward(u, u.constant(t.value(m.prefix_forward(t, x))), {1, 4, 5});
  const Mat<double> logits = u.value(all);
  ASSERT_EQ(logits.rows(), cfg.k_prefix + 3);
  double want = 0;
  const std::vector<int> target{4, 5, 2};
  for (long r = 0; r < 3; ++r) {
    const Mat<double> row = logits.row(cfg.k_prefix + r);
    const double lse = std::log((row.array() - row.maxCoeff()).exp().sum()) + row.maxCoeff();
    want += lse - row(0, target[static_cast<std::size_t>(r)]);
  }
  EXPECT_NEAR(got, want / 3, 1e-10);
}

TEST(Captioner, TrainingLeavesFrozenLmBitIdentical) {
  const auto cfg = tiny(CaptionerKind::kPrefix, 4);
  Rng rng(10);
  PrefixCaptioner<float> m(cfg, FrozenLm<float>(cfg, 7, rng));
  std::vector<Mat<float>> before;
  for (auto* p : m.lm().params()) before.push_back(p->value);
  const auto vocab = text::Vocab::from_words({"a", "b", "c"});
  std::vector<CaptionExample<float>> data;
  for (int i = 0; i < 4; ++i) data.push_back({"c" + std::to_string(i), frames(12, 4, 20 + i).cast<float>(), {"a b", "c a b"}});
  CaptionTrainConfig tc;
  tc.epochs = 3;
  tc.batch = 2;
  train_captioner<float>(m, vocab, data, {}, tc);
  std::size_t i = 0;
  for (auto* p : m.lm().params()) EXPECT_EQ(p->value, before[i++]) << p->name;
  m.lm().out.w.trainable = true;
  EXPECT_THROW(m.check_invariants(), std::logic_error);
}

TEST(Captioner, OverfitsSinglePair) {
  auto cfg = tiny(CaptionerKind::kEncDec, 4);
  cfg.width = 16;
  EncDecCaptioner<float> m(cfg, 8);
  const auto vocab = text::Vocab::from_words({"a", "b", "c", "d"});
  std::vector<CaptionExample<float>> data{{"x", frames(15, 4, 30).cast<float>(), {"d a c b"}}};
  CaptionTrainConfig tc;
  tc.epochs = 300;
  tc.batch = 1;
  tc.lr = 3e-3;
  tc.weight_decay = 0;
  const auto h = train_captioner<float>(m, vocab, data, {}, tc);
  EXPECT_LT(h.train_loss.back(), 0.1);
  const auto out = generate_captions<float>(m, vocab, data, 3);
  EXPECT_EQ(out[0].caption, "d a c b");
}

TEST(Captioner, SameSeedSameFirstBatchLoss) {
  const auto vocab = text::Vocab::from_words({"a", "b", "c"});
  std::vector<CaptionExample<float>> data;
  for (int i = 0; i < 6; ++i) data.push_back({"c" + std::to_string(i), frames(12, 4, 40 + i).cast<float>(), {"a b", "c c", "b"}});
  CaptionTrainConfig tc;
  tc.epochs = 1;
  tc.batch = 3;
  auto run = [&] {
    EncDecCaptioner<float> m(tiny(CaptionerKind::kEncDec, 4), vocab.size());
    return train_captioner<float>(m, vocab, data, data, tc);
  };
  const auto a = run(), b = run();
  EXPECT_EQ(a.first_batch_loss, b.first_batch_loss);
  EXPECT_EQ(a.val_loss, b.val_loss);
}

TEST(Captioner, RejectsOverlongAndEmptyCaptions) {
  EncDecCaptioner<double> m(tiny(CaptionerKind::kEncDec, 4), 7);
  Tape<double> t;
  EXPECT_THROW(m.loss(t, frames(9, 4, 1), {1}), DataError);
  EXPECT_THROW(m.loss(t, frames(9, 4, 1), std::vector<int>(13, 4)), DataError);
}

TEST(Captioner, ConfigJsonRoundTrip) {
  auto c = tiny(CaptionerKind::kPrefix, 12);
  c.seed = 77;
  const auto back = captioner_config_from_json(captioner_config_to_json(c));
  EXPECT_EQ(back.kind, c.kind);
  EXPECT_EQ(back.input_dim, 12);
  EXPECT_EQ(back.k_prefix, 3);
  EXPECT_EQ(back.seed, 77u);
  EXPECT_THROW(captioner_kind_from("lstm"), ConfigError);
}

TEST(Beam, EscapesGreedyTrap) {
  const auto g = greedy_decode(oracle::trap, 0, 5);
  EXPECT_EQ(g.tokens, (std::vector<int>{1, 0}));
  EXPECT_NEAR(g.log_prob, std::log(0.6 * 0.35 / 1.0001), 1e-9);
  const auto b = beam_search(oracle::trap, 0, 2, 5);
  EXPECT_EQ(b.best.tokens, (std::vector<int>{2, 0}));
  EXPECT_NEAR(std::exp(b.best.log_prob), 0.4 * 0.99 / 1.0001, 1e-9);
  EXPECT_TRUE(b.best.finished);
}

TEST(Beam, WidthOneEqualsGreedyOnRandomModels) {
  for (std::uint64_t s = 0; s < 100; ++s) {
    const auto next = oracle::random_model(s, 5);
    const auto g = greedy_decode(next, 0, 6);
    const auto b = beam_search(next, 0, 1, 6);
    EXPECT_EQ(b.best.tokens, g.tokens) << "seed " << s;
    EXPECT_NEAR(b.best.log_prob, g.log_prob, 1e-12);
  }
}

TEST(Beam, ScoresAreSumsOfStepLogProbs) {
  for (std::uint64_t s = 0; s < 30; ++s) {
    const auto next = oracle::random_model(100 + s, 4);
    const auto r = beam_search(next, 0, 3, 5);
    EXPECT_NEAR(r.best.log_prob, oracle::replay(next, r.best.tokens), 1e-12);
    for (const auto& h : r.retired) {
      EXPECT_TRUE(h.finished);
      EXPECT_EQ(h.tokens.back(), 0);
      EXPECT_NEAR(h.log_prob, oracle::replay(next, h.tokens), 1e-12);
      EXPECT_LE(h.log_prob, r.best.log_prob);
    }
    EXPECT_LE(static_cast<int>(r.best.tokens.size()), 5);
  }
}

TEST(Beam, TiesPreferLowerTokenId) {
  auto flat = [](const std::vector<int>& p) {
    return p.size() < 2 ? oracle::log_normalize({1, 1, 1}) : oracle::log_normalize({1, 0.0001, 0.0001});
  };
  const auto r = beam_search(flat, 0, 2, 4);
  EXPECT_EQ(r.best.tokens, (std::vector<int>{0}));
  const auto g = greedy_decode(flat, 0, 4);
  EXPECT_EQ(g.tokens, (std::vector<int>{0}));
}

TEST(Beam, RejectsBadArguments) {
  EXPECT_THROW(beam_search(oracle::trap, 0, 2, 0), ConfigError);
  EXPECT_THROW(beam_search(oracle::trap, 0, 0, 5), ConfigError);
  EXPECT_THROW(greedy_decode(oracle::trap, 0, 0), ConfigError);
}
