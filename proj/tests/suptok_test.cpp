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

#include "toktide/metrics.hpp"
#include "toktide/nn/gradcheck.hpp"
#include "toktide/suptok.hpp"
#include "toktide/synth/corpus.hpp"

using namespace toktide;

namespace {

double scalar_bce(const std::vector<double>& p, const std::vector<double>& y) {
  double s = 0;
  for (std::size_t i = 0; i < p.size(); ++i) s += -(y[i] * std::log(p[i]) + (1 - y[i]) * std::log(1 - p[i]));
  return s;
}

synth::EncoderConfig small_encoder(int layers) {
  synth::EncoderConfig e;
  e.layers = layers;
  e.dim = 16;
  e.heads = 2;
  e.ff_mult = 2;
  e.branch_scale = 0.2;
  return e;
}

// One small tagged corpus, encoder and pretrained tagger shared by the tests
// that need a working Encoder2.
struct Fixture {
  synth::Corpus corpus;
  synth::FrozenEncoder<float> encoder;
  TaggingModel<float> tagger;
  std::vector<Mat<float>> train_enc1;
  std::vector<std::vector<int>> train_tags;

  static constexpr int kSplit = 2;

  Fixture() {
    synth::CorpusConfig cc;
    cc.num_classes = 4;
    cc.n_train = 96;
    cc.n_val = 32;
    cc.n_test = 32;
    cc.duration_s = 1.0;
    cc.feature_dim = 16;
    cc.max_events_per_clip = 2;
    corpus = synth::generate_corpus(11, cc);
    encoder = synth::FrozenEncoder<float>(small_encoder(4), cc.feature_dim);
    std::vector<Mat<float>> tr, va;
    std::vector<std::vector<int>> va_tags;
    for (const auto& c : corpus.split("train")) {
      tr.push_back(encoder.embedded(c.frames));
      train_tags.push_back(c.tags);
      train_enc1.push_back(encoder.encode(c.frames, kSplit));
    }
    for (const auto& c : corpus.split("val")) {
      va.push_back(encoder.embedded(c.frames));
      va_tags.push_back(c.tags);
    }
    TaggingConfig tc;
    tc.tune_top = 4;
    tc.f1_floor = 0.8;
    tc.max_epochs = 80;
    tagger = pretrain_tagging_model(encoder, tr, train_tags, va, va_tags, tc);
  }

  static const Fixture& get() {
    static const Fixture f;
    return f;
  }
};

SupTokConfig small_suptok(int steps) {
  SupTokConfig c;
  c.split = Fixture::kSplit;
  c.codebook_size = 16;
  c.steps = steps;
  c.batch = 8;
  c.lr = 3e-4;
  c.init_pool = 512;
  return c;
}

double bottleneck_f1(const SupTokModel<float>& m, const synth::Corpus& corpus, const synth::FrozenEncoder<float>& enc) {
  const auto& test = corpus.split("test");
  Mat<double> probs(static_cast<long>(test.size()), m.tagger.num_classes), labels = probs;
  for (std::size_t i = 0; i < test.size(); ++i) {
    probs.row(static_cast<long>(i)) = m.predict(enc.encode(test[i].frames, m.split)).cast<double>();
    labels.row(static_cast<long>(i)) = tag_row<double>(test[i].tags);
  }
  return metrics::macro_f1(probs, labels);
}

}  // namespace

TEST(Bce, WorkedExamples) {
  Mat<double> half(1, 2), y(1, 2);
  half << 0.5, 0.5;
  y << 1, 0;
  EXPECT_NEAR(bce_loss(half, y), 2 * std::log(2.0), 1e-12);
  EXPECT_NEAR(bce_loss(half, y), 1.3863, 1e-4);
  Mat<double> sure(1, 2);
  sure << 1.0, 0.0;
  EXPECT_NEAR(bce_loss(sure, y), 0.0, 1e-6);
  Mat<double> p(1, 2);
  p << 0.9, 0.2;
  EXPECT_NEAR(bce_loss(p, y), 0.3285, 1e-4);
}

TEST(Bce, MatchesScalarOracleAndTapeOp) {
  Rng rng(3);
  std::uniform_real_distribution<double> u(0.01, 0.99);
  std::bernoulli_distribution b(0.4);
  for (int trial = 0; trial < 50; ++trial) {
    Mat<double> p(3, 5), y(3, 5);
    std::vector<double> pv, yv;
    for (long i = 0; i < p.size(); ++i) {
      p.data()[i] = u(rng);
      y.data()[i] = b(rng) ? 1.0 : 0.0;
      pv.push_back(p.data()[i]);
      yv.push_back(y.data()[i]);
    }
    const double want = scalar_bce(pv, yv);
    EXPECT_NEAR(bce_loss(p, y), want, 1e-10);
    Tape<double> t(false);
    EXPECT_NEAR(t.scalar(ops::binary_cross_entropy(t, t.constant(p), y)), want, 1e-10);
  }
}

TEST(Bce, RejectsNaNAndShapeMismatch) {
  Mat<double> p(1, 2), y(1, 2);
  p << std::nan(""), 0.5;
  y << 1, 0;
  EXPECT_THROW(bce_loss(p, y), NumericalError);
  EXPECT_THROW(bce_loss(Mat<double>(Mat<double>::Constant(1, 3, 0.5)), y), ShapeError);
}

TEST(SupTok, SplitPartitionsTwelveLayerEncoder) {
  synth::FrozenEncoder<float> enc(small_encoder(12), 8);
  TaggingModel<float> tagger;
  tagger.encoder = enc;
  tagger.num_classes = 3;
  Rng rng(1);
  tagger.head = nn::Linear<float>("head", enc.dim(), 3, rng);
  SupTokModel<float> m;
  m.tagger = tagger;
  m.split = 9;
  m.vq = VqModule<float>("vq", enc.dim(), 4, 1, rng);
  m.vq.init_codebooks(gaussian<float>(16, enc.dim(), 1.0, rng), rng);
  const auto p = export_tokenizer(m);
  ASSERT_TRUE(p.encoder.has_value());
  EXPECT_EQ(p.encoder->num_layers(), 9);
  EXPECT_EQ(p.source_layer, 9);
  // Encoder2 is the 3 remaining blocks plus the head.
  ParamList<float> upper = m.tagger.upper_params(9);
  ParamList<float> one_block;
  const_cast<nn::TransformerBlock<float>&>(enc.blocks()[0]).collect(one_block);
  EXPECT_EQ(upper.size(), 3 * one_block.size() + 2);
  // Frames through the exported encoder equal the first 9 layers of the full one.
  Rng frng(2);
  const Mat<float> frames = gaussian<float>(20, 8, 1.0, frng);
  EXPECT_EQ(p.encoder->encode(frames, 9), enc.encode(frames, 9));
  EXPECT_EQ(m.encoder1(frames), enc.encode(frames, 9));
}

TEST(SupTok, RejectsSplitOutsideEncoder) {
  const auto& f = Fixture::get();
  auto cfg = small_suptok(1);
  cfg.split = 0;
  EXPECT_THROW(train_supervised_tokenizer(f.tagger, f.train_enc1, f.train_tags, cfg), ConfigError);
  cfg.split = 4;
  EXPECT_THROW(train_supervised_tokenizer(f.tagger, f.train_enc1, f.train_tags, cfg), ConfigError);
}

TEST(SupTok, FrozenEncodersAreBitIdenticalAfterTraining) {
  const auto& f = Fixture::get();
  auto before = f.tagger;
  const auto m = train_supervised_tokenizer(f.tagger, f.train_enc1, f.train_tags, small_suptok(30));
  auto after = m.tagger;
  ParamList<float> a = before.params(), b = after.params();
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i]->value, b[i]->value) << a[i]->name;
    EXPECT_FALSE(b[i]->trainable) << b[i]->name;
  }
}

TEST(SupTok, FrozenGradientGuardFires) {
  Parameter<float> p("enc.layer1.w", Mat<float>::Zero(2, 2));
  p.trainable = false;
  ParamList<float> ps{&p};
  EXPECT_NO_THROW(assert_frozen_untouched(ps));
  p.grad(0, 1) = 1e-9f;
  EXPECT_THROW(assert_frozen_untouched(ps), std::logic_error);
}

TEST(SupTok, ObjectiveGradientMatchesFiniteDifferences) {
  // Double-precision copy of a tiny tokenizer; the quantization choice is
  // frozen at the base point so central differences see a smooth function.
  synth::FrozenEncoder<double> enc(small_encoder(3), 6);
  Rng rng(9);
  SupTokModel<double> m;
  m.tagger.encoder = enc;
  m.tagger.num_classes = 3;
  m.tagger.head = nn::Linear<double>("head", enc.dim(), 3, rng);
  m.split = 1;
  m.vq = VqModule<double>("vq", enc.dim(), 5, 2, rng, 1);
  const Mat<double> h = enc.encode(gaussian<double>(9, 6, 1.0, rng), 1);
  m.vq.init_codebooks(m.vq.encode(h), rng);
  Mat<double> y(1, 3);
  y << 1, 0, 1;
  Tape<double> base(false);
  auto bp = m.forward(base, h);
  const FrozenQuantization<double> frozen{base.value(bp.vq.z), bp.vq.rvq.quantized};
  auto loss = [&](Tape<double>& t) {
    auto p = m.forward(t, h, &frozen);
    return ops::add(t, ops::bce_with_logits(t, p.logits, y), ops::scale(t, p.vq.commitment, kCommitmentBeta));
  };
  const auto r = nn::grad_check<double>(loss, m.vq.params());
  EXPECT_LE(r.max_rel_err, 1e-4) << r.worst_param;
  // and nothing flows into the frozen tagger
  ParamList<double> frozen_ps = m.frozen_params();
  set_trainable(frozen_ps, false);
  zero_grads(frozen_ps);
  Tape<double> t;
  auto p = m.forward(t, h);
  t.backward(ops::binary_cross_entropy(t, p.probs, y));
  EXPECT_NO_THROW(assert_frozen_untouched(frozen_ps));
}

TEST(SupTok, ExportedTokensMatchTrainingForwardAndIgnoreEncoder2) {
  const auto& f = Fixture::get();
  auto m = train_supervised_tokenizer(f.tagger, f.train_enc1, f.train_tags, small_suptok(20));
  const auto pipe = export_tokenizer(m);
  const auto& clip = f.corpus.split("test").front();
  const auto tokens = pipe.tokenize_frames(clip.frames);
  Tape<float> t(false);
  auto pass = m.forward(t, m.encoder1(clip.frames));
  ASSERT_EQ(tokens.layers(), 1u);
  ASSERT_EQ(tokens.indices[0].size(), pass.vq.rvq.indices[0].size());
  for (std::size_t i = 0; i < tokens.frames(); ++i)
    EXPECT_EQ(static_cast<int>(tokens.indices[0][i]), pass.vq.rvq.indices[0][i]);
  // Poisoning Encoder2, the head and the vq decoder must not change tokens.
  for (auto* p : m.tagger.upper_params(m.split)) p->value.setConstant(std::nanf(""));
  for (auto* p : [&] { ParamList<float> d; m.vq.decoder.collect(d); return d; }()) p->value.setConstant(std::nanf(""));
  EXPECT_EQ(export_tokenizer(m).tokenize_frames(clip.frames).indices, tokens.indices);
}

TEST(SupTok, TrainingImprovesBottleneckTagging) {
  const auto& f = Fixture::get();
  const auto untrained = train_supervised_tokenizer(f.tagger, f.train_enc1, f.train_tags, small_suptok(0));
  const auto trained = train_supervised_tokenizer(f.tagger, f.train_enc1, f.train_tags, small_suptok(300));
  const double f0 = bottleneck_f1(untrained, f.corpus, f.encoder);
  const double f1 = bottleneck_f1(trained, f.corpus, f.encoder);
  EXPECT_GT(f1, f0);
  EXPECT_GT(trained.log.front().loss, trained.log.back().loss);
}

TEST(SupTok, SameSeedSameTokens) {
  const auto& f = Fixture::get();
  const auto a = export_tokenizer(train_supervised_tokenizer(f.tagger, f.train_enc1, f.train_tags, small_suptok(10)));
  const auto b = export_tokenizer(train_supervised_tokenizer(f.tagger, f.train_enc1, f.train_tags, small_suptok(10)));
  const auto& clip = f.corpus.split("test")[1];
  EXPECT_EQ(a.tokenize_frames(clip.frames).indices, b.tokenize_frames(clip.frames).indices);
}

TEST(Tagging, PretrainingReachesFloorAndFreezes) {
  const auto& f = Fixture::get();
  ASSERT_FALSE(f.tagger.val_f1_history.empty());
  EXPECT_GE(f.tagger.val_f1_history.back(), 0.8);
  auto t = f.tagger;
  for (auto* p : t.params()) EXPECT_FALSE(p->trainable) << p->name;
}

TEST(Tagging, UnreachableFloorIsNumericalError) {
  const auto& f = Fixture::get();
  std::vector<Mat<float>> tr, va;
  std::vector<std::vector<int>> tags;
  for (int i = 0; i < 8; ++i) {
    tr.push_back(f.encoder.embedded(f.corpus.split("train")[static_cast<std::size_t>(i)].frames));
    tags.push_back(f.corpus.split("train")[static_cast<std::size_t>(i)].tags);
  }
  va = tr;
  auto flipped = tags;
  for (auto& row : flipped)
    for (auto& v : row) v = 1 - v;
  TaggingConfig tc;
  tc.tune_top = 4;
  tc.max_epochs = 2;
  tc.f1_floor = 0.99;
  EXPECT_THROW(pretrain_tagging_model(f.encoder, tr, tags, va, flipped, tc), NumericalError);
}
