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

#include <algorithm>

#include "toktide/nn/gradcheck.hpp"
#include "toktide/repcodec.hpp"
#include "toktide/tokenizer.hpp"

using namespace toktide;

namespace {

// Small structured sequences: a few prototype rows repeated with jitter.
std::vector<Mat<float>> toy_corpus(int n, long frames, long dim, std::uint64_t seed) {
  Rng rng(seed);
  const Mat<float> protos = gaussian<float>(6, dim, 1.0, rng);
  std::uniform_int_distribution<long> pick(0, protos.rows() - 1);
  std::vector<Mat<float>> out;
  for (int i = 0; i < n; ++i) {
    Mat<float> x(frames, dim);
    long p = pick(rng);
    for (long t = 0; t < frames; ++t) {
      if (t % 8 == 0) p = pick(rng);
      x.row(t) = protos.row(p) + gaussian<float>(1, dim, 0.05, rng);
    }
    out.push_back(std::move(x));
  }
  return out;
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  return v[v.size() / 2];
}

}  // namespace

TEST(RepCodec, DeskTrainingCutsReconstructionErrorTenfold) {
  const auto data = toy_corpus(64, 48, 16, 1);
  RepCodecConfig cfg;
  cfg.codebook_size = 16;
  cfg.steps = 400;
  cfg.batch = 8;
  cfg.log_every = 1;
  const auto m = train_repcodec(data, cfg);
  std::vector<double> first, last;
  for (const auto& e : m.log) {
    ASSERT_TRUE(std::isfinite(e.loss));
    if (e.step < 10) first.push_back(e.recon);
    if (e.step >= cfg.steps - 10) last.push_back(e.recon);
  }
  EXPECT_LE(median(last) * 10.0, median(first));
}

TEST(RepCodec, ConstantCorpusReconstructsAlmostExactly) {
  std::vector<Mat<float>> data(8, Mat<float>::Constant(20, 4, 0.7f));
  RepCodecConfig cfg;
  cfg.codebook_size = 4;
  cfg.steps = 1500;
  cfg.batch = 2;
  cfg.lr = 3e-3;
  cfg.crop = 0;
  const auto m = train_repcodec(data, cfg);
  EXPECT_LT(reconstruct(m, data[0]).mse, 1e-3);
}

TEST(RepCodec, SameSeedSameModel) {
  const auto data = toy_corpus(16, 32, 8, 2);
  RepCodecConfig cfg;
  cfg.codebook_size = 8;
  cfg.steps = 20;
  cfg.batch = 4;
  const auto a = train_repcodec(data, cfg), b = train_repcodec(data, cfg);
  EXPECT_EQ(a.vq.codebooks[0].vectors, b.vq.codebooks[0].vectors);
  EXPECT_EQ(reconstruct(a, data[0]).output, reconstruct(b, data[0]).output);
}

TEST(RepCodec, ShapesAndTokenization) {
  const auto data = toy_corpus(16, 32, 8, 3);
  RepCodecConfig cfg;
  cfg.codebook_size = 8;
  cfg.n_layers = 2;
  cfg.steps = 10;
  cfg.batch = 4;
  const auto m = train_repcodec(data, cfg);
  const Mat<float> x = data[0].topRows(23);
  const auto r = reconstruct(m, x);
  EXPECT_EQ(r.output.rows(), 23);
  EXPECT_EQ(r.output.cols(), 8);
  EXPECT_GT(r.mse, 0.0);
  EXPECT_NEAR(r.mse, (r.output - x).squaredNorm() / static_cast<double>(x.size()), 1e-9);

  const auto tok = repcodec_tokenizer<float>(m, std::nullopt);
  const auto ts = tok.tokenize_features(x);
  ASSERT_EQ(ts.layers(), 2u);
  EXPECT_EQ(ts.frames(), 23u);
  const auto again = tok.tokenize_features(x);
  EXPECT_EQ(ts.indices, again.indices);
  // two-layer tokens detokenize to the sum of both stage lookups
  const Mat<float> d = tok.detokenize(ts);
  for (long t = 0; t < 23; ++t) {
    const Mat<float> expect = m.vq.codebooks[0].vectors.row(ts.indices[0][static_cast<std::size_t>(t)]) +
                              m.vq.codebooks[1].vectors.row(ts.indices[1][static_cast<std::size_t>(t)]);
    EXPECT_EQ(d.row(t), expect.row(0));
  }
  EXPECT_THROW(tok.tokenize_features(Mat<float>::Zero(5, 7)), ShapeError);
}

TEST(RepCodec, EncoderReceivesGradientThroughQuantizer) {
  Rng rng(4);
  VqModule<double> vq("vq", 6, 8, 1, rng);
  const Mat<double> x = gaussian<double>(12, 6, 1.0, rng);
  vq.init_codebooks(vq.encode(x), rng);
  Tape<double> t;
  auto p = vq.forward(t, t.constant(x));
  t.backward(ops::mse(t, p.recon, x));
  double enc_norm = 0;
  for (auto* q : vq.encoder_params()) enc_norm += q->grad.squaredNorm();
  EXPECT_GT(enc_norm, 0.0);
}

TEST(RepCodec, ReconstructionLossGradientMatchesFiniteDifferences) {
  Rng rng(5);
  VqModule<double> vq("vq", 4, 6, 2, rng, 1);
  const Mat<double> x = gaussian<double>(7, 4, 1.0, rng);
  vq.init_codebooks(vq.encode(x), rng);
  // Freeze the code choice at the current point so the loss is smooth.
  Tape<double> base(false);
  auto bp = vq.forward(base, base.constant(x));
  const FrozenQuantization<double> frozen{base.value(bp.z), bp.rvq.quantized};
  auto loss = [&](Tape<double>& t) {
    auto p = vq.forward(t, t.constant(x), &frozen);
    return ops::add(t, ops::mse(t, p.recon, x), ops::scale(t, p.commitment, 0.25));
  };
  const auto r = nn::grad_check<double>(loss, vq.params());
  EXPECT_LE(r.max_rel_err, 1e-4) << r.worst_param;
}

TEST(RepCodec, FrozenQuantizationMatchesStraightThroughAtBasePoint) {
  Rng rng(6);
  VqModule<double> vq("vq", 4, 6, 1, rng, 1);
  const Mat<double> x = gaussian<double>(5, 4, 1.0, rng);
  vq.init_codebooks(vq.encode(x), rng);
  Tape<double> a;
  auto pa = vq.forward(a, a.constant(x));
  const FrozenQuantization<double> frozen{a.value(pa.z), pa.rvq.quantized};
  a.backward(ops::mse(a, pa.recon, x));
  std::vector<Mat<double>> ga;
  for (auto* p : vq.params()) ga.push_back(p->grad);
  zero_grads(vq.params());
  Tape<double> b;
  auto pb = vq.forward(b, b.constant(x), &frozen);
  EXPECT_TRUE(b.value(pb.recon).isApprox(a.value(pa.recon), 1e-12));
  b.backward(ops::mse(b, pb.recon, x));
  std::size_t i = 0;
  for (auto* p : vq.params()) EXPECT_TRUE(p->grad.isApprox(ga[i++], 1e-10)) << p->name;
}

TEST(RepCodec, RejectsBadConfig) {
  Rng rng(1);
  EXPECT_THROW(VqModule<float>("vq", 4, 8, 3, rng), ConfigError);
  EXPECT_THROW(train_repcodec<float>({}, RepCodecConfig{}), DataError);
}
