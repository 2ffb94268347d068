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

#include <filesystem>
#include <set>

#include "toktide/caption/text.hpp"
#include "toktide/synth/corpus.hpp"
#include "toktide/synth/encoder.hpp"

using namespace toktide;
using namespace toktide::synth;

namespace {

CorpusConfig small_config() {
  CorpusConfig c;
  c.n_train = 20;
  c.n_val = 5;
  c.n_test = 5;
  return c;
}

std::filesystem::path temp_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("toktide_synth_" + name);
  std::filesystem::remove_all(p);
  return p;
}

}  // namespace

TEST(Corpus, TenSecondsAtFiftyHertzGives500Frames) {
  CorpusConfig c = small_config();
  c.duration_s = 10.0;
  c.frame_rate = 50.0;
  const Corpus corpus = generate_corpus(3, c);
  for (const auto& [name, clips] : corpus.splits)
    for (const auto& clip : clips) EXPECT_EQ(clip.frames.rows(), 500) << clip.id;
}

TEST(Corpus, SplitSizesFollowConfig) {
  const Corpus corpus = generate_corpus(1, CorpusConfig{});
  EXPECT_EQ(corpus.split("train").size(), 500u);
  EXPECT_EQ(corpus.split("val").size(), 100u);
  EXPECT_EQ(corpus.split("test").size(), 100u);
}

TEST(Corpus, NoiselessSingleEventIsPaddedPrototype) {
  CorpusConfig c = small_config();
  c.noise_level = 0;
  const auto classes = make_classes(5, c);
  Rng rng(1);
  const Features f = render_clip(classes, {{2, 0}}, c.frames_per_clip(), c.feature_dim, 0.0, rng);
  const auto& proto = classes[2].prototype;
  Features expected = Features::Zero(c.frames_per_clip(), c.feature_dim);
  expected.topRows(proto.rows()) = proto;
  EXPECT_EQ(f, expected);
}

TEST(Corpus, SameSeedGivesIdenticalBytes) {
  const CorpusConfig c = small_config();
  const auto a = temp_dir("a"), b = temp_dir("b");
  write_corpus(generate_corpus(11, c), a);
  write_corpus(generate_corpus(11, c), b);
  for (const auto& entry : std::filesystem::recursive_directory_iterator(a)) {
    if (!entry.is_regular_file()) continue;
    const auto rel = std::filesystem::relative(entry.path(), a);
    EXPECT_EQ(io::read_file(entry.path()), io::read_file(b / rel)) << rel;
  }
  std::filesystem::remove_all(a);
  std::filesystem::remove_all(b);
}

TEST(Corpus, DifferentSeedsDiffer) {
  const CorpusConfig c = small_config();
  EXPECT_NE(generate_corpus(1, c).split("train")[0].frames, generate_corpus(2, c).split("train")[0].frames);
}

TEST(Corpus, ManifestRoundTrip) {
  const CorpusConfig c = small_config();
  const auto dir = temp_dir("manifest");
  const Corpus corpus = generate_corpus(4, c);
  write_corpus(corpus, dir);
  const auto clips = load_clips(dir / "val.jsonl");
  ASSERT_EQ(clips.size(), corpus.split("val").size());
  for (std::size_t i = 0; i < clips.size(); ++i) {
    const auto& ref = corpus.split("val")[i];
    EXPECT_EQ(clips[i].id, ref.id);
    EXPECT_EQ(clips[i].tags, ref.tags);
    EXPECT_EQ(clips[i].captions, ref.captions);
    EXPECT_EQ(clips[i].frames, ref.frames);
  }
  std::filesystem::remove_all(dir);
}

TEST(Corpus, RejectsSingleClass) {
  CorpusConfig c = small_config();
  c.num_classes = 1;
  c.max_events_per_clip = 1;
  EXPECT_THROW(generate_corpus(1, c), ConfigError);
}

TEST(Corpus, RejectsMoreEventsThanClasses) {
  CorpusConfig c = small_config();
  c.num_classes = 2;
  c.max_events_per_clip = 3;
  EXPECT_THROW(generate_corpus(1, c), ConfigError);
}

TEST(Corpus, ConfigJsonRejectsUnknownKeys) {
  EXPECT_THROW(config_from_json(nlohmann::json{{"num_clases", 4}}), ConfigError);
  EXPECT_EQ(config_from_json(config_to_json(small_config())).n_train, 20);
}

TEST(Corpus, TagsMatchTimeline) {
  const Corpus corpus = generate_corpus(7, CorpusConfig{});
  for (const auto& [name, clips] : corpus.splits)
    for (const auto& clip : clips) {
      std::vector<int> expected(static_cast<std::size_t>(corpus.config.num_classes), 0);
      for (const auto& ev : clip.timeline) expected[static_cast<std::size_t>(ev.event)] = 1;
      EXPECT_EQ(clip.tags, expected) << clip.id;
    }
}

TEST(Corpus, EventsDoNotOverlapAndFitInClip) {
  const Corpus corpus = generate_corpus(8, CorpusConfig{});
  for (const auto& clip : corpus.split("train")) {
    long end = 0;
    for (const auto& ev : clip.timeline) {
      EXPECT_GE(ev.onset, end);
      end = ev.onset + corpus.classes[static_cast<std::size_t>(ev.event)].prototype.rows();
    }
    EXPECT_LE(end, clip.frames.rows());
  }
}

TEST(Corpus, CaptionsNamePresentEventsOnly) {
  const Corpus corpus = generate_corpus(9, CorpusConfig{});
  for (const auto& clip : corpus.split("train"))
    for (const auto& caption : clip.captions) {
      const auto words = text::normalize_words(caption);
      const std::set<std::string> ws(words.begin(), words.end());
      for (const auto& ec : corpus.classes) {
        bool named = false;
        for (const auto& s : ec.synonyms) named = named || ws.count(s);
        EXPECT_EQ(named, clip.tags[static_cast<std::size_t>(ec.id)] == 1) << caption << " / " << ec.name;
      }
    }
}

TEST(Corpus, FivecaptionsPerClip) {
  const Corpus corpus = generate_corpus(9, small_config());
  for (const auto& clip : corpus.split("test")) EXPECT_EQ(clip.captions.size(), 5u);
}

TEST(Corpus, ClassBankSharedAcrossStreamsAndSizes) {
  CorpusConfig a = small_config();
  CorpusConfig b = a;
  b.num_classes = 16;
  b.stream = 1;
  const auto ca = make_classes(3, a), cb = make_classes(3, b);
  for (std::size_t i = 0; i < ca.size(); ++i) EXPECT_EQ(ca[i].prototype, cb[i].prototype);
}

TEST(Corpus, PadOrTruncate) {
  Features x = Features::Random(400, 4);
  Features padded = pad_or_truncate(x, 500);
  ASSERT_EQ(padded.rows(), 500);
  EXPECT_EQ(padded.topRows(400), x);
  EXPECT_TRUE(padded.bottomRows(100).isZero(0));
  EXPECT_EQ(pad_or_truncate(x, 400), x);
  Features long_x = Features::Random(600, 4);
  EXPECT_EQ(pad_or_truncate(long_x, 500), long_x.topRows(500));
}

TEST(Corpus, FeatureFileRoundTripAndTruncation) {
  const auto dir = temp_dir("afea");
  Features x = Features::Random(7, 3);
  write_features(dir / "x.afea", x);
  EXPECT_EQ(read_features(dir / "x.afea"), x);
  auto bytes = io::read_file(dir / "x.afea");
  bytes.resize(bytes.size() - 2);
  EXPECT_THROW(decode_features(bytes, "cut"), DataError);
  std::filesystem::remove_all(dir);
}

class EncoderTest : public ::testing::Test {
 protected:
  EncoderConfig cfg;
  FrozenEncoder<float> enc{cfg, 32};
  Features frames = Features::Random(40, 32);
};

TEST_F(EncoderTest, LayerPrefixMatchesFullStack) {
  const auto all = enc.encode_all(frames);
  ASSERT_EQ(all.size(), 12u);
  for (int l = 1; l <= 12; ++l) EXPECT_EQ(enc.encode(frames, l), all[static_cast<std::size_t>(l - 1)]) << l;
}

TEST_F(EncoderTest, DeterministicAndLayerDependent) {
  EXPECT_EQ(enc.encode(frames, 9), enc.encode(frames, 9));
  EXPECT_EQ(enc.encode(frames, 12), FrozenEncoder<float>(cfg, 32).encode(frames, 12));
  EXPECT_GT((enc.encode(frames, 1) - enc.encode(frames, 2)).norm(), 1e-3f);
  const auto out = enc.encode(frames, 9);
  EXPECT_EQ(out.rows(), 40);
  EXPECT_EQ(out.cols(), 64);
}

TEST_F(EncoderTest, LayerOutOfRange) {
  EXPECT_THROW(enc.encode(frames, 0), ConfigError);
  EXPECT_THROW(enc.encode(frames, 13), ConfigError);
}

TEST_F(EncoderTest, WrongInputWidth) { EXPECT_THROW(enc.encode(Features::Random(10, 31), 3), ShapeError); }

TEST_F(EncoderTest, TruncatedEncoderMatches) {
  const auto t9 = enc.truncated(9);
  EXPECT_EQ(t9.num_layers(), 9);
  EXPECT_EQ(t9.encode(frames, 9), enc.encode(frames, 9));
}

TEST_F(EncoderTest, WeightsAreFrozen) {
  auto ps = enc.params();
  ASSERT_FALSE(ps.empty());
  for (const auto* p : ps) EXPECT_FALSE(p->trainable) << p->name;
}
