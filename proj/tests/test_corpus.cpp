#include <gtest/gtest.h>

#include <set>

#include "scanet/corpus.hpp"
#include "scanet/synthetic.hpp"
#include "test_util.hpp"

using namespace scanet;
using scanet::testing::TempDir;
using scanet::testing::data_path;
using scanet::testing::write_text;

namespace {

const char* kOneVideo = R"({"video": {"id": "a", "duration": 4.0, "features": [[1, 2], [3, 4]]}})";

SyntheticSpec small_spec(std::uint64_t seed) {
  SyntheticSpec s;
  s.n_videos = 6;
  s.frames_min = 10;
  s.frames_max = 14;
  s.feature_dim = 8;
  s.scenes_min = 1;
  s.scenes_max = 4;
  s.n_concepts = 10;
  s.redundancy_rate = 0.5;
  s.extra_noun_prob = 0.5;
  s.duplicate_scene_rate = 0.3;
  s.seed = seed;
  return s;
}

}  // namespace

TEST(Corpus, SingleVideoNoQueries) {
  TempDir dir;
  write_text(dir.file("c.jsonl"), std::string(kOneVideo) + "\n");
  auto c = load_corpus(dir.file("c.jsonl"));
  EXPECT_EQ(c.videos().size(), 1u);
  EXPECT_TRUE(c.queries().empty());
  EXPECT_EQ(c.videos()[0].n_frames, 2u);
  EXPECT_EQ(c.videos()[0].feature_dim, 2u);
  EXPECT_EQ(c.vocab().size(), 2u);  // <unk>, <mask>
}

TEST(Corpus, DanglingVideoIdIsIntegrityError) {
  TempDir dir;
  write_text(dir.file("c.jsonl"),
             std::string(kOneVideo) + "\n" +
                 R"({"query": {"id": "q", "video_id": "zzz", "tokens": ["x"], "pos": ["NOUN"], "gt_span": null}})" + "\n");
  EXPECT_THROW(load_corpus(dir.file("c.jsonl")), IntegrityError);
}

TEST(Corpus, MalformedRecordNamesLine) {
  TempDir dir;
  write_text(dir.file("c.jsonl"), std::string(kOneVideo) + "\n\n{\"video\": {\"id\": 3\n");
  try {
    load_corpus(dir.file("c.jsonl"));
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 3u);
    EXPECT_NE(std::string(e.what()).find("line 3"), std::string::npos);
  }
}

TEST(Corpus, UnknownPosTagAndRecordKind) {
  TempDir dir;
  write_text(dir.file("a.jsonl"),
             std::string(kOneVideo) + "\n" +
                 R"({"query": {"id": "q", "video_id": "a", "tokens": ["x"], "pos": ["ADJ"], "gt_span": null}})");
  EXPECT_THROW(load_corpus(dir.file("a.jsonl")), ParseError);
  write_text(dir.file("b.jsonl"), R"({"clip": {}})");
  EXPECT_THROW(load_corpus(dir.file("b.jsonl")), ParseError);
}

TEST(Corpus, InvariantViolations) {
  VideoRecord v{"a", 4.0, 2, 2, {1, 2, 3, 4}};
  QueryRecord q{"q", "a", {"x", "y"}, {PosTag::Noun}, std::nullopt};
  EXPECT_THROW(AnnotationCorpus::create({v}, {q}), IntegrityError);  // pos length
  q.pos_tags = {PosTag::Noun, PosTag::Other};
  q.gt_span = Span{1.0, 5.0};
  EXPECT_THROW(AnnotationCorpus::create({v}, {q}), IntegrityError);  // beyond duration
  q.gt_span = Span{2.0, 2.0};
  EXPECT_THROW(AnnotationCorpus::create({v}, {q}), IntegrityError);  // empty span
  EXPECT_THROW(AnnotationCorpus::create({v, v}, {}), IntegrityError);  // duplicate id
  VideoRecord nan_video = v;
  nan_video.features[1] = std::numeric_limits<float>::quiet_NaN();
  EXPECT_THROW(AnnotationCorpus::create({nan_video}, {}), IntegrityError);
  VideoRecord short_video{"s", 1.0, 1, 2, {1, 2}};
  EXPECT_THROW(AnnotationCorpus::create({short_video}, {}), IntegrityError);
}

TEST(Corpus, VocabIsLexicographicWithReservedIds) {
  VideoRecord v{"a", 4.0, 2, 1, {1, 2}};
  QueryRecord q1{"q1", "a", {"zebra", "apple"}, {PosTag::Noun, PosTag::Noun}, std::nullopt};
  QueryRecord q2{"q2", "a", {"mango", "apple"}, {PosTag::Noun, PosTag::Noun}, std::nullopt};
  auto c = AnnotationCorpus::create({v}, {q1, q2});
  const std::vector<std::string> expected{"<unk>", "<mask>", "apple", "mango", "zebra"};
  EXPECT_EQ(c.vocab().tokens(), expected);
  EXPECT_EQ(c.vocab().id("<mask>"), Vocab::kMaskId);
  EXPECT_EQ(c.vocab().id("never-seen"), Vocab::kUnkId);
}

TEST(Corpus, VocabOverflowMapsRareTokensToUnk) {
  VideoRecord v{"a", 4.0, 2, 1, {1, 2}};
  QueryRecord q1{"q1", "a", {"b", "b", "c", "a"}, std::vector<PosTag>(4, PosTag::Other), std::nullopt};
  auto c = AnnotationCorpus::create({v}, {q1}, CorpusOptions{4, 20});
  EXPECT_EQ(c.vocab().size(), 4u);
  EXPECT_TRUE(c.vocab().contains("b"));
  EXPECT_TRUE(c.vocab().contains("a"));  // ties broken lexicographically
  EXPECT_EQ(c.vocab().id("c"), Vocab::kUnkId);
}

TEST(Corpus, LongQueriesAreTruncated) {
  VideoRecord v{"a", 4.0, 2, 1, {1, 2}};
  QueryRecord q{"q", "a", std::vector<std::string>(25, "w"), std::vector<PosTag>(25, PosTag::Other),
                std::nullopt};
  auto c = AnnotationCorpus::create({v}, {q});
  EXPECT_EQ(c.queries()[0].tokens.size(), kDefaultMaxQueryLen);
  EXPECT_EQ(c.queries()[0].pos_tags.size(), kDefaultMaxQueryLen);
}

TEST(FindQueries, WorkedFixtureReturnsFourQueries) {
  auto c = load_corpus(data_path("worked_example_corpus.jsonl"));
  auto qs = find_queries("v1", c);
  ASSERT_EQ(qs.size(), 4u);
  EXPECT_EQ(qs[0].query_id, "q1");
  EXPECT_EQ(qs[3].query_id, "q4");
  EXPECT_EQ(find_queries("v2", c).size(), 1u);
  EXPECT_THROW(find_queries("nope", c), LookupError);
}

TEST(FindQueries, VideoWithoutQueries) {
  TempDir dir;
  write_text(dir.file("c.jsonl"), std::string(kOneVideo) + "\n");
  auto c = load_corpus(dir.file("c.jsonl"));
  EXPECT_TRUE(find_queries("a", c).empty());
}

TEST(FindQueries, PlantedCountsFromGenerator) {
  SyntheticSpec s = small_spec(3);
  s.n_videos = 3;
  s.redundancy_rate = 0.0;
  auto [corpus, oracle] = generate_synthetic(s);
  for (const auto& pv : oracle.videos) {
    EXPECT_EQ(find_queries(pv.video_id, corpus).size(), pv.scene_count());
  }
}

TEST(FindQueries, PartitionsQuerySet) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    auto [corpus, oracle] = generate_synthetic(small_spec(seed));
    std::vector<QueryRecord> all;
    for (const auto& v : corpus.videos()) {
      auto qs = find_queries(v.video_id, corpus);
      all.insert(all.end(), qs.begin(), qs.end());
    }
    ASSERT_EQ(all.size(), corpus.queries().size());
    std::set<std::string> ids;
    for (const auto& q : all) ids.insert(q.query_id);
    EXPECT_EQ(ids.size(), all.size());
    for (const auto& q : corpus.queries()) EXPECT_TRUE(ids.count(q.query_id));
  }
}

TEST(Synthetic, DeterministicForSeed) {
  auto a = generate_synthetic(small_spec(11));
  auto b = generate_synthetic(small_spec(11));
  EXPECT_TRUE(a.first == b.first);
  EXPECT_TRUE(a.second == b.second);
  auto c = generate_synthetic(small_spec(12));
  EXPECT_FALSE(a.first == c.first);
}

TEST(Synthetic, RoundTripThroughFile) {
  TempDir dir;
  for (std::uint64_t seed = 0; seed < 4; ++seed) {
    auto [corpus, oracle] = generate_synthetic(small_spec(seed));
    save_corpus(corpus, dir.file("c.jsonl"));
    auto loaded = load_corpus(dir.file("c.jsonl"));
    EXPECT_TRUE(loaded == corpus) << "seed " << seed;
    save_oracle(oracle, dir.file("o.json"));
    EXPECT_TRUE(load_oracle(dir.file("o.json")) == oracle);
  }
}

TEST(Synthetic, ZeroRedundancyGivesOneQueryPerScene) {
  SyntheticSpec s = small_spec(5);
  s.redundancy_rate = 0.0;
  s.n_videos = 20;
  auto [corpus, oracle] = generate_synthetic(s);
  for (const auto& pv : oracle.videos) {
    EXPECT_EQ(corpus.query_indices(corpus.video_index(pv.video_id)).size(), pv.scene_count());
  }
}

TEST(Synthetic, OneThirdRedundancyOnThreeScenesAddsOneQuery) {
  SyntheticSpec s = small_spec(9);
  s.scenes_min = s.scenes_max = 3;
  s.redundancy_rate = 1.0 / 3.0;
  auto [corpus, oracle] = generate_synthetic(s);
  for (const auto& pv : oracle.videos) {
    EXPECT_EQ(pv.scene_count(), 3u);
    EXPECT_EQ(corpus.query_indices(corpus.video_index(pv.video_id)).size(), 4u);
  }
}

TEST(Synthetic, SceneSpansAreDisjointAndCoverVideo) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    auto [corpus, oracle] = generate_synthetic(small_spec(seed));
    for (const auto& pv : oracle.videos) {
      const auto& v = corpus.video(pv.video_id);
      ASSERT_FALSE(pv.scenes.empty());
      EXPECT_EQ(pv.scenes.front().first_frame, 0u);
      EXPECT_EQ(pv.scenes.front().span.start, 0.0);
      EXPECT_EQ(pv.scenes.back().end_frame, v.n_frames);
      EXPECT_DOUBLE_EQ(pv.scenes.back().span.end, v.duration);
      for (std::size_t i = 1; i < pv.scenes.size(); ++i) {
        EXPECT_EQ(pv.scenes[i].first_frame, pv.scenes[i - 1].end_frame);
        EXPECT_LT(pv.scenes[i].first_frame, pv.scenes[i].end_frame);
      }
    }
  }
}

TEST(Synthetic, QueriesCarryTemplateTags) {
  auto [corpus, oracle] = generate_synthetic(small_spec(1));
  for (const auto& q : corpus.queries()) {
    ASSERT_GE(q.tokens.size(), 4u);
    EXPECT_EQ(q.pos_tags[0], PosTag::Noun);
    EXPECT_EQ(q.pos_tags[1], PosTag::Verb);
    EXPECT_EQ(q.pos_tags[3], PosTag::Noun);
    ASSERT_TRUE(q.gt_span.has_value());
    const auto& pv = oracle.video(q.video_id);
    EXPECT_EQ(*q.gt_span, pv.scenes.at(pv.query_scene.at(q.query_id)).span);
  }
}

TEST(Synthetic, InconsistentSpecRejected) {
  SyntheticSpec s = small_spec(0);
  s.scenes_max = 8;
  s.frames_min = s.frames_max = 10;  // 8 scenes x 2 frames > 10
  EXPECT_THROW(generate_synthetic(s), SpecError);
  s = small_spec(0);
  s.scenes_max = 13;
  EXPECT_THROW(s.validate(), SpecError);
  EXPECT_THROW(synthetic_spec_from_json(nlohmann::json{{"n_videos", 3}}), SpecError);  // no seed
  EXPECT_THROW(synthetic_spec_from_json(nlohmann::json{{"seed", 1}, {"bogus", 2}}), SpecError);
  EXPECT_NO_THROW(synthetic_spec_from_json(nlohmann::json{{"seed", 1}}));
}
