#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "scanet/corpus.hpp"
#include "scanet/error.hpp"
#include "scanet/rng.hpp"

namespace scanet {

/// Parameters of the planted-scene corpus generator.
///
/// Every video is a concatenation of contiguous scenes. Each scene instantiates
/// a concept from a shared pool: the concept owns a prototype feature vector and
/// a disjoint set of noun tokens. Frames are the scene-instance vector plus
/// Gaussian noise. Every scene receives at least one query containing the
/// concept's anchor noun; redundant queries re-describe an existing scene.
struct SyntheticSpec {
  std::size_t n_videos = 20;
  std::size_t frames_min = 32;
  std::size_t frames_max = 32;
  std::size_t feature_dim = 64;
  std::size_t scenes_min = 1;
  std::size_t scenes_max = 5;
  std::size_t max_complexity = 12;  // K
  std::size_t n_concepts = 24;
  std::size_t nouns_per_concept = 2;
  double redundancy_rate = 0.0;
  double noise_std = 0.3;
  double instance_std = 0.3;
  double duplicate_scene_rate = 0.0;
  double extra_noun_prob = 0.0;
  double seconds_per_frame = 1.0;
  std::size_t min_scene_frames = 2;
  std::uint64_t seed = 0;

  void validate() const {
    auto fail = [](const std::string& m) { throw SpecError("synthetic spec: " + m); };
    if (n_videos == 0) fail("n_videos must be >= 1");
    if (frames_min < 2 || frames_min > frames_max) fail("need 2 <= frames_min <= frames_max");
    if (feature_dim == 0) fail("feature_dim must be >= 1");
    if (scenes_min < 1 || scenes_min > scenes_max) fail("need 1 <= scenes_min <= scenes_max");
    if (scenes_max > max_complexity) fail("scenes_max exceeds max_complexity");
    if (min_scene_frames < 1) fail("min_scene_frames must be >= 1");
    if (scenes_max * min_scene_frames > frames_min) {
      fail("scenes_max * min_scene_frames exceeds frames_min (more scenes than frames)");
    }
    if (n_concepts < scenes_max) fail("n_concepts must be >= scenes_max");
    if (nouns_per_concept < 1) fail("nouns_per_concept must be >= 1");
    auto unit = [&](double x, const char* name) {
      if (!(x >= 0.0 && x <= 1.0)) fail(std::string(name) + " must lie in [0, 1]");
    };
    unit(redundancy_rate, "redundancy_rate");
    unit(duplicate_scene_rate, "duplicate_scene_rate");
    unit(extra_noun_prob, "extra_noun_prob");
    if (!(noise_std >= 0.0) || !(instance_std >= 0.0)) fail("noise_std/instance_std must be >= 0");
    if (!(seconds_per_frame > 0.0)) fail("seconds_per_frame must be > 0");
  }
};

inline nlohmann::json to_json(const SyntheticSpec& s) {
  return {{"n_videos", s.n_videos},
          {"frames_min", s.frames_min},
          {"frames_max", s.frames_max},
          {"feature_dim", s.feature_dim},
          {"scenes_min", s.scenes_min},
          {"scenes_max", s.scenes_max},
          {"max_complexity", s.max_complexity},
          {"n_concepts", s.n_concepts},
          {"nouns_per_concept", s.nouns_per_concept},
          {"redundancy_rate", s.redundancy_rate},
          {"noise_std", s.noise_std},
          {"instance_std", s.instance_std},
          {"duplicate_scene_rate", s.duplicate_scene_rate},
          {"extra_noun_prob", s.extra_noun_prob},
          {"seconds_per_frame", s.seconds_per_frame},
          {"min_scene_frames", s.min_scene_frames},
          {"seed", s.seed}};
}

/// Parses a spec document; unknown keys are rejected and `seed` is required.
inline SyntheticSpec synthetic_spec_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw SpecError("synthetic spec must be a JSON object");
  if (!j.contains("seed")) throw SpecError("synthetic spec: 'seed' is mandatory");
  SyntheticSpec s;
  const nlohmann::json defaults = to_json(s);
  for (const auto& [key, value] : j.items()) {
    if (!defaults.contains(key)) throw SpecError("synthetic spec: unknown key '" + key + "'");
  }
  try {
    auto get = [&](const char* key, auto& field) {
      if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
    };
    get("n_videos", s.n_videos);
    get("frames_min", s.frames_min);
    get("frames_max", s.frames_max);
    get("feature_dim", s.feature_dim);
    get("scenes_min", s.scenes_min);
    get("scenes_max", s.scenes_max);
    get("max_complexity", s.max_complexity);
    get("n_concepts", s.n_concepts);
    get("nouns_per_concept", s.nouns_per_concept);
    get("redundancy_rate", s.redundancy_rate);
    get("noise_std", s.noise_std);
    get("instance_std", s.instance_std);
    get("duplicate_scene_rate", s.duplicate_scene_rate);
    get("extra_noun_prob", s.extra_noun_prob);
    get("seconds_per_frame", s.seconds_per_frame);
    get("min_scene_frames", s.min_scene_frames);
    get("seed", s.seed);
  } catch (const nlohmann::json::exception& e) {
    throw SpecError(std::string("synthetic spec: ") + e.what());
  }
  s.validate();
  return s;
}

inline SyntheticSpec load_synthetic_spec(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open synthetic spec '" + path + "'");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw SpecError(std::string("synthetic spec: invalid JSON: ") + e.what());
  }
  return synthetic_spec_from_json(j);
}

struct PlantedScene {
  std::size_t first_frame = 0;
  std::size_t end_frame = 0;  // exclusive
  Span span;                  // seconds
  std::size_t concept_id = 0;
  bool duplicated = false;    // copied verbatim from a scene of an earlier video
  friend bool operator==(const PlantedScene&, const PlantedScene&) = default;
};

struct PlantedVideo {
  std::string video_id;
  std::vector<PlantedScene> scenes;
  std::map<std::string, std::size_t> query_scene;  // query_id -> scene index
  std::size_t scene_count() const { return scenes.size(); }
  friend bool operator==(const PlantedVideo&, const PlantedVideo&) = default;
};

/// Ground truth recorded by the generator.
struct OracleAnnotations {
  std::vector<PlantedVideo> videos;

  const PlantedVideo& video(const std::string& id) const {
    for (const auto& v : videos) {
      if (v.video_id == id) return v;
    }
    throw LookupError("oracle has no video '" + id + "'");
  }
  friend bool operator==(const OracleAnnotations&, const OracleAnnotations&) = default;
};

inline nlohmann::json to_json(const OracleAnnotations& o) {
  nlohmann::json videos = nlohmann::json::array();
  for (const auto& v : o.videos) {
    nlohmann::json scenes = nlohmann::json::array();
    for (const auto& s : v.scenes) {
      scenes.push_back({{"first_frame", s.first_frame},
                        {"end_frame", s.end_frame},
                        {"span", {s.span.start, s.span.end}},
                        {"concept", s.concept_id},
                        {"duplicated", s.duplicated}});
    }
    videos.push_back({{"id", v.video_id}, {"scenes", scenes}, {"query_scene", v.query_scene}});
  }
  return {{"videos", videos}};
}

inline OracleAnnotations oracle_from_json(const nlohmann::json& j) {
  OracleAnnotations o;
  try {
    for (const auto& jv : j.at("videos")) {
      PlantedVideo v;
      v.video_id = jv.at("id").get<std::string>();
      for (const auto& js : jv.at("scenes")) {
        PlantedScene s;
        s.first_frame = js.at("first_frame").get<std::size_t>();
        s.end_frame = js.at("end_frame").get<std::size_t>();
        auto span = js.at("span").get<std::vector<double>>();
        s.span = Span{span.at(0), span.at(1)};
        s.concept_id = js.at("concept").get<std::size_t>();
        s.duplicated = js.at("duplicated").get<bool>();
        v.scenes.push_back(s);
      }
      v.query_scene = jv.at("query_scene").get<std::map<std::string, std::size_t>>();
      o.videos.push_back(std::move(v));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(0, std::string("oracle file: ") + e.what());
  }
  return o;
}

inline void save_oracle(const OracleAnnotations& o, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write oracle file '" + path + "'");
  out << to_json(o).dump(1) << '\n';
}

inline OracleAnnotations load_oracle(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open oracle file '" + path + "'");
  try {
    return oracle_from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(0, std::string("oracle file: ") + e.what());
  }
}

namespace detail {

inline const std::vector<std::string>& synthetic_subjects() {
  static const std::vector<std::string> s{"person", "man", "woman", "someone"};
  return s;
}

inline const std::vector<std::string>& synthetic_verbs() {
  static const std::vector<std::string> v{"holds", "watches", "opens",  "takes",
                                          "puts",  "uses",    "cleans", "looks"};
  return v;
}

inline std::string concept_noun(std::size_t concept_id, std::size_t j) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "obj%03zu%c", concept_id, static_cast<char>('a' + j % 26));
  return buf;
}

inline std::string numbered_id(char prefix, std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%c%05zu", prefix, i);
  return buf;
}

}  // namespace detail

/// Builds a corpus with planted scenes; bit-identical for a given spec.
inline std::pair<AnnotationCorpus, OracleAnnotations> generate_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  Rng rng(spec.seed);
  const std::size_t d = spec.feature_dim;

  std::vector<std::vector<double>> prototypes(spec.n_concepts, std::vector<double>(d));
  for (auto& p : prototypes) {
    for (auto& x : p) x = rng.normal();
  }

  struct Instance {
    std::size_t concept_id;
    std::vector<double> vec;
  };
  std::vector<Instance> earlier_instances;  // scenes of already generated videos

  std::vector<VideoRecord> videos;
  std::vector<QueryRecord> queries;
  OracleAnnotations oracle;
  std::size_t query_counter = 0;

  for (std::size_t vi = 0; vi < spec.n_videos; ++vi) {
    const std::size_t n_frames = static_cast<std::size_t>(rng.uniform_int(
        static_cast<std::int64_t>(spec.frames_min), static_cast<std::int64_t>(spec.frames_max)));
    const std::size_t n_scenes = static_cast<std::size_t>(rng.uniform_int(
        static_cast<std::int64_t>(spec.scenes_min), static_cast<std::int64_t>(spec.scenes_max)));

    // Scene lengths: min_scene_frames each, remainder split at sorted uniform cuts.
    const std::size_t spare = n_frames - n_scenes * spec.min_scene_frames;
    std::vector<std::size_t> cuts;
    for (std::size_t s = 0; s + 1 < n_scenes; ++s) {
      cuts.push_back(static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(spare))));
    }
    std::sort(cuts.begin(), cuts.end());
    cuts.insert(cuts.begin(), 0);
    cuts.push_back(spare);

    PlantedVideo planted;
    planted.video_id = detail::numbered_id('v', vi);
    std::set<std::size_t> used_concepts;
    std::vector<Instance> instances;
    std::size_t frame = 0;
    for (std::size_t s = 0; s < n_scenes; ++s) {
      PlantedScene scene;
      scene.first_frame = frame;
      frame += spec.min_scene_frames + (cuts[s + 1] - cuts[s]);
      scene.end_frame = frame;
      scene.span = Span{static_cast<double>(scene.first_frame) * spec.seconds_per_frame,
                        static_cast<double>(scene.end_frame) * spec.seconds_per_frame};

      bool copied = false;
      if (!earlier_instances.empty() && rng.bernoulli(spec.duplicate_scene_rate)) {
        const auto& src = earlier_instances[rng.index(earlier_instances.size())];
        if (!used_concepts.count(src.concept_id)) {
          instances.push_back(src);
          copied = true;
        }
      }
      if (!copied) {
        std::vector<std::size_t> free_concepts;
        for (std::size_t c = 0; c < spec.n_concepts; ++c) {
          if (!used_concepts.count(c)) free_concepts.push_back(c);
        }
        const std::size_t concept_id = free_concepts[rng.index(free_concepts.size())];
        Instance inst{concept_id, prototypes[concept_id]};
        for (auto& x : inst.vec) x += spec.instance_std * rng.normal();
        instances.push_back(std::move(inst));
      }
      scene.concept_id = instances.back().concept_id;
      scene.duplicated = copied;
      used_concepts.insert(scene.concept_id);
      planted.scenes.push_back(scene);
    }

    VideoRecord video;
    video.video_id = planted.video_id;
    video.n_frames = n_frames;
    video.feature_dim = d;
    video.duration = static_cast<double>(n_frames) * spec.seconds_per_frame;
    video.features.reserve(n_frames * d);
    for (std::size_t s = 0; s < n_scenes; ++s) {
      for (std::size_t f = planted.scenes[s].first_frame; f < planted.scenes[s].end_frame; ++f) {
        for (std::size_t k = 0; k < d; ++k) {
          video.features.push_back(
              static_cast<float>(instances[s].vec[k] + spec.noise_std * rng.normal()));
        }
      }
    }

    auto make_query = [&](std::size_t scene_idx) {
      const auto& scene = planted.scenes[scene_idx];
      QueryRecord q;
      q.query_id = detail::numbered_id('q', query_counter++);
      q.video_id = video.video_id;
      const auto& subjects = detail::synthetic_subjects();
      const auto& verbs = detail::synthetic_verbs();
      q.tokens = {subjects[rng.index(subjects.size())], verbs[rng.index(verbs.size())], "the",
                  detail::concept_noun(scene.concept_id, 0)};
      q.pos_tags = {PosTag::Noun, PosTag::Verb, PosTag::Other, PosTag::Noun};
      if (spec.nouns_per_concept > 1 && rng.bernoulli(spec.extra_noun_prob)) {
        const std::size_t j = 1 + rng.index(spec.nouns_per_concept - 1);
        q.tokens.insert(q.tokens.end(), {"with", "the", detail::concept_noun(scene.concept_id, j)});
        q.pos_tags.insert(q.pos_tags.end(), {PosTag::Other, PosTag::Other, PosTag::Noun});
      }
      q.gt_span = scene.span;
      planted.query_scene[q.query_id] = scene_idx;
      queries.push_back(std::move(q));
    };

    for (std::size_t s = 0; s < n_scenes; ++s) make_query(s);
    const auto n_extra = static_cast<std::size_t>(
        std::floor(spec.redundancy_rate * static_cast<double>(n_scenes) + rng.uniform()));
    for (std::size_t e = 0; e < n_extra; ++e) make_query(rng.index(n_scenes));

    for (auto& inst : instances) earlier_instances.push_back(std::move(inst));
    videos.push_back(std::move(video));
    oracle.videos.push_back(std::move(planted));
  }

  return {AnnotationCorpus::create(std::move(videos), std::move(queries)), std::move(oracle)};
}

}  // namespace scanet
