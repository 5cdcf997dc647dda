#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <fstream>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include <json.hpp>

#include "scanet/error.hpp"
#include "scanet/log.hpp"

namespace scanet {

inline constexpr std::size_t kDefaultVocabSize = 8000;
inline constexpr std::size_t kDefaultMaxQueryLen = 20;

enum class PosTag { Noun, Verb, Other };

inline std::string_view to_string(PosTag tag) {
  switch (tag) {
    case PosTag::Noun: return "NOUN";
    case PosTag::Verb: return "VERB";
    case PosTag::Other: return "OTHER";
  }
  return "OTHER";
}

inline std::optional<PosTag> parse_pos_tag(std::string_view s) {
  if (s == "NOUN") return PosTag::Noun;
  if (s == "VERB") return PosTag::Verb;
  if (s == "OTHER") return PosTag::Other;
  return std::nullopt;
}

/// Closed time interval in seconds.
struct Span {
  double start = 0.0;
  double end = 0.0;

  double length() const { return end - start; }
  friend bool operator==(const Span&, const Span&) = default;
};

struct VideoRecord {
  std::string video_id;
  double duration = 0.0;
  std::size_t n_frames = 0;
  std::size_t feature_dim = 0;
  std::vector<float> features;  // row-major [n_frames x feature_dim]

  std::span<const float> frame(std::size_t i) const {
    return {features.data() + i * feature_dim, feature_dim};
  }

  friend bool operator==(const VideoRecord&, const VideoRecord&) = default;
};

struct QueryRecord {
  std::string query_id;
  std::string video_id;
  std::vector<std::string> tokens;
  std::vector<PosTag> pos_tags;
  std::optional<Span> gt_span;

  friend bool operator==(const QueryRecord&, const QueryRecord&) = default;
};

/// Token ids. Id 0 is `<unk>`, id 1 is `<mask>`; corpus tokens follow in
/// lexicographic order.
class Vocab {
 public:
  static constexpr int kUnkId = 0;
  static constexpr int kMaskId = 1;
  static constexpr const char* kUnkToken = "<unk>";
  static constexpr const char* kMaskToken = "<mask>";

  Vocab() : tokens_{kUnkToken, kMaskToken} { reindex(); }

  /// Builds from token occurrences. When the distinct-token count exceeds
  /// `capacity - 2`, the most frequent tokens are kept (ties lexicographic).
  static Vocab build(const std::vector<std::string>& occurrences,
                     std::size_t capacity = kDefaultVocabSize) {
    std::map<std::string, std::size_t> counts;
    for (const auto& t : occurrences) ++counts[t];
    std::vector<std::pair<std::string, std::size_t>> entries(counts.begin(), counts.end());
    const std::size_t room = capacity > 2 ? capacity - 2 : 0;
    if (entries.size() > room) {
      std::stable_sort(entries.begin(), entries.end(),
                       [](const auto& a, const auto& b) { return a.second > b.second; });
      log::warn("vocab: ", entries.size(), " distinct tokens exceed capacity ", capacity,
                "; ", entries.size() - room, " mapped to <unk>");
      entries.resize(room);
      std::sort(entries.begin(), entries.end());
    }
    Vocab v;
    for (auto& [tok, n] : entries) v.tokens_.push_back(tok);
    v.reindex();
    return v;
  }

  static Vocab from_tokens(std::vector<std::string> tokens) {
    if (tokens.size() < 2 || tokens[0] != kUnkToken || tokens[1] != kMaskToken) {
      throw IntegrityError("vocab must start with <unk>, <mask>");
    }
    Vocab v;
    v.tokens_ = std::move(tokens);
    v.reindex();
    return v;
  }

  int id(const std::string& token) const {
    auto it = index_.find(token);
    return it == index_.end() ? kUnkId : it->second;
  }
  bool contains(const std::string& token) const { return index_.count(token) > 0; }
  const std::string& token(int id) const { return tokens_.at(static_cast<std::size_t>(id)); }
  std::size_t size() const { return tokens_.size(); }
  const std::vector<std::string>& tokens() const { return tokens_; }

  friend bool operator==(const Vocab& a, const Vocab& b) { return a.tokens_ == b.tokens_; }

 private:
  void reindex() {
    index_.clear();
    for (std::size_t i = 0; i < tokens_.size(); ++i) index_[tokens_[i]] = static_cast<int>(i);
  }

  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
};

struct CorpusOptions {
  std::size_t vocab_size = kDefaultVocabSize;
  std::size_t max_query_len = kDefaultMaxQueryLen;
};

/// Immutable video/query collection with a derived vocabulary.
class AnnotationCorpus {
 public:
  AnnotationCorpus() = default;

  /// Validates every record invariant; throws IntegrityError on violation.
  static AnnotationCorpus create(std::vector<VideoRecord> videos,
                                 std::vector<QueryRecord> queries,
                                 const CorpusOptions& options = {}) {
    AnnotationCorpus c;
    c.videos_ = std::move(videos);
    c.queries_ = std::move(queries);
    for (auto& q : c.queries_) {
      if (q.tokens.size() > options.max_query_len) {
        log::warn("query ", q.query_id, ": ", q.tokens.size(), " tokens truncated to ",
                  options.max_query_len);
        q.tokens.resize(options.max_query_len);
        if (q.pos_tags.size() > options.max_query_len) q.pos_tags.resize(options.max_query_len);
      }
    }
    c.validate();
    std::vector<std::string> occurrences;
    for (const auto& q : c.queries_) {
      occurrences.insert(occurrences.end(), q.tokens.begin(), q.tokens.end());
    }
    c.vocab_ = Vocab::build(occurrences, options.vocab_size);
    return c;
  }

  const std::vector<VideoRecord>& videos() const { return videos_; }
  const std::vector<QueryRecord>& queries() const { return queries_; }
  const Vocab& vocab() const { return vocab_; }

  bool has_video(const std::string& video_id) const { return video_index_.count(video_id) > 0; }

  std::size_t video_index(const std::string& video_id) const {
    auto it = video_index_.find(video_id);
    if (it == video_index_.end()) throw LookupError("unknown video id '" + video_id + "'");
    return it->second;
  }

  const VideoRecord& video(const std::string& video_id) const {
    return videos_[video_index(video_id)];
  }

  /// Indices into queries() for one video, in corpus order.
  const std::vector<std::size_t>& query_indices(std::size_t video_idx) const {
    return by_video_.at(video_idx);
  }

  friend bool operator==(const AnnotationCorpus& a, const AnnotationCorpus& b) {
    return a.videos_ == b.videos_ && a.queries_ == b.queries_ && a.vocab_ == b.vocab_;
  }

 private:
  void validate() {
    video_index_.clear();
    by_video_.assign(videos_.size(), {});
    for (std::size_t i = 0; i < videos_.size(); ++i) {
      const auto& v = videos_[i];
      if (!video_index_.emplace(v.video_id, i).second) {
        throw IntegrityError("duplicate video id '" + v.video_id + "'");
      }
      if (v.n_frames < 2) throw IntegrityError("video '" + v.video_id + "' has fewer than 2 frames");
      if (v.feature_dim == 0) throw IntegrityError("video '" + v.video_id + "' has empty feature rows");
      if (v.features.size() != v.n_frames * v.feature_dim) {
        throw IntegrityError("video '" + v.video_id + "' feature size mismatch");
      }
      if (!(v.duration > 0.0) || !std::isfinite(v.duration)) {
        throw IntegrityError("video '" + v.video_id + "' has non-positive duration");
      }
      for (float f : v.features) {
        if (!std::isfinite(f)) throw IntegrityError("video '" + v.video_id + "' has non-finite feature");
      }
    }
    std::unordered_set<std::string> query_ids;
    for (std::size_t i = 0; i < queries_.size(); ++i) {
      const auto& q = queries_[i];
      if (!query_ids.insert(q.query_id).second) {
        throw IntegrityError("duplicate query id '" + q.query_id + "'");
      }
      auto it = video_index_.find(q.video_id);
      if (it == video_index_.end()) {
        throw IntegrityError("query '" + q.query_id + "' references unknown video '" + q.video_id + "'");
      }
      if (q.tokens.empty()) throw IntegrityError("query '" + q.query_id + "' has no tokens");
      if (q.pos_tags.size() != q.tokens.size()) {
        throw IntegrityError("query '" + q.query_id + "' pos/token length mismatch");
      }
      if (q.gt_span) {
        const double duration = videos_[it->second].duration;
        if (!(q.gt_span->start >= 0.0 && q.gt_span->start < q.gt_span->end &&
              q.gt_span->end <= duration)) {
          throw IntegrityError("query '" + q.query_id + "' gt_span outside [0, duration]");
        }
      }
      by_video_[it->second].push_back(i);
    }
  }

  std::vector<VideoRecord> videos_;
  std::vector<QueryRecord> queries_;
  Vocab vocab_;
  std::unordered_map<std::string, std::size_t> video_index_;
  std::vector<std::vector<std::size_t>> by_video_;
};

/// All queries paired with `video_id`, in corpus order.
inline std::vector<QueryRecord> find_queries(const std::string& video_id,
                                             const AnnotationCorpus& corpus) {
  std::vector<QueryRecord> out;
  for (std::size_t qi : corpus.query_indices(corpus.video_index(video_id))) {
    out.push_back(corpus.queries()[qi]);
  }
  return out;
}

namespace detail {

inline VideoRecord parse_video(const nlohmann::json& j, std::size_t line) {
  VideoRecord v;
  try {
    v.video_id = j.at("id").get<std::string>();
    v.duration = j.at("duration").get<double>();
    const auto& rows = j.at("features");
    if (!rows.is_array()) throw ParseError(line, "features must be an array of rows");
    v.n_frames = rows.size();
    for (const auto& row : rows) {
      if (!row.is_array()) throw ParseError(line, "feature row must be an array");
      if (v.feature_dim == 0) v.feature_dim = row.size();
      if (row.size() != v.feature_dim) throw ParseError(line, "ragged feature rows");
      for (const auto& x : row) v.features.push_back(static_cast<float>(x.get<double>()));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(line, std::string("video record: ") + e.what());
  }
  return v;
}

inline QueryRecord parse_query(const nlohmann::json& j, std::size_t line) {
  QueryRecord q;
  try {
    q.query_id = j.at("id").get<std::string>();
    q.video_id = j.at("video_id").get<std::string>();
    q.tokens = j.at("tokens").get<std::vector<std::string>>();
    for (const auto& tag : j.at("pos").get<std::vector<std::string>>()) {
      auto parsed = parse_pos_tag(tag);
      if (!parsed) throw ParseError(line, "unknown POS tag '" + tag + "'");
      q.pos_tags.push_back(*parsed);
    }
    if (j.contains("gt_span") && !j.at("gt_span").is_null()) {
      auto s = j.at("gt_span").get<std::vector<double>>();
      if (s.size() != 2) throw ParseError(line, "gt_span must have two entries");
      q.gt_span = Span{s[0], s[1]};
    }
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(line, std::string("query record: ") + e.what());
  }
  return q;
}

}  // namespace detail

/// Reads a JSON Lines corpus. Blank lines are ignored.
inline AnnotationCorpus load_corpus(const std::string& path, const CorpusOptions& options = {}) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open corpus file '" + path + "'");
  std::vector<VideoRecord> videos;
  std::vector<QueryRecord> queries;
  std::string text;
  std::size_t line = 0;
  while (std::getline(in, text)) {
    ++line;
    if (text.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
      throw ParseError(line, std::string("invalid JSON: ") + e.what());
    }
    if (!j.is_object() || j.size() != 1) {
      throw ParseError(line, "record must be an object with a single 'video' or 'query' key");
    }
    if (j.contains("video")) {
      videos.push_back(detail::parse_video(j["video"], line));
    } else if (j.contains("query")) {
      queries.push_back(detail::parse_query(j["query"], line));
    } else {
      throw ParseError(line, "unknown record kind '" + j.begin().key() + "'");
    }
  }
  return AnnotationCorpus::create(std::move(videos), std::move(queries), options);
}

inline void save_corpus(const AnnotationCorpus& corpus, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write corpus file '" + path + "'");
  for (const auto& v : corpus.videos()) {
    nlohmann::json rows = nlohmann::json::array();
    for (std::size_t i = 0; i < v.n_frames; ++i) {
      nlohmann::json row = nlohmann::json::array();
      for (float f : v.frame(i)) row.push_back(static_cast<double>(f));
      rows.push_back(std::move(row));
    }
    nlohmann::json rec = {{"video", {{"id", v.video_id}, {"duration", v.duration}, {"features", rows}}}};
    out << rec.dump() << '\n';
  }
  for (const auto& q : corpus.queries()) {
    nlohmann::json pos = nlohmann::json::array();
    for (auto t : q.pos_tags) pos.push_back(std::string(to_string(t)));
    nlohmann::json span = q.gt_span ? nlohmann::json::array({q.gt_span->start, q.gt_span->end})
                                    : nlohmann::json(nullptr);
    nlohmann::json rec = {{"query",
                           {{"id", q.query_id},
                            {"video_id", q.video_id},
                            {"tokens", q.tokens},
                            {"pos", pos},
                            {"gt_span", span}}}};
    out << rec.dump() << '\n';
  }
  if (!out) throw IoError("failed writing corpus file '" + path + "'");
}

}  // namespace scanet
