#pragma once

#include <algorithm>
#include <cctype>
#include <cstddef>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include "scanet/corpus.hpp"
#include "scanet/error.hpp"
#include "scanet/log.hpp"

namespace scanet {

inline constexpr std::size_t kDefaultMaxComplexity = 12;

inline std::string lowercase(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return s;
}

using HumanNouns = std::set<std::string>;

inline HumanNouns default_human_nouns() {
  return {"person", "man", "woman", "boy", "girl", "guy", "lady", "people", "someone", "child", "kid"};
}

/// One token per line; blank lines and surrounding whitespace ignored.
inline HumanNouns load_human_nouns(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open human-noun list '" + path + "'");
  HumanNouns out;
  std::string line;
  while (std::getline(in, line)) {
    const auto b = line.find_first_not_of(" \t\r");
    if (b == std::string::npos) continue;
    const auto e = line.find_last_not_of(" \t\r");
    out.insert(lowercase(line.substr(b, e - b + 1)));
  }
  return out;
}

/// Per-query noun sets in corpus order.
struct NounSet {
  std::vector<std::set<std::string>> elements;
  std::vector<std::string> provenance;  // query_id per element

  std::size_t size() const { return elements.size(); }
  friend bool operator==(const NounSet&, const NounSet&) = default;
};

struct RemovalStep {
  std::string query_id;
  std::size_t degree = 0;
  std::set<std::string> nouns;
  friend bool operator==(const RemovalStep&, const RemovalStep&) = default;
};

struct SceneComplexity {
  std::size_t alpha = 1;      // clamped to [1, K]
  std::size_t raw_count = 0;  // surviving elements before clamping
  std::size_t n_queries = 0;
  bool degraded = false;      // no query produced nouns; alpha = query count
  std::vector<RemovalStep> trace;
  NounSet survivors;
};

inline NounSet extract_nouns(const std::vector<QueryRecord>& queries,
                             const HumanNouns& human_nouns = default_human_nouns()) {
  NounSet out;
  for (const auto& q : queries) {
    std::set<std::string> nouns;
    for (std::size_t i = 0; i < q.tokens.size(); ++i) {
      if (q.pos_tags[i] != PosTag::Noun) continue;
      std::string t = lowercase(q.tokens[i]);
      if (human_nouns.count(t)) continue;
      nouns.insert(std::move(t));
    }
    if (nouns.empty()) {
      log::debug("query ", q.query_id, " has no scene nouns; skipped");
      continue;
    }
    out.elements.push_back(std::move(nouns));
    out.provenance.push_back(q.query_id);
  }
  return out;
}

namespace detail {

inline bool share_noun(const std::set<std::string>& a, const std::set<std::string>& b) {
  auto ia = a.begin();
  auto ib = b.begin();
  while (ia != a.end() && ib != b.end()) {
    if (*ia == *ib) return true;
    if (*ia < *ib) ++ia; else ++ib;
  }
  return false;
}

inline bool has_overlap(const NounSet& ns) {
  for (std::size_t i = 0; i < ns.size(); ++i) {
    for (std::size_t j = i + 1; j < ns.size(); ++j) {
      if (share_noun(ns.elements[i], ns.elements[j])) return true;
    }
  }
  return false;
}

}  // namespace detail

/// Repeatedly drops the element overlapping the most other elements (count
/// of distinct elements sharing a noun); ties drop the latest element.
/// Appends one RemovalStep per iteration to `trace` when provided.
inline NounSet remove_redundancy(NounSet ns, std::vector<RemovalStep>* trace = nullptr) {
  const std::size_t n = ns.size();
  std::vector<std::vector<bool>> adj(n, std::vector<bool>(n, false));
  std::vector<std::size_t> degree(n, 0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      if (detail::share_noun(ns.elements[i], ns.elements[j])) {
        adj[i][j] = adj[j][i] = true;
        ++degree[i];
        ++degree[j];
      }
    }
  }
  std::vector<bool> alive(n, true);
  for (;;) {
    std::size_t victim = n;
    for (std::size_t i = 0; i < n; ++i) {
      if (alive[i] && degree[i] > 0 && (victim == n || degree[i] >= degree[victim])) victim = i;
    }
    if (victim == n) break;
    if (trace) trace->push_back({ns.provenance[victim], degree[victim], ns.elements[victim]});
    alive[victim] = false;
    for (std::size_t j = 0; j < n; ++j) {
      if (alive[j] && adj[victim][j]) --degree[j];
    }
  }
  NounSet out;
  for (std::size_t i = 0; i < n; ++i) {
    if (!alive[i]) continue;
    out.elements.push_back(std::move(ns.elements[i]));
    out.provenance.push_back(std::move(ns.provenance[i]));
  }
  if (detail::has_overlap(out)) throw IntegrityError("redundancy removal left overlapping noun sets");
  return out;
}

/// Scene complexity of one video from its paired queries.
inline SceneComplexity estimate(const std::string& video_id, const AnnotationCorpus& corpus,
                                std::size_t max_complexity = kDefaultMaxComplexity,
                                const HumanNouns& human_nouns = default_human_nouns()) {
  const auto queries = find_queries(video_id, corpus);
  if (queries.empty()) throw EstimationError("video '" + video_id + "' has no paired queries");
  SceneComplexity sc;
  sc.n_queries = queries.size();
  NounSet ns = extract_nouns(queries, human_nouns);
  if (ns.size() == 0) {
    sc.degraded = true;
    sc.raw_count = queries.size();
    log::warn("video ", video_id, ": no scene nouns in ", queries.size(),
              " queries; complexity falls back to query count");
  } else {
    sc.survivors = remove_redundancy(std::move(ns), &sc.trace);
    sc.raw_count = sc.survivors.size();
  }
  sc.alpha = std::clamp<std::size_t>(sc.raw_count, 1, std::max<std::size_t>(1, max_complexity));
  return sc;
}

/// Scene count from temporal annotations: a query joins the first group whose
/// representative span has IoU > 0.5 with its own. Diagnostics only.
inline std::size_t gt_scene_count(const std::vector<QueryRecord>& queries) {
  auto iou = [](const Span& a, const Span& b) {
    const double inter = std::max(0.0, std::min(a.end, b.end) - std::max(a.start, b.start));
    const double uni = std::max(a.end, b.end) - std::min(a.start, b.start);
    return uni > 0.0 ? inter / uni : 0.0;
  };
  std::vector<Span> representatives;
  for (const auto& q : queries) {
    if (!q.gt_span) throw DomainError("query '" + q.query_id + "' has no gt_span");
    const bool merged = std::any_of(representatives.begin(), representatives.end(),
                                    [&](const Span& r) { return iou(r, *q.gt_span) > 0.5; });
    if (!merged) representatives.push_back(*q.gt_span);
  }
  return representatives.size();
}

}  // namespace scanet
