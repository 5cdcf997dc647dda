#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "scanet/corpus.hpp"
#include "scanet/cpe.hpp"
#include "scanet/cpg.hpp"
#include "scanet/error.hpp"
#include "scanet/model.hpp"
#include "scanet/scene_complexity.hpp"
#include "scanet/synthetic.hpp"
#include "scanet/trainer.hpp"

namespace scanet::eval {

// ---------------------------------------------------------------- metrics

/// Temporal IoU of two closed spans; 0 when the union is empty.
inline double iou(const Span& a, const Span& b) {
  if (a.start > a.end || b.start > b.end) throw DomainError("iou: inverted span");
  const double inter = std::max(0.0, std::min(a.end, b.end) - std::max(a.start, b.start));
  const double uni = std::max(a.end, b.end) - std::min(a.start, b.start);
  return uni > 0.0 ? inter / uni : 0.0;
}

/// Fraction of queries whose best IoU among the top-n predictions exceeds m.
/// Queries with fewer than n predictions use all they have.
inline double recall_at(const std::vector<std::vector<Span>>& preds, const std::vector<Span>& gts, std::size_t n,
                        double m) {
  if (preds.empty()) throw DomainError("recall over an empty query set");
  if (preds.size() != gts.size()) throw DimensionError("recall_at: predictions and ground truths differ in count");
  if (n < 1) throw DomainError("recall_at: n must be >= 1");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    double best = 0.0;
    for (std::size_t r = 0; r < std::min(n, preds[i].size()); ++r) best = std::max(best, iou(preds[i][r], gts[i]));
    if (best > m) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(preds.size());
}

struct HeatCell {
  double mean_iou = 0.0;
  std::size_t n = 0;
};

using Heatmap = std::map<std::pair<std::size_t, std::size_t>, HeatCell>;  // (scenes, proposals)

struct HeatSample {
  std::size_t scenes = 0;
  std::size_t proposals = 0;
  double top1_iou = 0.0;
};

inline Heatmap mismatch_heatmap(const std::vector<HeatSample>& samples) {
  Heatmap h;
  std::map<std::pair<std::size_t, std::size_t>, double> sums;
  for (const auto& s : samples) {
    auto& cell = h[{s.scenes, s.proposals}];
    ++cell.n;
    sums[{s.scenes, s.proposals}] += s.top1_iou;
  }
  for (auto& [key, cell] : h) cell.mean_iou = sums[key] / static_cast<double>(cell.n);
  return h;
}

// ---------------------------------------------------------------- strategies

/// A candidate moment: a frame mask, its region and its span in seconds.
struct Candidate {
  Array mask;  // [1 x N_v]
  std::size_t st = 0;
  std::size_t ed = 0;
  Span span;
};

struct Strategy {
  enum class Kind { Adaptive, Fixed, Window } kind = Kind::Adaptive;
  std::size_t count = 0;              // Fixed
  std::vector<std::size_t> widths;    // Window, frames
  std::size_t stride = 1;             // Window, frames
  std::string name = "adaptive";
};

/// "adaptive", "fixed:n" or "window:W[/W2...],S".
inline Strategy parse_strategy(const std::string& text) {
  Strategy s;
  s.name = text;
  auto bad = [&] { return ConfigError("unknown strategy '" + text + "' (adaptive | fixed:n | window:w[/w2],s)"); };
  auto number = [&](const std::string& t) {
    if (t.empty() || t.find_first_not_of("0123456789") != std::string::npos) throw bad();
    const std::size_t v = std::stoul(t);
    if (v == 0) throw bad();
    return v;
  };
  if (text == "adaptive") return s;
  if (text.rfind("fixed:", 0) == 0) {
    s.kind = Strategy::Kind::Fixed;
    s.count = number(text.substr(6));
    return s;
  }
  if (text.rfind("window:", 0) == 0) {
    s.kind = Strategy::Kind::Window;
    const std::string rest = text.substr(7);
    const auto comma = rest.find(',');
    if (comma == std::string::npos) throw bad();
    std::string widths = rest.substr(0, comma);
    s.stride = number(rest.substr(comma + 1));
    std::size_t pos = 0;
    while (true) {
      const auto slash = widths.find('/', pos);
      s.widths.push_back(number(widths.substr(pos, slash == std::string::npos ? std::string::npos : slash - pos)));
      if (slash == std::string::npos) break;
      pos = slash + 1;
    }
    return s;
  }
  throw bad();
}

inline Candidate box_candidate(std::size_t st, std::size_t ed, std::size_t n, double duration) {
  Candidate c{Array(1, n), st, ed, {}};
  for (std::size_t i = st; i <= ed; ++i) c.mask[i] = 1.0;
  c.span = {duration * static_cast<double>(st) / static_cast<double>(n),
            duration * static_cast<double>(ed + 1) / static_cast<double>(n)};
  return c;
}

/// n equal partitions of the video.
inline std::vector<Candidate> fixed_candidates(std::size_t count, std::size_t n_frames, double duration) {
  std::vector<Candidate> out;
  const std::size_t parts = std::min(count, n_frames);
  for (std::size_t p = 0; p < parts; ++p) {
    const std::size_t st = p * n_frames / parts;
    const std::size_t ed = (p + 1) * n_frames / parts - 1;
    out.push_back(box_candidate(st, ed, n_frames, duration));
  }
  return out;
}

/// Sliding windows of each width (frames) with the given stride; windows
/// wider than the video collapse to the whole video.
inline std::vector<Candidate> window_candidates(const std::vector<std::size_t>& widths, std::size_t stride,
                                                std::size_t n_frames, double duration) {
  std::vector<Candidate> out;
  for (std::size_t w : widths) {
    const std::size_t width = std::min(w, n_frames);
    for (std::size_t st = 0; st + width <= n_frames; st += stride) {
      out.push_back(box_candidate(st, st + width - 1, n_frames, duration));
    }
  }
  return out;
}

// ---------------------------------------------------------------- inference

struct QueryPrediction {
  std::string query_id;
  std::string video_id;
  std::size_t alpha = 0;
  std::size_t proposals = 0;
  std::vector<cpe::RankedSpan> ranked;
  std::optional<Span> gt;
};

/// Fixed stream for the masked-frame draws of query `qi` at inference.
inline Rng inference_stream(const RunConfig& cfg, std::size_t qi) { return Rng(cfg.seed).derive(0xE7A1000ULL + qi); }

/// Scores candidates with the trained decoder and regressor: l_mqr averaged
/// over every NOUN/VERB masking of the query, plus l_mvr of a seeded frame
/// masking, and ranks ascending.
inline std::vector<cpe::RankedSpan> score_candidates(const Model& m, const Tensor& v0, const Tensor& q0,
                                                     const QueryRecord& q, const std::vector<Candidate>& cands,
                                                     Rng& rng) {
  nk::NoGradGuard no_grad;
  const auto ids = token_ids(m, q);
  std::vector<cpe::QueryContext> contexts;
  for (const auto& mq : cpe::mask_each_content_word(ids, q.pos_tags, m.cfg.mask_token_id)) {
    contexts.push_back(cpe::prepare_query(m.decoder, encode_query(m, mq.tokens), mq));
  }
  std::vector<double> mqr, mvr;
  std::vector<Span> spans;
  for (const auto& c : cands) {
    Tensor features = cpg::masked_features(v0, nk::constant(c.mask));
    const auto frames = cpe::prepare_frames(m.decoder, features);
    double total = 0.0;
    for (const auto& ctx : contexts) total += cpe::reconstruction_loss(m.decoder, ctx, frames).item();
    mqr.push_back(total / static_cast<double>(contexts.size()));
    cpg::ProposalMask region{nk::constant(c.mask), 0.0, 0.0, c.st, c.ed};
    mvr.push_back(cpe::mvr_term(m.regressor, q0, cpe::mask_proposal(features, region, m.cfg.mvr_rate, rng)).item());
    spans.push_back(c.span);
  }
  return cpe::rank_spans(spans, mqr, mvr);
}

/// Runs one strategy over every query of the corpus.
inline std::vector<QueryPrediction> predict(const Model& m, const AnnotationCorpus& corpus, const Strategy& strategy) {
  nk::NoGradGuard no_grad;
  const auto alphas = complexity_table(corpus, m.cfg.K);
  std::vector<QueryPrediction> out;
  for (std::size_t qi = 0; qi < corpus.queries().size(); ++qi) {
    const auto& q = corpus.queries()[qi];
    const std::size_t vi = corpus.video_index(q.video_id);
    const auto& video = corpus.videos()[vi];
    Rng rng = inference_stream(m.cfg, qi);
    QueryPrediction pred{q.query_id, q.video_id, alphas[vi], 0, {}, q.gt_span};
    std::vector<Candidate> cands;
    Tensor v0, q0;
    if (strategy.kind == Strategy::Kind::Adaptive) {
      const auto ids = token_ids(m, q);
      Encoded e = encode_pair(m, video, ids, alphas[vi]);
      v0 = e.v0;
      q0 = e.q0;
      auto set = cpg::build_proposals(e.v0, e.z, m.proposal_params(), rng, cpg::CountMode::Argmax);
      for (std::size_t p = 0; p < set.p_alpha; ++p) {
        const auto& pm = set.masks[p];
        cands.push_back({pm.mask.value(), pm.st, pm.ed, cpe::proposal_span(pm.c, pm.w, video.duration)});
      }
    } else {
      v0 = encode_video(m, video);
      q0 = encode_query(m, token_ids(m, q));
      cands = strategy.kind == Strategy::Kind::Fixed
                  ? fixed_candidates(strategy.count, video.n_frames, video.duration)
                  : window_candidates(strategy.widths, strategy.stride, video.n_frames, video.duration);
    }
    pred.proposals = cands.size();
    pred.ranked = score_candidates(m, v0, q0, q, cands, rng);
    out.push_back(std::move(pred));
  }
  return out;
}

// ---------------------------------------------------------------- reports

inline constexpr std::size_t kRecallN[] = {1, 5};
inline constexpr double kRecallM[] = {0.1, 0.3, 0.5, 0.7};

struct EvalReport {
  std::string strategy;
  std::vector<QueryPrediction> predictions;  // only queries with a ground-truth span
  std::map<std::string, double> recall;      // "R@1,IoU=0.3" -> value
  double miou = 0.0;
  Heatmap heatmap;

  double r_at(std::size_t n, double m) const {
    char key[32];
    std::snprintf(key, sizeof key, "R@%zu,IoU=%.1f", n, m);
    return recall.at(key);
  }
};

enum class SceneSource { Oracle, Gt, Fsc };

inline SceneSource parse_scene_source(const std::string& s) {
  if (s == "oracle") return SceneSource::Oracle;
  if (s == "gt") return SceneSource::Gt;
  if (s == "fsc") return SceneSource::Fsc;
  throw ConfigError("unknown scene-count source '" + s + "' (oracle | gt | fsc)");
}

/// Aggregates predictions into recalls, mIoU and the scene/proposal heatmap.
inline EvalReport build_report(std::vector<QueryPrediction> preds, const AnnotationCorpus& corpus,
                               const std::string& strategy, SceneSource source,
                               const OracleAnnotations* oracle = nullptr) {
  EvalReport r;
  r.strategy = strategy;
  std::erase_if(preds, [](const QueryPrediction& p) { return !p.gt.has_value(); });
  if (preds.empty()) throw DomainError("no query carries a ground-truth span to evaluate against");
  std::vector<std::vector<Span>> spans;
  std::vector<Span> gts;
  for (const auto& p : preds) {
    std::vector<Span> s;
    for (const auto& rs : p.ranked) s.push_back(rs.span);
    spans.push_back(std::move(s));
    gts.push_back(*p.gt);
  }
  for (std::size_t n : kRecallN) {
    for (double m : kRecallM) {
      char key[32];
      std::snprintf(key, sizeof key, "R@%zu,IoU=%.1f", n, m);
      r.recall[key] = recall_at(spans, gts, n, m);
    }
  }
  std::map<std::string, std::size_t> oracle_scenes;
  if (source == SceneSource::Oracle) {
    if (!oracle) throw ConfigError("scene-count source 'oracle' needs an oracle file");
    for (const auto& v : oracle->videos) oracle_scenes[v.video_id] = v.scene_count();
  }
  std::map<std::string, std::size_t> gt_scenes;
  std::vector<HeatSample> samples;
  double iou_sum = 0.0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const double top1 = iou(spans[i].front(), gts[i]);
    iou_sum += top1;
    std::size_t scenes = preds[i].alpha;
    if (source == SceneSource::Oracle) {
      auto it = oracle_scenes.find(preds[i].video_id);
      if (it == oracle_scenes.end()) throw LookupError("oracle has no video '" + preds[i].video_id + "'");
      scenes = it->second;
    } else if (source == SceneSource::Gt) {
      auto it = gt_scenes.find(preds[i].video_id);
      if (it == gt_scenes.end()) {
        it = gt_scenes.emplace(preds[i].video_id, gt_scene_count(find_queries(preds[i].video_id, corpus))).first;
      }
      scenes = it->second;
    }
    samples.push_back({scenes, preds[i].proposals, top1});
  }
  r.miou = iou_sum / static_cast<double>(preds.size());
  r.heatmap = mismatch_heatmap(samples);
  r.predictions = std::move(preds);
  return r;
}

inline std::string fmt(double x) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.6f", x);
  return buf;
}

inline std::string predictions_csv(const EvalReport& r) {
  std::string out = "query_id,video_id,alpha,proposals,rank,start,end,score,iou\n";
  for (const auto& p : r.predictions) {
    for (std::size_t k = 0; k < std::min<std::size_t>(5, p.ranked.size()); ++k) {
      const auto& s = p.ranked[k];
      out += p.query_id + "," + p.video_id + "," + std::to_string(p.alpha) + "," + std::to_string(p.proposals) + "," +
             std::to_string(k + 1) + "," + fmt(s.span.start) + "," + fmt(s.span.end) + "," + fmt(s.score) + "," +
             fmt(iou(s.span, *p.gt)) + "\n";
    }
  }
  return out;
}

inline const char* kHeatmapHeader = "scenes,proposals,mean_iou,n";

inline std::string heatmap_csv(const Heatmap& h) {
  std::string out = std::string(kHeatmapHeader) + "\n";
  for (const auto& [key, cell] : h) {
    out += std::to_string(key.first) + "," + std::to_string(key.second) + "," + fmt(cell.mean_iou) + "," +
           std::to_string(cell.n) + "\n";
  }
  return out;
}

inline nlohmann::json summary_json(const EvalReport& r) {
  nlohmann::json j;
  j["strategy"] = r.strategy;
  j["queries"] = r.predictions.size();
  nlohmann::json rec = nlohmann::json::object();
  for (const auto& [k, v] : r.recall) rec[k] = std::stod(fmt(v));
  j["recall"] = rec;
  j["miou"] = std::stod(fmt(r.miou));
  return j;
}

}  // namespace scanet::eval
