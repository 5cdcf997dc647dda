#pragma once

// Proposal enhancement: masked query / masked video reconstruction, the two
// contrastive hinges, loss calibration and span prediction.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <string>
#include <vector>

#include "scanet/corpus.hpp"
#include "scanet/cpg.hpp"
#include "scanet/error.hpp"
#include "scanet/log.hpp"
#include "scanet/numkern/attention.hpp"
#include "scanet/numkern/ops.hpp"
#include "scanet/rng.hpp"

namespace scanet::cpe {

using nk::Array;
using nk::Tensor;

// ---------------------------------------------------------------- masking

struct MaskedQuery {
  std::vector<std::size_t> tokens;     // query ids with targets replaced by <mask>
  std::vector<std::size_t> positions;  // masked positions
  std::vector<std::size_t> targets;    // original ids at those positions
};

inline MaskedQuery mask_positions(const std::vector<std::size_t>& ids, const std::vector<std::size_t>& positions,
                                  std::size_t mask_id = static_cast<std::size_t>(Vocab::kMaskId)) {
  if (positions.empty()) throw DomainError("masked query needs at least one target position");
  MaskedQuery mq{ids, positions, {}};
  for (std::size_t p : positions) {
    if (p >= ids.size()) throw DimensionError("mask position out of range");
    mq.targets.push_back(ids[p]);
    mq.tokens[p] = mask_id;
  }
  return mq;
}

inline std::vector<std::size_t> content_positions(const std::vector<PosTag>& tags) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < tags.size(); ++i) {
    if (tags[i] == PosTag::Noun || tags[i] == PosTag::Verb) out.push_back(i);
  }
  return out;
}

/// Masks one uniformly chosen NOUN/VERB token, or any token when the query
/// has none.
inline MaskedQuery mask_query(const std::vector<std::size_t>& ids, const std::vector<PosTag>& tags, Rng& rng,
                              std::size_t mask_id = static_cast<std::size_t>(Vocab::kMaskId)) {
  if (ids.empty() || ids.size() != tags.size()) throw DimensionError("mask_query: bad token/tag lengths");
  const auto candidates = content_positions(tags);
  const std::size_t pos = candidates.empty() ? rng.index(ids.size()) : candidates[rng.index(candidates.size())];
  return mask_positions(ids, {pos}, mask_id);
}

/// One single-target masked copy per NOUN/VERB token (every token when there
/// are none). Inference averages over these.
inline std::vector<MaskedQuery> mask_each_content_word(const std::vector<std::size_t>& ids,
                                                       const std::vector<PosTag>& tags,
                                                       std::size_t mask_id = static_cast<std::size_t>(Vocab::kMaskId)) {
  auto positions = content_positions(tags);
  if (positions.empty()) {
    positions.resize(ids.size());
    std::iota(positions.begin(), positions.end(), std::size_t{0});
  }
  std::vector<MaskedQuery> out;
  for (std::size_t p : positions) out.push_back(mask_positions(ids, {p}, mask_id));
  return out;
}

struct MaskedProposal {
  Tensor input;                        // proposal features with masked rows zeroed
  std::vector<std::size_t> positions;  // masked frame indices, inside the region
  Tensor targets;                      // [positions x d]
};

/// Masks each in-region frame with probability `rate`, at least one. Targets
/// are cut from the graph unless `detach_targets` is false (gradient checks
/// need the fully differentiable variant).
inline MaskedProposal mask_proposal(const Tensor& features, const cpg::ProposalMask& pm, double rate, Rng& rng,
                                    bool detach_targets = true) {
  MaskedProposal mp;
  for (std::size_t i = pm.st; i <= pm.ed; ++i) {
    if (rng.bernoulli(rate)) mp.positions.push_back(i);
  }
  if (mp.positions.empty()) mp.positions.push_back(pm.st + rng.index(pm.ed - pm.st + 1));
  Array keep(1, features.rows(), 1.0);
  for (std::size_t i : mp.positions) keep[i] = 0.0;
  mp.input = nk::mul_rows(features, nk::constant(std::move(keep)));
  mp.targets = nk::gather_rows(features, mp.positions);
  if (detach_targets) mp.targets = nk::detach(mp.targets);
  return mp;
}

// ---------------------------------------------------------------- networks

/// Features enter the decoder/regressor with positions re-added, so masked-out
/// rows still carry their location but no content.
inline Tensor with_positions(const Tensor& features) {
  return nk::add(features, nk::constant(nk::cached_positional_encoding(features.rows(), features.cols())));
}

/// f: one attention layer over [masked query || proposal], vocab head at the
/// masked positions.
struct Decoder {
  nk::AttentionBlock block;
  Tensor head_w, head_b;

  static Decoder create(nk::ParamStore& store, const std::string& prefix, std::size_t dim, std::size_t heads,
                        std::size_t ffn_dim, std::size_t vocab, Rng& rng) {
    Decoder d;
    d.block = nk::AttentionBlock::create(store, prefix, dim, heads, ffn_dim, rng);
    d.head_w = store.add(prefix + ".head.w", nk::fan_in_init(dim, vocab, rng));
    d.head_b = store.add(prefix + ".head.b", Array(1, vocab));
    return d;
  }
  std::size_t vocab() const { return head_w.cols(); }
};

/// Query-side state shared by every proposal scored against one masked query.
struct QueryContext {
  Tensor rows;    // residual inputs at the masked positions
  Tensor normed;  // their pre-normed copies
  nk::KeyValue kv;
  std::vector<std::size_t> targets;
};

inline QueryContext prepare_query(const Decoder& dec, const Tensor& masked_query_embedding, const MaskedQuery& mq) {
  for (std::size_t t : mq.targets) {
    if (t >= dec.vocab()) throw DimensionError("decoder vocabulary smaller than target id");
  }
  Tensor normed = nk::pre_norm(dec.block, masked_query_embedding);
  return {nk::gather_rows(masked_query_embedding, mq.positions), nk::gather_rows(normed, mq.positions),
          nk::project_kv(dec.block, normed), mq.targets};
}

/// Keys and values of a proposal's frames (positions added inside).
inline nk::KeyValue prepare_frames(const Decoder& dec, const Tensor& features) {
  return nk::project_kv(dec.block, nk::pre_norm(dec.block, with_positions(features)));
}

inline Tensor decoder_logits(const Decoder& dec, const QueryContext& q, const nk::KeyValue& frames) {
  nk::KeyValue kv{nk::concat_rows({q.kv.keys, frames.keys}), nk::concat_rows({q.kv.values, frames.values})};
  return nk::linear(nk::attend(dec.block, q.rows, q.normed, kv), dec.head_w, dec.head_b);
}

/// Cross-entropy of f at the masked positions, mean over targets.
inline Tensor reconstruction_loss(const Decoder& dec, const QueryContext& q, const nk::KeyValue& frames) {
  return nk::cross_entropy(decoder_logits(dec, q, frames), q.targets);
}

inline Tensor reconstruction_loss(const Decoder& dec, const QueryContext& q, const Tensor& features) {
  return reconstruction_loss(dec, q, prepare_frames(dec, features));
}

/// g: one attention layer over [query || masked proposal], d-dim head at the
/// masked frames.
struct VideoRegressor {
  nk::AttentionBlock block;
  Tensor head_w, head_b;

  static VideoRegressor create(nk::ParamStore& store, const std::string& prefix, std::size_t dim,
                               std::size_t heads, std::size_t ffn_dim, Rng& rng) {
    VideoRegressor r;
    r.block = nk::AttentionBlock::create(store, prefix, dim, heads, ffn_dim, rng);
    r.head_w = store.add(prefix + ".head.w", nk::fan_in_init(dim, dim, rng));
    r.head_b = store.add(prefix + ".head.b", Array(1, dim));
    return r;
  }
};

inline Tensor regress_frames(const VideoRegressor& reg, const Tensor& query, const MaskedProposal& mp) {
  Tensor x = nk::concat_rows({query, with_positions(mp.input)});
  std::vector<std::size_t> rows;
  for (std::size_t p : mp.positions) rows.push_back(query.rows() + p);
  return nk::linear(nk::attention_rows(reg.block, x, rows), reg.head_w, reg.head_b);
}

/// Squared L2 error between predictions [n x d] and targets, mean over rows.
inline Tensor frame_reconstruction_error(const Tensor& prediction, const Tensor& targets) {
  if (prediction.rows() == 0) throw DomainError("video reconstruction needs at least one masked frame");
  return nk::scale(nk::sum_squares(nk::sub(prediction, targets)), 1.0 / static_cast<double>(prediction.rows()));
}

inline Tensor mvr_term(const VideoRegressor& reg, const Tensor& query, const MaskedProposal& mp) {
  return frame_reconstruction_error(regress_frames(reg, query, mp), mp.targets);
}

// ---------------------------------------------------------------- losses

/// sum_j a_j l_j / sum_j a_j over the slots with a_j > 0 (only those are
/// evaluated by callers).
inline Tensor weighted_mean(const std::vector<Tensor>& losses, const Tensor& weights) {
  if (losses.empty()) throw DomainError("weighted_mean of no losses");
  if (weights.numel() < losses.size()) throw DimensionError("weighted_mean: too few weights");
  Tensor num, den;
  for (std::size_t j = 0; j < losses.size(); ++j) {
    Tensor a = nk::element(weights, 0, j);
    Tensor term = nk::mul(a, losses[j]);
    num = num.defined() ? nk::add(num, term) : term;
    den = den.defined() ? nk::add(den, a) : a;
  }
  return nk::div(num, den);
}

struct SlotLosses {
  Tensor loss;                 // weighted mean over slots
  std::vector<double> per_slot;
};

inline SlotLosses combine_slots(const std::vector<Tensor>& per_slot, const Tensor& weights) {
  SlotLosses out{weighted_mean(per_slot, weights), {}};
  for (const auto& t : per_slot) out.per_slot.push_back(t.item());
  return out;
}

/// Masked query reconstruction over the proposals.
inline SlotLosses mqr_loss(const QueryContext& q, const cpg::ProposalSet& set, const Decoder& dec) {
  std::vector<Tensor> per;
  for (const auto& f : set.features) per.push_back(reconstruction_loss(dec, q, f));
  return combine_slots(per, set.slot_weights);
}

/// Masked video reconstruction; one masked copy per proposal.
inline SlotLosses mvr_loss(const std::vector<MaskedProposal>& masked, const Tensor& query, const VideoRegressor& reg,
                           const Tensor& weights) {
  std::vector<Tensor> per;
  for (const auto& mp : masked) per.push_back(mvr_term(reg, query, mp));
  return combine_slots(per, weights);
}

/// max(positive - negative + margin, 0).
inline Tensor margin_hinge(const Tensor& positive, const Tensor& negative, double margin) {
  return nk::hinge(nk::add_scalar(nk::sub(positive, negative), margin));
}

struct Contrast {
  Tensor loss;      // hinge value
  Tensor negative;  // the negative-side reconstruction loss
};

/// In-video hinge against complement-masked features v * (1 - m).
inline Contrast video_contrastive(const Tensor& l_mqr, const Tensor& v, const cpg::ProposalSet& set,
                                  const QueryContext& q, const Decoder& dec, double delta1) {
  std::vector<Tensor> per;
  for (const auto& pm : set.masks) {
    Tensor complement = nk::add_scalar(nk::scale(pm.mask, -1.0), 1.0);
    per.push_back(reconstruction_loss(dec, q, cpg::masked_features(v, complement)));
  }
  Tensor negative = weighted_mean(per, set.slot_weights);
  return {margin_hinge(l_mqr, negative, delta1), negative};
}

/// Cross-video hinge against whole negative videos; zero without negatives.
inline Contrast corpus_contrastive(const Tensor& l_mqr, const QueryContext& q, const std::vector<Tensor>& negatives,
                                   const Decoder& dec, double delta2) {
  if (negatives.empty()) {
    log::debug("corpus_contrastive: no negatives, loss is 0");
    return {nk::constant(Array::scalar(0.0)), nk::constant(Array::scalar(0.0))};
  }
  Tensor total;
  for (const auto& v : negatives) {
    Tensor l = reconstruction_loss(dec, q, v);
    total = total.defined() ? nk::add(total, l) : l;
  }
  Tensor negative = nk::scale(total, 1.0 / static_cast<double>(negatives.size()));
  return {margin_hinge(l_mqr, negative, delta2), negative};
}

/// gamma / (1 + exp(-alpha)).
inline double calibration_weight(double alpha, double gamma) {
  if (!(alpha >= 1.0)) throw DomainError("calibration needs alpha >= 1");
  return gamma / (1.0 + std::exp(-alpha));
}

struct LossReport {
  Tensor l_mqr, l_mvr, l_vid, l_cps;
  std::vector<double> mqr_per_proposal, mvr_per_proposal;
  double weight = 0.0;
  Tensor total;
};

inline Tensor calibrated_total(const LossReport& r, double alpha, double gamma) {
  Tensor sum = nk::add(nk::add(r.l_mqr, r.l_mvr), nk::add(r.l_vid, r.l_cps));
  return nk::scale(sum, calibration_weight(alpha, gamma));
}

// ---------------------------------------------------------------- inference

/// [c - w/2, c + w/2] clipped to [0, 1], in seconds.
inline Span proposal_span(double c, double w, double duration) {
  const double lo = std::clamp(c - w / 2.0, 0.0, 1.0);
  const double hi = std::clamp(c + w / 2.0, 0.0, 1.0);
  return {lo * duration, hi * duration};
}

struct RankedSpan {
  std::size_t proposal = 0;
  double score = 0.0;
  Span span;
};

/// Proposals ordered by ascending l_mqr + l_mvr (stable on ties).
inline std::vector<RankedSpan> rank_spans(const std::vector<Span>& spans, const std::vector<double>& mqr,
                                          const std::vector<double>& mvr) {
  if (spans.empty()) throw DomainError("no proposals to rank");
  if (mqr.size() != spans.size() || mvr.size() != spans.size()) throw DimensionError("rank_spans: length mismatch");
  std::vector<RankedSpan> out;
  for (std::size_t p = 0; p < spans.size(); ++p) out.push_back({p, mqr[p] + mvr[p], spans[p]});
  std::stable_sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.score < b.score; });
  return out;
}

inline std::vector<RankedSpan> predict_span(const std::vector<cpg::ProposalMask>& masks, std::size_t p_alpha,
                                            const std::vector<double>& mqr, const std::vector<double>& mvr,
                                            double duration) {
  if (p_alpha < 1 || p_alpha > masks.size()) throw DomainError("predict_span: bad proposal count");
  std::vector<Span> spans;
  for (std::size_t p = 0; p < p_alpha; ++p) spans.push_back(proposal_span(masks[p].c, masks[p].w, duration));
  return rank_spans(spans, std::vector<double>(mqr.begin(), mqr.begin() + p_alpha),
                    std::vector<double>(mvr.begin(), mvr.begin() + p_alpha));
}

}  // namespace scanet::cpe
