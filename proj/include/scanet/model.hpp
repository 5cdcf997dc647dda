#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "scanet/config.hpp"
#include "scanet/corpus.hpp"
#include "scanet/cpe.hpp"
#include "scanet/cpg.hpp"
#include "scanet/numkern/attention.hpp"
#include "scanet/numkern/params.hpp"
#include "scanet/rng.hpp"

namespace scanet {

using nk::Array;
using nk::Tensor;

/// All trainable parts. Parameters live in `store` in a fixed registration
/// order, so two models built from the same (config, feature_dim, vocab)
/// have identical layouts.
struct Model {
  RunConfig cfg;
  std::size_t feature_dim = 0;
  Vocab vocab;
  nk::ParamStore store;

  Tensor in_w, in_b, v_ln_gamma, v_ln_beta;  // video input projection
  Tensor embed, q_ln_gamma, q_ln_beta;       // word embeddings
  nk::AttentionBlock fusion;                 // joint video/query attention
  cpg::Codebook codebook;
  nk::AttentionBlock cpg_block;
  Tensor z_ln_gamma, z_ln_beta;  // final norm on the complexity token
  cpg::CountSelector selector;
  cpg::SlotRegressor slots;
  cpe::Decoder decoder;
  cpe::VideoRegressor regressor;

  static Model create(const RunConfig& cfg, std::size_t feature_dim, const Vocab& vocab) {
    cfg.validate();
    if (feature_dim < 1) throw DimensionError("feature_dim must be >= 1");
    Model m;
    m.cfg = cfg;
    m.feature_dim = feature_dim;
    m.vocab = vocab;
    Rng rng = Rng(cfg.seed).derive(0x1417);
    const std::size_t d = cfg.d_model;
    auto& s = m.store;
    m.in_w = s.add("input.w", nk::fan_in_init(feature_dim, d, rng));
    m.in_b = s.add("input.b", Array(1, d));
    m.v_ln_gamma = s.add("input.ln.gamma", Array(1, d, 1.0));
    m.v_ln_beta = s.add("input.ln.beta", Array(1, d));
    m.embed = s.add("embed", nk::normal_array(vocab.size(), d, 1.0, rng));
    m.q_ln_gamma = s.add("embed.ln.gamma", Array(1, d, 1.0));
    m.q_ln_beta = s.add("embed.ln.beta", Array(1, d));
    m.fusion = nk::AttentionBlock::create(s, "fusion", d, cfg.n_heads, cfg.ffn_dim, rng);
    m.codebook = cpg::Codebook::create(s, "codebook", cfg.K, d, rng);
    m.cpg_block = nk::AttentionBlock::create(s, "cpg", d, cfg.n_heads, cfg.ffn_dim, rng);
    m.z_ln_gamma = s.add("cpg.out_ln.gamma", Array(1, d, 1.0));
    m.z_ln_beta = s.add("cpg.out_ln.beta", Array(1, d));
    m.selector = cpg::CountSelector::create(s, "count", d, cfg.p_min, cfg.p_max, rng);
    m.slots = cpg::SlotRegressor::create(s, "slots", d, cfg.p_max, cfg.w_min, rng);
    m.decoder = cpe::Decoder::create(s, "decoder", d, cfg.n_heads, cfg.ffn_dim, vocab.size(), rng);
    m.regressor = cpe::VideoRegressor::create(s, "regressor", d, cfg.n_heads, cfg.ffn_dim, rng);
    return m;
  }

  cpg::ProposalParams proposal_params() const { return {&selector, &slots, cfg.gauss_sigma, cfg.tau}; }

  Model(Model&&) = default;
  Model& operator=(Model&&) = default;

  /// Independent copy with the same parameter values.
  Model clone() const {
    Model m = create(cfg, feature_dim, vocab);
    for (std::size_t i = 0; i < store.size(); ++i) {
      const_cast<Tensor&>(m.store.entries()[i].second).mutable_value() = store.entries()[i].second.value();
    }
    return m;
  }

 private:
  Model() = default;
};

/// v0 = LN(x W + b + PE).
inline Tensor encode_video(const Model& m, const VideoRecord& video) {
  if (video.feature_dim != m.feature_dim) {
    throw DimensionError("video '" + video.video_id + "' has feature_dim " + std::to_string(video.feature_dim) +
                         ", model expects " + std::to_string(m.feature_dim));
  }
  Array x(video.n_frames, video.feature_dim);
  for (std::size_t i = 0; i < video.features.size(); ++i) x[i] = static_cast<double>(video.features[i]);
  Tensor h = nk::add(nk::linear(nk::constant(std::move(x)), m.in_w, m.in_b),
                     nk::constant(nk::cached_positional_encoding(video.n_frames, m.cfg.d_model)));
  return nk::layer_norm(h, m.v_ln_gamma, m.v_ln_beta);
}

/// q0 = LN(E[ids] + PE).
inline Tensor encode_query(const Model& m, const std::vector<std::size_t>& ids) {
  Tensor h = nk::add(nk::gather_rows(m.embed, ids),
                     nk::constant(nk::cached_positional_encoding(ids.size(), m.cfg.d_model)));
  return nk::layer_norm(h, m.q_ln_gamma, m.q_ln_beta);
}

inline std::vector<std::size_t> token_ids(const Model& m, const QueryRecord& q) {
  std::vector<std::size_t> ids;
  for (const auto& t : q.tokens) ids.push_back(static_cast<std::size_t>(m.vocab.id(t)));
  return ids;
}

struct Encoded {
  Tensor v0;       // per-frame features, query independent
  Tensor q0;       // query embedding
  Tensor z;        // complexity vector after interaction
  Tensor v_fused;  // frames after joint attention
  Tensor q_fused;
};

/// Input representation, joint attention, then the codebook interaction.
/// The complexity token leaves the pre-norm block through a final layer
/// norm, which keeps the count and slot heads away from saturation.
inline Encoded encode_pair(const Model& m, const VideoRecord& video, const std::vector<std::size_t>& ids,
                           std::size_t alpha) {
  Encoded e;
  e.v0 = encode_video(m, video);
  e.q0 = encode_query(m, ids);
  const std::size_t nv = video.n_frames;
  Tensor fused = nk::attention_forward(m.fusion, nk::concat_rows({e.v0, e.q0}));
  Tensor v1 = nk::slice_rows(fused, 0, nv);
  Tensor q1 = nk::slice_rows(fused, nv, fused.rows());
  auto inter = cpg::interact(m.cpg_block, cpg::complexity_vector(alpha, m.codebook), v1, q1);
  e.z = nk::layer_norm(inter.z, m.z_ln_gamma, m.z_ln_beta);
  e.v_fused = inter.v;
  e.q_fused = inter.q;
  return e;
}

struct PairOptions {
  cpg::CountMode count = cpg::CountMode::Sample;
  bool detach_mvr_targets = true;
};

struct PairLosses {
  cpe::LossReport report;
  cpg::ProposalSet proposals;
};

/// Every loss term for one (video, query) pair. Proposal features are the
/// query-independent frames v0 under each mask. `negatives` holds the
/// cross-video hard negatives (empty in the first stage).
inline PairLosses pair_losses(const Model& m, const VideoRecord& video, const QueryRecord& query, std::size_t alpha,
                              const std::vector<const VideoRecord*>& negatives, Rng& rng,
                              const PairOptions& opt = {}) {
  const auto ids = token_ids(m, query);
  Encoded e = encode_pair(m, video, ids, alpha);
  PairLosses out;
  out.proposals = cpg::build_proposals(e.v0, e.z, m.proposal_params(), rng, opt.count);
  const auto& set = out.proposals;

  const cpe::MaskedQuery mq = cpe::mask_query(ids, query.pos_tags, rng, m.cfg.mask_token_id);
  const cpe::QueryContext qctx = cpe::prepare_query(m.decoder, encode_query(m, mq.tokens), mq);

  auto& r = out.report;
  auto mqr = cpe::mqr_loss(qctx, set, m.decoder);
  r.l_mqr = mqr.loss;
  r.mqr_per_proposal = std::move(mqr.per_slot);

  std::vector<cpe::MaskedProposal> masked;
  for (std::size_t p = 0; p < set.masks.size(); ++p) {
    masked.push_back(cpe::mask_proposal(set.features[p], set.masks[p], m.cfg.mvr_rate, rng, opt.detach_mvr_targets));
  }
  auto mvr = cpe::mvr_loss(masked, e.q0, m.regressor, set.slot_weights);
  r.l_mvr = mvr.loss;
  r.mvr_per_proposal = std::move(mvr.per_slot);

  r.l_vid = cpe::video_contrastive(r.l_mqr, e.v0, set, qctx, m.decoder, m.cfg.delta1).loss;

  std::vector<Tensor> neg_features;
  for (const VideoRecord* nv : negatives) neg_features.push_back(encode_video(m, *nv));
  r.l_cps = cpe::corpus_contrastive(r.l_mqr, qctx, neg_features, m.decoder, m.cfg.delta2).loss;

  const double a = static_cast<double>(alpha);
  r.weight = cpe::calibration_weight(a, m.cfg.gamma);
  r.total = cpe::calibrated_total(r, a, m.cfg.gamma);
  return out;
}

}  // namespace scanet
