#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "scanet/config.hpp"
#include "scanet/corpus.hpp"
#include "scanet/digest.hpp"
#include "scanet/error.hpp"
#include "scanet/log.hpp"
#include "scanet/model.hpp"
#include "scanet/rng.hpp"
#include "scanet/scene_complexity.hpp"

namespace scanet {

// ---------------------------------------------------------------- optimizer

/// Adam with bias correction.
class Adam {
 public:
  explicit Adam(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : lr_(lr), b1_(beta1), b2_(beta2), eps_(eps) {}

  void step(nk::ParamStore& store) {
    const auto& entries = store.entries();
    if (m_.empty()) {
      for (const auto& [name, t] : entries) {
        m_.emplace_back(t.rows(), t.cols());
        v_.emplace_back(t.rows(), t.cols());
      }
    }
    ++t_;
    const double c1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
    for (std::size_t i = 0; i < entries.size(); ++i) {
      Tensor p = entries[i].second;
      const Array& g = p.grad();
      Array& value = p.mutable_value();
      for (std::size_t j = 0; j < value.size(); ++j) {
        m_[i][j] = b1_ * m_[i][j] + (1.0 - b1_) * g[j];
        v_[i][j] = b2_ * v_[i][j] + (1.0 - b2_) * g[j] * g[j];
        value[j] -= lr_ * (m_[i][j] / c1) / (std::sqrt(v_[i][j] / c2) + eps_);
      }
    }
  }

  std::size_t steps() const { return t_; }

 private:
  double lr_, b1_, b2_, eps_;
  std::size_t t_ = 0;
  std::vector<Array> m_, v_;
};

// ---------------------------------------------------------------- data

/// Scene complexity per video, estimated once from the paired queries.
/// Videos without queries get 1; they are never sampled for training.
inline std::vector<std::size_t> complexity_table(const AnnotationCorpus& corpus, std::size_t K) {
  std::vector<std::size_t> alpha;
  for (std::size_t v = 0; v < corpus.videos().size(); ++v) {
    alpha.push_back(corpus.query_indices(v).empty() ? 1 : estimate(corpus.videos()[v].video_id, corpus, K).alpha);
  }
  return alpha;
}

struct NegativeCache {
  std::map<std::string, std::vector<std::string>> lists;  // query_id -> video ids, best first

  const std::vector<std::string>& of(const std::string& query_id) const {
    static const std::vector<std::string> empty;
    auto it = lists.find(query_id);
    return it == lists.end() ? empty : it->second;
  }
};

struct StepMetrics {
  std::size_t step = 0;
  int stage = 1;
  double l_mqr = 0, l_mvr = 0, l_vid = 0, l_cps = 0, total = 0;
};

inline const char* kMetricsHeader = "step,stage,l_mqr,l_mvr,l_vid,l_cps,total";

inline std::string metrics_row(const StepMetrics& m) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%zu,%d,%.17g,%.17g,%.17g,%.17g,%.17g", m.step, m.stage, m.l_mqr, m.l_mvr, m.l_vid,
                m.l_cps, m.total);
  return buf;
}

// ---------------------------------------------------------------- training

/// Fixed masking stream for query `qi` when scoring videos for the cache.
inline Rng cache_stream(const RunConfig& cfg, std::size_t qi) { return Rng(cfg.seed).derive(0xCAC4E000ULL + qi); }

/// Scores every video against every query by masked-query reconstruction
/// loss on the whole video, then keeps the k lowest (ground truth removed).
/// Ordering: ascending loss, ties by video id.
inline NegativeCache build_negative_cache(const Model& m, const AnnotationCorpus& corpus, std::size_t k) {
  NegativeCache cache;
  if (k == 0) {
    for (const auto& q : corpus.queries()) cache.lists[q.query_id] = {};
    return cache;
  }
  nk::NoGradGuard no_grad;
  std::vector<nk::KeyValue> frames;
  for (const auto& v : corpus.videos()) frames.push_back(cpe::prepare_frames(m.decoder, encode_video(m, v)));
  for (std::size_t qi = 0; qi < corpus.queries().size(); ++qi) {
    const auto& q = corpus.queries()[qi];
    Rng rng = cache_stream(m.cfg, qi);
    const auto ids = token_ids(m, q);
    const auto mq = cpe::mask_query(ids, q.pos_tags, rng, m.cfg.mask_token_id);
    const auto qctx = cpe::prepare_query(m.decoder, encode_query(m, mq.tokens), mq);
    std::vector<std::pair<double, std::string>> scored;
    for (std::size_t vi = 0; vi < corpus.videos().size(); ++vi) {
      const auto& id = corpus.videos()[vi].video_id;
      if (id == q.video_id) continue;
      scored.emplace_back(cpe::reconstruction_loss(m.decoder, qctx, frames[vi]).item(), id);
    }
    std::sort(scored.begin(), scored.end());
    if (scored.size() > k) scored.resize(k);
    auto& list = cache.lists[q.query_id];
    for (auto& [score, id] : scored) list.push_back(id);
  }
  return cache;
}

struct StageOptions {
  int stage = 1;
  std::size_t steps = 0;
  const NegativeCache* cache = nullptr;  // stage 2 only
};

/// Runs one optimization stage, one (video, query) pair per sample and
/// `batch_size` samples per step, visiting pairs in per-epoch shuffled order.
class Trainer {
 public:
  Trainer(Model& model, const AnnotationCorpus& corpus)
      : model_(model), corpus_(corpus), alpha_(complexity_table(corpus, model.cfg.K)), adam_(model.cfg.lr) {
    for (std::size_t qi = 0; qi < corpus.queries().size(); ++qi) pairs_.push_back(qi);
    if (pairs_.empty()) throw DomainError("training corpus has no queries");
  }

  const std::vector<std::size_t>& alphas() const { return alpha_; }

  void run(const StageOptions& opt, const std::function<void(const StepMetrics&)>& on_step = {}) {
    const RunConfig& cfg = model_.cfg;
    Rng order_rng = Rng(cfg.seed).derive(0x5EED0000ULL + static_cast<std::uint64_t>(opt.stage));
    Rng sample_rng = Rng(cfg.seed).derive(0xA11CE000ULL + static_cast<std::uint64_t>(opt.stage));
    std::vector<std::size_t> order;
    std::size_t cursor = 0;
    for (std::size_t step = 0; step < opt.steps; ++step) {
      model_.store.zero_grad();
      StepMetrics sm;
      sm.step = step;
      sm.stage = opt.stage;
      for (std::size_t b = 0; b < cfg.batch_size; ++b) {
        if (cursor == order.size()) {
          order = pairs_;
          order_rng.shuffle(order);
          cursor = 0;
        }
        const auto& q = corpus_.queries()[order[cursor++]];
        const std::size_t vi = corpus_.video_index(q.video_id);
        std::vector<const VideoRecord*> negatives;
        if (opt.cache) {
          for (const auto& id : opt.cache->of(q.query_id)) negatives.push_back(&corpus_.video(id));
        }
        try {
          auto out = pair_losses(model_, corpus_.videos()[vi], q, alpha_[vi], negatives, sample_rng);
          const auto& r = out.report;
          if (!std::isfinite(r.total.item())) throw NumericError("non-finite total loss");
          nk::scale(r.total, 1.0 / static_cast<double>(cfg.batch_size)).backward();
          const double n = static_cast<double>(cfg.batch_size);
          sm.l_mqr += r.l_mqr.item() / n;
          sm.l_mvr += r.l_mvr.item() / n;
          sm.l_vid += r.l_vid.item() / n;
          sm.l_cps += r.l_cps.item() / n;
          sm.total += r.total.item() / n;
        } catch (const NumericError& e) {
          throw DivergenceError("stage " + std::to_string(opt.stage) + " step " + std::to_string(step) + " (query " +
                                q.query_id + "): " + e.what());
        }
      }
      for (const auto& [name, t] : model_.store.entries()) {
        if (!t.grad().all_finite()) throw DivergenceError("non-finite gradient in '" + name + "'");
      }
      adam_.step(model_.store);
      if (on_step) on_step(sm);
    }
  }

 private:
  Model& model_;
  const AnnotationCorpus& corpus_;
  std::vector<std::size_t> alpha_;
  std::vector<std::size_t> pairs_;
  Adam adam_;
};

// ---------------------------------------------------------------- checkpoints

inline constexpr int kCheckpointVersion = 1;
inline constexpr const char* kCheckpointFormat = "scanet-checkpoint";

inline std::string checkpoint_blob_path(const std::string& path) { return path + ".bin"; }

/// Writes `<path>` (JSON manifest) and `<path>.bin` (little-endian f64 values
/// of every tensor in registration order).
inline void save_checkpoint(const Model& m, const std::string& path) {
  nlohmann::json manifest;
  manifest["format"] = kCheckpointFormat;
  manifest["version"] = kCheckpointVersion;
  manifest["config"] = m.cfg.to_json();
  manifest["config_digest"] = m.cfg.digest();
  manifest["feature_dim"] = m.feature_dim;
  manifest["vocab"] = m.vocab.tokens();
  manifest["param_digest"] = m.store.digest();
  manifest["data_file"] = std::filesystem::path(checkpoint_blob_path(path)).filename().string();
  nlohmann::json tensors = nlohmann::json::array();
  std::string blob;
  std::size_t offset = 0;
  for (const auto& [name, t] : m.store.entries()) {
    tensors.push_back({{"name", name}, {"shape", {t.rows(), t.cols()}}, {"offset", offset}});
    for (double x : t.value().values()) {
      std::uint64_t bits;
      std::memcpy(&bits, &x, sizeof bits);
      for (int b = 0; b < 8; ++b) blob.push_back(static_cast<char>((bits >> (8 * b)) & 0xff));
    }
    offset += t.numel();
  }
  manifest["tensors"] = tensors;
  manifest["numel"] = offset;

  std::ofstream bin(checkpoint_blob_path(path), std::ios::binary);
  if (!bin) throw IoError("cannot write '" + checkpoint_blob_path(path) + "'");
  bin.write(blob.data(), static_cast<std::streamsize>(blob.size()));
  std::ofstream out(path);
  if (!out) throw IoError("cannot write '" + path + "'");
  out << manifest.dump(2) << '\n';
  if (!out || !bin) throw IoError("write failed for checkpoint '" + path + "'");
}

namespace detail {

inline nlohmann::json read_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open checkpoint '" + path + "'");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError("checkpoint '" + path + "' is not valid JSON: " + e.what());
  }
  if (!j.is_object() || j.value("format", "") != kCheckpointFormat) {
    throw CheckpointError("'" + path + "' is not a checkpoint manifest");
  }
  if (j.value("version", -1) != kCheckpointVersion) {
    throw CheckpointError("checkpoint version " + j.value("version", nlohmann::json(-1)).dump() + " unsupported (expected " +
                          std::to_string(kCheckpointVersion) + ")");
  }
  return j;
}

inline std::vector<double> read_blob(const std::string& path, std::size_t numel) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("checkpoint data file '" + path + "' missing");
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.size() != numel * 8) {
    throw CheckpointError("checkpoint data file '" + path + "' holds " + std::to_string(bytes.size()) +
                          " bytes, expected " + std::to_string(numel * 8));
  }
  std::vector<double> values(numel);
  for (std::size_t i = 0; i < numel; ++i) {
    std::uint64_t bits = 0;
    for (int b = 0; b < 8; ++b) bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes[i * 8 + b])) << (8 * b);
    std::memcpy(&values[i], &bits, sizeof bits);
  }
  return values;
}

}  // namespace detail

/// Copies checkpoint values into `m`, which must have the same layout.
inline void load_checkpoint_into(Model& m, const std::string& path) {
  const nlohmann::json j = detail::read_manifest(path);
  try {
    const auto& tensors = j.at("tensors");
    const std::size_t numel = j.at("numel").get<std::size_t>();
    std::map<std::string, std::pair<std::vector<std::size_t>, std::size_t>> index;
    for (const auto& t : tensors) {
      index[t.at("name").get<std::string>()] = {t.at("shape").get<std::vector<std::size_t>>(),
                                                t.at("offset").get<std::size_t>()};
    }
    const auto dir = std::filesystem::path(path).parent_path();
    const auto values = detail::read_blob((dir / j.at("data_file").get<std::string>()).string(), numel);
    if (index.size() != m.store.size()) {
      throw CheckpointError("checkpoint has " + std::to_string(index.size()) + " tensors, model has " +
                            std::to_string(m.store.size()));
    }
    for (const auto& [name, t] : m.store.entries()) {
      auto it = index.find(name);
      if (it == index.end()) throw CheckpointError("checkpoint lacks tensor '" + name + "'");
      const auto& [shape, offset] = it->second;
      if (shape != t.shape()) {
        throw CheckpointError("tensor '" + name + "' has shape [" + std::to_string(shape.at(0)) + " x " +
                              std::to_string(shape.at(1)) + "] in checkpoint, model expects " +
                              nk::shape_str(t.value()));
      }
      if (offset + t.numel() > values.size()) throw CheckpointError("tensor '" + name + "' overruns the data file");
      Tensor target = t;
      std::copy(values.begin() + static_cast<std::ptrdiff_t>(offset),
                values.begin() + static_cast<std::ptrdiff_t>(offset + t.numel()), target.mutable_value().values().begin());
    }
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError("malformed checkpoint manifest '" + path + "': " + e.what());
  }
}

/// Rebuilds the model recorded in the manifest and fills its parameters.
inline Model load_checkpoint(const std::string& path) {
  const nlohmann::json j = detail::read_manifest(path);
  RunConfig cfg;
  std::size_t feature_dim = 0;
  std::vector<std::string> tokens;
  try {
    cfg = config_from_json(j.at("config"));
    feature_dim = j.at("feature_dim").get<std::size_t>();
    tokens = j.at("vocab").get<std::vector<std::string>>();
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError("malformed checkpoint manifest '" + path + "': " + e.what());
  }
  Model m = Model::create(cfg, feature_dim, Vocab::from_tokens(tokens));
  load_checkpoint_into(m, path);
  return m;
}

/// Model for a corpus: layout from config, feature width and vocabulary.
inline Model init_model(const RunConfig& cfg, const AnnotationCorpus& corpus) {
  if (corpus.videos().empty()) throw DomainError("corpus has no videos");
  return Model::create(cfg, corpus.videos().front().feature_dim, corpus.vocab());
}

struct TrainResult {
  NegativeCache cache;
  std::vector<StepMetrics> metrics;
};

/// Stage 1, negative cache, stage 2 on one model. `after_stage1` sees the
/// model between the stages.
inline TrainResult train_two_stage(Model& m, const AnnotationCorpus& corpus,
                                   const std::function<void(const Model&)>& after_stage1 = {},
                                   const std::function<void(const StepMetrics&)>& on_step = {}) {
  TrainResult res;
  Trainer trainer(m, corpus);
  auto record = [&](const StepMetrics& s) {
    res.metrics.push_back(s);
    if (on_step) on_step(s);
  };
  trainer.run({1, m.cfg.steps_stage1, nullptr}, record);
  if (after_stage1) after_stage1(m);
  res.cache = build_negative_cache(m, corpus, m.cfg.k);
  trainer.run({2, m.cfg.steps_stage2, &res.cache}, record);
  return res;
}

}  // namespace scanet
